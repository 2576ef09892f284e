mod common;

use std::path::Path;
use std::time::Instant;

use common::{args, cell, Server};
use teleop_cell::runtime::default_home;
use teleop_core::session::SessionFile;
use teleop_core::ArmModel;

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn home_xyz() -> [f64; 3] {
    let p = ArmModel::default_arm().fk(&default_home()).position;
    [p.x, p.y, p.z]
}

fn write_square(dir: &Path, side: f64) -> std::path::PathBuf {
    let [x, y, z] = home_xyz();
    let corners = [(side, 0.0, "tag=item"), (side, side, "close"), (0.0, side, "open tag=minor"), (0.0, 0.0, "dwell=0.2")];
    let mut text = String::from("# square in the horizontal plane\n");
    for (dx, dy, extra) in corners {
        text.push_str(&format!("{:.3} {:.3} {:.3} {extra}\n", x + dx, y + dy, z));
    }
    let path = dir.join("square.txt");
    std::fs::write(&path, text).unwrap();
    path
}

fn number_after(text: &str, key: &str) -> f64 {
    let rest = &text[text.find(key).unwrap_or_else(|| panic!("{key:?} not in {text:?}")) + key.len()..];
    rest.split_whitespace().next().unwrap().trim_end_matches(['s', ',', ')']).parse().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(cell(&args(&["--help"])).status.code(), Some(0));
    assert_eq!(cell(&args(&["run", "--bogus"])).status.code(), Some(2));
    assert_eq!(cell(&args(&[])).status.code(), Some(2));
    let o = cell(&args(&["--config", "/nonexistent/cell.toml", "analyze", "sus", "x"]));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "[wire]\nrate_hz = -1\n").unwrap();
    let o = cell(&args(&["--config", p.to_str().unwrap(), "run"]));
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&p, "[wire]\nspeed = 3\n").unwrap();
    assert_eq!(cell(&args(&["--config", p.to_str().unwrap(), "run"])).status.code(), Some(2));
}

#[test]
fn port_collision_names_the_port() {
    let s = Server::spawn(&[]);
    let o = cell(&args(&["run", "--http-port", &s.http_port.to_string(), "--wire-port", "0"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("port {} is already in use", s.http_port)), "{}", stderr(&o));
    let o = cell(&args(&["run", "--wire-port", &s.wire_port.to_string(), "--http-port", "0"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&s.wire_port.to_string()));
}

#[test]
fn fault_command() {
    let s = Server::spawn(&[]);
    let port = s.http_port.to_string();
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(s.client().control("connect")).unwrap();
    let o = cell(&args(&["fault", "90518", "--http-port", &port]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Emergency Stop (90518) logged as elog/9/1"), "{out}");
    assert!(out.contains("ctrl-state emergencystop"));
    assert_eq!(cell(&args(&["fault", "12345", "--http-port", &port])).status.code(), Some(2));
    let o = cell(&args(&["fault", "50027", "--http-port", "1"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn teleop_square_records_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let square = write_square(dir.path(), 40.0);
    let rec = dir.path().join("square.demo.jsonl");
    let s = Server::spawn(&[]);
    let mut a = args(&["teleop", square.to_str().unwrap(), "--record", rec.to_str().unwrap()]);
    a.extend(s.ports());
    let o = cell(&a);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let err = number_after(&stdout(&o), "mm, ");
    assert!(err < 0.5, "{}", stdout(&o));

    let first = std::fs::read_to_string(&rec).unwrap().lines().next().unwrap().to_string();
    assert!(first.contains("\"schema\":\"teleop-session\"") && first.contains("\"version\":1"), "{first}");
    let (file, warning) = SessionFile::read_path(&rec).unwrap();
    assert!(warning.is_none());
    assert!(file.records.len() > 500);
    let tags: Vec<_> = file.records.iter().filter_map(|r| r.annotation.clone()).collect();
    assert_eq!(tags, ["item", "minor"]);
    let recorded = file.duration().as_secs_f64();

    // A fresh cell starts from the same home pose.
    drop(s);
    let s = Server::spawn(&[]);
    let mut a = args(&["replay", rec.to_str().unwrap(), "--speed", "2", "--wire-port", &s.wire_port.to_string()]);
    let rec2 = dir.path().join("again.demo.jsonl");
    a.extend(args(&["--record", rec2.to_str().unwrap()]));
    let t0 = Instant::now();
    let o = cell(&a);
    let wall = t0.elapsed().as_secs_f64();
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    let elapsed = number_after(&out, "targets in ");
    assert!((elapsed / (recorded / 2.0) - 1.0).abs() <= 0.02, "{elapsed} vs {recorded}: {out}");
    assert!(wall >= elapsed);
    let drift = number_after(&out, "recording by ");
    assert!(drift < 0.5, "{out}");
    assert!(SessionFile::read_path(&rec2).unwrap().0.records.len() > 100);
}

#[test]
fn unreachable_waypoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let [x, y, z] = home_xyz();
    let path = dir.path().join("far.txt");
    std::fs::write(&path, format!("{} {} {}\n", x * 3.0, y, z)).unwrap();
    let s = Server::spawn(&[]);
    let mut a = args(&["teleop", path.to_str().unwrap(), "--speed", "100"]);
    a.extend(s.ports());
    let o = cell(&a);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stderr(&o).contains("ERROR"), "{}", stderr(&o));
    let state = s.client();
    let rt = tokio::runtime::Runtime::new().unwrap();
    assert_eq!(rt.block_on(state.ctrl_state()).unwrap(), "motoroff");
}

#[test]
fn malformed_waypoints_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "1 2\n").unwrap();
    let o = cell(&args(&["teleop", path.to_str().unwrap(), "--http-port", "1"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn analyze_sus_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let sus = dir.path().join("sus.csv");
    std::fs::write(&sus, "5,1,5,1,5,1,5,1,5,1\n3,3,3,3,3,3,3,3,3,3\n").unwrap();
    let o = cell(&args(&["analyze", "sus", sus.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "1\t100.0\n2\t50.0\nmean\t75.00\n");

    std::fs::write(&sus, "5,1,5,1,5,1,5,1,5,9\n").unwrap();
    assert_eq!(cell(&args(&["analyze", "sus", sus.to_str().unwrap()])).status.code(), Some(1));

    let cmp = dir.path().join("time.csv");
    std::fs::write(&cmp, "with,70.5,23.14,5\nwithout,63.0,17.54,5\n").unwrap();
    let o = cell(&args(&["analyze", "compare", cmp.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("with vs without\n"), "{out}");
    assert!(out.contains("t\t0.578\n") && out.contains("df\t7.46\n") && out.contains("d\t0.365\n"), "{out}");
}

#[test]
fn analyze_metrics_from_session() {
    use teleop_core::session::{SessionHeader, SessionRecord, SessionWriter};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.demo.jsonl");
    let cfg = teleop_core::controller::ControllerConfig::default();
    let mut w = SessionWriter::new(std::fs::File::create(&path).unwrap(), &SessionHeader::new("desk6r-v1", cfg.safety, 250.0)).unwrap();
    let mut c = teleop_core::Controller::new(ArmModel::default_arm(), cfg, default_home()).unwrap();
    c.connect();
    let snap = c.snapshot();
    let target = snap.pose;
    let events = [(1.0, "item"), (2.0, "minor"), (3.0, "item"), (200.0, "item"), (4.0, "major")];
    let mut ts: Vec<_> = events.iter().map(|e| e.0).collect();
    ts.sort_by(f64::total_cmp);
    for (i, t) in [0.0].iter().chain(ts.iter()).enumerate() {
        let tag = events.iter().find(|e| e.0 == *t).map(|e| e.1);
        if let Some(tag) = tag {
            w.annotate(tag);
        }
        let mut r = SessionRecord::from_snapshot((*t * 1e6) as u64, &target, &snap);
        r.seq = i as u32;
        w.append(r).unwrap();
    }
    w.finish().unwrap();
    let o = cell(&args(&["analyze", "metrics", path.to_str().unwrap(), "--limit-s", "180"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "n_max\t2\ne_minor\t1\ne_major\t1\n");
}
