//! Usability scoring, two-sample statistics from summary values, and task
//! metrics from annotated sessions.

use crate::scalar::Real;
use crate::session::SessionRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("a SUS response needs exactly 10 items, got {0}")]
    ItemCount(usize),
    #[error("SUS item {item} = {value} is outside 1..=5")]
    ItemRange { item: usize, value: i64 },
    #[error("each group needs n >= 2 and sd > 0")]
    DegenerateGroup,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Ten Likert answers (1..=5), item 1 first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SusResponse([u8; 10]);

impl SusResponse {
    pub fn new(items: &[i64]) -> Result<Self, AnalysisError> {
        if items.len() != 10 {
            return Err(AnalysisError::ItemCount(items.len()));
        }
        let mut out = [0u8; 10];
        for (i, &v) in items.iter().enumerate() {
            if !(1..=5).contains(&v) {
                return Err(AnalysisError::ItemRange { item: i + 1, value: v });
            }
            out[i] = v as u8;
        }
        Ok(Self(out))
    }

    pub fn items(&self) -> [u8; 10] {
        self.0
    }

    /// Parses one comma separated response per non-empty line.
    pub fn parse_lines(text: &str) -> Result<Vec<Self>, AnalysisError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| {
                let items = l
                    .split(',')
                    .map(|t| t.trim().parse::<i64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| AnalysisError::Parse { line: i + 1, reason: e.to_string() })?;
                Self::new(&items).map_err(|e| AnalysisError::Parse { line: i + 1, reason: e.to_string() })
            })
            .collect()
    }
}

/// 0..=100. Odd (positive) items contribute `answer - 1`, even (negative)
/// items `5 - answer`; the sum is scaled by 2.5.
pub fn sus_score<T: Real>(r: &SusResponse) -> T {
    let sum: u32 = r
        .0
        .iter()
        .enumerate()
        .map(|(i, &a)| if i % 2 == 0 { a as u32 - 1 } else { 5 - a as u32 })
        .sum();
    T::lit(sum as f64 * 2.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSummary<T> {
    pub mean: T,
    pub sd: T,
    pub n: u32,
}

impl<T: Real> GroupSummary<T> {
    pub fn new(mean: T, sd: T, n: u32) -> Self {
        Self { mean, sd, n }
    }

    fn check(&self) -> Result<(), AnalysisError> {
        if self.n < 2 || !(self.sd > T::zero()) {
            return Err(AnalysisError::DegenerateGroup);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult<T> {
    pub t: T,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: T,
}

pub fn welch_t<T: Real>(a: &GroupSummary<T>, b: &GroupSummary<T>) -> Result<WelchResult<T>, AnalysisError> {
    a.check()?;
    b.check()?;
    let va = a.sd * a.sd / T::lit(a.n as f64);
    let vb = b.sd * b.sd / T::lit(b.n as f64);
    let se2 = va + vb;
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / T::lit((a.n - 1) as f64) + vb * vb / T::lit((b.n - 1) as f64));
    Ok(WelchResult { t, df })
}

/// Standardized mean difference with the equal-n pooled SD `sqrt((s1^2 + s2^2) / 2)`.
pub fn cohens_d<T: Real>(mean1: T, sd1: T, mean2: T, sd2: T) -> Result<T, AnalysisError> {
    if !(sd1 > T::zero() && sd2 > T::zero()) {
        return Err(AnalysisError::DegenerateGroup);
    }
    let pooled = ((sd1 * sd1 + sd2 * sd2) / T::lit(2.0)).sqrt();
    Ok((mean1 - mean2) / pooled)
}

/// Reads two groups, one per line: `mean,sd,n`, optionally prefixed by a label.
pub fn parse_summary_pair(text: &str) -> Result<[(String, GroupSummary<f64>); 2], AnalysisError> {
    let groups: Vec<(String, GroupSummary<f64>)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let err = |reason: &str| AnalysisError::Parse { line: i + 1, reason: reason.to_string() };
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            let (label, nums) = match fields.len() {
                3 => (format!("group{}", i + 1), &fields[..]),
                4 => (fields[0].to_string(), &fields[1..]),
                _ => return Err(err("expected [label,]mean,sd,n")),
            };
            let mean = nums[0].parse().map_err(|_| err("bad mean"))?;
            let sd = nums[1].parse().map_err(|_| err("bad sd"))?;
            let n = nums[2].parse().map_err(|_| err("bad n"))?;
            Ok((label, GroupSummary::new(mean, sd, n)))
        })
        .collect::<Result<_, _>>()?;
    <[_; 2]>::try_from(groups).map_err(|g| AnalysisError::Parse { line: 0, reason: format!("expected 2 groups, got {}", g.len()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskMetrics {
    pub n_max: u32,
    pub e_minor: u32,
    pub e_major: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskEvent {
    ItemCompleted,
    MinorError,
    MajorError,
}

impl TaskEvent {
    pub fn parse(tag: &str) -> Option<Self> {
        match tag.trim() {
            "item" | "item_completed" | "completed" => Some(TaskEvent::ItemCompleted),
            "minor" | "minor_error" => Some(TaskEvent::MinorError),
            "major" | "major_error" => Some(TaskEvent::MajorError),
            _ => None,
        }
    }
}

/// Counts annotated task events within `limit_s` of the first record.
/// Records are ordered by time before counting.
pub fn task_metrics(records: &[SessionRecord], limit_s: f64) -> TaskMetrics {
    let mut sorted: Vec<&SessionRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.t_us);
    let Some(first) = sorted.first() else { return TaskMetrics::default() };
    let end = first.t_us as f64 + limit_s * 1e6;
    let mut m = TaskMetrics::default();
    for r in sorted.iter().filter(|r| (r.t_us as f64) <= end) {
        for tag in r.annotation.iter().flat_map(|a| a.split(';')) {
            match TaskEvent::parse(tag) {
                Some(TaskEvent::ItemCompleted) => m.n_max += 1,
                Some(TaskEvent::MinorError) => m.e_minor += 1,
                Some(TaskEvent::MajorError) => m.e_major += 1,
                None => {}
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{GripperState, Mode};
    use crate::pose::RobotPose;
    use proptest::prelude::*;

    fn sus(items: [i64; 10]) -> f64 {
        sus_score(&SusResponse::new(&items).unwrap())
    }

    #[test]
    fn sus_boundaries() {
        assert_eq!(sus([3; 10]), 50.0);
        assert_eq!(sus([5, 1, 5, 1, 5, 1, 5, 1, 5, 1]), 100.0);
        assert_eq!(sus([1, 5, 1, 5, 1, 5, 1, 5, 1, 5]), 0.0);
    }

    #[test]
    fn sus_validation() {
        assert_eq!(SusResponse::new(&[3; 9]), Err(AnalysisError::ItemCount(9)));
        assert_eq!(
            SusResponse::new(&[3, 3, 3, 6, 3, 3, 3, 3, 3, 3]),
            Err(AnalysisError::ItemRange { item: 4, value: 6 })
        );
        let parsed = SusResponse::parse_lines("3,3,3,3,3,3,3,3,3,3\n\n5,1,5,1,5,1,5,1,5,1\n").unwrap();
        assert_eq!(parsed.len(), 2);
        assert!(SusResponse::parse_lines("1,2,x").is_err());
    }

    #[test]
    fn published_welch_and_effect_size() {
        let with = GroupSummary::new(70.5f64, 23.14, 5);
        let without = GroupSummary::new(63.0, 17.54, 5);
        let r: WelchResult<f64> = welch_t(&with, &without).unwrap();
        assert!((r.t - 0.578).abs() < 0.001, "{}", r.t);
        // Welch-Satterthwaite by hand: 168.623^2 / (107.092^2/4 + 61.530^2/4) = 7.456.
        assert!((r.df - 7.46).abs() < 0.01, "{}", r.df);
        let d: f64 = cohens_d(70.5, 23.14, 63.0, 17.54).unwrap();
        assert!((d - 0.37).abs() < 0.01, "{d}");
    }

    #[test]
    fn equal_groups_give_zero() {
        let g = GroupSummary::new(50.0f64, 10.0, 8);
        assert_eq!(welch_t(&g, &g).unwrap().t, 0.0);
        assert_eq!(cohens_d(50.0f64, 10.0, 50.0, 12.0).unwrap(), 0.0);
        assert!(welch_t(&GroupSummary::new(1.0f64, 1.0, 1), &g).is_err());
        assert!(cohens_d(1.0f64, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_precision_statistics() {
        let r = welch_t(&GroupSummary::new(70.5f32, 23.14, 5), &GroupSummary::new(63.0f32, 17.54, 5)).unwrap();
        assert!((r.t - 0.578).abs() < 0.001);
    }

    #[test]
    fn summary_parsing() {
        let [a, b] = parse_summary_pair("with,70.5,23.14,5\nwithout,63.0,17.54,5\n").unwrap();
        assert_eq!(a.0, "with");
        assert_eq!(b.1.n, 5);
        assert!(parse_summary_pair("70.5,23.14,5\n").is_err());
    }

    fn rec(t_s: f64, tag: Option<&str>) -> SessionRecord {
        let p = RobotPose::<f64>::identity();
        SessionRecord {
            t_us: (t_s * 1e6) as u64,
            seq: 0,
            target: (&p).into(),
            actual: (&p).into(),
            joints_deg: [0.0; 6],
            gripper: GripperState::Open,
            mode: Mode::Executing,
            annotation: tag.map(String::from),
        }
    }

    fn demo_log() -> Vec<SessionRecord> {
        let mut log = vec![rec(0.0, None)];
        for i in 0..9 {
            log.push(rec(10.0 + i as f64 * 15.0, Some("item")));
        }
        log.push(rec(100.5, Some("minor")));
        log.push(rec(190.0, Some("item")));
        log.push(rec(195.0, Some("major")));
        log
    }

    #[test]
    fn task_metrics_counting() {
        assert_eq!(task_metrics(&demo_log(), 180.0), TaskMetrics { n_max: 9, e_minor: 1, e_major: 0 });
        assert_eq!(task_metrics(&demo_log(), 200.0), TaskMetrics { n_max: 10, e_minor: 1, e_major: 1 });
        assert_eq!(task_metrics(&[], 180.0), TaskMetrics::default());
    }

    proptest! {
        #[test]
        fn sus_monotone(items in prop::array::uniform10(1i64..=5), k in 0usize..10) {
            let base = sus(items);
            let mut better = items;
            if k % 2 == 0 { better[k] = (better[k] + 1).min(5) } else { better[k] = (better[k] - 1).max(1) }
            prop_assert!(sus(better) >= base);
        }

        #[test]
        fn welch_antisymmetric(m1 in -100.0..100.0f64, s1 in 0.1..50.0f64, n1 in 2u32..50,
                               m2 in -100.0..100.0f64, s2 in 0.1..50.0f64, n2 in 2u32..50) {
            let (a, b) = (GroupSummary::new(m1, s1, n1), GroupSummary::new(m2, s2, n2));
            let (ab, ba) = (welch_t(&a, &b).unwrap(), welch_t(&b, &a).unwrap());
            prop_assert!((ab.t + ba.t).abs() < 1e-12 * (1.0 + ab.t.abs()));
            prop_assert!((ab.df - ba.df).abs() < 1e-9 * ab.df);
            let d = cohens_d(m1, s1, m2, s2).unwrap();
            prop_assert_eq!(d, -cohens_d(m2, s2, m1, s1).unwrap());
        }

        #[test]
        fn metrics_ignore_record_order(seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut log = demo_log();
            log.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(task_metrics(&log, 180.0), TaskMetrics { n_max: 9, e_minor: 1, e_major: 0 });
        }
    }
}
