//! Frame files and the decimated point stream format.
//!
//! Frame file (little-endian):
//!
//! ```text
//! 0   magic "DFRM"
//! 4   version u16 (1), reserved u16 (0)
//! 8   width u32, height u32
//! 16  frame_index u64
//! 24  fx, fy, cx, cy as f64
//! 56  width * height u16 depth in mm, row-major, 0 = invalid
//! ```
//!
//! Point stream frame: `count: u32`, then `count` times `x, y, z` as f32 (mm).

use std::io::{Read, Write};

use super::frame::{is_valid, DepthFrame, Intrinsics, PointCloud};
use crate::scalar::Real;

pub const FRAME_MAGIC: [u8; 4] = *b"DFRM";
pub const FRAME_VERSION: u16 = 1;
pub const FRAME_HEADER_LEN: usize = 56;
/// Upper bound on points per streamed frame.
pub const MAX_STREAM_POINTS: usize = 20_000;

#[derive(Debug, thiserror::Error)]
pub enum FrameIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a depth frame file")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    Version(u16),
    #[error("truncated stream frame: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
}

pub fn write_frame<T: Real, W: Write>(frame: &DepthFrame<T>, mut out: W) -> Result<(), FrameIoError> {
    let mut buf = Vec::with_capacity(FRAME_HEADER_LEN + 2 * frame.depth.len());
    buf.extend_from_slice(&FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(frame.width as u32).to_le_bytes());
    buf.extend_from_slice(&(frame.height as u32).to_le_bytes());
    buf.extend_from_slice(&frame.frame_index.to_le_bytes());
    let k = &frame.intrinsics;
    for v in [k.fx, k.fy, k.cx, k.cy] {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    for &z in &frame.depth {
        let mm = if is_valid(z) { z.to_f64_lossy().round().clamp(0.0, u16::MAX as f64) as u16 } else { 0 };
        buf.extend_from_slice(&mm.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_frame<T: Real, R: Read>(mut input: R) -> Result<DepthFrame<T>, FrameIoError> {
    let mut head = [0u8; FRAME_HEADER_LEN];
    input.read_exact(&mut head)?;
    if head[..4] != FRAME_MAGIC {
        return Err(FrameIoError::BadMagic);
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FRAME_VERSION {
        return Err(FrameIoError::Version(version));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| T::lit(f64::from_le_bytes(head[o..o + 8].try_into().unwrap()));
    let (width, height) = (u32_at(8), u32_at(12));
    let frame_index = u64::from_le_bytes(head[16..24].try_into().unwrap());
    let intrinsics = Intrinsics { fx: f64_at(24), fy: f64_at(32), cx: f64_at(40), cy: f64_at(48) };
    let mut raw = vec![0u8; width * height * 2];
    input.read_exact(&mut raw)?;
    let depth = raw.chunks_exact(2).map(|c| T::lit(u16::from_le_bytes([c[0], c[1]]) as f64)).collect();
    Ok(DepthFrame { width, height, depth, intrinsics, frame_index })
}

/// Evenly strided subsample of at most `max_points` points.
pub fn decimate<T: Copy>(cloud: &PointCloud<T>, max_points: usize) -> Vec<[T; 3]> {
    let n = cloud.points.len();
    if n <= max_points {
        return cloud.points.clone();
    }
    (0..max_points).map(|i| cloud.points[i * n / max_points]).collect()
}

pub fn encode_stream_frame<T: Real>(cloud: &PointCloud<T>, max_points: usize) -> Vec<u8> {
    let pts = decimate(cloud, max_points);
    let mut buf = Vec::with_capacity(4 + pts.len() * 12);
    buf.extend_from_slice(&(pts.len() as u32).to_le_bytes());
    for p in pts {
        for v in p {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode_stream_frame(buf: &[u8]) -> Result<Vec<[f32; 3]>, FrameIoError> {
    if buf.len() < 4 {
        return Err(FrameIoError::Truncated { need: 4, got: buf.len() });
    }
    let count = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    let need = 4 + count * 12;
    if buf.len() != need {
        return Err(FrameIoError::Truncated { need, got: buf.len() });
    }
    Ok(buf[4..]
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap());
            [f(0), f(4), f(8)]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::synth::{SceneSpec, SynthScene};

    #[test]
    fn frame_file_round_trip() {
        let spec = SceneSpec::plane(20, 10, 600.0).with_noise(3.0, 0.1, 1);
        let mut f: DepthFrame<f64> = SynthScene::new(spec).nth(2).unwrap();
        f.depth.iter_mut().for_each(|z| *z = z.round());
        let mut bytes = Vec::new();
        write_frame(&f, &mut bytes).unwrap();
        assert_eq!(bytes.len(), FRAME_HEADER_LEN + 20 * 10 * 2);
        assert_eq!(&bytes[..4], b"DFRM");
        let back: DepthFrame<f64> = read_frame(&bytes[..]).unwrap();
        assert_eq!(back, f);
        assert!(matches!(read_frame::<f64, _>(&bytes[..30]), Err(FrameIoError::Io(_))));
        bytes[0] = b'X';
        assert!(matches!(read_frame::<f64, _>(&bytes[..]), Err(FrameIoError::BadMagic)));
    }

    #[test]
    fn stream_decimates_to_cap() {
        let cloud = PointCloud { points: (0..50_000).map(|i| [i as f64, 0.0, 1.0]).collect(), colors: None };
        let bytes = encode_stream_frame(&cloud, MAX_STREAM_POINTS);
        assert_eq!(bytes.len(), 4 + MAX_STREAM_POINTS * 12);
        let pts = decode_stream_frame(&bytes).unwrap();
        assert_eq!(pts.len(), MAX_STREAM_POINTS);
        assert_eq!(pts[1], [2.0, 0.0, 1.0]);
        assert!(decode_stream_frame(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn small_cloud_sent_whole() {
        let cloud = PointCloud { points: vec![[1.0f64, 2.0, 3.0]], colors: None };
        assert_eq!(decode_stream_frame(&encode_stream_frame(&cloud, 10)).unwrap(), vec![[1.0, 2.0, 3.0]]);
    }
}
