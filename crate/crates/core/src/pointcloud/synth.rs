//! Deterministic synthetic depth scenes: a fronto-parallel background plane,
//! axis-aligned boxes in image space, gaussian depth noise and random dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::frame::{DepthFrame, Intrinsics};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    /// Pixel rectangle `[x0, x1) x [y0, y1)`.
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub depth_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics<f64>,
    pub plane_mm: f64,
    pub boxes: Vec<BoxRegion>,
    pub noise_sigma_mm: f64,
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("bad scene term {0:?}")]
    BadTerm(String),
    #[error("scene needs a plane:<depth_mm> term")]
    MissingPlane,
    #[error("dropout must be in [0, 1] and noise non-negative")]
    OutOfRange,
}

impl SceneSpec {
    /// Noiseless plane with a focal length suited to a close-range camera.
    pub fn plane(width: usize, height: usize, plane_mm: f64) -> Self {
        Self {
            width,
            height,
            intrinsics: Intrinsics::centered(width, height, 0.9 * width as f64),
            plane_mm,
            boxes: Vec::new(),
            noise_sigma_mm: 0.0,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma_mm: f64, dropout: f64, seed: u64) -> Self {
        self.noise_sigma_mm = sigma_mm;
        self.dropout = dropout;
        self.seed = seed;
        self
    }

    pub fn with_box(mut self, b: BoxRegion) -> Self {
        self.boxes.push(b);
        self
    }

    /// Parses a comma separated description, e.g.
    /// `plane:600,box:40:40:90:90:450,noise:5,dropout:0.05,size:256x192,seed:3`.
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut plane = None;
        let mut size = (256usize, 256usize);
        let mut boxes = Vec::new();
        let (mut noise, mut dropout, mut seed) = (0.0, 0.0, 0u64);
        for term in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = || SceneError::BadTerm(term.to_string());
            let (key, rest) = term.split_once(':').ok_or_else(bad)?;
            match key {
                "plane" => plane = Some(rest.parse::<f64>().map_err(|_| bad())?),
                "noise" => noise = rest.parse().map_err(|_| bad())?,
                "dropout" => dropout = rest.parse().map_err(|_| bad())?,
                "seed" => seed = rest.parse().map_err(|_| bad())?,
                "size" => {
                    let (w, h) = rest.split_once('x').ok_or_else(bad)?;
                    size = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?);
                }
                "box" => {
                    let v: Vec<f64> = rest.split(':').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
                    let [x0, y0, x1, y1, depth_mm] = v[..] else { return Err(bad()) };
                    boxes.push(BoxRegion { x0: x0 as usize, y0: y0 as usize, x1: x1 as usize, y1: y1 as usize, depth_mm });
                }
                _ => return Err(bad()),
            }
        }
        if !(0.0..=1.0).contains(&dropout) || noise < 0.0 {
            return Err(SceneError::OutOfRange);
        }
        let mut spec = Self::plane(size.0, size.1, plane.ok_or(SceneError::MissingPlane)?).with_noise(noise, dropout, seed);
        spec.boxes = boxes;
        Ok(spec)
    }

    /// Noise-free depth at a pixel.
    pub fn true_depth(&self, u: usize, v: usize) -> f64 {
        self.boxes
            .iter()
            .rev()
            .find(|b| (b.x0..b.x1).contains(&u) && (b.y0..b.y1).contains(&v))
            .map_or(self.plane_mm, |b| b.depth_mm)
    }
}

/// Endless frame stream for a scene. Same spec, same frames.
pub struct SynthScene<T> {
    spec: SceneSpec,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    next_index: u64,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real> SynthScene<T> {
    pub fn new(spec: SceneSpec) -> Self {
        let noise = (spec.noise_sigma_mm > 0.0).then(|| Normal::new(0.0, spec.noise_sigma_mm).expect("sigma checked"));
        Self { rng: ChaCha8Rng::seed_from_u64(spec.seed), noise, spec, next_index: 0, _scalar: std::marker::PhantomData }
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }
}

impl<T: Real> Iterator for SynthScene<T> {
    type Item = DepthFrame<T>;

    fn next(&mut self) -> Option<DepthFrame<T>> {
        let s = &self.spec;
        let mut depth = Vec::with_capacity(s.width * s.height);
        for v in 0..s.height {
            for u in 0..s.width {
                let mut z = s.true_depth(u, v);
                if let Some(n) = &self.noise {
                    z += n.sample(&mut self.rng);
                }
                if s.dropout > 0.0 && self.rng.gen::<f64>() < s.dropout {
                    z = 0.0;
                }
                depth.push(T::lit(z.max(0.0)));
            }
        }
        let k = s.intrinsics;
        let intrinsics = Intrinsics { fx: T::lit(k.fx), fy: T::lit(k.fy), cx: T::lit(k.cx), cy: T::lit(k.cy) };
        let frame = DepthFrame { width: s.width, height: s.height, depth, intrinsics, frame_index: self.next_index };
        self.next_index += 1;
        Some(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_is_exact() {
        let spec = SceneSpec::plane(32, 16, 600.0).with_box(BoxRegion { x0: 4, y0: 4, x1: 8, y1: 8, depth_mm: 450.0 });
        let f: DepthFrame<f64> = SynthScene::new(spec.clone()).next().unwrap();
        for v in 0..16 {
            for u in 0..32 {
                assert_eq!(f.at(u, v), spec.true_depth(u, v));
            }
        }
        assert_eq!(f.at(5, 5), 450.0);
        assert_eq!(f.at(0, 0), 600.0);
    }

    #[test]
    fn same_seed_same_stream() {
        let spec = SceneSpec::plane(16, 16, 600.0).with_noise(5.0, 0.1, 42);
        let a: Vec<DepthFrame<f64>> = SynthScene::new(spec.clone()).take(3).collect();
        let b: Vec<DepthFrame<f64>> = SynthScene::new(spec).take(3).collect();
        assert_eq!(a, b);
        assert_ne!(a[0].depth, a[1].depth);
    }

    #[test]
    fn dropout_rate_matches_binomial() {
        // n = 65536, p = 0.1: sd of the invalid fraction is ~0.0012, so a
        // +/- 1% band is more than 8 sd wide.
        let spec = SceneSpec::plane(256, 256, 600.0).with_noise(0.0, 0.1, 9);
        let f: DepthFrame<f64> = SynthScene::new(spec).next().unwrap();
        let invalid = (f.depth.len() - f.valid_count()) as f64 / f.depth.len() as f64;
        assert!((invalid - 0.1).abs() < 0.01, "{invalid}");
    }

    #[test]
    fn parse_terms() {
        let s = SceneSpec::parse("plane:600").unwrap();
        assert_eq!((s.plane_mm, s.width, s.height), (600.0, 256, 256));
        let s = SceneSpec::parse("plane:700,box:1:2:3:4:500,noise:5,dropout:0.05,size:64x48,seed:3").unwrap();
        assert_eq!(s.boxes.len(), 1);
        assert_eq!((s.width, s.height, s.seed), (64, 48, 3));
        assert_eq!(SceneSpec::parse("noise:5"), Err(SceneError::MissingPlane));
        assert!(SceneSpec::parse("plane:abc").is_err());
        assert!(SceneSpec::parse("plane:600,dropout:2").is_err());
    }
}
