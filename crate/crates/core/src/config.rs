//! TOML configuration for a controller cell. Every key is optional; missing
//! keys take the built-in defaults and unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::controller::{ControllerConfig, SafetyConfig};
use crate::frames::FrameMap;
use crate::kinematics::{ArmModel, DhRow, DOF};
use crate::pointcloud::PipelineParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub frame: FrameSection,
    pub wire: WireSection,
    pub safety: SafetySection,
    pub kinematics: KinematicsSection,
    pub pointcloud: PointcloudSection,
    pub http: HttpSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub permutation: FrameMap,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WireSection {
    pub port: u16,
    pub rate_hz: f64,
    pub hold_timeout_ms: f64,
}

impl Default for WireSection {
    fn default() -> Self {
        Self { port: 6510, rate_hz: 250.0, hold_timeout_ms: 500.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySection {
    pub max_speed_deviation_mm_s: f64,
    pub lp_cutoff_hz: f64,
    pub max_orient_rate_deg_s: f64,
    pub speed_violation_factor: f64,
    pub speed_violation_ms: f64,
}

impl Default for SafetySection {
    fn default() -> Self {
        let s = SafetyConfig::<f64>::default();
        Self {
            max_speed_deviation_mm_s: s.max_speed_deviation,
            lp_cutoff_hz: s.lp_cutoff_hz,
            max_orient_rate_deg_s: s.max_orient_rate,
            speed_violation_factor: s.speed_violation_factor,
            speed_violation_ms: s.speed_violation_ms,
        }
    }
}

/// DH rows are `[a_mm, alpha_deg, d_mm, theta_offset_deg]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsSection {
    pub model_id: String,
    pub dh: [[f64; 4]; DOF],
    pub limits_deg: [[f64; 2]; DOF],
    pub w_min: f64,
}

impl Default for KinematicsSection {
    fn default() -> Self {
        let arm = ArmModel::<f64>::default_arm();
        Self {
            model_id: arm.id.clone(),
            dh: arm.rows.map(|r| [r.a, r.alpha.to_degrees(), r.d, r.theta_offset.to_degrees()]),
            limits_deg: arm.limits_deg,
            w_min: arm.w_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointcloudSection {
    pub disparity_k: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for PointcloudSection {
    fn default() -> Self {
        let p = PipelineParams::<f64>::default();
        Self { disparity_k: p.disparity_k, z_min: p.z_min, z_max: p.z_max }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSection {
    pub port: u16,
}

impl Default for HttpSection {
    fn default() -> Self {
        Self { port: 8080 }
    }
}

impl CellConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.arm_model()?;
        cfg.controller_config()?;
        cfg.pipeline_params()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigFileError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn arm_model(&self) -> Result<ArmModel<f64>, ConfigFileError> {
        let k = &self.kinematics;
        let rows = k.dh.map(|[a, alpha, d, off]| DhRow {
            a,
            alpha: alpha.to_radians(),
            d,
            theta_offset: off.to_radians(),
        });
        ArmModel::new(k.model_id.clone(), rows, k.limits_deg, k.w_min)
            .map_err(|e| ConfigFileError::Invalid(e.to_string()))
    }

    pub fn controller_config(&self) -> Result<ControllerConfig<f64>, ConfigFileError> {
        let s = &self.safety;
        if !(self.wire.rate_hz > 0.0) {
            return Err(ConfigFileError::Invalid("wire.rate_hz must be positive".into()));
        }
        let cfg = ControllerConfig {
            safety: SafetyConfig {
                max_speed_deviation: s.max_speed_deviation_mm_s,
                lp_cutoff_hz: s.lp_cutoff_hz,
                max_orient_rate: s.max_orient_rate_deg_s,
                speed_violation_factor: s.speed_violation_factor,
                speed_violation_ms: s.speed_violation_ms,
            },
            dt: 1.0 / self.wire.rate_hz,
            hold_timeout: self.wire.hold_timeout_ms / 1000.0,
        };
        cfg.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn pipeline_params(&self) -> Result<PipelineParams<f64>, ConfigFileError> {
        let p = PipelineParams {
            disparity_k: self.pointcloud.disparity_k,
            z_min: self.pointcloud.z_min,
            z_max: self.pointcloud.z_max,
            ..PipelineParams::default()
        };
        p.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = CellConfig::parse("").unwrap();
        assert_eq!(cfg.wire.port, 6510);
        assert_eq!(cfg.http.port, 8080);
        assert_eq!(cfg.frame.permutation, FrameMap::default());
        let arm = cfg.arm_model().unwrap();
        let default = ArmModel::<f64>::default_arm();
        for (a, b) in arm.rows.iter().zip(default.rows.iter()) {
            assert!((a.alpha - b.alpha).abs() < 1e-12 && (a.theta_offset - b.theta_offset).abs() < 1e-12);
        }
        assert_eq!(cfg.controller_config().unwrap(), ControllerConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let cfg = CellConfig::parse(
            "[frame]\npermutation = [1,0,0, 0,1,0, 0,0,1]\n\
             [wire]\nport = 7000\nrate_hz = 125\n\
             [safety]\nmax_speed_deviation_mm_s = 20\n\
             [kinematics]\nw_min = 0.5\n\
             [pointcloud]\ndisparity_k = 1000\n",
        )
        .unwrap();
        assert_eq!(cfg.frame.permutation.determinant(), 1);
        assert_eq!(cfg.wire.port, 7000);
        let cc = cfg.controller_config().unwrap();
        assert_eq!(cc.dt, 0.008);
        assert_eq!(cc.safety.max_speed_deviation, 20.0);
        assert_eq!(cfg.arm_model().unwrap().w_min, 0.5);
        assert_eq!(cfg.pipeline_params().unwrap().disparity_k, 1000.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CellConfig::parse("[wire]\nprot = 1\n").is_err());
        assert!(CellConfig::parse("[nope]\n").is_err());
        assert!(CellConfig::parse("[frame]\npermutation = [1,1,0, 0,1,0, 0,0,1]\n").is_err());
        assert!(CellConfig::parse("[safety]\nlp_cutoff_hz = -1\n").is_err());
        assert!(CellConfig::parse("[pointcloud]\ndisparity_k = 0\n").is_err());
    }

    #[test]
    fn shipped_config_parses() {
        let text = include_str!("../../../config/cell.toml");
        let cfg = CellConfig::parse(text).unwrap();
        assert_eq!(cfg, CellConfig::default());
    }
}
