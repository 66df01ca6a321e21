//! Run configuration: loss weights, optimizer schedule, ablation toggles.
//! Loaded from a sectioned key=value file; every field has a default so
//! configs only state what they change.

use std::path::Path;

use serde::{Deserialize, Serialize};

use model::{ModelConfig, STRIDE_DEFAULT, STRIDE_DENSE, STRIDE_SHORT};

use crate::{io_err, Result, TrainError};

/// How frozen geometry features enter training, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Off,
    /// Cosine-alignment distillation into the encoder's image tokens.
    Distill,
    /// Frozen features appended to the world-model key-value context.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub compression: bool,
    pub geometry: Geometry,
    pub world_model: bool,
    pub ego_status: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles { compression: true, geometry: Geometry::Distill, world_model: true, ego_status: true }
    }
}

impl Toggles {
    /// The seven component-ablation rows, in presentation order: baseline,
    /// then compression with world model and ego status stacked on top, then
    /// the same ladder with distillation.
    pub fn matrix() -> Vec<Toggles> {
        let row = |compression, distill, world_model, ego_status| Toggles {
            compression,
            geometry: if distill { Geometry::Distill } else { Geometry::Off },
            world_model,
            ego_status,
        };
        vec![
            row(false, false, false, false),
            row(true, false, false, false),
            row(true, false, true, false),
            row(true, false, true, true),
            row(true, true, false, false),
            row(true, true, true, false),
            row(true, true, true, true),
        ]
    }
}

/// The three temporal stride patterns the stride study compares.
pub fn stride_rows() -> [Vec<i64>; 3] {
    [STRIDE_SHORT.to_vec(), STRIDE_DEFAULT.to_vec(), STRIDE_DENSE.to_vec()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Model preset name: desk | smoke | tiny | reference.
    pub model: String,
    /// Frame-index pattern; must be one of the three study rows.
    pub stride: Vec<i64>,
    /// Loss weights for alignment, world-model and ego terms.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub lr_floor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of scenarios withheld from training for evaluation.
    pub holdout_frac: f64,
    pub ema_mu: f64,
    pub clip_norm: f64,
    pub toggles: Toggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: "smoke".into(),
            stride: STRIDE_DEFAULT.to_vec(),
            alpha: 0.1,
            beta: 0.2,
            gamma: 0.1,
            lr_peak: 2e-4,
            weight_decay: 0.05,
            warmup_frac: 0.10,
            lr_floor: 1e-6,
            epochs: 10,
            batch_size: 2,
            seed: 7,
            holdout_frac: 0.125,
            ema_mu: 0.99,
            clip_norm: 1.0,
            toggles: Toggles::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg: TrainConfig = toml::from_str(&text)
            .map_err(|e| TrainError::Toml { path: path.to_path_buf(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return fail("loss weights must be nonnegative".into());
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return fail(format!("warmup_frac {} outside (0, 1)", self.warmup_frac));
        }
        if self.lr_peak <= 0.0 || self.lr_floor <= 0.0 || self.lr_floor > self.lr_peak {
            return fail(format!("bad learning-rate range [{}, {}]", self.lr_floor, self.lr_peak));
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be nonnegative".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return fail(format!("holdout_frac {} outside [0, 1)", self.holdout_frac));
        }
        if !(0.0..=1.0).contains(&self.ema_mu) {
            return fail(format!("ema_mu {} outside [0, 1]", self.ema_mu));
        }
        if self.clip_norm <= 0.0 {
            return fail("clip_norm must be positive".into());
        }
        if !stride_rows().iter().any(|r| r == &self.stride) {
            return fail(format!("stride {:?} is not one of the study rows {:?}", self.stride, stride_rows()));
        }
        let t = &self.toggles;
        if t.world_model && !t.compression {
            return fail("world_model requires compression: the predictor consumes scene tokens".into());
        }
        if t.ego_status && !t.world_model {
            return fail("ego_status requires world_model: it decodes predicted ego slots".into());
        }
        if t.geometry != Geometry::Off && !t.compression {
            return fail("geometry supervision requires compression".into());
        }
        if t.geometry == Geometry::Concat && !t.world_model {
            return fail("geometry=concat requires world_model: it extends the predictor context".into());
        }
        self.model_config()?;
        Ok(())
    }

    /// Model preset with this run's stride applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = match self.model.as_str() {
            "desk" => ModelConfig::desk(),
            "smoke" => ModelConfig::smoke(),
            "tiny" => ModelConfig::tiny(),
            "reference" => ModelConfig::reference(),
            other => return Err(TrainError::Config(format!("unknown model preset {other:?}"))),
        };
        cfg.stride = self.stride.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "model = \"tiny\"\nstride = [0, 8]\nepochs = 2\n\n[toggles]\ngeometry = \"off\"\n").unwrap();
        let cfg = TrainConfig::load(&path).unwrap();
        assert_eq!(cfg.model, "tiny");
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.toggles.geometry, Geometry::Off);
        assert!((cfg.lr_peak - 2e-4).abs() < 1e-18);
        assert!(cfg.toggles.world_model, "unstated toggles keep their defaults");
    }

    #[test]
    fn toggle_dependencies_are_enforced() {
        let mut cfg = TrainConfig::default();
        cfg.toggles.compression = false;
        assert!(cfg.validate().is_err(), "world model without compression");
        cfg.toggles.world_model = false;
        assert!(cfg.validate().is_err(), "ego status without world model");
        cfg.toggles.ego_status = false;
        assert!(cfg.validate().is_err(), "distillation without compression");
        cfg.toggles.geometry = Geometry::Off;
        cfg.validate().unwrap();

        let mut cfg = TrainConfig::default();
        cfg.toggles.geometry = Geometry::Concat;
        cfg.toggles.world_model = false;
        cfg.toggles.ego_status = false;
        assert!(cfg.validate().is_err(), "concat without world model");
    }

    #[test]
    fn off_pattern_strides_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.stride = vec![-3, 0, 8];
        assert!(cfg.validate().is_err());
        for row in stride_rows() {
            cfg.stride = row;
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn ablation_matrix_rows_are_valid_configs() {
        let rows = Toggles::matrix();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[0], Toggles { compression: false, geometry: Geometry::Off, world_model: false, ego_status: false });
        assert_eq!(rows[6], Toggles::default());
        for toggles in rows {
            let cfg = TrainConfig { toggles, ..TrainConfig::default() };
            cfg.validate().unwrap();
        }
    }
}
