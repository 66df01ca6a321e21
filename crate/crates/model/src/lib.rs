//! Network components: the compressive scene encoder, the latent world
//! model with rotary positions and an EMA target, and the command-conditioned
//! trajectory decoder. All forward passes are pure functions over a
//! `ParamSet` bound onto a fresh tape.

pub mod attention;
pub mod config;
pub mod encoder;
pub mod params;
pub mod rope;
pub mod traj_decoder;
pub mod world_model;

pub use config::{ModelConfig, STRIDE_DEFAULT, STRIDE_DENSE, STRIDE_SHORT};
pub use params::{Bound, Param, ParamSet};
pub use rope::RopeConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    Config(String),
    #[error("parameter store: {0}")]
    Param(String),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Registers every trainable tensor for a configuration, in a fixed order,
/// from one seeded stream. The same seed always yields the same bytes.
pub fn build_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    encoder::register_encoder(&mut ps, cfg, &mut rng)?;
    world_model::register_world_model(&mut ps, cfg, &mut rng)?;
    traj_decoder::register_traj_decoder(&mut ps, cfg, &mut rng)?;
    Ok(ps)
}

/// The frozen target copy tracks everything under the encoder prefix: the
/// scene encoder and the ego embedding it feeds the world model.
pub fn encoder_shadow(ps: &ParamSet) -> ParamSet {
    ps.subset("enc.").frozen_clone()
}

/// Parameter prefixes needed to drive the car; the world model and its
/// shadow stay on disk.
pub const EVAL_PREFIXES: [&str; 2] = ["enc.", "td."];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_build_identical_parameters() {
        let cfg = ModelConfig::tiny();
        let a = build_params(&cfg, 42).unwrap();
        let b = build_params(&cfg, 42).unwrap();
        assert_eq!(a.len(), b.len());
        for ((na, pa), (nb, pb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(pa.value.data, pb.value.data);
        }
        let c = build_params(&cfg, 43).unwrap();
        let differs = a
            .iter()
            .zip(c.iter())
            .any(|((_, pa), (_, pc))| pa.value.data != pc.value.data);
        assert!(differs, "different seeds must change the init");
    }

    #[test]
    fn shadow_covers_exactly_the_encoder_prefix() {
        let cfg = ModelConfig::tiny();
        let ps = build_params(&cfg, 0).unwrap();
        let shadow = encoder_shadow(&ps);
        assert!(!shadow.is_empty());
        for (name, p) in shadow.iter() {
            assert!(name.starts_with("enc."));
            assert!(!p.value.requires_grad);
        }
        assert!(shadow.get("enc.ego.w").is_some(), "ego embedding belongs to the target copy");
        assert!(shadow.get("wm.fq").is_none());
    }
}
