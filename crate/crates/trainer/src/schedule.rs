//! Learning-rate schedule: linear warmup to the peak, cosine decay to the
//! floor.

use crate::TrainConfig;

pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = (cfg.warmup_frac * total_steps as f64).ceil() as usize;
    if step < warmup {
        return cfg.lr_peak * step as f64 / warmup as f64;
    }
    let span = total_steps.saturating_sub(warmup);
    let progress = if span == 0 { 1.0 } else { ((step - warmup) as f64 / span as f64).min(1.0) };
    cfg.lr_floor + 0.5 * (cfg.lr_peak - cfg.lr_floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}
