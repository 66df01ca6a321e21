//! Corpus generation: seeded scenarios rendered and cached to disk, with
//! idempotent resume — existing complete scenario directories are left
//! untouched and only missing ones are built.

use std::path::Path;

use trainer::scenario_config_for;
use worldgen::scenario::{save_corpus_meta, scenario_dir_name, CorpusEntry, CorpusMeta, ScenarioConfig};
use worldgen::{build_scenario, load_scenario, save_scenario, Difficulty};

use crate::manifest::RunManifest;
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenSummary {
    pub built: usize,
    pub skipped: usize,
}

/// Parses `easy:0.6,medium:0.4` into weighted tiers. Weights must be
/// positive and are normalized, so `easy:3,hard:1` is also fine.
pub fn parse_mix(s: &str) -> Result<Vec<(Difficulty, f64)>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let (tag, weight) = part
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("difficulty mix entry {part:?} is not tier:weight")))?;
        let difficulty = Difficulty::from_tag(tag.trim())
            .ok_or_else(|| CliError::Config(format!("unknown difficulty tier {tag:?}")))?;
        let weight: f64 = weight
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad weight in mix entry {part:?}")))?;
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(CliError::Config(format!("weight must be positive in {part:?}")));
        }
        if out.iter().any(|(d, _)| *d == difficulty) {
            return Err(CliError::Config(format!("difficulty {tag:?} listed twice")));
        }
        out.push((difficulty, weight));
    }
    if out.is_empty() {
        return Err(CliError::Config("empty difficulty mix".into()));
    }
    Ok(out)
}

/// Deterministic per-index tier assignment by largest remainder: counts are
/// proportional to the weights, ties broken by listing order, and the plan
/// lists tiers in listing order (all of the first tier, then the next).
pub fn difficulty_plan(mix: &[(Difficulty, f64)], count: usize) -> Vec<Difficulty> {
    let total: f64 = mix.iter().map(|(_, w)| w).sum();
    let exact: Vec<f64> = mix.iter().map(|(_, w)| w / total * count as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut short = count - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in &order {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    let mut plan = Vec::with_capacity(count);
    for (i, (d, _)) in mix.iter().enumerate() {
        plan.extend(std::iter::repeat(*d).take(counts[i]));
    }
    plan
}

fn scenario_complete(dir: &Path, cfg: &ScenarioConfig) -> bool {
    match load_scenario(dir, true) {
        Ok(s) => s
            .frames
            .iter()
            .all(|f| f.views.len() == worldgen::N_VIEWS && f.teacher.len() == worldgen::N_VIEWS)
            && s.frames
                .first()
                .and_then(|f| f.views.first())
                .is_some_and(|v| v.raster.shape == [cfg.render.grid_h, cfg.render.grid_w, worldgen::N_CHANNELS]),
        Err(_) => false,
    }
}

/// Builds `count` scenarios seeded `base_seed..base_seed+count`, tiered per
/// the mix, under `out`. Complete directories are skipped; the corpus
/// listing and manifest are rewritten either way so they always describe
/// the full set.
pub fn gen_data(
    out: &Path,
    base_seed: u64,
    count: usize,
    mix: &[(Difficulty, f64)],
    model: &str,
) -> Result<GenSummary> {
    let cfg = trainer::TrainConfig { model: model.into(), ..trainer::TrainConfig::default() };
    let mcfg = cfg.model_config()?;
    let scfg = scenario_config_for(&mcfg);
    let plan = difficulty_plan(mix, count);

    let mut entries = Vec::with_capacity(count);
    let mut summary = GenSummary { built: 0, skipped: 0 };
    for (i, &difficulty) in plan.iter().enumerate() {
        let seed = base_seed + i as u64;
        let dir = scenario_dir_name(seed, difficulty);
        let full = out.join(&dir);
        if scenario_complete(&full, &scfg) {
            summary.skipped += 1;
        } else {
            let scenario = build_scenario(seed, difficulty, &scfg)?;
            save_scenario(&full, &scenario)?;
            summary.built += 1;
        }
        entries.push(CorpusEntry { seed, difficulty, dir });
    }
    save_corpus_meta(out, &CorpusMeta { entries })?;
    RunManifest::new("gen-data", base_seed, out).with_corpus(out)?.write(out)?;
    Ok(summary)
}
