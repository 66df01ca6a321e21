//! Composes the four training losses for one batch under the ablation
//! toggles. Disabled terms are never built: their parameters stay unreached
//! and collect no gradients.

use numcore::{Graph, Tensor, Tid};

use model::encoder::{align_loss, encode};
use model::traj_decoder::{decode_candidates, traj_loss};
use model::world_model::{aggregate, ego_feature, ego_heads, predict_future, wm_loss, ExtraCtx};
use model::{Bound, ModelConfig};

use crate::config::Geometry;
use crate::data::Sample;
use crate::{Result, TrainError};

/// Tape nodes of the composed loss; optional terms follow the toggles.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Tid,
    pub traj: Tid,
    pub align: Option<Tid>,
    pub wm: Option<Tid>,
    pub ego: Option<Tid>,
}

/// Batch-mean values of the same terms, for logging.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub traj: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego: Option<f64>,
}

/// `total = traj + alpha*align + beta*wm + gamma*ego` over whichever terms
/// exist.
pub fn combine_terms(
    g: &mut Graph,
    cfg: &crate::TrainConfig,
    traj: Tid,
    align: Option<Tid>,
    wm: Option<Tid>,
    ego: Option<Tid>,
) -> Result<Tid> {
    let mut total = traj;
    for (term, weight) in [(align, cfg.alpha), (wm, cfg.beta), (ego, cfg.gamma)] {
        if let Some(t) = term {
            let scaled = g.scale(t, weight)?;
            total = g.add(total, scaled)?;
        }
    }
    Ok(total)
}

fn mean_of(g: &mut Graph, xs: &[Tid]) -> Result<Tid> {
    let mut sum = xs[0];
    for &x in &xs[1..] {
        sum = g.add(sum, x)?;
    }
    Ok(g.scale(sum, 1.0 / xs.len() as f64)?)
}

/// Rasters of the prediction-target frames, `[T-1, M, S, C]`.
fn target_frames(sample: &Sample, cfg: &ModelConfig) -> Result<Tensor> {
    let per = cfg.n_views * cfg.s() * cfg.c_in;
    Ok(Tensor::from_vec(
        vec![cfg.t() - 1, cfg.n_views, cfg.s(), cfg.c_in],
        sample.input.data[per..].to_vec(),
    )?)
}

/// Builds the composed loss for `samples` on one tape. `shadow` carries the
/// frozen target-encoder parameters and must be given when the world model
/// is enabled. `step` only labels the non-finite abort.
pub fn total_loss(
    g: &mut Graph,
    b: &Bound,
    shadow: Option<&Bound>,
    cfg: &crate::TrainConfig,
    mcfg: &ModelConfig,
    samples: &[&Sample],
    step: usize,
) -> Result<(LossNodes, LossTerms)> {
    if samples.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let toggles = &cfg.toggles;
    let cur = mcfg.current_index();
    let (mut traj_acc, mut align_acc, mut wm_acc, mut ego_acc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());

    for &sample in samples {
        let (scene, image) = encode(g, b, mcfg, &sample.input)?;

        if toggles.geometry == Geometry::Distill {
            align_acc.push(align_loss(g, b, mcfg, image, &sample.teacher)?);
        }

        let traj_ctx;
        if toggles.compression {
            let world = if toggles.world_model {
                let world = aggregate(g, b, mcfg, scene, &sample.egos)?;

                let extra = if toggles.geometry == Geometry::Concat {
                    Some(ExtraCtx::from_teacher(mcfg, &sample.teacher)?)
                } else {
                    None
                };
                let pred = predict_future(g, b, mcfg, world, extra.as_ref())?;

                let bs = shadow
                    .ok_or_else(|| TrainError::Config("world model needs the frozen target encoder".into()))?;
                let tgt = target_frames(sample, mcfg)?;
                let (scene_gt, _) = encode(g, bs, mcfg, &tgt)?;
                let world_gt = aggregate(g, bs, mcfg, scene_gt, &sample.egos[1..])?;
                wm_acc.push(wm_loss(g, pred, world_gt)?);

                if toggles.ego_status {
                    let preds = ego_heads(g, b, mcfg, pred)?;
                    let cmds: Vec<usize> = sample.egos[1..].iter().map(|e| e.command.index()).collect();
                    let ce = g.cross_entropy_logits(preds.cmd_logits, &cmds)?;
                    let tc = mcfg.t() - 1;
                    let vels: Vec<f64> = sample.egos[1..].iter().flat_map(|e| e.v).collect();
                    let accs: Vec<f64> = sample.egos[1..].iter().flat_map(|e| e.a).collect();
                    let vt = g.constant(Tensor::from_vec(vec![tc, 2], vels)?)?;
                    let at = g.constant(Tensor::from_vec(vec![tc, 2], accs)?)?;
                    let lv = g.mse_loss(preds.vel, vt)?;
                    let la = g.mse_loss(preds.acc, at)?;
                    let sum = g.add(ce, lv)?;
                    ego_acc.push(g.add(sum, la)?);
                }
                world
            } else {
                let scene_cur = g.slice(scene, 0, cur, 1)?;
                aggregate(g, b, mcfg, scene_cur, &sample.egos[cur..cur + 1])?
            };
            let block = g.slice(world, 0, if toggles.world_model { cur } else { 0 }, 1)?;
            traj_ctx = g.reshape(block, vec![mcfg.b_tokens(), mcfg.d_l])?;
        } else {
            // Ablated compression: the planner reads raw patch tokens plus
            // the ego embedding.
            let img_cur = g.slice(image, 0, cur, 1)?;
            let img_cur = g.reshape(img_cur, vec![mcfg.n_views * mcfg.s(), mcfg.d_l])?;
            let ef = g.constant(Tensor::from_vec(vec![1, 8], ego_feature(&sample.egos[cur]).to_vec())?)?;
            let ew = b.id("enc.ego.w");
            let eb = b.id("enc.ego.b");
            let ee = g.linear(ef, ew, eb)?;
            traj_ctx = g.concat(&[img_cur, ee], 0)?;
        }

        let cands = decode_candidates(g, b, mcfg, traj_ctx)?;
        traj_acc.push(traj_loss(g, cands, &sample.expert, sample.command)?);
    }

    let traj = mean_of(g, &traj_acc)?;
    let align = if align_acc.is_empty() { None } else { Some(mean_of(g, &align_acc)?) };
    let wm = if wm_acc.is_empty() { None } else { Some(mean_of(g, &wm_acc)?) };
    let ego = if ego_acc.is_empty() { None } else { Some(mean_of(g, &ego_acc)?) };
    let total = combine_terms(g, cfg, traj, align, wm, ego)?;

    let value = |g: &Graph, id: Tid| g.value(id).item().expect("loss terms are scalars");
    let terms = LossTerms {
        total: value(g, total),
        traj: value(g, traj),
        align: align.map(|t| value(g, t)),
        wm: wm.map(|t| value(g, t)),
        ego: ego.map(|t| value(g, t)),
    };
    for (name, v) in [
        ("traj", Some(terms.traj)),
        ("align", terms.align),
        ("world-model", terms.wm),
        ("ego", terms.ego),
        ("total", Some(terms.total)),
    ] {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(TrainError::NonFinite { term: name, step });
            }
        }
    }
    Ok((LossNodes { total, traj, align, wm, ego }, terms))
}
