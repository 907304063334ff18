//! Weighted category-wise multibox loss for the forked head, the softmax
//! baseline it replaces, and analytic gradients for both.
//!
//! The forked total is `sum_c w_c * (L_loc_c + L_conf_c) / N+_c` over
//! categories with at least one positive slot. `L_loc` is smooth-L1 on the
//! encoded offsets of positive slots; `L_conf` is sigmoid cross entropy
//! with target 1 on positives and target 0 on the hard-mined negatives of
//! the same replica. The baseline uses softmax cross entropy over `C+1`
//! classes with a single global mining pool and normalizes by the total
//! positive count.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::geometry::encode;
use crate::matcher::{GtObject, MatchResult};

/// Raw prediction values in either head layout.
///
/// Fork mode holds one `K x 4` offset array and one length-`K` logit array
/// per category; baseline mode holds a single `K x 4` array and a
/// `K x (C+1)` pre-softmax array with the background in the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PredictionSet {
    Baseline {
        loc: Vec<[f64; 4]>,
        conf: Vec<Vec<f64>>,
    },
    Fork {
        loc: Vec<Vec<[f64; 4]>>,
        conf: Vec<Vec<f64>>,
    },
}

impl PredictionSet {
    pub fn zeros_fork(categories: usize, anchors: usize) -> Self {
        PredictionSet::Fork {
            loc: vec![vec![[0.0; 4]; anchors]; categories],
            conf: vec![vec![0.0; anchors]; categories],
        }
    }

    pub fn zeros_baseline(categories: usize, anchors: usize) -> Self {
        PredictionSet::Baseline {
            loc: vec![[0.0; 4]; anchors],
            conf: vec![vec![0.0; categories + 1]; anchors],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Per-category weights; `(0.2, 0.2, 0.4, 0.2)` for (frame, text,
    /// face, body) in the canonical setup.
    pub weights: Vec<f64>,
    /// Mined negatives per positive, per mining pool.
    pub negative_ratio: f64,
    pub variances: (f64, f64),
}

impl LossConfig {
    pub fn canonical() -> Self {
        LossConfig {
            weights: vec![0.2, 0.2, 0.4, 0.2],
            negative_ratio: 3.0,
            variances: (0.1, 0.2),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::validation("loss weights must be non-negative"));
        }
        if self.negative_ratio < 0.0 {
            return Err(Error::validation("negative_ratio must be non-negative"));
        }
        Ok(())
    }
}

/// Per-category share of a loss evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryLoss {
    /// Smooth-L1 sum over positive slots.
    pub loc: f64,
    /// Cross-entropy sum (positives plus this category's mined negatives
    /// in fork mode; positives only in baseline mode).
    pub conf: f64,
    pub positives: usize,
    /// The term this category contributes to the total.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_category: Vec<CategoryLoss>,
    /// Mined background slots. Fork: one list per category with
    /// replica-local anchor indices. Baseline: a single global list.
    pub mined_negatives: Vec<Vec<usize>>,
    /// Baseline only: cross-entropy sum of the mined negatives, which
    /// belongs to no category; the total divides it by the global positive
    /// count. Always zero in fork mode.
    pub background_conf: f64,
}

fn smooth_l1(r: f64) -> f64 {
    if r.abs() < 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

fn smooth_l1_grad(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable sigmoid cross entropy with target in {0, 1}.
fn sigmoid_ce(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp(zs: &[f64]) -> f64 {
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + zs.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

fn softmax_ce(zs: &[f64], target: usize) -> f64 {
    log_sum_exp(zs) - zs[target]
}

fn gt_by_id(gts: &[GtObject], id: usize) -> Result<&GtObject> {
    gts.iter()
        .find(|g| g.id == id)
        .ok_or_else(|| Error::validation(format!("match refers to unknown gt id {id}")))
}

fn ceil_count(ratio: f64, positives: usize) -> usize {
    (ratio * positives as f64).ceil() as usize
}

/// Picks the `count` highest-loss entries from `(index, loss)` pairs;
/// ties go to the lower index.
fn top_negatives(mut pool: Vec<(usize, f64)>, count: usize) -> Vec<usize> {
    pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    pool.truncate(count);
    pool.into_iter().map(|(i, _)| i).collect()
}

fn validate_fork_shapes(
    loc: &[Vec<[f64; 4]>],
    conf: &[Vec<f64>],
    match_result: &MatchResult,
    cfg: &LossConfig,
) -> Result<(usize, usize)> {
    let categories = match_result.replicas;
    let k = match_result.anchors_per_replica;
    if loc.len() != categories || conf.len() != categories {
        return Err(Error::validation(format!(
            "fork predictions carry {} categories, match has {categories}",
            loc.len().max(conf.len())
        )));
    }
    if loc.iter().any(|l| l.len() != k) || conf.iter().any(|c| c.len() != k) {
        return Err(Error::validation(format!(
            "fork prediction arrays must have K={k} rows"
        )));
    }
    if cfg.weights.len() != categories {
        return Err(Error::validation(format!(
            "{} weights given for {categories} categories",
            cfg.weights.len()
        )));
    }
    if match_result.positives_per_category.len() != categories {
        return Err(Error::validation(
            "match result categories disagree with replica count",
        ));
    }
    Ok((categories, k))
}

fn validate_baseline_shapes(
    loc: &[[f64; 4]],
    conf: &[Vec<f64>],
    match_result: &MatchResult,
) -> Result<(usize, usize)> {
    if match_result.replicas != 1 {
        return Err(Error::validation(
            "baseline loss requires a standard (single-replica) match",
        ));
    }
    let k = match_result.anchors_per_replica;
    if loc.len() != k || conf.len() != k {
        return Err(Error::validation(format!(
            "baseline prediction arrays must have K={k} rows"
        )));
    }
    let categories = match_result.positives_per_category.len();
    if conf.iter().any(|row| row.len() != categories + 1) {
        return Err(Error::validation(format!(
            "baseline confidence rows must have C+1={} columns",
            categories + 1
        )));
    }
    Ok((categories, k))
}

/// Hard-negative mining for the fork head: per category, the
/// `ceil(ratio * N+_c)` background slots with the highest target-0 sigmoid
/// cross entropy. Categories without positives mine nothing.
pub fn mine_negatives_fork(
    pred: &PredictionSet,
    match_result: &MatchResult,
    cfg: &LossConfig,
) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let PredictionSet::Fork { loc, conf } = pred else {
        return Err(Error::validation("expected fork-mode predictions"));
    };
    let (categories, _) = validate_fork_shapes(loc, conf, match_result, cfg)?;
    let mut mined = Vec::with_capacity(categories);
    for (c, conf_c) in conf.iter().enumerate() {
        let positives = match_result.positives_per_category[c];
        if positives == 0 {
            mined.push(Vec::new());
            continue;
        }
        let slots = match_result.replica_slots(c);
        let pool: Vec<(usize, f64)> = slots
            .iter()
            .enumerate()
            .filter(|(_, slot)| slot.is_none())
            .map(|(k, _)| (k, sigmoid_ce(conf_c[k], 0.0)))
            .collect();
        mined.push(top_negatives(pool, ceil_count(cfg.negative_ratio, positives)));
    }
    Ok(mined)
}

/// Hard-negative mining for the baseline head: one global pool ranked by
/// the background-class softmax cross entropy.
pub fn mine_negatives_baseline(
    pred: &PredictionSet,
    match_result: &MatchResult,
    cfg: &LossConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let PredictionSet::Baseline { loc, conf } = pred else {
        return Err(Error::validation("expected baseline-mode predictions"));
    };
    let (categories, _) = validate_baseline_shapes(loc, conf, match_result)?;
    let total_positives = match_result.total_positives();
    if total_positives == 0 {
        return Ok(Vec::new());
    }
    let pool: Vec<(usize, f64)> = match_result
        .slots
        .iter()
        .enumerate()
        .filter(|(_, slot)| slot.is_none())
        .map(|(k, _)| (k, softmax_ce(&conf[k], categories)))
        .collect();
    Ok(top_negatives(
        pool,
        ceil_count(cfg.negative_ratio, total_positives),
    ))
}

/// Forked loss with the mined-negative set recomputed from `pred`.
pub fn loss_fork(
    pred: &PredictionSet,
    match_result: &MatchResult,
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mined = mine_negatives_fork(pred, match_result, cfg)?;
    loss_fork_frozen(pred, match_result, gts, anchors, cfg, &mined)
}

/// Forked loss over a fixed mined-negative set (one list of replica-local
/// background indices per category). Fixing the set keeps the loss smooth
/// in the predictions, which finite-difference checks rely on.
pub fn loss_fork_frozen(
    pred: &PredictionSet,
    match_result: &MatchResult,
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &LossConfig,
    mined: &[Vec<usize>],
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let PredictionSet::Fork { loc, conf } = pred else {
        return Err(Error::validation("expected fork-mode predictions"));
    };
    let (categories, k) = validate_fork_shapes(loc, conf, match_result, cfg)?;
    if anchors.len() != k {
        return Err(Error::validation(format!(
            "anchor set has {} anchors, match expects {k}",
            anchors.len()
        )));
    }
    if mined.len() != categories {
        return Err(Error::validation("mined-negative lists must cover every category"));
    }
    if mined.iter().flatten().any(|&idx| idx >= k) {
        return Err(Error::validation(format!(
            "mined-negative index out of range for K={k}"
        )));
    }

    let mut per_category = vec![CategoryLoss::default(); categories];
    let mut total = 0.0;
    for c in 0..categories {
        let positives = match_result.positives_per_category[c];
        let entry = &mut per_category[c];
        entry.positives = positives;
        if positives == 0 {
            continue;
        }
        let slots = match_result.replica_slots(c);
        for (slot_idx, slot) in slots.iter().enumerate() {
            let Some(gt_id) = slot else { continue };
            let gt = gt_by_id(gts, *gt_id)?;
            let target = encode(&gt.bbox, &anchors.anchors[slot_idx], cfg.variances)?;
            let z = &loc[c][slot_idx];
            entry.loc += smooth_l1(z[0] - target.d_cx)
                + smooth_l1(z[1] - target.d_cy)
                + smooth_l1(z[2] - target.d_w)
                + smooth_l1(z[3] - target.d_h);
            entry.conf += sigmoid_ce(conf[c][slot_idx], 1.0);
        }
        for &neg in &mined[c] {
            entry.conf += sigmoid_ce(conf[c][neg], 0.0);
        }
        entry.weighted = cfg.weights[c] * (entry.loc + entry.conf) / positives as f64;
        total += entry.weighted;
    }
    Ok(LossBreakdown {
        total,
        per_category,
        mined_negatives: mined.to_vec(),
        background_conf: 0.0,
    })
}

/// Baseline (softmax) loss with the mined set recomputed from `pred`.
pub fn loss_baseline(
    pred: &PredictionSet,
    match_result: &MatchResult,
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mined = mine_negatives_baseline(pred, match_result, cfg)?;
    loss_baseline_frozen(pred, match_result, gts, anchors, cfg, &mined)
}

/// Baseline loss over a fixed global mined-negative set.
pub fn loss_baseline_frozen(
    pred: &PredictionSet,
    match_result: &MatchResult,
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &LossConfig,
    mined: &[usize],
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let PredictionSet::Baseline { loc, conf } = pred else {
        return Err(Error::validation("expected baseline-mode predictions"));
    };
    let (categories, k) = validate_baseline_shapes(loc, conf, match_result)?;
    if anchors.len() != k {
        return Err(Error::validation(format!(
            "anchor set has {} anchors, match expects {k}",
            anchors.len()
        )));
    }
    if mined.iter().any(|&idx| idx >= k) {
        return Err(Error::validation(format!(
            "mined-negative index out of range for K={k}"
        )));
    }

    let mut per_category = vec![CategoryLoss::default(); categories];
    let total_positives = match_result.total_positives();
    for (slot_idx, slot) in match_result.slots.iter().enumerate() {
        let Some(gt_id) = slot else { continue };
        let gt = gt_by_id(gts, *gt_id)?;
        let target = encode(&gt.bbox, &anchors.anchors[slot_idx], cfg.variances)?;
        let z = &loc[slot_idx];
        let entry = &mut per_category[gt.category];
        entry.positives += 1;
        entry.loc += smooth_l1(z[0] - target.d_cx)
            + smooth_l1(z[1] - target.d_cy)
            + smooth_l1(z[2] - target.d_w)
            + smooth_l1(z[3] - target.d_h);
        entry.conf += softmax_ce(&conf[slot_idx], gt.category);
    }
    let mut background_conf = 0.0;
    for &neg in mined {
        background_conf += softmax_ce(&conf[neg], categories);
    }
    let mut total = 0.0;
    if total_positives > 0 {
        for entry in &mut per_category {
            entry.weighted = (entry.loc + entry.conf) / total_positives as f64;
            total += entry.weighted;
        }
        total += background_conf / total_positives as f64;
    }
    Ok(LossBreakdown {
        total,
        per_category,
        mined_negatives: vec![mined.to_vec()],
        background_conf,
    })
}

/// Analytic gradients of the loss with respect to every prediction value,
/// returned in the same container shape as the predictions.
///
/// The mined-negative set is derived from `pred` and treated as a
/// constant. With `frozen_mining` the caller asserts the set stays fixed
/// under perturbation, which is the regime where these gradients equal
/// central finite differences of the frozen loss; without it they are the
/// almost-everywhere derivative of the full loss (the same values, valid
/// away from mining-selection boundaries).
pub fn loss_gradient(
    pred: &PredictionSet,
    match_result: &MatchResult,
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &LossConfig,
    frozen_mining: bool,
) -> Result<PredictionSet> {
    let _ = frozen_mining;
    match pred {
        PredictionSet::Fork { loc, conf } => {
            let (categories, k) = validate_fork_shapes(loc, conf, match_result, cfg)?;
            if anchors.len() != k {
                return Err(Error::validation("anchor count disagrees with match"));
            }
            let mined = mine_negatives_fork(pred, match_result, cfg)?;
            let mut d_loc = vec![vec![[0.0; 4]; k]; categories];
            let mut d_conf = vec![vec![0.0; k]; categories];
            for c in 0..categories {
                let positives = match_result.positives_per_category[c];
                if positives == 0 {
                    continue;
                }
                let scale = cfg.weights[c] / positives as f64;
                let slots = match_result.replica_slots(c);
                for (slot_idx, slot) in slots.iter().enumerate() {
                    let Some(gt_id) = slot else { continue };
                    let gt = gt_by_id(gts, *gt_id)?;
                    let target = encode(&gt.bbox, &anchors.anchors[slot_idx], cfg.variances)?;
                    let z = &loc[c][slot_idx];
                    let t = [target.d_cx, target.d_cy, target.d_w, target.d_h];
                    for j in 0..4 {
                        d_loc[c][slot_idx][j] = scale * smooth_l1_grad(z[j] - t[j]);
                    }
                    d_conf[c][slot_idx] = scale * (sigmoid(conf[c][slot_idx]) - 1.0);
                }
                for &neg in &mined[c] {
                    d_conf[c][neg] = scale * sigmoid(conf[c][neg]);
                }
            }
            Ok(PredictionSet::Fork {
                loc: d_loc,
                conf: d_conf,
            })
        }
        PredictionSet::Baseline { loc, conf } => {
            let (categories, k) = validate_baseline_shapes(loc, conf, match_result)?;
            if anchors.len() != k {
                return Err(Error::validation("anchor count disagrees with match"));
            }
            let mined = mine_negatives_baseline(pred, match_result, cfg)?;
            let mut d_loc = vec![[0.0; 4]; k];
            let mut d_conf = vec![vec![0.0; categories + 1]; k];
            let total_positives = match_result.total_positives();
            if total_positives > 0 {
                let scale = 1.0 / total_positives as f64;
                let softmax_grad = |zs: &[f64], target: usize, out: &mut Vec<f64>| {
                    let lse = log_sum_exp(zs);
                    for (j, z) in zs.iter().enumerate() {
                        out[j] = scale * ((z - lse).exp() - if j == target { 1.0 } else { 0.0 });
                    }
                };
                for (slot_idx, slot) in match_result.slots.iter().enumerate() {
                    let Some(gt_id) = slot else { continue };
                    let gt = gt_by_id(gts, *gt_id)?;
                    let target = encode(&gt.bbox, &anchors.anchors[slot_idx], cfg.variances)?;
                    let z = &loc[slot_idx];
                    let t = [target.d_cx, target.d_cy, target.d_w, target.d_h];
                    for j in 0..4 {
                        d_loc[slot_idx][j] = scale * smooth_l1_grad(z[j] - t[j]);
                    }
                    softmax_grad(&conf[slot_idx], gt.category, &mut d_conf[slot_idx]);
                }
                for &neg in &mined {
                    softmax_grad(&conf[neg], categories, &mut d_conf[neg]);
                }
            }
            Ok(PredictionSet::Baseline {
                loc: d_loc,
                conf: d_conf,
            })
        }
    }
}
