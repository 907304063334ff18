//! Independent reference implementations used as oracles.
//!
//! Everything here recomputes results from the documented rules in the
//! most literal way available (full candidate lists, exhaustive sweeps,
//! per-term sums) and stays off the library's code paths except where a
//! test deliberately shares an input (e.g. a verified match result).

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use boxforge::anchors::AnchorSet;
use boxforge::eval::{CategoryGroundTruth, EvalDetection, Interpolation};
use boxforge::geometry::BBox;
use boxforge::matcher::{GtObject, MatchResult, MatcherConfig};
use boxforge::postprocess::Detection;

pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
    let area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

// ---------------------------------------------------------------------------
// matcher

pub struct RefMatch {
    pub slots: Vec<Option<usize>>,
    pub positives_per_category: Vec<usize>,
    pub unassigned: BTreeSet<usize>,
}

/// Brute-force matcher: builds the full candidate list for every anchor
/// and every ground truth, sorts by the documented orderings, and applies
/// the two rules one after the other.
pub fn ref_match_standard(
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &MatcherConfig,
    categories: usize,
) -> RefMatch {
    let mut slots: Vec<Option<usize>> = vec![None; anchors.len()];

    // rule 1: highest IoU at or above the threshold, ties to the lower id
    for (a_idx, anchor) in anchors.anchors.iter().enumerate() {
        let mut candidates: Vec<(f64, usize)> = gts
            .iter()
            .map(|g| (ref_iou(&g.bbox, anchor), g.id))
            .filter(|(v, _)| *v >= cfg.iou_threshold)
            .collect();
        candidates.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        slots[a_idx] = candidates.first().map(|(_, id)| *id);
    }

    // rule 2: every gt claims its best anchor (ties to the lower anchor
    // index); the strongest claim per anchor overrides rule 1
    if cfg.force_best_match {
        let mut claims: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
        for g in gts {
            let mut scored: Vec<(f64, usize)> = anchors
                .anchors
                .iter()
                .enumerate()
                .map(|(a_idx, anchor)| (ref_iou(&g.bbox, anchor), a_idx))
                .collect();
            scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            if let Some(&(v, a_idx)) = scored.first() {
                if v > 0.0 {
                    claims.entry(a_idx).or_default().push((v, g.id));
                }
            }
        }
        for (a_idx, mut list) in claims {
            list.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            slots[a_idx] = Some(list[0].1);
        }
    }

    tally(slots, gts, categories)
}

pub fn ref_match_forked(
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &MatcherConfig,
    categories: usize,
) -> RefMatch {
    let mut slots = Vec::with_capacity(categories * anchors.len());
    for c in 0..categories {
        let sub: Vec<GtObject> = gts.iter().filter(|g| g.category == c).cloned().collect();
        slots.extend(ref_match_standard(&sub, anchors, cfg, categories).slots);
    }
    tally(slots, gts, categories)
}

fn tally(slots: Vec<Option<usize>>, gts: &[GtObject], categories: usize) -> RefMatch {
    let mut positives = vec![0usize; categories];
    let mut assigned = BTreeSet::new();
    for id in slots.iter().flatten() {
        let gt = gts.iter().find(|g| g.id == *id).unwrap();
        positives[gt.category] += 1;
        assigned.insert(*id);
    }
    RefMatch {
        slots,
        positives_per_category: positives,
        unassigned: gts
            .iter()
            .map(|g| g.id)
            .filter(|id| !assigned.contains(id))
            .collect(),
    }
}

pub fn assert_match_equals(lib: &MatchResult, reference: &RefMatch) {
    assert_eq!(lib.slots, reference.slots, "slot assignment differs");
    assert_eq!(
        lib.positives_per_category, reference.positives_per_category,
        "positive counts differ"
    );
    let lib_unassigned: BTreeSet<usize> = lib.unassigned_gt.iter().copied().collect();
    assert_eq!(lib_unassigned, reference.unassigned, "unassigned sets differ");
}

// ---------------------------------------------------------------------------
// loss

fn ref_smooth_l1(r: f64) -> f64 {
    if r.abs() < 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

fn ref_sigmoid_ce(z: f64, target: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

fn ref_softmax_ce(zs: &[f64], target: usize) -> f64 {
    let sum: f64 = zs.iter().map(|z| z.exp()).sum();
    -(zs[target].exp() / sum).ln()
}

fn ref_encode(gt: &BBox, anchor: &BBox, variances: (f64, f64)) -> [f64; 4] {
    let (g_w, g_h) = (gt.x_max - gt.x_min, gt.y_max - gt.y_min);
    let (g_cx, g_cy) = (gt.x_min + g_w / 2.0, gt.y_min + g_h / 2.0);
    let (a_w, a_h) = (anchor.x_max - anchor.x_min, anchor.y_max - anchor.y_min);
    let (a_cx, a_cy) = (anchor.x_min + a_w / 2.0, anchor.y_min + a_h / 2.0);
    [
        ((g_cx - a_cx) / a_w) / variances.0,
        ((g_cy - a_cy) / a_h) / variances.0,
        (g_w / a_w).ln() / variances.1,
        (g_h / a_h).ln() / variances.1,
    ]
}

fn lookup(gts: &[GtObject], id: usize) -> &GtObject {
    gts.iter().find(|g| g.id == id).unwrap()
}

/// Naive forked loss: every term written out and summed directly, with the
/// mined-negative sets supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn ref_loss_fork(
    loc: &[Vec<[f64; 4]>],
    conf: &[Vec<f64>],
    match_result: &MatchResult,
    gts: &[GtObject],
    anchors: &AnchorSet,
    weights: &[f64],
    variances: (f64, f64),
    mined: &[Vec<usize>],
) -> f64 {
    let mut total = 0.0;
    for c in 0..match_result.replicas {
        let slots = match_result.replica_slots(c);
        let n_pos = slots.iter().filter(|s| s.is_some()).count();
        if n_pos == 0 {
            continue;
        }
        let mut l_loc = 0.0;
        let mut l_conf = 0.0;
        for (k, slot) in slots.iter().enumerate() {
            if let Some(id) = slot {
                let target = ref_encode(&lookup(gts, *id).bbox, &anchors.anchors[k], variances);
                for j in 0..4 {
                    l_loc += ref_smooth_l1(loc[c][k][j] - target[j]);
                }
                l_conf += ref_sigmoid_ce(conf[c][k], 1.0);
            }
        }
        for &k in &mined[c] {
            l_conf += ref_sigmoid_ce(conf[c][k], 0.0);
        }
        total += weights[c] * (l_loc + l_conf) / n_pos as f64;
    }
    total
}

/// Naive baseline loss with a caller-supplied global mined set.
pub fn ref_loss_baseline(
    loc: &[[f64; 4]],
    conf: &[Vec<f64>],
    match_result: &MatchResult,
    gts: &[GtObject],
    anchors: &AnchorSet,
    variances: (f64, f64),
    mined: &[usize],
) -> f64 {
    let background = conf.first().map_or(0, Vec::len).saturating_sub(1);
    let n_pos = match_result.slots.iter().filter(|s| s.is_some()).count();
    if n_pos == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (k, slot) in match_result.slots.iter().enumerate() {
        if let Some(id) = slot {
            let gt = lookup(gts, *id);
            let target = ref_encode(&gt.bbox, &anchors.anchors[k], variances);
            for j in 0..4 {
                sum += ref_smooth_l1(loc[k][j] - target[j]);
            }
            sum += ref_softmax_ce(&conf[k], gt.category);
        }
    }
    for &k in mined {
        sum += ref_softmax_ce(&conf[k], background);
    }
    sum / n_pos as f64
}

// ---------------------------------------------------------------------------
// nms

/// Reference NMS by repeated extraction: take the highest-scoring
/// remaining detection (ties to the lower input index), keep it, delete
/// everything overlapping it beyond the threshold, repeat.
pub fn ref_nms(dets: &[Detection], nms_iou: f64) -> Vec<Detection> {
    let mut remaining: Vec<(usize, Detection)> = dets.iter().cloned().enumerate().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if remaining[i].1.score > remaining[best].1.score {
                best = i;
            }
        }
        let (_, winner) = remaining.remove(best);
        remaining.retain(|(_, d)| ref_iou(&winner.bbox, &d.bbox) <= nms_iou);
        kept.push(winner);
    }
    kept
}

// ---------------------------------------------------------------------------
// average precision / best-F

struct RankedHit {
    score: f64,
    hit: bool,
}

/// Greedy matching in score order, recomputed from scratch with explicit
/// bookkeeping. Returns hits in rank order.
fn ref_rank_and_match(
    dets: &[EvalDetection],
    gts: &CategoryGroundTruth,
    iou_threshold: f64,
) -> Vec<RankedHit> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut used: BTreeMap<String, Vec<bool>> = gts
        .iter()
        .map(|(page, boxes)| (page.clone(), vec![false; boxes.len()]))
        .collect();
    let mut ranked = Vec::new();
    for idx in order {
        let det = &dets[idx];
        let mut hit = false;
        if let Some(boxes) = gts.get(&det.page_id) {
            let flags = used.get_mut(&det.page_id).unwrap();
            let mut best_iou = -1.0;
            let mut best_gt = None;
            for (gi, gt) in boxes.iter().enumerate() {
                if flags[gi] {
                    continue;
                }
                let v = ref_iou(&det.bbox, gt);
                if v > best_iou {
                    best_iou = v;
                    best_gt = Some(gi);
                }
            }
            if let Some(gi) = best_gt {
                if best_iou >= iou_threshold {
                    flags[gi] = true;
                    hit = true;
                }
            }
        }
        ranked.push(RankedHit {
            score: det.score,
            hit,
        });
    }
    ranked
}

/// Brute-force AP by direct curve construction. `None` without ground
/// truth.
pub fn ref_average_precision(
    dets: &[EvalDetection],
    gts: &CategoryGroundTruth,
    iou_threshold: f64,
    interpolation: Interpolation,
) -> Option<f64> {
    let n_gt: usize = gts.values().map(Vec::len).sum();
    if n_gt == 0 {
        return None;
    }
    if dets.is_empty() {
        return Some(0.0);
    }
    let ranked = ref_rank_and_match(dets, gts, iou_threshold);
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let mut tp = 0usize;
    for (i, r) in ranked.iter().enumerate() {
        if r.hit {
            tp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let max_precision_at = |recall: f64| -> f64 {
        curve
            .iter()
            .filter(|(r, _)| *r >= recall)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    };
    Some(match interpolation {
        Interpolation::ElevenPoint => {
            (0..=10).map(|i| max_precision_at(i as f64 / 10.0)).sum::<f64>() / 11.0
        }
        Interpolation::AllPoint => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for &(recall, _) in &curve {
                if recall > prev {
                    ap += (recall - prev) * max_precision_at(recall);
                    prev = recall;
                }
            }
            ap
        }
    })
}

/// Exhaustive best-F sweep: for every distinct score cutoff, rebuild the
/// kept set, rematch from scratch, and compute the triple.
pub fn ref_best_f(
    dets: &[EvalDetection],
    gts: &CategoryGroundTruth,
    iou_threshold: f64,
) -> (f64, f64, f64, f64) {
    if dets.is_empty() {
        return (0.0, 0.0, 0.0, f64::INFINITY);
    }
    let n_gt: usize = gts.values().map(Vec::len).sum();
    let mut cutoffs: Vec<f64> = dets.iter().map(|d| d.score).collect();
    cutoffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cutoffs.dedup();
    let mut best = (0.0, 0.0, 0.0, f64::INFINITY);
    let mut best_f = f64::NEG_INFINITY;
    for cutoff in cutoffs {
        let kept: Vec<EvalDetection> = dets.iter().filter(|d| d.score >= cutoff).cloned().collect();
        let ranked = ref_rank_and_match(&kept, gts, iou_threshold);
        let tp = ranked.iter().filter(|r| r.hit).count();
        let precision = tp as f64 / kept.len() as f64;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if f > best_f {
            best_f = f;
            best = (recall, precision, f, cutoff);
        }
    }
    best
}
