//! Turns raw prediction values into detections: decode offsets, score,
//! threshold, per-category NMS, global top-k.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::geometry::{decode, iou, BBox, EncodedOffsets};
use crate::loss::PredictionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub top_k: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        PostConfig {
            score_threshold: 0.01,
            nms_iou: 0.45,
            top_k: 200,
        }
    }
}

impl PostConfig {
    fn validate(&self) -> Result<()> {
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(Error::validation("score_threshold must lie in (0, 1)"));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::validation("nms_iou must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Greedy non-maximum suppression over detections of one category.
///
/// Sorts by score descending (ties keep input order) and keeps a detection
/// iff its IoU with every kept detection is at most `nms_iou`.
pub fn nms(dets: &[Detection], nms_iou: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let candidate = &dets[idx];
        if kept.iter().all(|k| iou(&k.bbox, &candidate.bbox) <= nms_iou) {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Full post-processing pipeline over one page's predictions.
///
/// Fork mode scores anchor `k` for category `c` as `sigmoid(conf[c][k])`;
/// baseline mode takes the softmax over `C+1` classes and drops the
/// background column. Boxes are the decoded offsets; detections below
/// `score_threshold` are dropped, each category is suppressed separately,
/// and the global `top_k` by score survive, sorted descending.
pub fn detect(
    pred: &PredictionSet,
    anchors: &AnchorSet,
    cfg: &PostConfig,
    variances: (f64, f64),
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let k = anchors.len();
    let mut per_category: Vec<Vec<Detection>> = Vec::new();
    match pred {
        PredictionSet::Fork { loc, conf } => {
            if loc.len() != conf.len() {
                return Err(Error::validation("fork loc/conf category counts differ"));
            }
            for (c, (loc_c, conf_c)) in loc.iter().zip(conf).enumerate() {
                if loc_c.len() != k || conf_c.len() != k {
                    return Err(Error::validation(format!(
                        "fork prediction arrays must have K={k} rows"
                    )));
                }
                let mut dets = Vec::new();
                for (a_idx, (z, logit)) in loc_c.iter().zip(conf_c).enumerate() {
                    let score = crate::loss::sigmoid(*logit);
                    if score > cfg.score_threshold {
                        dets.push(Detection {
                            bbox: decode_row(z, &anchors.anchors[a_idx], variances),
                            category: c,
                            score,
                        });
                    }
                }
                per_category.push(nms(&dets, cfg.nms_iou));
            }
        }
        PredictionSet::Baseline { loc, conf } => {
            if loc.len() != k || conf.len() != k {
                return Err(Error::validation(format!(
                    "baseline prediction arrays must have K={k} rows"
                )));
            }
            let width = conf.first().map_or(0, Vec::len);
            if width < 2 || conf.iter().any(|row| row.len() != width) {
                return Err(Error::validation("baseline confidence rows must be uniform C+1"));
            }
            let categories = width - 1;
            let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); categories];
            for (a_idx, (z, row)) in loc.iter().zip(conf).enumerate() {
                let probs = softmax(row);
                for (c, dets_c) in dets.iter_mut().enumerate() {
                    if probs[c] > cfg.score_threshold {
                        dets_c.push(Detection {
                            bbox: decode_row(z, &anchors.anchors[a_idx], variances),
                            category: c,
                            score: probs[c],
                        });
                    }
                }
            }
            for dets_c in dets {
                per_category.push(nms(&dets_c, cfg.nms_iou));
            }
        }
    }

    let mut merged: Vec<Detection> = per_category.into_iter().flatten().collect();
    // score descending; ties by category then box position for determinism
    merged.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.category.cmp(&b.category))
            .then(a.bbox.x_min.partial_cmp(&b.bbox.x_min).unwrap())
    });
    merged.truncate(cfg.top_k);
    Ok(merged)
}

fn decode_row(z: &[f64; 4], anchor: &BBox, variances: (f64, f64)) -> BBox {
    decode(
        &EncodedOffsets {
            d_cx: z[0],
            d_cy: z[1],
            d_w: z[2],
            d_h: z[3],
        },
        anchor,
        variances,
    )
}

fn softmax(zs: &[f64]) -> Vec<f64> {
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = zs.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
