//! PASCAL-VOC detection evaluation: per-category average precision and
//! mAP, plus recall/precision/F-measure at the F-maximizing score
//! threshold.
//!
//! Detections are greedily matched in score order to the unmatched
//! same-page ground truth with the highest IoU; a match counts as a true
//! positive iff that IoU reaches the threshold, and every ground truth
//! matches at most once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::{bbox_array, AnnotationCorpus, Category, Volume};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// One detection as read from a detections file: pixel coordinates within
/// the named page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDetection {
    pub page_id: String,
    pub category: Category,
    pub score: f64,
    #[serde(rename = "box", with = "bbox_array")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    ElevenPoint,
    AllPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            interpolation: Interpolation::AllPoint,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::validation("iou_threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Ground-truth boxes of one category, grouped by page.
pub type CategoryGroundTruth = BTreeMap<String, Vec<BBox>>;

/// Per-category APs and their mean. A category without ground truth has no
/// defined AP and is excluded from the mean. The report carries the
/// protocol it was computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    /// AP per category in declaration order; `None` when undefined.
    pub per_category: Vec<Option<f64>>,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_volume: Option<Vec<VolumeEval>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEval {
    pub title: String,
    pub pages: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    pub per_category: Vec<Option<f64>>,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// Recall/precision/F at the best threshold of a score sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfResult {
    pub recall: f64,
    pub precision: f64,
    pub f_measure: f64,
    /// The F-maximizing score cutoff; `+inf` when there are no detections.
    pub threshold: f64,
}

/// Sorts detection indices by score descending; equal scores keep input
/// order.
fn score_order(dets: &[EvalDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    order
}

/// Greedy matching in score order. Returns, per detection in that order,
/// whether it was a true positive.
fn greedy_match(
    dets: &[EvalDetection],
    gts: &CategoryGroundTruth,
    iou_threshold: f64,
) -> Vec<bool> {
    let mut matched: BTreeMap<&str, Vec<bool>> = gts
        .iter()
        .map(|(page, boxes)| (page.as_str(), vec![false; boxes.len()]))
        .collect();
    let mut hits = Vec::with_capacity(dets.len());
    for &idx in &score_order(dets) {
        let det = &dets[idx];
        let mut hit = false;
        if let Some(boxes) = gts.get(&det.page_id) {
            let taken = matched.get_mut(det.page_id.as_str()).unwrap();
            let mut best: Option<(f64, usize)> = None;
            for (gi, gt) in boxes.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(&det.bbox, gt);
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, gi));
                }
            }
            if let Some((v, gi)) = best {
                if v >= iou_threshold {
                    taken[gi] = true;
                    hit = true;
                }
            }
        }
        hits.push(hit);
    }
    hits
}

fn precision_recall_curve(hits: &[bool], n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(hits.len());
    for (i, hit) in hits.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        let precision = tp as f64 / (i + 1) as f64;
        let recall = tp as f64 / n_gt as f64;
        curve.push((recall, precision));
    }
    curve
}

fn ap_from_curve(curve: &[(f64, f64)], interpolation: Interpolation) -> f64 {
    match interpolation {
        Interpolation::AllPoint => {
            // exact area under the monotonized precision envelope
            let mut envelope: Vec<f64> = curve.iter().map(|(_, p)| *p).collect();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (i, (recall, _)) in curve.iter().enumerate() {
                if *recall > prev_recall {
                    ap += (recall - prev_recall) * envelope[i];
                    prev_recall = *recall;
                }
            }
            ap
        }
        Interpolation::ElevenPoint => {
            let mut sum = 0.0;
            for step in 0..=10 {
                let r = step as f64 / 10.0;
                let p = curve
                    .iter()
                    .filter(|(recall, _)| *recall >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
    }
}

/// Average precision for one category. `None` when the category has no
/// ground truth (AP is undefined there).
pub fn average_precision(
    dets: &[EvalDetection],
    gts: &CategoryGroundTruth,
    cfg: &EvalConfig,
) -> Result<Option<f64>> {
    cfg.validate()?;
    let n_gt: usize = gts.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Ok(None);
    }
    if dets.is_empty() {
        return Ok(Some(0.0));
    }
    let hits = greedy_match(dets, gts, cfg.iou_threshold);
    let curve = precision_recall_curve(&hits, n_gt);
    Ok(Some(ap_from_curve(&curve, cfg.interpolation)))
}

/// Ground truth of one category over the corpus's regular pages, in pixel
/// coordinates.
pub fn category_ground_truth(corpus: &AnnotationCorpus, category: Category) -> CategoryGroundTruth {
    let mut gts = CategoryGroundTruth::new();
    for page in corpus.pages(false) {
        let boxes: Vec<BBox> = page
            .objects
            .iter()
            .filter(|o| o.category == category)
            .map(|o| o.bbox)
            .collect();
        gts.entry(page.page_id.clone()).or_default().extend(boxes);
    }
    gts
}

fn eval_over_volumes(
    dets: &[EvalDetection],
    volumes: &[&Volume],
    cfg: &EvalConfig,
) -> Result<(Vec<Option<f64>>, f64)> {
    let corpus = AnnotationCorpus::new(volumes.iter().map(|v| (*v).clone()).collect());
    // detections on pages outside the protocol (other volumes, irregular
    // pages) are dropped, not counted as false positives
    let in_protocol: std::collections::BTreeSet<&str> =
        corpus.pages(false).map(|p| p.page_id.as_str()).collect();
    let mut per_category = Vec::with_capacity(Category::ALL.len());
    for category in Category::ALL {
        let gts = category_ground_truth(&corpus, category);
        let cat_dets: Vec<EvalDetection> = dets
            .iter()
            .filter(|d| d.category == category && in_protocol.contains(d.page_id.as_str()))
            .cloned()
            .collect();
        per_category.push(average_precision(&cat_dets, &gts, cfg)?);
    }
    let present: Vec<f64> = per_category.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok((per_category, map))
}

/// Per-category AP and mAP over the whole corpus, optionally broken down
/// by volume.
pub fn mean_ap(
    dets: &[EvalDetection],
    corpus: &AnnotationCorpus,
    cfg: &EvalConfig,
    per_volume: bool,
) -> Result<EvalResult> {
    cfg.validate()?;
    let all: Vec<&Volume> = corpus.volumes.iter().collect();
    let (per_category, map) = eval_over_volumes(dets, &all, cfg)?;
    let mut warnings = Vec::new();
    for (category, ap) in Category::ALL.iter().zip(&per_category) {
        if ap.is_none() {
            warnings.push(format!(
                "category {category} has no ground truth; excluded from mAP"
            ));
        }
    }
    let per_volume = if per_volume {
        let mut rows = Vec::new();
        for volume in &corpus.volumes {
            let (cats, vol_map) = eval_over_volumes(dets, &[volume], cfg)?;
            rows.push(VolumeEval {
                title: volume.title.clone(),
                pages: volume.pages.iter().filter(|p| !p.irregular).count(),
                genre: volume.genre.clone(),
                per_category: cats,
                map: vol_map,
            });
        }
        Some(rows)
    } else {
        None
    };
    Ok(EvalResult {
        iou_threshold: cfg.iou_threshold,
        interpolation: cfg.interpolation,
        per_category,
        map,
        per_volume,
        warnings,
    })
}

/// Sweeps the distinct detection scores as cutoffs and returns the
/// recall/precision/F triple of the F-maximizing one (ties take the higher
/// threshold). Greedy matching in score order makes the confusion counts
/// at each cutoff a prefix of the full match sequence.
pub fn prf_at_best_threshold(
    dets: &[EvalDetection],
    gts: &CategoryGroundTruth,
    iou_threshold: f64,
) -> PrfResult {
    let n_gt: usize = gts.values().map(Vec::len).sum();
    if dets.is_empty() {
        return PrfResult {
            recall: 0.0,
            precision: 0.0,
            f_measure: 0.0,
            threshold: f64::INFINITY,
        };
    }
    let order = score_order(dets);
    let hits = greedy_match(dets, gts, iou_threshold);
    let mut best = PrfResult {
        recall: 0.0,
        precision: 0.0,
        f_measure: 0.0,
        threshold: f64::INFINITY,
    };
    let mut best_f = f64::NEG_INFINITY;
    let mut tp = 0usize;
    for (pos, (&idx, hit)) in order.iter().zip(&hits).enumerate() {
        if *hit {
            tp += 1;
        }
        let threshold = dets[idx].score;
        // a cutoff at this score keeps every detection scoring >= it; skip
        // positions inside a tie group
        if pos + 1 < order.len() && dets[order[pos + 1]].score == threshold {
            continue;
        }
        let kept = pos + 1;
        let precision = tp as f64 / kept as f64;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if f > best_f {
            best_f = f;
            best = PrfResult {
                recall,
                precision,
                f_measure: f,
                threshold,
            };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(page: &str, category: Category, score: f64, b: [f64; 4]) -> EvalDetection {
        EvalDetection {
            page_id: page.into(),
            category,
            score,
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    fn gts_one_page(boxes: &[[f64; 4]]) -> CategoryGroundTruth {
        let mut gts = CategoryGroundTruth::new();
        gts.insert(
            "p0".into(),
            boxes
                .iter()
                .map(|b| BBox::new(b[0], b[1], b[2], b[3]).unwrap())
                .collect(),
        );
        gts
    }

    #[test]
    fn perfect_detection_is_ap_one() {
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0]]);
        let dets = vec![det("p0", Category::Frame, 0.9, [0.0, 0.0, 100.0, 100.0])];
        let ap = average_precision(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn below_threshold_detection_is_ap_zero() {
        // IoU 0.3 < 0.5
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0]]);
        let dets = vec![det("p0", Category::Frame, 0.9, [0.0, 0.0, 100.0, 30.0])];
        let ap = average_precision(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(ap, Some(0.0));
    }

    #[test]
    fn no_ground_truth_is_undefined() {
        let gts = CategoryGroundTruth::new();
        let dets = vec![det("p0", Category::Frame, 0.9, [0.0, 0.0, 1.0, 1.0])];
        let ap = average_precision(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(ap, None);
    }

    #[test]
    fn late_false_positive_never_raises_ap() {
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0], [200.0, 0.0, 300.0, 100.0]]);
        let mut dets = vec![
            det("p0", Category::Frame, 0.9, [0.0, 0.0, 100.0, 100.0]),
            det("p0", Category::Frame, 0.7, [200.0, 0.0, 300.0, 100.0]),
        ];
        let cfg = EvalConfig::default();
        let base = average_precision(&dets, &gts, &cfg).unwrap().unwrap();
        dets.push(det("p0", Category::Frame, 0.1, [500.0, 500.0, 600.0, 600.0]));
        let with_fp = average_precision(&dets, &gts, &cfg).unwrap().unwrap();
        assert!(with_fp <= base);
    }

    #[test]
    fn duplicate_detections_count_once() {
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0]]);
        let dets = vec![
            det("p0", Category::Frame, 0.9, [0.0, 0.0, 100.0, 100.0]),
            det("p0", Category::Frame, 0.8, [1.0, 0.0, 100.0, 100.0]),
        ];
        let curve_hits = greedy_match(&dets, &gts, 0.5);
        assert_eq!(curve_hits, vec![true, false]);
    }

    #[test]
    fn eleven_point_perfect_curve() {
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0]]);
        let dets = vec![det("p0", Category::Frame, 0.9, [0.0, 0.0, 100.0, 100.0])];
        let cfg = EvalConfig {
            interpolation: Interpolation::ElevenPoint,
            ..EvalConfig::default()
        };
        assert_eq!(average_precision(&dets, &gts, &cfg).unwrap(), Some(1.0));
    }

    #[test]
    fn prf_perfect_single_detection() {
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0]]);
        let dets = vec![det("p0", Category::Frame, 0.9, [0.0, 0.0, 100.0, 100.0])];
        let prf = prf_at_best_threshold(&dets, &gts, 0.5);
        assert_eq!((prf.recall, prf.precision, prf.f_measure), (1.0, 1.0, 1.0));
        assert_eq!(prf.threshold, 0.9);
    }

    #[test]
    fn prf_drops_low_scoring_false_positive() {
        // one TP at .9 and one FP at .5 over one gt: the best cutoff keeps
        // only the TP
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0]]);
        let dets = vec![
            det("p0", Category::Frame, 0.9, [0.0, 0.0, 100.0, 100.0]),
            det("p0", Category::Frame, 0.5, [500.0, 500.0, 600.0, 600.0]),
        ];
        let prf = prf_at_best_threshold(&dets, &gts, 0.5);
        assert_eq!(prf.f_measure, 1.0);
        assert!(prf.threshold > 0.5 && prf.threshold <= 0.9);
    }

    #[test]
    fn prf_without_detections() {
        let gts = gts_one_page(&[[0.0, 0.0, 100.0, 100.0]]);
        let prf = prf_at_best_threshold(&[], &gts, 0.5);
        assert_eq!((prf.recall, prf.precision, prf.f_measure), (0.0, 0.0, 0.0));
        assert!(prf.threshold.is_infinite());
    }

    #[test]
    fn per_volume_breakdown_splits_by_volume() {
        use crate::annotation::{AnnotatedObject, AnnotationCorpus, Page, Volume};

        let object = |category, b: [f64; 4]| AnnotatedObject {
            category,
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            character_name: None,
            text_content: None,
        };
        let volume = |title: &str, page: &str, hit: bool| Volume {
            title: title.into(),
            genre: None,
            pages: vec![Page {
                page_id: page.into(),
                width: 500.0,
                height: 500.0,
                irregular: false,
                objects: vec![object(
                    Category::Frame,
                    if hit { [0.0, 0.0, 100.0, 100.0] } else { [200.0, 200.0, 400.0, 400.0] },
                )],
            }],
        };
        let corpus = AnnotationCorpus::new(vec![
            volume("Hit", "a", true),
            volume("Miss", "b", false),
        ]);
        // the one detection matches volume Hit's frame only
        let dets = vec![det("a", Category::Frame, 0.9, [0.0, 0.0, 100.0, 100.0])];
        let result = mean_ap(&dets, &corpus, &EvalConfig::default(), true).unwrap();
        let volumes = result.per_volume.unwrap();
        assert_eq!(volumes.len(), 2);
        assert_eq!(volumes[0].title, "Hit");
        assert_eq!(volumes[0].per_category[0], Some(1.0));
        assert_eq!(volumes[0].pages, 1);
        assert_eq!(volumes[1].per_category[0], Some(0.0));
        // whole-corpus frame AP: one TP over two gts, recall caps at 0.5
        assert_eq!(result.per_category[0], Some(0.5));
    }

    #[test]
    fn detection_jsonl_round_trip() {
        let d = det("page-7", Category::Face, 0.42, [1.0, 2.0, 3.5, 4.5]);
        let line = serde_json::to_string(&d).unwrap();
        assert!(line.contains("\"category\":\"face\""));
        assert!(line.contains("\"box\":[1.0,2.0,3.5,4.5]"));
        let back: EvalDetection = serde_json::from_str(&line).unwrap();
        assert_eq!(back, d);
    }
}
