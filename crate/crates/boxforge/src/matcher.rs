//! Ground-truth to anchor assignment.
//!
//! Standard matching runs every object of a page against one shared anchor
//! grid, so objects of similar shape and position compete for the same
//! anchors and one of them can end up with none. Forked matching runs each
//! category against its own replica of the grid, which removes
//! cross-category competition entirely. [`conflict_report`] quantifies the
//! difference over a corpus.
//!
//! The assignment rules are deterministic:
//!
//! 1. every anchor takes the ground truth with the highest IoU at or above
//!    the threshold (ties: lower gt id);
//! 2. with `force_best_match`, every ground truth then claims its single
//!    best-IoU anchor (ties: lower anchor index), overriding any threshold
//!    assignment on that anchor; competing claims on one anchor resolve by
//!    higher IoU, then lower gt id. A ground truth with zero IoU against
//!    every anchor claims nothing.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorSet, ForkedAnchorSet};
use crate::annotation::{AnnotationCorpus, Category, Page};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// One annotated object in normalized coordinates, as seen by the matcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Category index in `[0, C)`.
    pub category: usize,
    /// Stable ordinal within the page; tie-breaks refer to this value.
    pub id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub iou_threshold: f64,
    pub force_best_match: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            iou_threshold: 0.5,
            force_best_match: true,
        }
    }
}

impl MatcherConfig {
    fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::validation(format!(
                "iou_threshold must lie in (0, 1), got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Anchor-to-ground-truth assignment table.
///
/// `slots` holds one entry per anchor slot: `None` for background, or the
/// id of the assigned ground truth. Standard matching has one replica;
/// forked matching has `C`, stored replica-major so replica `c` occupies
/// `slots[c * anchors_per_replica ..][.. anchors_per_replica]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub slots: Vec<Option<usize>>,
    pub replicas: usize,
    pub anchors_per_replica: usize,
    /// N+ per category: anchor slots assigned to objects of that category.
    pub positives_per_category: Vec<usize>,
    /// Ids of ground truths that received no anchor slot.
    pub unassigned_gt: BTreeSet<usize>,
}

impl MatchResult {
    pub fn replica_slots(&self, replica: usize) -> &[Option<usize>] {
        let k = self.anchors_per_replica;
        &self.slots[replica * k..(replica + 1) * k]
    }

    pub fn total_positives(&self) -> usize {
        self.positives_per_category.iter().sum()
    }
}

fn validate_gts(gts: &[GtObject], categories: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for gt in gts {
        if gt.category >= categories {
            return Err(Error::validation(format!(
                "gt {} has category {} but only {categories} categories exist",
                gt.id, gt.category
            )));
        }
        if !seen.insert(gt.id) {
            return Err(Error::validation(format!("duplicate gt id {}", gt.id)));
        }
    }
    Ok(())
}

/// Core assignment over one anchor grid. Returns one slot per anchor.
fn assign_slots(gts: &[GtObject], anchors: &AnchorSet, cfg: &MatcherConfig) -> Vec<Option<usize>> {
    let mut slots: Vec<Option<usize>> = vec![None; anchors.len()];

    // threshold pass: per anchor, best gt with IoU >= threshold
    for (a_idx, anchor) in anchors.anchors.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None; // (iou, gt id)
        for gt in gts {
            let v = iou(&gt.bbox, anchor);
            if v < cfg.iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bv, bid)) => v > bv || (v == bv && gt.id < bid),
            };
            if better {
                best = Some((v, gt.id));
            }
        }
        slots[a_idx] = best.map(|(_, id)| id);
    }

    if cfg.force_best_match {
        // best-match claims; strongest claim per anchor wins
        let mut claims: Vec<Option<(f64, usize)>> = vec![None; anchors.len()];
        for gt in gts {
            let mut best: Option<(f64, usize)> = None; // (iou, anchor index)
            for (a_idx, anchor) in anchors.anchors.iter().enumerate() {
                let v = iou(&gt.bbox, anchor);
                let better = match best {
                    None => v > 0.0,
                    Some((bv, _)) => v > bv,
                };
                if better {
                    best = Some((v, a_idx));
                }
            }
            if let Some((v, a_idx)) = best {
                let stronger = match claims[a_idx] {
                    None => true,
                    Some((cv, cid)) => v > cv || (v == cv && gt.id < cid),
                };
                if stronger {
                    claims[a_idx] = Some((v, gt.id));
                }
            }
        }
        for (slot, claim) in slots.iter_mut().zip(claims) {
            if let Some((_, id)) = claim {
                *slot = Some(id);
            }
        }
    }

    slots
}

fn tally(
    slots: Vec<Option<usize>>,
    gts: &[GtObject],
    replicas: usize,
    anchors_per_replica: usize,
    categories: usize,
) -> MatchResult {
    let mut positives = vec![0usize; categories];
    let mut assigned: BTreeSet<usize> = BTreeSet::new();
    for slot in slots.iter().flatten() {
        let gt = gts
            .iter()
            .find(|g| g.id == *slot)
            .expect("slot refers to a known gt");
        positives[gt.category] += 1;
        assigned.insert(*slot);
    }
    let unassigned_gt = gts
        .iter()
        .map(|g| g.id)
        .filter(|id| !assigned.contains(id))
        .collect();
    MatchResult {
        slots,
        replicas,
        anchors_per_replica,
        positives_per_category: positives,
        unassigned_gt,
    }
}

/// Assigns every ground truth of a page to the shared anchor grid.
pub fn match_standard(
    gts: &[GtObject],
    anchors: &AnchorSet,
    cfg: &MatcherConfig,
    categories: usize,
) -> Result<MatchResult> {
    cfg.validate()?;
    if anchors.is_empty() {
        return Err(Error::validation("anchor set is empty"));
    }
    validate_gts(gts, categories)?;
    let slots = assign_slots(gts, anchors, cfg);
    Ok(tally(slots, gts, 1, anchors.len(), categories))
}

/// Assigns each category's ground truths to its own anchor replica; the
/// per-replica assignments are concatenated replica-major.
pub fn match_forked(
    gts: &[GtObject],
    fork: &ForkedAnchorSet,
    cfg: &MatcherConfig,
) -> Result<MatchResult> {
    cfg.validate()?;
    if fork.base.is_empty() {
        return Err(Error::validation("anchor set is empty"));
    }
    validate_gts(gts, fork.categories)?;
    let k = fork.base.len();
    let mut slots = Vec::with_capacity(fork.categories * k);
    for c in 0..fork.categories {
        let sub: Vec<GtObject> = gts.iter().filter(|g| g.category == c).cloned().collect();
        slots.extend(assign_slots(&sub, &fork.base, cfg));
    }
    Ok(tally(slots, gts, fork.categories, k, fork.categories))
}

/// Unassigned-object counts for one regime.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub n_gt: usize,
    pub n_unassigned: usize,
}

/// Side-by-side page tallies for the standard and forked regimes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageConflict {
    pub page_id: String,
    pub n_gt: usize,
    pub standard_unassigned: usize,
    pub forked_unassigned: usize,
    /// Indexed by category, in category declaration order.
    pub per_category: Vec<CategoryConflict>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryConflict {
    pub category: String,
    pub n_gt: usize,
    pub standard_unassigned: usize,
    pub forked_unassigned: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictReport {
    pub pages: Vec<PageConflict>,
    pub total_gt: usize,
    pub total_standard_unassigned: usize,
    pub total_forked_unassigned: usize,
    pub per_category: Vec<CategoryConflict>,
}

/// Converts a page's objects to normalized matcher inputs. Object ids are
/// their ordinals within the page.
pub fn page_gt_objects(page: &Page) -> Vec<GtObject> {
    page.objects
        .iter()
        .enumerate()
        .map(|(id, obj)| GtObject {
            bbox: BBox {
                x_min: obj.bbox.x_min / page.width,
                y_min: obj.bbox.y_min / page.height,
                x_max: obj.bbox.x_max / page.width,
                y_max: obj.bbox.y_max / page.height,
            },
            category: obj.category.index(),
            id,
        })
        .collect()
}

fn unassigned_by_category(result: &MatchResult, gts: &[GtObject], categories: usize) -> Vec<usize> {
    let mut counts = vec![0usize; categories];
    for id in &result.unassigned_gt {
        let gt = gts.iter().find(|g| g.id == *id).expect("known gt id");
        counts[gt.category] += 1;
    }
    counts
}

/// Runs both regimes over every regular page of the corpus and reports the
/// unassigned counts per page and in aggregate. Pages are processed in
/// parallel; aggregation order is fixed by page order.
pub fn conflict_report(
    corpus: &AnnotationCorpus,
    anchors: &AnchorSet,
    cfg: &MatcherConfig,
) -> Result<ConflictReport> {
    let categories = Category::ALL.len();
    let fork = ForkedAnchorSet::new(anchors.clone(), categories);
    let pages: Vec<(String, Vec<GtObject>)> = corpus
        .volumes
        .iter()
        .flat_map(|v| v.pages.iter().filter(|p| !p.irregular))
        .map(|p| (p.page_id.clone(), page_gt_objects(p)))
        .collect();

    let per_page: Vec<PageConflict> = pages
        .par_iter()
        .map(|(page_id, gts)| -> Result<PageConflict> {
            let std_res = match_standard(gts, anchors, cfg, categories)?;
            let fork_res = match_forked(gts, &fork, cfg)?;
            let std_cat = unassigned_by_category(&std_res, gts, categories);
            let fork_cat = unassigned_by_category(&fork_res, gts, categories);
            let per_category = Category::ALL
                .iter()
                .enumerate()
                .map(|(c, cat)| CategoryConflict {
                    category: cat.name().to_string(),
                    n_gt: gts.iter().filter(|g| g.category == c).count(),
                    standard_unassigned: std_cat[c],
                    forked_unassigned: fork_cat[c],
                })
                .collect();
            Ok(PageConflict {
                page_id: page_id.clone(),
                n_gt: gts.len(),
                standard_unassigned: std_res.unassigned_gt.len(),
                forked_unassigned: fork_res.unassigned_gt.len(),
                per_category,
            })
        })
        .collect::<Result<_>>()?;

    let mut per_category: Vec<CategoryConflict> = Category::ALL
        .iter()
        .map(|cat| CategoryConflict {
            category: cat.name().to_string(),
            ..Default::default()
        })
        .collect();
    for page in &per_page {
        for (total, page_cat) in per_category.iter_mut().zip(&page.per_category) {
            total.n_gt += page_cat.n_gt;
            total.standard_unassigned += page_cat.standard_unassigned;
            total.forked_unassigned += page_cat.forked_unassigned;
        }
    }
    Ok(ConflictReport {
        total_gt: per_page.iter().map(|p| p.n_gt).sum(),
        total_standard_unassigned: per_page.iter().map(|p| p.standard_unassigned).sum(),
        total_forked_unassigned: per_page.iter().map(|p| p.forked_unassigned).sum(),
        pages: per_page,
        per_category,
    })
}
