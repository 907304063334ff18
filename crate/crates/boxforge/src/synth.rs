//! Seed-controlled synthetic corpora and scenes for demos and tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annotation::{AnnotatedObject, AnnotationCorpus, Category, Page, Volume};
use crate::geometry::BBox;
use crate::matcher::GtObject;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A corpus where every page holds a frame and a body with the exact same
/// box. Standard matching must starve one of each pair; forked matching
/// assigns both.
pub fn conflict_corpus(seed: u64, pages: usize) -> AnnotationCorpus {
    let mut rng = rng(seed);
    let (width, height) = (1654.0, 1170.0);
    let pages = (0..pages)
        .map(|i| {
            let w = rng.gen_range(300.0..900.0);
            let h = rng.gen_range(300.0..800.0);
            let x0 = rng.gen_range(0.0..(width - w));
            let y0 = rng.gen_range(0.0..(height - h));
            let bbox = BBox {
                x_min: x0,
                y_min: y0,
                x_max: x0 + w,
                y_max: y0 + h,
            };
            let object = |category| AnnotatedObject {
                category,
                bbox,
                character_name: None,
                text_content: None,
            };
            Page {
                page_id: format!("conflict-{i:03}"),
                width,
                height,
                irregular: false,
                objects: vec![object(Category::Frame), object(Category::Body)],
            }
        })
        .collect();
    AnnotationCorpus::new(vec![Volume {
        title: "SyntheticConflict".into(),
        genre: Some("synthetic".into()),
        pages,
    }])
}

/// A random page scene for matcher testing: up to `max_gts` boxes with
/// random categories. Boxes are normalized and may overlap arbitrarily.
pub fn random_scene(rng: &mut ChaCha8Rng, max_gts: usize, categories: usize) -> Vec<GtObject> {
    let n = rng.gen_range(0..=max_gts);
    (0..n)
        .map(|id| {
            let w = rng.gen_range(0.02..0.6);
            let h = rng.gen_range(0.02..0.6);
            let x0 = rng.gen_range(0.0..(1.0 - w));
            let y0 = rng.gen_range(0.0..(1.0 - h));
            GtObject {
                bbox: BBox {
                    x_min: x0,
                    y_min: y0,
                    x_max: x0 + w,
                    y_max: y0 + h,
                },
                category: rng.gen_range(0..categories),
                id,
            }
        })
        .collect()
}

/// A small random anchor grid: `n x n` cells with one or two shapes each.
pub fn random_anchor_grid(rng: &mut ChaCha8Rng, max_side: usize) -> crate::anchors::AnchorSet {
    let n = rng.gen_range(2..=max_side);
    let shapes = rng.gen_range(1..=2);
    let mut anchors = Vec::new();
    for row in 0..n {
        for col in 0..n {
            let cx = (col as f64 + 0.5) / n as f64;
            let cy = (row as f64 + 0.5) / n as f64;
            for s in 0..shapes {
                let scale = 1.0 / n as f64 * (1.0 + s as f64 * 0.5);
                anchors.push(BBox::from_center_size(cx, cy, scale, scale).clip_unit());
            }
        }
    }
    crate::anchors::AnchorSet {
        anchors,
        layer_offsets: vec![0],
    }
}

/// A random corpus with plausible page structure for round-trip and
/// statistics tests.
pub fn random_corpus(seed: u64, volumes: usize, max_pages: usize) -> AnnotationCorpus {
    let mut rng = rng(seed);
    let volumes = (0..volumes)
        .map(|vi| {
            let n_pages = rng.gen_range(1..=max_pages);
            let pages = (0..n_pages)
                .map(|pi| {
                    let (width, height) = (1654.0, 1170.0);
                    let n_objects = rng.gen_range(0..8);
                    let objects = (0..n_objects)
                        .map(|oi| {
                            let category = Category::ALL[rng.gen_range(0..4)];
                            let w = rng.gen_range(10.0..600.0);
                            let h = rng.gen_range(10.0..500.0);
                            let x0 = rng.gen_range(0.0..(width - w));
                            let y0 = rng.gen_range(0.0..(height - h));
                            AnnotatedObject {
                                category,
                                bbox: BBox {
                                    x_min: x0,
                                    y_min: y0,
                                    x_max: x0 + w,
                                    y_max: y0 + h,
                                },
                                character_name: match category {
                                    // names are volume-scoped, so stats over
                                    // disjoint volume sets stay additive
                                    Category::Face | Category::Body => {
                                        Some(format!("v{vi:02}-chara-{}", rng.gen_range(0..5)))
                                    }
                                    _ => None,
                                },
                                text_content: match category {
                                    Category::Text => Some(format!("line {oi} of page {pi}")),
                                    _ => None,
                                },
                            }
                        })
                        .collect();
                    Page {
                        page_id: format!("v{vi:02}-p{pi:03}"),
                        width,
                        height,
                        irregular: rng.gen_bool(0.1),
                        objects,
                    }
                })
                .collect();
            Volume {
                title: format!("Volume{vi:02}"),
                genre: Some("synthetic".into()),
                pages,
            }
        })
        .collect();
    AnnotationCorpus::new(volumes)
}
