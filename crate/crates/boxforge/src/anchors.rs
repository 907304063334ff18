//! The SSD300 anchor grid: a fixed set of K = 8732 reference boxes tiled
//! over six square feature maps, plus the per-category replication used by
//! the forked detector head and the parameter accounting for both heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Architecture constants of the anchor grid.
///
/// `k` holds the per-map anchor-shape counts, `g` the per-map grid sizes;
/// the total anchor count is `K = sum(k[i] * g[i]^2)`. `scales[i]` is the
/// `[size, next_size]` pair for map `i` in normalized coordinates; shape
/// `j` of a map is, in declared order: the `size` square, the
/// `sqrt(size * next_size)` square, then one box per entry of
/// `aspect_ratios[i]`, so `k[i] = 2 + aspect_ratios[i].len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Number of feature maps.
    #[serde(rename = "F")]
    pub feature_maps: usize,
    /// Anchor shapes per feature-map cell.
    pub k: Vec<usize>,
    /// Grid size (cells per side) of each feature map.
    pub g: Vec<usize>,
    /// Category count.
    #[serde(rename = "C")]
    pub categories: usize,
    /// Per-map `[size, next_size]` in normalized coordinates.
    pub scales: Vec<[f64; 2]>,
    /// Per-map aspect ratios beyond the two square shapes.
    pub aspect_ratios: Vec<Vec<f64>>,
    /// Center and size variances for offset encoding.
    pub variances: [f64; 2],
}

impl DetectorSpec {
    /// Total anchor count `K`.
    pub fn total_anchors(&self) -> usize {
        self.k.iter().zip(&self.g).map(|(k, g)| k * g * g).sum()
    }

    /// Anchor count of feature map `i`.
    pub fn anchors_in_map(&self, i: usize) -> usize {
        self.k[i] * self.g[i] * self.g[i]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_maps;
        if self.k.len() != f
            || self.g.len() != f
            || self.scales.len() != f
            || self.aspect_ratios.len() != f
        {
            return Err(Error::validation(format!(
                "sequence lengths must all equal F={f}: k={}, g={}, scales={}, aspect_ratios={}",
                self.k.len(),
                self.g.len(),
                self.scales.len(),
                self.aspect_ratios.len()
            )));
        }
        if self.categories == 0 {
            return Err(Error::validation("category count must be positive"));
        }
        for (i, (k, ratios)) in self.k.iter().zip(&self.aspect_ratios).enumerate() {
            if *k != 2 + ratios.len() {
                return Err(Error::validation(format!(
                    "map {i}: k={k} but 2 square shapes + {} ratios were declared",
                    ratios.len()
                )));
            }
        }
        for (i, g) in self.g.iter().enumerate() {
            if *g == 0 {
                return Err(Error::validation(format!("map {i}: grid size must be positive")));
            }
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s[0] <= 0.0 || s[1] <= 0.0 {
                return Err(Error::validation(format!("map {i}: scales must be positive")));
            }
        }
        if self.variances[0] <= 0.0 || self.variances[1] <= 0.0 {
            return Err(Error::validation("variances must be positive"));
        }
        Ok(())
    }
}

/// The canonical SSD300 grid: six maps, k = (4,6,6,6,4,4),
/// g = (38,19,10,5,3,1), four categories, and the PASCAL-VOC scale ladder
/// 30..315 over a 300-pixel input.
pub fn canonical_spec() -> DetectorSpec {
    let sizes = [30.0, 60.0, 111.0, 162.0, 213.0, 264.0, 315.0];
    let scales = (0..6)
        .map(|i| [sizes[i] / 300.0, sizes[i + 1] / 300.0])
        .collect();
    DetectorSpec {
        feature_maps: 6,
        k: vec![4, 6, 6, 6, 4, 4],
        g: vec![38, 19, 10, 5, 3, 1],
        categories: 4,
        scales,
        aspect_ratios: vec![
            vec![2.0, 0.5],
            vec![2.0, 0.5, 3.0, 1.0 / 3.0],
            vec![2.0, 0.5, 3.0, 1.0 / 3.0],
            vec![2.0, 0.5, 3.0, 1.0 / 3.0],
            vec![2.0, 0.5],
            vec![2.0, 0.5],
        ],
        variances: [0.1, 0.2],
    }
}

/// The full anchor grid in normalized coordinates: feature maps in order,
/// cells row-major within a map, shapes in declared order within a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<BBox>,
    /// Start index of each feature map's block.
    pub layer_offsets: Vec<usize>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// C logical replicas of one anchor grid; replica `c` serves only category
/// `c`. The geometry is stored once since the replicas are identical.
#[derive(Debug, Clone)]
pub struct ForkedAnchorSet {
    pub base: AnchorSet,
    pub categories: usize,
}

impl ForkedAnchorSet {
    pub fn new(base: AnchorSet, categories: usize) -> Self {
        ForkedAnchorSet { base, categories }
    }
}

/// Tiles the anchor shapes over every feature map of `spec`.
///
/// Cell `(row, col)` of map `i` centers its anchors at
/// `((col + 0.5) / g[i], (row + 0.5) / g[i])`; all coordinates are clipped
/// to the unit square.
pub fn generate_anchors(spec: &DetectorSpec) -> Result<AnchorSet> {
    spec.validate()?;
    let mut anchors = Vec::with_capacity(spec.total_anchors());
    let mut layer_offsets = Vec::with_capacity(spec.feature_maps);
    for i in 0..spec.feature_maps {
        layer_offsets.push(anchors.len());
        let g = spec.g[i];
        let shapes = cell_shapes(spec, i);
        for row in 0..g {
            for col in 0..g {
                let cx = (col as f64 + 0.5) / g as f64;
                let cy = (row as f64 + 0.5) / g as f64;
                for &(w, h) in &shapes {
                    anchors.push(BBox::from_center_size(cx, cy, w, h).clip_unit());
                }
            }
        }
    }
    Ok(AnchorSet {
        anchors,
        layer_offsets,
    })
}

/// `(width, height)` of each anchor shape for feature map `i`.
fn cell_shapes(spec: &DetectorSpec, i: usize) -> Vec<(f64, f64)> {
    let [s, s_next] = spec.scales[i];
    let mut shapes = vec![(s, s), ((s * s_next).sqrt(), (s * s_next).sqrt())];
    for &r in &spec.aspect_ratios[i] {
        shapes.push((s * r.sqrt(), s / r.sqrt()));
    }
    shapes
}

/// Which detection head the parameter count describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// One shared head: `k * (4 + (C+1))` output channels per map.
    Baseline,
    /// One head per category: `k * (4 + 1)` output channels per map each.
    Fork,
    /// Replicating the entire baseline network C times.
    NaiveReplication,
}

struct ConvLayer {
    kernel: usize,
    in_ch: usize,
    out_ch: usize,
}

impl ConvLayer {
    fn params(&self) -> u64 {
        (self.kernel * self.kernel * self.in_ch * self.out_ch + self.out_ch) as u64
    }
}

/// Input channel count of each detection-head source map.
const HEAD_SOURCE_CHANNELS: [usize; 6] = [512, 1024, 512, 256, 256, 256];

/// VGG-16 through conv5_3, the converted fc6/fc7 convolutions, and the
/// extra feature layers of SSD300.
fn backbone_layers() -> Vec<ConvLayer> {
    let conv3 = |in_ch, out_ch| ConvLayer {
        kernel: 3,
        in_ch,
        out_ch,
    };
    let conv1 = |in_ch, out_ch| ConvLayer {
        kernel: 1,
        in_ch,
        out_ch,
    };
    vec![
        // VGG-16 conv1_1 .. conv5_3
        conv3(3, 64),
        conv3(64, 64),
        conv3(64, 128),
        conv3(128, 128),
        conv3(128, 256),
        conv3(256, 256),
        conv3(256, 256),
        conv3(256, 512),
        conv3(512, 512),
        conv3(512, 512),
        conv3(512, 512),
        conv3(512, 512),
        conv3(512, 512),
        // fc6/fc7 converted to convolutions
        conv3(512, 1024),
        conv1(1024, 1024),
        // extra feature layers conv8_1 .. conv11_2
        conv1(1024, 256),
        conv3(256, 512),
        conv1(512, 128),
        conv3(128, 256),
        conv1(256, 128),
        conv3(128, 256),
        conv1(256, 128),
        conv3(128, 256),
    ]
}

/// Weight-plus-bias count for the requested head on top of the shared
/// SSD300 backbone. The canonical spec lands near 24.1M for the baseline
/// head and 25.6M for the fork; naive replication is exactly `C` baselines.
pub fn count_parameters(spec: &DetectorSpec, head: HeadKind) -> Result<u64> {
    spec.validate()?;
    if spec.feature_maps != HEAD_SOURCE_CHANNELS.len() {
        return Err(Error::validation(format!(
            "parameter table is defined for {} source maps, spec has {}",
            HEAD_SOURCE_CHANNELS.len(),
            spec.feature_maps
        )));
    }
    let backbone: u64 = backbone_layers().iter().map(ConvLayer::params).sum();
    let c = spec.categories;
    let head_params = |out_per_anchor: usize, heads: usize| -> u64 {
        HEAD_SOURCE_CHANNELS
            .iter()
            .zip(&spec.k)
            .map(|(&ch, &k)| {
                let head = ConvLayer {
                    kernel: 3,
                    in_ch: ch,
                    out_ch: k * out_per_anchor,
                };
                head.params() * heads as u64
            })
            .sum()
    };
    Ok(match head {
        // one 3x3 head per map: 4 offsets + C+1 softmax classes per anchor
        HeadKind::Baseline => backbone + head_params(4 + (c + 1), 1),
        // C heads per map: 4 offsets + 1 sigmoid logit per anchor each
        HeadKind::Fork => backbone + head_params(4 + 1, c),
        HeadKind::NaiveReplication => {
            c as u64 * (backbone + head_params(4 + (c + 1), 1))
        }
    })
}
