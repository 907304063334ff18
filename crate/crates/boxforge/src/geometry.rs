//! Axis-aligned box arithmetic: area, IoU, and the offset encoding used
//! between ground-truth boxes and anchors.
//!
//! A [`BBox`] is a plain `(x_min, y_min, x_max, y_max)` rectangle over real
//! coordinates. Annotations use pixels, the anchor grid uses normalized
//! `[0, 1]` coordinates; a box carries no unit tag, so callers keep spaces
//! consistent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle with `x_min <= x_max` and `y_min <= y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Offsets between a box and an anchor in center-size form, divided by the
/// center/size variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedOffsets {
    pub d_cx: f64,
    pub d_cy: f64,
    pub d_w: f64,
    pub d_h: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min <= x_max && y_min <= y_max) {
            return Err(Error::validation(format!(
                "invalid box: ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from center-size form, ordering min/max so the result is
    /// always valid even for negative sizes.
    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let (x0, x1) = (cx - w / 2.0, cx + w / 2.0);
        let (y0, y1) = (cy - h / 2.0, cy + h / 2.0);
        BBox {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    /// `(cx, cy, w, h)` form.
    pub fn center_size(&self) -> (f64, f64, f64, f64) {
        let w = self.x_max - self.x_min;
        let h = self.y_max - self.y_min;
        (self.x_min + w / 2.0, self.y_min + h / 2.0, w, h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Zero width or height.
    pub fn is_degenerate(&self) -> bool {
        self.width() == 0.0 || self.height() == 0.0
    }

    /// Clips the box to the unit square.
    pub fn clip_unit(&self) -> Self {
        BBox {
            x_min: self.x_min.clamp(0.0, 1.0),
            y_min: self.y_min.clamp(0.0, 1.0),
            x_max: self.x_max.clamp(0.0, 1.0),
            y_max: self.y_max.clamp(0.0, 1.0),
        }
    }
}

/// Rectangle area; zero iff the box is degenerate.
pub fn area(b: &BBox) -> f64 {
    (b.x_max - b.x_min) * (b.y_max - b.y_min)
}

/// Intersection-over-union of two boxes. Zero when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Encodes `gt` relative to `anchor` in center-size form:
/// `d_cx = ((g_cx - a_cx) / a_w) / v1`, `d_w = ln(g_w / a_w) / v2`, and
/// likewise for the y/height pair. `(1, 1)` variances turn the scaling off.
///
/// Fails for a degenerate anchor or ground-truth box (the log has no value
/// at zero width or height).
pub fn encode(gt: &BBox, anchor: &BBox, variances: (f64, f64)) -> Result<EncodedOffsets> {
    if anchor.is_degenerate() {
        return Err(Error::domain(format!("degenerate anchor: {anchor:?}")));
    }
    if gt.is_degenerate() {
        return Err(Error::domain(format!(
            "degenerate ground-truth box: {gt:?}"
        )));
    }
    let (a_cx, a_cy, a_w, a_h) = anchor.center_size();
    let (g_cx, g_cy, g_w, g_h) = gt.center_size();
    let (v1, v2) = variances;
    Ok(EncodedOffsets {
        d_cx: ((g_cx - a_cx) / a_w) / v1,
        d_cy: ((g_cy - a_cy) / a_h) / v1,
        d_w: (g_w / a_w).ln() / v2,
        d_h: (g_h / a_h).ln() / v2,
    })
}

/// Exact inverse of [`encode`]: applies the offsets to the anchor and
/// returns the resulting box.
pub fn decode(off: &EncodedOffsets, anchor: &BBox, variances: (f64, f64)) -> BBox {
    let (a_cx, a_cy, a_w, a_h) = anchor.center_size();
    let (v1, v2) = variances;
    let cx = off.d_cx * v1 * a_w + a_cx;
    let cy = off.d_cy * v1 * a_h + a_cy;
    let w = (off.d_w * v2).exp() * a_w;
    let h = (off.d_h * v2).exp() * a_h;
    BBox::from_center_size(cx, cy, w, h)
}
