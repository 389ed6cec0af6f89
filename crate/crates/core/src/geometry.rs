//! Box and cube algebra.
//!
//! Boxes are half-open, real-valued pixel rectangles `[x0, x1) x [y0, y1)`.
//! Frame indices are `u32` starting at 0 and temporal windows are half-open
//! `[t0, t1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::LabelOutcome;

pub type Frame = u32;
pub type TrackId = u64;

/// A tube is an ordered list of per-frame boxes, at most one per frame.
pub type Tube = Vec<(Frame, BBox)>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BBox::new(raw.x0, raw.x1, raw.y0, raw.y1)
    }
}

impl BBox {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let finite = [x0, x1, y0, y1].iter().all(|v| v.is_finite());
        if !finite || x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidBox { x0, x1, y0, y1 });
        }
        Ok(BBox { x0, x1, y0, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.x1 >= other.x1 && self.y0 <= other.y0 && self.y1 >= other.y1
    }

    /// Area of the overlap, zero when the boxes only touch or are disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        bbox_iou(self, other)
    }
}

pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest axis-aligned box containing both.
pub fn bbox_union(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x0: a.x0.min(b.x0),
        x1: a.x1.max(b.x1),
        y0: a.y0.min(b.y0),
        y1: a.y1.max(b.y1),
    }
}

/// Overlap box, `None` when the overlap has zero area.
pub fn bbox_intersection(a: &BBox, b: &BBox) -> Option<BBox> {
    let x0 = a.x0.max(b.x0);
    let x1 = a.x1.min(b.x1);
    let y0 = a.y0.max(b.y0);
    let y1 = a.y1.min(b.y1);
    if x0 < x1 && y0 < y1 {
        Some(BBox { x0, x1, y0, y1 })
    } else {
        None
    }
}

/// Scales each side by `1 + rate` about the box center, then clamps to the frame.
pub fn bbox_enlarge(b: &BBox, rate: f64, width: f64, height: f64) -> BBox {
    let (cx, cy) = b.center();
    let half_w = b.width() * (1.0 + rate) / 2.0;
    let half_h = b.height() * (1.0 + rate) / 2.0;
    let mut out = BBox {
        x0: (cx - half_w).max(0.0),
        x1: (cx + half_w).min(width),
        y0: (cy - half_h).max(0.0),
        y1: (cy + half_h).min(height),
    };
    // A box lying entirely outside the frame cannot be clamped into a valid
    // one; keep the unclamped side in that case.
    if out.x0 >= out.x1 {
        out.x0 = cx - half_w;
        out.x1 = cx + half_w;
    }
    if out.y0 >= out.y1 {
        out.y0 = cy - half_h;
        out.y1 = cy + half_h;
    }
    out
}

/// Fraction of the reference box covered by the prediction.
pub fn coverage(pred: &BBox, reference: &BBox) -> f64 {
    (pred.intersection_area(reference) / reference.area()).clamp(0.0, 1.0)
}

/// Frame-summed intersection over frame-summed union.
///
/// Both tubes must be sorted by frame with at most one box per frame. A frame
/// present in only one tube contributes its full area to the denominator.
pub fn tube_iou_3d(a: &[(Frame, BBox)], b: &[(Frame, BBox)]) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::EmptyTubes);
    }
    let (mut i, mut j) = (0, 0);
    let mut inter = 0.0;
    let mut union = 0.0;
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(fa, ba)), Some(&(fb, bb))) if fa == fb => {
                let overlap = ba.intersection_area(&bb);
                inter += overlap;
                union += ba.area() + bb.area() - overlap;
                i += 1;
                j += 1;
            }
            (Some(&(fa, ba)), Some(&(fb, _))) if fa < fb => {
                union += ba.area();
                i += 1;
            }
            (Some(_), Some(&(_, bb))) => {
                union += bb.area();
                j += 1;
            }
            (Some(&(_, ba)), None) => {
                union += ba.area();
                i += 1;
            }
            (None, Some(&(_, bb))) => {
                union += bb.area();
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Length of the overlap between two half-open windows.
pub fn temporal_overlap(a: (Frame, Frame), b: (Frame, Frame)) -> u32 {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

pub fn temporal_iou(a: (Frame, Frame), b: (Frame, Frame)) -> f64 {
    let inter = temporal_overlap(a, b);
    if inter == 0 {
        return 0.0;
    }
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    f64::from(inter) / f64::from(union)
}

/// A cube proposal: a fixed box over a fixed temporal window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub video_id: String,
    pub t0: Frame,
    pub t1: Frame,
    pub bbox: BBox,
    #[serde(default)]
    pub seed_track: Option<TrackId>,
    pub object_class: String,
    #[serde(default)]
    pub fg_score: Option<f64>,
    #[serde(default)]
    pub labels: Option<LabelOutcome>,
}

impl Cube {
    pub fn new(video_id: impl Into<String>, t0: Frame, t1: Frame, bbox: BBox, object_class: impl Into<String>) -> Self {
        Cube {
            video_id: video_id.into(),
            t0,
            t1,
            bbox,
            seed_track: None,
            object_class: object_class.into(),
            fg_score: None,
            labels: None,
        }
    }

    pub fn duration(&self) -> u32 {
        self.t1 - self.t0
    }

    pub fn window(&self) -> (Frame, Frame) {
        (self.t0, self.t1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t0 >= self.t1 {
            return Err(Error::InvalidRecord(format!(
                "cube window [{}, {}) is empty",
                self.t0, self.t1
            )));
        }
        if let Some(f) = self.fg_score {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidRecord(format!(
                    "foreground score {f} outside [0, 1]"
                )));
            }
        }
        if let Some(LabelOutcome::Positive(classes)) = &self.labels {
            if classes.is_empty() {
                return Err(Error::InvalidRecord("empty positive label set".into()));
            }
        }
        Ok(())
    }

    /// Join key used to match external score files against proposals.
    pub fn key(&self) -> CubeKey {
        CubeKey {
            video_id: self.video_id.clone(),
            t0: self.t0,
            t1: self.t1,
            seed_track: self.seed_track,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeKey {
    pub video_id: String,
    pub t0: Frame,
    pub t1: Frame,
    pub seed_track: Option<TrackId>,
}

impl std::fmt::Display for CubeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}, {})", self.video_id, self.t0, self.t1)?;
        match self.seed_track {
            Some(t) => write!(f, "#{t}"),
            None => write!(f, "#-"),
        }
    }
}
