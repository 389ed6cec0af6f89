//! Foreground scoring, per-class threshold calibration and proposal filtering.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Cube, Frame};
use crate::ingest::{MaskFrame, RowRuns};

/// An 8-bit grayscale frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub video_id: String,
    pub frame: Frame,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

/// Baseline frame-difference segmentation against a running per-pixel median.
///
/// A pixel is foreground when it differs from the median of the previous
/// `history` frames of the same video by more than `diff_threshold`. The first
/// frame of every video is all background.
pub fn frame_diff_segment(frames: &[GrayFrame], diff_threshold: u8, history: usize) -> Result<Vec<MaskFrame>> {
    let history = history.max(1);
    let mut state: HashMap<&str, ((u32, u32), VecDeque<&[u8]>)> = HashMap::new();
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let cells = f.width as usize * f.height as usize;
        if f.pixels.len() != cells {
            return Err(Error::Shape(format!(
                "frame {} has {} pixels, expected {}x{}",
                f.frame,
                f.pixels.len(),
                f.width,
                f.height
            )));
        }
        let (size, past) = state
            .entry(f.video_id.as_str())
            .or_insert_with(|| ((f.width, f.height), VecDeque::new()));
        if *size != (f.width, f.height) {
            return Err(Error::SizeMismatch {
                expected: *size,
                got: (f.width, f.height),
            });
        }
        let mut raster = vec![false; cells];
        if !past.is_empty() {
            let mut samples = Vec::with_capacity(past.len());
            for (i, px) in raster.iter_mut().enumerate() {
                samples.clear();
                samples.extend(past.iter().map(|p| p[i]));
                samples.sort_unstable();
                let median = samples[(samples.len() - 1) / 2];
                *px = f.pixels[i].abs_diff(median) > diff_threshold;
            }
        }
        out.push(MaskFrame::from_raster(f.video_id.clone(), f.frame, f.width, f.height, &raster)?);
        past.push_back(&f.pixels);
        if past.len() > history {
            past.pop_front();
        }
    }
    Ok(out)
}

/// Foreground masks indexed by video and frame.
#[derive(Debug, Default, Clone)]
pub struct ForegroundIndex {
    videos: HashMap<String, BTreeMap<Frame, RowRuns>>,
}

impl ForegroundIndex {
    pub fn new<'a>(masks: impl IntoIterator<Item = &'a MaskFrame>) -> Self {
        let mut videos: HashMap<String, BTreeMap<Frame, RowRuns>> = HashMap::new();
        for m in masks {
            videos
                .entry(m.video_id.clone())
                .or_default()
                .insert(m.frame, RowRuns::from_mask(m));
        }
        ForegroundIndex { videos }
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    fn frames(&self, video: &str, t0: Frame, t1: Frame) -> impl Iterator<Item = &RowRuns> {
        self.videos
            .get(video)
            .into_iter()
            .flat_map(move |m| m.range(t0..t1).map(|(_, r)| r))
    }
}

/// Integer cells `[c0, c1) x [r0, r1)` lying fully inside the box. Boxes too
/// thin to contain a whole cell fall back to the cells they touch.
fn cell_span(lo: f64, hi: f64) -> (u32, u32) {
    let (a, b) = (lo.ceil(), hi.floor());
    let (a, b) = if a < b { (a, b) } else { (lo.floor(), hi.ceil()) };
    (a.max(0.0) as u32, b.max(0.0) as u32)
}

/// Fraction of foreground cells inside a box, pooled over the given masks.
fn mean_foreground<'a>(bbox: &BBox, masks: impl Iterator<Item = &'a RowRuns>) -> Option<f64> {
    let (c0, c1) = cell_span(bbox.x0, bbox.x1);
    let (r0, r1) = cell_span(bbox.y0, bbox.y1);
    let mut fg = 0u64;
    let mut total = 0u64;
    let mut seen = false;
    for m in masks {
        seen = true;
        let (cc1, rr1) = (c1.min(m.width()), r1.min(m.height()));
        if c0 >= cc1 || r0 >= rr1 {
            continue;
        }
        total += u64::from(cc1 - c0) * u64::from(rr1 - r0);
        fg += m.count(c0, cc1, r0, rr1);
    }
    if !seen {
        return None;
    }
    Some(if total == 0 { 0.0 } else { fg as f64 / total as f64 })
}

/// Mean mask value inside the cube over every mask frame in `[t0, t1)`.
pub fn foreground_score(cube: &Cube, masks: &ForegroundIndex) -> Result<f64> {
    mean_foreground(&cube.bbox, masks.frames(&cube.video_id, cube.t0, cube.t1)).ok_or_else(|| {
        Error::MissingMasks {
            video_id: cube.video_id.clone(),
            t0: cube.t0,
            t1: cube.t1,
        }
    })
}

/// Fills in `fg_score` on every cube.
pub fn score_foreground(cubes: &mut [Cube], masks: &ForegroundIndex) -> Result<()> {
    for c in cubes.iter_mut() {
        c.fg_score = Some(foreground_score(c, masks)?);
    }
    Ok(())
}

/// Foreground threshold for one object class. `None` keeps everything.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ForegroundThreshold(pub Option<f64>);

impl ForegroundThreshold {
    pub const KEEP_ALL: ForegroundThreshold = ForegroundThreshold(None);

    pub fn keeps(&self, score: f64) -> bool {
        match self.0 {
            None => true,
            Some(t) => score > t,
        }
    }
}

/// k-th smallest positive score with `k = floor(p_pos * N)`. Filtering with
/// `f <= F_c` then removes at most `k` positives when scores are distinct.
pub fn calibrate_class_threshold(positive_scores: &[f64], p_pos: f64) -> ForegroundThreshold {
    let n = positive_scores.len();
    // The epsilon absorbs representation error in products like 0.29 * 100.
    let k = ((p_pos * n as f64) + 1e-9).floor() as usize;
    if k == 0 || n == 0 {
        return ForegroundThreshold::KEEP_ALL;
    }
    let mut sorted = positive_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    ForegroundThreshold(Some(sorted[k.min(n) - 1]))
}

/// Per-object-class thresholds from `(object class, foreground score)` pairs
/// of positive proposals. Every class in `classes` gets an entry.
pub fn calibrate_threshold<'a>(
    positives: impl IntoIterator<Item = (&'a str, f64)>,
    classes: &[String],
    p_pos: f64,
) -> BTreeMap<String, ForegroundThreshold> {
    let mut by_class: BTreeMap<String, Vec<f64>> =
        classes.iter().map(|c| (c.clone(), Vec::new())).collect();
    for (class, score) in positives {
        by_class.entry(class.to_string()).or_default().push(score);
    }
    by_class
        .into_iter()
        .map(|(c, scores)| {
            let t = calibrate_class_threshold(&scores, p_pos);
            (c, t)
        })
        .collect()
}

/// Keeps cubes whose foreground score exceeds their class threshold.
pub fn filter_proposals(cubes: &[Cube], thresholds: &BTreeMap<String, ForegroundThreshold>) -> Result<Vec<Cube>> {
    let mut kept = Vec::with_capacity(cubes.len());
    for c in cubes {
        let t = thresholds
            .get(&c.object_class)
            .ok_or_else(|| Error::MissingThreshold(c.object_class.clone()))?;
        let f = c.fg_score.ok_or_else(|| Error::MissingForegroundScore {
            video_id: c.video_id.clone(),
            t0: c.t0,
            t1: c.t1,
        })?;
        if t.keeps(f) {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}
