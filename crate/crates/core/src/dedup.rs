//! Overlapping scored cubes to non-overlapping activity instances:
//! split into stride-long segments, merge segments back into duration-long
//! groups, then keep the group holding the best score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_intersection, bbox_iou, bbox_union, BBox, Frame, TrackId, Tube};
use crate::ingest::PipelineConfig;
use crate::scoring::ScoredCube;

/// Spatial IoU needed to chain cubes that carry no track id.
pub const CHAIN_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityInstance {
    pub video_id: String,
    pub activity_class: String,
    pub t0: Frame,
    pub t1: Frame,
    pub bbox: BBox,
    pub score: f64,
    #[serde(default)]
    pub seed_track: Option<TrackId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<Tube>,
}

impl ActivityInstance {
    pub fn window(&self) -> (Frame, Frame) {
        (self.t0, self.t1)
    }

    pub fn duration(&self) -> u32 {
        self.t1 - self.t0
    }

    /// Per-frame boxes: the stored tube, or the box repeated on every frame.
    pub fn frame_tube(&self) -> Tube {
        match &self.tube {
            Some(t) => t.clone(),
            None => (self.t0..self.t1).map(|f| (f, self.bbox)).collect(),
        }
    }

    fn span(&self) -> Span {
        Span {
            t0: self.t0,
            t1: self.t1,
            bbox: self.bbox,
            score: self.score,
        }
    }
}

/// A scored box over a window, for a single activity class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub t0: Frame,
    pub t1: Frame,
    pub bbox: BBox,
    pub score: f64,
}

/// Mean that returns `x` exactly when every value equals `x`.
pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = values.into_iter();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let (mut n, mut offset) = (1usize, 0.0);
    for v in it {
        offset += v - first;
        n += 1;
    }
    first + offset / n as f64
}

/// Step 1: one segment per stride cell covered by at least one cube, scored
/// with the mean of the covering cubes and boxed with their intersection.
///
/// When the covering boxes do not intersect, the box of the cube whose
/// temporal center is nearest the segment's is used.
pub fn split_segments(cubes: &[Span], duration: u32, stride: u32) -> Result<Vec<Span>> {
    for c in cubes {
        if c.t0 % stride != 0 || c.t1 <= c.t0 || c.t1 - c.t0 > duration {
            return Err(Error::OffGrid {
                t0: c.t0,
                t1: c.t1,
                stride,
                duration,
            });
        }
    }
    let mut cells: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, c) in cubes.iter().enumerate() {
        for m in c.t0 / stride..=(c.t1 - 1) / stride {
            cells.entry(m).or_default().push(i);
        }
    }
    Ok(cells
        .into_iter()
        .map(|(m, covering)| {
            let t0 = m * stride;
            let reach = covering.iter().map(|&i| cubes[i].t1).max().unwrap_or(t0 + stride);
            let t1 = (t0 + stride).min(reach);
            let score = mean(covering.iter().map(|&i| cubes[i].score));
            let bbox = covering[1..]
                .iter()
                .try_fold(cubes[covering[0]].bbox, |acc, &i| bbox_intersection(&acc, &cubes[i].bbox))
                .unwrap_or_else(|| {
                    let nearest = covering
                        .iter()
                        .min_by_key(|&&i| (i64::from(cubes[i].t0 + cubes[i].t1) - i64::from(t0 + t1)).abs())
                        .expect("covered cell has a cube");
                    cubes[*nearest].bbox
                });
            Span { t0, t1, bbox, score }
        })
        .collect())
}

/// Step 2: for each offset `g < ratio`, tile the segments from index `g` in
/// runs of `ratio`, merging each run into one cube (mean score, union box).
/// Trailing partial runs keep the segments available. Offsets past the end
/// start at the last segment.
pub fn merge_groups(segments: &[Span], ratio: u32) -> Vec<Vec<Span>> {
    if segments.is_empty() {
        return Vec::new();
    }
    let r = ratio.max(1) as usize;
    (0..r)
        .map(|g| {
            segments[g.min(segments.len() - 1)..]
                .chunks(r)
                .map(|run| Span {
                    t0: run[0].t0,
                    t1: run[run.len() - 1].t1,
                    bbox: run[1..].iter().fold(run[0].bbox, |acc, s| bbox_union(&acc, &s.bbox)),
                    score: mean(run.iter().map(|s| s.score)),
                })
                .collect()
        })
        .collect()
}

/// Step 3: the group containing the highest merged score; ties go to the
/// lowest offset.
pub fn select_group(groups: Vec<Vec<Span>>) -> Vec<Span> {
    let mut best: Option<(usize, f64)> = None;
    for (g, group) in groups.iter().enumerate() {
        for s in group {
            if best.is_none_or(|(_, b)| s.score > b) {
                best = Some((g, s.score));
            }
        }
    }
    match best {
        Some((g, _)) => groups.into_iter().nth(g).unwrap_or_default(),
        None => Vec::new(),
    }
}

/// Splits segments wherever consecutive ones do not abut.
fn contiguous_runs(segments: &[Span]) -> impl Iterator<Item = &[Span]> {
    segments.chunk_by(|a, b| a.t1 == b.t0)
}

/// Split, merge and select over one partition; each contiguous run of
/// segments is deduplicated on its own.
pub fn dedup_spans(cubes: &[Span], duration: u32, stride: u32) -> Result<Vec<Span>> {
    let segments = split_segments(cubes, duration, stride)?;
    let ratio = duration / stride;
    Ok(contiguous_runs(&segments)
        .flat_map(|run| select_group(merge_groups(run, ratio)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct PartKey {
    video_id: String,
    class: String,
    track: Option<TrackId>,
    chain: usize,
}

/// Anything partitioned alongside its span.
trait HasSpan {
    fn span(&self) -> Span;
}

impl HasSpan for Span {
    fn span(&self) -> Span {
        *self
    }
}

impl HasSpan for (Span, usize) {
    fn span(&self) -> Span {
        self.0
    }
}

/// Greedy chaining of track-less spans: each span joins the chain whose tail
/// overlaps or abuts it in time with the best spatial IoU of at least
/// [`CHAIN_IOU`].
fn chain_by_iou<T: HasSpan>(mut items: Vec<T>) -> Vec<Vec<T>> {
    items.sort_by_key(|s| (s.span().t0, s.span().t1));
    let mut chains: Vec<Vec<T>> = Vec::new();
    for item in items {
        let span = item.span();
        let mut best: Option<(usize, f64)> = None;
        for (i, chain) in chains.iter().enumerate() {
            let tail = chain.last().expect("chains are non-empty").span();
            let iou = bbox_iou(&tail.bbox, &span.bbox);
            if tail.t1 >= span.t0 && iou >= CHAIN_IOU && best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        match best {
            Some((i, _)) => chains[i].push(item),
            None => chains.push(vec![item]),
        }
    }
    chains
}

fn partition<T: HasSpan>(items: impl IntoIterator<Item = (String, String, Option<TrackId>, T)>) -> BTreeMap<PartKey, Vec<T>> {
    let mut parts: BTreeMap<PartKey, Vec<T>> = BTreeMap::new();
    let mut loose: BTreeMap<(String, String), Vec<T>> = BTreeMap::new();
    for (video_id, class, track, item) in items {
        match track {
            Some(_) => parts
                .entry(PartKey {
                    video_id,
                    class,
                    track,
                    chain: 0,
                })
                .or_default()
                .push(item),
            None => loose.entry((video_id, class)).or_default().push(item),
        }
    }
    for ((video_id, class), items) in loose {
        for (chain, items) in chain_by_iou(items).into_iter().enumerate() {
            let key = PartKey {
                video_id: video_id.clone(),
                class: class.clone(),
                track: None,
                chain,
            };
            parts.insert(key, items);
        }
    }
    for items in parts.values_mut() {
        items.sort_by_key(|s| (s.span().t0, s.span().t1));
    }
    parts
}

fn instances_from(parts: BTreeMap<PartKey, Vec<Span>>) -> Vec<ActivityInstance> {
    instances_with_tubes(parts.into_iter().map(|(k, spans)| (k, spans.into_iter().map(|s| (s, None)).collect())).collect())
}

fn instances_with_tubes(parts: BTreeMap<PartKey, Vec<(Span, Option<Tube>)>>) -> Vec<ActivityInstance> {
    let mut out: Vec<ActivityInstance> = parts
        .into_iter()
        .flat_map(|(key, spans)| {
            spans.into_iter().map(move |(s, tube)| ActivityInstance {
                video_id: key.video_id.clone(),
                activity_class: key.class.clone(),
                t0: s.t0,
                t1: s.t1,
                bbox: s.bbox,
                score: s.score,
                seed_track: key.track,
                tube,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.video_id, &a.activity_class, a.t0, a.t1, a.seed_track).cmp(&(&b.video_id, &b.activity_class, b.t0, b.t1, b.seed_track))
    });
    out
}

/// Shifts a window start up to the next stride multiple; `None` when nothing
/// of the window is left.
fn snap_to_grid(t0: Frame, t1: Frame, stride: u32) -> Option<Frame> {
    let snapped = t0.div_ceil(stride) * stride;
    (snapped < t1).then_some(snapped)
}

fn dedup_parts(parts: BTreeMap<PartKey, Vec<Span>>, config: &PipelineConfig) -> Result<Vec<ActivityInstance>> {
    let mut out = BTreeMap::new();
    for (key, spans) in parts {
        let mut kept = dedup_spans(&spans, config.d_prop, config.s_prop)?;
        kept.retain(|s| s.score > 0.0);
        out.insert(key, kept);
    }
    Ok(instances_from(out))
}

/// Runs split/merge/select per `(video, activity class, seed track)` and
/// emits one instance per selected cube with a positive score.
///
/// Windows that start off the stride grid (the end-anchored tail window) are
/// trimmed to their first on-grid frame.
pub fn deduplicate(scored: &[ScoredCube], activity_classes: &[String], config: &PipelineConfig) -> Result<Vec<ActivityInstance>> {
    let stride = config.s_prop;
    let mut items = Vec::new();
    for s in scored {
        if s.scores.len() != activity_classes.len() {
            return Err(Error::Shape(format!(
                "{} has {} scores for {} activity classes",
                s.cube.key(),
                s.scores.len(),
                activity_classes.len()
            )));
        }
        let Some(t0) = snap_to_grid(s.cube.t0, s.cube.t1, stride) else {
            continue;
        };
        for (class, &score) in activity_classes.iter().zip(&s.scores) {
            let span = Span {
                t0,
                t1: s.cube.t1,
                bbox: s.cube.bbox,
                score,
            };
            items.push((s.cube.video_id.clone(), class.clone(), s.cube.seed_track, span));
        }
    }
    dedup_parts(partition(items), config)
}

/// [`deduplicate`] over instances that already carry a single class score.
pub fn deduplicate_instances(instances: &[ActivityInstance], config: &PipelineConfig) -> Result<Vec<ActivityInstance>> {
    let items = instances.iter().filter_map(|i| {
        let t0 = snap_to_grid(i.t0, i.t1, config.s_prop)?;
        let span = Span { t0, ..i.span() };
        Some((i.video_id.clone(), i.activity_class.clone(), i.seed_track, span))
    });
    dedup_parts(partition(items), config)
}

/// Strict-setting post-processing: joins maximal runs of abutting instances
/// that all score above `s_merg`, then drops results no longer than `l_merg`
/// frames. The merged score is the duration-weighted mean, the box is the
/// union and the tube concatenates the members' per-frame boxes.
pub fn merge_adjacent(instances: &[ActivityInstance], s_merg: f64, l_merg: u32) -> Result<Vec<ActivityInstance>> {
    let parts = partition(
        instances
            .iter()
            .enumerate()
            .map(|(n, i)| (i.video_id.clone(), i.activity_class.clone(), i.seed_track, (i.span(), n))),
    );
    let mut out = BTreeMap::new();
    for (key, items) in parts {
        if let Some(w) = items.windows(2).find(|w| w[0].0.t1 > w[1].0.t0) {
            return Err(Error::Overlap {
                a0: w[0].0.t0,
                a1: w[0].0.t1,
                b0: w[1].0.t0,
                b1: w[1].0.t1,
            });
        }
        let merged: Vec<(Span, Option<Tube>)> = items
            .chunk_by(|(a, _), (b, _)| a.t1 == b.t0 && a.score > s_merg && b.score > s_merg)
            .filter(|run| run[0].0.score > s_merg)
            .map(|run| {
                let frames: f64 = run.iter().map(|(s, _)| f64::from(s.t1 - s.t0)).sum();
                let span = Span {
                    t0: run[0].0.t0,
                    t1: run[run.len() - 1].0.t1,
                    bbox: run[1..].iter().fold(run[0].0.bbox, |acc, (s, _)| bbox_union(&acc, &s.bbox)),
                    score: run.iter().map(|(s, _)| s.score * f64::from(s.t1 - s.t0)).sum::<f64>() / frames,
                };
                let tube = match run {
                    [(_, n)] => instances[*n].tube.clone(),
                    _ => Some(run.iter().flat_map(|&(_, n)| instances[n].frame_tube()).collect()),
                };
                (span, tube)
            })
            .filter(|(s, _)| s.t1 - s.t0 > l_merg)
            .collect();
        out.insert(key, merged);
    }
    Ok(instances_with_tubes(out))
}
