//! Reference cubes and Faster R-CNN style label assignment.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{bbox_iou, bbox_union, coverage, temporal_iou, BBox, Cube, Frame};
use crate::ingest::ActivityAnnotation;
use crate::proposals::sample_windows;

/// Minimum temporal IoU for a proposal and a reference cube to count as
/// sharing a temporal window.
pub const TEMPORAL_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "classes", rename_all = "lowercase")]
pub enum LabelOutcome {
    /// Sorted, non-empty set of activity classes.
    Positive(Vec<String>),
    Negative,
    Unassigned,
}

impl LabelOutcome {
    pub fn is_positive(&self) -> bool {
        matches!(self, LabelOutcome::Positive(_))
    }

    pub fn classes(&self) -> &[String] {
        match self {
            LabelOutcome::Positive(c) => c,
            _ => &[],
        }
    }
}

/// A reference activity instance resampled into a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GtCube {
    pub video_id: String,
    pub activity_class: String,
    pub t0: Frame,
    pub t1: Frame,
    pub bbox: BBox,
}

impl GtCube {
    pub fn window(&self) -> (Frame, Frame) {
        (self.t0, self.t1)
    }
}

/// Dense sampling of `duration`/`stride` windows inside the annotated
/// instance; each cube's box is the union of the tube's boxes in its window.
pub fn gt_to_cubes(annotation: &ActivityAnnotation, duration: u32, stride: u32) -> Vec<GtCube> {
    sample_windows(annotation.duration(), duration, stride)
        .into_iter()
        .map(|(a, b)| {
            let (t0, t1) = (annotation.t0 + a, annotation.t0 + b);
            let bbox = annotation
                .boxes_in(t0, t1)
                .into_iter()
                .reduce(|acc, b| bbox_union(&acc, &b))
                .unwrap_or_else(|| annotation.nearest_box((t0 + t1) / 2));
            GtCube {
                video_id: annotation.video_id.clone(),
                activity_class: annotation.activity_class.clone(),
                t0,
                t1,
                bbox,
            }
        })
        .collect()
}

pub fn gt_cubes_for(annotations: &[ActivityAnnotation], duration: u32, stride: u32) -> Vec<GtCube> {
    annotations
        .iter()
        .flat_map(|a| gt_to_cubes(a, duration, stride))
        .collect()
}

/// Reference cube indices of one video sorted by start, for window lookups.
struct GtIndex<'a> {
    gt: &'a [GtCube],
    order: Vec<usize>,
    max_duration: Frame,
}

impl<'a> GtIndex<'a> {
    fn build(gt: &'a [GtCube]) -> HashMap<&'a str, GtIndex<'a>> {
        let mut out: HashMap<&str, GtIndex> = HashMap::new();
        for (i, g) in gt.iter().enumerate() {
            let idx = out.entry(g.video_id.as_str()).or_insert_with(|| GtIndex {
                gt,
                order: Vec::new(),
                max_duration: 0,
            });
            idx.order.push(i);
            idx.max_duration = idx.max_duration.max(g.t1 - g.t0);
        }
        for idx in out.values_mut() {
            idx.order.sort_by_key(|&i| (gt[i].t0, gt[i].t1, i));
        }
        out
    }

    /// Indices of reference cubes sharing a temporal window with `window`.
    fn matching(&self, window: (Frame, Frame)) -> impl Iterator<Item = usize> + '_ {
        let lo = window.0.saturating_sub(self.max_duration);
        let start = self.order.partition_point(|&i| self.gt[i].t0 < lo);
        self.order[start..]
            .iter()
            .copied()
            .take_while(move |&i| self.gt[i].t0 < window.1)
            .filter(move |&i| temporal_iou(self.gt[i].window(), window) >= TEMPORAL_MATCH_IOU)
    }
}

/// Assigns each proposal a positive class set, a negative label, or nothing.
///
/// Rules, in order:
/// 1. a proposal takes the class of every reference cube with IoU `> s_high`;
/// 2. each reference cube adds its class to its highest-IoU proposal if that
///    IoU is `> s_low` (ties go to the lower proposal index);
/// 3. a proposal left without classes is negative iff all its IoUs are `<= s_low`.
pub fn assign_labels(proposals: &[Cube], gt: &[GtCube], s_high: f64, s_low: f64) -> Vec<LabelOutcome> {
    let index = GtIndex::build(gt);

    let mut classes: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); proposals.len()];
    let mut above_low = vec![false; proposals.len()];
    let mut best: Vec<Option<(f64, usize)>> = vec![None; gt.len()];

    for (i, p) in proposals.iter().enumerate() {
        let Some(idx) = index.get(p.video_id.as_str()) else {
            continue;
        };
        for j in idx.matching(p.window()) {
            let g = &gt[j];
            let iou = bbox_iou(&p.bbox, &g.bbox);
            if iou > s_high {
                classes[i].insert(g.activity_class.as_str());
            }
            if iou > s_low {
                above_low[i] = true;
                if best[j].is_none_or(|(b, _)| iou > b) {
                    best[j] = Some((iou, i));
                }
            }
        }
    }
    for (j, b) in best.iter().enumerate() {
        if let Some((_, i)) = b {
            classes[*i].insert(gt[j].activity_class.as_str());
        }
    }

    classes
        .into_iter()
        .zip(above_low)
        .map(|(set, above)| {
            if !set.is_empty() {
                LabelOutcome::Positive(set.into_iter().map(String::from).collect())
            } else if !above {
                LabelOutcome::Negative
            } else {
                LabelOutcome::Unassigned
            }
        })
        .collect()
}

/// Highest spatial IoU and highest reference coverage of each proposal
/// against reference cubes in its temporal window (0 when there are none).
pub fn best_match(proposals: &[Cube], gt: &[GtCube]) -> Vec<(f64, f64)> {
    let index = GtIndex::build(gt);
    proposals
        .iter()
        .map(|p| {
            let Some(idx) = index.get(p.video_id.as_str()) else {
                return (0.0, 0.0);
            };
            idx.matching(p.window()).fold((0.0f64, 0.0f64), |(iou, cov), j| {
                let g = &gt[j].bbox;
                (iou.max(bbox_iou(&p.bbox, g)), cov.max(coverage(&p.bbox, g)))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposalStats {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
    pub unassigned: usize,
    pub positive_rate: f64,
    /// Among positives: share with exactly one, two, and three or more labels.
    pub unique_label_rate: f64,
    pub two_label_rate: f64,
    pub three_plus_label_rate: f64,
}

pub fn proposal_stats<'a>(assignments: impl IntoIterator<Item = &'a LabelOutcome>) -> ProposalStats {
    let mut s = ProposalStats::default();
    let (mut one, mut two, mut more) = (0usize, 0usize, 0usize);
    for a in assignments {
        s.total += 1;
        match a {
            LabelOutcome::Positive(c) => {
                s.positive += 1;
                match c.len() {
                    1 => one += 1,
                    2 => two += 1,
                    _ => more += 1,
                }
            }
            LabelOutcome::Negative => s.negative += 1,
            LabelOutcome::Unassigned => s.unassigned += 1,
        }
    }
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    s.positive_rate = rate(s.positive, s.total);
    s.unique_label_rate = rate(one, s.positive);
    s.two_label_rate = rate(two, s.positive);
    s.three_plus_label_rate = rate(more, s.positive);
    s
}
