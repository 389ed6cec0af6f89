//! Loosened-setting DET curves (Pmiss against time-based false alarm rate),
//! strict-setting mAP over tube IoU, and proposal-quality reports.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dedup::{deduplicate, ActivityInstance};
use crate::error::Result;
use crate::geometry::{bbox_union, temporal_overlap, tube_iou_3d, Cube, Frame, Tube};
use crate::ingest::{ActivityAnnotation, PipelineConfig};
use crate::labeling::{assign_labels, best_match, gt_cubes_for, GtCube};
use crate::proposals::sample_windows;
use crate::scoring::oracle_scores;

/// Frame count per video.
pub type VideoLengths = BTreeMap<String, u32>;

/// Lengths from `known`, extended to cover every annotation and prediction.
pub fn resolve_lengths(known: &VideoLengths, annotations: &[ActivityAnnotation], predictions: &[ActivityInstance]) -> VideoLengths {
    let mut out = known.clone();
    let extents = annotations
        .iter()
        .map(|a| (&a.video_id, a.t1))
        .chain(predictions.iter().map(|p| (&p.video_id, p.t1)));
    for (video, t1) in extents {
        let len = out.entry(video.clone()).or_insert(0);
        *len = (*len).max(t1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    /// Score threshold; `None` is the point above every score.
    pub threshold: Option<f64>,
    pub tfa: f64,
    pub pmiss: f64,
}

/// One class's threshold sweep, ordered from the highest threshold down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub activity_class: String,
    /// Set when the class has no reference instances; such curves are left
    /// out of means.
    pub no_reference: bool,
    pub reference_count: usize,
    pub points: Vec<DetPoint>,
}

fn mark(mask: &mut [bool], t0: Frame, t1: Frame) -> u64 {
    let end = (t1 as usize).min(mask.len());
    let mut fresh = 0;
    for m in mask.iter_mut().take(end).skip(t0 as usize) {
        if !*m {
            *m = true;
            fresh += 1;
        }
    }
    fresh
}

/// DET curve of one class.
///
/// A reference instance is detected at threshold `θ` when one prediction
/// scoring at least `θ` overlaps it by `min_overlap` frames, or by its whole
/// duration if shorter. False-alarm time is the union of predicted frames
/// outside the class's reference frames, over the corpus' non-reference
/// frames.
pub fn det_curve(
    class: &str,
    predictions: &[ActivityInstance],
    annotations: &[ActivityAnnotation],
    lengths: &VideoLengths,
    min_overlap: u32,
) -> DetCurve {
    let lengths = resolve_lengths(lengths, annotations, predictions);
    let mut gt: BTreeMap<&str, Vec<(Frame, Frame)>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.activity_class == class) {
        gt.entry(&a.video_id).or_default().push(a.window());
    }
    let mut gt_index: HashMap<&str, usize> = HashMap::new();
    let mut offset = 0;
    for (video, windows) in gt.iter_mut() {
        windows.sort_unstable();
        gt_index.insert(video, offset);
        offset += windows.len();
    }
    let reference_count = offset;

    let mut gt_masks: HashMap<&str, Vec<bool>> = HashMap::new();
    let mut non_gt_frames = 0u64;
    for (video, &len) in &lengths {
        let mut mask = vec![false; len as usize];
        let mut covered = 0;
        for &(t0, t1) in gt.get(video.as_str()).into_iter().flatten() {
            covered += mark(&mut mask, t0, t1);
        }
        non_gt_frames += u64::from(len) - covered;
        gt_masks.insert(video, mask);
    }

    let mut preds: Vec<&ActivityInstance> = predictions.iter().filter(|p| p.activity_class == class).collect();
    preds.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut detected = vec![false; reference_count];
    let mut missed = reference_count;
    let mut fa_masks: HashMap<&str, Vec<bool>> = HashMap::new();
    let mut fa_frames = 0u64;
    let pmiss = |missed: usize| if reference_count == 0 { 0.0 } else { missed as f64 / reference_count as f64 };
    let tfa = |fa: u64| if non_gt_frames == 0 { 0.0 } else { fa as f64 / non_gt_frames as f64 };

    let mut points = vec![DetPoint {
        threshold: None,
        tfa: 0.0,
        pmiss: pmiss(missed),
    }];
    for group in preds.chunk_by(|a, b| a.score == b.score) {
        for p in group {
            let video = p.video_id.as_str();
            if let Some(windows) = gt.get(video) {
                let base = gt_index[video];
                for (k, &w) in windows.iter().enumerate().take_while(|(_, w)| w.0 < p.t1) {
                    let need = min_overlap.min(w.1 - w.0).max(1);
                    if !detected[base + k] && temporal_overlap(w, p.window()) >= need {
                        detected[base + k] = true;
                        missed -= 1;
                    }
                }
            }
            let gt_mask = &gt_masks[video];
            let fa = fa_masks.entry(video).or_insert_with(|| gt_mask.clone());
            fa_frames += mark(fa, p.t0, p.t1);
        }
        points.push(DetPoint {
            threshold: Some(group[0].score),
            tfa: tfa(fa_frames),
            pmiss: pmiss(missed),
        });
    }
    DetCurve {
        activity_class: class.to_string(),
        no_reference: reference_count == 0,
        reference_count,
        points,
    }
}

pub fn det_curves(
    predictions: &[ActivityInstance],
    annotations: &[ActivityAnnotation],
    lengths: &VideoLengths,
    classes: &[String],
    min_overlap: u32,
) -> Vec<DetCurve> {
    classes
        .iter()
        .map(|c| det_curve(c, predictions, annotations, lengths, min_overlap))
        .collect()
}

/// Lowest Pmiss among sweep points within the false-alarm budget.
pub fn pmiss_at_tfa(curve: &DetCurve, budget: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.tfa <= budget)
        .map(|p| p.pmiss)
        .fold(1.0, f64::min)
}

/// Normalized area under the Pmiss step function over `[0, limit]`.
pub fn naudc(curve: &DetCurve, limit: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.tfa, p.pmiss)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let mut best = 1.0f64;
    for (i, &(x, p)) in pts.iter().enumerate() {
        if x >= limit {
            break;
        }
        best = best.min(p);
        let next = pts.get(i + 1).map_or(limit, |q| q.0.min(limit));
        area += best * (next - x);
    }
    if pts.first().is_none_or(|p| p.0 > 0.0) {
        area += pts.first().map_or(limit, |p| p.0.min(limit));
    }
    (area / limit).clamp(0.0, 1.0)
}

/// Greedy matching in descending score order: each prediction takes the
/// unmatched reference of highest IoU at or above `threshold`.
/// `ious[i][j]` is the IoU of prediction `i` and reference `j`; predictions
/// must already be sorted by score. Returns true positives.
pub fn match_predictions(ious: &[Vec<f64>], n_references: usize, threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; n_references];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &iou) in row.iter().enumerate() {
                if !taken[j] && iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            best.is_some()
        })
        .collect()
}

/// All-point interpolated area under the precision-recall curve.
pub fn average_precision(true_positives: &[bool], n_references: usize) -> f64 {
    if n_references == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(true_positives.len());
    let mut precision = Vec::with_capacity(true_positives.len());
    for (i, &hit) in true_positives.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_references as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub activity_class: String,
    pub no_reference: bool,
    /// One value per IoU threshold.
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassAp>,
    /// Mean AP over classes with references, per threshold.
    pub map: Vec<f64>,
    /// Mean of `map` over thresholds.
    pub mean: f64,
}

/// Strict-setting mAP: per class and tube IoU threshold, greedy one-to-one
/// matching in score order and all-point AP.
pub fn map_3diou(
    predictions: &[ActivityInstance],
    annotations: &[ActivityAnnotation],
    classes: &[String],
    thresholds: &[f64],
) -> Result<MapReport> {
    let mut rows = Vec::with_capacity(classes.len());
    for class in classes {
        let refs: Vec<(&ActivityAnnotation, Tube)> = annotations
            .iter()
            .filter(|a| &a.activity_class == class)
            .map(|a| (a, a.dense_tube()))
            .collect();
        let mut preds: Vec<&ActivityInstance> = predictions.iter().filter(|p| &p.activity_class == class).collect();
        preds.sort_by(|a, b| b.score.total_cmp(&a.score));
        let ious = preds
            .iter()
            .map(|p| {
                let tube = p.frame_tube();
                refs.iter()
                    .map(|(a, gt)| {
                        if a.video_id != p.video_id || temporal_overlap(a.window(), p.window()) == 0 {
                            Ok(0.0)
                        } else {
                            tube_iou_3d(&tube, gt)
                        }
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let ap = thresholds
            .iter()
            .map(|&t| average_precision(&match_predictions(&ious, refs.len(), t), refs.len()))
            .collect();
        rows.push(ClassAp {
            activity_class: class.clone(),
            no_reference: refs.is_empty(),
            ap,
        });
    }
    let scored: Vec<&ClassAp> = rows.iter().filter(|r| !r.no_reference).collect();
    let map: Vec<f64> = (0..thresholds.len())
        .map(|t| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|r| r.ap[t]).sum::<f64>() / scored.len() as f64
            }
        })
        .collect();
    let mean = if map.is_empty() { 0.0 } else { map.iter().sum::<f64>() / map.len() as f64 };
    Ok(MapReport {
        thresholds: thresholds.to_vec(),
        classes: rows,
        map,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub activity_class: String,
    pub no_reference: bool,
    pub reference_count: usize,
    pub naudc: f64,
    /// `(budget, Pmiss)` pairs.
    pub pmiss_at_tfa: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// How loosened-setting matching was done; reference scorers use richer
    /// alignment rules.
    pub matching: String,
    pub naudc_limit: f64,
    pub classes: Vec<ClassReport>,
    /// Mean nAUDC over classes with references; 1 when there are none.
    pub mean_naudc: f64,
    pub mean_pmiss_at_tfa: Vec<(f64, f64)>,
    pub map: MapReport,
}

fn mean_or(values: &[f64], empty: f64) -> f64 {
    if values.is_empty() {
        empty
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Both protocols: DET curves over `loose` predictions and mAP over
/// `strict` ones. Returns the report and the curves.
pub fn evaluate(
    loose: &[ActivityInstance],
    strict: &[ActivityInstance],
    annotations: &[ActivityAnnotation],
    lengths: &VideoLengths,
    classes: &[String],
    config: &PipelineConfig,
) -> Result<(EvaluationReport, Vec<DetCurve>)> {
    let min_overlap = config.min_temporal_overlap();
    let curves = det_curves(loose, annotations, lengths, classes, min_overlap);
    let rows: Vec<ClassReport> = curves
        .iter()
        .map(|c| ClassReport {
            activity_class: c.activity_class.clone(),
            no_reference: c.no_reference,
            reference_count: c.reference_count,
            naudc: naudc(c, config.naudc_limit),
            pmiss_at_tfa: config.tfa_budgets.iter().map(|&b| (b, pmiss_at_tfa(c, b))).collect(),
        })
        .collect();
    let referenced: Vec<&ClassReport> = rows.iter().filter(|r| !r.no_reference).collect();
    let mean_naudc = mean_or(&referenced.iter().map(|r| r.naudc).collect::<Vec<_>>(), 1.0);
    let mean_pmiss_at_tfa = config
        .tfa_budgets
        .iter()
        .enumerate()
        .map(|(k, &b)| (b, mean_or(&referenced.iter().map(|r| r.pmiss_at_tfa[k].1).collect::<Vec<_>>(), 1.0)))
        .collect();
    let map = map_3diou(strict, annotations, classes, &config.map_thresholds)?;
    let report = EvaluationReport {
        matching: format!("single prediction overlapping a reference by >= {min_overlap} frames (capped at its duration)"),
        naudc_limit: config.naudc_limit,
        classes: rows,
        mean_naudc,
        mean_pmiss_at_tfa,
        map,
    };
    Ok((report, curves))
}

/// Mean nAUDC over referenced classes; 1 when no class has references.
pub fn mean_naudc(curves: &[DetCurve], limit: f64) -> f64 {
    let v: Vec<f64> = curves.iter().filter(|c| !c.no_reference).map(|c| naudc(c, limit)).collect();
    mean_or(&v, 1.0)
}

/// Oracle-scored, deduplicated nAUDC of a labeled proposal set.
pub fn oracle_naudc(
    proposals: &[Cube],
    annotations: &[ActivityAnnotation],
    lengths: &VideoLengths,
    classes: &[String],
    config: &PipelineConfig,
) -> Result<f64> {
    let scored = oracle_scores(proposals, classes)?;
    let instances = deduplicate(&scored, classes, config)?;
    let curves = det_curves(&instances, annotations, lengths, classes, config.min_temporal_overlap());
    Ok(mean_naudc(&curves, config.naudc_limit))
}

pub const QUALITY_LEVELS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalQuality {
    /// `(τ, nAUDC)` keeping proposals whose best IoU with a reference cube is at least τ.
    pub iou: Vec<(f64, f64)>,
    pub iou_average: f64,
    /// Same, filtering on reference coverage.
    pub coverage: Vec<(f64, f64)>,
    pub coverage_average: f64,
}

impl ProposalQuality {
    pub fn iou_at(&self, level: f64) -> Option<f64> {
        self.iou.iter().find(|(t, _)| (t - level).abs() < 1e-9).map(|p| p.1)
    }

    pub fn coverage_at(&self, level: f64) -> Option<f64> {
        self.coverage.iter().find(|(t, _)| (t - level).abs() < 1e-9).map(|p| p.1)
    }
}

/// Upper-bound quality of labeled proposals: oracle-scored nAUDC on subsets
/// kept by best IoU or reference coverage, at each level in [`QUALITY_LEVELS`].
pub fn proposal_quality(
    proposals: &[Cube],
    gt_cubes: &[GtCube],
    annotations: &[ActivityAnnotation],
    lengths: &VideoLengths,
    classes: &[String],
    config: &PipelineConfig,
) -> Result<ProposalQuality> {
    let best = best_match(proposals, gt_cubes);
    let sweep = |pick: fn(&(f64, f64)) -> f64| -> Result<Vec<(f64, f64)>> {
        QUALITY_LEVELS
            .iter()
            .map(|&level| {
                let subset: Vec<Cube> = proposals
                    .iter()
                    .zip(&best)
                    .filter(|(_, m)| pick(m) >= level)
                    .map(|(c, _)| c.clone())
                    .collect();
                Ok((level, oracle_naudc(&subset, annotations, lengths, classes, config)?))
            })
            .collect()
    };
    let iou = sweep(|m| m.0)?;
    let coverage = sweep(|m| m.1)?;
    let avg = |v: &[(f64, f64)]| v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64;
    Ok(ProposalQuality {
        iou_average: avg(&iou),
        coverage_average: avg(&coverage),
        iou,
        coverage,
    })
}

/// Reference-derived proposals on each video's own window grid: one cube per
/// annotation and grid window intersecting it, boxed with the union of the
/// reference boxes inside the window. Seed ids number the annotations from 1.
pub fn reference_grid_proposals(annotations: &[ActivityAnnotation], lengths: &VideoLengths, duration: u32, stride: u32) -> Vec<Cube> {
    let lengths = resolve_lengths(lengths, annotations, &[]);
    let mut out = Vec::new();
    for (i, a) in annotations.iter().enumerate() {
        for (t0, t1) in sample_windows(lengths[&a.video_id], duration, stride) {
            if temporal_overlap((t0, t1), a.window()) == 0 {
                continue;
            }
            let Some(bbox) = a.boxes_in(t0, t1).into_iter().reduce(|acc, b| bbox_union(&acc, &b)) else {
                continue;
            };
            let mut cube = Cube::new(&a.video_id, t0, t1, bbox, "reference");
            cube.seed_track = Some(i as u64 + 1);
            out.push(cube);
        }
    }
    out
}

/// Best achievable nAUDC of a proposal format: reference-derived grid
/// proposals, labeled against reference cubes and scored by the oracle.
pub fn format_lower_bound(
    annotations: &[ActivityAnnotation],
    lengths: &VideoLengths,
    classes: &[String],
    config: &PipelineConfig,
) -> Result<f64> {
    let mut proposals = reference_grid_proposals(annotations, lengths, config.d_prop, config.s_prop);
    let gt = gt_cubes_for(annotations, config.d_prop, config.s_prop);
    let outcomes = assign_labels(&proposals, &gt, config.s_high, config.s_low);
    for (c, o) in proposals.iter_mut().zip(outcomes) {
        c.labels = Some(o);
    }
    oracle_naudc(&proposals, annotations, lengths, classes, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn bx(x0: f64, x1: f64) -> BBox {
        BBox::new(x0, x1, 0.0, 10.0).unwrap()
    }

    fn inst(t0: Frame, t1: Frame, score: f64) -> ActivityInstance {
        ActivityInstance {
            video_id: "v".into(),
            activity_class: "a".into(),
            t0,
            t1,
            bbox: bx(0.0, 10.0),
            score,
            seed_track: Some(1),
            tube: None,
        }
    }

    fn gt(t0: Frame, t1: Frame) -> ActivityAnnotation {
        ActivityAnnotation::with_box("v", "a", t0, t1, bx(0.0, 10.0))
    }

    fn lengths(n: u32) -> VideoLengths {
        [("v".to_string(), n)].into_iter().collect()
    }

    fn sweep(c: &DetCurve) -> Vec<(f64, f64)> {
        c.points.iter().map(|p| (p.tfa, p.pmiss)).collect()
    }

    #[test]
    fn worked_example() {
        let preds = [inst(0, 100, 0.7), inst(500, 600, 0.8)];
        let c = det_curve("a", &preds, &[gt(0, 100)], &lengths(1000), 30);
        assert_eq!(sweep(&c), vec![(0.0, 1.0), (1.0 / 9.0, 1.0), (1.0 / 9.0, 0.0)]);
        assert_eq!(pmiss_at_tfa(&c, 0.02), 1.0);
        assert_eq!(pmiss_at_tfa(&c, 0.2), 0.0);
        assert!((naudc(&c, 0.2) - (1.0 / 9.0) / 0.2).abs() < 1e-12);
        assert!((naudc(&c, 0.2) - 0.5556).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_empty() {
        let c = det_curve("a", &[inst(0, 100, 1.0)], &[gt(0, 100)], &lengths(1000), 30);
        assert_eq!(*c.points.last().unwrap(), DetPoint { threshold: Some(1.0), tfa: 0.0, pmiss: 0.0 });
        assert_eq!(pmiss_at_tfa(&c, 0.0), 0.0);
        assert_eq!(naudc(&c, 0.2), 0.0);

        let none = det_curve("a", &[], &[gt(0, 100)], &lengths(1000), 30);
        assert_eq!(sweep(&none), vec![(0.0, 1.0)]);
        assert_eq!(naudc(&none, 0.2), 1.0);
    }

    #[test]
    fn class_without_reference_is_flagged() {
        let c = det_curve("b", &[], &[gt(0, 100)], &lengths(1000), 30);
        assert!(c.no_reference);
        assert_eq!(mean_naudc(&[c], 0.2), 1.0);
    }

    #[test]
    fn overlap_requirement() {
        let short = det_curve("a", &[inst(90, 200, 0.5)], &[gt(0, 100)], &lengths(1000), 30);
        assert_eq!(short.points.last().unwrap().pmiss, 1.0);
        // references shorter than the requirement need full overlap
        let brief = det_curve("a", &[inst(0, 64, 0.5)], &[gt(10, 20)], &lengths(1000), 30);
        assert_eq!(brief.points.last().unwrap().pmiss, 0.0);
    }

    #[test]
    fn false_alarm_frames_are_a_union() {
        let preds = [inst(500, 600, 0.8), inst(550, 650, 0.6)];
        let c = det_curve("a", &preds, &[gt(0, 100)], &lengths(1000), 30);
        assert!((c.points.last().unwrap().tfa - 150.0 / 900.0).abs() < 1e-12);
    }

    #[test]
    fn map_fixtures() {
        let refs = [gt(0, 100)];
        let exact = ActivityInstance { score: 0.9, ..inst(0, 100, 0.9) };
        let r = map_3diou(&[exact.clone()], &refs, &["a".into()], &[0.1, 0.2, 0.5]).unwrap();
        assert_eq!(r.map, vec![1.0, 1.0, 1.0]);

        // 30 of 100 frames with identical boxes: tube IoU 0.3
        let partial = inst(0, 30, 0.9);
        let r = map_3diou(&[partial], &refs, &["a".into()], &[0.1, 0.2, 0.5]).unwrap();
        assert_eq!(r.map, vec![1.0, 1.0, 0.0]);

        let ious = vec![vec![1.0], vec![1.0]];
        assert_eq!(match_predictions(&ious, 1, 0.5), vec![true, false]);
        let dup = inst(0, 100, 0.8);
        let r = map_3diou(&[exact, dup], &refs, &["a".into()], &[0.5]).unwrap();
        assert_eq!(r.map, vec![1.0]);
    }

    #[test]
    fn ap_closed_forms() {
        assert_eq!(average_precision(&[true, false, true], 2), 0.5 + 0.5 * (2.0 / 3.0));
        assert_eq!(average_precision(&[false, true], 1), 0.5);
        assert_eq!(average_precision(&[], 3), 0.0);
    }

    #[test]
    fn empty_proposals_give_unit_naudc() {
        let cfg = PipelineConfig { activity_classes: vec!["a".into()], ..PipelineConfig::default() };
        let v = oracle_naudc(&[], &[gt(0, 100)], &lengths(1000), &cfg.activity_classes, &cfg).unwrap();
        assert_eq!(v, 1.0);
    }

    fn arb_preds() -> impl Strategy<Value = Vec<ActivityInstance>> {
        proptest::collection::vec((0u32..900, 1u32..100, 0.0..1.0f64), 0..12)
            .prop_map(|v| v.into_iter().map(|(t0, d, s)| inst(t0, t0 + d, s)).collect())
    }

    fn arb_refs() -> impl Strategy<Value = Vec<ActivityAnnotation>> {
        proptest::collection::vec((0u32..900, 1u32..100), 1..5)
            .prop_map(|v| v.into_iter().map(|(t0, d)| gt(t0, t0 + d)).collect())
    }

    proptest! {
        #[test]
        fn curve_is_monotone_and_bounded(preds in arb_preds(), refs in arb_refs()) {
            let c = det_curve("a", &preds, &refs, &lengths(1000), 30);
            for w in c.points.windows(2) {
                prop_assert!(w[0].tfa <= w[1].tfa);
                prop_assert!(w[0].pmiss >= w[1].pmiss);
            }
            prop_assert!(c.points.iter().all(|p| (0.0..=1.0).contains(&p.tfa) && (0.0..=1.0).contains(&p.pmiss)));
            let n = naudc(&c, 0.2);
            prop_assert!((0.0..=1.0).contains(&n));
        }

        #[test]
        fn monotone_score_transform_keeps_curve(preds in arb_preds(), refs in arb_refs()) {
            let squashed: Vec<_> = preds.iter().map(|p| ActivityInstance { score: p.score * p.score * 0.5 + 0.1, ..p.clone() }).collect();
            let a = det_curve("a", &preds, &refs, &lengths(1000), 30);
            let b = det_curve("a", &squashed, &refs, &lengths(1000), 30);
            prop_assert_eq!(sweep(&a), sweep(&b));
        }

        #[test]
        fn adding_a_hit_never_raises_pmiss(preds in arb_preds(), refs in arb_refs(), budget in 0.0..0.3f64) {
            let before = det_curve("a", &preds, &refs, &lengths(1000), 30);
            let mut more = preds.clone();
            more.push(inst(refs[0].t0, refs[0].t1, 1.0));
            let after = det_curve("a", &more, &refs, &lengths(1000), 30);
            prop_assert!(pmiss_at_tfa(&after, budget) <= pmiss_at_tfa(&before, budget));
        }

        #[test]
        fn adding_a_false_alarm_never_lowers_tfa(preds in arb_preds(), t0 in 900u32..950) {
            let refs = [gt(0, 50)];
            let a = det_curve("a", &preds, &refs, &lengths(1000), 30);
            let mut more = preds.clone();
            more.push(inst(t0, t0 + 50, 0.0));
            let b = det_curve("a", &more, &refs, &lengths(1000), 30);
            prop_assert!(b.points.last().unwrap().tfa >= a.points.last().unwrap().tfa);
        }

        #[test]
        fn map_decreases_with_threshold(preds in arb_preds(), refs in arb_refs()) {
            let r = map_3diou(&preds, &refs, &["a".into()], &[0.1, 0.2, 0.5]).unwrap();
            prop_assert!(r.map[0] >= r.map[1] && r.map[1] >= r.map[2]);
        }
    }
}
