//! Stage orchestration, persisted stage outputs and throughput timing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dedup::{deduplicate, merge_adjacent, ActivityInstance};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, DetCurve, EvaluationReport, VideoLengths};
use crate::filtering::{calibrate_threshold, filter_proposals, score_foreground, ForegroundIndex, ForegroundThreshold};
use crate::geometry::Cube;
use crate::ingest::{write_records, ActivityAnnotation, DetectionRecord, MaskFrame, PipelineConfig};
use crate::labeling::{assign_labels, gt_cubes_for};
use crate::proposals::generate_proposals;
use crate::scoring::{fuse_scores, join_external_scores, oracle_scores, ScoredCube};
use crate::synth::{generate_scene, random_scene, RandomSceneParams, Scene};
use crate::tracking::{greedy_iou_track, tracks_by_video, tracks_from_records};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Track,
    Propose,
    Filter,
    Score,
    Dedup,
    MergeAdjacent,
    Evaluate,
}

impl Stage {
    /// Canonical order.
    pub const ALL: [Stage; 7] = [
        Stage::Track,
        Stage::Propose,
        Stage::Filter,
        Stage::Score,
        Stage::Dedup,
        Stage::MergeAdjacent,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Track => "track",
            Stage::Propose => "propose",
            Stage::Filter => "filter",
            Stage::Score => "score",
            Stage::Dedup => "dedup",
            Stage::MergeAdjacent => "merge-adjacent",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::StageChain(format!("unknown stage {s:?}")))
    }
}

/// Stages must appear in canonical order, at most once each, and include
/// propose, score and dedup.
pub fn validate_chain(stages: &[Stage]) -> Result<()> {
    if let Some(w) = stages.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::StageChain(format!("{} cannot follow {}", w[1], w[0])));
    }
    for required in [Stage::Propose, Stage::Score, Stage::Dedup] {
        if !stages.contains(&required) {
            return Err(Error::StageChain(format!("missing required stage {required}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreSource {
    /// Assigned labels stand in for classifier output.
    Oracle,
    External(Vec<ScoredCube>),
    Fused {
        sets: Vec<Vec<ScoredCube>>,
        weights: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    /// Calibrate from the positive proposals of this run.
    Calibrate,
    Fixed(BTreeMap<String, ForegroundThreshold>),
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub detections: Vec<DetectionRecord>,
    pub annotations: Vec<ActivityAnnotation>,
    pub masks: Vec<MaskFrame>,
    /// Known video lengths; others are inferred from detections.
    pub video_lengths: VideoLengths,
    pub scores: ScoreSource,
    pub thresholds: ThresholdSource,
}

impl PipelineInputs {
    pub fn from_scene(scene: Scene, video_id: &str) -> Self {
        PipelineInputs {
            detections: scene.detections,
            annotations: scene.annotations,
            masks: scene.masks,
            video_lengths: [(video_id.to_string(), scene.video_len)].into_iter().collect(),
            scores: ScoreSource::Oracle,
            thresholds: ThresholdSource::Calibrate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub wall_seconds: f64,
    pub records_in: usize,
    pub records_out: usize,
    pub records_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
    pub wall_seconds: f64,
    pub video_frames: u64,
    pub video_fps: f64,
    /// Processed video seconds per wall-clock second.
    pub real_time_factor: f64,
}

impl TimingReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Real-time factor counting only the given stages.
    pub fn real_time_factor_of(&self, stages: &[Stage]) -> f64 {
        let wall: f64 = self
            .stages
            .iter()
            .filter(|s| stages.contains(&s.stage))
            .map(|s| s.wall_seconds)
            .sum();
        rtf(self.video_frames, self.video_fps, wall)
    }
}

fn rtf(frames: u64, fps: f64, wall: f64) -> f64 {
    let video_seconds = frames as f64 / fps;
    if wall <= 0.0 {
        f64::INFINITY
    } else {
        video_seconds / wall
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub activity_classes: Vec<String>,
    pub video_lengths: VideoLengths,
    pub detections: Vec<DetectionRecord>,
    pub proposals: Vec<Cube>,
    pub thresholds: Option<BTreeMap<String, ForegroundThreshold>>,
    pub filtered: Option<Vec<Cube>>,
    pub scored: Vec<ScoredCube>,
    pub instances: Vec<ActivityInstance>,
    pub merged: Option<Vec<ActivityInstance>>,
    pub report: Option<EvaluationReport>,
    pub curves: Vec<DetCurve>,
    pub timing: Option<TimingReport>,
}

/// Configured activity classes, or the sorted classes of the annotations.
pub fn resolve_activity_classes(config: &PipelineConfig, annotations: &[ActivityAnnotation]) -> Vec<String> {
    if !config.activity_classes.is_empty() {
        return config.activity_classes.clone();
    }
    annotations
        .iter()
        .map(|a| a.activity_class.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Known lengths, plus `last detection frame + s_det` for other videos.
pub fn infer_video_lengths(known: &VideoLengths, detections: &[DetectionRecord], s_det: u32) -> VideoLengths {
    let mut out = known.clone();
    let mut seen: BTreeMap<&str, u32> = BTreeMap::new();
    for d in detections {
        let end = seen.entry(&d.video_id).or_insert(0);
        *end = (*end).max(d.frame + s_det);
    }
    for (video, end) in seen {
        out.entry(video.to_string()).or_insert(end);
    }
    out
}

/// Proposals for every video in `lengths`, from tracked detections.
pub fn propose_all(tracked: &[DetectionRecord], lengths: &VideoLengths, config: &PipelineConfig) -> Result<Vec<Cube>> {
    let by_video = tracks_by_video(tracks_from_records(tracked)?);
    let mut out = Vec::new();
    for (video, &len) in lengths {
        if let Some(tracks) = by_video.get(video) {
            out.extend(generate_proposals(tracks, video, len, config));
        }
    }
    Ok(out)
}

/// Sets `labels` on every proposal against the annotations' reference cubes.
pub fn label_proposals(proposals: &mut [Cube], annotations: &[ActivityAnnotation], config: &PipelineConfig) {
    let gt = gt_cubes_for(annotations, config.d_prop, config.s_prop);
    let outcomes = assign_labels(proposals, &gt, config.s_high, config.s_low);
    for (c, o) in proposals.iter_mut().zip(outcomes) {
        c.labels = Some(o);
    }
}

/// Fills foreground scores and drops proposals at or below their class
/// threshold. Returns the kept proposals and the thresholds used.
pub fn foreground_filter(
    proposals: &mut [Cube],
    masks: &[MaskFrame],
    source: &ThresholdSource,
    config: &PipelineConfig,
) -> Result<(Vec<Cube>, BTreeMap<String, ForegroundThreshold>)> {
    let index = ForegroundIndex::new(masks);
    score_foreground(proposals, &index)?;
    let thresholds = match source {
        ThresholdSource::Fixed(t) => t.clone(),
        ThresholdSource::Calibrate => calibrate_threshold(
            proposals
                .iter()
                .filter(|c| c.labels.as_ref().is_some_and(|l| l.is_positive()))
                .filter_map(|c| Some((c.object_class.as_str(), c.fg_score?))),
            &config.object_classes,
            config.p_pos,
        ),
    };
    let kept = filter_proposals(proposals, &thresholds)?;
    Ok((kept, thresholds))
}

fn stage_err(stage: Stage) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.name(),
            source: Box::new(e),
        },
    }
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    fn run<T>(&mut self, stage: Stage, records_in: usize, f: impl FnOnce() -> Result<T>, count: impl Fn(&T) -> usize) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(stage_err(stage))?;
        let wall = start.elapsed().as_secs_f64();
        let records_out = count(&out);
        log::info!("{stage}: {records_in} in, {records_out} out, {wall:.3}s");
        self.timings.push(StageTiming {
            stage,
            wall_seconds: wall,
            records_in,
            records_out,
            records_per_second: if wall > 0.0 { records_in as f64 / wall } else { f64::INFINITY },
        });
        Ok(out)
    }
}

/// Runs the chain in memory and, given `out_dir`, persists every stage's
/// output there.
pub fn run_pipeline(
    config: &PipelineConfig,
    inputs: PipelineInputs,
    stages: &[Stage],
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    config.validate()?;
    validate_chain(stages)?;
    let has = |s: Stage| stages.contains(&s);
    let classes = resolve_activity_classes(config, &inputs.annotations);
    let lengths = infer_video_lengths(&inputs.video_lengths, &inputs.detections, config.s_det);
    let mut clock = Clock { timings: Vec::new() };
    let mut out = PipelineOutput {
        activity_classes: classes.clone(),
        video_lengths: lengths.clone(),
        ..PipelineOutput::default()
    };
    let annotations = &inputs.annotations;

    out.detections = if has(Stage::Track) {
        let dets = &inputs.detections;
        clock.run(
            Stage::Track,
            dets.len(),
            || Ok(greedy_iou_track(dets, config.track_iou_gate, config.track_max_gap())),
            Vec::len,
        )?
    } else {
        inputs.detections
    };

    let dets = &out.detections;
    let mut proposals = clock.run(Stage::Propose, dets.len(), || propose_all(dets, &lengths, config), Vec::len)?;
    let mut labeled = false;

    let current = if has(Stage::Filter) {
        let n = proposals.len();
        let (kept, thresholds) = clock.run(
            Stage::Filter,
            n,
            || {
                if inputs.thresholds == ThresholdSource::Calibrate {
                    if annotations.is_empty() {
                        return Err(Error::StageChain("threshold calibration needs annotations".into()));
                    }
                    label_proposals(&mut proposals, annotations, config);
                    labeled = true;
                }
                foreground_filter(&mut proposals, &inputs.masks, &inputs.thresholds, config)
            },
            |r| r.0.len(),
        )?;
        out.thresholds = Some(thresholds);
        out.filtered = Some(kept.clone());
        kept
    } else {
        proposals.clone()
    };
    out.proposals = proposals;

    let n = current.len();
    out.scored = clock.run(
        Stage::Score,
        n,
        || match inputs.scores {
            ScoreSource::Oracle => {
                let mut current = current;
                if !labeled {
                    label_proposals(&mut current, annotations, config);
                }
                oracle_scores(&current, &classes)
            }
            ScoreSource::External(scored) => join_external_scores(&current, scored, classes.len()),
            ScoreSource::Fused { sets, weights } => {
                join_external_scores(&current, fuse_scores(&sets, &weights)?, classes.len())
            }
        },
        Vec::len,
    )?;

    let scored = &out.scored;
    out.instances = clock.run(Stage::Dedup, scored.len(), || deduplicate(scored, &classes, config), Vec::len)?;

    if has(Stage::MergeAdjacent) {
        let inst = &out.instances;
        out.merged = Some(clock.run(
            Stage::MergeAdjacent,
            inst.len(),
            || merge_adjacent(inst, config.s_merg, config.l_merg),
            Vec::len,
        )?);
    }

    if has(Stage::Evaluate) {
        let loose = &out.instances;
        let strict = out.merged.as_ref().unwrap_or(loose);
        let (report, curves) = clock.run(
            Stage::Evaluate,
            loose.len(),
            || evaluate(loose, strict, annotations, &lengths, &classes, config),
            |r| r.1.len(),
        )?;
        out.report = Some(report);
        out.curves = curves;
    }

    let video_frames: u64 = lengths.values().map(|&l| u64::from(l)).sum();
    let wall: f64 = clock.timings.iter().map(|t| t.wall_seconds).sum();
    out.timing = Some(TimingReport {
        stages: clock.timings,
        wall_seconds: wall,
        video_frames,
        video_fps: config.video_fps,
        real_time_factor: rtf(video_frames, config.video_fps, wall),
    });

    if let Some(dir) = out_dir {
        persist(&out, stages, dir)?;
    }
    Ok(out)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidRecord(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// File names of persisted stage outputs.
pub mod files {
    pub const TRACKED: &str = "tracked.jsonl";
    pub const PROPOSALS: &str = "proposals.jsonl";
    pub const THRESHOLDS: &str = "thresholds.json";
    pub const FILTERED: &str = "filtered.jsonl";
    pub const SCORED: &str = "scored.jsonl";
    pub const INSTANCES: &str = "instances.jsonl";
    pub const MERGED: &str = "merged.jsonl";
    pub const REPORT: &str = "report.jsonl";
    pub const CURVES: &str = "det-curves.jsonl";
    pub const TIMING: &str = "timing.json";
}

fn persist(out: &PipelineOutput, stages: &[Stage], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if stages.contains(&Stage::Track) {
        write_records(&out.detections, dir.join(files::TRACKED))?;
    }
    write_records(&out.proposals, dir.join(files::PROPOSALS))?;
    if let Some(t) = &out.thresholds {
        write_json(t, &dir.join(files::THRESHOLDS))?;
    }
    if let Some(f) = &out.filtered {
        write_records(f, dir.join(files::FILTERED))?;
    }
    write_records(&out.scored, dir.join(files::SCORED))?;
    write_records(&out.instances, dir.join(files::INSTANCES))?;
    if let Some(m) = &out.merged {
        write_records(m, dir.join(files::MERGED))?;
    }
    if let Some(r) = &out.report {
        write_records(std::iter::once(r), dir.join(files::REPORT))?;
        write_records(&out.curves, dir.join(files::CURVES))?;
    }
    if let Some(t) = &out.timing {
        write_json(t, &dir.join(files::TIMING))?;
    }
    Ok(())
}

/// Synthetic load with roughly `detections` detections over `video_len`
/// frames: one object per `video_len / s_det` detections.
pub fn bench_scene(detections: usize, video_len: u32, config: &PipelineConfig, seed: u64) -> Result<Scene> {
    let per_object = (video_len / config.s_det).max(1) as usize;
    let objects = detections.div_ceil(per_object).max(1);
    let params = RandomSceneParams {
        frames: video_len,
        actors: objects,
        s_det: config.s_det,
        s_bg: config.s_bg,
        object_class: config.object_classes.first().cloned().unwrap_or_else(|| "person".into()),
        ..RandomSceneParams::default()
    };
    generate_scene(&random_scene("bench", &params, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub detections: usize,
    pub video_len: u32,
    pub timing: TimingReport,
}

/// Full chain with oracle scoring on a synthetic load; single-threaded.
pub fn bench(config: &PipelineConfig, detections: usize, video_len: u32, seed: u64) -> Result<BenchReport> {
    let scene = bench_scene(detections, video_len, config, seed)?;
    let count = scene.detections.len();
    let out = run_pipeline(config, PipelineInputs::from_scene(scene, "bench"), &Stage::ALL, None)?;
    Ok(BenchReport {
        detections: count,
        video_len,
        timing: out.timing.expect("timing is always recorded"),
    })
}
