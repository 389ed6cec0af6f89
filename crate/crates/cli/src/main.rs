use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use cubeprop::dedup::{deduplicate, merge_adjacent, ActivityInstance};
use cubeprop::evaluation::{evaluate, VideoLengths};
use cubeprop::filtering::ForegroundThreshold;
use cubeprop::ingest::{parse_config, read_records, write_records, ActivityAnnotation, DetectionRecord, MaskFrame};
use cubeprop::labeling::proposal_stats;
use cubeprop::pipeline::{
    bench, foreground_filter, infer_video_lengths, label_proposals, propose_all, resolve_activity_classes,
    run_pipeline, PipelineInputs, ScoreSource, Stage, ThresholdSource,
};
use cubeprop::scoring::{fuse_scores, join_external_scores, load_external_scores, oracle_scores, ScoredCube};
use cubeprop::synth::{generate_scene, SceneSpec};
use cubeprop::tracking::greedy_iou_track;
use cubeprop::{Cube, PipelineConfig};

#[derive(Parser)]
#[command(name = "cubeprop", version, about = "Overlapping cube proposals for activity detection")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for configuration keys; applied on top of `--config`.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML configuration file
    #[arg(long, global = true, help_heading = "Configuration")]
    config: Option<PathBuf>,
    /// Detection stride in frames
    #[arg(long, global = true, help_heading = "Configuration")]
    s_det: Option<u32>,
    /// Proposal duration in frames
    #[arg(long, global = true, help_heading = "Configuration")]
    d_prop: Option<u32>,
    /// Proposal stride in frames
    #[arg(long, global = true, help_heading = "Configuration")]
    s_prop: Option<u32>,
    /// Proposal box enlargement rate
    #[arg(long, global = true, help_heading = "Configuration")]
    r_enl: Option<f64>,
    /// Foreground mask stride in frames
    #[arg(long, global = true, help_heading = "Configuration")]
    s_bg: Option<u32>,
    /// Fraction of positives the foreground filter may drop
    #[arg(long, global = true, help_heading = "Configuration")]
    p_pos: Option<f64>,
    /// IoU above which a proposal is positive
    #[arg(long, global = true, help_heading = "Configuration")]
    s_high: Option<f64>,
    /// IoU at or below which a proposal is negative
    #[arg(long, global = true, help_heading = "Configuration")]
    s_low: Option<f64>,
    /// Score above which adjacent instances merge
    #[arg(long, global = true, help_heading = "Configuration")]
    s_merg: Option<f64>,
    /// Merged instances this long or shorter are dropped
    #[arg(long, global = true, help_heading = "Configuration")]
    l_merg: Option<u32>,
    /// Object classes that seed proposals
    #[arg(long, global = true, help_heading = "Configuration", value_delimiter = ',')]
    object_classes: Option<Vec<String>>,
    /// Activity classes, in score-vector order
    #[arg(long, global = true, help_heading = "Configuration", value_delimiter = ',')]
    activity_classes: Option<Vec<String>>,
    /// Frames of overlap needed to match a reference
    #[arg(long, global = true, help_heading = "Configuration")]
    min_temporal_overlap: Option<u32>,
    /// Frame rate used for real-time factors
    #[arg(long, global = true, help_heading = "Configuration")]
    video_fps: Option<f64>,
    /// Frame width in pixels
    #[arg(long, global = true, help_heading = "Configuration")]
    frame_width: Option<f64>,
    /// Frame height in pixels
    #[arg(long, global = true, help_heading = "Configuration")]
    frame_height: Option<f64>,
    /// Minimum IoU to continue a track
    #[arg(long, global = true, help_heading = "Configuration")]
    track_iou_gate: Option<f64>,
    /// Frames a track may go unseen
    #[arg(long, global = true, help_heading = "Configuration")]
    track_max_gap: Option<u32>,
    /// Frames sampled per classifier clip
    #[arg(long, global = true, help_heading = "Configuration")]
    clip_frames: Option<usize>,
    /// False-alarm limit of the nAUDC integral
    #[arg(long, global = true, help_heading = "Configuration")]
    naudc_limit: Option<f64>,
}

macro_rules! apply {
    ($args:expr, $cfg:expr, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => parse_config(p)?,
            None => PipelineConfig::default(),
        };
        apply!(
            self, cfg, s_det, d_prop, s_prop, r_enl, s_bg, p_pos, s_high, s_low, s_merg, l_merg, object_classes,
            activity_classes, video_fps, frame_width, frame_height, track_iou_gate, clip_frames, naudc_limit
        );
        if self.min_temporal_overlap.is_some() {
            cfg.min_temporal_overlap = self.min_temporal_overlap;
        }
        if self.track_max_gap.is_some() {
            cfg.track_max_gap = self.track_max_gap;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct LengthArgs {
    /// Video length as VIDEO=FRAMES; repeatable. Unlisted videos are inferred.
    #[arg(long = "video-len", value_parser = parse_length)]
    video_len: Vec<(String, u32)>,
}

impl LengthArgs {
    fn lengths(&self) -> VideoLengths {
        self.video_len.iter().cloned().collect()
    }
}

fn parse_length(s: &str) -> Result<(String, u32), String> {
    let (video, frames) = s.split_once('=').ok_or("expected VIDEO=FRAMES")?;
    let frames = frames.parse().map_err(|e| format!("bad frame count: {e}"))?;
    Ok((video.to_string(), frames))
}

#[derive(Subcommand)]
enum Command {
    /// Assign track ids to detections with a greedy IoU tracker
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate cube proposals from tracked detections
    Propose {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        lengths: LengthArgs,
    },
    /// Score proposals by foreground content and drop background ones
    Filter {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON map of object class to threshold (null keeps everything)
        #[arg(long, conflicts_with = "annotations")]
        thresholds: Option<PathBuf>,
        /// Calibrate thresholds from proposals labeled against these annotations
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Where to write the thresholds used
        #[arg(long)]
        thresholds_out: Option<PathBuf>,
    },
    /// Label proposals positive, negative or unassigned against annotations
    AssignLabels {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach per-class scores to proposals
    Score {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use assigned labels as scores
        #[arg(long, group = "source")]
        oracle: bool,
        /// Join scores from a scored-proposals file
        #[arg(long, group = "source")]
        from: Option<PathBuf>,
        /// Late-fuse several score files (TOML with [[model]] path, weights)
        #[arg(long, group = "source")]
        fuse: Option<PathBuf>,
        /// Annotations used to derive activity classes when none are configured
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Turn overlapping scored proposals into non-overlapping instances
    Dedup {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Join abutting confident instances for the strict setting
    MergeAdjacent {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// DET curves, nAUDC, Pmiss at false-alarm budgets and tube mAP
    Evaluate {
        #[arg(long)]
        instances: PathBuf,
        /// Instances for mAP; defaults to --instances
        #[arg(long)]
        strict_instances: Option<PathBuf>,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plot-ready DET curve points
        #[arg(long)]
        curves: Option<PathBuf>,
        #[command(flatten)]
        lengths: LengthArgs,
    },
    /// Render a synthetic scene spec into detections, annotations and masks
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time the full chain on a synthetic load
    Bench {
        #[arg(long, default_value_t = 10_000)]
        detections: usize,
        #[arg(long, default_value_t = 9_000)]
        video_len: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a chain of stages and persist every output
    Run {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated stages in canonical order
        #[arg(long, value_delimiter = ',', default_value = "track,propose,filter,score,dedup,merge-adjacent,evaluate")]
        stages: Vec<Stage>,
        /// External scores instead of the oracle
        #[arg(long, conflicts_with = "fuse")]
        scores: Option<PathBuf>,
        /// Late-fuse several score files (TOML with [[model]] path, weights)
        #[arg(long)]
        fuse: Option<PathBuf>,
        /// Fixed foreground thresholds instead of calibration
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[command(flatten)]
        lengths: LengthArgs,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FuseSpec {
    model: Vec<FuseModel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FuseModel {
    path: PathBuf,
    weights: Vec<f64>,
}

fn read_fuse_spec(path: &Path) -> Result<(Vec<Vec<ScoredCube>>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| cubeprop::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let spec: FuseSpec = toml::from_str(&text).with_context(|| format!("invalid fuse spec {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut sets = Vec::new();
    let mut weights = Vec::new();
    for m in spec.model {
        sets.push(read_records::<ScoredCube>(base.join(&m.path))?);
        weights.push(m.weights);
    }
    Ok((sets, weights))
}

fn read_thresholds(path: &Path) -> Result<BTreeMap<String, ForegroundThreshold>> {
    let text = std::fs::read_to_string(path).map_err(|e| cubeprop::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text).with_context(|| format!("invalid thresholds file {}", path.display()))?)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| cubeprop::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn read_optional<T: cubeprop::ingest::Record>(path: &Option<PathBuf>) -> Result<Vec<T>> {
    Ok(match path {
        Some(p) => read_records(p)?,
        None => Vec::new(),
    })
}

fn classes_or_fail(config: &PipelineConfig, annotations: &[ActivityAnnotation]) -> Result<Vec<String>> {
    let classes = resolve_activity_classes(config, annotations);
    if classes.is_empty() {
        bail!("no activity classes: set activity_classes or pass --annotations");
    }
    Ok(classes)
}

fn execute(cli: Cli) -> Result<()> {
    let config = cli.config.load()?;
    match cli.command {
        Command::Track { detections, out } => {
            let dets: Vec<DetectionRecord> = read_records(&detections)?;
            let tracked = greedy_iou_track(&dets, config.track_iou_gate, config.track_max_gap());
            write_records(&tracked, &out)?;
        }
        Command::Propose { detections, out, lengths } => {
            let dets: Vec<DetectionRecord> = read_records(&detections)?;
            let lengths = infer_video_lengths(&lengths.lengths(), &dets, config.s_det);
            write_records(&propose_all(&dets, &lengths, &config)?, &out)?;
        }
        Command::Filter {
            proposals,
            masks,
            out,
            thresholds,
            annotations,
            thresholds_out,
        } => {
            let mut cubes: Vec<Cube> = read_records(&proposals)?;
            let masks: Vec<MaskFrame> = read_records(&masks)?;
            let source = match (&thresholds, &annotations) {
                (Some(p), _) => ThresholdSource::Fixed(read_thresholds(p)?),
                (None, Some(a)) => {
                    let anns: Vec<ActivityAnnotation> = read_records(a)?;
                    label_proposals(&mut cubes, &anns, &config);
                    ThresholdSource::Calibrate
                }
                (None, None) => bail!("pass --thresholds or --annotations for calibration"),
            };
            let (kept, used) = foreground_filter(&mut cubes, &masks, &source, &config)?;
            log::info!("kept {} of {} proposals", kept.len(), cubes.len());
            write_records(&kept, &out)?;
            if let Some(p) = thresholds_out {
                write_json(&used, &p)?;
            }
        }
        Command::AssignLabels {
            proposals,
            annotations,
            out,
        } => {
            let mut cubes: Vec<Cube> = read_records(&proposals)?;
            let anns: Vec<ActivityAnnotation> = read_records(&annotations)?;
            label_proposals(&mut cubes, &anns, &config);
            let stats = proposal_stats(cubes.iter().filter_map(|c| c.labels.as_ref()));
            println!("{}", serde_json::to_string(&stats)?);
            write_records(&cubes, &out)?;
        }
        Command::Score {
            proposals,
            out,
            oracle,
            from,
            fuse,
            annotations,
        } => {
            let cubes: Vec<Cube> = read_records(&proposals)?;
            let anns: Vec<ActivityAnnotation> = read_optional(&annotations)?;
            let classes = classes_or_fail(&config, &anns)?;
            let scored = match (oracle, from, fuse) {
                (true, _, _) => oracle_scores(&cubes, &classes)?,
                (_, Some(p), _) => load_external_scores(&p, &cubes, classes.len())?,
                (_, _, Some(p)) => {
                    let (sets, weights) = read_fuse_spec(&p)?;
                    join_external_scores(&cubes, fuse_scores(&sets, &weights)?, classes.len())?
                }
                _ => bail!("pass one of --oracle, --from or --fuse"),
            };
            write_records(&scored, &out)?;
        }
        Command::Dedup { scored, out, annotations } => {
            let scored: Vec<ScoredCube> = read_records(&scored)?;
            let anns: Vec<ActivityAnnotation> = read_optional(&annotations)?;
            let classes = classes_or_fail(&config, &anns)?;
            write_records(&deduplicate(&scored, &classes, &config)?, &out)?;
        }
        Command::MergeAdjacent { instances, out } => {
            let inst: Vec<ActivityInstance> = read_records(&instances)?;
            write_records(&merge_adjacent(&inst, config.s_merg, config.l_merg)?, &out)?;
        }
        Command::Evaluate {
            instances,
            strict_instances,
            annotations,
            out,
            curves,
            lengths,
        } => {
            let loose: Vec<ActivityInstance> = read_records(&instances)?;
            let strict: Vec<ActivityInstance> = match &strict_instances {
                Some(p) => read_records(p)?,
                None => loose.clone(),
            };
            let anns: Vec<ActivityAnnotation> = read_records(&annotations)?;
            let classes = classes_or_fail(&config, &anns)?;
            let (report, det) = evaluate(&loose, &strict, &anns, &lengths.lengths(), &classes, &config)?;
            println!("mean nAUDC {:.4}, mAP {:.4}", report.mean_naudc, report.map.mean);
            write_records(std::iter::once(&report), &out)?;
            if let Some(p) = curves {
                write_records(&det, &p)?;
            }
        }
        Command::Simulate { spec, out_dir } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| cubeprop::Error::Io {
                path: spec.clone(),
                source: e,
            })?;
            let spec = SceneSpec::from_toml_str(&text)?;
            let scene = generate_scene(&spec)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| cubeprop::Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            write_records(&scene.detections, out_dir.join("detections.jsonl"))?;
            write_records(&scene.annotations, out_dir.join("annotations.jsonl"))?;
            write_records(&scene.masks, out_dir.join("masks.jsonl"))?;
            println!("{}={}", spec.video_id, scene.video_len);
        }
        Command::Bench {
            detections,
            video_len,
            seed,
            out,
        } => {
            let report = bench(&config, detections, video_len, seed)?;
            for s in &report.timing.stages {
                println!(
                    "{:<15} {:>9.4}s {:>12.0} records/s",
                    s.stage.name(),
                    s.wall_seconds,
                    s.records_per_second
                );
            }
            println!(
                "{} detections, {} frames, real-time factor {:.1}",
                report.detections, report.video_len, report.timing.real_time_factor
            );
            if let Some(p) = out {
                write_json(&report, &p)?;
            }
        }
        Command::Run {
            detections,
            annotations,
            masks,
            out_dir,
            stages,
            scores,
            fuse,
            thresholds,
            lengths,
        } => {
            let scores = match (scores, fuse) {
                (Some(p), _) => ScoreSource::External(read_records(&p)?),
                (_, Some(p)) => {
                    let (sets, weights) = read_fuse_spec(&p)?;
                    ScoreSource::Fused { sets, weights }
                }
                _ => ScoreSource::Oracle,
            };
            let thresholds = match thresholds {
                Some(p) => ThresholdSource::Fixed(read_thresholds(&p)?),
                None => ThresholdSource::Calibrate,
            };
            let inputs = PipelineInputs {
                detections: read_records(&detections)?,
                annotations: read_optional(&annotations)?,
                masks: read_optional(&masks)?,
                video_lengths: lengths.lengths(),
                scores,
                thresholds,
            };
            let out = run_pipeline(&config, inputs, &stages, Some(&out_dir))?;
            if let Some(t) = &out.timing {
                for s in &t.stages {
                    println!("{:<15} {:>9.4}s {:>8} -> {:<8}", s.stage.name(), s.wall_seconds, s.records_in, s.records_out);
                }
            }
            if let Some(r) = &out.report {
                println!("mean nAUDC {:.4}, mAP {:.4}", r.mean_naudc, r.map.mean);
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.downcast_ref::<cubeprop::Error>().is_some_and(cubeprop::Error::is_io) || e.downcast_ref::<std::io::Error>().is_some()
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
