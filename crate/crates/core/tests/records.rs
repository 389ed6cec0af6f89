use cubeprop::dedup::ActivityInstance;
use cubeprop::ingest::{read_records, write_records, ActivityAnnotation, DetectionRecord, MaskFrame};
use cubeprop::pipeline::{files, run_pipeline, PipelineInputs, Stage};
use cubeprop::scoring::ScoredCube;
use cubeprop::synth::{generate_scene, random_scene, RandomSceneParams};
use cubeprop::{Cube, PipelineConfig};

fn config() -> PipelineConfig {
    PipelineConfig {
        frame_width: 640.0,
        frame_height: 360.0,
        object_classes: vec!["person".into()],
        ..PipelineConfig::default()
    }
}

#[test]
fn scene_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&random_scene("rt", &RandomSceneParams::default(), 11)).unwrap();
    write_records(&scene.detections, dir.path().join("d.jsonl")).unwrap();
    write_records(&scene.annotations, dir.path().join("a.jsonl")).unwrap();
    write_records(&scene.masks, dir.path().join("m.jsonl")).unwrap();
    assert_eq!(read_records::<DetectionRecord>(dir.path().join("d.jsonl")).unwrap(), scene.detections);
    assert_eq!(read_records::<ActivityAnnotation>(dir.path().join("a.jsonl")).unwrap(), scene.annotations);
    assert_eq!(read_records::<MaskFrame>(dir.path().join("m.jsonl")).unwrap(), scene.masks);
}

#[test]
fn persisted_outputs_match_memory() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&random_scene("rt", &RandomSceneParams::default(), 12)).unwrap();
    let out = run_pipeline(&config(), PipelineInputs::from_scene(scene, "rt"), &Stage::ALL, Some(dir.path())).unwrap();
    let read = |name: &str| dir.path().join(name);
    assert_eq!(read_records::<DetectionRecord>(read(files::TRACKED)).unwrap(), out.detections);
    assert_eq!(read_records::<Cube>(read(files::PROPOSALS)).unwrap(), out.proposals);
    assert_eq!(read_records::<Cube>(read(files::FILTERED)).unwrap(), out.filtered.unwrap());
    assert_eq!(read_records::<ScoredCube>(read(files::SCORED)).unwrap(), out.scored);
    assert_eq!(read_records::<ActivityInstance>(read(files::INSTANCES)).unwrap(), out.instances);
    assert_eq!(read_records::<ActivityInstance>(read(files::MERGED)).unwrap(), out.merged.unwrap());
}

#[test]
fn resuming_from_tracked_file_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&random_scene("rt", &RandomSceneParams::default(), 13)).unwrap();
    let inputs = PipelineInputs::from_scene(scene, "rt");
    let whole = run_pipeline(&config(), inputs.clone(), &Stage::ALL, Some(dir.path())).unwrap();

    let tracked = read_records::<DetectionRecord>(dir.path().join(files::TRACKED)).unwrap();
    let resumed_inputs = PipelineInputs { detections: tracked, ..inputs };
    let rest: Vec<Stage> = Stage::ALL.into_iter().filter(|&s| s != Stage::Track).collect();
    let resumed = run_pipeline(&config(), resumed_inputs, &rest, None).unwrap();
    assert_eq!(resumed.scored, whole.scored);
    assert_eq!(resumed.instances, whole.instances);
    assert_eq!(resumed.report, whole.report);
}
