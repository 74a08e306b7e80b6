mod common;

use std::fs;
use std::path::Path;

use mcnet_core::pipeline::*;
use mcnet_core::{backbone::BackboneConfig, McError, McNet, ModelConfig};

fn config(data: &Path, ckpt: &Path) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        input_size: 64,
        backbone_preset: "tiny".into(),
        dataset_root: data.to_path_buf(),
        checkpoint_dir: ckpt.to_path_buf(),
        ..TrainConfig::default()
    }
}

#[test]
fn seeded_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(&dir.path().join("data"), 4, 48, 48, 2);
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let cfg = config(&dir.path().join("data"), &dir.path().join(run));
        let s = train::<f32>(&cfg).unwrap();
        assert_eq!(s.steps, 4);
        assert!(s.group_sizes.0 > 0 && s.group_sizes.1 > 0);
        logs.push(fs::read_to_string(s.log_path).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[0].lines().next().unwrap(), LOG_HEADER);
    assert_eq!(logs[0].lines().count(), 5);
    for row in read_log(&dir.path().join("a").join(LOG_FILE)).unwrap() {
        assert!((row.l_rgb + row.l_thermal + row.l_fusion - row.total).abs() < 1e-9);
    }
    assert!(dir.path().join("a/epoch_001.safetensors").exists());
    assert!(dir.path().join("a/epoch_002.safetensors").exists());
}

#[test]
fn interrupted_and_resumed_run_matches_an_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_dataset(&data, 6, 48, 48, 3);
    let full = train::<f32>(&config(&data, &dir.path().join("full"))).unwrap();
    assert_eq!(full.steps, 6);

    let mut cfg = config(&data, &dir.path().join("split"));
    cfg.stop_after_steps = Some(4);
    let first = train::<f32>(&cfg).unwrap();
    assert_eq!(first.steps, 4);
    let resumed = resume::<f32>(&first.checkpoint, None).unwrap();
    assert_eq!(resumed.steps, 6);

    assert_eq!(fs::read_to_string(&full.log_path).unwrap(), fs::read_to_string(&resumed.log_path).unwrap());
    let (a, ea) = load_checkpoint::<f32>(&full.checkpoint).unwrap();
    let (b, eb) = load_checkpoint::<f32>(&resumed.checkpoint).unwrap();
    assert_eq!((ea, eb), (2, 2));
    assert_eq!(a.model.state(), b.model.state());
    assert_eq!(a.optim.buffers, b.optim.buffers);
}

#[test]
fn checkpoint_keeps_the_recipe_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_dataset(&data, 2, 48, 48, 4);
    let mut cfg = config(&data, &dir.path().join("ck"));
    cfg.epochs = 1;
    let s = train::<f32>(&cfg).unwrap();
    let (state, epoch) = load_checkpoint::<f32>(&s.checkpoint).unwrap();
    assert_eq!(epoch, 1);
    let c = state.config;
    assert_eq!((c.lr_backbone, c.lr_other, c.momentum, c.weight_decay), (0.005, 0.05, 0.9, 0.0005));
    assert_eq!(c.batch_size, 2);
    assert!(state.optim.buffers.len() > 100);
}

#[test]
fn triangular_schedule() {
    assert_eq!(lr_schedule(0, 100, 0.05).unwrap(), 0.0);
    assert!((lr_schedule(25, 100, 0.05).unwrap() - 0.025).abs() < 1e-15);
    assert_eq!(lr_schedule(50, 100, 0.05).unwrap(), 0.05);
    assert!((lr_schedule(75, 100, 0.05).unwrap() - 0.025).abs() < 1e-15);
    assert_eq!(lr_schedule(100, 100, 0.05).unwrap(), 0.0);
    assert!(lr_schedule(101, 100, 0.05).is_err());
}

#[test]
fn predictions_are_written_at_original_size_and_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_dataset(&data, 5, 40, 52, 5);
    let model = McNet::<f32>::new(&ModelConfig::new(BackboneConfig::tiny()), 0).unwrap();
    let a = predict(&model, &data, &dir.path().join("a"), true).unwrap();
    assert!(a.failed.is_empty());
    assert_eq!(a.written.len(), 15);
    let b = predict(&model, &data, &dir.path().join("b"), false).unwrap();
    assert_eq!(b.written.len(), 5);
    for p in &b.written {
        let img = image::open(p).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (52, 40));
        let other = dir.path().join("a").join(p.file_name().unwrap());
        assert_eq!(fs::read(p).unwrap(), fs::read(other).unwrap());
    }
}

#[test]
fn evaluation_report_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_dataset(&data, 3, 32, 32, 6);
    let csv = dir.path().join("report.csv");
    let report = evaluate(&data.join("GT"), &data.join("GT"), &csv, "synthetic", "oracle").unwrap();
    assert!((report.f_max - 1.0).abs() < 1e-12);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("synthetic,oracle,"));
    let files = write_curves(&report, &dir.path().join("curves"), "synthetic").unwrap();
    for p in [&files.pr_plot, &files.f_plot] {
        assert_eq!(image::open(p).unwrap().to_luma8().dimensions(), (PLOT_WIDTH, PLOT_HEIGHT));
    }
    assert_eq!(fs::read_to_string(&files.csv).unwrap().lines().count(), 257);
}

#[test]
fn feature_dumps_cover_requested_taps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_dataset(&data, 2, 32, 32, 7);
    let model = McNet::<f32>::new(&ModelConfig::new(BackboneConfig::tiny()), 0).unwrap();
    let names = tap_names(&model).unwrap();
    assert!(names.contains(&"SDC_in".to_string()));
    let out = dir.path().join("feat");
    let all = dump_features(&model, &data, &out, &[], 1).unwrap();
    assert_eq!(all.len(), names.len());
    let some = dump_features(&model, &data, &out, &["LF_rgb2".to_string()], 5).unwrap();
    assert_eq!(some.len(), 2);
    let img = image::open(&some[0]).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (4 * 16, 4 * 16));
    assert!(matches!(dump_features(&model, &data, &out, &["nope".to_string()], 1), Err(McError::Config(_))));
    assert!(describe(&model).unwrap().starts_with("variant=proposed "));
}

#[test]
fn configuration_errors_are_reported() {
    assert!(matches!(TrainConfig::parse("epochs = 0"), Ok(c) if c.validate().is_err()));
    assert!(matches!(TrainConfig::parse("colour = red"), Err(McError::Config(_))));
    assert!(matches!(TrainConfig::parse("epochs = many"), Err(McError::Config(_))));
    let c = TrainConfig::parse("# recipe\nbatch_size = 4 # small\nattention = cross\n").unwrap();
    assert_eq!(c.batch_size, 4);
    assert_eq!(c.model_config().unwrap().variant_name(), "cross");
    let mut c = TrainConfig { input_size: 100, ..TrainConfig::default() };
    assert!(c.validate().is_err());
    c.input_size = 384;
    c.dtype = "f16".into();
    assert!(c.validate().is_err());
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir.path().join("none"), &dir.path().join("ck"));
    assert!(matches!(train::<f32>(&cfg), Err(McError::Dataset(_))));
}
