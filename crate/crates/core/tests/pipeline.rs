mod common;

use std::fs;
use std::process::Command;
use std::time::Instant;

use cloudlstm::cli::{
    self, ablation_dir, cmd_ablate, cmd_evaluate, cmd_generate, cmd_train, cmd_visualize, RunConfig, CONFIG_FILE,
    FINAL_CHECKPOINT, METRICS_FILE,
};
use cloudlstm::synthdata::{generate_scene, read_dataset, Partition};

fn generated(root: &std::path::Path) -> std::path::PathBuf {
    let data = root.join("data");
    cmd_generate(&common::tiny_config(&data), &mut std::io::sink()).unwrap();
    data
}

#[test]
fn generate_is_deterministic_and_reports_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    let cfg = common::tiny_config(&dir.path().join("a"));
    cmd_generate(&cfg, &mut log).unwrap();
    cmd_generate(&common::tiny_config(&dir.path().join("b")), &mut std::io::sink()).unwrap();
    let a = common::read_tree(&dir.path().join("a"));
    let b = common::read_tree(&dir.path().join("b"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        if !k.ends_with(CONFIG_FILE) {
            assert_eq!(v, &b[k], "{}", k.display());
        }
    }

    let scene = generate_scene(&cfg.scene).unwrap();
    let text = String::from_utf8(log).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).take(cfg.scene.frames).collect();
    assert_eq!(rows.len(), cfg.scene.frames);
    for (t, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split('\t').collect();
        let cloudy: usize = cols[3].parse().unwrap();
        let counted = scene.mask.frame_data(t).iter().filter(|&&v| v == 1.0).count();
        assert_eq!(cloudy, counted, "frame {}", t + 1);
    }
}

#[test]
fn desk_scale_generation_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let ds = cmd_generate(&cfg, &mut std::io::sink()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "{secs:.1} s");
    assert_eq!(ds.partition(Partition::Train).count(), 18);
    assert_eq!(ds.partition(Partition::Valid).count(), 9);
}

#[test]
fn zero_learning_rate_gives_flat_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(&dir.path().join("run"));
    cfg.data = Some(generated(dir.path()));
    cfg.train.learning_rate = 0.0;
    cfg.train.epochs = 3;
    let history = cmd_train(&cfg, &mut std::io::sink()).unwrap();
    assert_eq!(history.len(), 3);
    assert!(history.iter().all(|m| m.train_loss == history[0].train_loss));
    let log = fs::read_to_string(cfg.out.join(METRICS_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn train_writes_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(&dir.path().join("run"));
    cfg.data = Some(generated(dir.path()));
    cfg.train.epochs = 4;
    cfg.checkpoint_every = 2;
    cmd_train(&cfg, &mut std::io::sink()).unwrap();
    let mut names: Vec<String> = fs::read_dir(cfg.out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["epoch_0002.clck", "epoch_0004.clck"]);
    assert!(cfg.out.join(FINAL_CHECKPOINT).exists());
}

#[test]
fn ablation_writes_one_log_per_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(&dir.path().join("ablate"));
    cfg.data = Some(generated(dir.path()));
    let runs = cmd_ablate(&cfg, &mut std::io::sink()).unwrap();
    assert_eq!(runs.len(), cfg.thresholds.len());
    assert!(runs.windows(2).all(|w| w[0].frames > w[1].frames));
    for (i, r) in runs.iter().enumerate() {
        assert_eq!(r.seed, cfg.train.seed + i as u64);
        let log = fs::read_to_string(ablation_dir(&cfg.out, i).join(METRICS_FILE)).unwrap();
        assert_eq!(log.lines().count(), cfg.train.epochs);
    }
    let summary = fs::read_to_string(cfg.out.join("ablation.tsv")).unwrap();
    assert_eq!(summary.lines().count(), runs.len() + 1);
}

#[test]
fn evaluate_counts_every_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(dir.path());
    let mut cfg = common::tiny_config(&dir.path().join("train"));
    cfg.data = Some(data.clone());
    cmd_train(&cfg, &mut std::io::sink()).unwrap();
    let mut eval = common::tiny_config(&dir.path().join("eval"));
    eval.data = Some(data.clone());
    eval.checkpoint = Some(cfg.out.join(FINAL_CHECKPOINT));
    let m = cmd_evaluate(&eval, &mut std::io::sink()).unwrap();
    let ds = read_dataset(&data).unwrap();
    let pixels: usize = ds
        .partition(Partition::Eval)
        .map(|t| t.labels.height() * t.labels.width())
        .sum();
    assert_eq!(m.total() as usize, pixels);
    let report = fs::read_to_string(eval.out.join("evaluation.txt")).unwrap();
    assert!(report.contains(&format!("{:.6}", m.overall_accuracy())));
}

#[test]
fn visualize_channels_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(dir.path());
    let mut cfg = common::tiny_config(&dir.path().join("train"));
    cfg.data = Some(data.clone());
    cmd_train(&cfg, &mut std::io::sink()).unwrap();

    let mut viz = common::tiny_config(&dir.path().join("viz"));
    viz.data = Some(data);
    viz.checkpoint = Some(cfg.out.join(FINAL_CHECKPOINT));
    viz.channels = vec![0, 2, 3];
    let panels = cmd_visualize(&viz, &mut std::io::sink()).unwrap();
    assert_eq!(panels.len(), 3);
    assert!(panels[1].ends_with("tile0_cell2_t1-8.pgm"));
    let report = fs::read_to_string(viz.out.join("sensitivity.tsv")).unwrap();
    assert_eq!(report.lines().count(), cfg.hidden);

    viz.channels = vec![cfg.hidden];
    let err = cmd_visualize(&viz, &mut std::io::sink()).unwrap_err().to_string();
    assert!(err.contains("channel"), "{err}");
}

#[test]
fn resolved_config_replays_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(dir.path());
    let first = dir.path().join("first");
    let args = [
        "cloudlstm",
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--set",
        "epochs=2",
        "--set",
        "hidden=3",
        "--set",
        "batch_size=1",
    ];
    cli::run(args, &mut std::io::sink()).unwrap();
    let second = dir.path().join("second");
    let resolved = first.join(CONFIG_FILE);
    let replay = [
        "cloudlstm",
        "train",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ];
    cli::run(replay, &mut std::io::sink()).unwrap();
    for name in [METRICS_FILE, FINAL_CHECKPOINT] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn binary_exits_nonzero_and_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_cloudlstm");
    let out = Command::new(bin)
        .args(["generate", "--out"])
        .arg(dir.path())
        .args(["--set", "epochs=lots"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));

    let out = Command::new(bin)
        .args(["train", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data"));

    let out = Command::new(bin)
        .args(["generate", "--out"])
        .arg(dir.path().join("g"))
        .args(["--set", "tile_size=7"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tile_size"));

    let out = Command::new(bin).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}
