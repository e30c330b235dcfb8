use std::path::Path;

use clap::Parser;
use lcot_cli::{parse_grid, resolve_config, run_command, Cli};

const TINY: &str = r#"
seed = 5
[sim]
train_per_category = 2
val_per_category = 1
[codec]
V = 32
iters = 5
[model]
d_model = 16
layers = 1
heads = 2
lwm_head_hidden = 16
max_branches = 2
[model.lwm]
n_agents = 8
d_lwm = 8
[train]
K = 2
B = 2
G = 2
[train.stage0]
steps = 2
batch = 4
[train.stage1]
steps = 2
batch = 4
[train.stage2]
steps = 1
groups_per_step = 1
[eval]
samples_per_clip = 2
"#;

fn run(dir: &Path, args: &[&str]) -> anyhow::Result<String> {
    let cfg = dir.join("cfg.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, TINY).unwrap();
    }
    let mut argv = vec!["lcot", "-q", "--out", dir.to_str().unwrap(), "--config", cfg.to_str().unwrap()];
    argv.extend_from_slice(args);
    run_command(&Cli::try_parse_from(argv)?)
}

fn newest_run(dir: &Path, prefix: &str) -> std::path::PathBuf {
    let mut runs: Vec<_> = std::fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .collect();
    runs.sort_by_key(|p| std::fs::metadata(p).unwrap().modified().unwrap());
    runs.pop().unwrap()
}

#[test]
fn flags_override_config() {
    let cli = Cli::try_parse_from(["lcot", "--seed", "9", "--K", "3", "--B", "1", "eval"]).unwrap();
    let cfg = resolve_config(&cli.common).unwrap();
    assert_eq!((cfg.seed, cfg.train.k, cfg.train.b), (9, 3, 1));
    let bad = Cli::try_parse_from(["lcot", "--K", "7", "eval"]).unwrap();
    assert!(resolve_config(&bad.common).unwrap_err().to_string().contains("K*10 <= 64"));
    assert!(Cli::try_parse_from(["lcot", "--mode", "cot", "eval"]).is_err());
}

#[test]
fn grid_parsing() {
    assert_eq!(parse_grid("1x2, 5X1").unwrap(), vec![(1, 2), (5, 1)]);
    assert!(parse_grid("3").is_err());
}

#[test]
fn missing_prerequisites_name_file_and_command() {
    let d = tempfile::tempdir().unwrap();
    let e = run(d.path(), &["fit-codebook"]).unwrap_err().to_string();
    assert!(e.contains("clips_train.bin") && e.contains("lcot gen-data"), "{e}");
    run(d.path(), &["gen-data"]).unwrap();
    let e = run(d.path(), &["train-stage0"]).unwrap_err().to_string();
    assert!(e.contains("codebook.bin") && e.contains("lcot fit-codebook"), "{e}");
    run(d.path(), &["fit-codebook"]).unwrap();
    let e = run(d.path(), &["train-stage1"]).unwrap_err().to_string();
    assert!(e.contains("stage0_lwm0.ckpt") && e.contains("train-stage0"), "{e}");
    let e = run(d.path(), &["eval", "--rl"]).unwrap_err().to_string();
    assert!(e.contains("stage2_latent-cot_gt_k2_b2.ckpt") && e.contains("train-stage2"), "{e}");
}

#[test]
fn existing_artifacts_need_force() {
    let d = tempfile::tempdir().unwrap();
    run(d.path(), &["gen-data"]).unwrap();
    let e = run(d.path(), &["gen-data"]).unwrap_err().to_string();
    assert!(e.contains("--force"), "{e}");
    run(d.path(), &["gen-data", "--force"]).unwrap();
}

#[test]
fn staged_pipeline_produces_artifacts_and_reports() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    run(p, &["gen-data"]).unwrap();
    assert!(p.join("clips_train.bin").exists() && p.join("clips_val.bin").exists());
    run(p, &["fit-codebook"]).unwrap();
    assert!(p.join("codebook.bin").exists());
    run(p, &["train-stage0"]).unwrap();
    assert!(p.join("stage0_none.ckpt").exists() && p.join("stage0_lwm0.ckpt").exists());
    let r0 = newest_run(p, "train-stage0");
    assert!(r0.join("config.toml").exists());
    let csv = std::fs::read_to_string(r0.join("stage0_none.csv")).unwrap();
    assert!(csv.starts_with("step,"), "{csv}");
    run(p, &["train-stage1"]).unwrap();
    assert!(p.join("stage1_k2_b2.ckpt").exists());
    run(p, &["train-stage2"]).unwrap();
    assert!(p.join("stage2_latent-cot_gt_k2_b2.ckpt").exists());
    run(p, &["train-stage2", "--mode", "none"]).unwrap();

    let mut reports = Vec::new();
    for mode in ["none", "latent-cot"] {
        let s = run(p, &["eval", "--mode", mode]).unwrap();
        assert!(s.contains("ade"), "{s}");
        let json = std::fs::read_to_string(newest_run(p, "eval").join("metrics.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<_> = v["aggregate"].as_object().unwrap().keys().cloned().collect();
        reports.push((v["label"].as_str().unwrap().to_string(), keys));
    }
    assert_ne!(reports[0].0, reports[1].0);
    assert_eq!(reports[0].1, reports[1].1);
    assert_eq!(reports[0].1.len(), 6);
    run(p, &["eval", "--rl", "--mode", "none"]).unwrap();

    run(p, &["analyze-reasoning"]).unwrap();
    let csv = std::fs::read_to_string(newest_run(p, "analyze-reasoning").join("reasoning.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    run(p, &["train-stage1", "--K", "1"]).unwrap();
    run(p, &["sweep", "--grid", "1x2,2x2"]).unwrap();
    let csv = std::fs::read_to_string(newest_run(p, "sweep").join("sweep.csv")).unwrap();
    let rows: Vec<_> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("0,0,0,"));
    let e = run(p, &["sweep", "--grid", "3x2"]).unwrap_err().to_string();
    assert!(e.contains("stage1_k3_b2.ckpt"), "{e}");
}

#[test]
fn eval_refuses_foreign_codebook() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for c in ["gen-data", "fit-codebook", "train-stage0"] {
        run(p, &[c]).unwrap();
    }
    run(p, &["eval", "--mode", "none"]).unwrap();
    std::fs::write(p.join("cfg.toml"), TINY.replace("V = 32", "V = 24")).unwrap();
    run(p, &["fit-codebook", "--force"]).unwrap();
    let e = run(p, &["eval", "--mode", "none"]).unwrap_err().to_string();
    assert!(e.contains("codebook"), "{e}");
}
