use std::path::Path;
use std::process::Command;

use jumpflow::config::AppConfig;
use jumpflow::corpus::{read_corpus, write_checkpoint};
use jumpflow::dynamics::{MarkSpace, Model, ModelConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jumpflow"))
}

#[test]
fn dump_defaults_roundtrips_through_the_parser() {
    let out = bin().args(["config", "--dump-defaults"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let config: AppConfig = toml::from_str(&text).unwrap();
    config.validate().unwrap();
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in ["configs/hawkes_e.toml", "configs/marks_rv.toml"] {
        let config = AppConfig::from_path(&root.join(name)).unwrap();
        config.validate().unwrap();
    }
}

#[test]
fn generate_is_deterministic_and_supports_empty_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for path in [&a, &b] {
        let out = bin()
            .args([
                "generate", "poisson", "--lambda0", "1.0", "--count", "3", "--window", "0", "10",
                "--seed", "7", "--out",
            ])
            .arg(path)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(a.with_file_name("a.jsonl.manifest.json").exists());

    let empty = dir.path().join("empty.jsonl");
    let out = bin()
        .args([
            "generate", "poisson", "--lambda0", "1.0", "--count", "0", "--out",
        ])
        .arg(&empty)
        .output()
        .unwrap();
    assert!(out.status.success());
    let (corpus, _) = read_corpus(&empty).unwrap();
    assert!(corpus.sequences.is_empty());
    assert_eq!(corpus.header.format_version, 1);
}

#[test]
fn invalid_split_fractions_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    assert!(bin()
        .args([
            "generate", "poisson", "--lambda0", "1.0", "--count", "2", "--window", "0", "5",
            "--out",
        ])
        .arg(&corpus)
        .status()
        .unwrap()
        .success());
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[train]\nsplit = [0.5, 0.2, 0.2]\n").unwrap();
    let out = bin()
        .arg("train")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn tiny_checkpoint(path: &Path) {
    let model = Model::new(ModelConfig {
        n_internal: 2,
        n_memory: 2,
        hidden_flow: vec![4],
        hidden_decay: vec![4],
        hidden_jump: vec![4],
        hidden_intensity: vec![4],
        mark_space: MarkSpace::Discrete { num_types: 1 },
    })
    .unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(11);
    let params = model.init_params(&mut rng);
    write_checkpoint(path, &model, &params).unwrap();
}

#[test]
fn simulate_with_zero_length_window_yields_empty_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.json");
    tiny_checkpoint(&ckpt);
    let out_path = dir.path().join("sim.jsonl");
    let out = bin()
        .arg("simulate")
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--window", "2", "2", "--count", "3", "--seed", "1", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (corpus, _) = read_corpus(&out_path).unwrap();
    assert_eq!(corpus.sequences.len(), 3);
    assert!(corpus.sequences.iter().all(|s| s.is_empty()));
}

#[test]
fn eval_writes_trace_csv_with_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    assert!(bin()
        .args([
            "generate", "poisson", "--lambda0", "1.0", "--count", "2", "--window", "0", "5",
            "--out",
        ])
        .arg(&corpus)
        .status()
        .unwrap()
        .success());
    let ckpt = dir.path().join("ckpt.json");
    tiny_checkpoint(&ckpt);
    let traces = dir.path().join("traces");
    let out = bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--corpus")
        .arg(&corpus)
        .args(["--mape", "--grid-points", "20"])
        .arg("--trace-dir")
        .arg(&traces)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..2 {
        let csv = std::fs::read_to_string(traces.join(format!("trace_{i:04}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,lambda_model,lambda_gt"));
        assert_eq!(lines.count(), 20);
    }
    assert!(dir.path().join("eval_manifest.json").exists());
}

#[test]
fn thread_cap_env_var_is_accepted() {
    let out = bin()
        .env("JUMPFLOW_THREADS", "1")
        .args(["config", "--dump-defaults"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
