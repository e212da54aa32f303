use std::path::Path;

use dynstruct::harness::{
    self, apply_override, export_history, read_metrics, read_series, Checkpoint, Experiment, ExperimentConfig, Split,
    CHECKPOINT_FILE, FORMAT_VERSION, METRICS_FILE,
};
use dynstruct::predictor::PredictionMode;
use dynstruct::Error;

fn config(experiment: &str, layers: usize, epochs: usize, out: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
experiment = "{experiment}"
out_dir = "{}"

[architecture]
layers = {layers}
units = 8

[train]
lambda = 2
batch_size = 32
max_epochs = {epochs}
loss_mode = "same-minibatch"
theta_init = 0.5
base_lr = 0.05
seed = 3
eval_interval = 2
log_interval = 7
{extra}

[prediction]
num_samples = 20

[data]
source = "synthetic"
kind = "xor-grid"
n_train = 320
n_test = 200
"#,
        out.display()
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");

    let full = config("layer-select", 4, 6, &straight, "max_iterations = 45");
    harness::run(&full, None).unwrap();

    // 25 iterations stops mid-epoch (10 per epoch).
    let first = config("layer-select", 4, 6, &split, "max_iterations = 25");
    harness::run(&first, None).unwrap();
    let second = config("layer-select", 4, 6, &split, "max_iterations = 45");
    harness::run(&second, Some(&split.join(CHECKPOINT_FILE))).unwrap();

    assert_eq!(read(&straight.join(METRICS_FILE)), read(&split.join(METRICS_FILE)));
    let a = Checkpoint::load(&straight.join(CHECKPOINT_FILE)).unwrap();
    let b = Checkpoint::load(&split.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.state.iteration, 45);

    // Continue both to the end of training.
    let rest_a = config("layer-select", 4, 6, &straight, "");
    let rest_b = config("layer-select", 4, 6, &split, "");
    harness::run(&rest_a, Some(&straight.join(CHECKPOINT_FILE))).unwrap();
    harness::run(&rest_b, Some(&split.join(CHECKPOINT_FILE))).unwrap();
    assert_eq!(read(&straight.join(METRICS_FILE)), read(&split.join(METRICS_FILE)));
    let rows = read_metrics(&straight.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.last().unwrap().iteration, 60);
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    harness::run(&config("skip-drop", 3, 2, &a, ""), None).unwrap();
    harness::run(&config("skip-drop", 3, 2, &b, ""), None).unwrap();
    assert_eq!(read(&a.join(METRICS_FILE)), read(&b.join(METRICS_FILE)));
    let (ca, cb) = (
        Checkpoint::load(&a.join(CHECKPOINT_FILE)).unwrap(),
        Checkpoint::load(&b.join(CHECKPOINT_FILE)).unwrap(),
    );
    assert_eq!(ca.state, cb.state);
    assert_eq!(ca.config_hash, cb.config_hash);
}

#[test]
fn resume_rejects_other_configs_and_versions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    harness::run(&config("layer-select", 4, 1, &out, ""), None).unwrap();
    let ck = out.join(CHECKPOINT_FILE);

    let mut other = config("layer-select", 4, 1, &out, "");
    other.train.base_lr = 0.1;
    assert!(matches!(harness::run(&other, Some(&ck)), Err(Error::Incompatible(_))));

    let mut bytes = read(&ck);
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let bumped = dir.path().join("bumped.bin");
    std::fs::write(&bumped, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&bumped), Err(Error::Incompatible(_))));

    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert!(Checkpoint::load(&garbage).is_err());
}

#[test]
fn export_starts_at_theta_init_times_bits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    harness::run(&config("layer-select", 32, 2, &out, ""), None).unwrap();
    let (theta, err) = export_history(&out.join(METRICS_FILE), &out).unwrap();
    let (header, rows) = read_series(&theta).unwrap();
    assert_eq!(header, ["iteration", "epoch", "theta_sum", "expected_active_count"]);
    assert_eq!(rows[0][2], 15.5);
    assert_eq!(rows[0][3], 16.5);
    let (_, errs) = read_series(&err).unwrap();
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0][1], 2.0);
}

#[test]
fn zero_epochs_export_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    harness::run(&config("layer-select", 4, 0, &out, ""), None).unwrap();
    let (theta, err) = export_history(&out.join(METRICS_FILE), &out).unwrap();
    assert_eq!(read_series(&theta).unwrap().1.len(), 0);
    assert_eq!(read_series(&err).unwrap().1.len(), 0);
}

#[test]
fn fixed_theta_baseline_keeps_theta_sum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = config("fixed-theta-baseline", 5, 3, &out, "");
    assert_eq!(cfg.experiment, Experiment::FixedThetaBaseline);
    harness::run(&cfg, None).unwrap();
    let rows = read_metrics(&out.join(METRICS_FILE)).unwrap();
    assert!(rows.len() > 3);
    assert!(rows.iter().all(|r| r.theta_sum == Some(2.0)));
}

#[test]
fn memorized_training_set_and_repeatable_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = config("plain-baseline", 2, 150, &out, "");
    cfg.architecture.units = 32;
    cfg.train.eval_interval = 0;
    cfg.train.log_interval = 0;
    cfg.train.base_lr = 0.1;
    if let harness::DataConfig::Synthetic { n_train, .. } = &mut cfg.data {
        *n_train = 64;
    }
    harness::run(&cfg, None).unwrap();
    let ck = out.join(CHECKPOINT_FILE);
    let train_err = harness::eval(&ck, Split::Train, PredictionMode::Deterministic, 1, None).unwrap();
    assert!(train_err <= 2.0, "train error {train_err}");
    let a = harness::eval(&ck, Split::Test, PredictionMode::Deterministic, 1, None).unwrap();
    assert_eq!(a, harness::eval(&ck, Split::Test, PredictionMode::Deterministic, 1, None).unwrap());
    let s = harness::eval(&ck, Split::Test, PredictionMode::Stochastic, 5, Some(1)).unwrap();
    assert_eq!(s, harness::eval(&ck, Split::Test, PredictionMode::Stochastic, 5, Some(1)).unwrap());
}

#[test]
fn overrides_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("layer-select", 4, 1, dir.path(), "");
    let mut table: toml::Table = toml::from_str(&cfg.to_toml_string().unwrap()).unwrap();
    apply_override(&mut table, "train.base_lr=0.2").unwrap();
    apply_override(&mut table, "architecture.units=5").unwrap();
    apply_override(&mut table, "out_dir=elsewhere").unwrap();
    let changed = ExperimentConfig::from_table(table.clone()).unwrap();
    assert_eq!(changed.train.base_lr, 0.2);
    assert_eq!(changed.architecture.units, 5);
    assert_eq!(changed.out_dir, Path::new("elsewhere"));
    assert!(apply_override(&mut table, "no_equals_sign").is_err());

    apply_override(&mut table, "train.bogus=1").unwrap();
    assert!(ExperimentConfig::from_table(table).is_err());

    let mut bad = cfg.clone();
    bad.train.batch_size = 0;
    assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "train.batch_size"));
    let mut bad = cfg;
    bad.architecture.layers = 1;
    assert!(bad.validate().is_err());
}
