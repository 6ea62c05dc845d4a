//! End-to-end tests driving the `fitdnn` binary.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fitdnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fitdnn"))
}

fn run(args: &[&str]) -> Output {
    fitdnn().args(args).output().expect("binary runs")
}

/// 4x4 single-channel images, two classes; class 1 lights the top-left
/// quadrant, class 0 the bottom-right.
fn write_idx_dataset(dir: &Path, train_count: usize, test_count: usize) {
    let write_pair = |prefix: &str, count: usize| {
        let mut images =
            File::create(dir.join(format!("{prefix}-images-idx3-ubyte"))).unwrap();
        images.write_all(&0x0803u32.to_be_bytes()).unwrap();
        images.write_all(&(count as u32).to_be_bytes()).unwrap();
        images.write_all(&4u32.to_be_bytes()).unwrap();
        images.write_all(&4u32.to_be_bytes()).unwrap();
        let mut labels =
            File::create(dir.join(format!("{prefix}-labels-idx1-ubyte"))).unwrap();
        labels.write_all(&0x0801u32.to_be_bytes()).unwrap();
        labels.write_all(&(count as u32).to_be_bytes()).unwrap();
        for i in 0..count {
            let class = (i % 2) as u8;
            let mut img = [0u8; 16];
            let nudge = ((i / 2) % 5) as u8 * 10;
            if class == 1 {
                img[0] = 200 + nudge;
                img[1] = 180;
                img[4] = 160;
                img[5] = 220;
            } else {
                img[10] = 200 + nudge;
                img[11] = 180;
                img[14] = 160;
                img[15] = 220;
            }
            images.write_all(&img).unwrap();
            labels.write_all(&[class]).unwrap();
        }
    };
    write_pair("train", train_count);
    write_pair("t10k", test_count);
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

fn small_classification_config() -> String {
    r#"
task = "mnist"
input_dim = 16
output_dim = 2
nodes_per_layer = 8
hidden_layers = 2
num_delays = 5
theta = 0.5
alpha = 1.0
theta_mode = "small_theta"
activation = "sin"
preprocessing = "tanh"
output_activation = "softmax"
eta0 = 0.05
eta1 = 10000.0
epochs = 3
seed = 7
"#
    .to_string()
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        Workspace { _tmp: tmp, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn str(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

#[test]
fn train_smoke_run_writes_artifacts() {
    let ws = Workspace::new();
    let data = ws.path("data");
    std::fs::create_dir(&data).unwrap();
    write_idx_dataset(&data, 120, 40);
    write_config(&ws.path("config.toml"), &small_classification_config());

    let out = run(&[
        "train",
        "--config",
        &ws.str("config.toml"),
        "--data-dir",
        &ws.str("data"),
        "--out",
        &ws.str("run"),
        "--epochs",
        "1",
        "--limit",
        "100",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let metrics = std::fs::read_to_string(ws.path("run/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.trim().lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,test_metric");
    assert_eq!(lines.len(), 2, "one epoch, one metrics row");

    assert!(ws.path("run/model.json").exists());
    let manifest = std::fs::read_to_string(ws.path("run/manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"train\""));
    assert!(manifest.contains("\"seeds\""));
}

#[test]
fn missing_dataset_exits_2_without_outputs() {
    let ws = Workspace::new();
    write_config(&ws.path("config.toml"), &small_classification_config());
    let out = run(&[
        "train",
        "--config",
        &ws.str("config.toml"),
        "--data-dir",
        &ws.str("nonexistent"),
        "--out",
        &ws.str("run"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.path("run").exists(), "no partial outputs on failure");

    // a data-dir-less image task is also a config error
    let out = run(&[
        "train",
        "--config",
        &ws.str("config.toml"),
        "--out",
        &ws.str("run2"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.path("run2").exists());
}

#[test]
fn bad_usage_exits_2() {
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_runs_produce_identical_metrics() {
    let ws = Workspace::new();
    let data = ws.path("data");
    std::fs::create_dir(&data).unwrap();
    write_idx_dataset(&data, 60, 20);
    write_config(&ws.path("config.toml"), &small_classification_config());

    for dir in ["a", "b"] {
        let out = run(&[
            "train",
            "--config",
            &ws.str("config.toml"),
            "--data-dir",
            &ws.str("data"),
            "--out",
            &ws.str(dir),
        ]);
        assert!(out.status.success());
    }
    let a = std::fs::read(ws.path("a/metrics.csv")).unwrap();
    let b = std::fs::read(ws.path("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(ws.path("a/model.json")).unwrap();
    let b = std::fs::read(ws.path("b/model.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_reports_accuracy_and_conserving_confusion() {
    let ws = Workspace::new();
    let data = ws.path("data");
    std::fs::create_dir(&data).unwrap();
    write_idx_dataset(&data, 200, 50);
    write_config(&ws.path("config.toml"), &small_classification_config());

    let out = run(&[
        "train",
        "--config",
        &ws.str("config.toml"),
        "--data-dir",
        &ws.str("data"),
        "--out",
        &ws.str("run"),
    ]);
    assert!(out.status.success());

    let out = run(&[
        "eval",
        "--config",
        &ws.str("config.toml"),
        "--checkpoint",
        &ws.str("run/model.json"),
        "--data-dir",
        &ws.str("data"),
        "--out",
        &ws.str("eval"),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    // accuracy printed with 4 decimals
    let acc_line = stdout
        .lines()
        .find(|l| l.starts_with("accuracy "))
        .expect("accuracy line");
    let value = acc_line.strip_prefix("accuracy ").unwrap();
    assert_eq!(value.split('.').nth(1).map(str::len), Some(4), "{value:?}");

    // the separable toy task trains to perfection
    assert!(value.parse::<f64>().unwrap() >= 0.9, "{value}");

    // confusion row sums equal the per-class test counts (25 each)
    let confusion = std::fs::read_to_string(ws.path("eval/confusion.csv")).unwrap();
    let rows: Vec<Vec<usize>> = confusion
        .trim()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.iter().sum::<usize>(), 25);
    }
}

#[test]
fn simulate_zero_weight_model_decays_exponentially() {
    let ws = Workspace::new();
    let data = ws.path("data");
    std::fs::create_dir(&data).unwrap();
    write_idx_dataset(&data, 10, 10);

    // a zero-weight checkpoint with x0 = 1 written through the library
    let config_text = r#"
task = "mnist"
input_dim = 16
output_dim = 2
nodes_per_layer = 6
hidden_layers = 2
num_delays = 3
theta = 0.5
alpha = 1.0
x0 = 1.0
theta_mode = "small_theta"
activation = "sin"
preprocessing = "tanh"
output_activation = "softmax"
eta0 = 0.01
eta1 = 100.0
epochs = 1
seed = 3
"#;
    write_config(&ws.path("config.toml"), config_text);
    let exp = fitdnn_core::ExperimentConfig::from_toml_str(config_text).unwrap();
    let resolved = exp.resolve().unwrap();
    let zero = fitdnn_core::WeightSet::zeros(&resolved.config);
    fitdnn_core::save_model(&ws.path("zero.json"), &zero, &resolved.config).unwrap();

    let out = run(&[
        "simulate",
        "--config",
        &ws.str("config.toml"),
        "--checkpoint",
        &ws.str("zero.json"),
        "--data-dir",
        &ws.str("data"),
        "--input-index",
        "2",
        "--substeps",
        "8",
        "--out",
        &ws.str("sim"),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let trace = std::fs::read_to_string(ws.path("sim/trace.csv")).unwrap();
    let mut lines = trace.trim().lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "t,x,a,J,b,M_1,M_2,M_3");
    let t_layer = 6.0 * 0.5;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (t, x, j_val) = (cols[0], cols[1], cols[3]);
        // pure decay from x0 = 1 (tanh(0) drive contributes nothing)
        assert!((x - (-t).exp()).abs() < 1e-12, "t={t}: x={x}");
        if t > t_layer {
            assert_eq!(j_val, 0.0, "input signal must vanish past T");
        }
        // zero modulations everywhere
        assert_eq!(cols[5], 0.0);
        assert_eq!(cols[6], 0.0);
        assert_eq!(cols[7], 0.0);
    }

    // out-of-range example index is a usage error
    let out = run(&[
        "simulate",
        "--config",
        &ws.str("config.toml"),
        "--checkpoint",
        &ws.str("zero.json"),
        "--data-dir",
        &ws.str("data"),
        "--input-index",
        "99",
        "--out",
        &ws.str("sim2"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_degenerate_single_node_and_guard() {
    let ws = Workspace::new();
    let config_text = r#"
task = "sine1"
input_dim = 1
output_dim = 1
nodes_per_layer = 1
hidden_layers = 2
num_delays = 1
theta = 4.0
alpha = 1.0
theta_mode = "small_theta"
activation = "sin"
preprocessing = "identity"
output_activation = "identity"
eta0 = 0.01
eta1 = 100.0
epochs = 1
seed = 5
"#;
    write_config(&ws.path("config.toml"), config_text);
    let out = run(&[
        "gradcheck",
        "--config",
        &ws.str("config.toml"),
        "--thetas",
        "4,8",
        "--out",
        &ws.str("gc"),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(ws.path("gc/gradcheck.csv")).unwrap();
    let mut lines = csv.trim().lines();
    assert_eq!(
        lines.next().unwrap(),
        "theta,cos_with_local,cos_without_local,discrete_max_rel_err"
    );
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(cols[1] > 0.999, "with-local at theta={}: {}", cols[0], cols[1]);
        assert!(cols[2] > 0.999, "without-local at theta={}: {}", cols[0], cols[2]);
        assert!(cols[3] < 1e-6, "discrete exactness at theta={}", cols[0]);
    }

    // guard: N * L over the limit is refused with an explanation
    let big = config_text
        .replace("nodes_per_layer = 1", "nodes_per_layer = 2000")
        .replace("num_delays = 1", "num_delays = 100");
    write_config(&ws.path("big.toml"), &big);
    let out = run(&[
        "gradcheck",
        "--config",
        &ws.str("big.toml"),
        "--out",
        &ws.str("gc2"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("guard"));
}

#[test]
fn sine_task_needs_no_data_dir() {
    let ws = Workspace::new();
    let config_text = r#"
task = "sine1"
input_dim = 1
output_dim = 1
nodes_per_layer = 10
hidden_layers = 1
num_delays = 3
delays = [5, 10, 15]
theta = 0.5
alpha = 1.0
theta_mode = "map_limit"
activation = "sin"
preprocessing = "identity"
output_activation = "identity"
eta0 = 0.01
eta1 = 10000.0
epochs = 2
seed = 9
"#;
    write_config(&ws.path("config.toml"), config_text);
    let out = run(&[
        "train",
        "--config",
        &ws.str("config.toml"),
        "--out",
        &ws.str("run"),
        "--limit",
        "500",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = std::fs::read_to_string(ws.path("run/metrics.csv")).unwrap();
    assert_eq!(metrics.trim().lines().count(), 3); // header + 2 epochs
}
