use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use permalign::conv::{kernel_permute, save_kernel, ConvKernel};
use permalign::nn::{init_model, load_checkpoint, save_checkpoint, Activation};
use permalign::permutation::random_permutation;
use serde_json::Value;

const BLOBS: &str = r#"
seeds = [1, 2, 3]
[dataset]
kind = "blobs"
n = 240
dim = 6
classes = 3
[train]
hidden = [8, 8]
epochs = 5
batch_size = 32
learning_rate = 0.01
[analysis]
lambda_grid = 9
landscape_resolution = 4
"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Env {
        let env = Env {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(env.path("blobs.toml"), BLOBS).unwrap();
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_permalign"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("PERMALIGN_DATA_DIR")
            .output()
            .unwrap()
    }

    /// Runs with the blobs config and expects success.
    fn ok(&self, args: &[&str]) -> PathBuf {
        let mut full = vec!["--config", "blobs.toml"];
        full.extend_from_slice(args);
        let o = self.run(&full);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
    }

    fn train(&self) {
        self.ok(&["train", "--out", "models"]);
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_record(o: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("error record on stderr");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn strip_times(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("wall_time_secs");
            m.values_mut().for_each(strip_times);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_times),
        _ => {}
    }
}

#[test]
fn train_writes_checkpoints_and_manifest() {
    let env = Env::new();
    env.train();
    let m = json(&env.path("models/manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seeds"], serde_json::json!([1, 2, 3]));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    for name in ["epochs.csv", "seed-1/model.nnpk", "seed-3/model.nnpk", "train.csv", "train.json"] {
        assert!(artifacts.contains(&name), "{name}");
        assert!(env.path("models").join(name).exists());
    }
    let records = json(&env.path("models/train.json"));
    assert_eq!(records.as_array().unwrap().len(), 3);
    assert!(records[0]["eval_accuracy"].as_f64().unwrap() > 0.9);
    assert_eq!(records[0]["epoch_losses"].as_array().unwrap().len(), 5);
    let model = load_checkpoint(env.path("models/seed-1/model.nnpk")).unwrap();
    assert_eq!(model.dims(), vec![6, 8, 8, 3]);
}

#[test]
fn rerun_reproduces_json() {
    let env = Env::new();
    env.train();
    env.ok(&["match", "--a", "models/seed-1/model.nnpk", "--b", "models/seed-2/model.nnpk", "--out", "m1"]);
    let first: Vec<Value> = ["models/train.json", "models/manifest.json", "m1/match.json", "m1/manifest.json"]
        .iter()
        .map(|p| json(&env.path(p)))
        .collect();
    // a second run reuses the cached models; a fresh directory retrains
    env.train();
    env.ok(&["match", "--a", "models/seed-1/model.nnpk", "--b", "models/seed-2/model.nnpk", "--out", "m1"]);
    env.ok(&["train", "--out", "models2"]);
    let second: Vec<Value> = ["models/train.json", "models/manifest.json", "m1/match.json", "m1/manifest.json"]
        .iter()
        .map(|p| json(&env.path(p)))
        .collect();
    for (mut a, mut b) in first.into_iter().zip(second) {
        strip_times(&mut a);
        strip_times(&mut b);
        assert_eq!(a, b);
    }
    assert_eq!(json(&env.path("models/train.json")), json(&env.path("models2/train.json")));
    assert_eq!(
        fs::read(env.path("models/seed-2/model.nnpk")).unwrap(),
        fs::read(env.path("models2/seed-2/model.nnpk")).unwrap()
    );
}

#[test]
fn barrier_of_identical_checkpoints_is_zero() {
    let env = Env::new();
    env.train();
    let m = "models/seed-1/model.nnpk";
    env.ok(&["barrier", "--a", m, "--b", m, "--out", "bar", "--lambda-grid", "11"]);
    let r = json(&env.path("bar/barrier.json"));
    assert_eq!(r["barrier"], 0.0);
    assert_eq!(r["barrier_at_half"], 0.0);
    assert_eq!(r["split_name"], "test");
    assert_eq!(r["lambdas"].as_array().unwrap().len(), 11);
    let csv = fs::read_to_string(env.path("bar/barrier.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn weight_matching_recovers_planted_permutation() {
    let env = Env::new();
    let a = init_model(&[6, 8, 8, 3], Activation::Relu, 5).unwrap();
    let pi = random_permutation(&[8, 8], 9);
    save_checkpoint(&a, env.path("a.nnpk")).unwrap();
    save_checkpoint(&pi.apply(&a).unwrap(), env.path("b.nnpk")).unwrap();
    env.ok(&["match", "--method", "wm_coord", "--a", "a.nnpk", "--b", "b.nnpk", "--out", "wm"]);
    let r = json(&env.path("wm/match.json"));
    assert_eq!(r["method"], "wm_coord");
    assert!((r["reduction_rate"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(r["l2_after"].as_f64().unwrap() < 1e-9);
    let aligned = load_checkpoint(env.path("wm/aligned.nnpk")).unwrap();
    assert!(aligned.distance(&a) < 1e-6);
    assert!(env.path("wm/permutation.json").exists());
    assert!(env.path("wm/objective.csv").exists());

    // the found permutation, fed back, aligns b exactly
    env.ok(&["barrier", "--a", "a.nnpk", "--b", "b.nnpk", "--perm", "wm/permutation.json", "--out", "wb"]);
    assert_eq!(json(&env.path("wb/barrier.json"))["barrier"], 0.0);
    env.ok(&["r-metric", "--a", "a.nnpk", "--b", "b.nnpk", "--perm", "wm/permutation.json", "--out", "wr", "--gamma", "0", "--gamma", "0.3"]);
    let r = json(&env.path("wr/r_metric.json"));
    assert_eq!(r["reports"].as_array().unwrap().len(), 2);
    for rep in r["reports"].as_array().unwrap() {
        assert!((rep["r_value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
    assert!(r["squared_distance"].as_f64().unwrap() < 1e-12);
}

#[test]
fn data_driven_searches_and_merge() {
    let env = Env::new();
    env.train();
    let (a, b) = ("models/seed-1/model.nnpk", "models/seed-2/model.nnpk");
    for method in ["am", "ste", "wm_sinkhorn"] {
        let out = format!("match-{method}");
        env.ok(&["match", "--method", method, "--a", a, "--b", b, "--out", &out]);
        let r = json(&env.path(&out).join("match.json"));
        assert_eq!(r["method"], method);
        assert_eq!(json(&env.path(&out).join("manifest.json"))["config"]["matching"]["method"], method);
    }
    env.ok(&["merge", "--a", a, "--b", b, "--perm", "match-am/permutation.json", "--out", "merge"]);
    let r = json(&env.path("merge/merge.json"));
    assert_eq!(r["lambda"], 0.5);
    assert!(r["accuracy"].as_f64().unwrap() > 0.5);
    assert!(env.path("merge/merged.nnpk").exists());
    let o = env.run(&["--config", "blobs.toml", "merge", "--a", a, "--b", b, "--lambda", "2", "--out", "bad"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn taylor_spectrum_input_align_landscape() {
    let env = Env::new();
    env.train();
    let (a, b, c) = ("models/seed-1/model.nnpk", "models/seed-2/model.nnpk", "models/seed-3/model.nnpk");
    env.ok(&["taylor", "--a", a, "--b", b, "--out", "taylor"]);
    let t = json(&env.path("taylor/taylor.json"));
    assert!(t["taylor"]["beta"].as_f64().unwrap() > 0.0);
    assert!(t["true_barrier"].as_f64().unwrap() >= 0.0);
    assert!(t["estimate_exceeds_true_at_half"].is_boolean());
    assert_eq!(fs::read_to_string(env.path("taylor/taylor.csv")).unwrap().lines().count(), 10);

    env.ok(&["spectrum", "--model", a, "--out", "spec"]);
    let s = json(&env.path("spec/spectrum.json"));
    assert_eq!(s["layers"].as_array().unwrap().len(), 3);
    let ratio = s["large_singular_ratio"].as_f64().unwrap();
    assert!(ratio > 0.0 && ratio <= 1.0);

    env.ok(&["input-align", "--model", a, "--out", "ia"]);
    let ia = json(&env.path("ia/input_align.json"));
    assert_eq!(ia[0]["mean_sq_projection"].as_array().unwrap().len(), 6);

    env.ok(&["landscape", "--a", a, "--b", b, "--c", c, "--resolution", "3", "--out", "land"]);
    let l = json(&env.path("land/landscape.json"));
    assert_eq!(l["losses"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_to_string(env.path("land/landscape.csv")).unwrap().lines().count(), 10);
}

#[test]
fn three_model_trains_missing_models() {
    let env = Env::new();
    env.ok(&["three-model", "--out", "three"]);
    let r = json(&env.path("three/three_model.json"));
    for key in ["barrier_ab", "barrier_ac", "barrier_bc", "barrier_bc_unmatched"] {
        assert!(r[key]["barrier"].as_f64().unwrap() >= 0.0, "{key}");
    }
    assert_eq!(r["alignment"].as_array().unwrap().len(), 4);
    assert!(r["landscape"].is_object());
    assert_eq!(fs::read_to_string(env.path("three/three_model.csv")).unwrap().lines().count(), 5);
    for f in ["seed-1/model.nnpk", "b_aligned.nnpk", "c_permutation.json", "landscape.csv"] {
        assert!(env.path("three").join(f).exists(), "{f}");
    }
    let o = env.run(&["--config", "blobs.toml", "three-model", "--seed", "4", "--out", "three1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["code"], "config_invalid");
}

#[test]
fn conv_analyze_random_and_given_kernels() {
    let env = Env::new();
    fs::write(env.path("conv.toml"), "[conv]\nn = 4\nm = 3\nkernel_size = 2\n").unwrap();
    let o = env.run(&["--config", "conv.toml", "conv-analyze", "--out", "conv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&env.path("conv/conv.json"));
    assert_eq!(r["singular_values"].as_array().unwrap().len(), 48);
    assert!(r["dense_max_abs_diff"].as_f64().unwrap() < 1e-6);
    let p = &r["pair"];
    let (d, v) = (p["dense_distance_sq"].as_f64().unwrap(), p["via_objective"].as_f64().unwrap());
    assert!((d - v).abs() < 1e-8 * d);
    let best = p["best"]["objective"].as_f64().unwrap();
    assert!(best >= p["objective_identity"].as_f64().unwrap() - 1e-12);

    // a channel-permuted copy is matched back to distance zero
    let k = ConvKernel::random(4, 3, 7);
    save_kernel(&k, env.path("ka.cnvk")).unwrap();
    save_kernel(&kernel_permute(&k, &[2, 0, 1], &[1, 2, 0]).unwrap(), env.path("kb.cnvk")).unwrap();
    env.ok(&["conv-analyze", "--kernel", "ka.cnvk", "--kernel-b", "kb.cnvk", "--out", "conv2"]);
    let r = json(&env.path("conv2/conv.json"));
    assert!(r["pair"]["best"]["distance_sq"].as_f64().unwrap() < 1e-9);
    assert!(r["dense_max_abs_diff"].is_null() || r["dense_max_abs_diff"].as_f64().unwrap() < 1e-6);
}

#[test]
fn sweep_covers_the_grid() {
    let env = Env::new();
    fs::write(
        env.path("sweep.toml"),
        format!("{BLOBS}\n[sweep]\nwidths = [4, 6]\nweight_decays = [0.0, 0.001]\nlearning_rates = [0.01]\n")
            .replace("seeds = [1, 2, 3]", "seeds = [1, 2]"),
    )
    .unwrap();
    let o = env.run(&["--config", "sweep.toml", "sweep", "--out", "sweep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = json(&env.path("sweep/sweep.json"));
    assert_eq!(rows.as_array().unwrap().len(), 4);
    for r in rows.as_array().unwrap() {
        let x = r["large_singular_ratio_a"].as_f64().unwrap();
        assert!(x > 0.0 && x <= 1.0);
    }
    assert_eq!(fs::read_to_string(env.path("sweep/sweep.csv")).unwrap().lines().count(), 5);
}

#[test]
fn errors_carry_codes_and_exit_status() {
    let env = Env::new();
    fs::write(env.path("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let o = env.run(&["--config", "bad.toml", "train", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["code"], "config_parse");
    assert!(env.path("x/error.json").exists());

    let o = env.run(&["--config", "blobs.toml", "barrier", "--a", "nope.nnpk", "--b", "nope.nnpk", "--out", "y"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_record(&o)["code"], "io");
    assert_eq!(json(&env.path("y/error.json"))["error"]["exit_code"], 4);

    fs::write(env.path("junk.nnpk"), b"NNPK\0\0\0\x01garbage").unwrap();
    let o = env.run(&["--config", "blobs.toml", "spectrum", "--model", "junk.nnpk", "--out", "z"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_record(&o)["code"], "format");

    let o = env.run(&["match", "--method", "nope", "--a", "a", "--b", "b"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["code"], "usage");

    let diverge = BLOBS.replace("learning_rate = 0.01", "learning_rate = 1e30");
    fs::write(env.path("diverge.toml"), diverge).unwrap();
    let o = env.run(&["--config", "diverge.toml", "train", "--out", "d"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_record(&o)["code"], "training_diverged");

    let a = init_model(&[6, 8, 3], Activation::Relu, 1).unwrap();
    let b = init_model(&[6, 4, 3], Activation::Relu, 1).unwrap();
    save_checkpoint(&a, env.path("a.nnpk")).unwrap();
    save_checkpoint(&b, env.path("b.nnpk")).unwrap();
    let o = env.run(&["--config", "blobs.toml", "r-metric", "--a", "a.nnpk", "--b", "b.nnpk", "--out", "w"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["code"], "shape_mismatch");

    let o = env.run(&["--config", "blobs.toml", "--lambda-grid", "2", "barrier", "--a", "a.nnpk", "--b", "a.nnpk"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["code"], "config_invalid");

    // the default dataset is MNIST under PERMALIGN_DATA_DIR
    let o = Command::new(env!("CARGO_BIN_EXE_permalign"))
        .args(["train", "--out", "m"])
        .current_dir(env.dir.path())
        .env("PERMALIGN_DATA_DIR", env.path("empty"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert!(error_record(&o)["message"].as_str().unwrap().contains("empty"));
}

#[test]
fn help_and_version_exit_zero() {
    let env = Env::new();
    assert!(env.run(&["--help"]).status.success());
    assert!(env.run(&["--version"]).status.success());
    let o = env.run(&["sweep", "--help"]);
    assert!(o.status.success());
    let o = env.run(&[]);
    assert_eq!(o.status.code(), Some(2));
}
