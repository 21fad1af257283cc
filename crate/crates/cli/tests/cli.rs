use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddcrp_core::synthetic::{generate_scene, SceneSpec};
use ddcrp_core::PipelineConfig;
use serde_json::{json, Value};
use tempfile::TempDir;

fn ddcrp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddcrp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ddcrp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small scenes and a fast config in a scratch directory.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let mut config = PipelineConfig::default();
        config.superpixels.n_target = 150;
        config.sampler.n_samples = 20;
        // Unconverged chains give more varied proposals to train on.
        config.sampler.burn_in = 0;
        fs::write(dir.path().join("config.json"), config.to_json()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("config.json")
    }

    fn edit_config(&self, f: impl FnOnce(&mut Value)) {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(self.config()).unwrap()).unwrap();
        f(&mut v);
        fs::write(self.config(), v.to_string()).unwrap();
    }

    /// Writes `<name>.png` and `<name>.truth.jsonl` (boxes) for a generated scene.
    fn scene(&self, name: &str, seed: u64) -> (PathBuf, PathBuf) {
        let spec = SceneSpec { width: 160, height: 120, n_objects: 5, min_frac: 0.01, max_frac: 0.06 };
        let scene = generate_scene(&spec, seed).unwrap();
        let image = self.path(&format!("{name}.png"));
        scene.image.save(&image).unwrap();
        let truth = self.path(&format!("{name}.truth.jsonl"));
        let lines: Vec<String> =
            scene.truth.objects().iter().map(|o| serde_json::to_string(o).unwrap()).collect();
        fs::write(&truth, lines.join("\n") + "\n").unwrap();
        (image, truth)
    }

    fn propose(&self, image: &Path, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&["propose", "--image", p(image), "--config", p(&self.config()), "--out", p(&out)]);
        out
    }

    fn train(&self) -> PathBuf {
        let mut frames = Vec::new();
        for (i, seed) in [31u64, 32, 33].into_iter().enumerate() {
            let name = format!("train{i}");
            self.scene(&name, seed);
            frames.push(json!({
                "frame_id": name,
                "image": format!("{name}.png"),
                "labels": null,
                "truth": format!("{name}.truth.jsonl"),
            }));
        }
        let manifest = self.path("manifest.json");
        fs::write(&manifest, Value::Array(frames).to_string()).unwrap();
        let model = self.path("model.json");
        ok(&["train-scorer", "--manifest", p(&manifest), "--config", p(&self.config()), "--out", p(&model)]);
        model
    }
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn config_verb_prints_loadable_defaults() {
    let out = ok(&["config"]);
    let config = PipelineConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(config, PipelineConfig::default());
}

#[test]
fn propose_writes_outputs_deterministically() {
    let fx = Fixture::new();
    let (image, _) = fx.scene("a", 8);
    let first = fx.propose(&image, "run1");
    let second = fx.propose(&image, "run2");
    for file in ["proposals.jsonl", "labels.png", "run.log"] {
        let a = fs::read(first.join(file)).unwrap();
        assert!(!a.is_empty(), "{file} is empty");
        assert_eq!(a, fs::read(second.join(file)).unwrap(), "{file} differs between runs");
    }
    let proposals = jsonl(&first.join("proposals.jsonl"));
    assert!(!proposals.is_empty());
    let total: f64 = proposals.iter().map(|p| p["likelihood"].as_f64().unwrap()).sum();
    assert!(total <= 1.0 + 1e-12);
    let log = fs::read_to_string(first.join("run.log")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 20);
}

#[test]
fn seed_flag_changes_the_chain() {
    let fx = Fixture::new();
    let (image, _) = fx.scene("a", 8);
    let cfg = fx.config();
    let run = |seed: &str, out: &str| {
        let out = fx.path(out);
        ok(&["sample", "--image", p(&image), "--config", p(&cfg), "--seed", seed, "--out", p(&out)]);
        fs::read_to_string(out.join("run.log")).unwrap()
    };
    assert_eq!(run("3", "s3a"), run("3", "s3b"));
    assert_ne!(run("3", "s3"), run("4", "s4"));
}

#[test]
fn missing_config_key_exits_2_and_names_it() {
    let fx = Fixture::new();
    let (image, _) = fx.scene("a", 8);
    fx.edit_config(|v| {
        v["sampler"].as_object_mut().unwrap().remove("burn_in");
    });
    let out = ddcrp(&["propose", "--image", p(&image), "--config", p(&fx.config()), "--out", p(&fx.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("burn_in"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn unreadable_image_exits_1() {
    let fx = Fixture::new();
    fs::write(fx.path("bad.png"), b"not an image").unwrap();
    let out = ddcrp(&["segment", "--image", p(&fx.path("bad.png")), "--out", p(&fx.path("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = ddcrp(&["segment", "--image", p(&fx.path("absent.png")), "--out", p(&fx.path("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rank_without_scorer_exits_2() {
    let fx = Fixture::new();
    let (image, _) = fx.scene("a", 8);
    let run = fx.propose(&image, "run");
    let out = ddcrp(&[
        "rank",
        "--proposals",
        p(&run.join("proposals.jsonl")),
        "--labels",
        p(&run.join("labels.png")),
        "--config",
        p(&fx.config()),
        "--out",
        p(&fx.path("ranked.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scorer"));
}

#[test]
fn train_then_rank_top_k() {
    let fx = Fixture::new();
    let model = fx.train();
    let value: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(value["coefficients"].as_array().unwrap().len(), 7);

    let (image, _) = fx.scene("test", 8);
    let run = fx.propose(&image, "run");
    let ranked = fx.path("ranked.jsonl");
    ok(&[
        "rank",
        "--proposals",
        p(&run.join("proposals.jsonl")),
        "--labels",
        p(&run.join("labels.png")),
        "--image",
        p(&image),
        "--scorer",
        p(&model),
        "--config",
        p(&fx.config()),
        "--nms",
        "false",
        "--top-k",
        "5",
        "--out",
        p(&ranked),
    ]);
    let rows = jsonl(&ranked);
    let n_proposals = jsonl(&run.join("proposals.jsonl")).len();
    assert_eq!(rows.len(), n_proposals.min(5));
    let keys: Vec<f64> = rows.iter().map(|r| r["weighted_score"].as_f64().unwrap()).collect();
    assert!(keys.windows(2).all(|w| w[0] >= w[1]), "{keys:?}");
}

#[test]
fn scorer_from_config_is_relative_to_config() {
    let fx = Fixture::new();
    fx.train();
    fx.edit_config(|v| v["ranking"]["scorer"] = json!("model.json"));
    let (image, _) = fx.scene("test", 8);
    let run = fx.propose(&image, "run");
    ok(&[
        "rank",
        "--proposals",
        p(&run.join("proposals.jsonl")),
        "--labels",
        p(&run.join("labels.png")),
        "--config",
        p(&fx.config()),
        "--out",
        p(&fx.path("ranked.jsonl")),
    ]);
}

/// Ranked directory with one frame whose truth is exactly the top proposal's box.
fn evaluation_inputs(fx: &Fixture) -> (PathBuf, PathBuf) {
    let model = fx.train();
    let (image, _) = fx.scene("f0", 9);
    let run = fx.propose(&image, "run");
    let ranked_dir = fx.path("ranked");
    fs::create_dir_all(&ranked_dir).unwrap();
    let ranked = ranked_dir.join("f0.jsonl");
    ok(&[
        "rank",
        "--proposals",
        p(&run.join("proposals.jsonl")),
        "--labels",
        p(&run.join("labels.png")),
        "--scorer",
        p(&model),
        "--config",
        p(&fx.config()),
        "--out",
        p(&ranked),
    ]);
    let top = jsonl(&ranked)[0]["bbox"].clone();
    let truth_dir = fx.path("truth");
    fs::create_dir_all(&truth_dir).unwrap();
    fs::write(truth_dir.join("f0.jsonl"), json!({"id": 1, "bbox": top}).to_string() + "\n").unwrap();
    (ranked_dir, truth_dir)
}

#[test]
fn evaluate_perfect_top_proposal() {
    let fx = Fixture::new();
    let (ranked, truth) = evaluation_inputs(&fx);
    fx.edit_config(|v| v["eval"]["k_max"] = json!(1));
    let out = fx.path("eval");
    ok(&[
        "evaluate",
        "--ranked",
        p(&ranked),
        "--truth",
        p(&truth),
        "--config",
        p(&fx.config()),
        "--out",
        p(&out),
        "--svg",
    ]);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for key in ["auc_precision", "auc_recall", "auc_global_recall"] {
        assert_eq!(summary[key].as_f64(), Some(1.0), "{key}");
    }
    assert_eq!(fs::read_to_string(out.join("curves.csv")).unwrap(), "k,precision,recall,global_recall\n1,1,1,1\n");
    assert!(out.join("f0.csv").exists());
    assert!(fs::read_to_string(out.join("curves.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn evaluate_empty_ranking_gives_zero_curves() {
    let fx = Fixture::new();
    let (ranked, truth) = evaluation_inputs(&fx);
    fs::write(ranked.join("f0.jsonl"), "").unwrap();
    let out = fx.path("eval");
    ok(&["evaluate", "--ranked", p(&ranked), "--truth", p(&truth), "--config", p(&fx.config()), "--out", p(&out)]);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["auc_recall"].as_f64(), Some(0.0));
    assert_eq!(summary["auc_precision"].as_f64(), Some(0.0));
}

#[test]
fn evaluate_mismatched_frames_exits_2() {
    let fx = Fixture::new();
    let (ranked, truth) = evaluation_inputs(&fx);
    fs::rename(truth.join("f0.jsonl"), truth.join("f1.jsonl")).unwrap();
    let out = ddcrp(&["evaluate", "--ranked", p(&ranked), "--truth", p(&truth), "--out", p(&fx.path("eval"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("f1"));
}
