use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use viralnet::data::{load_image, load_placements, oracle_level, pair_label, Manifest};
use viralnet::numcore::Rng;
use viralnet::ranker::{ArchConfig, ScoringNet, Variant};
use viralnet::train::save_checkpoint;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim()).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }

    fn error(&self) -> Value {
        let line = self.stderr.trim();
        assert_eq!(line.lines().count(), 1, "stderr: {line}");
        serde_json::from_str(line).unwrap()
    }
}

fn viralnet(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_viralnet")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, extra: &[&str]) -> PathBuf {
    let n = n.to_string();
    let mut args = vec!["synth", "--out", s(dir), "--n", &n, "--seed", "3"];
    args.extend_from_slice(extra);
    let r = viralnet(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    dir.join("manifest.jsonl")
}

/// Tiny network and budget so a run takes well under a second.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    let body = format!(
        r#"{{"extractor_channels": [2, 3, 3], "loc_channels": [2, 2], "loc_hidden": 4,
            "feature_dim": 4, "category_dim": 3, "pair_budget": 60, "epochs": 2,
            "batch_size": 8{extra}}}"#
    );
    fs::write(&path, body).unwrap();
    path
}

fn train(config: &Path, data: &Path, out: &Path, extra: &[&str]) -> Run {
    let mut args = vec!["train", "--config", s(config), "--data", s(data), "--out", s(out)];
    args.extend_from_slice(extra);
    viralnet(&args)
}

#[test]
fn synth_writes_images_manifest_and_placements() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let manifest = synth(&a, 100, &[]);
    let pngs = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 100);
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 100);

    let b = tmp.path().join("b");
    synth(&b, 100, &[]);
    for i in [0, 42, 99] {
        let name = format!("img_{i:05}.png");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }

    // Replaying the placement records reproduces every pair label.
    let m = Manifest::load(&manifest).unwrap();
    let records = load_placements(&a.join("placements.jsonl")).unwrap();
    let levels: Vec<f64> = records
        .iter()
        .map(|r| oracle_level(&load_image(&a.join(&r.path)).unwrap(), r).unwrap())
        .collect();
    for i in 0..100 {
        for j in 0..100 {
            assert_eq!(pair_label(levels[i], levels[j]), pair_label(m.entries[i].score, m.entries[j].score));
        }
    }
}

#[test]
fn synth_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let r = viralnet(&["synth", "--out", s(tmp.path()), "--n", "1"]);
    assert_eq!(r.code, 2);
    let r = viralnet(&["synth", "--out", s(tmp.path()), "--placement", "huge"]);
    assert_eq!(r.code, 2);
    assert!(r.error()["message"].as_str().unwrap().contains("--placement"));
}

#[test]
fn train_is_deterministic_and_eval_matches_its_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), 30, &[]);
    let config = small_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    for out in [&a, &b] {
        let r = train(&config, &data, out, &["--arch", "base", "--seed", "7"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert_eq!(r.json()["epochs"], 2);
    }
    for file in ["model.ckpt", "metrics.jsonl", "heldout_pairs.jsonl"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    // The echoed config differs only in the output directory.
    let echo_of = |dir: &Path| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
        assert_eq!(v["out"], s(dir));
        v.as_object_mut().unwrap().remove("out");
        v
    };
    assert_eq!(echo_of(&a), echo_of(&b));

    let echo = echo_of(&a);
    assert_eq!(echo["seed"], 7);
    assert_eq!(echo["variant"], "base");
    assert_eq!(echo["pair_budget"], 60);

    let metrics = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    let last: Value = serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    for key in ["epoch", "mean_loss", "heldout_acc", "lambda_fraction"] {
        assert!(last.get(key).is_some(), "{key}");
    }
    let r = viralnet(&["eval", "--ckpt", s(&a.join("model.ckpt")), "--pairs", s(&a.join("heldout_pairs.jsonl"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = r.json();
    let logged = last["heldout_acc"].as_f64().unwrap();
    assert!((report["accuracy"].as_f64().unwrap() - logged).abs() <= 1e-9);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), 20, &[]);
    let config = small_config(tmp.path(), r#", "learning_rate": 0.5, "seed": 1"#);
    let out = tmp.path().join("run");
    let r = train(&config, &data, &out, &["--epochs", "1", "--lr", "0.25"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let echo: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["epochs"], 1);
    assert_eq!(echo["learning_rate"], 0.25);
    assert_eq!(echo["seed"], 1);
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn train_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "");
    let out = tmp.path().join("run");

    let r = viralnet(&["train", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(r.code, 2);
    assert!(r.error()["message"].as_str().unwrap().contains("--data"));

    let missing = tmp.path().join("nope.jsonl");
    let r = train(&config, &missing, &out, &[]);
    assert_eq!(r.code, 2);
    assert!(r.error()["message"].as_str().unwrap().contains("--data"));

    let data = synth(&tmp.path().join("data"), 10, &[]);
    let r = train(&config, &data, &out, &["--arch", "c"]);
    assert_eq!(r.code, 2);
    assert!(r.error()["message"].as_str().unwrap().contains("--category-ckpt"));

    let r = train(&config, &data, &out, &["--arch", "alexnet"]);
    assert_eq!(r.code, 2);

    let typo = tmp.path().join("typo.json");
    fs::write(&typo, r#"{"lerning_rate": 0.1}"#).unwrap();
    let r = train(&typo, &data, &out, &[]);
    assert_eq!(r.code, 2);
    assert!(r.error()["message"].as_str().unwrap().contains("lerning_rate"));

    let r = viralnet(&["train", "--bogus"]);
    assert_eq!(r.code, 2);
    assert_eq!(r.error()["error"], "usage");
}

#[test]
fn eval_of_untrained_checkpoint_is_chance_and_empty_pairs_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), 30, &[]);
    let config = small_config(tmp.path(), r#", "learning_rate": 0.0, "epochs": 1"#);
    let out = tmp.path().join("run");
    assert_eq!(train(&config, &data, &out, &[]).code, 0);
    let ckpt = out.join("model.ckpt");
    let r = viralnet(&["eval", "--ckpt", s(&ckpt), "--pairs", s(&out.join("heldout_pairs.jsonl"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    // A fresh head scores every image identically.
    assert_eq!(r.json()["accuracy"], 0.5);

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let r = viralnet(&["eval", "--ckpt", s(&ckpt), "--pairs", s(&empty)]);
    assert_eq!(r.code, 2);

    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"NOTACHECKPOINT").unwrap();
    let r = viralnet(&["eval", "--ckpt", s(&bad), "--pairs", s(&empty)]);
    assert_eq!(r.code, 3);
    assert_eq!(r.error()["error"], "corrupt");
}

#[test]
fn gradcheck_passes_and_reports_failures() {
    for arch in ["base", "mc"] {
        let r = viralnet(&["gradcheck", "--arch", arch]);
        assert_eq!(r.code, 0, "{arch}: {}", r.stdout);
        let v = r.json();
        assert_eq!(v["passed"], true);
        let report = &v["reports"][0];
        assert!(report["checked"].as_u64().unwrap() > 0);
        assert!(report["skipped_discontinuity"].is_u64());
        assert!(report["tensors"].as_array().unwrap().len() >= 2);
    }
    let r = viralnet(&["gradcheck", "--arch", "base", "--tolerance", "0"]);
    assert_eq!(r.code, 4);
    let v = r.json();
    assert_eq!(v["passed"], false);
    assert!(v["reports"][0]["failed"].as_u64().unwrap() > 0);

    let r = viralnet(&["gradcheck", "--arch", "siamese", "--pretty"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("PASS") && r.stdout.contains("extractor.conv1.weight"));

    let r = viralnet(&["gradcheck", "--arch", "base", "--step", "1"]);
    assert_eq!(r.code, 2);
}

fn tiny_net(variant: Variant, base_scale: f64) -> ScoringNet {
    let arch = ArchConfig {
        variant,
        extractor_channels: [2, 3, 3],
        loc_channels: [2, 2],
        loc_hidden: 4,
        feature_dim: 4,
        base_scale,
        ..ArchConfig::default()
    };
    let mut net = ScoringNet::new(arch, None, &mut Rng::new(5)).unwrap();
    let mut rng = Rng::new(6);
    for v in net.head.weight.value.data_mut() {
        *v = rng.uniform_range(-1.0, 1.0);
    }
    net
}

#[test]
fn visualize_writes_rois_and_flags_out_of_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), 4, &[]);
    let image = Manifest::load(&data).unwrap().entries[0].path.clone();

    let mut net = tiny_net(Variant::M, 1.0);
    let ckpt = tmp.path().join("m.ckpt");
    save_checkpoint(&net, 0, 0, &ckpt).unwrap();
    let out = tmp.path().join("vis");
    let r = viralnet(&["visualize", "--image", s(&image), "--ckpt", s(&ckpt), "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rois: Value = serde_json::from_str(&fs::read_to_string(out.join("rois.json")).unwrap()).unwrap();
    let rois = rois["rois"].as_array().unwrap();
    assert_eq!(rois.len(), 3);
    for (r, scale) in rois.iter().zip([1.0, 0.5, 0.25]) {
        assert!((r["s"].as_f64().unwrap() - scale).abs() < 1e-6);
        assert_eq!(r["tx"], 0.0);
        assert_eq!(r["ty"], 0.0);
        assert_eq!(r["out_of_bounds"], false);
    }
    assert!(out.join("original.png").exists());
    for j in 1..=3 {
        let roi = load_image(&out.join(format!("level_{j}.png"))).unwrap();
        assert_eq!(roi.shape(), &[1, 32, 32]);
    }
    // The identity level is the input resampled onto the region grid.
    let expected = &net.regions(&load_image(&image).unwrap()).unwrap()[0].2;
    let written = load_image(&out.join("level_1.png")).unwrap();
    for (a, b) in written.data().iter().zip(expected.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }

    net.stns[1].fc2.bias.value.data_mut()[1] = 0.9;
    save_checkpoint(&net, 0, 0, &ckpt).unwrap();
    let r = viralnet(&["visualize", "--image", s(&image), "--ckpt", s(&ckpt), "--out", s(&out)]);
    assert_eq!(r.code, 0);
    let v = r.json();
    assert_eq!(v["rois"][0]["out_of_bounds"], false);
    assert_eq!(v["rois"][1]["out_of_bounds"], true);
}

#[test]
fn neighbors_rank_the_query_first_and_cap_at_manifest_size() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), 12, &[]);
    let manifest = Manifest::load(&data).unwrap();
    let ckpt = tmp.path().join("net.ckpt");
    save_checkpoint(&tiny_net(Variant::Base, 1.0), 0, 0, &ckpt).unwrap();
    let query = manifest.entries[5].path.clone();

    let r = viralnet(&["neighbors", "--image", s(&query), "--ckpt", s(&ckpt), "--data", s(&data), "--k", "3"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let n = r.json()["neighbors"].as_array().unwrap().clone();
    assert_eq!(n.len(), 3);
    assert_eq!(n[0]["distance"], 0.0);
    assert_eq!(PathBuf::from(n[0]["path"].as_str().unwrap()), query);

    let r = viralnet(&["neighbors", "--image", s(&query), "--ckpt", s(&ckpt), "--data", s(&data), "--k", "50"]);
    let n = r.json()["neighbors"].as_array().unwrap().clone();
    assert_eq!(n.len(), 12);
    let d: Vec<f64> = n.iter().map(|x| x["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn category_pretraining_feeds_category_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), 40, &["--categories", "2", "--correlation", "1"]);
    let cat = tmp.path().join("cat").join("category.ckpt");
    let r = viralnet(&["pretrain-category", "--data", s(&data), "--out", s(&cat), "--category-dim", "3"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert_eq!(v["category_dim"], 3);
    assert!(v["train_accuracy"].as_f64().unwrap() >= 0.99);

    let before = fs::read(&cat).unwrap();
    let config = small_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let r = train(&config, &data, &out, &["--arch", "c", "--category-ckpt", s(&cat)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(fs::read(&cat).unwrap(), before);

    let plain = synth(&tmp.path().join("plain"), 10, &[]);
    let r = viralnet(&["pretrain-category", "--data", s(&plain), "--out", s(&cat)]);
    assert_eq!(r.code, 3);
}
