use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use docnade::corpus::{build_vocabulary, write_corpus, MultimodalDocument};
use docnade::deep::{DeepSettings, Head};
use docnade::model::{init_model, ModelKind, Network};
use docnade::{Corpus, CorpusFormat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn docnade(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docnade"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = docnade(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, variant: &str) {
    ok(
        dir,
        &[
            "synth",
            "--out",
            variant,
            "--train",
            "60",
            "--test",
            "20",
            "--variant",
            variant,
            "--seed",
            "3",
        ],
    );
}

fn train(dir: &Path, out_dir: &str, epochs: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train",
        "--corpus",
        "noisy-train.txt",
        "--model",
        "supdocnade",
        "--hidden",
        "8",
        "--epochs",
        epochs,
        "--out-dir",
        out_dir,
    ];
    args.extend_from_slice(extra);
    let run = ok(dir, &args);
    dir.join(run.trim())
}

fn setup() -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "noisy");
    tmp
}

#[test]
fn training_is_reproducible_from_manifest() {
    let tmp = setup();
    let run = train(tmp.path(), "a", "2", &[]);
    let again = train(tmp.path(), "b", "2", &[]);
    let model = std::fs::read(run.join("model.bin")).unwrap();
    assert_eq!(model, std::fs::read(again.join("model.bin")).unwrap());

    let manifest = run.join("manifest.json");
    let rerun = ok(tmp.path(), &["rerun", manifest.to_str().unwrap(), "--out-dir", "c"]);
    assert_eq!(
        model,
        std::fs::read(tmp.path().join(rerun.trim()).join("model.bin")).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(run.join("train.log")).unwrap().lines().count(),
        2
    );
}

#[test]
fn zero_learning_rate_keeps_initial_model() {
    let tmp = setup();
    let one = train(tmp.path(), "a", "1", &["--lr", "0"]);
    let three = train(tmp.path(), "b", "3", &["--lr", "0"]);
    assert_eq!(
        std::fs::read(one.join("model.bin")).unwrap(),
        std::fs::read(three.join("model.bin")).unwrap()
    );
}

#[test]
fn invalid_config_exits_before_work() {
    let tmp = setup();
    let out = docnade(
        tmp.path(),
        &[
            "train",
            "--corpus",
            "noisy-train.txt",
            "--model",
            "docnade",
            "--head",
            "sigmoid",
            "--out-dir",
            "runs",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmoid"));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn missing_model_is_a_clean_error() {
    let tmp = setup();
    let out = docnade(
        tmp.path(),
        &["eval", "--model", "absent.bin", "--corpus", "noisy-test.txt"],
    );
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.starts_with("error: ") && stderr.contains("absent.bin"),
        "{stderr}"
    );
}

#[test]
fn dimension_mismatch_names_the_quantity() {
    let tmp = setup();
    synth(tmp.path(), "deterministic");
    let run = train(tmp.path(), "runs", "1", &[]);
    let model = run.join("model.bin");
    let out = docnade(
        tmp.path(),
        &[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--corpus",
            "deterministic-test.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary size Q"));
}

#[test]
fn eval_annotate_retrieve_are_deterministic() {
    let tmp = setup();
    let model = train(tmp.path(), "runs", "2", &[]).join("model.bin");
    let model = model.to_str().unwrap();
    let eval = [
        "eval",
        "--model",
        model,
        "--corpus",
        "noisy-test.txt",
        "--out-dir",
        "runs",
    ];
    let first = ok(tmp.path(), &eval);
    assert_eq!(first, ok(tmp.path(), &eval));
    assert!(first.contains("accuracy") && first.contains("f_measure@5"));

    let annotations = ok(
        tmp.path(),
        &["annotate", "--model", model, "--corpus", "noisy-test.txt", "--k", "5"],
    );
    assert_eq!(annotations.lines().count(), 20);
    for line in annotations.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["ids"].as_array().unwrap().len(), 5);
        assert_eq!(v["words"].as_array().unwrap().len(), 5);
    }

    let retrieved = ok(
        tmp.path(),
        &["retrieve", "--model", model, "--corpus", "noisy-test.txt", "--k", "4"],
    );
    for (i, line) in retrieved.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["ids"][0].as_u64(), Some(i as u64));
        assert_eq!(v["ids"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn represent_writes_one_row_per_document() {
    let tmp = setup();
    let model = train(tmp.path(), "runs", "1", &[]).join("model.bin");
    let rows = ok(
        tmp.path(),
        &[
            "represent",
            "--model",
            model.to_str().unwrap(),
            "--corpus",
            "noisy-test.txt",
        ],
    );
    assert_eq!(rows.lines().count(), 20);
    let v: serde_json::Value = serde_json::from_str(rows.lines().next().unwrap()).unwrap();
    assert_eq!(v["h"].as_array().unwrap().len(), 8);
}

#[test]
fn inspect_reports_forced_topic() {
    let tmp = tempfile::tempdir().unwrap();
    let vocab = build_vocabulary(3, 2, &["sky", "sea"]).unwrap();
    let docs = vec![
        MultimodalDocument::new([(0, 1)], [0], None),
        MultimodalDocument::new([(1, 1)], [1], None),
    ];
    let corpus = Corpus::new(vocab.clone(), docs, 2, 0).unwrap();
    write_corpus(&corpus, &tmp.path().join("c.txt"), CorpusFormat::TextSparse).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = init_model(
        ModelKind::SupDocNade,
        Head::Softmax,
        &[4],
        vocab.size(),
        2,
        0,
        0,
        DeepSettings::default(),
        &mut rng.clone(),
        &mut rng,
    )
    .unwrap();
    let Network::Shallow { params, .. } = &mut model.network else {
        unreachable!()
    };
    params.u.fill(0.0);
    params.u[[1, 2]] = 1.0;
    params.w.fill(0.0);
    params.w[[2, 4]] = 3.0;
    params.w[[2, 7]] = 2.0;
    model.save(&tmp.path().join("m.bin")).unwrap();

    let out = ok(
        tmp.path(),
        &[
            "inspect", "--model", "m.bin", "--corpus", "c.txt", "--class", "1", "--topics", "1", "--words", "1",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["topics"], serde_json::json!([2]));
    assert_eq!(v["visual_words"][0]["id"], 4);
    assert_eq!(v["annotation_words"][0]["word"], "sea");
}

#[test]
fn grid_selection_is_deterministic() {
    let tmp = setup();
    std::fs::write(tmp.path().join("g.toml"), "lambda = [0.1, 1.0]\nlr = [0.01]\n").unwrap();
    let args = [
        "grid",
        "--corpus",
        "noisy-train.txt",
        "--grid",
        "g.toml",
        "--model",
        "supdocnade",
        "--hidden",
        "8",
        "--epochs",
        "1",
        "--out-dir",
        "runs",
    ];
    let first = ok(tmp.path(), &args);
    assert_eq!(first, ok(tmp.path(), &args));
    let v: serde_json::Value = serde_json::from_str(first.trim()).unwrap();
    let dir = tmp
        .path()
        .join(v["manifest"].as_str().unwrap())
        .parent()
        .unwrap()
        .to_path_buf();
    let records = std::fs::read_to_string(dir.join("grid.records")).unwrap();
    assert_eq!(records.lines().count(), 2);

    let best = dir.join("best_manifest.json");
    let run = ok(tmp.path(), &["rerun", best.to_str().unwrap(), "--out-dir", "runs"]);
    assert!(tmp.path().join(run.trim()).join("model.bin").exists());

    std::fs::write(tmp.path().join("empty.toml"), "").unwrap();
    let mut empty = args;
    empty[4] = "empty.toml";
    assert_eq!(docnade(tmp.path(), &empty).status.code(), Some(2));
}

#[test]
fn inputs_are_not_modified() {
    let tmp = setup();
    let read = |name: &str| std::fs::read(tmp.path().join(name)).unwrap();
    let before = (read("noisy-train.txt"), read("noisy-train.txt.header"));
    let model = train(tmp.path(), "runs", "1", &[]).join("model.bin");
    let model_bytes = std::fs::read(&model).unwrap();
    ok(
        tmp.path(),
        &[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--corpus",
            "noisy-train.txt",
        ],
    );
    assert_eq!(before, (read("noisy-train.txt"), read("noisy-train.txt.header")));
    assert_eq!(model_bytes, std::fs::read(&model).unwrap());
}

#[test]
fn eval_on_training_data_of_a_memorizing_model() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &["synth", "--out", "small", "--train", "20", "--test", "5", "--seed", "5"],
    );
    let run = ok(
        tmp.path(),
        &[
            "train",
            "--corpus",
            "small-train.txt",
            "--model",
            "supdocnade",
            "--hidden",
            "50",
            "--epochs",
            "30",
            "--lr",
            "0.05",
            "--lambda",
            "0.01",
            "--avg-decay",
            "0.9",
        ],
    );
    let model = tmp.path().join(run.trim()).join("model.bin");
    let report = ok(
        tmp.path(),
        &[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--corpus",
            "small-train.txt",
        ],
    );
    let accuracy: f64 = report
        .lines()
        .find(|l| l.starts_with("accuracy"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(accuracy >= 0.95, "{report}");
}

fn grid_run(dir: &Path, grid: &str) -> (serde_json::Value, Vec<serde_json::Value>, PathBuf) {
    std::fs::write(dir.join("grid.toml"), grid).unwrap();
    let out = ok(
        dir,
        &[
            "grid",
            "--corpus",
            "noisy-train.txt",
            "--grid",
            "grid.toml",
            "--model",
            "supdocnade",
            "--hidden",
            "8",
            "--epochs",
            "2",
            "--out-dir",
            "runs",
        ],
    );
    let best: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let manifest = dir.join(best["manifest"].as_str().unwrap());
    let records = std::fs::read_to_string(manifest.parent().unwrap().join("grid.records")).unwrap();
    let records = records.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    (best, records, manifest)
}

#[test]
fn grid_selects_first_best_lambda() {
    let tmp = setup();
    let (best, records, manifest) = grid_run(tmp.path(), "lambda = [0.0, 0.1]\n");
    let values: Vec<f64> = records.iter().map(|r| r["value"].as_f64().unwrap()).collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = values.iter().position(|&v| v == max).unwrap();
    assert_eq!(best["best_index"].as_u64(), Some(first as u64));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(manifest).unwrap()).unwrap();
    assert_eq!(manifest["config"], records[first]["config"]);
}

#[test]
fn one_point_grid_matches_plain_training() {
    let tmp = setup();
    let (_, records, manifest) = grid_run(tmp.path(), "lambda = [1.0]\n");
    assert_eq!(records.len(), 1);
    let from_grid = ok(tmp.path(), &["rerun", manifest.to_str().unwrap(), "--out-dir", "runs"]);
    let direct = train(tmp.path(), "direct", "2", &[]);
    assert_eq!(
        std::fs::read(tmp.path().join(from_grid.trim()).join("model.bin")).unwrap(),
        std::fs::read(direct.join("model.bin")).unwrap()
    );
}
