use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_uacp");

const DEFAULT_SCENARIO: &str =
    "[synth]\nn_shared = 10\nn_source_private = 5\nn_target_private = 5\n";

const SMALL: &str = "[synth]
n_shared = 3
n_source_private = 1
n_target_private = 2
input_dim = 4
samples_per_class = 10
[synth.layout]
kind = \"sphere\"
radius = 4.0
min_separation = 2.0
[model]
hidden = [8]
feature_dim = 4
[train]
epochs = 3
batch_size = 8
";

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config-in.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg("--quiet")
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn generate_reports_the_split_and_repeats_with_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[synth]\nn_shared = 10\nn_source_private = 10\nn_target_private = 11\nsamples_per_class = 3\n";
    let a = run(
        dir.path(),
        cfg,
        &[
            "--seed",
            "4",
            "--out",
            &out_arg(dir.path(), "a"),
            "generate",
        ],
    );
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("10 10 11"), "{}", stdout(&a));
    let b = run(
        dir.path(),
        cfg,
        &[
            "--seed",
            "4",
            "--out",
            &out_arg(dir.path(), "b"),
            "generate",
        ],
    );
    assert!(b.status.success());
    for f in ["source.csv", "target.csv"] {
        let fa = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(fa, fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let src = fs::read_to_string(dir.path().join("a/source.csv")).unwrap();
    assert_eq!(src.lines().count(), 1 + 20 * 3);
}

#[test]
fn missing_split_field_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "[synth]\nn_shared = 2\nn_source_private = 1\n",
        &["--out", &out_arg(dir.path(), "o"), "generate"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_target_private"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &format!("{SMALL}\n[loss]\ndelta = 1.0\n"),
        &["--out", &out_arg(dir.path(), "o"), "train"],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn default_scenario_trains_and_emits_one_record_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(
        dir.path(),
        DEFAULT_SCENARIO,
        &["--out", &out.to_string_lossy(), "train"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 30);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 30);
    for f in [
        "checkpoint.bin",
        "loss_log.csv",
        "predictions.csv",
        "config.toml",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let preds = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(
        preds.lines().next().unwrap(),
        "sample_id,mc_argmax,p_neg_argmax,predicted_class"
    );
    assert_eq!(preds.lines().count(), 1 + 15 * 50);
}

#[test]
fn disabled_esl_logs_a_zero_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(
        dir.path(),
        &format!("{SMALL}[loss]\ndisable_esl = true\n"),
        &["--out", &out.to_string_lossy(), "train"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("loss_log.csv")).unwrap();
    let mut lines = log.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(
        header,
        [
            "iteration",
            "epoch",
            "ce",
            "sova",
            "esl",
            "sfc",
            "tova",
            "total"
        ]
    );
    let mut rows = 0;
    for line in lines {
        let esl: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(esl, 0.0);
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn seeds_control_the_metrics_records() {
    let dir = tempfile::tempdir().unwrap();
    let train = |seed: &str, name: &str| {
        let o = run(
            dir.path(),
            SMALL,
            &["--seed", seed, "--out", &out_arg(dir.path(), name), "train"],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(dir.path().join(name).join("metrics.json")).unwrap()
    };
    let a = train("1", "a");
    assert_eq!(a, train("1", "b"));
    assert_ne!(a, train("2", "c"));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        SMALL,
        &["--seed", "9", "--out", &out_arg(dir.path(), "a"), "train"],
    );
    assert!(o.status.success());
    let echoed = fs::read_to_string(dir.path().join("a/config.toml")).unwrap();
    assert!(echoed.contains("seed = 9"));
    let o = run(
        dir.path(),
        &echoed,
        &["--out", &out_arg(dir.path(), "b"), "train"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("a/metrics.json")).unwrap(),
        fs::read(dir.path().join("b/metrics.json")).unwrap()
    );
}

#[test]
fn evaluate_matches_the_last_training_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        SMALL,
        &["--out", &out_arg(dir.path(), "t"), "train"],
    );
    assert!(o.status.success());
    let ckpt = out_arg(dir.path(), "t/checkpoint.bin");
    let o = run(
        dir.path(),
        SMALL,
        &[
            "--out",
            &out_arg(dir.path(), "e"),
            "evaluate",
            "--checkpoint",
            &ckpt,
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |p: &str| -> Vec<serde_json::Value> {
        serde_json::from_str(&fs::read_to_string(dir.path().join(p)).unwrap()).unwrap()
    };
    assert_eq!(
        read("t/metrics.json").last().unwrap(),
        &read("e/metrics.json")[0]
    );
    assert_eq!(
        fs::read(dir.path().join("t/predictions.csv")).unwrap(),
        fs::read(dir.path().join("e/predictions.csv")).unwrap()
    );
}

#[test]
fn warm_start_resumes_training() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        dir.path(),
        SMALL,
        &["--out", &out_arg(dir.path(), "t"), "train"]
    )
    .status
    .success());
    let ckpt = out_arg(dir.path(), "t/checkpoint.bin");
    let o = run(
        dir.path(),
        SMALL,
        &[
            "--out",
            &out_arg(dir.path(), "w"),
            "train",
            "--checkpoint",
            &ckpt,
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(
        fs::read(dir.path().join("t/checkpoint.bin")).unwrap(),
        fs::read(dir.path().join("w/checkpoint.bin")).unwrap()
    );
}

#[test]
fn overflowing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let gen = run(
        dir.path(),
        SMALL,
        &["--out", &out_arg(dir.path(), "d"), "generate"],
    );
    assert!(gen.status.success());
    let src = fs::read_to_string(dir.path().join("d/source.csv")).unwrap();
    let mut lines: Vec<String> = src.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    for c in cells.iter_mut().skip(3) {
        *c = "1e308".into();
    }
    lines[1] = cells.join(",");
    fs::write(dir.path().join("d/source.csv"), lines.join("\n") + "\n").unwrap();
    let cfg = format!(
        "[data]\nsource = \"{}\"\ntarget = \"{}\"\n[model]\nhidden = []\nfeature_dim = 4\n[train]\nbatch_size = 40\nepochs = 1\n",
        dir.path().join("d/source.csv").display(),
        dir.path().join("d/target.csv").display()
    );
    let o = run(
        dir.path(),
        &cfg,
        &["--out", &out_arg(dir.path(), "o"), "train"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn ablation_has_five_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        SMALL,
        &["--out", &out_arg(dir.path(), "o"), "ablate"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("o/ablation.csv")).unwrap();
    let labels: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        labels,
        [
            "w/o L_ESL+L_SFC+L_TOVA",
            "w/o L_ESL",
            "w/o L_SFC",
            "w/o L_TOVA",
            "ALL"
        ]
    );
    for l in &labels {
        assert!(stdout(&o).contains(l));
    }
}

#[test]
fn zero_weights_make_all_ablation_rows_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[loss]\nalpha = 0.0\nbeta = 0.0\ngamma = 0.0\n");
    let o = run(
        dir.path(),
        &cfg,
        &["--out", &out_arg(dir.path(), "o"), "ablate"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/ablation.json")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        for k in ["hos", "acc_kn", "acc_unk"] {
            assert_eq!(r[k], rows[0][k]);
        }
    }
}

#[test]
fn full_method_beats_the_source_only_row_on_the_default_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        DEFAULT_SCENARIO,
        &["--out", &out_arg(dir.path(), "o"), "ablate"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/ablation.json")).unwrap())
            .unwrap();
    let hos = |i: usize| rows[i]["hos"].as_f64().unwrap();
    assert!(hos(4) > hos(0), "ALL {} vs source-only {}", hos(4), hos(0));
}

#[test]
fn sweep_of_one_point_gives_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[sweep]\ntarget_private = [2]\n");
    let o = run(
        dir.path(),
        &cfg,
        &["--out", &out_arg(dir.path(), "o"), "sweep-unknowns"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap();
    let methods: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(methods, ["uacp", "source_only"]);
}

#[test]
fn sweep_echoes_split_counts_and_keeps_hos_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[sweep]\ntarget_private = [5, 15, 25]\n");
    let cfg = cfg.replace("[train]\nepochs = 3", "[train]\nepochs = 1");
    let o = run(
        dir.path(),
        &cfg,
        &["--out", &out_arg(dir.path(), "o"), "sweep-unknowns"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/sweep.json")).unwrap())
            .unwrap();
    let uacp: Vec<&serde_json::Value> = rows.iter().filter(|r| r["method"] == "uacp").collect();
    let counts: Vec<u64> = uacp
        .iter()
        .map(|r| r["n_target_private"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, [5, 15, 25]);
    for r in &rows {
        assert_eq!(r["n_shared"], 3);
        assert_eq!(r["n_source_private"], 1);
        let h = r["hos"].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&h));
    }
}

#[test]
fn sweep_rejects_file_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "[data]\nsource = \"s\"\ntarget = \"t\"\n",
        &["--out", &out_arg(dir.path(), "o"), "sweep-unknowns"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_lists_five_losses() {
    let o = Command::new(BIN)
        .args(["--quiet", "gradcheck", "--draws", "20"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    let names: Vec<&str> = text
        .lines()
        .filter(|l| l.ends_with("PASS") || l.ends_with("FAIL"))
        .filter(|l| !l.starts_with("weighted"))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(names, ["ce", "sova", "esl", "sfc", "tova"]);
}

#[test]
fn perturbed_gradients_fail_the_check() {
    let o = Command::new(BIN)
        .args([
            "--quiet",
            "gradcheck",
            "--draws",
            "4",
            "--perturb-analytic",
            "1.01",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
}
