//! The `sage` binary end to end: exit codes, file layout, CSV shapes.

use std::path::Path;
use std::process::{Command, Output};

use sage::cli::{FINAL_CHECKPOINT, METRICS_CSV, RUNS_CSV, SUMMARY_CSV, SUMMARY_HEADER, SWEEP_CSV, SWEEP_HEADER};
use sage::config::RunConfig;
use sage::model::init_params;
use sage::trainer::CSV_HEADER;

const QUICK: [&str; 4] = ["total_steps=30", "eval_every=10", "checkpoint_every=20", "log_level=warn"];

fn sage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sage")).args(args).env_remove("RUST_LOG").output().unwrap()
}

fn quick_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    for o in QUICK.iter().chain(extra) {
        args.extend(["--override", o]);
    }
    sage(&args)
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let col = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.txt");
    let out = out.to_str().unwrap();

    let ok = sage(&["gen-anchors", "--k", "3", "--d", "2", "--seed", "0", "--out", out]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("gram_offdiag_expected"));

    let infeasible = sage(&["gen-anchors", "--k", "300", "--d", "128", "--out", out]);
    assert_eq!(infeasible.status.code(), Some(2));
    assert!(stderr(&infeasible).starts_with("error: geometric-infeasibility"));

    let usage = sage(&["train", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(stderr(&usage).starts_with("error: usage"));

    let bad_config = quick_run(&dir.path().join("r"), &["beta=0"]);
    assert_eq!(bad_config.status.code(), Some(1));
    assert!(stderr(&bad_config).starts_with("error: config"));

    assert_eq!(sage(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = quick_run(&run, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.resolved", METRICS_CSV, "checkpoint_20.txt", FINAL_CHECKPOINT, "dataset.txt", "anchors.txt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(run.join(METRICS_CSV)).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(column(&csv, "step"), vec![0.0, 10.0, 20.0, 30.0]);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == CSV_HEADER.split(',').count()));

    let resolved = RunConfig::load(&run.join("config.resolved")).unwrap();
    assert_eq!(resolved.train.total_steps, 30);
    assert_eq!(resolved.output_dir, run);
}

#[test]
fn disabling_gri_zeroes_relational_losses() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(quick_run(&run, &["enable_gri=false"]).status.success());
    let csv = std::fs::read_to_string(run.join(METRICS_CSV)).unwrap();
    for name in ["l_con", "l_sim"] {
        assert!(column(&csv, name).iter().all(|&v| v == 0.0), "{name} nonzero");
    }
    assert!(column(&csv, "l_cls").iter().all(|&v| v > 0.0));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(quick_run(&a, &["seed=4"]).status.success());
    assert!(quick_run(&b, &["seed=4"]).status.success());
    assert!(quick_run(&c, &["seed=5"]).status.success());
    let read = |p: &Path| std::fs::read(p.join(METRICS_CSV)).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(std::fs::read(a.join(FINAL_CHECKPOINT)).unwrap(), std::fs::read(b.join(FINAL_CHECKPOINT)).unwrap());
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("desk.cfg");
    std::fs::write(&cfg_path, "# quick\ntrain.total_steps = 20\ntrain.eval_every = 10\ngri.beta = 3\n").unwrap();
    let run = dir.path().join("run");
    let o = sage(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--override",
        "gri.beta=5",
        "--override",
        "log_level=warn",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(run.join("config.resolved")).unwrap();
    let resolved = RunConfig::parse(&text).unwrap();
    assert_eq!(resolved.train.beta, 5);
    assert_eq!(resolved.train.total_steps, 20);
    assert_eq!(resolved.to_text(), text);
}

#[test]
fn diagnose_reports_json_and_graph() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(quick_run(&run, &[]).status.success());

    // An untrained model on the same dataset sits near chance.
    let cfg = RunConfig::load(&run.join("config.resolved")).unwrap();
    let fresh = dir.path().join("fresh.txt");
    init_params(&cfg.train.model_dims(), 99).unwrap().save(&fresh).unwrap();

    let graph = dir.path().join("graph.txt");
    let o = sage(&[
        "diagnose",
        "--checkpoint",
        fresh.to_str().unwrap(),
        "--dataset",
        run.join("dataset.txt").to_str().unwrap(),
        "--config",
        run.join("config.resolved").to_str().unwrap(),
        "--anchors",
        run.join("anchors.txt").to_str().unwrap(),
        "--dump-graph",
        graph.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let obj = json.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["correction_ratio", "inter_sim", "intra_sim", "pl_acc", "pl_f1_macro", "silhouette", "test_acc"]
    );
    // One random init sends each cluster to a near-constant class, so a
    // single draw scores (fixed points of that map) / C. Chance holds on
    // average over inits.
    let chance = 1.0 / cfg.train.data.classes as f64;
    let mut accs = vec![obj["test_acc"].as_f64().unwrap()];
    for seed in 0..9 {
        let p = dir.path().join(format!("fresh_{seed}.txt"));
        init_params(&cfg.train.model_dims(), seed).unwrap().save(&p).unwrap();
        let r = sage::cli::diagnose(&p, &run.join("dataset.txt"), &cfg, None, None).unwrap();
        accs.push(r.test_acc);
    }
    let acc = sage::cli::mean(&accs);
    assert!((acc - chance).abs() <= 0.1, "untrained accuracy {acc} over {accs:?}");

    let mats = sage::cli::graph_from_text(&std::fs::read_to_string(&graph).unwrap()).unwrap();
    let (_, g) = mats.iter().find(|(name, _)| name == "consensus").unwrap();
    for s in g.row_sums() {
        assert!((s - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn diagnose_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(quick_run(&a, &[]).status.success());
    assert!(quick_run(&b, &["input_dim=7", "total_steps=10"]).status.success());
    let o = sage(&[
        "diagnose",
        "--checkpoint",
        a.join(FINAL_CHECKPOINT).to_str().unwrap(),
        "--dataset",
        b.join("dataset.txt").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn sweep_writes_one_sorted_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("beta");
    let mut args = vec!["sweep", "--param", "beta", "--values", "8,1,2,3,4,5,6,7", "--out", run.to_str().unwrap()];
    for o in &QUICK {
        args.extend(["--override", o]);
    }
    let o = sage(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.join(SWEEP_CSV)).unwrap();
    assert_eq!(csv.lines().next().unwrap(), SWEEP_HEADER);
    assert_eq!(column(&csv, "value"), (1..=8).map(f64::from).collect::<Vec<_>>());

    let lam = dir.path().join("lambda");
    let mut args = vec!["sweep", "--param", "lambda", "--values", "1,0.01,0.1", "--out", lam.to_str().unwrap()];
    for o in &QUICK {
        args.extend(["--override", o]);
    }
    assert!(sage(&args).status.success());
    let values = column(&std::fs::read_to_string(lam.join(SWEEP_CSV)).unwrap(), "value");
    assert_eq!(values, vec![0.01, 0.1, 1.0]);

    let bad = sage(&["sweep", "--param", "gamma", "--values", "1", "--out", lam.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn ablate_writes_every_rung_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("abl");
    let mut args = vec!["ablate", "--seeds", "2", "--out", root.to_str().unwrap()];
    for o in &QUICK {
        args.extend(["--override", o]);
    }
    let o = sage(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = std::fs::read_to_string(root.join(RUNS_CSV)).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4 * 2);
    let summary = std::fs::read_to_string(root.join(SUMMARY_CSV)).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER);
    let variants: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["v1_baseline", "v2_ab", "v3_drp", "v4_full"]);
    for v in &variants {
        for seed in [0, 1] {
            assert!(root.join(v).join(format!("seed_{seed}")).join(METRICS_CSV).is_file());
        }
    }
}
