//! The `sage` commands as library functions. The binary only parses flags
//! and maps errors to exit codes; everything here is callable from tests
//! and examples.
//!
//! Files written by [`train`] into the output directory:
//!
//! | file | contents |
//! |---|---|
//! | `config.resolved` | the effective configuration, written before any compute |
//! | `dataset.txt` | the generated dataset |
//! | `anchors.txt` | the anchor frame |
//! | `metrics.csv` | one row per evaluation |
//! | `checkpoint_<step>.txt` | periodic checkpoints, if enabled |
//! | `checkpoint_final.txt` | parameters after the last step |
//! | `graphs/step_<step>.txt` | `(A, P̂, G)` of the probe batch, if requested |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::anchors::{generate_etf, verify_frame, AnchorFrame};
use crate::config::RunConfig;
use crate::data::UniSSLDataset;
use crate::error::{Result, SageError};
use crate::metrics::DiagnosticReport;
use crate::model::ModelParams;
use crate::numkit::Mat;
use crate::objective::Components;
use crate::trainer::{run, run_observed, EvalContext, RunObserver, RunOutput};

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const METRICS_CSV: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.txt";
pub const DATASET_FILE: &str = "dataset.txt";
pub const ANCHORS_FILE: &str = "anchors.txt";
pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Process exit code for an error: 2 for infeasible configurations, 3 for
/// numeric failures, 1 for everything else.
pub fn exit_code(err: &SageError) -> i32 {
    match err {
        SageError::GeometricInfeasibility(_) | SageError::LayoutInfeasibility(_) => 2,
        SageError::NumericFailure(_) => 3,
        _ => 1,
    }
}

/// The one-line form printed on failure.
pub fn error_line(err: &SageError) -> String {
    let msg = err.detail().replace('\n', " ");
    format!("error: {}: {}", err.kind(), msg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(SageError::from)
}

/// Builds, saves and verifies an anchor frame; returns the printed report.
pub fn gen_anchors(k: usize, d: usize, seed: u64, out: &Path) -> Result<String> {
    let frame = generate_etf(k, d, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    frame.save(out)?;
    let report = verify_frame(&frame);
    let gram = frame.p.matmul_t(&frame.p);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                lo = lo.min(gram.get(i, j));
                hi = hi.max(gram.get(i, j));
            }
        }
    }
    let mut s = String::new();
    writeln!(s, "anchors K={k} d={d} seed={seed} -> {}", out.display()).unwrap();
    writeln!(s, "max_norm_dev {:e}", report.max_norm_dev).unwrap();
    writeln!(s, "max_equiangular_dev {:e}", report.max_equiangular_dev).unwrap();
    writeln!(s, "max_centering_dev {:e}", report.max_centering_dev).unwrap();
    writeln!(s, "gram_offdiag_min {lo:.12}").unwrap();
    writeln!(s, "gram_offdiag_max {hi:.12}").unwrap();
    writeln!(s, "gram_offdiag_expected {:.12}", -1.0 / (k as f64 - 1.0)).unwrap();
    Ok(s)
}

/// `(A, P̂, G)` as a text file: a `sage-graph 1` header, then for each
/// matrix a `name rows cols` line followed by its rows.
pub fn graph_to_text(affinity: &Mat, transition: &Mat, consensus: &Mat) -> String {
    let mut s = String::from("sage-graph 1\n");
    for (name, m) in [("affinity", affinity), ("transition", transition), ("consensus", consensus)] {
        writeln!(s, "{name} {} {}", m.rows(), m.cols()).unwrap();
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
    }
    s
}

/// Inverse of [`graph_to_text`]: `(name, matrix)` in file order.
pub fn graph_from_text(text: &str) -> Result<Vec<(String, Mat)>> {
    let mut lines = text.lines();
    if lines.next() != Some("sage-graph 1") {
        return Err(SageError::Parse("missing sage-graph header".into()));
    }
    let mut out = Vec::new();
    while let Some(head) = lines.next() {
        let parts: Vec<&str> = head.split_whitespace().collect();
        let [name, r, c] = parts.as_slice() else {
            return Err(SageError::Parse(format!("bad matrix header {head:?}")));
        };
        let parse_n = |v: &str| v.parse::<usize>().map_err(|e| SageError::Parse(format!("{v}: {e}")));
        let (r, c) = (parse_n(r)?, parse_n(c)?);
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r {
            let line = lines.next().ok_or_else(|| SageError::Parse(format!("{name}: truncated")))?;
            for v in line.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|e| SageError::Parse(format!("{v}: {e}")))?);
            }
        }
        out.push((name.to_string(), Mat::from_vec(r, c, data)?));
    }
    Ok(out)
}

struct TrainFiles {
    dir: PathBuf,
    dump_graphs: bool,
    total_steps: usize,
}

impl RunObserver for TrainFiles {
    fn on_eval(&mut self, step: usize, params: &ModelParams, ctx: &EvalContext) -> Result<()> {
        if self.dump_graphs {
            let (a, p, g, _) = ctx.probe_graph(params)?;
            let dir = self.dir.join("graphs");
            create_dir(&dir)?;
            fs::write(dir.join(format!("step_{step}.txt")), graph_to_text(&a, &p, &g))?;
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: usize, params: &ModelParams) -> Result<()> {
        let name =
            if step == self.total_steps { FINAL_CHECKPOINT.to_string() } else { format!("checkpoint_{step}.txt") };
        params.save(&self.dir.join(name))
    }
}

/// One full run into `cfg.output_dir`.
pub fn train(cfg: &RunConfig, dump_graphs: bool) -> Result<RunOutput> {
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_text())?;
    let config = &cfg.train;
    config.validate()?;
    let dataset = config.data.build(config.seed)?;
    dataset.save(&dir.join(DATASET_FILE))?;

    let mut files = TrainFiles { dir: dir.clone(), dump_graphs, total_steps: config.total_steps };
    let out = run_observed(config, &dataset, &mut files)?;
    out.frame.save(&dir.join(ANCHORS_FILE))?;
    fs::write(dir.join(METRICS_CSV), out.csv())?;
    Ok(out)
}

/// The four ablation rungs: baseline, +auxiliary branch, +reliability
/// weighting, full method.
pub const LADDER: [(&str, Components); 4] = [
    ("v1_baseline", Components::ladder(false, false, false)),
    ("v2_ab", Components::ladder(true, false, false)),
    ("v3_drp", Components::ladder(true, true, false)),
    ("v4_full", Components::ladder(true, true, true)),
];

pub const RUNS_HEADER: &str =
    "variant,ab,drp,gri,seed,test_acc,pl_acc,pl_f1_macro,silhouette,inter_sim,intra_sim,correction_ratio";
pub const SUMMARY_HEADER: &str = "variant,ab,drp,gri,runs,test_acc_mean,test_acc_std";

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub variant: String,
    pub components: Components,
    pub seed: u64,
    pub report: DiagnosticReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub components: Components,
    pub accs: Vec<f64>,
}

impl SummaryRow {
    pub fn mean(&self) -> f64 {
        mean(&self.accs)
    }

    pub fn std(&self) -> f64 {
        sample_std(&self.accs)
    }

    fn csv_line(&self) -> String {
        let c = self.components;
        format!(
            "{},{},{},{},{},{},{}",
            self.variant,
            c.ab,
            c.drp,
            c.gri,
            self.accs.len(),
            self.mean(),
            self.std()
        )
    }
}

/// Mean, summing in order.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with `n - 1` in the denominator; 0 for fewer than two
/// values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

fn seed_dir(root: &Path, variant: &str, seed: u64) -> PathBuf {
    root.join(variant).join(format!("seed_{seed}"))
}

/// Runs every ladder rung on seeds `cfg.train.seed .. cfg.train.seed + seeds`,
/// each into `<out>/<variant>/seed_<s>/`, then writes `runs.csv` and
/// `summary.csv`.
pub fn ablate(cfg: &RunConfig, seeds: usize) -> Result<(Vec<RunRecord>, Vec<SummaryRow>)> {
    if seeds == 0 {
        return Err(SageError::Config("ablation needs at least one seed".into()));
    }
    let root = &cfg.output_dir;
    create_dir(root)?;
    fs::write(root.join(RESOLVED_CONFIG), cfg.to_text())?;
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for (variant, rung) in LADDER {
        let mut accs = Vec::new();
        for i in 0..seeds as u64 {
            let seed = cfg.train.seed.wrapping_add(i);
            let mut run_cfg = cfg.clone();
            run_cfg.train.seed = seed;
            run_cfg.train.components = Components { ab: rung.ab, drp: rung.drp, gri: rung.gri, ..cfg.train.components };
            run_cfg.output_dir = seed_dir(root, variant, seed);
            log::info!("ablation {variant} seed {seed}");
            let out = train(&run_cfg, false)?;
            let report = out.final_report().clone();
            accs.push(report.test_acc);
            records.push(RunRecord { variant: variant.into(), components: run_cfg.train.components, seed, report });
        }
        summary.push(SummaryRow { variant: variant.into(), components: rung, accs });
    }
    let mut runs = format!("{RUNS_HEADER}\n");
    for r in &records {
        let (c, d) = (r.components, &r.report);
        writeln!(
            runs,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            c.ab,
            c.drp,
            c.gri,
            r.seed,
            d.test_acc,
            d.pl_acc,
            d.pl_f1_macro,
            d.silhouette,
            d.inter_sim,
            d.intra_sim,
            d.correction_ratio
        )
        .unwrap();
    }
    fs::write(root.join(RUNS_CSV), runs)?;
    fs::write(root.join(SUMMARY_CSV), summary_csv(&summary))?;
    Ok((records, summary))
}

/// Value of `column` on the last row of a metrics CSV.
pub fn final_metric(csv: &str, column: &str) -> Result<f64> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| SageError::Parse("empty metrics csv".into()))?;
    let idx = header
        .split(',')
        .position(|h| h == column)
        .ok_or_else(|| SageError::Parse(format!("no column {column}")))?;
    let last = lines.last().ok_or_else(|| SageError::Parse("metrics csv has no rows".into()))?;
    let cell = last.split(',').nth(idx).ok_or_else(|| SageError::Parse("short row".into()))?;
    cell.parse().map_err(|e| SageError::Parse(format!("{column} = {cell:?}: {e}")))
}

/// Rebuilds the ablation summary from the per-run metrics files alone.
pub fn summarize_ablation(root: &Path, cfg: &RunConfig, seeds: usize) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for (variant, rung) in LADDER {
        let mut accs = Vec::new();
        for i in 0..seeds as u64 {
            let dir = seed_dir(root, variant, cfg.train.seed.wrapping_add(i));
            let csv = fs::read_to_string(dir.join(METRICS_CSV))?;
            accs.push(final_metric(&csv, "test_acc")?);
        }
        rows.push(SummaryRow { variant: variant.into(), components: rung, accs });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Beta,
    /// Anchor count.
    K,
}

impl std::str::FromStr for SweepParam {
    type Err = SageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "beta" => Ok(SweepParam::Beta),
            "k" => Ok(SweepParam::K),
            other => Err(SageError::Config(format!("cannot sweep {other:?}; expected lambda, beta or k"))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Beta => "beta",
            SweepParam::K => "k",
        })
    }
}

pub const SWEEP_HEADER: &str = "param,value,runs,test_acc_mean,test_acc_std";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub accs: Vec<f64>,
}

/// Trains the configured method once per (value, seed) and writes
/// `sweep.csv`, rows sorted by ascending value.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], seeds: usize) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds == 0 {
        return Err(SageError::Config("sweep needs at least one value and one seed".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let as_count = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(SageError::Config(format!("{param} must be a positive integer, got {v}")))
        }
    };
    create_dir(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join(RESOLVED_CONFIG), cfg.to_text())?;
    let mut rows = Vec::new();
    for &v in &sorted {
        let mut base = cfg.train.clone();
        match param {
            SweepParam::Lambda => base.lambda = v,
            SweepParam::Beta => base.beta = as_count(v)?,
            SweepParam::K => base.anchors = as_count(v)?,
        }
        let mut accs = Vec::new();
        for i in 0..seeds as u64 {
            let mut c = base.clone();
            c.seed = cfg.train.seed.wrapping_add(i);
            log::info!("sweep {param}={v} seed {}", c.seed);
            let dataset = c.data.build(c.seed)?;
            accs.push(run(&c, &dataset)?.final_report().test_acc);
        }
        rows.push(SweepRow { value: v, accs });
    }
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        writeln!(s, "{param},{},{},{},{}", r.value, r.accs.len(), mean(&r.accs), sample_std(&r.accs)).unwrap();
    }
    fs::write(cfg.output_dir.join(SWEEP_CSV), s)?;
    Ok(rows)
}

/// Diagnostic report for a saved model on a saved dataset. `cfg` supplies
/// `lambda`, `beta`, the probe batch size and seed, and the anchor seed when
/// no anchor file is given.
pub fn diagnose(
    checkpoint: &Path,
    dataset: &Path,
    cfg: &RunConfig,
    anchors: Option<&Path>,
    dump_graph: Option<&Path>,
) -> Result<DiagnosticReport> {
    let params = ModelParams::load(checkpoint)?;
    let ds = UniSSLDataset::load(dataset)?;
    let dims = &params.dims;
    if dims.input != ds.input_dim || dims.classes != ds.classes {
        return Err(SageError::InvalidInput(format!(
            "checkpoint expects {} inputs / {} classes, dataset has {} / {}",
            dims.input, dims.classes, ds.input_dim, ds.classes
        )));
    }
    let mut config = cfg.train.clone();
    config.hidden = dims.hidden.clone();
    config.feature_dim = dims.feature;
    config.data.input_dim = ds.input_dim;
    config.data.classes = ds.classes;
    let frame = match anchors {
        Some(p) => AnchorFrame::load(p)?,
        None => generate_etf(config.anchor_count(), dims.feature, config.seed)?,
    };
    if frame.d != dims.feature {
        return Err(SageError::InvalidInput(format!(
            "anchors live in {} dimensions, model features in {}",
            frame.d, dims.feature
        )));
    }
    let ctx = EvalContext::new(&ds, &frame, &config);
    if let Some(path) = dump_graph {
        let (a, p, g, _) = ctx.probe_graph(&params)?;
        fs::write(path, graph_to_text(&a, &p, &g))?;
    }
    ctx.evaluate(&params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&SageError::GeometricInfeasibility("x".into())), 2);
        assert_eq!(exit_code(&SageError::NumericFailure("x".into())), 3);
        assert_eq!(exit_code(&SageError::Config("x".into())), 1);
        assert_eq!(
            error_line(&SageError::GeometricInfeasibility("300 > 129\nmore".into())),
            "error: geometric-infeasibility: 300 > 129 more"
        );
    }

    #[test]
    fn std_and_mean() {
        assert_eq!(mean(&[]), 0.0);
        assert_eq!(sample_std(&[0.5]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn graph_text_roundtrip() {
        let a = Mat::from_rows(&[[1.0, -0.25], [0.1, 1e-300]]).unwrap();
        let text = graph_to_text(&a, &a.scale(2.0), &a.scale(3.0));
        let back = graph_from_text(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0], ("affinity".to_string(), a.clone()));
        assert_eq!(back[2].1, a.scale(3.0));
        assert!(graph_from_text("nope").is_err());
    }

    #[test]
    fn final_metric_reads_last_row() {
        let csv = "step,test_acc\n0,0.25\n10,0.5\n";
        assert_eq!(final_metric(csv, "test_acc").unwrap(), 0.5);
        assert!(final_metric(csv, "missing").is_err());
        assert!(final_metric("step,test_acc\n", "test_acc").is_err());
    }

    #[test]
    fn sweep_param_names() {
        for p in [SweepParam::Lambda, SweepParam::Beta, SweepParam::K] {
            assert_eq!(p.to_string().parse::<SweepParam>().unwrap(), p);
        }
        assert!("gamma".parse::<SweepParam>().is_err());
    }
}
