//! Representation diagnostics before and after training, from saved files.
//!
//! cargo run --release --example diagnostics -- [steps]

use sage::cli::{self, diagnose, train};
use sage::config::RunConfig;
use sage::metrics::DiagnosticReport;
use sage::model::init_params;

fn show(label: &str, r: &DiagnosticReport) {
    println!(
        "{label:>9}: test {:.3}  pseudo-label acc {:.3} f1 {:.3}  silhouette {:.3}  intra {:.3} inter {:.3}  correction {:.2}",
        r.test_acc, r.pl_acc, r.pl_f1_macro, r.silhouette, r.intra_sim, r.inter_sim, r.correction_ratio
    );
}

fn main() -> sage::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.train.total_steps = std::env::args().nth(1).map_or(1500, |s| s.parse().expect("step count"));
    cfg.output_dir = std::env::temp_dir().join("sage_diagnostics");
    train(&cfg, false)?;

    let dir = &cfg.output_dir;
    let dataset = dir.join(cli::DATASET_FILE);
    let anchors = dir.join(cli::ANCHORS_FILE);
    let fresh = dir.join("untrained.txt");
    init_params(&cfg.train.model_dims(), cfg.train.seed + 1)?.save(&fresh)?;

    show("untrained", &diagnose(&fresh, &dataset, &cfg, Some(&anchors), None)?);
    let graph = dir.join("graph_final.txt");
    show("trained", &diagnose(&dir.join(cli::FINAL_CHECKPOINT), &dataset, &cfg, Some(&anchors), Some(&graph))?);
    println!("probe-batch graph written to {}", graph.display());
    Ok(())
}
