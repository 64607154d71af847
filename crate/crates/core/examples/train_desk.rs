//! One training run on the desk dataset, writing the same files as
//! `sage train`.
//!
//! cargo run --release --example train_desk -- [out_dir] [key=value ...]

use sage::cli::train;
use sage::config::RunConfig;

fn main() -> sage::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    cfg.output_dir = args.next().map_or_else(|| std::env::temp_dir().join("sage_desk"), Into::into);
    for kv in args {
        cfg.apply_override(&kv)?;
    }
    let out = train(&cfg, false)?;
    println!("{:>6} {:>9} {:>8} {:>8} {:>8} {:>6}", "step", "l_total", "test", "pl_acc", "sil", "corr");
    for row in &out.rows {
        let r = &row.report;
        println!(
            "{:>6} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>6.2}",
            row.step, row.losses.l_total, r.test_acc, r.pl_acc, r.silhouette, r.correction_ratio
        );
    }
    println!("files in {}", cfg.output_dir.display());
    Ok(())
}
