//! Test accuracy as lambda, beta or the anchor count varies.
//!
//! cargo run --release --example sensitivity_sweep -- [param] [v1,v2,...] [seeds] [steps]

use sage::cli::{mean, sample_std, sweep, SweepParam};
use sage::config::RunConfig;

fn main() -> sage::Result<()> {
    let mut args = std::env::args().skip(1);
    let param: SweepParam = args.next().as_deref().unwrap_or("beta").parse()?;
    let values: Vec<f64> = args
        .next()
        .unwrap_or_else(|| "1,2,4,8".into())
        .split(',')
        .map(|v| v.parse().expect("numeric value"))
        .collect();
    let seeds: usize = args.next().map_or(2, |s| s.parse().expect("seed count"));
    let mut cfg = RunConfig::default();
    cfg.train.total_steps = args.next().map_or(1000, |s| s.parse().expect("step count"));
    cfg.output_dir = std::env::temp_dir().join(format!("sage_sweep_{param}"));

    for row in sweep(&cfg, param, &values, seeds)? {
        println!("{param} = {:<6} test_acc {:.4} ± {:.4}", row.value, mean(&row.accs), sample_std(&row.accs));
    }
    Ok(())
}
