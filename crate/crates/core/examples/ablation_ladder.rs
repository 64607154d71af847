//! Baseline → +AB → +DRP → full ladder on the desk dataset.
//!
//! cargo run --release --example ablation_ladder -- [seeds] [steps] [key=value ...]

use std::time::Instant;

use sage::config::RunConfig;
use sage::objective::Components;
use sage::trainer::run;

fn main() -> sage::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seed count"));
    let steps: usize = args.next().map_or(3000, |s| s.parse().expect("step count"));
    let mut base = RunConfig::default();
    base.train.total_steps = steps;
    for kv in args {
        base.apply_override(&kv)?;
    }

    let variants = [
        ("baseline", Components::ladder(false, false, false)),
        ("+AB", Components::ladder(true, false, false)),
        ("+DRP", Components::ladder(true, true, false)),
        ("full", Components::FULL),
    ];
    for (name, components) in variants {
        let start = Instant::now();
        let mut accs = Vec::new();
        let mut line = String::new();
        for seed in 0..seeds {
            let mut config = base.train.clone();
            config.seed = seed;
            config.components = Components { ab: components.ab, drp: components.drp, gri: components.gri, ..config.components };
            let dataset = config.data.build(seed)?;
            let out = run(&config, &dataset)?;
            let r = out.final_report();
            accs.push(r.test_acc);
            line += &format!(
                " [{:.3} sil {:.3} gap {:.3} corr {:.2}->{:.2}]",
                r.test_acc,
                r.silhouette,
                r.intra_sim - r.inter_sim,
                out.rows[0].report.correction_ratio,
                r.correction_ratio
            );
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{name:>9}: mean {mean:.4} ({:.1}s){line}", start.elapsed().as_secs_f64());
    }
    Ok(())
}
