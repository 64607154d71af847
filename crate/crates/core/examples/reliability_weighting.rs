//! Reliability weights from max-probability and top-2 gap, tracked by EMA.
//!
//! cargo run --release --example reliability_weighting

use sage::drp::{metrics_from_probs, ReliabilityTracker};
use sage::numkit::{seeded_rng, softmax_rows, Mat};

fn main() -> sage::Result<()> {
    let mut tracker = ReliabilityTracker::new(0.99);
    let mut rng = seeded_rng(0);
    // Logits grow sharper over time, as a classifier would.
    for round in 0..300 {
        let sharpness = 0.5 + round as f64 / 100.0;
        let q = softmax_rows(&Mat::gaussian(32, 5, &mut rng).scale(sharpness));
        let (q_max, q_gap) = metrics_from_probs(&q)?;
        tracker.update_stats(&q_max, &q_gap)?;
        if round % 100 == 99 {
            let w = tracker.weight(&q_max, &q_gap)?;
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let full = w.iter().filter(|&&x| x == 1.0).count();
            println!(
                "round {:3}: mu_max {:.3} sigma_max {:.3} mu_gap {:.3} sigma_gap {:.3}  mean w {mean:.3}, {full}/32 at full weight",
                round + 1,
                tracker.mu_max,
                tracker.sigma_max(),
                tracker.mu_gap,
                tracker.sigma_gap()
            );
        }
    }

    println!("weight against the tracked statistics:");
    for (qm, qg) in [(0.99, 0.98), (tracker.mu_max, tracker.mu_gap), (0.4, 0.1), (0.2, 0.01)] {
        let w = tracker.weight(&[qm], &[qg])?[0];
        println!("  q_max {qm:.3} q_gap {qg:.3} -> w {w:.4}");
    }
    Ok(())
}
