//! From projections to the consensus graph: ridge coordinates in the anchor
//! frame, affinity, random-walk transition, β-step diffusion.
//!
//! cargo run --release --example relational_consensus -- [beta] [lambda]

use sage::anchors::generate_etf;
use sage::gri::{structural_contrastive_loss, RelationalState};
use sage::numkit::{seeded_rng, Mat};

fn main() -> sage::Result<()> {
    let mut args = std::env::args().skip(1);
    let beta: usize = args.next().map_or(2, |s| s.parse().expect("beta"));
    let lambda: f64 = args.next().map_or(0.1, |s| s.parse().expect("lambda"));

    let (k, d) = (4, 3);
    let frame = generate_etf(k, d, 0)?;
    // Two tight groups of three points, aimed at anchors 0 and 1.
    let mut rng = seeded_rng(1);
    let noise = Mat::gaussian(6, d, &mut rng).scale(0.05);
    let mut z = Mat::zeros(6, d);
    for i in 0..6 {
        let anchor = frame.p.row(i / 3);
        for c in 0..d {
            z.set(i, c, anchor[c] + noise.get(i, c));
        }
    }

    let s = RelationalState::infer(&z, &frame, lambda, beta)?;
    let show = |name: &str, m: &Mat| {
        println!("{name}:");
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:7.3}")).collect();
            println!("  {}", row.join(" "));
        }
    };
    show("ridge coordinates a (rows sum to ~0)", &s.a);
    show("transition P", &s.transition);
    show(&format!("consensus G = P^{beta}"), &s.consensus);

    let within: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| s.consensus.get(i, j)).sum();
    println!("mass kept inside the first group: {:.3} of 3", within);
    let (loss, _) = structural_contrastive_loss(&z, &s.consensus)?;
    println!("structural contrastive loss {loss:.4}");
    Ok(())
}
