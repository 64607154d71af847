//! Simplex anchor frames: generate, verify, save.
//!
//! cargo run --release --example etf_anchors -- [K] [d] [seed]

use sage::anchors::{generate_etf, verify_frame, AnchorFrame};

fn main() -> sage::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("integer argument"));
    let k = args.next().unwrap_or(7) as usize;
    let d = args.next().unwrap_or(16) as usize;
    let seed = args.next().unwrap_or(0);

    let frame = generate_etf(k, d, seed)?;
    let r = verify_frame(&frame);
    println!("K={k} d={d} seed={seed}");
    println!("  norm dev {:.2e}, equiangular dev {:.2e}, centering dev {:.2e}", r.max_norm_dev, r.max_equiangular_dev, r.max_centering_dev);

    let p = &frame.p;
    let cos01: f64 = p.row(0).iter().zip(p.row(1)).map(|(a, b)| a * b).sum();
    println!("  cos(p0, p1) = {cos01:.12} (target {:.12})", -1.0 / (k as f64 - 1.0));

    // Same seed, same frame; the text format round-trips exactly.
    let again = AnchorFrame::from_text(&frame.to_text())?;
    assert_eq!(again, frame);
    println!("  fingerprint {:016x}", frame.fingerprint());

    match generate_etf(d + 2, d, seed) {
        Err(e) => println!("K = d+2 refused: {e}"),
        Ok(_) => unreachable!("more than d+1 equiangular unit vectors cannot exist"),
    }
    Ok(())
}
