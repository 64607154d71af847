//! Fixed simplex equiangular tight frame anchors.
//!
//! `K` unit vectors in `R^d` with pairwise inner product `-1/(K-1)` and zero
//! sum. Built from the nonzero-eigenvalue eigenvectors of the `K x K`
//! centering matrix, rotated by a seeded random orthogonal matrix.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SageError};
use crate::numkit::{qr_orthonormal, sym_eig, Mat};

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorFrame {
    pub k: usize,
    pub d: usize,
    /// `K x d`, one anchor per row.
    pub p: Mat,
    pub seed: u64,
}

/// Largest deviations from the three frame properties.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameReport {
    pub max_norm_dev: f64,
    pub max_equiangular_dev: f64,
    pub max_centering_dev: f64,
}

impl FrameReport {
    pub fn max(&self) -> f64 {
        self.max_norm_dev.max(self.max_equiangular_dev).max(self.max_centering_dev)
    }
}

/// `(K/(K-1)) (I - (1/K) 1 1ᵀ)`, the Gram matrix every simplex frame shares.
pub fn simplex_gram(k: usize) -> Mat {
    let kf = k as f64;
    let scale = kf / (kf - 1.0);
    let mut g = Mat::filled(k, k, -scale / kf);
    for i in 0..k {
        g.set(i, i, scale * (1.0 - 1.0 / kf));
    }
    g
}

pub fn generate_etf(k: usize, d: usize, seed: u64) -> Result<AnchorFrame> {
    if k < 2 {
        return Err(SageError::InvalidArgument(format!("need at least 2 anchors, got {k}")));
    }
    if k > d + 1 {
        return Err(SageError::GeometricInfeasibility(format!(
            "{k} equiangular anchors do not fit in {d} dimensions (max {})",
            d + 1
        )));
    }
    let kf = k as f64;
    let centering = Mat::identity(k).sub(&Mat::filled(k, k, 1.0 / kf));
    let eig = sym_eig(&centering)?;
    // Eigenvalues are {0, 1 (x K-1)}, ascending: drop the null vector 1/sqrt(K).
    let mut basis = Mat::zeros(k, d);
    let mut col = 0;
    for (idx, &value) in eig.values.iter().enumerate() {
        if value > 0.5 {
            for i in 0..k {
                basis.set(i, col, eig.vectors.get(i, idx));
            }
            col += 1;
        }
    }
    if col != k - 1 {
        return Err(SageError::NumericFailure(format!(
            "centering matrix returned {col} nonzero eigenvalues, expected {}",
            k - 1
        )));
    }
    let rotation = qr_orthonormal(seed, d)?;
    let p = basis.matmul_t(&rotation).scale((kf / (kf - 1.0)).sqrt());
    Ok(AnchorFrame { k, d, p, seed })
}

pub fn verify_frame(frame: &AnchorFrame) -> FrameReport {
    let p = &frame.p;
    let k = p.rows();
    let gram = p.matmul_t(p);
    let target = if k > 1 { -1.0 / (k as f64 - 1.0) } else { 0.0 };
    let mut norm_dev = 0.0_f64;
    let mut angle_dev = 0.0_f64;
    for i in 0..k {
        norm_dev = norm_dev.max((gram.get(i, i).sqrt() - 1.0).abs());
        for j in 0..k {
            if i != j {
                angle_dev = angle_dev.max((gram.get(i, j) - target).abs());
            }
        }
    }
    let centering_dev = p.col_sums().iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    FrameReport {
        max_norm_dev: norm_dev,
        max_equiangular_dev: angle_dev,
        max_centering_dev: centering_dev,
    }
}

impl AnchorFrame {
    /// Plain-text form: `K d seed` then K rows of d values, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.k, self.d, self.seed);
        for i in 0..self.k {
            let row: Vec<String> = self.p.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| SageError::Parse("empty anchor file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(SageError::Parse(format!("bad anchor header: {header:?}")));
        }
        let parse_usize =
            |s: &str| s.parse::<usize>().map_err(|e| SageError::Parse(format!("{s:?}: {e}")));
        let k = parse_usize(fields[0])?;
        let d = parse_usize(fields[1])?;
        let seed = fields[2].parse::<u64>().map_err(|e| SageError::Parse(e.to_string()))?;
        let mut data = Vec::with_capacity(k * d);
        let mut rows = 0;
        for line in lines {
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| SageError::Parse(format!("{tok:?}: {e}")))?);
            }
            if data.len() - before != d {
                return Err(SageError::Parse(format!("anchor row {rows} has wrong length")));
            }
            rows += 1;
        }
        if rows != k {
            return Err(SageError::Parse(format!("expected {k} anchor rows, found {rows}")));
        }
        Ok(AnchorFrame { k, d, p: Mat::from_vec(k, d, data)?, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// FNV-1a over the raw bits of the anchor matrix.
    pub fn fingerprint(&self) -> u64 {
        crate::fnv1a(self.p.data().iter().flat_map(|v| v.to_bits().to_le_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_in_the_plane() {
        let f = generate_etf(3, 2, 42).unwrap();
        let g = f.p.matmul_t(&f.p);
        for i in 0..3 {
            assert!((g.get(i, i) - 1.0).abs() < 1e-12);
            for j in 0..3 {
                if i != j {
                    assert!((g.get(i, j) + 0.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_scale_frame() {
        let f = generate_etf(129, 128, 1).unwrap();
        assert_eq!(f.p.shape(), (129, 128));
        let r = verify_frame(&f);
        assert!(r.max() <= 1e-9, "{r:?}");
    }

    #[test]
    fn gram_matches_closed_form() {
        let f = generate_etf(17, 16, 3).unwrap();
        assert!(f.p.matmul_t(&f.p).max_abs_diff(&simplex_gram(17)) <= 1e-9);
    }

    #[test]
    fn partial_simplex_frames() {
        for (k, d) in [(2, 5), (5, 16), (10, 16), (50, 128)] {
            let f = generate_etf(k, d, 8).unwrap();
            assert!(verify_frame(&f).max() <= 1e-9, "k={k} d={d}");
            assert!(f.p.matmul_t(&f.p).max_abs_diff(&simplex_gram(k)) <= 1e-9);
        }
    }

    #[test]
    fn bad_counts_rejected() {
        assert!(matches!(generate_etf(1, 4, 0), Err(SageError::InvalidArgument(_))));
        assert!(matches!(generate_etf(300, 128, 0), Err(SageError::GeometricInfeasibility(_))));
        assert!(matches!(generate_etf(200, 128, 0), Err(SageError::GeometricInfeasibility(_))));
    }

    #[test]
    fn seed_changes_rotation_only() {
        let a = generate_etf(17, 16, 1).unwrap();
        let b = generate_etf(17, 16, 2).unwrap();
        assert!(a.p.max_abs_diff(&b.p) > 1e-3);
        assert!(a.p.matmul_t(&a.p).max_abs_diff(&b.p.matmul_t(&b.p)) <= 1e-9);
        assert_eq!(a, generate_etf(17, 16, 1).unwrap());
    }

    #[test]
    fn report_on_tampered_frames() {
        let f = generate_etf(6, 5, 4).unwrap();
        let mut scaled = f.clone();
        for v in scaled.p.row_mut(2) {
            *v *= 2.0;
        }
        assert!((verify_frame(&scaled).max_norm_dev - 1.0).abs() < 1e-9);

        let mut permuted = f.clone();
        permuted.p = f.p.select_rows(&[3, 1, 5, 0, 4, 2]);
        let (r0, r1) = (verify_frame(&f), verify_frame(&permuted));
        assert!((r0.max_norm_dev - r1.max_norm_dev).abs() < 1e-15);
        assert!((r0.max_equiangular_dev - r1.max_equiangular_dev).abs() < 1e-15);
        assert!((r0.max_centering_dev - r1.max_centering_dev).abs() < 1e-14);
    }

    #[test]
    fn regularized_gram_is_spd() {
        let f = generate_etf(9, 8, 0).unwrap();
        for lambda in [1e-6, 0.1, 3.0] {
            let m = f.p.matmul_t(&f.p).add(&Mat::identity(9).scale(lambda));
            let e = crate::numkit::sym_eig(&m).unwrap();
            assert!((e.values[0] - lambda).abs() < 1e-9);
            assert!((e.values[8] - (9.0 / 8.0 + lambda)).abs() < 1e-9);
        }
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let f = generate_etf(5, 4, 77).unwrap();
        let back = AnchorFrame::from_text(&f.to_text()).unwrap();
        assert_eq!(back, f);
        assert!(AnchorFrame::from_text("3 2 1\n1 2\n").is_err());
    }
}
