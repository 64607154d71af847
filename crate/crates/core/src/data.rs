//! Synthetic Gaussian-mixture datasets with controllable class imbalance,
//! plus the weak/strong augmentation operators.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::anchors::generate_etf;
use crate::error::{Result, SageError};
use crate::numkit::{gauss, seeded_rng, Mat, Rng};

/// Shape of a split's class distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Uniform,
    LongTailed,
    /// Long-tailed counts assigned to classes in a seeded random order.
    Arbitrary,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Uniform => "uniform",
            Profile::LongTailed => "long_tailed",
            Profile::Arbitrary => "arbitrary",
        })
    }
}

impl FromStr for Profile {
    type Err = SageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Profile::Uniform),
            "long_tailed" => Ok(Profile::LongTailed),
            "arbitrary" => Ok(Profile::Arbitrary),
            other => Err(SageError::Parse(format!("unknown profile {other:?}"))),
        }
    }
}

/// Per-class sample counts: `n_k = round(max · γ^(-k/(C-1)))`, optionally
/// permuted across classes.
pub fn class_counts(c: usize, max_count: usize, gamma: f64, profile: Profile, seed: u64) -> Result<Vec<usize>> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(SageError::InvalidArgument(format!("imbalance ratio must be >= 1, got {gamma}")));
    }
    if c == 0 {
        return Err(SageError::InvalidArgument("need at least one class".into()));
    }
    let long_tail = || -> Vec<usize> {
        if c == 1 {
            return vec![max_count];
        }
        (0..c)
            .map(|k| (max_count as f64 * gamma.powf(-(k as f64) / (c as f64 - 1.0))).round() as usize)
            .collect()
    };
    Ok(match profile {
        Profile::Uniform => vec![max_count; c],
        Profile::LongTailed => long_tail(),
        Profile::Arbitrary => {
            let mut counts = long_tail();
            counts.shuffle(&mut seeded_rng(seed));
            counts
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Mat,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &y in &self.y {
            counts[y] += 1;
        }
        counts
    }
}

/// Ground truth of the unlabeled split. Training never reads it; it exists
/// for pseudo-label diagnostics only.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn reveal(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSplit {
    pub x: Mat,
    pub y_hidden: HiddenLabels,
}

impl UnlabeledSplit {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniSSLDataset {
    pub labeled: Split,
    pub unlabeled: UnlabeledSplit,
    pub test: Split,
    pub classes: usize,
    pub input_dim: usize,
    pub gamma_l: f64,
    pub gamma_u: f64,
    pub profile_u: Profile,
    pub seed: u64,
}

/// Full recipe for a dataset, as stored in a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub input_dim: usize,
    pub n_max: usize,
    pub m_max: usize,
    pub gamma_l: f64,
    pub gamma_u: f64,
    pub profile_l: Profile,
    pub profile_u: Profile,
    pub test_per_class: usize,
    pub separation: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: 6,
            input_dim: 8,
            n_max: 4,
            m_max: 400,
            gamma_l: 1.0,
            gamma_u: 100.0,
            profile_l: Profile::Uniform,
            profile_u: Profile::Arbitrary,
            test_per_class: 200,
            separation: 3.0,
        }
    }
}

impl DatasetSpec {
    pub fn build(&self, seed: u64) -> Result<UniSSLDataset> {
        let counts_l = class_counts(self.classes, self.n_max, self.gamma_l, self.profile_l, seed)?;
        let counts_u =
            class_counts(self.classes, self.m_max, self.gamma_u, self.profile_u, seed.wrapping_add(1))?;
        let mut ds = generate(
            self.classes,
            self.input_dim,
            &counts_l,
            &counts_u,
            self.test_per_class,
            self.separation,
            seed,
        )?;
        ds.gamma_l = self.gamma_l;
        ds.gamma_u = self.gamma_u;
        ds.profile_u = self.profile_u;
        Ok(ds)
    }
}

fn realized_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    if min == 0 {
        f64::INFINITY
    } else {
        max as f64 / min as f64
    }
}

/// Isotropic unit-variance Gaussian classes around `separation ·` a simplex
/// layout of unit directions. Each class draws one pool that is cut into
/// labeled, unlabeled and test parts, so the splits never share a sample.
pub fn generate(
    c: usize,
    d_in: usize,
    counts_l: &[usize],
    counts_u: &[usize],
    test_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<UniSSLDataset> {
    if !(separation > 0.0) {
        return Err(SageError::InvalidArgument(format!("separation must be > 0, got {separation}")));
    }
    if c < 2 || c > d_in + 1 {
        return Err(SageError::LayoutInfeasibility(format!(
            "cannot spread {c} class means equiangularly in {d_in} dimensions"
        )));
    }
    if counts_l.len() != c || counts_u.len() != c {
        return Err(SageError::InvalidInput("one count per class required".into()));
    }
    let means = generate_etf(c, d_in, seed)
        .map_err(|e| SageError::LayoutInfeasibility(e.to_string()))?
        .p
        .scale(separation);
    let mut rng = seeded_rng(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut draw = |k: usize, n: usize, out: &mut Vec<f64>| {
        for _ in 0..n {
            out.extend(means.row(k).iter().map(|m| m + gauss(&mut rng)));
        }
    };
    let (mut xl, mut yl, mut xu, mut yu, mut xt, mut yt) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..c {
        draw(k, counts_l[k], &mut xl);
        yl.extend(std::iter::repeat_n(k, counts_l[k]));
        draw(k, counts_u[k], &mut xu);
        yu.extend(std::iter::repeat_n(k, counts_u[k]));
        draw(k, test_per_class, &mut xt);
        yt.extend(std::iter::repeat_n(k, test_per_class));
    }
    Ok(UniSSLDataset {
        labeled: Split { x: Mat::from_vec(yl.len(), d_in, xl)?, y: yl },
        unlabeled: UnlabeledSplit { x: Mat::from_vec(yu.len(), d_in, xu)?, y_hidden: HiddenLabels(yu) },
        test: Split { x: Mat::from_vec(yt.len(), d_in, xt)?, y: yt },
        classes: c,
        input_dim: d_in,
        gamma_l: realized_ratio(counts_l),
        gamma_u: realized_ratio(counts_u),
        profile_u: Profile::Arbitrary,
        seed,
    })
}

impl UniSSLDataset {
    /// Text container: a header block, then one `split label features…` row
    /// per sample. Values use shortest round-trip decimals.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::from("sage-dataset 1\n");
        let _ = writeln!(s, "classes {}", self.classes);
        let _ = writeln!(s, "input {}", self.input_dim);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "gamma_l {:?}", self.gamma_l);
        let _ = writeln!(s, "gamma_u {:?}", self.gamma_u);
        let _ = writeln!(s, "profile_u {}", self.profile_u);
        let _ = writeln!(s, "counts_l {}", join(&self.labeled.class_counts(self.classes)));
        let hidden = Split { x: Mat::zeros(0, 0), y: self.unlabeled.y_hidden.0.clone() };
        let _ = writeln!(s, "counts_u {}", join(&hidden.class_counts(self.classes)));
        let _ = writeln!(s, "counts_test {}", join(&self.test.class_counts(self.classes)));
        let mut rows = |name: &str, x: &Mat, y: &[usize]| {
            for (i, label) in y.iter().enumerate() {
                let feats: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "{name} {label} {}", feats.join(" "));
            }
        };
        rows("labeled", &self.labeled.x, &self.labeled.y);
        rows("unlabeled", &self.unlabeled.x, self.unlabeled.y_hidden.reveal());
        rows("test", &self.test.x, &self.test.y);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: String| SageError::Parse(m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("sage-dataset 1") {
            return Err(perr("not a sage-dataset v1 file".into()));
        }
        let mut header = std::collections::HashMap::new();
        let (mut xl, mut yl, mut xu, mut yu, mut xt, mut yt) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let (xs, ys) = match key {
                "labeled" => (&mut xl, &mut yl),
                "unlabeled" => (&mut xu, &mut yu),
                "test" => (&mut xt, &mut yt),
                _ => {
                    header.insert(key.to_string(), rest.trim().to_string());
                    continue;
                }
            };
            let mut toks = rest.split_whitespace();
            let label = toks
                .next()
                .ok_or_else(|| perr(format!("row without label: {line:?}")))?
                .parse::<usize>()
                .map_err(|e| perr(e.to_string()))?;
            ys.push(label);
            for t in toks {
                xs.push(t.parse::<f64>().map_err(|e| perr(format!("{t:?}: {e}")))?);
            }
        }
        let get = |k: &str| header.get(k).ok_or_else(|| perr(format!("missing header field {k}")));
        let classes: usize = get("classes")?.parse().map_err(|_| perr("bad classes".into()))?;
        let input_dim: usize = get("input")?.parse().map_err(|_| perr("bad input".into()))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| perr("bad seed".into()))?;
        let gamma_l: f64 = get("gamma_l")?.parse().map_err(|_| perr("bad gamma_l".into()))?;
        let gamma_u: f64 = get("gamma_u")?.parse().map_err(|_| perr("bad gamma_u".into()))?;
        let profile_u: Profile = get("profile_u")?.parse()?;
        let mat = |data: Vec<f64>, n: usize| {
            if data.len() != n * input_dim {
                return Err(perr("feature row has wrong width".into()));
            }
            Mat::from_vec(n, input_dim, data)
        };
        if yl.iter().chain(&yu).chain(&yt).any(|&y| y >= classes) {
            return Err(perr("label out of range".into()));
        }
        Ok(UniSSLDataset {
            labeled: Split { x: mat(xl, yl.len())?, y: yl },
            unlabeled: UnlabeledSplit { x: mat(xu, yu.len())?, y_hidden: HiddenLabels(yu) },
            test: Split { x: mat(xt, yt.len())?, y: yt },
            classes,
            input_dim,
            gamma_l,
            gamma_u,
            profile_u,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    /// Probability of zeroing each coordinate of a strong view.
    pub mask_prob: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { sigma_weak: 0.1, sigma_strong: 0.5, mask_prob: 0.2 }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_weak >= 0.0 && self.sigma_strong >= self.sigma_weak) {
            return Err(SageError::InvalidArgument(
                "augmentation needs sigma_strong >= sigma_weak >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(SageError::InvalidArgument("mask_prob must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn weak_view(x: &Mat, spec: &AugmentSpec, rng: &mut Rng) -> Mat {
    let mut out = x.clone();
    if spec.sigma_weak > 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v += spec.sigma_weak * gauss(rng));
    }
    out
}

pub fn strong_view(x: &Mat, spec: &AugmentSpec, rng: &mut Rng) -> Mat {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += spec.sigma_strong * gauss(rng);
        if spec.mask_prob > 0.0 && rng.random::<f64>() < spec.mask_prob {
            *v = 0.0;
        }
    }
    out
}
