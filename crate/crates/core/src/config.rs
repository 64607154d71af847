//! Run configuration files.
//!
//! Plain text, one `section.key = value` record per line, `#` comments.
//! Every key has a default; unknown keys are rejected. [`RunConfig::to_text`]
//! writes every key in a fixed order, so parse → serialize is stable.
//!
//! ```text
//! train.total_steps = 3000
//! gri.lambda = 0.1
//! model.hidden = 64,64
//! ablation.enable_gri = true
//! ```

use std::path::{Path, PathBuf};

use crate::data::Profile;
use crate::error::{Result, SageError};
use crate::trainer::TrainConfig;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "SAGE_OUT_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub log_level: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let output_dir = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        RunConfig { train: TrainConfig::default(), output_dir, log_level: "info".into() }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| SageError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// `(key, value)` for every setting, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let d = &t.data;
        let a = &t.augment;
        let hidden: Vec<String> = t.hidden.iter().map(|h| h.to_string()).collect();
        vec![
            ("train.total_steps", t.total_steps.to_string()),
            ("train.batch_labeled", t.batch_labeled.to_string()),
            ("train.ratio_u", t.ratio_u.to_string()),
            ("train.eta", format!("{:?}", t.eta)),
            ("train.momentum", format!("{:?}", t.momentum)),
            ("train.weight_decay", format!("{:?}", t.weight_decay)),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.seed", t.seed.to_string()),
            ("model.hidden", hidden.join(",")),
            ("model.feature_dim", t.feature_dim.to_string()),
            ("model.anchors", t.anchors.to_string()),
            ("gri.lambda", format!("{:?}", t.lambda)),
            ("gri.beta", t.beta.to_string()),
            ("gri.cross_view", t.gri_options.cross_view.to_string()),
            ("gri.normalize_z", t.gri_options.normalize_z.to_string()),
            ("drp.decay", format!("{:?}", t.drp_decay)),
            ("ablation.enable_ab", t.components.ab.to_string()),
            ("ablation.enable_drp", t.components.drp.to_string()),
            ("ablation.enable_gri", t.components.gri.to_string()),
            ("ablation.enable_con", t.components.con.to_string()),
            ("ablation.enable_sim", t.components.sim.to_string()),
            ("augment.sigma_weak", format!("{:?}", a.sigma_weak)),
            ("augment.sigma_strong", format!("{:?}", a.sigma_strong)),
            ("augment.mask_prob", format!("{:?}", a.mask_prob)),
            ("data.classes", d.classes.to_string()),
            ("data.input_dim", d.input_dim.to_string()),
            ("data.n_max", d.n_max.to_string()),
            ("data.m_max", d.m_max.to_string()),
            ("data.gamma_l", format!("{:?}", d.gamma_l)),
            ("data.gamma_u", format!("{:?}", d.gamma_u)),
            ("data.profile_l", d.profile_l.to_string()),
            ("data.profile_u", d.profile_u.to_string()),
            ("data.test_per_class", d.test_per_class.to_string()),
            ("data.separation", format!("{:?}", d.separation)),
            ("run.output_dir", self.output_dir.display().to_string()),
            ("run.log_level", self.log_level.clone()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key. Accepts a full dotted key or an unambiguous final
    /// segment (`enable_gri` for `ablation.enable_gri`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = resolve_key(key)?;
        let v = value.trim();
        let t = &mut self.train;
        match full {
            "train.total_steps" => t.total_steps = parse(full, v)?,
            "train.batch_labeled" => t.batch_labeled = parse(full, v)?,
            "train.ratio_u" => t.ratio_u = parse(full, v)?,
            "train.eta" => t.eta = parse(full, v)?,
            "train.momentum" => t.momentum = parse(full, v)?,
            "train.weight_decay" => t.weight_decay = parse(full, v)?,
            "train.eval_every" => t.eval_every = parse(full, v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(full, v)?,
            "train.seed" => t.seed = parse(full, v)?,
            "model.hidden" => t.hidden = parse_list(full, v)?,
            "model.feature_dim" => t.feature_dim = parse(full, v)?,
            "model.anchors" => t.anchors = parse(full, v)?,
            "gri.lambda" => t.lambda = parse(full, v)?,
            "gri.beta" => t.beta = parse(full, v)?,
            "gri.cross_view" => t.gri_options.cross_view = parse(full, v)?,
            "gri.normalize_z" => t.gri_options.normalize_z = parse(full, v)?,
            "drp.decay" => t.drp_decay = parse(full, v)?,
            "ablation.enable_ab" => t.components.ab = parse(full, v)?,
            "ablation.enable_drp" => t.components.drp = parse(full, v)?,
            "ablation.enable_gri" => t.components.gri = parse(full, v)?,
            "ablation.enable_con" => t.components.con = parse(full, v)?,
            "ablation.enable_sim" => t.components.sim = parse(full, v)?,
            "augment.sigma_weak" => t.augment.sigma_weak = parse(full, v)?,
            "augment.sigma_strong" => t.augment.sigma_strong = parse(full, v)?,
            "augment.mask_prob" => t.augment.mask_prob = parse(full, v)?,
            "data.classes" => t.data.classes = parse(full, v)?,
            "data.input_dim" => t.data.input_dim = parse(full, v)?,
            "data.n_max" => t.data.n_max = parse(full, v)?,
            "data.m_max" => t.data.m_max = parse(full, v)?,
            "data.gamma_l" => t.data.gamma_l = parse(full, v)?,
            "data.gamma_u" => t.data.gamma_u = parse(full, v)?,
            "data.profile_l" => t.data.profile_l = v.parse::<Profile>()?,
            "data.profile_u" => t.data.profile_u = v.parse::<Profile>()?,
            "data.test_per_class" => t.data.test_per_class = parse(full, v)?,
            "data.separation" => t.data.separation = parse(full, v)?,
            "run.output_dir" => self.output_dir = PathBuf::from(v),
            "run.log_level" => self.log_level = v.to_string(),
            _ => unreachable!("resolve_key only returns known keys"),
        }
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| SageError::Config(format!("override {spec:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Defaults overlaid with the records in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SageError::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if !k.contains('.') {
                return Err(SageError::Config(format!("line {}: key {k:?} needs a section", no + 1)));
            }
            if !seen.insert(k.to_string()) {
                return Err(SageError::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn resolve_key(key: &str) -> Result<&'static str> {
    let keys = RunConfig::keys();
    if let Some(k) = keys.iter().find(|k| **k == key) {
        return Ok(k);
    }
    let matches: Vec<&'static str> =
        keys.into_iter().filter(|k| k.rsplit('.').next() == Some(key)).collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(SageError::Config(format!("unknown key {key:?}"))),
        _ => Err(SageError::Config(format!("ambiguous key {key:?}: {matches:?}"))),
    }
}
