//! MLP backbone with projection, primary and auxiliary heads.
//!
//! ```text
//! x ─► [Linear ─► ReLU]* ─► Linear ─► f ─┬─► projection ─► z
//!                                        ├─► cls_head    ─► logits_cls
//!                                        └─► aux_head    ─► logits_aux
//! ```
//!
//! Gradients are hand-derived per layer. `backward` accumulates into the
//! gradient buffers that sit next to every parameter tensor, so several
//! forward passes (labeled, weak, strong) can feed one update.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SageError};
use crate::numkit::{gauss, seeded_rng, Mat};

const CHECKPOINT_MAGIC: &str = "sage-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub feature: usize,
    pub classes: usize,
}

impl ModelDims {
    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.feature == 0 || self.hidden.contains(&0) {
            return Err(SageError::InvalidArgument(format!("zero-width layer in {self:?}")));
        }
        if self.classes < 2 {
            return Err(SageError::InvalidArgument("need at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Affine map `y = x W + b` with `W: in x out`, plus gradient buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
    pub grad_w: Mat,
    pub grad_b: Vec<f64>,
}

impl Linear {
    fn he_init(fan_in: usize, fan_out: usize, rng: &mut crate::numkit::Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| std * gauss(rng)).collect();
        Linear {
            w: Mat::from_vec(fan_in, fan_out, data).expect("sized"),
            b: vec![0.0; fan_out],
            grad_w: Mat::zeros(fan_in, fan_out),
            grad_b: vec![0.0; fan_out],
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.w);
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    fn backward(&mut self, x: &Mat, dy: &Mat, need_input_grad: bool) -> Option<Mat> {
        self.grad_w.add_assign(&x.t_matmul(dy));
        for (g, s) in self.grad_b.iter_mut().zip(dy.col_sums()) {
            *g += s;
        }
        need_input_grad.then(|| dy.matmul_t(&self.w))
    }

    fn zero_grad(&mut self) {
        self.grad_w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.grad_b.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn len(&self) -> usize {
        self.w.data().len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub backbone: Vec<Linear>,
    pub projection: Linear,
    pub cls_head: Linear,
    pub aux_head: Linear,
}

/// Which tensor group a flat parameter index belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Projection,
    ClsHead,
    AuxHead,
}

/// Everything one forward pass produced, kept for `backward`.
#[derive(Clone, Debug)]
pub struct BatchActivations {
    dims: ModelDims,
    /// Input to each backbone layer (the raw batch first, then post-ReLU values).
    layer_inputs: Vec<Mat>,
    /// Pre-activation of each hidden layer, for the ReLU mask.
    hidden_pre: Vec<Mat>,
    pub f: Mat,
    pub z: Mat,
    pub logits_cls: Mat,
    pub logits_aux: Mat,
}

impl BatchActivations {
    pub fn batch(&self) -> usize {
        self.f.rows()
    }
}

/// Gradients of the loss w.r.t. each output of a forward pass. `None` means
/// the output does not feed the loss.
#[derive(Clone, Debug, Default)]
pub struct Upstream {
    pub f: Option<Mat>,
    pub z: Option<Mat>,
    pub cls: Option<Mat>,
    pub aux: Option<Mat>,
}

pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = seeded_rng(seed);
    let mut widths = vec![dims.input];
    widths.extend(&dims.hidden);
    widths.push(dims.feature);
    let backbone = widths.windows(2).map(|w| Linear::he_init(w[0], w[1], &mut rng)).collect();
    let projection = Linear::he_init(dims.feature, dims.feature, &mut rng);
    let cls_head = Linear::he_init(dims.feature, dims.classes, &mut rng);
    let aux_head = Linear::he_init(dims.feature, dims.classes, &mut rng);
    Ok(ModelParams { dims: dims.clone(), backbone, projection, cls_head, aux_head })
}

impl ModelParams {
    fn tensors(&self) -> impl Iterator<Item = (ParamGroup, &Linear)> {
        self.backbone
            .iter()
            .map(|l| (ParamGroup::Backbone, l))
            .chain([
                (ParamGroup::Projection, &self.projection),
                (ParamGroup::ClsHead, &self.cls_head),
                (ParamGroup::AuxHead, &self.aux_head),
            ])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.backbone
            .iter_mut()
            .chain([&mut self.projection, &mut self.cls_head, &mut self.aux_head])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|(_, t)| t.len()).sum()
    }

    /// All parameters in a fixed order: backbone layers, projection, cls, aux;
    /// weights (row-major) before biases within each layer.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.w.data());
            out.extend_from_slice(&t.b);
        }
        out
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.grad_w.data());
            out.extend_from_slice(&t.grad_b);
        }
        out
    }

    /// Group of every flat index, aligned with `flat_params`.
    pub fn flat_groups(&self) -> Vec<ParamGroup> {
        self.tensors().flat_map(|(g, t)| std::iter::repeat_n(g, t.len())).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(SageError::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let nw = t.w.data().len();
            t.w.data_mut().copy_from_slice(&values[off..off + nw]);
            off += nw;
            let nb = t.b.len();
            t.b.copy_from_slice(&values[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Visits `(params, grads)` slice pairs in flat order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64], &[f64])) {
        for t in self.tensors_mut() {
            f(t.w.data_mut(), t.grad_w.data());
            f(&mut t.b, &t.grad_b);
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().for_each(Linear::zero_grad);
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &Mat) -> Result<BatchActivations> {
        if x.cols() != self.dims.input {
            return Err(SageError::InvalidInput(format!(
                "model expects {} input columns, got {}",
                self.dims.input,
                x.cols()
            )));
        }
        if !x.is_finite() {
            return Err(SageError::InvalidInput("non-finite input".into()));
        }
        let last = self.backbone.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.backbone.len());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for (l, layer) in self.backbone.iter().enumerate() {
            let pre = layer.forward(&h);
            layer_inputs.push(h);
            if l == last {
                h = pre;
            } else {
                h = pre.map(|v| v.max(0.0));
                hidden_pre.push(pre);
            }
        }
        let f = h;
        Ok(BatchActivations {
            dims: self.dims.clone(),
            layer_inputs,
            hidden_pre,
            z: self.projection.forward(&f),
            logits_cls: self.cls_head.forward(&f),
            logits_aux: self.aux_head.forward(&f),
            f,
        })
    }

    /// Backbone features and primary-head logits only.
    pub fn features_and_logits(&self, x: &Mat) -> Result<(Mat, Mat)> {
        let acts = self.forward(x)?;
        Ok((acts.f, acts.logits_cls))
    }

    /// Adds the gradients implied by `up` to the parameter gradient buffers.
    pub fn backward(&mut self, acts: &BatchActivations, up: &Upstream) -> Result<()> {
        if acts.dims != self.dims || acts.layer_inputs.len() != self.backbone.len() {
            return Err(SageError::State("activations come from a different model".into()));
        }
        let n = acts.batch();
        let check = |m: &Option<Mat>, cols: usize, what: &str| -> Result<()> {
            match m {
                Some(m) if m.shape() != (n, cols) => Err(SageError::InvalidInput(format!(
                    "upstream {what} is {:?}, expected {:?}",
                    m.shape(),
                    (n, cols)
                ))),
                _ => Ok(()),
            }
        };
        check(&up.f, self.dims.feature, "f")?;
        check(&up.z, self.dims.feature, "z")?;
        check(&up.cls, self.dims.classes, "cls")?;
        check(&up.aux, self.dims.classes, "aux")?;

        let mut df: Option<Mat> = up.f.clone();
        let mut accumulate = |g: Mat| match df.as_mut() {
            Some(d) => d.add_assign(&g),
            None => df = Some(g),
        };
        if let Some(dz) = &up.z {
            accumulate(self.projection.backward(&acts.f, dz, true).expect("requested"));
        }
        if let Some(dc) = &up.cls {
            accumulate(self.cls_head.backward(&acts.f, dc, true).expect("requested"));
        }
        if let Some(da) = &up.aux {
            accumulate(self.aux_head.backward(&acts.f, da, true).expect("requested"));
        }
        let Some(mut delta) = df else {
            return Ok(());
        };
        for l in (0..self.backbone.len()).rev() {
            let dx = self.backbone[l].backward(&acts.layer_inputs[l], &delta, l > 0);
            if let Some(mut dx) = dx {
                let pre = &acts.hidden_pre[l - 1];
                for (g, p) in dx.data_mut().iter_mut().zip(pre.data()) {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = dx;
            }
        }
        Ok(())
    }

    /// FNV-1a over the raw parameter bits.
    pub fn fingerprint(&self) -> u64 {
        crate::fnv1a(self.flat_params().iter().flat_map(|v| v.to_bits().to_le_bytes()))
    }

    /// Versioned text checkpoint. Values use the shortest round-trip decimal
    /// form, so save/load is bit exact.
    pub fn to_checkpoint(&self) -> String {
        let d = &self.dims;
        let hidden: Vec<String> = d.hidden.iter().map(|h| h.to_string()).collect();
        let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        let _ = writeln!(s, "input {}", d.input);
        let _ = writeln!(s, "hidden {}", hidden.join(" "));
        let _ = writeln!(s, "feature {}", d.feature);
        let _ = writeln!(s, "classes {}", d.classes);
        let flat = self.flat_params();
        let _ = writeln!(s, "params {}", flat.len());
        for v in flat {
            let _ = writeln!(s, "{v:?}");
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| SageError::Parse(format!("checkpoint truncated before {what}")))
        };
        let magic = next("header")?;
        let version = magic
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| SageError::Parse("not a sage checkpoint".into()))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(SageError::Parse(format!("unsupported checkpoint version {version}")));
        }
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .map(str::trim)
                .ok_or_else(|| SageError::Parse(format!("expected `{key}` line, got {line:?}")))
        }
        fn num(s: &str) -> Result<usize> {
            s.parse().map_err(|e| SageError::Parse(format!("{s:?}: {e}")))
        }
        let input = num(field(next("input")?, "input")?)?;
        let hidden = field(next("hidden")?, "hidden")?
            .split_whitespace()
            .map(num)
            .collect::<Result<Vec<_>>>()?;
        let feature = num(field(next("feature")?, "feature")?)?;
        let classes = num(field(next("classes")?, "classes")?)?;
        let count = num(field(next("params")?, "params")?)?;
        let dims = ModelDims { input, hidden, feature, classes };
        let mut params = init_params(&dims, 0)?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| SageError::Parse(format!("{l:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != count {
            return Err(SageError::Parse(format!("expected {count} values, found {}", values.len())));
        }
        params.set_flat(&values)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}
