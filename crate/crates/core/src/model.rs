//! The embedder `f: ℝ^{d_I} → ℝ^{d_F}` with hand-written backward passes, and
//! the JSON checkpoint that bundles it with the head state.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::HeadConfig;
use crate::proxy::ProxyPolicy;
use crate::vecops::normalization_backward;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// One hidden layer with a rectifier.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    /// `out × in`
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl Layer {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
        Self { weight, bias }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderModel {
    arch: Architecture,
    input_dim: usize,
    embed_dim: usize,
    layers: Vec<Layer>,
    #[serde(skip)]
    version: u64,
}

impl PartialEq for EmbedderModel {
    // the cache version is bookkeeping, not model state
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.input_dim == other.input_dim
            && self.embed_dim == other.embed_dim
            && self.layers == other.layers
    }
}

/// Intermediates of one forward pass, tied to the parameter version that produced them.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    pre_activation: Option<Array2<f64>>,
    hidden: Option<Array2<f64>>,
    pub raw: Array2<f64>,
    pub unit: Array2<f64>,
    version: u64,
}

impl EmbedderModel {
    /// Uniform `±1/√fan_in` initialization from `seed`.
    pub fn new(arch: Architecture, input_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(arch, input_dim, embed_dim, &mut rng)
    }

    pub fn init(arch: Architecture, input_dim: usize, embed_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 {
            return Err(Error::ShapeMismatch("model dimensions must be positive".into()));
        }
        let layers = match arch {
            Architecture::Linear => vec![Layer::init(input_dim, embed_dim, rng)],
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::ShapeMismatch("hidden width must be positive".into()));
                }
                vec![Layer::init(input_dim, hidden, rng), Layer::init(hidden, embed_dim, rng)]
            }
        };
        Ok(Self {
            arch,
            input_dim,
            embed_dim,
            layers,
            version: 0,
        })
    }

    /// Linear model with the given `embed_dim × input_dim` weights and biases.
    pub fn linear_from(weight: Array2<f64>, bias: Vec<f64>) -> Result<Self> {
        let (out, inp) = weight.dim();
        if bias.len() != out || out == 0 || inp == 0 {
            return Err(Error::ShapeMismatch(format!("weight {out}x{inp} with {} biases", bias.len())));
        }
        let model = Self {
            arch: Architecture::Linear,
            input_dim: inp,
            embed_dim: out,
            layers: vec![Layer {
                weight,
                bias: Array1::from(bias),
            }],
            version: 0,
        };
        model.check_finite()?;
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    /// Parameters flattened layer by layer: weight (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Replaces all parameters; invalidates outstanding forward caches.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a model with {}",
                flat.len(),
                self.num_params()
            )));
        }
        if let Some(i) = flat.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue(format!("parameter {i}")));
        }
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[at];
                at += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Multiplies every weight matrix (not the biases) by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|w| w * factor);
        }
        self.version += 1;
    }

    fn check_finite(&self) -> Result<()> {
        if self.params().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue("model parameters".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input dim {} but model expects {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        if let Some((i, _)) = inputs
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFiniteInput(format!("input row {i}")));
        }
        Ok(())
    }

    /// Raw embeddings only (no normalization, no cache).
    pub fn embed(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        Ok(match self.arch {
            Architecture::Linear => self.layers[0].apply(inputs),
            Architecture::Mlp { .. } => {
                let h = self.layers[0].apply(inputs).mapv(|z| z.max(0.0));
                self.layers[1].apply(h.view())
            }
        })
    }

    /// Raw and unit embeddings, with the intermediates needed by [`Self::backward`].
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_inputs(&inputs)?;
        let (pre, hidden, raw) = match self.arch {
            Architecture::Linear => (None, None, self.layers[0].apply(inputs)),
            Architecture::Mlp { .. } => {
                let z = self.layers[0].apply(inputs);
                let h = z.mapv(|v| v.max(0.0));
                let raw = self.layers[1].apply(h.view());
                (Some(z), Some(h), raw)
            }
        };
        let mut unit = raw.clone();
        for (i, mut r) in unit.rows_mut().into_iter().enumerate() {
            let n = r.dot(&r).sqrt();
            if n < 1e-12 || !n.is_finite() {
                return Err(Error::ZeroEmbedding(i));
            }
            r.mapv_inplace(|x| x / n);
        }
        Ok(ForwardCache {
            inputs: inputs.to_owned(),
            pre_activation: pre,
            hidden,
            raw,
            unit,
            version: self.version,
        })
    }

    /// Parameter gradients (flat, in [`Self::params`] order) from `dL/df(x)`.
    pub fn backward_raw(&self, cache: &ForwardCache, grad_raw: ArrayView2<f64>) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if grad_raw.dim() != cache.raw.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} vs embeddings {:?}",
                grad_raw.dim(),
                cache.raw.dim()
            )));
        }
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        match self.arch {
            Architecture::Linear => {
                grads.push((grad_raw.t().dot(&cache.inputs), grad_raw.sum_axis(Axis(0))));
            }
            Architecture::Mlp { .. } => {
                let hidden = cache.hidden.as_ref().expect("mlp cache");
                let pre = cache.pre_activation.as_ref().expect("mlp cache");
                let g2 = (grad_raw.t().dot(hidden), grad_raw.sum_axis(Axis(0)));
                let mut dh = grad_raw.dot(&self.layers[1].weight);
                dh.zip_mut_with(pre, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                let g1 = (dh.t().dot(&cache.inputs), dh.sum_axis(Axis(0)));
                grads.push(g1);
                grads.push(g2);
            }
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in grads {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        Ok(flat)
    }

    /// Parameter gradients from `dL/df̃(x)`, chaining through the normalization.
    pub fn backward(&self, cache: &ForwardCache, grad_unit: ArrayView2<f64>) -> Result<Vec<f64>> {
        if grad_unit.dim() != cache.raw.dim() {
            return Err(Error::ShapeMismatch("upstream gradient shape".into()));
        }
        let mut grad_raw = Array2::zeros(cache.raw.dim());
        for i in 0..cache.raw.nrows() {
            let g = normalization_backward(&cache.raw.row(i).to_vec(), &grad_unit.row(i).to_vec());
            grad_raw.row_mut(i).assign(&Array1::from(g));
        }
        self.backward_raw(cache, grad_raw.view())
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Provenance of the data split a checkpoint was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub fractions: [f64; 3],
}

/// Everything needed to reproduce predictions of a trained model.
///
/// `proxies` holds the raw class parameters for the plain-softmax and
/// gradient-updated heads, and unit vectors otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub model: EmbedderModel,
    pub head: HeadConfig,
    pub class_labels: Vec<String>,
    pub proxy_policy: ProxyPolicy,
    pub proxies: Array2<f64>,
    pub bias: Option<Vec<f64>>,
    pub config: crate::trainer::TrainConfig,
    pub split: SplitInfo,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn scale(&self) -> f64 {
        self.head.scale
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Serialization(format!("unsupported checkpoint format {}", ck.format)));
        }
        if ck.proxies.nrows() != ck.class_labels.len() || ck.proxies.ncols() != ck.model.embed_dim() {
            return Err(Error::ShapeMismatch("checkpoint proxies do not match labels/model".into()));
        }
        ck.model.check_finite()?;
        Ok(ck)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_linear_maps_basis_vector() {
        let m = EmbedderModel::linear_from(Array2::eye(3), vec![0.0; 3]).unwrap();
        let c = m.forward(array![[1.0, 0.0, 0.0]].view()).unwrap();
        assert_eq!(c.unit, array![[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn scaling_weights_keeps_directions() {
        let mut m = EmbedderModel::new(Architecture::Linear, 5, 4, 3).unwrap();
        let flat = m.params();
        // zero the biases so that scaling is a pure rescaling of f(x)
        let mut zeroed = flat.clone();
        for b in &mut zeroed[20..] {
            *b = 0.0;
        }
        m.set_params(&zeroed).unwrap();
        let x = array![[0.3, -1.0, 2.0, 0.5, 0.1], [1.0, 1.0, -1.0, 0.0, 2.0]];
        let before = m.forward(x.view()).unwrap().unit;
        m.scale_weights(3.0);
        let after = m.forward(x.view()).unwrap().unit;
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let m = EmbedderModel::linear_from(array![[1.0, 0.0], [0.0, 0.0]], vec![0.0, 0.0]).unwrap();
        assert!(matches!(m.forward(array![[1.0, 2.0, 3.0]].view()), Err(Error::ShapeMismatch(_))));
        assert!(matches!(m.forward(array![[f64::NAN, 0.0]].view()), Err(Error::NonFiniteInput(_))));
        assert!(matches!(m.forward(array![[1.0, 0.0], [0.0, 5.0]].view()), Err(Error::ZeroEmbedding(1))));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = EmbedderModel::new(Architecture::Mlp { hidden: 6 }, 3, 2, 1).unwrap();
        let c = m.forward(array![[1.0, 2.0, 3.0]].view()).unwrap();
        let p = m.params();
        m.set_params(&p).unwrap();
        assert!(matches!(m.backward(&c, array![[1.0, 0.0]].view()), Err(Error::StaleCache)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = EmbedderModel::new(Architecture::Mlp { hidden: 6 }, 3, 2, 1).unwrap();
        let c = m.forward(array![[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]].view()).unwrap();
        let g = m.backward(&c, Array2::zeros((2, 2)).view()).unwrap();
        assert_eq!(g.len(), m.num_params());
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = EmbedderModel::new(Architecture::Mlp { hidden: 8 }, 4, 3, 42).unwrap();
        let b = EmbedderModel::new(Architecture::Mlp { hidden: 8 }, 4, 3, 42).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.layers[0].weight.iter().all(|w| w.abs() <= 0.5));
        assert!(a.layers[1].weight.iter().all(|w| w.abs() <= 1.0 / 8f64.sqrt()));
    }
}
