//! Class-probability laws and their losses.
//!
//! Four laws are supported: the plain softmax classifier over linear logits,
//! NormFace (softmax over `s·cos θ`), squared-distance softmax, and the
//! distance-ratio law used by ProxyDR (`p ∝ d^{-s}`). CORR is a loss on fixed
//! proxies rather than a probability law; for ranking it uses `cos θ`.
//!
//! Every law here is a softmax over some per-class logit `z_y`:
//!
//! | law        | `z_y`                      |
//! |------------|----------------------------|
//! | softmax    | `W_yᵀ f + b_y`             |
//! | NormFace   | `s · W̃_yᵀ f̃`               |
//! | SD softmax | `−(s/2) ‖W_y − f‖²`        |
//! | ProxyDR    | `−s · ln ‖f̃ − W̃_y‖`        |
//!
//! so the cross-entropy gradient w.r.t. the logits is always `(p − onehot)/|B|`
//! and each head only has to chain it through its own `z_y`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{norm, normalization_backward, normalize_rows, UNIT_TOL};

/// Distances below this are treated as "at the proxy" by the distance-ratio law.
pub const DR_MIN_DISTANCE: f64 = 1e-12;
/// Probability floor inside the logarithm of the cross-entropy.
pub const CE_MIN_PROB: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    PlainSoftmax,
    NormFace,
    SdSoftmaxEuclidean,
    ProxyDr,
    Corr,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::PlainSoftmax => "softmax",
            HeadKind::NormFace => "normface",
            HeadKind::SdSoftmaxEuclidean => "sd_softmax",
            HeadKind::ProxyDr => "proxydr",
            HeadKind::Corr => "corr",
        }
    }

    /// Whether embeddings and proxies live on the unit sphere.
    pub fn is_normalized(self) -> bool {
        matches!(self, HeadKind::NormFace | HeadKind::ProxyDr | HeadKind::Corr)
    }

    /// Whether the scale factor enters the law.
    pub fn uses_scale(self) -> bool {
        matches!(
            self,
            HeadKind::NormFace | HeadKind::ProxyDr | HeadKind::SdSoftmaxEuclidean
        )
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" | "plain_softmax" => Ok(HeadKind::PlainSoftmax),
            "normface" => Ok(HeadKind::NormFace),
            "sd_softmax" | "sd_softmax_euclidean" => Ok(HeadKind::SdSoftmaxEuclidean),
            "proxydr" => Ok(HeadKind::ProxyDr),
            "corr" => Ok(HeadKind::Corr),
            other => Err(Error::ConfigConflict(format!("unknown head kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub scale: f64,
    pub embed_dim: usize,
}

impl HeadConfig {
    pub fn new(kind: HeadKind, scale: f64, embed_dim: usize) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::OutOfRange {
                value: scale,
                range: "scale > 0",
            });
        }
        if embed_dim == 0 {
            return Err(Error::ShapeMismatch("embed_dim must be positive".into()));
        }
        Ok(Self {
            kind,
            scale,
            embed_dim,
        })
    }
}

/// Class probabilities for one input plus the per-class quantity they were built from
/// (logit, `cos θ_y`, or distance `d_{x,y}` depending on the law).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityOutput {
    pub probs: Vec<f64>,
    pub aux: Vec<f64>,
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn row_dot(r: ArrayView1<f64>, v: &[f64]) -> f64 {
    r.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn row_dist(r: ArrayView1<f64>, v: &[f64]) -> f64 {
    r.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check_dims(what: &str, v: &[f64], reps: &ArrayView2<f64>) -> Result<()> {
    if reps.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!("{what}: no classes")));
    }
    if v.len() != reps.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: vector dim {} vs representative dim {}",
            v.len(),
            reps.ncols()
        )));
    }
    if v.iter().chain(reps.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(what.to_string()));
    }
    Ok(())
}

fn check_unit(embed: &[f64], proxies: &ArrayView2<f64>) -> Result<()> {
    let n = norm(embed);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotNormalized {
            what: "embedding",
            norm: n,
        });
    }
    for r in proxies.rows() {
        let n = r.dot(&r).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotNormalized {
                what: "proxy",
                norm: n,
            });
        }
    }
    Ok(())
}

/// `p_y ∝ exp(W_yᵀ f + b_y)`; `aux` holds the logits.
pub fn plain_softmax_probs(
    features: &[f64],
    weights: ArrayView2<f64>,
    biases: &[f64],
) -> Result<ProbabilityOutput> {
    check_dims("plain softmax", features, &weights)?;
    if biases.len() != weights.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} biases for {} classes",
            biases.len(),
            weights.nrows()
        )));
    }
    let logits: Vec<f64> = weights
        .rows()
        .into_iter()
        .zip(biases)
        .map(|(w, b)| row_dot(w, features) + b)
        .collect();
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteInput("logits".into()));
    }
    Ok(ProbabilityOutput {
        probs: softmax(&logits),
        aux: logits,
    })
}

/// NormFace: `p_y ∝ exp(s cos θ_y)`; `aux` holds `cos θ_y`.
pub fn normface_probs(embed: &[f64], proxies: ArrayView2<f64>, s: f64) -> Result<ProbabilityOutput> {
    check_dims("normface", embed, &proxies)?;
    check_unit(embed, &proxies)?;
    let cos: Vec<f64> = proxies.rows().into_iter().map(|w| row_dot(w, embed)).collect();
    let logits: Vec<f64> = cos.iter().map(|c| s * c).collect();
    Ok(ProbabilityOutput {
        probs: softmax(&logits),
        aux: cos,
    })
}

/// Squared-distance softmax on arbitrary points: `p_y ∝ exp(−(s/2)‖R_y − x‖²)`; `aux` holds `‖R_y − x‖`.
pub fn sd_softmax_probs(point: &[f64], reps: ArrayView2<f64>, s: f64) -> Result<ProbabilityOutput> {
    check_dims("sd softmax", point, &reps)?;
    let d: Vec<f64> = reps.rows().into_iter().map(|r| row_dist(r, point)).collect();
    let logits: Vec<f64> = d.iter().map(|d| -0.5 * s * d * d).collect();
    Ok(ProbabilityOutput {
        probs: softmax(&logits),
        aux: d,
    })
}

/// Squared-distance softmax restricted to the unit sphere (identical to NormFace).
pub fn sd_softmax_sphere_probs(embed: &[f64], proxies: ArrayView2<f64>, s: f64) -> Result<ProbabilityOutput> {
    check_dims("sd softmax", embed, &proxies)?;
    check_unit(embed, &proxies)?;
    sd_softmax_probs(embed, proxies, s)
}

/// Distance-ratio law: `p_y = d_y^{-s} / Σ d^{-s}` with chord distances on the sphere.
///
/// At a proxy (`d < 1e-12`) the limit is the one-hot vector of that class.
pub fn proxydr_probs(embed: &[f64], proxies: ArrayView2<f64>, s: f64) -> Result<ProbabilityOutput> {
    check_dims("proxydr", embed, &proxies)?;
    check_unit(embed, &proxies)?;
    let d: Vec<f64> = proxies.rows().into_iter().map(|r| row_dist(r, embed)).collect();
    let probs = dr_probs_from_distances(&d, s)?;
    Ok(ProbabilityOutput { probs, aux: d })
}

fn dr_probs_from_distances(d: &[f64], s: f64) -> Result<Vec<f64>> {
    let mut at_proxy = d.iter().enumerate().filter(|(_, &x)| x < DR_MIN_DISTANCE).map(|(i, _)| i);
    if let Some(first) = at_proxy.next() {
        if let Some(second) = at_proxy.next() {
            return Err(Error::AmbiguousLimit(first, second));
        }
        let mut p = vec![0.0; d.len()];
        p[first] = 1.0;
        return Ok(p);
    }
    let logits: Vec<f64> = d.iter().map(|x| -s * x.max(DR_MIN_DISTANCE).ln()).collect();
    Ok(softmax(&logits))
}

/// Mean negative log-likelihood of the labelled classes.
///
/// Returns the loss and its gradient w.r.t. the softmax logits, `(p − onehot)/|B|`.
pub fn cross_entropy_loss(probs: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, k) = probs.dim();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} labels for {b} rows", labels.len())));
    }
    let mut loss = 0.0;
    let mut grad = probs.to_owned();
    for (i, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidLabel { label: c, classes: k });
        }
        let row_sum: f64 = probs.row(i).sum();
        if (row_sum - 1.0).abs() > 1e-9 {
            return Err(Error::OutOfRange {
                value: row_sum,
                range: "probability row sum 1",
            });
        }
        loss -= probs[[i, c]].max(CE_MIN_PROB).ln();
        grad[[i, c]] -= 1.0;
    }
    let inv_b = 1.0 / b as f64;
    grad.mapv_inplace(|g| g * inv_b);
    Ok((loss * inv_b, grad))
}

/// Cross-entropy evaluated from logits with log-sum-exp, so the loss stays
/// exact (and consistent with its gradient) however unlikely the label is.
///
/// Returns `(loss, probabilities, dL/dlogits)`. A row holding a `+∞` logit is the
/// one-hot limit: its loss is 0 for that class, `−ln(CE_MIN_PROB)` otherwise,
/// and it contributes no gradient.
pub fn cross_entropy_from_logits(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let (b, k) = logits.dim();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} labels for {b} rows", labels.len())));
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut probs = Array2::zeros((b, k));
    let mut grad = Array2::zeros((b, k));
    for (i, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidLabel { label: c, classes: k });
        }
        let z = logits.row(i);
        if let Some(hot) = z.iter().position(|&v| v == f64::INFINITY) {
            probs[[i, hot]] = 1.0;
            if hot != c {
                loss -= CE_MIN_PROB.ln();
            }
            continue;
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + total.ln();
        loss += lse - z[c];
        for y in 0..k {
            let p = (z[y] - lse).exp();
            probs[[i, y]] = p;
            grad[[i, y]] = (p - if y == c { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss * inv_b, probs, grad))
}

fn unit_rows(raw: &ArrayView2<f64>, what: &str) -> Result<Array2<f64>> {
    normalize_rows(raw).ok_or_else(|| Error::ZeroVector(what.to_string()))
}

/// CORR loss `(1/|B|) Σ (1 − W̃_cᵀ f̃)`; gradient w.r.t. the unnormalized embeddings.
pub fn corr_loss(embeds: ArrayView2<f64>, labels: &[usize], proxies: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let g = head_loss_and_grad(HeadKind::Corr, 1.0, embeds, labels, proxies, None)?;
    Ok((g.loss, g.embeddings))
}

/// Loss and gradients of one mini-batch under a head.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub loss: f64,
    /// Per-class scores: probabilities, or `cos θ_y` for CORR.
    pub scores: Array2<f64>,
    /// w.r.t. the raw (unnormalized) embeddings `f(x)`.
    pub embeddings: Array2<f64>,
    /// w.r.t. the raw class weight / proxy parameters.
    pub weights: Array2<f64>,
    /// w.r.t. the biases (plain softmax only).
    pub bias: Option<Vec<f64>>,
    /// w.r.t. the scale factor (zero when the law does not use it).
    pub scale: f64,
}

/// Forward and backward pass of a head over a batch of raw embeddings.
///
/// `weights` are the raw class parameters; sphere heads normalize them (and the
/// embeddings) internally, and the returned gradients are chained back through
/// that normalization.
pub fn head_loss_and_grad(
    kind: HeadKind,
    s: f64,
    embeds: ArrayView2<f64>,
    labels: &[usize],
    weights: ArrayView2<f64>,
    bias: Option<&[f64]>,
) -> Result<HeadGradients> {
    let (b, d) = embeds.dim();
    let k = weights.nrows();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if weights.ncols() != d || labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "embeddings {b}x{d}, weights {k}x{}, labels {}",
            weights.ncols(),
            labels.len()
        )));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidLabel { label: c, classes: k });
    }
    if embeds.iter().chain(weights.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("head inputs".into()));
    }
    match kind {
        HeadKind::PlainSoftmax => {
            let bias = bias.ok_or_else(|| Error::ShapeMismatch("plain softmax needs biases".into()))?;
            plain_softmax_grad(embeds, labels, weights, bias)
        }
        HeadKind::SdSoftmaxEuclidean => sd_euclidean_grad(s, embeds, labels, weights),
        HeadKind::NormFace | HeadKind::ProxyDr | HeadKind::Corr => sphere_grad(kind, s, embeds, labels, weights),
    }
}

fn plain_softmax_grad(
    embeds: ArrayView2<f64>,
    labels: &[usize],
    weights: ArrayView2<f64>,
    bias: &[f64],
) -> Result<HeadGradients> {
    let (b, d) = embeds.dim();
    let k = weights.nrows();
    if bias.len() != k {
        return Err(Error::ShapeMismatch(format!("{} biases for {k} classes", bias.len())));
    }
    let mut logits = Array2::zeros((b, k));
    for i in 0..b {
        let f = embeds.row(i).to_vec();
        let out = plain_softmax_probs(&f, weights, bias)?;
        logits.row_mut(i).assign(&ArrayView1::from(&out.aux));
    }
    let (loss, probs, g) = cross_entropy_from_logits(logits.view(), labels)?;
    let mut d_embed = Array2::zeros((b, d));
    let mut d_w = Array2::zeros((k, d));
    let mut d_b = vec![0.0; k];
    for i in 0..b {
        for y in 0..k {
            let gy = g[[i, y]];
            d_b[y] += gy;
            for j in 0..d {
                d_embed[[i, j]] += gy * weights[[y, j]];
                d_w[[y, j]] += gy * embeds[[i, j]];
            }
        }
    }
    Ok(HeadGradients {
        loss,
        scores: probs,
        embeddings: d_embed,
        weights: d_w,
        bias: Some(d_b),
        scale: 0.0,
    })
}

fn sd_euclidean_grad(s: f64, embeds: ArrayView2<f64>, labels: &[usize], weights: ArrayView2<f64>) -> Result<HeadGradients> {
    let (b, d) = embeds.dim();
    let k = weights.nrows();
    let mut dists = Array2::zeros((b, k));
    for i in 0..b {
        let f = embeds.row(i).to_vec();
        let out = sd_softmax_probs(&f, weights, s)?;
        dists.row_mut(i).assign(&ArrayView1::from(&out.aux));
    }
    let logits = dists.mapv(|d: f64| -0.5 * s * d * d);
    let (loss, probs, g) = cross_entropy_from_logits(logits.view(), labels)?;
    let mut d_embed = Array2::zeros((b, d));
    let mut d_w = Array2::zeros((k, d));
    let mut d_s = 0.0;
    for i in 0..b {
        for y in 0..k {
            let gy = g[[i, y]];
            d_s += gy * (-0.5 * dists[[i, y]] * dists[[i, y]]);
            for j in 0..d {
                let diff = embeds[[i, j]] - weights[[y, j]];
                d_embed[[i, j]] -= gy * s * diff;
                d_w[[y, j]] += gy * s * diff;
            }
        }
    }
    Ok(HeadGradients {
        loss,
        scores: probs,
        embeddings: d_embed,
        weights: d_w,
        bias: None,
        scale: d_s,
    })
}

fn sphere_grad(kind: HeadKind, s: f64, embeds: ArrayView2<f64>, labels: &[usize], weights: ArrayView2<f64>) -> Result<HeadGradients> {
    let (b, d) = embeds.dim();
    let k = weights.nrows();
    let unit_w = unit_rows(&weights, "proxy")?;
    let unit_f = unit_rows(&embeds, "embedding")?;

    // gradients w.r.t. the unit vectors, chained back at the end
    let mut g_u = Array2::<f64>::zeros((b, d));
    let mut g_wt = Array2::<f64>::zeros((k, d));
    let mut d_s = 0.0;
    let mut scores = Array2::zeros((b, k));
    let loss;

    match kind {
        HeadKind::Corr => {
            let inv_b = 1.0 / b as f64;
            let mut total = 0.0;
            for (i, &c) in labels.iter().enumerate() {
                for y in 0..k {
                    scores[[i, y]] = unit_w.row(y).dot(&unit_f.row(i));
                }
                total += 1.0 - scores[[i, c]];
                for j in 0..d {
                    g_u[[i, j]] -= unit_w[[c, j]] * inv_b;
                    g_wt[[c, j]] -= unit_f[[i, j]] * inv_b;
                }
            }
            loss = total * inv_b;
        }
        HeadKind::NormFace => {
            let mut cos = Array2::zeros((b, k));
            for i in 0..b {
                for y in 0..k {
                    cos[[i, y]] = unit_w.row(y).dot(&unit_f.row(i));
                }
            }
            let (l, p, g) = cross_entropy_from_logits(cos.mapv(|c| s * c).view(), labels)?;
            loss = l;
            scores = p;
            for i in 0..b {
                for y in 0..k {
                    let gy = g[[i, y]];
                    d_s += gy * cos[[i, y]];
                    for j in 0..d {
                        g_u[[i, j]] += s * gy * unit_w[[y, j]];
                        g_wt[[y, j]] += s * gy * unit_f[[i, j]];
                    }
                }
            }
        }
        HeadKind::ProxyDr => {
            let mut dists = Array2::zeros((b, k));
            let mut singular = vec![false; b];
            for i in 0..b {
                for y in 0..k {
                    dists[[i, y]] = (&unit_f.row(i) - &unit_w.row(y)).mapv(|x| x * x).sum().sqrt();
                }
                let row: Vec<f64> = dists.row(i).to_vec();
                // validates the limit (two coincident proxies are ambiguous)
                dr_probs_from_distances(&row, s)?;
                singular[i] = row.iter().any(|&x| x < DR_MIN_DISTANCE);
            }
            let logits = dists.mapv(|x: f64| if x < DR_MIN_DISTANCE { f64::INFINITY } else { -s * x.ln() });
            let (l, p, g) = cross_entropy_from_logits(logits.view(), labels)?;
            loss = l;
            scores = p;
            for i in 0..b {
                // at a proxy the logits are singular; the one-hot limit contributes no gradient
                if singular[i] {
                    continue;
                }
                for y in 0..k {
                    let gy = g[[i, y]];
                    let dy = dists[[i, y]];
                    d_s -= gy * dy.ln();
                    let coef = s * gy / (dy * dy);
                    for j in 0..d {
                        let diff = unit_f[[i, j]] - unit_w[[y, j]];
                        g_u[[i, j]] -= coef * diff;
                        g_wt[[y, j]] += coef * diff;
                    }
                }
            }
        }
        _ => unreachable!("non-sphere head"),
    }

    let mut d_embed = Array2::zeros((b, d));
    for i in 0..b {
        let back = normalization_backward(&embeds.row(i).to_vec(), &g_u.row(i).to_vec());
        d_embed.row_mut(i).assign(&ArrayView1::from(&back));
    }
    let mut d_w = Array2::zeros((k, d));
    for y in 0..k {
        let back = normalization_backward(&weights.row(y).to_vec(), &g_wt.row(y).to_vec());
        d_w.row_mut(y).assign(&ArrayView1::from(&back));
    }
    Ok(HeadGradients {
        loss,
        scores,
        embeddings: d_embed,
        weights: d_w,
        bias: None,
        scale: if kind == HeadKind::Corr { 0.0 } else { d_s },
    })
}

/// Per-class confidence used for ranking: probabilities for the probability
/// laws, `cos θ_y` for CORR.
pub fn confidences(
    kind: HeadKind,
    s: f64,
    embeds: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    bias: Option<&[f64]>,
) -> Result<Array2<f64>> {
    let (b, d) = embeds.dim();
    let k = weights.nrows();
    if weights.ncols() != d {
        return Err(Error::ShapeMismatch(format!("embeddings dim {d} vs weights dim {}", weights.ncols())));
    }
    let mut out = Array2::zeros((b, k));
    match kind {
        HeadKind::PlainSoftmax => {
            let bias = bias.ok_or_else(|| Error::ShapeMismatch("plain softmax needs biases".into()))?;
            for i in 0..b {
                let p = plain_softmax_probs(&embeds.row(i).to_vec(), weights, bias)?;
                out.row_mut(i).assign(&ArrayView1::from(&p.probs));
            }
        }
        HeadKind::SdSoftmaxEuclidean => {
            for i in 0..b {
                let p = sd_softmax_probs(&embeds.row(i).to_vec(), weights, s)?;
                out.row_mut(i).assign(&ArrayView1::from(&p.probs));
            }
        }
        HeadKind::NormFace | HeadKind::ProxyDr | HeadKind::Corr => {
            let unit_w = unit_rows(&weights, "proxy")?;
            let unit_f = unit_rows(&embeds, "embedding")?;
            for i in 0..b {
                let f = unit_f.row(i).to_vec();
                let row = match kind {
                    HeadKind::NormFace => normface_probs(&f, unit_w.view(), s)?.probs,
                    HeadKind::ProxyDr => proxydr_probs(&f, unit_w.view(), s)?.probs,
                    _ => unit_w.rows().into_iter().map(|w| row_dot(w, &f)).collect(),
                };
                out.row_mut(i).assign(&ArrayView1::from(&row));
            }
        }
    }
    Ok(out)
}

/// Angle in degrees, on a uniform circle grid of `resolution` points, that
/// maximizes the confidence of class 1 (index 0) for two 2-D proxies.
pub fn confidence_argmax_on_circle(kind: HeadKind, proxies: [[f64; 2]; 2], s: f64, resolution: usize) -> Result<f64> {
    if resolution < 3600 {
        return Err(Error::OutOfRange {
            value: resolution as f64,
            range: "grid resolution >= 3600",
        });
    }
    for w in &proxies {
        let n = norm(w);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotNormalized { what: "proxy", norm: n });
        }
    }
    // ranking by the log-odds z_0 − z_1 is monotone in p(1|x) and does not
    // saturate the way the probability does for large s
    let mut best = (f64::NEG_INFINITY, 0.0);
    for step in 0..resolution {
        let deg = 360.0 * step as f64 / resolution as f64;
        let rad = deg * PI / 180.0;
        let x = [rad.cos(), rad.sin()];
        let logit = |w: &[f64; 2]| -> Result<f64> {
            let d = ((w[0] - x[0]).powi(2) + (w[1] - x[1]).powi(2)).sqrt();
            match kind {
                HeadKind::NormFace => Ok(s * (w[0] * x[0] + w[1] * x[1])),
                HeadKind::SdSoftmaxEuclidean => Ok(-0.5 * s * d * d),
                HeadKind::ProxyDr if d < DR_MIN_DISTANCE => Ok(f64::INFINITY),
                HeadKind::ProxyDr => Ok(-s * d.ln()),
                other => Err(Error::ConfigConflict(format!("{other} has no sphere probability law"))),
            }
        };
        let (z0, z1) = (logit(&proxies[0])?, logit(&proxies[1])?);
        let margin = if z0 == f64::INFINITY { f64::INFINITY } else { z0 - z1 };
        if margin > best.0 {
            best = (margin, deg);
        }
    }
    Ok(best.1)
}
