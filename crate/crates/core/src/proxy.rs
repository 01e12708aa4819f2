//! Class representatives: proxies (used by the losses) and prototypes
//! (normalized class means, evaluation only).

use std::fmt;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::ClassDistanceMatrix;
use crate::optim::AdamState;
use crate::vecops::{normalize_rows, UNIT_TOL};

pub const DEFAULT_EMA_ALPHA: f64 = 0.001;
pub const DEFAULT_MDS_LR: f64 = 1e-3;
pub const DEFAULT_MDS_ITERS: usize = 1000;

/// How a proxy set evolves during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ProxyPolicy {
    /// Ordinary parameters updated through the loss gradient (owned by the trainer).
    Gradient,
    /// Normalized exponential moving average of batch-local prototypes.
    Ema { alpha: f64 },
    /// Placed once (by MDS) and never changed.
    Fixed,
}

impl ProxyPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ProxyPolicy::Gradient => "gradient",
            ProxyPolicy::Ema { .. } => "ema",
            ProxyPolicy::Fixed => "fixed",
        }
    }
}

impl fmt::Display for ProxyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One unit vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySet {
    matrix: Array2<f64>,
    labels: Vec<String>,
    policy: ProxyPolicy,
}

impl ProxySet {
    /// Rows are normalized on construction.
    pub fn new(matrix: Array2<f64>, labels: Vec<String>, policy: ProxyPolicy) -> Result<Self> {
        if matrix.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} proxy rows for {} labels",
                matrix.nrows(),
                labels.len()
            )));
        }
        if let ProxyPolicy::Ema { alpha } = policy {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::OutOfRange {
                    value: alpha,
                    range: "alpha in (0, 1)",
                });
            }
        }
        let matrix = normalize_rows(&matrix.view()).ok_or_else(|| Error::ZeroVector("proxy row".into()))?;
        Ok(Self { matrix, labels, policy })
    }

    /// Seeded standard-Gaussian rows, normalized.
    pub fn random(labels: Vec<String>, dim: usize, policy: ProxyPolicy, rng: &mut impl rand::Rng) -> Result<Self> {
        let m = Array2::from_shape_simple_fn((labels.len(), dim), || StandardNormal.sample(rng));
        Self::new(m, labels, policy)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn policy(&self) -> ProxyPolicy {
        self.policy
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Normalized EMA towards the batch-local prototype of every class present in the batch.
    ///
    /// Classes absent from the batch are untouched. With one sample per class this
    /// is the single-sample update `W̃ ← normalize(α f̃ + (1−α) W̃)`.
    pub fn ema_update(&mut self, embeds: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
        let alpha = match self.policy {
            ProxyPolicy::Ema { alpha } => alpha,
            other => return Err(Error::WrongPolicy(other.name())),
        };
        let (b, d) = embeds.dim();
        if d != self.dim() || labels.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "batch {b}x{d} with {} labels vs proxies of dim {}",
                labels.len(),
                self.dim()
            )));
        }
        let k = self.num_classes();
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut present = vec![false; k];
        for (i, &c) in labels.iter().enumerate() {
            if c >= k {
                return Err(Error::InvalidLabel { label: c, classes: k });
            }
            present[c] = true;
            let mut row = sums.row_mut(c);
            row += &embeds.row(i);
        }
        let mut updated = self.matrix.clone();
        for c in (0..k).filter(|&c| present[c]) {
            let s = sums.row(c);
            let sn = s.dot(&s).sqrt();
            if sn < 1e-12 {
                return Err(Error::ZeroVector(format!("batch prototype of class {c}")));
            }
            let blended = &s.mapv(|x| alpha * x / sn) + &self.matrix.row(c).mapv(|x| (1.0 - alpha) * x);
            let bn = blended.dot(&blended).sqrt();
            if bn < 1e-12 {
                return Err(Error::ZeroVector(format!("EMA blend of class {c}")));
            }
            updated.row_mut(c).assign(&blended.mapv(|x| x / bn));
        }
        self.matrix = updated;
        Ok(())
    }

    pub fn pairwise_distances(&self) -> ClassDistanceMatrix {
        pairwise_representative_distances(self.matrix.view(), self.labels.clone())
    }

    /// CSV with a class id column followed by the coordinates; exact round trip.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows_csv(writer, &self.labels, self.matrix.view())
    }

    pub fn read_csv<R: Read>(reader: R, policy: ProxyPolicy) -> Result<Self> {
        let (labels, matrix) = read_rows_csv(reader)?;
        // already unit rows; keep the stored bits exactly
        Self::from_unit_rows(matrix, labels, policy)
    }

    /// Builds a set from rows that are already unit-norm, without renormalizing.
    pub fn from_unit_rows(matrix: Array2<f64>, labels: Vec<String>, policy: ProxyPolicy) -> Result<Self> {
        if matrix.nrows() != labels.len() {
            return Err(Error::ShapeMismatch("proxy rows vs labels".into()));
        }
        for r in matrix.rows() {
            let n = r.dot(&r).sqrt();
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::NotNormalized { what: "proxy row", norm: n });
            }
        }
        Ok(Self { matrix, labels, policy })
    }
}

fn write_rows_csv<W: Write>(writer: W, labels: &[String], m: ArrayView2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["class".to_string()];
    header.extend((0..m.ncols()).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(m.rows()) {
        let mut rec = vec![label.clone()];
        // Display for f64 is the shortest representation that round-trips exactly
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows_csv<R: Read>(reader: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let dim = rdr.headers()?.len().saturating_sub(1);
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        labels.push(rec[0].to_string());
        for j in 1..=dim {
            values.push(rec[j].parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("bad number `{}`: {e}", &rec[j]),
            })?);
        }
    }
    let m = Array2::from_shape_vec((labels.len(), dim), values).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((labels, m))
}

/// Euclidean distances between representative rows.
pub fn pairwise_representative_distances(reps: ArrayView2<f64>, labels: Vec<String>) -> ClassDistanceMatrix {
    let k = reps.nrows();
    let mut out = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let d = (&reps.row(i) - &reps.row(j)).mapv(|x| x * x).sum().sqrt();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    ClassDistanceMatrix::new(labels, out)
}

/// Normalized per-class mean of normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    matrix: Array2<f64>,
    counts: Vec<usize>,
    labels: Vec<String>,
}

impl PrototypeSet {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.counts[class] > 0
    }

    pub fn absent(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&c| self.counts[c] == 0).collect()
    }

    /// Requires every class to be present.
    pub fn pairwise_distances(&self) -> Result<ClassDistanceMatrix> {
        if let Some(c) = self.absent().first() {
            return Err(Error::AbsentClass(*c));
        }
        Ok(pairwise_representative_distances(self.matrix.view(), self.labels.clone()))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows_csv(writer, &self.labels, self.matrix.view())
    }
}

/// Prototypes from unit embeddings; classes without samples are flagged absent (zero row).
pub fn compute_prototypes(embeds: ArrayView2<f64>, labels: &[usize], class_labels: Vec<String>) -> Result<PrototypeSet> {
    let (n, d) = embeds.dim();
    let k = class_labels.len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} embeddings", labels.len())));
    }
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidLabel { label: c, classes: k });
        }
        counts[c] += 1;
        let mut row = sums.row_mut(c);
        row += &embeds.row(i);
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let mut row = sums.row_mut(c);
        let mean_norm = row.dot(&row).sqrt() / counts[c] as f64;
        if mean_norm < 1e-12 {
            return Err(Error::ZeroMean(c));
        }
        let sn = row.dot(&row).sqrt();
        row.mapv_inplace(|x| x / sn);
    }
    Ok(PrototypeSet {
        matrix: sums,
        counts,
        labels: class_labels,
    })
}

/// Result of placing fixed proxies by stress minimization.
#[derive(Debug, Clone)]
pub struct MdsResult {
    pub proxies: ProxySet,
    /// Stress before the first step, then after every iteration (`iters + 1` values).
    pub stress_trace: Vec<f64>,
}

/// `‖D_W − D_T‖_F / ‖D_T‖_F` for the rows of `w`.
pub fn normalized_stress(w: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let k = w.nrows();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            let dw = if i == j {
                0.0
            } else {
                (&w.row(i) - &w.row(j)).mapv(|x| x * x).sum().sqrt()
            };
            let r = dw - target[[i, j]];
            num += r * r;
            den += target[[i, j]] * target[[i, j]];
        }
    }
    num.sqrt() / den.sqrt()
}

/// Stress and its gradient w.r.t. the rows of `w`.
///
/// At coincident rows the distance is not differentiable; that pair contributes nothing.
pub fn stress_gradient(w: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let (k, d) = w.dim();
    let mut dist = Array2::<f64>::zeros((k, k));
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                dist[[i, j]] = (&w.row(i) - &w.row(j)).mapv(|x| x * x).sum().sqrt();
            }
            let r = dist[[i, j]] - target[[i, j]];
            num += r * r;
            den += target[[i, j]] * target[[i, j]];
        }
    }
    let resid_norm = num.sqrt();
    let target_norm = den.sqrt();
    let stress = resid_norm / target_norm;
    let mut grad = Array2::zeros((k, d));
    if resid_norm == 0.0 {
        return (stress, grad);
    }
    // each unordered pair appears twice in the Frobenius sum
    let scale = 2.0 / (target_norm * resid_norm);
    for a in 0..k {
        for b in 0..k {
            let dab = dist[[a, b]];
            if a == b || dab == 0.0 {
                continue;
            }
            let coef = scale * (dab - target[[a, b]]) / dab;
            for j in 0..d {
                grad[[a, j]] += coef * (w[[a, j]] - w[[b, j]]);
            }
        }
    }
    (stress, grad)
}

/// Places one unit vector per class so that chord distances match `d_t`.
///
/// Rows start as seeded Gaussian draws projected to the sphere; each iteration
/// takes an Adam step on the normalized stress and re-projects every row.
pub fn mds_place(d_t: &ClassDistanceMatrix, dim: usize, lr: f64, iters: usize, seed: u64) -> Result<MdsResult> {
    let k = d_t.len();
    let target = d_t.values.view();
    if dim == 0 {
        return Err(Error::ShapeMismatch("MDS dimension must be positive".into()));
    }
    for i in 0..k {
        for j in 0..k {
            let v = target[[i, j]];
            if !v.is_finite() || v < 0.0 || v >= std::f64::consts::SQRT_2 || (target[[j, i]] - v).abs() > 1e-12 {
                return Err(Error::OutOfRange {
                    value: v,
                    range: "symmetric distances in [0, sqrt(2))",
                });
            }
        }
        if target[[i, i]] != 0.0 {
            return Err(Error::OutOfRange {
                value: target[[i, i]],
                range: "zero diagonal",
            });
        }
    }
    if target.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateMatrix);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = ProxySet::random(d_t.labels.clone(), dim, ProxyPolicy::Fixed, &mut rng)?;
    let mut w = init.matrix;
    let mut adam = AdamState::new(lr, k * dim);
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(normalized_stress(w.view(), target));
    for _ in 0..iters {
        let (_, grad) = stress_gradient(w.view(), target);
        adam.step(
            w.as_slice_mut().expect("owned standard layout"),
            grad.as_slice().expect("owned standard layout"),
        )?;
        w = normalize_rows(&w.view()).ok_or_else(|| Error::ZeroVector("MDS proxy row".into()))?;
        trace.push(normalized_stress(w.view(), target));
    }
    let proxies = ProxySet::from_unit_rows(w, d_t.labels.clone(), ProxyPolicy::Fixed)?;
    Ok(MdsResult {
        proxies,
        stress_trace: trace,
    })
}
