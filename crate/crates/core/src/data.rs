//! Labelled feature datasets: CSV I/O, stratified splits and a synthetic
//! generator whose input geometry follows a balanced class tree.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyTree;

pub const MAX_SYNTHETIC_CLASSES: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    /// Class index in the hierarchy's leaf order.
    pub labels: Vec<usize>,
    pub class_labels: Vec<String>,
    pub features: Array2<f64>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, labels: Vec<usize>, class_labels: Vec<String>, features: Array2<f64>) -> Result<Self> {
        let n = ids.len();
        if labels.len() != n || features.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} ids, {} labels, {} feature rows",
                labels.len(),
                features.nrows()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= class_labels.len()) {
            return Err(Error::InvalidLabel {
                label: c,
                classes: class_labels.len(),
            });
        }
        if let Some(i) = features.rows().into_iter().position(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteFeature(i));
        }
        Ok(Self {
            ids,
            labels,
            class_labels,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_labels: self.class_labels.clone(),
            features: self.features.select(ndarray::Axis(0), indices),
        }
    }

    /// Reads `id,class,f0,…,f{d−1}`; class ids must be leaf classes of `tree`.
    pub fn load<R: Read>(reader: R, tree: &HierarchyTree) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "id" || &header[1] != "class" {
            return Err(Error::SchemaError(format!(
                "expected header `id,class,f0,...`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("f{j}") {
                return Err(Error::SchemaError(format!("feature column {j} is named `{name}`")));
            }
        }
        let dim = header.len() - 2;
        let (mut ids, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(row as u64 + 2, |p| p.line());
            if rec.len() != header.len() {
                return Err(Error::SchemaError(format!(
                    "line {line}: {} fields, expected {}",
                    rec.len(),
                    header.len()
                )));
            }
            let class = tree
                .class_index(&rec[1])
                .map_err(|_| Error::UnknownClass(format!("{} (row `{}`, line {line})", &rec[1], &rec[0])))?;
            for field in rec.iter().skip(2) {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad feature value `{field}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteFeature(row));
                }
                values.push(v);
            }
            ids.push(rec[0].to_string());
            labels.push(class);
        }
        let features = Array2::from_shape_vec((ids.len(), dim), values).expect("row lengths checked");
        Self::new(ids, labels, tree.class_labels(), features)
    }

    /// Writes the CSV form read by [`Self::load`]; values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "class".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone(), self.class_labels[self.labels[i]].clone()];
            rec.extend(self.features.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Train/validation/test fractions plus the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let ok = [train, val, test].iter().all(|f| *f > 0.0 && f.is_finite())
            && ((train + val + test) - 1.0).abs() < 1e-9;
        if !ok {
            return Err(Error::ConfigConflict(format!(
                "split fractions ({train}, {val}, {test}) must be positive and sum to 1"
            )));
        }
        Ok(Self { train, val, test, seed })
    }

    /// 70/10/20.
    pub fn standard(seed: u64) -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed,
        }
    }
}

/// Row indices of each part, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Classes too small to stratify (all of their items went to `train`).
    pub unstratified: Vec<usize>,
}

/// Per-class shuffled split. Each class with at least 3 items gets
/// `round(val·n)` validation and `round(test·n)` test items (each at least
/// one, leaving at least one for training); smaller classes go to training.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, &c) in data.labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        unstratified: Vec::new(),
    };
    for (c, mut items) in by_class.into_iter().enumerate() {
        let n = items.len();
        if n == 0 {
            continue;
        }
        if n < 3 {
            log::warn!(
                "class `{}` has {n} item(s); all assigned to the training split",
                data.class_labels[c]
            );
            out.unstratified.push(c);
            out.train.extend(items);
            continue;
        }
        items.shuffle(&mut rng);
        let n_val = ((spec.val * n as f64).round() as usize).max(1);
        let n_test = ((spec.test * n as f64).round() as usize).max(1);
        let (n_val, n_test) = if n_val + n_test >= n { (1, 1) } else { (n_val, n_test) };
        out.test.extend_from_slice(&items[..n_test]);
        out.val.extend_from_slice(&items[n_test..n_test + n_val]);
        out.train.extend_from_slice(&items[n_test + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Parameters of the synthetic hierarchical Gaussian dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub branching: usize,
    pub depth: usize,
    pub input_dim: usize,
    pub per_class: usize,
    /// Step size of the mean diffusion at levels `1..=depth`.
    pub sigmas: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Default schedule `2·0.5^{level−1}` and noise 0.3.
    pub fn new(branching: usize, depth: usize, input_dim: usize, per_class: usize, seed: u64) -> Self {
        Self {
            branching,
            depth,
            input_dim,
            per_class,
            sigmas: default_sigmas(depth),
            noise_sigma: 0.3,
            seed,
        }
    }
}

pub fn default_sigmas(depth: usize) -> Vec<f64> {
    (0..depth).map(|l| 2.0 * 0.5f64.powi(l as i32)).collect()
}

/// Balanced tree with `branching^depth` leaves; each child mean is its parent's
/// mean plus `sigma_level · N(0, I)`, and samples scatter around leaf means
/// with `noise_sigma`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, HierarchyTree)> {
    if spec.branching < 2 || spec.depth < 2 {
        return Err(Error::ConfigConflict("synthetic tree needs branching >= 2 and depth >= 2".into()));
    }
    if spec.input_dim == 0 || spec.per_class == 0 {
        return Err(Error::ConfigConflict("input dim and items per class must be positive".into()));
    }
    if spec.sigmas.len() != spec.depth {
        return Err(Error::ConfigConflict(format!(
            "{} sigmas for depth {}",
            spec.sigmas.len(),
            spec.depth
        )));
    }
    let classes = (spec.branching as u32)
        .checked_pow(spec.depth as u32)
        .map(|c| c as usize)
        .filter(|&c| c <= MAX_SYNTHETIC_CLASSES)
        .ok_or(Error::TooManyClasses(
            spec.branching.saturating_pow(spec.depth.min(64) as u32),
        ))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gauss = |n: usize, sigma: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    };

    let mut edges: Vec<(String, Option<String>)> = vec![("root".into(), None)];
    let mut level: Vec<(String, Vec<f64>)> = vec![("root".into(), vec![0.0; spec.input_dim])];
    let width = classes.to_string().len();
    for depth in 1..=spec.depth {
        let sigma = spec.sigmas[depth - 1];
        let mut next = Vec::with_capacity(level.len() * spec.branching);
        for (parent, mean) in &level {
            for _ in 0..spec.branching {
                let idx = next.len();
                let id = if depth == spec.depth {
                    format!("class_{idx:0width$}")
                } else {
                    format!("node_{depth}_{idx}")
                };
                let step = gauss(spec.input_dim, sigma, &mut rng);
                let child: Vec<f64> = mean.iter().zip(&step).map(|(m, s)| m + s).collect();
                edges.push((id.clone(), Some(parent.clone())));
                next.push((id, child));
            }
        }
        level = next;
    }
    let tree = HierarchyTree::from_edges(&edges)?;

    let n = classes * spec.per_class;
    let mut features = Array2::zeros((n, spec.input_dim));
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let id_width = n.to_string().len();
    for (c, (_, mean)) in level.iter().enumerate() {
        for _ in 0..spec.per_class {
            let i = ids.len();
            let noise = gauss(spec.input_dim, spec.noise_sigma, &mut rng);
            for (j, (m, e)) in mean.iter().zip(&noise).enumerate() {
                features[[i, j]] = m + e;
            }
            ids.push(format!("x{i:0id_width$}"));
            labels.push(c);
        }
    }
    let data = Dataset::new(ids, labels, tree.class_labels(), features)?;
    Ok((data, tree))
}

/// Maps class ids of `data` onto `tree`'s class order.
pub fn check_class_set(data: &Dataset, tree: &HierarchyTree) -> Result<()> {
    let ours: HashMap<&str, usize> = data
        .class_labels
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let theirs = tree.class_labels();
    if theirs.len() != ours.len() || theirs.iter().enumerate().any(|(i, c)| ours.get(c.as_str()) != Some(&i)) {
        return Err(Error::ClassSetMismatch(format!(
            "dataset has {} classes, hierarchy has {}",
            ours.len(),
            theirs.len()
        )));
    }
    Ok(())
}
