//! Flat and hierarchical evaluation measures.
//!
//! Ranked predictions are lists of class indices, best first. Distance and
//! similarity matrices are indexed by class in hierarchy order.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::heads::{confidences, HeadKind};
use crate::hierarchy::{ClassDistanceMatrix, HierarchyTree};
use crate::model::Checkpoint;
use crate::proxy::{compute_prototypes, pairwise_representative_distances};
use crate::vecops::normalize_rows;

/// Pearson values are clamped to `±FISHER_CLAMP` before `atanh`.
pub const FISHER_CLAMP: f64 = 1.0 - 1e-7;

fn check_lists(ranked: &[Vec<usize>], labels: &[usize], k: usize) -> Result<()> {
    if ranked.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} ranked lists for {} labels", ranked.len(), labels.len())));
    }
    if ranked.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::OutOfRange { value: 0.0, range: "k >= 1" });
    }
    if let Some(short) = ranked.iter().map(Vec::len).filter(|&l| l < k).min() {
        return Err(Error::KTooLarge { k, available: short });
    }
    Ok(())
}

/// Fraction of samples whose label is among the first `k` ranked classes.
pub fn topk_accuracy(ranked: &[Vec<usize>], labels: &[usize], k: usize) -> Result<f64> {
    check_lists(ranked, labels, k)?;
    let hits = ranked
        .iter()
        .zip(labels)
        .filter(|(r, c)| r[..k].contains(c))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Spearman's rank correlation (average-rank ties); `None` for a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Fisher-pooled mean of per-class Spearman correlations between rows of
/// `d_l` and `d_h`, each row taken without its diagonal entry.
pub fn mean_correlation(d_l: &ClassDistanceMatrix, d_h: &ClassDistanceMatrix) -> Result<f64> {
    if d_l.labels != d_h.labels || d_l.values.dim() != d_h.values.dim() {
        return Err(Error::ClassSetMismatch("distance matrices have different class orders".into()));
    }
    mean_correlation_values(d_l.values.view(), d_h.values.view())
}

pub fn mean_correlation_values(d_l: ArrayView2<f64>, d_h: ArrayView2<f64>) -> Result<f64> {
    let n = d_l.nrows();
    if n < 3 {
        return Err(Error::TooFewClasses { needed: 3, got: n });
    }
    let mut z = 0.0;
    for i in 0..n {
        let a: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d_l[[i, j]]).collect();
        let b: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d_h[[i, j]]).collect();
        let r = spearman(&a, &b).ok_or(Error::ConstantRow(i))?;
        z += r.clamp(-FISHER_CLAMP, FISHER_CLAMP).atanh();
    }
    Ok((z / n as f64).tanh())
}

/// Mean over samples of the mean `d_H(label, ŷ)` over the top-`k` predictions.
pub fn ahd(ranked: &[Vec<usize>], labels: &[usize], d_h: ArrayView2<f64>, k: usize) -> Result<f64> {
    check_lists(ranked, labels, k)?;
    let mut total = 0.0;
    for (r, &c) in ranked.iter().zip(labels) {
        total += r[..k].iter().map(|&y| d_h[[c, y]]).sum::<f64>() / k as f64;
    }
    Ok(total / labels.len() as f64)
}

/// Smallest hierarchical neighbourhood of `class` holding at least `k` classes.
pub fn hcorrect_set(d_h: ArrayView2<f64>, class: usize, k: usize) -> Vec<usize> {
    let row = d_h.row(class);
    let mut levels: Vec<f64> = row.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for eps in levels {
        let set: Vec<usize> = (0..row.len()).filter(|&y| row[y] <= eps).collect();
        if set.len() >= k {
            return set;
        }
    }
    (0..row.len()).collect()
}

/// Mean fraction of the top-`k` predictions inside `hCorrectSet(label, k)`.
pub fn hp_at_k(ranked: &[Vec<usize>], labels: &[usize], d_h: ArrayView2<f64>, k: usize) -> Result<f64> {
    check_lists(ranked, labels, k)?;
    if k > d_h.nrows() {
        return Err(Error::KTooLarge { k, available: d_h.nrows() });
    }
    let mut sets: Vec<Option<Vec<usize>>> = vec![None; d_h.nrows()];
    let mut total = 0.0;
    for (r, &c) in ranked.iter().zip(labels) {
        let set = sets[c].get_or_insert_with(|| hcorrect_set(d_h, c, k));
        let hits = r[..k].iter().filter(|y| set.contains(y)).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / labels.len() as f64)
}

/// Items other than the query, sorted by ascending distance (ties by index).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalList {
    pub query: usize,
    /// `(item index, class, distance)`
    pub items: Vec<(usize, usize, f64)>,
}

impl RetrievalList {
    pub fn classes(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.1).collect()
    }
}

pub fn retrieval_list(embeds: ArrayView2<f64>, labels: &[usize], query: usize) -> RetrievalList {
    let q = embeds.row(query);
    let mut items: Vec<(usize, usize, f64)> = (0..embeds.nrows())
        .filter(|&j| j != query)
        .map(|j| {
            let d = (&embeds.row(j) - &q).mapv(|x| x * x).sum().sqrt();
            (j, labels[j], d)
        })
        .collect();
    items.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    RetrievalList { query, items }
}

/// HS@k for one query: similarity mass of the first `k` retrieved items over
/// the best achievable mass of any `k` items in the list.
pub fn hs_at_k(query_class: usize, retrieved: &[usize], s_h: ArrayView2<f64>, k: usize) -> Result<f64> {
    Ok(*hs_curve(query_class, retrieved, s_h, k)?.last().expect("k >= 1"))
}

/// HS@1 … HS@K for one query.
pub fn hs_curve(query_class: usize, retrieved: &[usize], s_h: ArrayView2<f64>, max_k: usize) -> Result<Vec<f64>> {
    if max_k == 0 {
        return Err(Error::OutOfRange { value: 0.0, range: "k >= 1" });
    }
    if retrieved.len() < max_k {
        return Err(Error::KTooLarge {
            k: max_k,
            available: retrieved.len(),
        });
    }
    let sims: Vec<f64> = retrieved.iter().map(|&c| s_h[[query_class, c]]).collect();
    let mut best = sims.clone();
    best.sort_by(|a, b| b.total_cmp(a));
    let (mut num, mut den) = (0.0, 0.0);
    let mut out = Vec::with_capacity(max_k);
    for k in 0..max_k {
        num += sims[k];
        den += best[k];
        out.push(num / den);
    }
    Ok(out)
}

/// Mean of the dataset-level HS@k over `k = 1..=K`.
pub fn ahs_at_k(hs_means: &[f64], max_k: usize) -> Result<f64> {
    if max_k == 0 {
        return Err(Error::MissingK(0));
    }
    if hs_means.len() < max_k {
        return Err(Error::MissingK(hs_means.len() + 1));
    }
    Ok(hs_means[..max_k].iter().sum::<f64>() / max_k as f64)
}

/// Dataset mean of HS@k for `k = 1..=K`, using every item as a query.
///
/// Queries run in parallel on up to `threads` workers (all cores when `None`);
/// the per-query curves are summed in query order, so the result does not
/// depend on the thread count.
pub fn retrieval_hs_means(
    embeds: ArrayView2<f64>,
    labels: &[usize],
    s_h: ArrayView2<f64>,
    max_k: usize,
    threads: Option<usize>,
) -> Result<Vec<f64>> {
    let n = embeds.nrows();
    if n < max_k + 1 {
        return Err(Error::KTooLarge {
            k: max_k,
            available: n.saturating_sub(1),
        });
    }
    let job = || -> Result<Vec<Vec<f64>>> {
        (0..n)
            .into_par_iter()
            .map(|q| {
                let list = retrieval_list(embeds, labels, q);
                hs_curve(labels[q], &list.classes(), s_h, max_k)
            })
            .collect()
    };
    let curves = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Io(e.to_string()))?
            .install(job)?,
        None => job()?,
    };
    let mut sums = vec![0.0; max_k];
    for c in &curves {
        for (s, v) in sums.iter_mut().zip(c) {
            *s += v;
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

/// Classes ranked by descending confidence, ties by ascending index.
pub fn rank_classes(scores: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let classes = scores.ncols();
    if k > classes {
        return Err(Error::KTooLarge { k, available: classes });
    }
    Ok(scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..classes).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.into_iter().take(k).map(|c| (c, row[c])).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub class_count: usize,
    pub head: String,
    pub options: String,
    pub num_samples: usize,
    pub split: String,
    /// Per-row correlations skip the forced-zero diagonal.
    pub correlation_diagonal_excluded: bool,
    /// Retrieval lists for HS@k leave out the query item.
    pub retrieval_excludes_query: bool,
    /// Plain-softmax weight vectors were normalized to serve as proxies.
    pub proxies_normalized_post_hoc: bool,
    pub living_class_count: Option<usize>,
    /// Why a metric is `null`, per field.
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub top5: Option<f64>,
    pub mean_corr_proxy: Option<f64>,
    pub mean_corr_prototype: Option<f64>,
    pub mean_corr_proxy_living: Option<f64>,
    pub mean_corr_prototype_living: Option<f64>,
    pub ahd_k1: f64,
    pub ahd_k5: Option<f64>,
    pub hp_at_5: Option<f64>,
    pub hs_at_50: Option<f64>,
    pub hs_at_250: Option<f64>,
    pub ahs_at_250: Option<f64>,
    pub metadata: ReportMetadata,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `(name, value)` for every numeric field, in serialization order.
    pub fn fields(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("top1", Some(self.top1)),
            ("top5", self.top5),
            ("mean_corr_proxy", self.mean_corr_proxy),
            ("mean_corr_prototype", self.mean_corr_prototype),
            ("mean_corr_proxy_living", self.mean_corr_proxy_living),
            ("mean_corr_prototype_living", self.mean_corr_prototype_living),
            ("ahd_k1", Some(self.ahd_k1)),
            ("ahd_k5", self.ahd_k5),
            ("hp_at_5", self.hp_at_5),
            ("hs_at_50", self.hs_at_50),
            ("hs_at_250", self.hs_at_250),
            ("ahs_at_250", self.ahs_at_250),
        ]
    }
}

/// Embeddings of `data` as used for retrieval and prototypes: unit vectors.
pub fn unit_embeddings(ck: &Checkpoint, data: &Dataset) -> Result<Array2<f64>> {
    let raw = ck.model.embed(data.features.view())?;
    normalize_rows(&raw.view()).ok_or_else(|| {
        let i = raw
            .rows()
            .into_iter()
            .position(|r| r.dot(&r).sqrt() < 1e-12)
            .unwrap_or(0);
        Error::ZeroEmbedding(i)
    })
}

/// Ranked `(class, confidence)` lists for every row of `inputs`.
pub fn predict_topk(ck: &Checkpoint, inputs: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if k > ck.class_labels.len() {
        return Err(Error::KTooLarge {
            k,
            available: ck.class_labels.len(),
        });
    }
    let raw = ck.model.embed(inputs)?;
    let scores = confidences(ck.head.kind, ck.scale(), raw.view(), ck.proxies.view(), ck.bias.as_deref())?;
    rank_classes(scores.view(), k)
}

/// Correlation of representative distances with `d_h`, optionally restricted to `classes`.
fn representative_correlation(reps: ArrayView2<f64>, labels: &[String], d_h: &ClassDistanceMatrix, classes: Option<&[usize]>) -> Result<f64> {
    let d_l = pairwise_representative_distances(reps, labels.to_vec());
    match classes {
        None => mean_correlation(&d_l, d_h),
        Some(sub) => mean_correlation(&d_l.subset(sub), &d_h.subset(sub)),
    }
}

/// Turns "metric undefined for this data" errors into `None`, noting why.
fn soften<T>(undefined: &mut Vec<String>, name: &str, r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(
            e @ (Error::KTooLarge { .. }
            | Error::ConstantRow(_)
            | Error::TooFewClasses { .. }
            | Error::AbsentClass(_)
            | Error::ZeroMean(_)
            | Error::MissingK(_)),
        ) => {
            undefined.push(format!("{name}: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Options for [`full_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportOptions<'a> {
    /// Class indices for the living-only correlation variants.
    pub living: Option<&'a [usize]>,
    pub threads: Option<usize>,
    pub split_name: &'a str,
}

/// Every measure for `ck` on `test`; prototypes come from `train`.
pub fn full_report(ck: &Checkpoint, test: &Dataset, train: &Dataset, tree: &HierarchyTree, opts: &ReportOptions) -> Result<MetricsReport> {
    crate::data::check_class_set(test, tree)?;
    crate::data::check_class_set(train, tree)?;
    if tree.class_labels() != ck.class_labels {
        return Err(Error::ClassSetMismatch("checkpoint classes differ from the hierarchy".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_classes = ck.class_labels.len();
    let mats = tree.distance_matrices(ck.config.beta)?;
    let mut undefined = Vec::new();

    let ranked: Vec<Vec<usize>> = predict_topk(ck, test.features.view(), n_classes)?
        .into_iter()
        .map(|r| r.into_iter().map(|(c, _)| c).collect())
        .collect();
    let labels = &test.labels;
    let d_h = mats.d_h.values.view();
    let mut optional = |name: &str, r| soften(&mut undefined, name, r);

    let top1 = topk_accuracy(&ranked, labels, 1)?;
    let top5 = optional("top5", topk_accuracy(&ranked, labels, 5))?;
    let ahd_k1 = ahd(&ranked, labels, d_h, 1)?;
    let ahd_k5 = optional("ahd_k5", ahd(&ranked, labels, d_h, 5))?;
    let hp_at_5 = optional("hp_at_5", hp_at_k(&ranked, labels, d_h, 5))?;

    // proxies on the sphere (post-hoc normalized for the plain softmax weights)
    let unit_proxies = normalize_rows(&ck.proxies.view()).ok_or_else(|| Error::ZeroVector("proxy".into()))?;
    let living = opts.living;
    let proxy_corr = |sub| representative_correlation(unit_proxies.view(), &ck.class_labels, &mats.d_h, sub);
    let mean_corr_proxy = optional("mean_corr_proxy", proxy_corr(None))?;
    let mean_corr_proxy_living = match living {
        Some(l) => optional("mean_corr_proxy_living", proxy_corr(Some(l)))?,
        None => None,
    };

    let train_unit = unit_embeddings(ck, train)?;
    let protos = compute_prototypes(train_unit.view(), &train.labels, ck.class_labels.clone());
    let (mean_corr_prototype, mean_corr_prototype_living) = match protos {
        Ok(p) => {
            let proto_corr = |sub| -> Result<f64> {
                if let Some(&c) = p.absent().first() {
                    return Err(Error::AbsentClass(c));
                }
                representative_correlation(p.matrix().view(), &ck.class_labels, &mats.d_h, sub)
            };
            let all = optional("mean_corr_prototype", proto_corr(None))?;
            let liv = match living {
                Some(l) => optional("mean_corr_prototype_living", proto_corr(Some(l)))?,
                None => None,
            };
            (all, liv)
        }
        Err(e) => (optional("mean_corr_prototype", Err(e))?, None),
    };

    let test_unit = unit_embeddings(ck, test)?;
    let s_h = mats.s_h.values.view();
    let hs = |k| retrieval_hs_means(test_unit.view(), labels, s_h, k, opts.threads);
    let hs_250 = soften(&mut undefined, "hs_at_250", hs(250))?;
    let (hs_at_50, hs_at_250, ahs_at_250) = match hs_250 {
        Some(curve) => (Some(curve[49]), Some(curve[249]), Some(ahs_at_k(&curve, 250)?)),
        None => {
            let hs_at_50 = soften(&mut undefined, "hs_at_50", hs(50).map(|c| c[49]))?;
            undefined.push("ahs_at_250: needs HS@k up to k=250".into());
            (hs_at_50, None, None)
        }
    };

    Ok(MetricsReport {
        top1,
        top5,
        mean_corr_proxy,
        mean_corr_prototype,
        mean_corr_proxy_living,
        mean_corr_prototype_living,
        ahd_k1,
        ahd_k5,
        hp_at_5,
        hs_at_50,
        hs_at_250,
        ahs_at_250,
        metadata: ReportMetadata {
            seed: ck.config.seed,
            config_hash: ck.config.config_hash(),
            class_count: n_classes,
            head: ck.head.kind.to_string(),
            options: ck.config.options.to_string(),
            num_samples: test.len(),
            split: opts.split_name.to_string(),
            correlation_diagonal_excluded: true,
            retrieval_excludes_query: true,
            proxies_normalized_post_hoc: ck.head.kind == HeadKind::PlainSoftmax,
            living_class_count: living.map(<[usize]>::len),
            undefined,
        },
    })
}
