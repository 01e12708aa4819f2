//! Mini-batch training of an embedder with one of the classification heads,
//! plus the EMA / dynamic-scale / MDS options, and best-validation selection.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{check_class_set, Dataset};
use crate::error::{Error, Result};
use crate::heads::{head_loss_and_grad, HeadConfig, HeadKind};
use crate::hierarchy::{ClassDistanceMatrix, HierarchyTree};
use crate::metrics::{mean_correlation, predict_topk, topk_accuracy};
use crate::model::{Architecture, Checkpoint, EmbedderModel, SplitInfo, CHECKPOINT_FORMAT};
use crate::optim::AdamState;
use crate::proxy::{compute_prototypes, mds_place, pairwise_representative_distances, ProxyPolicy, ProxySet};
use crate::scale::{batch_statistics, ScaleState};
use crate::vecops::normalize_rows;

/// Training options; parsed from an order-insensitive comma list such as `ema,dynamic`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub ema: bool,
    pub dynamic: bool,
    pub mds: bool,
}

impl FromStr for TrainOptions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut o = TrainOptions::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "standard" => {}
                "ema" => o.ema = true,
                "dynamic" => o.dynamic = true,
                "mds" => o.mds = true,
                other => return Err(Error::ConfigConflict(format!("unknown training option `{other}`"))),
            }
        }
        Ok(o)
    }
}

impl fmt::Display for TrainOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.ema {
            parts.push("ema");
        }
        if self.dynamic {
            parts.push("dynamic");
        }
        if self.mds {
            parts.push("mds");
        }
        if parts.is_empty() {
            f.write_str("standard")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub head: HeadKind,
    pub options: TrainOptions,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scale: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub architecture: Architecture,
    pub mds_lr: f64,
    pub mds_iters: usize,
}

impl TrainConfig {
    pub fn new(head: HeadKind, options: TrainOptions, embed_dim: usize, seed: u64) -> Self {
        Self {
            head,
            options,
            epochs: 30,
            batch_size: 32,
            lr: 1e-4,
            scale: 10.0,
            alpha: crate::proxy::DEFAULT_EMA_ALPHA,
            beta: crate::hierarchy::DEFAULT_BETA,
            seed,
            embed_dim,
            architecture: Architecture::Linear,
            mds_lr: crate::proxy::DEFAULT_MDS_LR,
            mds_iters: crate::proxy::DEFAULT_MDS_ITERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let conflict = |m: &str| Err(Error::ConfigConflict(m.to_string()));
        let o = self.options;
        let sphere = matches!(self.head, HeadKind::NormFace | HeadKind::ProxyDr | HeadKind::Corr);
        if self.head == HeadKind::Corr && !o.mds {
            return conflict("the corr head needs fixed proxies: add the `mds` option");
        }
        if o.ema && o.mds {
            return conflict("`ema` and `mds` are mutually exclusive: MDS proxies are never updated");
        }
        if o.dynamic && !matches!(self.head, HeadKind::NormFace | HeadKind::ProxyDr) {
            return conflict(&format!("`dynamic` scale applies to normface and proxydr, not {}", self.head));
        }
        if (o.ema || o.mds) && !sphere {
            return conflict(&format!("`ema`/`mds` need unit-norm proxies, which {} does not use", self.head));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.embed_dim == 0 {
            return conflict("epochs, batch size and embedding dimension must be positive");
        }
        if !(self.lr > 0.0) || !(self.scale > 0.0) || !(self.beta > 0.0) || !self.scale.is_finite() {
            return conflict("lr, scale and beta must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return conflict("alpha must lie in (0, 1)");
        }
        Ok(())
    }

    fn proxy_policy(&self) -> ProxyPolicy {
        if self.options.mds {
            ProxyPolicy::Fixed
        } else if self.options.ema {
            ProxyPolicy::Ema { alpha: self.alpha }
        } else {
            ProxyPolicy::Gradient
        }
    }

    /// Digest of every setting except the seed; runs that differ only in seed share it.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
    pub scale: f64,
    pub mean_corr_proxy: Option<f64>,
    pub mean_corr_prototype: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch with the best validation accuracy (earliest on ties).
    pub selected_epoch: usize,
}

impl TrainTrace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: TrainTrace,
    /// Proxies after the final epoch (the checkpoint holds the selected epoch's).
    pub final_proxies: Array2<f64>,
    /// Proxies as they were before the first update.
    pub initial_proxies: Array2<f64>,
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    model: EmbedderModel,
    weights: Array2<f64>,
    bias: Option<Vec<f64>>,
    ema: Option<ProxySet>,
    scale: Option<ScaleState>,
    model_opt: AdamState,
    weight_opt: Option<AdamState>,
    bias_opt: Option<AdamState>,
}

impl Run<'_> {
    fn s(&self) -> f64 {
        self.scale.as_ref().map_or(self.cfg.scale, |st| st.s)
    }

    fn proxies(&self) -> Array2<f64> {
        match &self.ema {
            Some(p) => p.matrix().clone(),
            None => self.weights.clone(),
        }
    }

    fn checkpoint(&self, labels: &[String], split: &SplitInfo, epoch: usize) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            model: self.model.clone(),
            head: HeadConfig {
                kind: self.cfg.head,
                scale: self.s(),
                embed_dim: self.cfg.embed_dim,
            },
            class_labels: labels.to_vec(),
            proxy_policy: self.cfg.proxy_policy(),
            proxies: self.proxies(),
            bias: self.bias.clone(),
            config: self.cfg.clone(),
            split: split.clone(),
            epoch,
        }
    }

    fn step(&mut self, x: Array2<f64>, labels: &[usize]) -> Result<f64> {
        let cache = self.model.forward(x.view())?;
        let s = self.s();
        let proxies = self.proxies();
        let g = head_loss_and_grad(self.cfg.head, s, cache.raw.view(), labels, proxies.view(), self.bias.as_deref())?;

        let grads = self.model.backward_raw(&cache, g.embeddings.view())?;
        let mut params = self.model.params();
        self.model_opt.step(&mut params, &grads)?;
        self.model.set_params(&params)?;
        if let Some(opt) = &mut self.weight_opt {
            let flat = self.weights.as_slice_mut().expect("standard layout");
            opt.step(flat, g.weights.as_slice().expect("standard layout"))?;
        }
        if let (Some(opt), Some(b), Some(gb)) = (&mut self.bias_opt, &mut self.bias, &g.bias) {
            opt.step(b, gb)?;
        }
        if let Some(p) = &mut self.ema {
            p.ema_update(cache.unit.view(), labels)?;
        }
        if let Some(st) = &mut self.scale {
            let unit_p = normalize_rows(&proxies.view()).ok_or_else(|| Error::ZeroVector("proxy".into()))?;
            let (thetas, bxs) = batch_statistics(self.cfg.head, s, cache.unit.view(), unit_p.view(), labels);
            st.update(&thetas, &bxs)?;
        }
        Ok(g.loss)
    }
}

fn representative_correlation(reps: &Array2<f64>, labels: &[String], d_h: &ClassDistanceMatrix) -> Option<f64> {
    let unit = normalize_rows(&reps.view())?;
    let d_l = pairwise_representative_distances(unit.view(), labels.to_vec());
    mean_correlation(&d_l, d_h).ok()
}

/// Trains on `train`, selects the epoch with the best top-1 accuracy on `val`.
pub fn train(cfg: &TrainConfig, train: &Dataset, val: &Dataset, tree: &HierarchyTree, split: SplitInfo) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::DataSchemaError("training and validation splits must be non-empty".into()));
    }
    for d in [train, val] {
        check_class_set(d, tree).map_err(|e| Error::DataSchemaError(e.to_string()))?;
    }
    if val.dim() != train.dim() {
        return Err(Error::DataSchemaError("train/validation feature dimensions differ".into()));
    }
    let labels = tree.class_labels();
    let k = labels.len();
    let d = cfg.embed_dim;
    let mats = tree.distance_matrices(cfg.beta)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = EmbedderModel::init(cfg.architecture, train.dim(), d, &mut rng)?;
    let mut bias = None;
    let mut ema = None;
    let weights = match cfg.head {
        HeadKind::PlainSoftmax | HeadKind::SdSoftmaxEuclidean => {
            let bound = 1.0 / (d as f64).sqrt();
            if cfg.head == HeadKind::PlainSoftmax {
                bias = Some(vec![0.0; k]);
            }
            Array2::from_shape_fn((k, d), |_| rng.random_range(-bound..=bound))
        }
        _ if cfg.options.mds => {
            let placed = mds_place(&mats.d_t, d, cfg.mds_lr, cfg.mds_iters, cfg.seed)?;
            placed.proxies.matrix().clone()
        }
        _ => {
            let p = ProxySet::random(labels.clone(), d, cfg.proxy_policy(), &mut rng)?;
            let m = p.matrix().clone();
            if cfg.options.ema {
                ema = Some(p);
            }
            m
        }
    };
    let trainable = cfg.proxy_policy() == ProxyPolicy::Gradient;
    let scale = if cfg.options.dynamic {
        Some(ScaleState::from_static(cfg.head, k, cfg.scale)?)
    } else {
        None
    };
    let mut run = Run {
        cfg,
        model_opt: AdamState::new(cfg.lr, model.num_params()),
        model,
        weight_opt: trainable.then(|| AdamState::new(cfg.lr, k * d)),
        bias_opt: bias.as_ref().map(|_| AdamState::new(cfg.lr, k)),
        weights,
        bias,
        ema,
        scale,
    };
    let initial_proxies = run.proxies();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train.features.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            loss_sum += run.step(x, &y)? * batch.len() as f64;
        }
        let ck = run.checkpoint(&labels, &split, epoch);
        let ranked: Vec<Vec<usize>> = predict_topk(&ck, val.features.view(), 1)?
            .into_iter()
            .map(|r| vec![r[0].0])
            .collect();
        let val_top1 = topk_accuracy(&ranked, &val.labels, 1)?;
        let mean_corr_proxy = representative_correlation(&ck.proxies, &labels, &mats.d_h);
        let mean_corr_prototype = crate::metrics::unit_embeddings(&ck, train)
            .and_then(|u| compute_prototypes(u.view(), &train.labels, labels.clone()))
            .ok()
            .filter(|p| p.absent().is_empty())
            .and_then(|p| representative_correlation(p.matrix(), &labels, &mats.d_h));
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_top1,
            scale: run.s(),
            mean_corr_proxy,
            mean_corr_prototype,
        };
        log::debug!("{}", serde_json::to_string(&rec).unwrap_or_default());
        records.push(rec);
        if best.as_ref().is_none_or(|(acc, _)| val_top1 > *acc) {
            best = Some((val_top1, ck));
        }
    }
    let (_, checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        trace: TrainTrace {
            selected_epoch: checkpoint.epoch,
            records,
        },
        final_proxies: run.proxies(),
        initial_proxies,
        checkpoint,
    })
}
