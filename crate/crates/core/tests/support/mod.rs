//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use hierlearn::heads::{head_loss_and_grad, HeadKind};
use hierlearn::hierarchy::HierarchyTree;
use hierlearn::metrics::rank_classes;
use hierlearn::model::{Architecture, EmbedderModel};
use hierlearn::optim::finite_diff_check;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random tree over `k` leaf classes by recursive random partitioning; leaf depths vary.
pub fn random_tree(rng: &mut ChaCha8Rng, k: usize) -> HierarchyTree {
    fn grow(rng: &mut ChaCha8Rng, members: Vec<usize>, parent: String, edges: &mut Vec<(String, Option<String>)>, next: &mut usize) {
        if members.len() == 1 {
            edges.push((format!("c{:02}", members[0]), Some(parent)));
            return;
        }
        let groups = rng.random_range(2..=members.len().min(3));
        let mut parts = vec![Vec::new(); groups];
        for (i, &m) in members.iter().enumerate() {
            // first `groups` members seed the parts so none is empty
            let g = if i < groups { i } else { rng.random_range(0..groups) };
            parts[g].push(m);
        }
        for part in parts {
            if part.len() == 1 && rng.random_bool(0.5) {
                grow(rng, part, parent.clone(), edges, next);
            } else {
                let id = format!("n{}", *next);
                *next += 1;
                edges.push((id.clone(), Some(parent.clone())));
                grow(rng, part, id, edges, next);
            }
        }
    }
    let mut edges = vec![("root".to_string(), None)];
    let mut next = 0;
    grow(rng, (0..k).collect(), "root".into(), &mut edges, &mut next);
    HierarchyTree::from_edges(&edges).unwrap()
}

pub struct Instance {
    pub d_h: Array2<f64>,
    pub s_h: Array2<f64>,
    pub scores: Array2<f64>,
    pub labels: Vec<usize>,
    pub embeds: Array2<f64>,
}

pub fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(3..=12);
    let n = rng.random_range(k.max(12)..=100);
    let tree = random_tree(rng, k);
    let m = tree.distance_matrices(1.0).unwrap();
    // coarse values so ties occur
    let scores = Array2::from_shape_fn((n, k), |_| (rng.random_range(0.0..1.0f64) * 8.0).round() / 8.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let embeds = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2i32..=2) as f64);
    Instance {
        d_h: m.d_h.values,
        s_h: m.s_h.values,
        scores,
        labels,
        embeds,
    }
}

pub fn ranked(inst: &Instance, k: usize) -> Vec<Vec<usize>> {
    rank_classes(inst.scores.view(), k)
        .unwrap()
        .into_iter()
        .map(|r| r.into_iter().map(|(c, _)| c).collect())
        .collect()
}

// Position of class `y` in the descending order of `row`, ties by smaller index first.
pub fn position(row: &[f64], y: usize) -> usize {
    (0..row.len())
        .filter(|&z| row[z] > row[y] || (row[z] == row[y] && z < y))
        .count()
}

pub fn oracle_topk(inst: &Instance, k: usize) -> f64 {
    let hits = inst
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &c)| position(&inst.scores.row(i).to_vec(), c) < k)
        .count();
    hits as f64 / inst.labels.len() as f64
}

pub fn oracle_topk_set(row: &[f64], k: usize) -> Vec<usize> {
    (0..row.len()).filter(|&y| position(row, y) < k).collect()
}

pub fn oracle_ahd(inst: &Instance, k: usize) -> f64 {
    let mut total = 0.0;
    for (i, &c) in inst.labels.iter().enumerate() {
        let set = oracle_topk_set(&inst.scores.row(i).to_vec(), k);
        total += set.iter().map(|&y| inst.d_h[[c, y]]).sum::<f64>() / k as f64;
    }
    total / inst.labels.len() as f64
}

pub fn oracle_hp(inst: &Instance, k: usize) -> f64 {
    let mut total = 0.0;
    for (i, &c) in inst.labels.iter().enumerate() {
        // the neighbourhood radius is the k-th smallest distance from the label
        let mut row = inst.d_h.row(c).to_vec();
        row.sort_by(f64::total_cmp);
        let radius = row[k - 1];
        let set = oracle_topk_set(&inst.scores.row(i).to_vec(), k);
        let inside = set.iter().filter(|&&y| inst.d_h[[c, y]] <= radius).count();
        total += inside as f64 / k as f64;
    }
    total / inst.labels.len() as f64
}

/// Retrieved classes for `q` by repeated selection of the nearest remaining item.
pub fn oracle_retrieved(inst: &Instance, q: usize) -> Vec<usize> {
    let n = inst.embeds.nrows();
    let dist: Vec<f64> = (0..n)
        .map(|j| {
            (0..inst.embeds.ncols())
                .map(|t| (inst.embeds[[j, t]] - inst.embeds[[q, t]]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut left: Vec<usize> = (0..n).filter(|&j| j != q).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for p in 1..left.len() {
            if dist[left[p]] < dist[left[best]] {
                best = p;
            }
        }
        out.push(inst.labels[left.remove(best)]);
    }
    out
}

pub fn oracle_hs(inst: &Instance, q: usize, retrieved: &[usize], k: usize) -> f64 {
    let c = inst.labels[q];
    let num: f64 = retrieved[..k].iter().map(|&y| inst.s_h[[c, y]]).sum();
    let mut pool: Vec<f64> = retrieved.iter().map(|&y| inst.s_h[[c, y]]).collect();
    let mut den = 0.0;
    for _ in 0..k {
        let (arg, &v) = pool
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        den += v;
        pool.remove(arg);
    }
    num / den
}

/// Spearman from first principles: doubled average ranks are integers, so the
/// Pearson sums are exact and only the final division rounds.
pub fn oracle_spearman(a: &[f64], b: &[f64]) -> f64 {
    let doubled_rank = |v: &[f64]| -> Vec<i128> {
        v.iter()
            .map(|&x| {
                let below = v.iter().filter(|&&y| y < x).count() as i128;
                let equal = v.iter().filter(|&&y| y == x).count() as i128;
                2 * below + equal + 1
            })
            .collect()
    };
    let (ra, rb) = (doubled_rank(a), doubled_rank(b));
    let n = a.len() as i128;
    let (sa, sb): (i128, i128) = (ra.iter().sum(), rb.iter().sum());
    let sab: i128 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
    let saa: i128 = ra.iter().map(|x| x * x).sum();
    let sbb: i128 = rb.iter().map(|x| x * x).sum();
    let num = (n * sab - sa * sb) as f64;
    num / (((n * saa - sa * sa) as f64) * ((n * sbb - sb * sb) as f64)).sqrt()
}

pub fn oracle_mean_corr(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut z = 0.0;
    for i in 0..n {
        let ra: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| a[[i, j]]).collect();
        let rb: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| b[[i, j]]).collect();
        let r = oracle_spearman(&ra, &rb).clamp(-(1.0 - 1e-7), 1.0 - 1e-7);
        z += r.atanh();
    }
    (z / n as f64).tanh()
}

pub struct Problem {
    pub model: EmbedderModel,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub bias: bool,
}

impl Problem {
    pub fn random(rng: &mut ChaCha8Rng, arch: Architecture, bias: bool) -> (Self, Vec<f64>) {
        let (d_in, d_out) = (rng.random_range(2..6), rng.random_range(2..5));
        let classes = rng.random_range(2..6);
        let batch = rng.random_range(1..5);
        let model = EmbedderModel::init(arch, d_in, d_out, rng).unwrap();
        let x = Array2::from_shape_fn((batch, d_in), |_| rng.sample::<f64, _>(StandardNormal));
        let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let mut point = model.params();
        point.extend((0..classes * d_out).map(|_| rng.sample::<f64, _>(StandardNormal)));
        if bias {
            point.extend((0..classes).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)));
        }
        (
            Self {
                model,
                x,
                labels,
                classes,
                bias,
            },
            point,
        )
    }

    pub fn unpack(&self, p: &[f64]) -> (EmbedderModel, Array2<f64>, Option<Vec<f64>>) {
        let n = self.model.num_params();
        let d = self.model.embed_dim();
        let mut m = self.model.clone();
        m.set_params(&p[..n]).unwrap();
        let w = Array2::from_shape_vec((self.classes, d), p[n..n + self.classes * d].to_vec()).unwrap();
        let b = self.bias.then(|| p[n + self.classes * d..].to_vec());
        (m, w, b)
    }

    pub fn loss(&self, kind: HeadKind, s: f64, p: &[f64]) -> f64 {
        let (m, w, b) = self.unpack(p);
        let raw = m.embed(self.x.view()).unwrap();
        head_loss_and_grad(kind, s, raw.view(), &self.labels, w.view(), b.as_deref())
            .unwrap()
            .loss
    }

    pub fn grad(&self, kind: HeadKind, s: f64, p: &[f64]) -> Vec<f64> {
        let (m, w, b) = self.unpack(p);
        let cache = m.forward(self.x.view()).unwrap();
        let g = head_loss_and_grad(kind, s, cache.raw.view(), &self.labels, w.view(), b.as_deref()).unwrap();
        let mut out = m.backward_raw(&cache, g.embeddings.view()).unwrap();
        out.extend(g.weights.iter());
        if let Some(gb) = g.bias {
            out.extend(gb);
        }
        out
    }
}

pub fn check_head(kind: HeadKind, bias: bool, seed: u64, points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..points {
        let arch = if i % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp { hidden: 5 }
        };
        let (prob, point) = Problem::random(&mut rng, arch, bias);
        let s = rng.random_range(1.0..12.0);
        let err = finite_diff_check(|p| prob.loss(kind, s, p), |p| prob.grad(kind, s, p), &point, 1e-6).unwrap();
        worst = worst.max(err);
    }
    worst
}

