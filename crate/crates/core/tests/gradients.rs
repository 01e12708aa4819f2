mod support;

use hierlearn::heads::{head_loss_and_grad, HeadKind};
use hierlearn::model::{Architecture, EmbedderModel};
use hierlearn::optim::finite_diff_check;
use hierlearn::vecops::{dot, normalization_backward};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use support::*;

#[test]
fn plain_softmax_pipeline() {
    let err = check_head(HeadKind::PlainSoftmax, true, 1, 20);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn normface_pipeline() {
    let err = check_head(HeadKind::NormFace, false, 2, 20);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn proxydr_pipeline() {
    let err = check_head(HeadKind::ProxyDr, false, 3, 20);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn corr_pipeline() {
    let err = check_head(HeadKind::Corr, false, 4, 20);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn sd_euclidean_pipeline() {
    let err = check_head(HeadKind::SdSoftmaxEuclidean, false, 5, 20);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn scale_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for kind in [HeadKind::NormFace, HeadKind::ProxyDr, HeadKind::SdSoftmaxEuclidean] {
        for _ in 0..10 {
            let (prob, point) = Problem::random(&mut rng, Architecture::Linear, false);
            let (m, w, _) = prob.unpack(&point);
            let raw = m.embed(prob.x.view()).unwrap();
            let f = |s: &[f64]| head_loss_and_grad(kind, s[0], raw.view(), &prob.labels, w.view(), None).unwrap().loss;
            let g = |s: &[f64]| vec![head_loss_and_grad(kind, s[0], raw.view(), &prob.labels, w.view(), None).unwrap().scale];
            let err = finite_diff_check(f, g, &[rng.random_range(1.0..10.0)], 1e-6).unwrap();
            assert!(err < 1e-5, "{kind}: {err}");
        }
    }
}

#[test]
fn normalization_gradient_is_tangent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let d = rng.random_range(2..10);
        let raw: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
        let up: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let back = normalization_backward(&raw, &up);
        assert!(dot(&raw, &back).abs() < 1e-10);
    }
}

#[test]
fn mlp_unit_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = EmbedderModel::init(Architecture::Mlp { hidden: 16 }, 7, 5, &mut rng).unwrap();
    let x = Array2::from_shape_fn((1000, 7), |_| rng.sample::<f64, _>(StandardNormal));
    let c = m.forward(x.view()).unwrap();
    for r in c.unit.rows() {
        assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-12);
    }
}
