//! Static and dynamic choice of the scale factor `s`.
//!
//! The scale is chosen so that the curvature of the true-class confidence
//! `p(c|x)` w.r.t. its angle vanishes: `s` is driven to a root of the
//! curvature factor `ψ(s, θ_c)` by running Adam on `ψ²`.
//!
//! * NormFace: `ψ = cos θ (e^{s cos θ} + B) + s sin²θ (e^{s cos θ} − B)` with
//!   `B = Σ_{y≠c} e^{s cos θ_y}`.
//! * ProxyDR: `ψ = B (s+1) θ^s − s + 1` with `B = Σ_{y≠c} θ_y^{−s}` (the angle
//!   stands in for the distance here).
//!
//! The static estimate uses `B = |𝒴| − 1` (NormFace) or `(|𝒴| − 1)(π/2)^{−s}`
//! (ProxyDR) at `θ = π/4`. During training the batch mean of `B` and the batch
//! median of `θ_c`, clipped to `[0, π/4]`, replace them.
//!
//! For NormFace with few classes `ψ` has no positive root at `θ = π/4`
//! (for example `min ψ ≈ 3.8` when `|𝒴| = 10`); the static solver then reports
//! [`Error::NoConvergence`] carrying the minimizer of `ψ²`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::optim::AdamState;

/// Adam steps on `s` per mini-batch in the dynamic option.
pub const DYNAMIC_STEPS: usize = 5;
/// Adam learning rate on `s` in the dynamic option.
pub const DYNAMIC_LR: f64 = 1e-2;
/// Lower clamp on `s`.
pub const MIN_SCALE: f64 = 1e-3;
/// Upper end of the clip range for the batch-median angle.
pub const THETA_CLIP_MAX: f64 = FRAC_PI_4;

const STATIC_LR: f64 = 0.1;
const STATIC_MAX_ITERS: usize = 200_000;
const ROOT_TOL: f64 = 1e-10;

/// NormFace curvature factor `ψ(s, θ_c)` for a fixed `B_x`.
pub fn psi_normface(s: f64, theta: f64, bx: f64) -> f64 {
    let (c, sn) = (theta.cos(), theta.sin());
    let s2 = sn * sn;
    let a = s * c;
    if a > 700.0 {
        // e^a dominates; evaluate its coefficient in log space and saturate
        let lead = c + s * s2;
        let big = (a + lead.ln()).exp().min(f64::MAX);
        return big + bx * (c - s * s2);
    }
    let e = a.exp();
    c * (e + bx) + s * s2 * (e - bx)
}

/// `∂ψ_NormFace/∂s` with `B_x` held fixed.
pub fn psi_normface_ds(s: f64, theta: f64, bx: f64) -> f64 {
    let (c, sn) = (theta.cos(), theta.sin());
    let s2 = sn * sn;
    let e = (s * c).min(700.0).exp();
    c * c * e + s2 * (e - bx) + s * s2 * c * e
}

fn check_dr_domain(s: f64, theta: f64) -> Result<()> {
    if theta < 0.0 || (theta == 0.0 && s.fract() != 0.0) {
        return Err(Error::DomainError(format!("theta_c = {theta} with s = {s}")));
    }
    Ok(())
}

/// ProxyDR curvature factor `ψ(s, θ_c) = B (s+1) θ^s − s + 1` for a fixed `B_x`.
pub fn psi_proxydr(s: f64, theta: f64, bx: f64) -> Result<f64> {
    check_dr_domain(s, theta)?;
    Ok(bx * (s + 1.0) * theta.powf(s) - s + 1.0)
}

/// `∂ψ_ProxyDR/∂s` with `B_x` held fixed.
pub fn psi_proxydr_ds(s: f64, theta: f64, bx: f64) -> Result<f64> {
    check_dr_domain(s, theta)?;
    let ts = theta.powf(s);
    let log_term = if theta > 0.0 { (s + 1.0) * theta.ln() } else { 0.0 };
    Ok(bx * ts * (1.0 + log_term) - 1.0)
}

/// Static `B_x` estimate (angles to the other proxies taken as `π/2`).
pub fn static_bx(kind: HeadKind, num_classes: usize, s: f64) -> f64 {
    let others = num_classes.saturating_sub(1) as f64;
    match kind {
        HeadKind::ProxyDr => others * FRAC_PI_2.powf(-s),
        _ => others,
    }
}

/// `ψ` and `∂ψ/∂s` of the static problem at `θ = π/4`.
///
/// For ProxyDR the static `B_x` depends on `s`, and the derivative includes that.
pub fn static_psi(kind: HeadKind, num_classes: usize, s: f64) -> Result<(f64, f64)> {
    let others = num_classes.saturating_sub(1) as f64;
    match kind {
        HeadKind::NormFace => Ok((
            psi_normface(s, FRAC_PI_4, others),
            psi_normface_ds(s, FRAC_PI_4, others),
        )),
        HeadKind::ProxyDr => {
            // (n−1)(s+1) r^s − s + 1 with r = θ/(π/2)
            let r: f64 = FRAC_PI_4 / FRAC_PI_2;
            let bx = static_bx(kind, num_classes, s);
            let psi = psi_proxydr(s, FRAC_PI_4, bx)?;
            let d = others * r.powf(s) * (1.0 + (s + 1.0) * r.ln()) - 1.0;
            Ok((psi, d))
        }
        other => Err(Error::ConfigConflict(format!("no scale solver for {other}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSolution {
    pub s: f64,
    pub psi: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Adam on `ψ²(s)` from `s0`, halving the step size whenever `ψ` changes sign.
///
/// Returns the iterate with the smallest `|ψ|` seen.
pub fn adam_root<F>(psi: F, s0: f64, lr: f64, max_iters: usize, tol: f64) -> Result<RootSolution>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    let mut adam = AdamState::new(lr, 1);
    let mut s = [s0.max(MIN_SCALE)];
    let (mut value, mut slope) = psi(s[0])?;
    let mut best = RootSolution {
        s: s[0],
        psi: value,
        iterations: 0,
        converged: value.abs() <= tol,
    };
    for it in 1..=max_iters {
        if best.converged {
            break;
        }
        let grad = 2.0 * value * slope;
        if !grad.is_finite() {
            break;
        }
        adam.step(&mut s, &[grad])?;
        s[0] = s[0].max(MIN_SCALE);
        let (v, d) = psi(s[0])?;
        if v.signum() != value.signum() {
            adam.lr *= 0.5;
        }
        value = v;
        slope = d;
        if value.abs() < best.psi.abs() {
            best = RootSolution {
                s: s[0],
                psi: value,
                iterations: it,
                converged: value.abs() <= tol,
            };
        }
        if adam.lr < 1e-18 {
            break;
        }
    }
    Ok(best)
}

/// Initial `s` from the static `B_x` estimate and `θ_c = π/4`.
///
/// The NormFace search starts at the closed-form approximation `ln B / cos θ`
/// so it lands on the upper root (the one the closed form approximates);
/// ProxyDR starts at `s = 1`, where `ψ > 0`.
pub fn init_static_scale(kind: HeadKind, num_classes: usize) -> Result<f64> {
    let sol = solve_static_scale(kind, num_classes)?;
    if sol.converged {
        Ok(sol.s)
    } else {
        Err(Error::NoConvergence { s: sol.s, psi: sol.psi })
    }
}

/// Like [`init_static_scale`] but returns the full solver outcome.
pub fn solve_static_scale(kind: HeadKind, num_classes: usize) -> Result<RootSolution> {
    if num_classes < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            got: num_classes,
        });
    }
    let s0 = match kind {
        HeadKind::NormFace => {
            let b = static_bx(kind, num_classes, 1.0);
            (b.ln() / FRAC_PI_4.cos()).max(1.0)
        }
        HeadKind::ProxyDr => 1.0,
        other => return Err(Error::ConfigConflict(format!("no scale solver for {other}"))),
    };
    adam_root(|s| static_psi(kind, num_classes, s), s0, STATIC_LR, STATIC_MAX_ITERS, ROOT_TOL)
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-sample true-class angle `θ_c` and `B_x` for a batch of unit embeddings.
pub fn batch_statistics(
    kind: HeadKind,
    s: f64,
    unit_embeds: ndarray::ArrayView2<f64>,
    unit_proxies: ndarray::ArrayView2<f64>,
    labels: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let mut thetas = Vec::with_capacity(labels.len());
    let mut bxs = Vec::with_capacity(labels.len());
    for (i, &c) in labels.iter().enumerate() {
        let f = unit_embeds.row(i);
        let mut bx = 0.0;
        for (y, w) in unit_proxies.rows().into_iter().enumerate() {
            let cos = w.dot(&f).clamp(-1.0, 1.0);
            if y == c {
                thetas.push(cos.acos());
                continue;
            }
            bx += match kind {
                HeadKind::ProxyDr => cos.acos().max(1e-12).powf(-s),
                _ => (s * cos).exp(),
            };
        }
        bxs.push(bx);
    }
    (thetas, bxs)
}

/// Scale factor adapted once per mini-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleState {
    pub s: f64,
    pub kind: HeadKind,
    pub num_classes: usize,
    solver: AdamState,
}

impl ScaleState {
    pub fn new(kind: HeadKind, num_classes: usize, s: f64) -> Result<Self> {
        if !matches!(kind, HeadKind::NormFace | HeadKind::ProxyDr) {
            return Err(Error::ConfigConflict(format!("dynamic scale is not defined for {kind}")));
        }
        if !(s > 0.0) {
            return Err(Error::OutOfRange { value: s, range: "s > 0" });
        }
        Ok(Self {
            s,
            kind,
            num_classes,
            solver: AdamState::new(DYNAMIC_LR, 1),
        })
    }

    /// Starts from the static estimate, or from `fallback` when it has no root.
    pub fn from_static(kind: HeadKind, num_classes: usize, fallback: f64) -> Result<Self> {
        let s = match init_static_scale(kind, num_classes) {
            Ok(s) => s,
            Err(Error::NoConvergence { s, psi }) => {
                log::warn!("static scale for {kind} with {num_classes} classes has no root (psi={psi:.3e} at s={s:.4}); starting at {fallback}");
                fallback
            }
            Err(e) => return Err(e),
        };
        Self::new(kind, num_classes, s)
    }

    pub fn steps_taken(&self) -> u64 {
        self.solver.t
    }

    /// Batch reduction: mean `B_x` and median `θ_c` clipped to `[0, π/4]`.
    pub fn reduce(thetas: &[f64], bxs: &[f64]) -> Result<(f64, f64)> {
        if thetas.is_empty() || bxs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let b_avg = bxs.iter().sum::<f64>() / bxs.len() as f64;
        let theta_med = median(thetas).expect("non-empty").clamp(0.0, THETA_CLIP_MAX);
        Ok((b_avg, theta_med))
    }

    fn psi_and_slope(&self, s: f64, theta: f64, bx: f64) -> Result<(f64, f64)> {
        match self.kind {
            HeadKind::NormFace => Ok((psi_normface(s, theta, bx), psi_normface_ds(s, theta, bx))),
            _ => {
                // the θ_c = 0 limit is handled by a tiny positive angle
                let theta = theta.max(1e-12);
                Ok((psi_proxydr(s, theta, bx)?, psi_proxydr_ds(s, theta, bx)?))
            }
        }
    }

    /// [`DYNAMIC_STEPS`] Adam steps on `ψ²` for the batch statistics.
    ///
    /// Steps whose objective is not finite are skipped, so `s` always stays
    /// finite and at least [`MIN_SCALE`].
    pub fn update(&mut self, thetas: &[f64], bxs: &[f64]) -> Result<()> {
        let (b_avg, theta_med) = Self::reduce(thetas, bxs)?;
        self.update_with(theta_med, b_avg, DYNAMIC_STEPS)
    }

    /// Adam steps on `ψ²(s, θ, B)` for already-reduced statistics.
    pub fn update_with(&mut self, theta: f64, bx: f64, steps: usize) -> Result<()> {
        if !bx.is_finite() || !theta.is_finite() {
            return Ok(());
        }
        for _ in 0..steps {
            let (psi, slope) = self.psi_and_slope(self.s, theta, bx)?;
            let grad = 2.0 * psi * slope;
            if !grad.is_finite() {
                continue;
            }
            let mut s = [self.s];
            self.solver.step(&mut s, &[grad])?;
            if s[0].is_finite() {
                self.s = s[0].max(MIN_SCALE);
            }
        }
        Ok(())
    }
}
