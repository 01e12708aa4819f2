//! Small dense-vector helpers shared by the heads, proxies and model.
//!
//! Every reduction runs in index order so results are bit-reproducible.

use ndarray::{Array2, ArrayView1, ArrayView2};

/// Tolerance used when checking that a vector lies on the unit sphere.
pub const UNIT_TOL: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Returns `v / |v|`, or `None` when the norm is below `1e-12`.
pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n < 1e-12 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

/// Chain rule through `u = v / |v|`: maps `dL/du` to `dL/dv = (I - u uᵀ) dL/du / |v|`.
pub fn normalization_backward(raw: &[f64], grad_unit: &[f64]) -> Vec<f64> {
    let n = norm(raw);
    let u: Vec<f64> = raw.iter().map(|x| x / n).collect();
    let proj = dot(&u, grad_unit);
    grad_unit
        .iter()
        .zip(&u)
        .map(|(g, ui)| (g - proj * ui) / n)
        .collect()
}

pub fn row(m: &ArrayView2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

pub fn is_unit(v: ArrayView1<f64>) -> bool {
    let n = v.dot(&v).sqrt();
    (n - 1.0).abs() <= UNIT_TOL
}

/// Normalizes every row of `m`, returning `None` if a row is (numerically) zero.
pub fn normalize_rows(m: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let mut out = m.to_owned();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n < 1e-12 || !n.is_finite() {
            return None;
        }
        r.mapv_inplace(|x| x / n);
    }
    Some(out)
}

/// Formats `x` rounded to `digits` significant digits, printed in shortest form.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_gradient_is_tangent() {
        let raw = [0.3, -1.2, 2.0];
        let g = [1.0, 0.5, -0.25];
        let back = normalization_backward(&raw, &g);
        assert!(dot(&back, &raw).abs() < 1e-14);
    }

    #[test]
    fn sig_digits() {
        assert_eq!(fmt_sig(1.131370849898476, 9), "1.13137085");
        assert_eq!(fmt_sig(6.0, 9), "6");
        assert_eq!(fmt_sig(0.0, 9), "0");
    }
}
