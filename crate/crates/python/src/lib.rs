//! Python bindings: tree distances, head probabilities, MDS proxies and correlation metrics.

use hierlearn::heads::{normface_probs, proxydr_probs, sd_softmax_probs};
use hierlearn::hierarchy::{hierarchical_similarity, transformed_distance};
use hierlearn::metrics::{mean_correlation_values, spearman as spearman_core};
use hierlearn::proxy::{mds_place, DEFAULT_MDS_ITERS, DEFAULT_MDS_LR};
use hierlearn::scale::solve_static_scale;
use hierlearn::{HeadKind, HierarchyTree};
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: hierlearn::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_tree(csv: &str) -> PyResult<HierarchyTree> {
    HierarchyTree::parse_str(csv).map_err(err)
}

/// Leaf class ids of an `id,parent` CSV hierarchy, in matrix order.
#[pyfunction]
pub fn class_labels(hierarchy_csv: &str) -> PyResult<Vec<String>> {
    Ok(parse_tree(hierarchy_csv)?.class_labels())
}

/// Edge count between two classes through their lowest common ancestor.
#[pyfunction]
pub fn hierarchical_distance(hierarchy_csv: &str, a: &str, b: &str) -> PyResult<u32> {
    parse_tree(hierarchy_csv)?.hierarchical_distance(a, b).map_err(err)
}

/// `(labels, d_h, d_t, s_h)` for every pair of leaf classes.
#[pyfunction]
#[pyo3(signature = (hierarchy_csv, beta=1.0))]
#[allow(clippy::type_complexity)]
pub fn distance_matrices(
    hierarchy_csv: &str,
    beta: f64,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let m = parse_tree(hierarchy_csv)?.distance_matrices(beta).map_err(err)?;
    Ok((m.d_h.labels.clone(), to_rows(&m.d_h.values), to_rows(&m.d_t.values), to_rows(&m.s_h.values)))
}

#[pyfunction]
#[pyo3(signature = (d_h, beta=1.0))]
pub fn transformed(d_h: f64, beta: f64) -> PyResult<f64> {
    transformed_distance(d_h, beta).map_err(err)
}

#[pyfunction]
pub fn similarity(d_t: f64) -> PyResult<f64> {
    hierarchical_similarity(d_t).map_err(err)
}

/// Class probabilities of one embedding against a proxy matrix.
#[pyfunction]
pub fn probabilities(head: &str, embed: Vec<f64>, proxies: Vec<Vec<f64>>, scale: f64) -> PyResult<Vec<f64>> {
    let p = to_array(proxies)?;
    let kind: HeadKind = head.parse().map_err(err)?;
    let out = match kind {
        HeadKind::NormFace => normface_probs(&embed, p.view(), scale),
        HeadKind::ProxyDr => proxydr_probs(&embed, p.view(), scale),
        HeadKind::SdSoftmaxEuclidean => sd_softmax_probs(&embed, p.view(), scale),
        other => {
            return Err(PyValueError::new_err(format!(
                "head `{}` has no proxy-only probability rule",
                other.as_str()
            )))
        }
    };
    Ok(out.map_err(err)?.probs)
}

/// Root of the expected-confidence condition for a head and class count: `(s, converged)`.
#[pyfunction]
pub fn static_scale(head: &str, num_classes: usize) -> PyResult<(f64, bool)> {
    let kind: HeadKind = head.parse().map_err(err)?;
    let r = solve_static_scale(kind, num_classes).map_err(err)?;
    Ok((r.s, r.converged))
}

/// Unit-sphere proxies placed from the hierarchy: `(proxies, final_stress)`.
#[pyfunction]
#[pyo3(signature = (hierarchy_csv, dim, beta=1.0, seed=0, lr=DEFAULT_MDS_LR, iters=DEFAULT_MDS_ITERS))]
pub fn mds(hierarchy_csv: &str, dim: usize, beta: f64, seed: u64, lr: f64, iters: usize) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let m = parse_tree(hierarchy_csv)?.distance_matrices(beta).map_err(err)?;
    let placed = mds_place(&m.d_t, dim, lr, iters, seed).map_err(err)?;
    let stress = placed.stress_trace.last().copied().unwrap_or(f64::NAN);
    Ok((to_rows(placed.proxies.matrix()), stress))
}

/// Rank correlation with average ranks for ties; `None` when either side is constant.
#[pyfunction]
pub fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<Option<f64>> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("sequences differ in length"));
    }
    Ok(spearman_core(&a, &b))
}

/// Fisher-pooled row-wise rank correlation between two class distance matrices.
#[pyfunction]
pub fn mean_correlation(d_l: Vec<Vec<f64>>, d_h: Vec<Vec<f64>>) -> PyResult<f64> {
    let (l, h) = (to_array(d_l)?, to_array(d_h)?);
    mean_correlation_values(l.view(), h.view()).map_err(err)
}

#[pymodule]
fn hierlearn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(class_labels, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchical_distance, m)?)?;
    m.add_function(wrap_pyfunction!(distance_matrices, m)?)?;
    m.add_function(wrap_pyfunction!(transformed, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(static_scale, m)?)?;
    m.add_function(wrap_pyfunction!(mds, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(mean_correlation, m)?)?;
    Ok(())
}
