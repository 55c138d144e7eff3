//! Python bindings over the core library: Gaussian components and
//! mixtures, merge and reduction operations, transmitted-component
//! selection, the assignment solver, the tracking distance, Metropolis
//! weights and the three mixture-fusion rules.

// The `#[pyfunction]` expansion in this pyo3 release re-converts errors
// that are already `PyErr`.
#![allow(clippy::useless_conversion)]

use std::collections::BTreeMap;

use dgmphd::assignment::hungarian;
use dgmphd::filter::{estimate, SensorKind};
use dgmphd::fusion::{
    cardinality_consensus_step, cgma_step, cgmm_step, gci_fuse, metropolis_weights as metropolis,
    tuples_per_component, FusionWeights, TgmMessage,
};
use dgmphd::gaussian::{
    gate_threshold as gate_threshold_impl, gaussian_density as density_impl, mahalanobis_sq,
    omr_merge, reduce, select_tgm as select_impl, smr_merge, GaussianComponent, GaussianMixture,
    MergeScheme, ReductionConfig, TgmRule,
};
use dgmphd::metrics::{ospa as ospa_impl, OspaConfig};
use dgmphd::network::{NetworkGraph, NodeInfo};
use dgmphd::unscented::wrap_angle as wrap_angle_impl;
use nalgebra::{DMatrix, DVector, Vector2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_scheme(scheme: &str) -> PyResult<MergeScheme> {
    match scheme.to_ascii_lowercase().as_str() {
        "smr" => Ok(MergeScheme::Smr),
        "omr" => Ok(MergeScheme::Omr),
        other => Err(PyValueError::new_err(format!(
            "unknown merge scheme {other:?}; expected \"smr\" or \"omr\""
        ))),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows must all have the same length"));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn points_from_rows(rows: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    rows.into_iter().map(DVector::from_vec).collect()
}

fn weights_from_dict(host: usize, weights: BTreeMap<usize, f64>) -> PyResult<FusionWeights> {
    FusionWeights::new(host, weights).map_err(err)
}

fn messages_with_counts(received: Vec<(usize, Mixture, f64)>) -> Vec<TgmMessage> {
    received
        .into_iter()
        .map(|(origin, m, c)| TgmMessage {
            origin,
            components: m.inner,
            cardinality: Some(c),
            flood_table: None,
        })
        .collect()
}

/// One weighted Gaussian: a weight, a mean vector and a covariance matrix.
#[pyclass(frozen)]
#[derive(Clone)]
struct Component {
    inner: GaussianComponent,
}

#[pymethods]
impl Component {
    #[new]
    fn new(weight: f64, mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> PyResult<Self> {
        let cov = matrix_from_rows(&covariance)?;
        let inner = GaussianComponent::new(weight, DVector::from_vec(mean), cov).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn weight(&self) -> f64 {
        self.inner.weight()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().iter().copied().collect()
    }

    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        let cov = self.inner.covariance();
        (0..cov.nrows()).map(|r| cov.row(r).iter().copied().collect()).collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "Component(weight={:.6}, mean={:?})",
            self.inner.weight(),
            self.inner.mean().as_slice()
        )
    }
}

/// An ordered collection of components sharing one state dimension.
#[pyclass(frozen)]
#[derive(Clone)]
struct Mixture {
    inner: GaussianMixture,
}

#[pymethods]
impl Mixture {
    #[new]
    fn new(dim: usize, components: Vec<Component>) -> PyResult<Self> {
        let comps = components.into_iter().map(|c| c.inner).collect();
        Ok(Self { inner: GaussianMixture::new(dim, comps).map_err(err)? })
    }

    #[staticmethod]
    fn empty(dim: usize) -> Self {
        Self { inner: GaussianMixture::empty(dim) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn weight_sum(&self) -> f64 {
        self.inner.weight_sum()
    }

    fn components(&self) -> Vec<Component> {
        self.inner.components().iter().map(|c| Component { inner: c.clone() }).collect()
    }

    /// Returns a copy with every weight multiplied by `factor`.
    fn scaled(&self, factor: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.scaled_weights(factor).map_err(err)? })
    }

    /// Extracts `(expected_count, rounded_count, states)` the way the
    /// tracker reports estimates: means of components heavier than 0.5,
    /// repeated by rounded weight when heavier than 1.5.
    fn extract(&self) -> (f64, usize, Vec<Vec<f64>>) {
        let e = estimate(&self.inner);
        let states = e.states.iter().map(|s| s.iter().copied().collect()).collect();
        (e.cardinality, e.rounded, states)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mixture(dim={}, len={}, weight_sum={:.6})",
            self.inner.dim(),
            self.inner.len(),
            self.inner.weight_sum()
        )
    }
}

/// Moment-preserving merge of a component group.
#[pyfunction]
#[pyo3(name = "smr_merge")]
fn smr_merge_py(components: Vec<Component>) -> PyResult<Component> {
    let group: Vec<GaussianComponent> = components.into_iter().map(|c| c.inner).collect();
    Ok(Component { inner: smr_merge(&group).map_err(err)? })
}

/// Merge keeping the spread-adjusted covariance of minimum trace.
#[pyfunction]
#[pyo3(name = "omr_merge")]
fn omr_merge_py(components: Vec<Component>) -> PyResult<Component> {
    let group: Vec<GaussianComponent> = components.into_iter().map(|c| c.inner).collect();
    Ok(Component { inner: omr_merge(&group).map_err(err)? })
}

/// Squared Mahalanobis distance from `b`'s mean to `a`, under `a`'s
/// covariance.
#[pyfunction]
#[pyo3(name = "mahalanobis_sq")]
fn mahalanobis_sq_py(a: Component, b: Component) -> PyResult<f64> {
    mahalanobis_sq(&a.inner, &b.inner).map_err(err)
}

/// Gaussian density at `x`.
#[pyfunction]
fn gaussian_density(x: Vec<f64>, mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> PyResult<f64> {
    let cov = matrix_from_rows(&covariance)?;
    density_impl(&DVector::from_vec(x), &DVector::from_vec(mean), &cov).map_err(err)
}

/// Gate size in standard-deviation units whose square covers `coverage`
/// of a `dim`-degree chi-square distribution.
#[pyfunction]
fn gate_threshold(coverage: f64, dim: usize) -> PyResult<f64> {
    gate_threshold_impl(coverage, dim).map_err(err)
}

/// Prune light components, merge near ones, cap the count.
#[pyfunction]
#[pyo3(signature = (mixture, prune_threshold, merge_gate, max_components, scheme = "smr"))]
fn reduce_mixture(
    mixture: Mixture,
    prune_threshold: f64,
    merge_gate: f64,
    max_components: usize,
    scheme: &str,
) -> PyResult<Mixture> {
    let cfg = ReductionConfig::new(prune_threshold, merge_gate, max_components).map_err(err)?;
    Ok(Mixture { inner: reduce(&mixture.inner, &cfg, parse_scheme(scheme)?).map_err(err)? })
}

/// Splits a mixture into the transmitted part and the remainder.
///
/// With `min_weight` set, keeps components strictly heavier than it;
/// otherwise keeps the heaviest components, as many as `fixed` or, when
/// omitted, the rounded weight sum. Returns `(selected, remainder,
/// selected_indices)`.
#[pyfunction]
#[pyo3(signature = (mixture, fixed = None, min_weight = None))]
fn select_tgm(
    mixture: Mixture,
    fixed: Option<usize>,
    min_weight: Option<f64>,
) -> PyResult<(Mixture, Mixture, Vec<usize>)> {
    let rule = match (fixed, min_weight) {
        (Some(_), Some(_)) => {
            return Err(PyValueError::new_err("pass either fixed or min_weight, not both"))
        }
        (_, Some(w)) => TgmRule::Threshold { min_weight: w },
        (f, None) => TgmRule::Rank { fixed: f },
    };
    let sel = select_impl(&mixture.inner, &rule).map_err(err)?;
    Ok((Mixture { inner: sel.selected }, Mixture { inner: sel.remainder }, sel.selected_indices))
}

/// `(pairs, total_cost, unassigned_rows, unassigned_cols)`.
type AssignmentTuple = (Vec<(usize, usize)>, f64, Vec<usize>, Vec<usize>);

/// Minimum-cost assignment over a rectangular cost matrix.
///
/// Returns `(pairs, total_cost, unassigned_rows, unassigned_cols)`.
#[pyfunction]
fn assignment(cost: Vec<Vec<f64>>) -> PyResult<AssignmentTuple> {
    let matrix = matrix_from_rows(&cost)?;
    let a = hungarian(&matrix).map_err(err)?;
    Ok((a.pairs, a.total_cost, a.unassigned_rows, a.unassigned_cols))
}

/// Optimal subpattern assignment distance between two point sets.
#[pyfunction]
fn ospa(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, cutoff: f64, order: f64) -> PyResult<f64> {
    let cfg = OspaConfig::new(cutoff, order).map_err(err)?;
    ospa_impl(&points_from_rows(x), &points_from_rows(y), &cfg).map_err(err)
}

/// Normalizes an angle into `(-pi, pi]`.
#[pyfunction]
fn wrap_angle(theta: f64) -> f64 {
    wrap_angle_impl(theta)
}

/// Scalars needed to transmit one `dim`-dimensional component: weight,
/// mean, and the upper triangle of the covariance.
#[pyfunction]
#[pyo3(name = "tuples_per_component")]
fn tuples_per_component_py(dim: usize) -> usize {
    tuples_per_component(dim)
}

/// Metropolis fusing weights of `node` over the graph with `n` nodes and
/// the given undirected edges. Returns a dict mapping node id to weight,
/// including the host's own weight.
#[pyfunction]
#[pyo3(name = "metropolis_weights")]
fn metropolis_weights_py(
    n: usize,
    edges: Vec<(usize, usize)>,
    node: usize,
) -> PyResult<BTreeMap<usize, f64>> {
    let nodes: Vec<NodeInfo> = (0..n)
        .map(|id| NodeInfo {
            id,
            position: Vector2::new(id as f64, 0.0),
            kind: SensorKind::Linear,
        })
        .collect();
    let graph = NetworkGraph::new(nodes, &edges).map_err(err)?;
    let w = metropolis(&graph, node).map_err(err)?;
    Ok(w.iter().collect())
}

/// Weighted average of the host's and neighbors' expected counts.
#[pyfunction]
fn cardinality_consensus(
    host: usize,
    local_count: f64,
    neighbor_counts: BTreeMap<usize, f64>,
    weights: BTreeMap<usize, f64>,
) -> PyResult<f64> {
    let w = weights_from_dict(host, weights)?;
    Ok(cardinality_consensus_step(local_count, &neighbor_counts, &w))
}

/// Mixture-pooling fusion: pool the local mixture with every received
/// `(origin, mixture, count)` at face value, reduce, rescale to the
/// consensus count. Returns `(mixture, consensus_count, pooled_weight)`.
#[pyfunction]
#[pyo3(signature = (host, local, received, weights, prune_threshold, merge_gate, max_components, scheme = "smr"))]
#[allow(clippy::too_many_arguments)]
fn fuse_cgmm(
    host: usize,
    local: Mixture,
    received: Vec<(usize, Mixture, f64)>,
    weights: BTreeMap<usize, f64>,
    prune_threshold: f64,
    merge_gate: f64,
    max_components: usize,
    scheme: &str,
) -> PyResult<(Mixture, f64, f64)> {
    let w = weights_from_dict(host, weights)?;
    let cfg = ReductionConfig::new(prune_threshold, merge_gate, max_components).map_err(err)?;
    let msgs = messages_with_counts(received);
    let out = cgmm_step(&local.inner, &msgs, &w, &cfg, parse_scheme(scheme)?).map_err(err)?;
    Ok((Mixture { inner: out.mixture }, out.cardinality, out.pooled_weight))
}

/// Assignment-based fusion: associate received `(origin, mixture, count)`
/// components against the host components listed in `tgm_indices`, cancel
/// pairs beyond `gate` standard deviations, average matched groups in
/// place. Returns `(mixture, consensus_count)`.
#[pyfunction]
fn fuse_cgma(
    host: usize,
    local: Mixture,
    tgm_indices: Vec<usize>,
    received: Vec<(usize, Mixture, f64)>,
    weights: BTreeMap<usize, f64>,
    gate: f64,
) -> PyResult<(Mixture, f64)> {
    let w = weights_from_dict(host, weights)?;
    let msgs = messages_with_counts(received);
    let out = cgma_step(&local.inner, &tgm_indices, &msgs, &w, gate).map_err(err)?;
    Ok((Mixture { inner: out.mixture }, out.cardinality))
}

/// Generalized covariance intersection over the local mixture and received
/// `(origin, mixture)` pairs, sharing only components heavier than
/// `share_threshold`.
#[pyfunction]
#[pyo3(signature = (host, local, received, weights, share_threshold, prune_threshold, merge_gate, max_components, scheme = "smr"))]
#[allow(clippy::too_many_arguments)]
fn fuse_gci(
    host: usize,
    local: Mixture,
    received: Vec<(usize, Mixture)>,
    weights: BTreeMap<usize, f64>,
    share_threshold: f64,
    prune_threshold: f64,
    merge_gate: f64,
    max_components: usize,
    scheme: &str,
) -> PyResult<Mixture> {
    let w = weights_from_dict(host, weights)?;
    let cfg = ReductionConfig::new(prune_threshold, merge_gate, max_components).map_err(err)?;
    let msgs: Vec<TgmMessage> = received
        .into_iter()
        .map(|(origin, m)| TgmMessage {
            origin,
            components: m.inner,
            cardinality: None,
            flood_table: None,
        })
        .collect();
    let out =
        gci_fuse(&local.inner, &msgs, &w, share_threshold, &cfg, parse_scheme(scheme)?).map_err(err)?;
    Ok(Mixture { inner: out })
}

#[pymodule]
fn dgmphd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Component>()?;
    m.add_class::<Mixture>()?;
    m.add_function(wrap_pyfunction!(smr_merge_py, m)?)?;
    m.add_function(wrap_pyfunction!(omr_merge_py, m)?)?;
    m.add_function(wrap_pyfunction!(mahalanobis_sq_py, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_density, m)?)?;
    m.add_function(wrap_pyfunction!(gate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(reduce_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(select_tgm, m)?)?;
    m.add_function(wrap_pyfunction!(assignment, m)?)?;
    m.add_function(wrap_pyfunction!(ospa, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_angle, m)?)?;
    m.add_function(wrap_pyfunction!(tuples_per_component_py, m)?)?;
    m.add_function(wrap_pyfunction!(metropolis_weights_py, m)?)?;
    m.add_function(wrap_pyfunction!(cardinality_consensus, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_cgmm, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_cgma, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_gci, m)?)?;
    Ok(())
}
