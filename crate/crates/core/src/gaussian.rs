//! Weighted Gaussian components and mixtures, plus the mixture-reduction
//! toolbox used by every filter and fusion rule in this crate:
//!
//! - validated component construction with covariance repair,
//! - Mahalanobis-type distance between components,
//! - standard and order-preserving moment merging,
//! - prune / cluster / merge / cap reduction,
//! - top-rank and threshold partitioning of a mixture,
//! - chi-square gate design.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::error::{Error, Result};

/// Absolute tolerance for covariance symmetry violations.
const SYMMETRY_TOL: f64 = 1e-9;

/// Relative eigenvalue threshold below which negative eigenvalues are
/// clamped to zero instead of rejected.
const PSD_CLAMP_TOL: f64 = 1e-9;

/// Merge rule applied to a cluster of components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeScheme {
    /// Standard moment-preserving merge: weighted mean and weighted average
    /// of spread-adjusted covariances.
    Smr,
    /// Order-preserving merge: same weight and mean as [`MergeScheme::Smr`],
    /// covariance taken from the spread-adjusted candidate of minimum trace.
    Omr,
}

/// Symmetrizes a covariance and clamps numerically negative eigenvalues.
///
/// Asymmetry beyond `1e-9` absolute or eigenvalues below `-1e-9` times the
/// largest eigenvalue are reported as [`Error::InvalidCovariance`].
pub(crate) fn sanitize_covariance(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let mut max_skew = 0.0f64;
    for i in 0..cov.nrows() {
        for j in (i + 1)..cov.ncols() {
            let skew = (cov[(i, j)] - cov[(j, i)]).abs();
            if !skew.is_finite() {
                return Err(Error::InvalidCovariance(
                    "covariance contains non-finite entries".into(),
                ));
            }
            max_skew = max_skew.max(skew);
        }
    }
    if max_skew > SYMMETRY_TOL {
        return Err(Error::InvalidCovariance(format!(
            "asymmetry {max_skew:.3e} exceeds tolerance {SYMMETRY_TOL:.0e}"
        )));
    }
    let sym = (&cov + cov.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance(
            "covariance contains non-finite entries".into(),
        ));
    }
    // Fast path: strictly positive definite matrices need no eigen repair.
    if sym.clone().cholesky().is_some() {
        return Ok(sym);
    }
    let eigen = sym.clone().symmetric_eigen();
    let lambda_max = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = -PSD_CLAMP_TOL * lambda_max;
    let mut clamped = eigen.eigenvalues.clone();
    for v in clamped.iter_mut() {
        if *v < floor {
            return Err(Error::InvalidCovariance(format!(
                "eigenvalue {v:.3e} below PSD repair floor {floor:.3e}"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let rebuilt = &eigen.eigenvectors * DMatrix::from_diagonal(&clamped) * eigen.eigenvectors.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

/// A single weighted Gaussian: weight, mean and covariance.
///
/// Construction validates the weight and repairs the covariance, so a value
/// of this type always carries a symmetric PSD covariance and a
/// non-negative finite weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianComponent {
    /// Builds a component, validating the weight and repairing the
    /// covariance.
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Domain(format!(
                "component weight must be finite and non-negative, got {weight}"
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("component mean contains non-finite entries".into()));
        }
        if covariance.nrows() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has dimension {} but covariance is {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let covariance = sanitize_covariance(covariance)?;
        Ok(Self { weight, mean, covariance })
    }

    /// Builds a component from parts already known to satisfy the
    /// invariants (weight validated, covariance sanitized).
    pub(crate) fn from_valid_parts(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        debug_assert!(weight >= 0.0);
        Self { weight, mean, covariance }
    }

    /// Component weight.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Component mean.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Component covariance.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Copy of this component with the weight replaced.
    pub fn with_weight(&self, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Domain(format!(
                "component weight must be finite and non-negative, got {weight}"
            )));
        }
        Ok(Self {
            weight,
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
        })
    }
}

/// An ordered list of Gaussian components over a common state dimension.
///
/// The weight sum is computed once at construction, so repeated cardinality
/// queries do not re-walk the component list.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
    weight_sum: f64,
}

impl GaussianMixture {
    /// The empty mixture over states of dimension `dim`.
    pub fn empty(dim: usize) -> Self {
        Self { dim, components: Vec::new(), weight_sum: 0.0 }
    }

    /// Builds a mixture after checking every component matches `dim`.
    pub fn new(dim: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        for (i, c) in components.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "component {i} has dimension {} in a mixture of dimension {dim}",
                    c.dim()
                )));
            }
        }
        let weight_sum = components.iter().map(GaussianComponent::weight).sum();
        Ok(Self { dim, components, weight_sum })
    }

    /// Builds a mixture taking the dimension from the first component.
    pub fn from_components(components: Vec<GaussianComponent>) -> Result<Self> {
        let dim = components
            .first()
            .map(GaussianComponent::dim)
            .ok_or_else(|| Error::DegenerateInput("cannot infer dimension from an empty component list".into()))?;
        Self::new(dim, components)
    }

    /// State dimension of every component.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Component slice in mixture order.
    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    /// Whether the mixture has no components.
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Cached total weight of the mixture.
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Consumes the mixture, returning its components.
    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    /// New mixture with every weight multiplied by `factor`.
    pub fn scaled_weights(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(Error::Domain(format!(
                "weight scale factor must be finite and non-negative, got {factor}"
            )));
        }
        let components = self
            .components
            .iter()
            .map(|c| GaussianComponent::from_valid_parts(c.weight * factor, c.mean.clone(), c.covariance.clone()))
            .collect();
        Self::new(self.dim, components)
    }
}

/// Squared Mahalanobis-type distance between two components.
///
/// The reference covariance is taken from the component with the larger
/// weight; ties resolve toward `a`. Callers therefore control tie-breaking
/// through argument order.
///
/// # Errors
///
/// Dimension mismatch, or [`Error::NumericalDegeneracy`] when the reference
/// covariance is singular.
pub fn mahalanobis_sq(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "components of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let reference = if b.weight() > a.weight() { b.covariance() } else { a.covariance() };
    let chol = reference
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalDegeneracy("singular reference covariance in distance".into()))?;
    let diff = a.mean() - b.mean();
    let solved = chol.solve(&diff);
    Ok(diff.dot(&solved))
}

fn merge_moments(group: &[GaussianComponent]) -> Result<(f64, DVector<f64>, Vec<DMatrix<f64>>)> {
    let first = group
        .first()
        .ok_or_else(|| Error::DegenerateInput("cannot merge an empty component group".into()))?;
    let dim = first.dim();
    for c in group.iter().skip(1) {
        if c.dim() != dim {
            return Err(Error::DimensionMismatch(
                "merge group mixes state dimensions".into(),
            ));
        }
    }
    let total: f64 = group.iter().map(GaussianComponent::weight).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateInput(
            "merge group has zero total weight".into(),
        ));
    }
    let mut mean = DVector::zeros(dim);
    for c in group {
        mean += c.mean() * c.weight();
    }
    mean /= total;
    let adjusted = group
        .iter()
        .map(|c| {
            let d = &mean - c.mean();
            c.covariance() + &d * d.transpose()
        })
        .collect();
    Ok((total, mean, adjusted))
}

/// Standard moment-preserving merge of a component group.
///
/// The output weight is the group total, the mean is the weight-normalized
/// average, and the covariance is the weight-normalized average of the
/// spread-adjusted covariances, so the first two moments of the group are
/// preserved exactly.
pub fn smr_merge(group: &[GaussianComponent]) -> Result<GaussianComponent> {
    let (total, mean, adjusted) = merge_moments(group)?;
    let dim = mean.len();
    let mut cov = DMatrix::zeros(dim, dim);
    for (c, adj) in group.iter().zip(&adjusted) {
        cov += adj * c.weight();
    }
    cov /= total;
    GaussianComponent::new(total, mean, cov)
}

/// Order-preserving merge of a component group.
///
/// Weight and mean match [`smr_merge`]; the covariance is the
/// spread-adjusted candidate of minimum trace, which never exceeds the
/// standard merged covariance in trace. Trace ties resolve toward the
/// lowest-index component.
pub fn omr_merge(group: &[GaussianComponent]) -> Result<GaussianComponent> {
    let (total, mean, adjusted) = merge_moments(group)?;
    let mut best = 0usize;
    let mut best_trace = adjusted[0].trace();
    for (i, adj) in adjusted.iter().enumerate().skip(1) {
        let t = adj.trace();
        if t < best_trace {
            best = i;
            best_trace = t;
        }
    }
    GaussianComponent::new(total, mean, adjusted[best].clone())
}

/// Pruning, clustering and capping parameters for mixture reduction.
///
/// `merge_gate` is expressed in standard-deviation units; clustering
/// compares squared distances against `merge_gate * merge_gate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionConfig {
    prune_threshold: f64,
    merge_gate: f64,
    max_components: usize,
}

impl ReductionConfig {
    /// Validates and builds a reduction configuration.
    pub fn new(prune_threshold: f64, merge_gate: f64, max_components: usize) -> Result<Self> {
        if !(prune_threshold >= 0.0) {
            return Err(Error::Domain(format!(
                "prune threshold must be non-negative, got {prune_threshold}"
            )));
        }
        if !(merge_gate >= 0.0) {
            return Err(Error::Domain(format!(
                "merge gate must be non-negative, got {merge_gate}"
            )));
        }
        if max_components == 0 {
            return Err(Error::Domain("component cap must be positive".into()));
        }
        Ok(Self { prune_threshold, merge_gate, max_components })
    }

    /// Weight below which components are dropped.
    pub fn prune_threshold(&self) -> f64 {
        self.prune_threshold
    }

    /// Clustering gate in standard-deviation units.
    pub fn merge_gate(&self) -> f64 {
        self.merge_gate
    }

    /// Maximum number of components kept after merging.
    pub fn max_components(&self) -> usize {
        self.max_components
    }
}

/// Prunes, clusters, merges and caps a mixture.
///
/// Components below the prune threshold are dropped. The survivors are
/// clustered greedily: the heaviest remaining component seeds a cluster
/// that absorbs every remaining component within the squared gate, the
/// cluster is merged with `scheme`, and the process repeats. If more than
/// `max_components` clusters result, only the heaviest are kept.
///
/// The output weight sum never exceeds the input weight sum, with equality
/// whenever nothing is pruned or capped.
pub fn reduce(gm: &GaussianMixture, cfg: &ReductionConfig, scheme: MergeScheme) -> Result<GaussianMixture> {
    let gate_sq = cfg.merge_gate() * cfg.merge_gate();
    let mut remaining: Vec<&GaussianComponent> = gm
        .components()
        .iter()
        .filter(|c| c.weight() >= cfg.prune_threshold())
        .collect();
    let mut merged = Vec::new();
    while !remaining.is_empty() {
        let mut seed_idx = 0usize;
        for (i, c) in remaining.iter().enumerate().skip(1) {
            if c.weight() > remaining[seed_idx].weight() {
                seed_idx = i;
            }
        }
        let seed = remaining[seed_idx];
        let mut cluster = Vec::new();
        let mut rest = Vec::new();
        for (i, c) in remaining.iter().enumerate() {
            if i == seed_idx || mahalanobis_sq(seed, c)? <= gate_sq {
                cluster.push((*c).clone());
            } else {
                rest.push(*c);
            }
        }
        merged.push(match scheme {
            MergeScheme::Smr => smr_merge(&cluster)?,
            MergeScheme::Omr => omr_merge(&cluster)?,
        });
        remaining = rest;
    }
    if merged.len() > cfg.max_components() {
        merged.sort_by(|a, b| b.weight().partial_cmp(&a.weight()).expect("weights are finite"));
        merged.truncate(cfg.max_components());
    }
    GaussianMixture::new(gm.dim(), merged)
}

/// How the transmitted part of a mixture is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TgmRule {
    /// Keep the heaviest components; the count is the nearest integer to
    /// the mixture weight sum unless a fixed count is supplied. The count
    /// is clamped to the mixture size.
    Rank { fixed: Option<usize> },
    /// Keep every component with weight strictly above the threshold.
    Threshold { min_weight: f64 },
}

/// Partition of a mixture into a transmitted part and a remainder.
#[derive(Debug, Clone)]
pub struct TgmSelection {
    /// Components selected for transmission, in original mixture order.
    pub selected: GaussianMixture,
    /// Components left behind, in original mixture order.
    pub remainder: GaussianMixture,
    /// Indices of the selected components within the input mixture.
    pub selected_indices: Vec<usize>,
}

/// Splits a mixture into the part worth transmitting and the rest.
///
/// Both parts preserve the original component order; together they contain
/// every input component exactly once.
pub fn select_tgm(gm: &GaussianMixture, rule: &TgmRule) -> Result<TgmSelection> {
    let chosen: Vec<usize> = match rule {
        TgmRule::Rank { fixed } => {
            let count = match fixed {
                Some(n) => *n,
                None => gm.weight_sum().round() as usize,
            }
            .min(gm.len());
            let mut order: Vec<usize> = (0..gm.len()).collect();
            order.sort_by(|&a, &b| {
                gm.components()[b]
                    .weight()
                    .partial_cmp(&gm.components()[a].weight())
                    .expect("weights are finite")
            });
            let mut keep = vec![false; gm.len()];
            for &i in order.iter().take(count) {
                keep[i] = true;
            }
            (0..gm.len()).filter(|&i| keep[i]).collect()
        }
        TgmRule::Threshold { min_weight } => {
            if !min_weight.is_finite() {
                return Err(Error::Domain("selection threshold must be finite".into()));
            }
            (0..gm.len())
                .filter(|&i| gm.components()[i].weight() > *min_weight)
                .collect()
        }
    };
    let mut selected = Vec::new();
    let mut remainder = Vec::new();
    let mut in_chosen = vec![false; gm.len()];
    for &i in &chosen {
        in_chosen[i] = true;
    }
    for (i, c) in gm.components().iter().enumerate() {
        if in_chosen[i] {
            selected.push(c.clone());
        } else {
            remainder.push(c.clone());
        }
    }
    Ok(TgmSelection {
        selected: GaussianMixture::new(gm.dim(), selected)?,
        remainder: GaussianMixture::new(gm.dim(), remainder)?,
        selected_indices: chosen,
    })
}

/// Gate size in standard-deviation units for a chi-square coverage level.
///
/// Returns `tau` such that a squared Mahalanobis distance of `tau * tau`
/// covers `coverage` of the chi-square distribution with `dim` degrees of
/// freedom.
pub fn gate_threshold(coverage: f64, dim: usize) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Domain(format!(
            "coverage must lie strictly between 0 and 1, got {coverage}"
        )));
    }
    if dim == 0 {
        return Err(Error::Domain("gate dimension must be positive".into()));
    }
    let chi2 = ChiSquared::new(dim as f64)
        .map_err(|e| Error::Domain(format!("chi-square with {dim} dof: {e}")))?;
    let mut x = chi2.inverse_cdf(coverage);
    // Newton polish: the generic quantile inversion is only good to ~1e-8.
    for _ in 0..8 {
        let f = chi2.cdf(x) - coverage;
        let slope = chi2.pdf(x);
        if slope <= 0.0 {
            break;
        }
        let step = f / slope;
        x -= step;
        if step.abs() < 1e-14 * x.abs().max(1.0) {
            break;
        }
    }
    if !(x > 0.0) {
        return Err(Error::NumericalDegeneracy(format!(
            "chi-square quantile inversion failed for coverage {coverage}, dof {dim}"
        )));
    }
    Ok(x.sqrt())
}

/// Natural log of a multivariate normal density at `x`.
///
/// # Errors
///
/// [`Error::NumericalDegeneracy`] when the covariance is singular.
pub fn log_gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() || cov.nrows() != mean.len() {
        return Err(Error::DimensionMismatch(
            "density point, mean and covariance disagree".into(),
        ));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalDegeneracy("singular covariance in density evaluation".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let quad = diff.dot(&solved);
    let d = mean.len() as f64;
    Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
}

/// Multivariate normal density at `x`.
pub fn gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    Ok(log_gaussian_density(x, mean, cov)?.exp())
}
