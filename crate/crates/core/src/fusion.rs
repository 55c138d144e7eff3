//! Fusion rules a node applies to the mixtures received from its one-hop
//! neighbors each consensus round:
//!
//! - Metropolis fusing weights over the communication graph,
//! - weighted cardinality averaging,
//! - mixture pooling with merge-based reduction (CGMM),
//! - assignment-based per-component weighted averaging (CGMA),
//! - componentwise generalized covariance intersection (GCI baseline),
//! - cardinality flooding tables (CCF baseline),
//! - the tuple cost model and a canonical binary message encoding.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::assignment::hungarian;
use crate::error::{Error, Result};
use crate::gaussian::{
    gaussian_density, mahalanobis_sq, reduce, sanitize_covariance, GaussianComponent,
    GaussianMixture, MergeScheme, ReductionConfig,
};
use crate::network::NetworkGraph;

/// Sentinel cost marking a forbidden assignment pair.
pub const FORBIDDEN_COST: f64 = 1e12;

/// Fusing weights a node applies to itself and its neighbors.
///
/// Weights are non-negative and sum to one over the host and its neighbor
/// set.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    host: usize,
    weights: BTreeMap<usize, f64>,
}

impl FusionWeights {
    /// Validates and builds a weight set; `weights` must contain `host` and
    /// sum to one.
    pub fn new(host: usize, weights: BTreeMap<usize, f64>) -> Result<Self> {
        if !weights.contains_key(&host) {
            return Err(Error::Domain(format!("fusing weights are missing the host node {host}")));
        }
        if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("fusing weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("fusing weights sum to {total}, expected 1")));
        }
        Ok(Self { host, weights })
    }

    pub fn host(&self) -> usize {
        self.host
    }

    /// Weight applied to `id`; zero when `id` is outside the neighbor set.
    pub fn weight_of(&self, id: usize) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }

    /// Weight the host applies to its own state.
    pub fn self_weight(&self) -> f64 {
        self.weights[&self.host]
    }

    /// Iterates `(id, weight)` in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(k, v)| (*k, *v))
    }
}

/// Metropolis fusing weights of `node` over `graph`.
///
/// A neighbor `b` of `a` receives `1 / (1 + max(deg(a), deg(b)))`; the host
/// keeps the remainder. Row and column sums of the induced network matrix
/// are both one.
pub fn metropolis_weights(graph: &NetworkGraph, node: usize) -> Result<FusionWeights> {
    if node >= graph.len() {
        return Err(Error::Domain(format!(
            "node {node} outside the {}-node graph",
            graph.len()
        )));
    }
    let deg = graph.neighbors(node).len();
    let mut weights = BTreeMap::new();
    let mut total = 0.0;
    for &b in graph.neighbors(node) {
        let w = 1.0 / (1.0 + deg.max(graph.neighbors(b).len()) as f64);
        weights.insert(b, w);
        total += w;
    }
    weights.insert(node, 1.0 - total);
    FusionWeights::new(node, weights)
}

/// One entry of a cardinality flooding table: the origin's local expected
/// count and its hop distance from the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloodEntry {
    pub value: f64,
    pub age: u32,
}

/// What a node broadcasts to its neighbors in one consensus round.
#[derive(Debug, Clone, PartialEq)]
pub struct TgmMessage {
    /// Sender node id.
    pub origin: usize,
    /// Transmitted components (possibly empty for cardinality-only
    /// protocols).
    pub components: GaussianMixture,
    /// Sender's expected target count, present for protocols that run
    /// cardinality consensus.
    pub cardinality: Option<f64>,
    /// Flooding table, present for the flooding baseline.
    pub flood_table: Option<BTreeMap<usize, FloodEntry>>,
}

/// Tuples needed to encode one component of dimension `dim`: the weight,
/// the mean, and the upper triangle of the covariance.
pub fn tuples_per_component(dim: usize) -> usize {
    1 + dim + dim * (dim + 1) / 2
}

/// Transmission size of a message in scalar tuples.
pub fn message_cost(msg: &TgmMessage) -> usize {
    let mut cost = msg.components.len() * tuples_per_component(msg.components.dim());
    if msg.cardinality.is_some() {
        cost += 1;
    }
    if let Some(table) = &msg.flood_table {
        cost += table.len();
    }
    cost
}

/// Canonical little-endian binary encoding of one component: weight, mean
/// entries, then the upper-triangular covariance row by row.
pub fn encode_component(comp: &GaussianComponent) -> Vec<u8> {
    let d = comp.dim();
    let mut out = Vec::with_capacity(8 * tuples_per_component(d));
    out.extend_from_slice(&comp.weight().to_le_bytes());
    for v in comp.mean().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..d {
        for j in i..d {
            out.extend_from_slice(&comp.covariance()[(i, j)].to_le_bytes());
        }
    }
    out
}

/// Canonical binary encoding of a whole message: components in order, the
/// cardinality scalar when present, then flood entries as (id, value, age)
/// in ascending id order.
pub fn encode_message(msg: &TgmMessage) -> Vec<u8> {
    let mut out = Vec::new();
    for c in msg.components.components() {
        out.extend_from_slice(&encode_component(c));
    }
    if let Some(w) = msg.cardinality {
        out.extend_from_slice(&w.to_le_bytes());
    }
    if let Some(table) = &msg.flood_table {
        for (id, e) in table {
            out.extend_from_slice(&(*id as u64).to_le_bytes());
            out.extend_from_slice(&e.value.to_le_bytes());
            out.extend_from_slice(&(e.age as u64).to_le_bytes());
        }
    }
    out
}

/// Weighted average of the host's and neighbors' expected counts.
///
/// Neighbor values are looked up by sender id in the weight set; the host
/// contributes `local` at its own weight. Callers must supply a value for
/// every neighbor carrying positive weight.
pub fn cardinality_consensus_step(
    local: f64,
    neighbor_values: &BTreeMap<usize, f64>,
    weights: &FusionWeights,
) -> f64 {
    let mut total = weights.self_weight() * local;
    for (id, value) in neighbor_values {
        if *id != weights.host() {
            total += weights.weight_of(*id) * value;
        }
    }
    total
}

fn neighbor_cardinalities(received: &[&TgmMessage]) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for msg in received {
        let w = msg.cardinality.ok_or_else(|| {
            Error::Config(format!(
                "message from node {} carries no cardinality for a consensus protocol that needs one",
                msg.origin
            ))
        })?;
        if out.insert(msg.origin, w).is_some() {
            return Err(Error::Config(format!("duplicate message from node {}", msg.origin)));
        }
    }
    Ok(out)
}

fn sorted_by_origin(received: &[TgmMessage]) -> Vec<&TgmMessage> {
    let mut msgs: Vec<&TgmMessage> = received.iter().collect();
    msgs.sort_by_key(|m| m.origin);
    msgs
}

/// Result of a mixture-pooling consensus step.
#[derive(Debug, Clone)]
pub struct CgmmStep {
    /// Fused, reduced and rescaled local mixture.
    pub mixture: GaussianMixture,
    /// Consensus expected count the mixture was rescaled to.
    pub cardinality: f64,
    /// Total pooled weight before reduction: the local weight sum plus
    /// every received transmitted weight sum.
    pub pooled_weight: f64,
}

/// Mixture-pooling consensus: pool the local mixture with every received
/// transmitted mixture at face value, reduce the pool, then rescale all
/// weights to the consensus expected count.
pub fn cgmm_step(
    local: &GaussianMixture,
    received: &[TgmMessage],
    weights: &FusionWeights,
    cfg: &ReductionConfig,
    scheme: MergeScheme,
) -> Result<CgmmStep> {
    let msgs = sorted_by_origin(received);
    let mut pooled = local.components().to_vec();
    let mut pooled_weight = local.weight_sum();
    for msg in &msgs {
        if !msg.components.is_empty() && msg.components.dim() != local.dim() {
            return Err(Error::DimensionMismatch(format!(
                "message from node {} has dimension {}, local mixture has {}",
                msg.origin,
                msg.components.dim(),
                local.dim()
            )));
        }
        pooled.extend(msg.components.components().iter().cloned());
        pooled_weight += msg.components.weight_sum();
    }
    let pooled = GaussianMixture::new(local.dim(), pooled)?;
    let reduced = reduce(&pooled, cfg, scheme)?;

    let neighbor_values = neighbor_cardinalities(&msgs)?;
    let cardinality = cardinality_consensus_step(local.weight_sum(), &neighbor_values, weights);

    let reduced_weight = reduced.weight_sum();
    if reduced_weight <= 0.0 {
        if cardinality > 0.0 {
            return Err(Error::DegenerateRescale(cardinality));
        }
        return Ok(CgmmStep { mixture: GaussianMixture::empty(local.dim()), cardinality, pooled_weight });
    }
    let mixture = reduced.scaled_weights(cardinality / reduced_weight)?;
    Ok(CgmmStep { mixture, cardinality, pooled_weight })
}

/// Result of an assignment-based consensus step.
#[derive(Debug, Clone)]
pub struct CgmaStep {
    /// Local mixture with its transmitted components replaced in place by
    /// their fused versions, rescaled to the consensus expected count.
    pub mixture: GaussianMixture,
    /// Consensus expected count.
    pub cardinality: f64,
}

/// Assignment-based consensus: associate each received transmitted mixture
/// one-to-one against the host's transmitted components, cancel pairs
/// farther apart than the gate, then replace every host component by the
/// fusing-weight average of its matched group. The mixture size never
/// changes; unmatched received components are discarded.
///
/// `gate` is in standard-deviation units and cancels pairs with squared
/// distance above `gate * gate`.
pub fn cgma_step(
    local: &GaussianMixture,
    local_tgm_indices: &[usize],
    received: &[TgmMessage],
    weights: &FusionWeights,
    gate: f64,
) -> Result<CgmaStep> {
    if !(gate >= 0.0) || !gate.is_finite() {
        return Err(Error::Domain(format!("association gate must be finite and non-negative, got {gate}")));
    }
    let mut seen = vec![false; local.len()];
    for &idx in local_tgm_indices {
        if idx >= local.len() {
            return Err(Error::Domain(format!(
                "transmitted index {idx} outside the {}-component local mixture",
                local.len()
            )));
        }
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Domain(format!("transmitted index {idx} listed twice")));
        }
    }
    let msgs = sorted_by_origin(received);
    let hosts: Vec<&GaussianComponent> =
        local_tgm_indices.iter().map(|&i| &local.components()[i]).collect();

    // Each host component labels a group; contributions are (sensor id,
    // component) with the host first, then matched received components in
    // ascending origin order.
    let mut groups: Vec<Vec<(usize, GaussianComponent)>> = hosts
        .iter()
        .map(|h| vec![(weights.host(), (*h).clone())])
        .collect();
    let gate_sq = gate * gate;
    for msg in &msgs {
        if hosts.is_empty() || msg.components.is_empty() {
            continue;
        }
        if msg.components.dim() != local.dim() {
            return Err(Error::DimensionMismatch(format!(
                "message from node {} has dimension {}, local mixture has {}",
                msg.origin,
                msg.components.dim(),
                local.dim()
            )));
        }
        let recv = msg.components.components();
        let cost = {
            let mut cost = DMatrix::zeros(hosts.len(), recv.len());
            for (i, host) in hosts.iter().enumerate() {
                for (j, r) in recv.iter().enumerate() {
                    cost[(i, j)] = mahalanobis_sq(host, r)?;
                }
            }
            cost
        };
        let assignment = hungarian(&cost)?;
        for (i, j) in assignment.pairs {
            let c = cost[(i, j)];
            if c <= gate_sq && c < FORBIDDEN_COST {
                groups[i].push((msg.origin, recv[j].clone()));
            }
        }
    }

    let mut fused = local.components().to_vec();
    for (slot, group) in local_tgm_indices.iter().zip(&groups) {
        fused[*slot] = fuse_group(group, weights)?;
    }
    let updated = GaussianMixture::new(local.dim(), fused)?;

    let neighbor_values = neighbor_cardinalities(&msgs)?;
    let cardinality = cardinality_consensus_step(local.weight_sum(), &neighbor_values, weights);
    let total = updated.weight_sum();
    if total <= 0.0 {
        if cardinality > 0.0 && !updated.is_empty() {
            return Err(Error::DegenerateRescale(cardinality));
        }
        return Ok(CgmaStep { mixture: updated, cardinality });
    }
    let mixture = updated.scaled_weights(cardinality / total)?;
    Ok(CgmaStep { mixture, cardinality })
}

/// Fusing-weight average of a matched component group: the weight is the
/// weighted mean of member weights, the mean the weight-and-fusing-weight
/// average of member means, and the covariance the minimum-trace
/// spread-adjusted member covariance.
fn fuse_group(group: &[(usize, GaussianComponent)], weights: &FusionWeights) -> Result<GaussianComponent> {
    let omega_total: f64 = group.iter().map(|(id, _)| weights.weight_of(*id)).sum();
    if omega_total <= 0.0 {
        return Err(Error::DegenerateInput(
            "matched group carries no fusing weight".into(),
        ));
    }
    let weighted_mass: f64 = group
        .iter()
        .map(|(id, c)| weights.weight_of(*id) * c.weight())
        .sum();
    let fused_weight = weighted_mass / omega_total;
    if weighted_mass <= 0.0 {
        // All member weights vanish; keep the host shape at zero weight.
        return group[0].1.with_weight(0.0);
    }
    let dim = group[0].1.dim();
    let mut mean = DVector::zeros(dim);
    for (id, c) in group {
        mean += c.mean() * (weights.weight_of(*id) * c.weight());
    }
    mean /= weighted_mass;
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for (_, c) in group {
        let d = &mean - c.mean();
        let adjusted = c.covariance() + &d * d.transpose();
        let trace = adjusted.trace();
        if best.as_ref().is_none_or(|(t, _)| trace < *t) {
            best = Some((trace, adjusted));
        }
    }
    let (_, cov) = best.expect("group is non-empty");
    GaussianComponent::new(fused_weight, mean, cov)
}

/// Componentwise fractional power of a mixture: each covariance is scaled
/// by `1/alpha` and each weight picks up the single-Gaussian power
/// normalizer.
fn mixture_power(gm: &GaussianMixture, alpha: f64) -> Result<GaussianMixture> {
    let d = gm.dim() as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(gm.len());
    for c in gm.components() {
        let chol = c
            .covariance()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalDegeneracy("singular covariance in mixture power".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let log_norm = 0.5 * d * (1.0 - alpha) * two_pi.ln() + 0.5 * (1.0 - alpha) * log_det
            - 0.5 * d * alpha.ln();
        let weight = c.weight().powf(alpha) * log_norm.exp();
        let cov = sanitize_covariance(c.covariance() / alpha)?;
        out.push(GaussianComponent::new(weight, c.mean().clone(), cov)?);
    }
    GaussianMixture::new(gm.dim(), out)
}

/// Closed-form product of two Gaussian components; the weight picks up the
/// Gaussian overlap factor.
fn component_product(a: &GaussianComponent, b: &GaussianComponent) -> Result<GaussianComponent> {
    let sum = a.covariance() + b.covariance();
    let chol = sum
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalDegeneracy("singular covariance sum in component product".into()))?;
    // (P1^-1 + P2^-1)^-1 = P1 (P1 + P2)^-1 P2, and the matching mean
    // identity, both via one factorization of the covariance sum.
    let cov = a.covariance() * chol.solve(b.covariance());
    let cov = sanitize_covariance((&cov + cov.transpose()) * 0.5)?;
    let mean = b.covariance() * chol.solve(&a.mean().clone())
        + a.covariance() * chol.solve(&b.mean().clone());
    let overlap = gaussian_density(a.mean(), b.mean(), &sum)?;
    GaussianComponent::new(a.weight() * b.weight() * overlap, mean, cov)
}

/// One pairwise geometric fusion: `a` to the power `alpha` times `b` to the
/// power `1 - alpha`, expanded componentwise. Cross products lighter than
/// `floor` are dropped to keep the expansion tractable; they could not
/// survive the caller's final reduction anyway.
fn gci_pair(
    a: &GaussianMixture,
    alpha: f64,
    b: &GaussianMixture,
    floor: f64,
) -> Result<GaussianMixture> {
    let pa = mixture_power(a, alpha)?;
    let pb = mixture_power(b, 1.0 - alpha)?;
    let mut out = Vec::new();
    for ca in pa.components() {
        for cb in pb.components() {
            let prod = component_product(ca, cb)?;
            if prod.weight() >= floor {
                out.push(prod);
            }
        }
    }
    GaussianMixture::new(a.dim(), out)
}

/// Generalized covariance intersection over the local mixture and every
/// received mixture.
///
/// Every source shares only components heavier than `share_threshold`. The
/// weighted geometric mean is approximated componentwise and folded
/// pairwise in ascending sensor-id order, renormalizing the exponents at
/// each fold so the final exponents match the fusing weights; the result is
/// reduced with `cfg` and `scheme`. An empty participating source empties
/// the product.
///
/// Geometric products shrink the overall mass whenever sources disagree,
/// which would starve estimate extraction, so expected counts are averaged
/// in parallel: each shared mixture's weight sum doubles as its sender's
/// count (costing no extra tuples) and the reduced product is rescaled to
/// the averaged count. An empty product stays empty — there is no shape to
/// carry the mass.
pub fn gci_fuse(
    local: &GaussianMixture,
    received: &[TgmMessage],
    weights: &FusionWeights,
    share_threshold: f64,
    cfg: &ReductionConfig,
    scheme: MergeScheme,
) -> Result<GaussianMixture> {
    if !(share_threshold >= 0.0) || !share_threshold.is_finite() {
        return Err(Error::Domain(format!(
            "share threshold must be finite and non-negative, got {share_threshold}"
        )));
    }
    let shared = |gm: &GaussianMixture| -> Result<GaussianMixture> {
        GaussianMixture::new(
            gm.dim(),
            gm.components()
                .iter()
                .filter(|c| c.weight() > share_threshold)
                .cloned()
                .collect(),
        )
    };
    let mut sources: Vec<(usize, GaussianMixture)> = vec![(weights.host(), shared(local)?)];
    for msg in sorted_by_origin(received) {
        if sources.iter().any(|(id, _)| *id == msg.origin) {
            return Err(Error::Config(format!("duplicate message from node {}", msg.origin)));
        }
        if !msg.components.is_empty() && msg.components.dim() != local.dim() {
            return Err(Error::DimensionMismatch(format!(
                "message from node {} has dimension {}, local mixture has {}",
                msg.origin,
                msg.components.dim(),
                local.dim()
            )));
        }
        sources.push((msg.origin, shared(&msg.components)?));
    }
    sources.sort_by_key(|(id, _)| *id);
    let active: Vec<(f64, &GaussianMixture)> = sources
        .iter()
        .map(|(id, gm)| (weights.weight_of(*id), gm))
        .filter(|(w, _)| *w > 0.0)
        .collect();
    let Some(((first_w, first), rest)) = active.split_first() else {
        return Err(Error::DegenerateInput(
            "no participating source carries positive fusing weight".into(),
        ));
    };
    let mut acc = (*first).clone();
    let mut acc_weight = *first_w;
    for (w, gm) in rest {
        let total = acc_weight + w;
        acc = gci_pair(&acc, acc_weight / total, gm, cfg.prune_threshold())?;
        acc_weight = total;
    }
    let reduced = reduce(&acc, cfg, scheme)?;

    let neighbor_counts: BTreeMap<usize, f64> = received
        .iter()
        .map(|msg| (msg.origin, msg.components.weight_sum()))
        .collect();
    let count = cardinality_consensus_step(local.weight_sum(), &neighbor_counts, weights);
    let reduced_weight = reduced.weight_sum();
    if reduced_weight <= 0.0 {
        return Ok(reduced);
    }
    reduced.scaled_weights(count / reduced_weight)
}

/// One flooding round: the union of the local table with every received
/// table. Received entries age by one hop; on conflict the local entry
/// wins (per-origin values are constant within a filtering step).
pub fn ccf_step(
    local: &BTreeMap<usize, FloodEntry>,
    received: &[&BTreeMap<usize, FloodEntry>],
) -> BTreeMap<usize, FloodEntry> {
    let mut out = local.clone();
    for table in received {
        for (id, e) in *table {
            out.entry(*id).or_insert(FloodEntry { value: e.value, age: e.age + 1 });
        }
    }
    out
}

/// Mean of the flooded values; zero for an empty table.
pub fn flood_mean(table: &BTreeMap<usize, FloodEntry>) -> f64 {
    if table.is_empty() {
        return 0.0;
    }
    table.values().map(|e| e.value).sum::<f64>() / table.len() as f64
}
