//! Tracking accuracy and communication-efficiency metrics.

use nalgebra::{DMatrix, DVector};

use crate::assignment::hungarian;
use crate::error::{Error, Result};

/// Cutoff and order of the optimal subpattern assignment metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OspaConfig {
    cutoff: f64,
    order: f64,
}

impl OspaConfig {
    /// Validates and builds a metric configuration.
    pub fn new(cutoff: f64, order: f64) -> Result<Self> {
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(Error::Domain(format!("cutoff must be positive and finite, got {cutoff}")));
        }
        if !(order >= 1.0) || !order.is_finite() {
            return Err(Error::Domain(format!("order must be at least 1, got {order}")));
        }
        Ok(Self { cutoff, order })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn order(&self) -> f64 {
        self.order
    }
}

/// Optimal subpattern assignment distance between two point sets.
///
/// Point distances are Euclidean, saturated at the cutoff; the optimal
/// matching of the smaller set into the larger is found exactly, and every
/// unmatched point of the larger set contributes a full cutoff penalty.
/// Two empty sets are at distance zero; one empty set is at the cutoff.
pub fn ospa(x: &[DVector<f64>], y: &[DVector<f64>], cfg: &OspaConfig) -> Result<f64> {
    if x.is_empty() && y.is_empty() {
        return Ok(0.0);
    }
    if x.is_empty() || y.is_empty() {
        return Ok(cfg.cutoff());
    }
    let dim = x[0].len();
    if x.iter().chain(y.iter()).any(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch("point sets mix dimensions".into()));
    }
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let m = small.len();
    let n = large.len();
    let c = cfg.cutoff();
    let p = cfg.order();
    let cost = DMatrix::from_fn(m, n, |i, j| {
        let d = (&small[i] - &large[j]).norm();
        d.min(c).powf(p)
    });
    let assignment = hungarian(&cost)?;
    let matched: f64 = assignment.total_cost;
    let penalty = (n - m) as f64 * c.powf(p);
    Ok(((matched + penalty) / n as f64).powf(1.0 / p))
}

/// Mean of per-node distances; zero for an empty slice.
pub fn network_ospa(per_node: &[f64]) -> f64 {
    if per_node.is_empty() {
        return 0.0;
    }
    per_node.iter().sum::<f64>() / per_node.len() as f64
}

/// Accuracy gain per transmitted tuple: the drop in time-averaged distance
/// divided by the tuple count. `None` when nothing was transmitted.
pub fn consensus_efficiency(ospa_without: f64, ospa_with: f64, tuples: f64) -> Option<f64> {
    if tuples > 0.0 {
        Some((ospa_without - ospa_with) / tuples)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn cfg() -> OspaConfig {
        OspaConfig::new(1000.0, 2.0).unwrap()
    }

    #[test]
    fn identical_singletons_are_at_their_distance() {
        let d = ospa(&[pt(0.0, 0.0)], &[pt(3.0, 4.0)], &cfg()).unwrap();
        assert_relative_eq!(d, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_sets_are_coincident_and_one_empty_costs_cutoff() {
        assert_eq!(ospa(&[], &[], &cfg()).unwrap(), 0.0);
        assert_eq!(ospa(&[pt(1.0, 1.0)], &[], &cfg()).unwrap(), 1000.0);
        assert_eq!(ospa(&[], &[pt(1.0, 1.0)], &cfg()).unwrap(), 1000.0);
    }

    #[test]
    fn distances_saturate_at_the_cutoff() {
        let tight = OspaConfig::new(2.0, 2.0).unwrap();
        let d = ospa(&[pt(0.0, 0.0)], &[pt(100.0, 0.0)], &tight).unwrap();
        assert_relative_eq!(d, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cardinality_mismatch_charges_cutoff_per_extra_point() {
        let c = 10.0;
        let cfg = OspaConfig::new(c, 2.0).unwrap();
        let d = ospa(&[pt(0.0, 0.0)], &[pt(0.0, 0.0), pt(3.0, 0.0)], &cfg).unwrap();
        // Matched pair at distance 0, one unmatched point at cutoff.
        assert_relative_eq!(d, (c * c / 2.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn metric_is_symmetric() {
        let a = [pt(0.0, 0.0), pt(10.0, 10.0)];
        let b = [pt(1.0, 1.0), pt(12.0, 9.0), pt(-5.0, 3.0)];
        let d1 = ospa(&a, &b, &cfg()).unwrap();
        let d2 = ospa(&b, &a, &cfg()).unwrap();
        assert_relative_eq!(d1, d2, epsilon = 1e-12);
    }

    #[test]
    fn optimal_matching_beats_greedy_pairing() {
        // Greedy would pair the first points at distance 9 and pay 11 for
        // the second pair; the optimum is the crossed pairing.
        let cfg = OspaConfig::new(100.0, 1.0).unwrap();
        let a = [pt(0.0, 0.0), pt(10.0, 0.0)];
        let b = [pt(9.0, 0.0), pt(1.0, 0.0)];
        let d = ospa(&a, &b, &cfg).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn network_average_and_efficiency_behave() {
        assert_relative_eq!(network_ospa(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(network_ospa(&[]), 0.0);
        let ce = consensus_efficiency(100.0, 80.0, 40.0).unwrap();
        assert_relative_eq!(ce, 0.5);
        assert!(consensus_efficiency(100.0, 80.0, 0.0).is_none());
    }

    #[test]
    fn config_rejects_bad_parameters() {
        assert!(OspaConfig::new(0.0, 2.0).is_err());
        assert!(OspaConfig::new(10.0, 0.5).is_err());
        assert!(OspaConfig::new(f64::NAN, 2.0).is_err());
    }
}
