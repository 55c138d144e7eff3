//! Unscented transform of Gaussian state components through nonlinear
//! observation functions, with wrap-aware handling of angular measurement
//! coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Wraps an angle to the half-open interval `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = theta.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Spread parameter of the symmetric sigma-point set.
///
/// The default for a state of dimension `d` is `3 - d`, which places the
/// fourth-moment match of the transform at the Gaussian kurtosis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams {
    pub kappa: f64,
}

impl UtParams {
    /// Default spread for states of dimension `dim`.
    pub fn for_dim(dim: usize) -> Self {
        Self { kappa: 3.0 - dim as f64 }
    }
}

/// First two predicted-measurement moments of a Gaussian state pushed
/// through `h`, plus the state-measurement cross covariance.
///
/// Returns `(z_mean, spread, cross)` where `spread` is the sigma-point
/// scatter of the predicted measurement **without** any additive noise
/// term, and `cross` is the state-to-measurement cross covariance.
/// Components flagged in `angular` are treated as angles: sigma-point
/// deviations are wrapped before averaging and the returned mean is wrapped
/// to `(-pi, pi]`.
///
/// # Errors
///
/// Rejects `kappa <= -dim` and state covariances without a Cholesky factor.
pub fn unscented_measurement_moments<F>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    params: &UtParams,
    angular: &[bool],
    h: F,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = mean.len();
    let lambda = d as f64 + params.kappa;
    if lambda <= 0.0 {
        return Err(Error::Domain(format!(
            "sigma spread {} must exceed -dim = -{d}",
            params.kappa
        )));
    }
    let chol = (cov * lambda)
        .cholesky()
        .ok_or_else(|| Error::NumericalDegeneracy("state covariance has no Cholesky factor".into()))?;
    let root = chol.l();

    let mut points = Vec::with_capacity(2 * d + 1);
    points.push(mean.clone());
    for i in 0..d {
        let col = root.column(i).into_owned();
        points.push(mean + &col);
        points.push(mean - &col);
    }
    let w0 = params.kappa / lambda;
    let wi = 0.5 / lambda;
    let weights: Vec<f64> = std::iter::once(w0).chain(std::iter::repeat_n(wi, 2 * d)).collect();

    let images: Vec<DVector<f64>> = points.iter().map(&h).collect();
    let m = images[0].len();
    if angular.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "angular mask has {} entries for a {m}-dimensional measurement",
            angular.len()
        )));
    }

    // Mean: accumulate deviations from the central image so angular
    // coordinates average on the correct branch.
    let reference = images[0].clone();
    let mut mean_dev = DVector::zeros(m);
    for (w, img) in weights.iter().zip(&images) {
        let mut dev = img - &reference;
        for k in 0..m {
            if angular[k] {
                dev[k] = wrap_angle(dev[k]);
            }
        }
        mean_dev += dev * *w;
    }
    let mut z_mean = reference + mean_dev;
    for k in 0..m {
        if angular[k] {
            z_mean[k] = wrap_angle(z_mean[k]);
        }
    }

    let mut spread = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(d, m);
    for ((w, img), point) in weights.iter().zip(&images).zip(&points) {
        let mut dz = img - &z_mean;
        for k in 0..m {
            if angular[k] {
                dz[k] = wrap_angle(dz[k]);
            }
        }
        spread += &dz * dz.transpose() * *w;
        cross += (point - mean) * dz.transpose() * *w;
    }
    let spread = (&spread + spread.transpose()) * 0.5;
    Ok((z_mean, spread, cross))
}
