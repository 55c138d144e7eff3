//! Gaussian-mixture probability hypothesis density filtering: linear motion
//! prediction with spawning and birth, measurement updates for linear
//! position sensors and range-bearing sensors, and state extraction.
//!
//! States are laid out `[px, vx, py, vy]` throughout the crate.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::gaussian::{
    gaussian_density, sanitize_covariance, GaussianComponent, GaussianMixture,
};
use crate::unscented::{unscented_measurement_moments, wrap_angle, UtParams};

/// Linear-Gaussian motion with per-step survival probability.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    transition: DMatrix<f64>,
    noise_input: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    survival_prob: f64,
    process_noise: DMatrix<f64>,
}

impl MotionModel {
    /// Builds a motion model `x' = F x + G u`, `u ~ N(0, Q)`, with survival
    /// probability `survival_prob` per step.
    pub fn new(
        transition: DMatrix<f64>,
        noise_input: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        survival_prob: f64,
    ) -> Result<Self> {
        let d = transition.nrows();
        if transition.ncols() != d {
            return Err(Error::DimensionMismatch("transition matrix must be square".into()));
        }
        if noise_input.nrows() != d || noise_input.ncols() != noise_cov.nrows() {
            return Err(Error::DimensionMismatch(
                "noise input and noise covariance dimensions disagree".into(),
            ));
        }
        if !(0.0..=1.0).contains(&survival_prob) {
            return Err(Error::Domain(format!(
                "survival probability must lie in [0, 1], got {survival_prob}"
            )));
        }
        let noise_cov = sanitize_covariance(noise_cov)?;
        let process_noise = sanitize_covariance(&noise_input * &noise_cov * noise_input.transpose())?;
        Ok(Self { transition, noise_input, noise_cov, survival_prob, process_noise })
    }

    /// Planar constant-velocity model over `[px, vx, py, vy]` with step
    /// `dt` and isotropic acceleration noise of variance `accel_var`.
    pub fn constant_velocity(dt: f64, accel_var: f64, survival_prob: f64) -> Result<Self> {
        let transition = DMatrix::from_row_slice(4, 4, &[
            1.0, dt, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, dt,
            0.0, 0.0, 0.0, 1.0,
        ]);
        let half = 0.5 * dt * dt;
        let noise_input = DMatrix::from_row_slice(4, 2, &[
            half, 0.0,
            dt, 0.0,
            0.0, half,
            0.0, dt,
        ]);
        let noise_cov = DMatrix::identity(2, 2) * accel_var;
        Self::new(transition, noise_input, noise_cov, survival_prob)
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn noise_input(&self) -> &DMatrix<f64> {
        &self.noise_input
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn survival_prob(&self) -> f64 {
        self.survival_prob
    }

    /// Additive state-space process noise `G Q G^T`.
    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_noise
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }
}

/// One term of the birth intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthComponent {
    rate: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl BirthComponent {
    pub fn new(rate: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Domain(format!("birth rate must be finite and non-negative, got {rate}")));
        }
        if covariance.nrows() != mean.len() {
            return Err(Error::DimensionMismatch("birth mean and covariance disagree".into()));
        }
        let covariance = sanitize_covariance(covariance)?;
        Ok(Self { rate, mean, covariance })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Birth and spawning intensity for the prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthModel {
    components: Vec<BirthComponent>,
    spawn_weight: f64,
    spawn_cov: DMatrix<f64>,
}

impl BirthModel {
    /// Builds a birth model; `spawn_weight` is the expected number of
    /// spawned targets per parent per step and `spawn_cov` the dispersion
    /// of a spawned state around its parent.
    pub fn new(components: Vec<BirthComponent>, spawn_weight: f64, spawn_cov: DMatrix<f64>) -> Result<Self> {
        if !(spawn_weight >= 0.0) || !spawn_weight.is_finite() {
            return Err(Error::Domain(format!(
                "spawn weight must be finite and non-negative, got {spawn_weight}"
            )));
        }
        let spawn_cov = sanitize_covariance(spawn_cov)?;
        Ok(Self { components, spawn_weight, spawn_cov })
    }

    pub fn components(&self) -> &[BirthComponent] {
        &self.components
    }

    pub fn spawn_weight(&self) -> f64 {
        self.spawn_weight
    }

    pub fn spawn_cov(&self) -> &DMatrix<f64> {
        &self.spawn_cov
    }

    /// Expected number of spontaneous births per step.
    pub fn total_birth_rate(&self) -> f64 {
        self.components.iter().map(BirthComponent::rate).sum()
    }
}

/// Detection probability as a function of the target state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionProfile {
    /// State-independent detection probability.
    Constant(f64),
    /// Peak probability at the sensor, decaying as an isotropic Gaussian of
    /// the target-to-sensor distance with the given length scale.
    RangeGaussian { peak: f64, length_scale: f64 },
}

impl DetectionProfile {
    /// Detection probability for a target at `state`, observed from
    /// `sensor_pos`.
    pub fn prob(&self, state: &DVector<f64>, sensor_pos: &Vector2<f64>) -> f64 {
        match self {
            Self::Constant(p) => *p,
            Self::RangeGaussian { peak, length_scale } => {
                let dx = state[0] - sensor_pos.x;
                let dy = state[2] - sensor_pos.y;
                peak * (-(dx * dx + dy * dy) / (2.0 * length_scale * length_scale)).exp()
            }
        }
    }
}

/// Region of measurement space a sensor observes; clutter is uniform over
/// it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fov {
    /// Axis-aligned rectangle in position space (linear sensors).
    Rectangle { x_min: f64, x_max: f64, y_min: f64, y_max: f64 },
    /// Disc of the given radius around the sensor; the measurement space is
    /// the product of ranges `[0, radius]` and bearings `(-pi, pi]`.
    Disc { radius: f64 },
}

impl Fov {
    /// Volume of the measurement space, the normalizer turning a clutter
    /// rate into a clutter intensity.
    pub fn volume(&self) -> f64 {
        match self {
            Self::Rectangle { x_min, x_max, y_min, y_max } => (x_max - x_min) * (y_max - y_min),
            Self::Disc { radius } => radius * 2.0 * std::f64::consts::PI,
        }
    }
}

/// Which observation function a sensor applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    /// Direct position observation through a linear map.
    Linear,
    /// Range and bearing relative to the sensor position.
    RangeBearing,
}

/// A sensing node: observation model, detection profile and clutter model.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    kind: SensorKind,
    position: Vector2<f64>,
    obs_matrix: DMatrix<f64>,
    obs_noise: DMatrix<f64>,
    detection: DetectionProfile,
    clutter_rate: f64,
    fov: Fov,
}

impl SensorModel {
    /// Linear position sensor with observation matrix `obs_matrix` and
    /// noise covariance `obs_noise`.
    pub fn linear(
        position: Vector2<f64>,
        obs_matrix: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
        detection: DetectionProfile,
        clutter_rate: f64,
        fov: Fov,
    ) -> Result<Self> {
        let obs_noise = sanitize_covariance(obs_noise)?;
        if obs_matrix.nrows() != obs_noise.nrows() {
            return Err(Error::DimensionMismatch(
                "observation matrix and noise covariance disagree".into(),
            ));
        }
        Self::validate_common(clutter_rate, &fov)?;
        Ok(Self { kind: SensorKind::Linear, position, obs_matrix, obs_noise, detection, clutter_rate, fov })
    }

    /// Range-bearing sensor with noise deviations `sigma_range` and
    /// `sigma_bearing` and a disc field of view of the given radius.
    pub fn range_bearing(
        position: Vector2<f64>,
        sigma_range: f64,
        sigma_bearing: f64,
        detection: DetectionProfile,
        clutter_rate: f64,
        fov_radius: f64,
    ) -> Result<Self> {
        if sigma_range <= 0.0 || sigma_bearing <= 0.0 {
            return Err(Error::Domain("measurement noise deviations must be positive".into()));
        }
        let fov = Fov::Disc { radius: fov_radius };
        Self::validate_common(clutter_rate, &fov)?;
        let obs_noise = DMatrix::from_diagonal(&DVector::from_vec(vec![
            sigma_range * sigma_range,
            sigma_bearing * sigma_bearing,
        ]));
        Ok(Self {
            kind: SensorKind::RangeBearing,
            position,
            obs_matrix: DMatrix::zeros(2, 4),
            obs_noise,
            detection,
            clutter_rate,
            fov,
        })
    }

    fn validate_common(clutter_rate: f64, fov: &Fov) -> Result<()> {
        if !(clutter_rate >= 0.0) || !clutter_rate.is_finite() {
            return Err(Error::Domain(format!(
                "clutter rate must be finite and non-negative, got {clutter_rate}"
            )));
        }
        if fov.volume() <= 0.0 {
            return Err(Error::Domain("field of view must have positive volume".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    pub fn position(&self) -> &Vector2<f64> {
        &self.position
    }

    pub fn obs_matrix(&self) -> &DMatrix<f64> {
        &self.obs_matrix
    }

    pub fn obs_noise(&self) -> &DMatrix<f64> {
        &self.obs_noise
    }

    pub fn detection(&self) -> &DetectionProfile {
        &self.detection
    }

    pub fn clutter_rate(&self) -> f64 {
        self.clutter_rate
    }

    pub fn fov(&self) -> &Fov {
        &self.fov
    }

    /// Clutter density over the measurement space: expected clutter count
    /// divided by the field-of-view volume.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate / self.fov.volume()
    }
}

/// Noise-free range-bearing observation of `state` from `sensor_pos`.
pub fn range_bearing_observation(state: &DVector<f64>, sensor_pos: &Vector2<f64>) -> DVector<f64> {
    let dx = state[0] - sensor_pos.x;
    let dy = state[2] - sensor_pos.y;
    DVector::from_vec(vec![(dx * dx + dy * dy).sqrt(), dy.atan2(dx)])
}

/// Prediction step: survival, spawning and birth.
///
/// Every prior component survives with its weight scaled by the survival
/// probability and its moments propagated through the motion model; every
/// prior component additionally spawns a copy at the parent mean with the
/// spawn dispersion added; the birth components are appended verbatim.
pub fn predict(prior: &GaussianMixture, motion: &MotionModel, birth: &BirthModel) -> Result<GaussianMixture> {
    let dim = prior.dim();
    if motion.dim() != dim && !prior.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "motion model dimension {} does not match mixture dimension {dim}",
            motion.dim()
        )));
    }
    let mut out = Vec::with_capacity(2 * prior.len() + birth.components().len());
    let f = motion.transition();
    let q = motion.process_noise();
    for c in prior.components() {
        let mean = f * c.mean();
        let cov = sanitize_covariance(f * c.covariance() * f.transpose() + q)?;
        out.push(GaussianComponent::from_valid_parts(
            c.weight() * motion.survival_prob(),
            mean,
            cov,
        ));
    }
    for c in prior.components() {
        let cov = sanitize_covariance(c.covariance() + birth.spawn_cov())?;
        out.push(GaussianComponent::from_valid_parts(
            c.weight() * birth.spawn_weight(),
            c.mean().clone(),
            cov,
        ));
    }
    for b in birth.components() {
        if b.mean().len() != dim {
            return Err(Error::DimensionMismatch(
                "birth component dimension does not match mixture dimension".into(),
            ));
        }
        out.push(GaussianComponent::from_valid_parts(b.rate(), b.mean().clone(), b.covariance().clone()));
    }
    GaussianMixture::new(dim, out)
}

struct UpdateTerm {
    predicted_meas: DVector<f64>,
    innovation_cov: DMatrix<f64>,
    gain: DMatrix<f64>,
    updated_cov: DMatrix<f64>,
    detect_prob: f64,
    angular: bool,
}

/// Measurement update of a predicted mixture against one sensor frame.
///
/// The output contains one misdetection copy of every predicted component
/// followed by, per measurement, one detection copy of every component with
/// weights normalized by the clutter intensity plus the total detection
/// likelihood.
pub fn update(
    predicted: &GaussianMixture,
    sensor: &SensorModel,
    measurements: &[DVector<f64>],
    ut: &UtParams,
) -> Result<GaussianMixture> {
    let dim = predicted.dim();
    let kappa = sensor.clutter_intensity();
    let mut terms = Vec::with_capacity(predicted.len());
    for c in predicted.components() {
        let detect_prob = sensor.detection().prob(c.mean(), sensor.position());
        let (z_pred, spread, cross, angular) = match sensor.kind() {
            SensorKind::Linear => {
                let h = sensor.obs_matrix();
                let z = h * c.mean();
                let spread = h * c.covariance() * h.transpose();
                let cross = c.covariance() * h.transpose();
                (z, spread, cross, false)
            }
            SensorKind::RangeBearing => {
                let range = range_bearing_observation(c.mean(), sensor.position())[0];
                if range < 1e-9 {
                    return Err(Error::NumericalDegeneracy(
                        "component mean coincides with the sensor position; bearing undefined".into(),
                    ));
                }
                let pos = *sensor.position();
                let (z, spread, cross) = unscented_measurement_moments(
                    c.mean(),
                    c.covariance(),
                    ut,
                    &[false, true],
                    |x| range_bearing_observation(x, &pos),
                )?;
                (z, spread, cross, true)
            }
        };
        let innovation_cov = sanitize_covariance(spread + sensor.obs_noise())?;
        let chol = innovation_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalDegeneracy("singular innovation covariance".into()))?;
        // gain = cross * S^-1, computed as (S^-1 * cross^T)^T.
        let gain = chol.solve(&cross.transpose()).transpose();
        let updated_cov = match sensor.kind() {
            SensorKind::Linear => {
                // Joseph form keeps the covariance PSD under roundoff.
                let ikh = DMatrix::identity(dim, dim) - &gain * sensor.obs_matrix();
                sanitize_covariance(&ikh * c.covariance() * ikh.transpose() + &gain * sensor.obs_noise() * gain.transpose())?
            }
            SensorKind::RangeBearing => {
                sanitize_covariance(c.covariance() - &gain * &innovation_cov * gain.transpose())?
            }
        };
        terms.push(UpdateTerm { predicted_meas: z_pred, innovation_cov, gain, updated_cov, detect_prob, angular });
    }

    let mut out = Vec::with_capacity(predicted.len() * (1 + measurements.len()));
    for (c, term) in predicted.components().iter().zip(&terms) {
        out.push(GaussianComponent::from_valid_parts(
            c.weight() * (1.0 - term.detect_prob),
            c.mean().clone(),
            c.covariance().clone(),
        ));
    }
    for z in measurements {
        if z.len() != sensor.obs_noise().nrows() {
            return Err(Error::DimensionMismatch(format!(
                "measurement of dimension {} for a sensor reporting dimension {}",
                z.len(),
                sensor.obs_noise().nrows()
            )));
        }
        let mut detected = Vec::with_capacity(predicted.len());
        let mut likelihood_sum = 0.0;
        for (c, term) in predicted.components().iter().zip(&terms) {
            let mut innovation = z - &term.predicted_meas;
            if term.angular {
                innovation[1] = wrap_angle(innovation[1]);
            }
            let density = gaussian_density(
                &DVector::zeros(innovation.len()),
                &innovation,
                &term.innovation_cov,
            )?;
            let weight = term.detect_prob * c.weight() * density;
            let mean = c.mean() + &term.gain * &innovation;
            detected.push(GaussianComponent::from_valid_parts(weight, mean, term.updated_cov.clone()));
            likelihood_sum += weight;
        }
        let denom = kappa + likelihood_sum;
        if denom <= 0.0 {
            // No clutter and no likelihood mass: this measurement explains
            // nothing and contributes nothing.
            continue;
        }
        for comp in detected {
            let w = comp.weight() / denom;
            out.push(GaussianComponent::from_valid_parts(w, comp.mean().clone(), comp.covariance().clone()));
        }
    }
    GaussianMixture::new(dim, out)
}

/// State extraction result.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Expected target count: the mixture weight sum.
    pub cardinality: f64,
    /// Nearest integer to the expected count.
    pub rounded: usize,
    /// Extracted states: means of components heavier than 0.5, repeated by
    /// their rounded weight when heavier than 1.5.
    pub states: Vec<DVector<f64>>,
}

/// Extracts the cardinality estimate and target states from a posterior.
pub fn estimate(gm: &GaussianMixture) -> Estimate {
    let cardinality = gm.weight_sum();
    let rounded = cardinality.round().max(0.0) as usize;
    let mut states = Vec::new();
    for c in gm.components() {
        if c.weight() > 0.5 {
            let copies = if c.weight() > 1.5 { c.weight().round() as usize } else { 1 };
            for _ in 0..copies {
                states.push(c.mean().clone());
            }
        }
    }
    Estimate { cardinality, rounded, states }
}

/// Planar position `[px, py]` of a state laid out `[px, vx, py, vy]`.
pub fn position_of(state: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![state[0], state[2]])
}
