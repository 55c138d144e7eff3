//! Ground truth and measurement generation for the tracking experiments,
//! plus the default surveillance setup: a 2000 x 2000 region watched by
//! linear position sensors and range-bearing sensors, constant-velocity
//! targets born near four fixed sites.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::filter::{
    range_bearing_observation, BirthComponent, BirthModel, DetectionProfile, Fov, MotionModel,
    SensorKind, SensorModel,
};
use crate::network::{NodeInfo, Region};
use crate::unscented::wrap_angle;

/// Which target configuration an experiment simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// At most one target alive at a time, with a death and a later birth.
    SingleTarget,
    /// Up to three concurrent targets, including one spawned target.
    MultiTarget,
}

/// One target's lifetime: consecutive states from its birth step onward.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrack {
    pub id: usize,
    /// Id of the track this one spawned from, if any.
    pub parent: Option<usize>,
    pub birth_step: usize,
    /// States `[px, vx, py, vy]` at steps `birth_step`, `birth_step + 1`,
    /// and so on.
    pub states: Vec<DVector<f64>>,
}

impl TargetTrack {
    /// Last step this track is alive.
    pub fn death_step(&self) -> usize {
        self.birth_step + self.states.len() - 1
    }

    pub fn alive_at(&self, step: usize) -> bool {
        step >= self.birth_step && step <= self.death_step()
    }

    pub fn state_at(&self, step: usize) -> Option<&DVector<f64>> {
        self.alive_at(step).then(|| &self.states[step - self.birth_step])
    }
}

/// Every target trajectory of one simulated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    steps: usize,
    tracks: Vec<TargetTrack>,
}

impl GroundTruth {
    pub fn new(steps: usize, tracks: Vec<TargetTrack>) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain("a scene needs at least one step".into()));
        }
        for (i, track) in tracks.iter().enumerate() {
            if track.id != i {
                return Err(Error::Domain(format!(
                    "track at index {i} carries id {}; ids must be 0..n in order",
                    track.id
                )));
            }
            if track.states.is_empty() {
                return Err(Error::Domain(format!("track {i} has no states")));
            }
            if track.death_step() >= steps {
                return Err(Error::Domain(format!(
                    "track {i} lives past the last step {}",
                    steps - 1
                )));
            }
            if let Some(p) = track.parent {
                if p >= i {
                    return Err(Error::Domain(format!(
                        "track {i} spawned from track {p}, which is not an earlier track"
                    )));
                }
            }
            if track.states.iter().any(|s| s.len() != 4) {
                return Err(Error::DimensionMismatch(format!(
                    "track {i} has a state of the wrong dimension"
                )));
            }
        }
        Ok(Self { steps, tracks })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tracks(&self) -> &[TargetTrack] {
        &self.tracks
    }

    /// States of every track alive at `step`, in track order.
    pub fn live_states(&self, step: usize) -> Vec<&DVector<f64>> {
        self.tracks.iter().filter_map(|t| t.state_at(step)).collect()
    }

    /// Positions `[px, py]` of every track alive at `step`.
    pub fn live_positions(&self, step: usize) -> Vec<DVector<f64>> {
        self.live_states(step)
            .into_iter()
            .map(|s| DVector::from_vec(vec![s[0], s[2]]))
            .collect()
    }

    /// Number of targets alive at `step`.
    pub fn cardinality(&self, step: usize) -> usize {
        self.tracks.iter().filter(|t| t.alive_at(step)).count()
    }
}

fn cv_track(
    id: usize,
    parent: Option<usize>,
    birth_step: usize,
    initial: [f64; 4],
    death_step: usize,
    steps: usize,
) -> Option<TargetTrack> {
    if birth_step >= steps {
        return None;
    }
    let death = death_step.min(steps - 1);
    let f = MotionModel::constant_velocity(1.0, 25.0, 0.99)
        .expect("constant-velocity model is valid")
        .transition()
        .clone();
    let mut states = Vec::with_capacity(death - birth_step + 1);
    let mut x = DVector::from_row_slice(&initial);
    states.push(x.clone());
    for _ in birth_step..death {
        x = &f * &x;
        states.push(x.clone());
    }
    Some(TargetTrack { id, parent, birth_step, states })
}

/// Deterministic reference scenes: straight-line constant-velocity tracks
/// with fixed births, deaths and one spawning.
///
/// The single-target scene has one track over steps 0 to 69 and a second
/// over steps 75 onward, so the scene passes through an empty stretch. The
/// multi-target scene holds up to three concurrent tracks, the last of
/// which branches off an existing one. Timelines are truncated to `steps`.
pub fn scripted_truth(kind: ScenarioKind, steps: usize) -> Result<GroundTruth> {
    // Targets appear at the birth sites of the default birth model so a
    // filter running that model can acquire them.
    let specs: Vec<(Option<usize>, usize, [f64; 4], usize)> = match kind {
        ScenarioKind::SingleTarget => vec![
            (None, 0, [-500.0, 8.0, -500.0, 7.0], 69),
            (None, 75, [500.0, -10.0, -500.0, 9.0], usize::MAX - 1),
        ],
        ScenarioKind::MultiTarget => vec![
            (None, 0, [-500.0, 10.0, -500.0, 8.0], 70),
            (None, 10, [500.0, -12.0, -500.0, 10.0], usize::MAX - 1),
            (None, 20, [0.0, 14.0, 500.0, -12.0], 60),
            (Some(1), 65, [-155.0, 8.0, 55.0, -14.0], usize::MAX - 1),
        ],
    };
    let mut tracks = Vec::new();
    for (parent, birth, initial, death) in specs {
        if let Some(track) = cv_track(tracks.len(), parent, birth, initial, death, steps) {
            tracks.push(track);
        }
    }
    GroundTruth::new(steps, tracks)
}

fn sample_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalDegeneracy("sampling needs a positive-definite covariance".into()))?;
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    Ok(mean + chol.l() * z)
}

fn sample_poisson(rate: f64, rng: &mut impl Rng) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("rate is positive").sample(rng) as usize
}

fn in_region(state: &DVector<f64>, region: &Region) -> bool {
    region.contains(&Vector2::new(state[0], state[2]))
}

/// Samples a random scene from the generative target model: Poisson births
/// at the birth sites, spawning off live targets, per-step survival and
/// noisy constant-velocity motion. Tracks die when they fail the survival
/// draw or leave the region. The concurrent target count is capped at one
/// for the single-target scene and three for the multi-target scene; births
/// are suppressed while the cap is reached.
pub fn simulate_truth(
    kind: ScenarioKind,
    steps: usize,
    motion: &MotionModel,
    birth: &BirthModel,
    region: &Region,
    seed: u64,
) -> Result<GroundTruth> {
    let cap = match kind {
        ScenarioKind::SingleTarget => 1,
        ScenarioKind::MultiTarget => 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracks: Vec<TargetTrack> = Vec::new();
    // Indices into `tracks` of the targets alive at the previous step.
    let mut alive: Vec<usize> = Vec::new();
    for step in 0..steps {
        let mut next_alive = Vec::new();
        if step > 0 {
            for &idx in &alive {
                if !rng.gen_bool(motion.survival_prob()) {
                    continue;
                }
                let prev = tracks[idx].states.last().expect("alive tracks have states");
                let noise = sample_gaussian(
                    &DVector::zeros(motion.noise_cov().nrows()),
                    motion.noise_cov(),
                    &mut rng,
                )?;
                let state = motion.transition() * prev + motion.noise_input() * noise;
                if in_region(&state, region) {
                    tracks[idx].states.push(state);
                    next_alive.push(idx);
                }
            }
            for &parent_idx in &alive {
                if next_alive.len() >= cap {
                    break;
                }
                if !rng.gen_bool(birth.spawn_weight().min(1.0)) {
                    continue;
                }
                let parent_state = if tracks[parent_idx].alive_at(step) {
                    tracks[parent_idx].states[step - tracks[parent_idx].birth_step].clone()
                } else {
                    tracks[parent_idx].states.last().expect("tracks have states").clone()
                };
                let state = sample_gaussian(&parent_state, birth.spawn_cov(), &mut rng)?;
                if in_region(&state, region) {
                    let id = tracks.len();
                    tracks.push(TargetTrack {
                        id,
                        parent: Some(parent_idx),
                        birth_step: step,
                        states: vec![state],
                    });
                    next_alive.push(id);
                }
            }
        }
        for comp in birth.components() {
            let count = sample_poisson(comp.rate(), &mut rng);
            for _ in 0..count {
                if next_alive.len() >= cap {
                    break;
                }
                let state = sample_gaussian(comp.mean(), comp.covariance(), &mut rng)?;
                if in_region(&state, region) {
                    let id = tracks.len();
                    tracks.push(TargetTrack { id, parent: None, birth_step: step, states: vec![state] });
                    next_alive.push(id);
                }
            }
        }
        alive = next_alive;
    }
    GroundTruth::new(steps, tracks)
}

/// Measurement frames one sensor produced over a whole scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrames {
    steps: Vec<Vec<DVector<f64>>>,
}

impl SensorFrames {
    pub fn new(steps: Vec<Vec<DVector<f64>>>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Measurements recorded at `step`.
    pub fn frame(&self, step: usize) -> &[DVector<f64>] {
        &self.steps[step]
    }
}

fn detectable(state: &DVector<f64>, sensor: &SensorModel) -> bool {
    match sensor.fov() {
        Fov::Rectangle { x_min, x_max, y_min, y_max } => {
            state[0] >= *x_min && state[0] <= *x_max && state[2] >= *y_min && state[2] <= *y_max
        }
        Fov::Disc { radius } => {
            let dx = state[0] - sensor.position().x;
            let dy = state[2] - sensor.position().y;
            (dx * dx + dy * dy).sqrt() <= *radius
        }
    }
}

/// Samples every frame one sensor records over the scene: detections of
/// in-view targets at the sensor's detection probability with measurement
/// noise, plus Poisson clutter uniform over the sensor's measurement space.
/// Each frame is shuffled so measurement order carries no information.
pub fn generate_measurements(
    truth: &GroundTruth,
    sensor: &SensorModel,
    seed: u64,
) -> Result<SensorFrames> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(truth.steps());
    for step in 0..truth.steps() {
        let mut frame = Vec::new();
        for state in truth.live_states(step) {
            if !detectable(state, sensor) {
                continue;
            }
            let pd = sensor.detection().prob(state, sensor.position()).clamp(0.0, 1.0);
            if !rng.gen_bool(pd) {
                continue;
            }
            let noise =
                sample_gaussian(&DVector::zeros(sensor.obs_noise().nrows()), sensor.obs_noise(), &mut rng)?;
            let z = match sensor.kind() {
                SensorKind::Linear => sensor.obs_matrix() * state + noise,
                SensorKind::RangeBearing => {
                    let mut z = range_bearing_observation(state, sensor.position()) + noise;
                    z[1] = wrap_angle(z[1]);
                    z
                }
            };
            frame.push(z);
        }
        for _ in 0..sample_poisson(sensor.clutter_rate(), &mut rng) {
            let z = match sensor.fov() {
                Fov::Rectangle { x_min, x_max, y_min, y_max } => DVector::from_vec(vec![
                    rng.gen_range(*x_min..*x_max),
                    rng.gen_range(*y_min..*y_max),
                ]),
                Fov::Disc { radius } => DVector::from_vec(vec![
                    rng.gen_range(0.0..*radius),
                    wrap_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)),
                ]),
            };
            frame.push(z);
        }
        frame.shuffle(&mut rng);
        steps.push(frame);
    }
    Ok(SensorFrames::new(steps))
}

/// Serializes a scene as CSV with one row per track per step.
pub fn truth_to_csv(truth: &GroundTruth) -> String {
    let mut out = String::from("step,track,parent,px,vx,py,vy\n");
    for track in truth.tracks() {
        let parent = track.parent.map(|p| p.to_string()).unwrap_or_default();
        for (k, s) in track.states.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                track.birth_step + k,
                track.id,
                parent,
                s[0],
                s[1],
                s[2],
                s[3]
            ));
        }
    }
    out
}

fn csv_rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Config(format!("malformed CSV field {field:?} on line {line}")))
}

/// Parses a scene from the CSV layout written by [`truth_to_csv`]. The step
/// count is external because trailing empty steps leave no rows.
pub fn truth_from_csv(text: &str, steps: usize) -> Result<GroundTruth> {
    let mut rows: Vec<(usize, usize, Option<usize>, [f64; 4])> = Vec::new();
    for (line, row) in csv_rows(text) {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Config(format!(
                "expected 7 CSV fields on line {line}, found {}",
                fields.len()
            )));
        }
        let step = parse_field(fields[0], line)?;
        let track = parse_field(fields[1], line)?;
        let parent = if fields[2].is_empty() { None } else { Some(parse_field(fields[2], line)?) };
        let state = [
            parse_field(fields[3], line)?,
            parse_field(fields[4], line)?,
            parse_field(fields[5], line)?,
            parse_field(fields[6], line)?,
        ];
        rows.push((track, step, parent, state));
    }
    rows.sort_by_key(|(track, step, ..)| (*track, *step));
    let mut tracks: Vec<TargetTrack> = Vec::new();
    for (track, step, parent, state) in rows {
        let state = DVector::from_row_slice(&state);
        match tracks.last_mut() {
            Some(t) if t.id == track => {
                if step != t.death_step() + 1 {
                    return Err(Error::Config(format!(
                        "track {track} skips from step {} to {step}",
                        t.death_step()
                    )));
                }
                if parent != t.parent {
                    return Err(Error::Config(format!("track {track} changes parent mid-life")));
                }
                t.states.push(state);
            }
            _ => tracks.push(TargetTrack { id: track, parent, birth_step: step, states: vec![state] }),
        }
    }
    GroundTruth::new(steps, tracks)
}

/// Serializes per-sensor measurement frames as CSV, one row per
/// measurement.
pub fn frames_to_csv(all: &[SensorFrames]) -> String {
    let mut out = String::from("step,sensor,z1,z2\n");
    for (sensor, frames) in all.iter().enumerate() {
        for step in 0..frames.len() {
            for z in frames.frame(step) {
                out.push_str(&format!("{},{},{},{}\n", step, sensor, z[0], z[1]));
            }
        }
    }
    out
}

/// Parses the CSV layout written by [`frames_to_csv`]; the sensor count and
/// step count are external because empty frames leave no rows.
pub fn frames_from_csv(text: &str, sensors: usize, steps: usize) -> Result<Vec<SensorFrames>> {
    let mut all = vec![vec![Vec::new(); steps]; sensors];
    for (line, row) in csv_rows(text) {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!(
                "expected 4 CSV fields on line {line}, found {}",
                fields.len()
            )));
        }
        let step: usize = parse_field(fields[0], line)?;
        let sensor: usize = parse_field(fields[1], line)?;
        if sensor >= sensors || step >= steps {
            return Err(Error::Config(format!(
                "measurement on line {line} addresses sensor {sensor}, step {step}, outside {sensors} sensors x {steps} steps"
            )));
        }
        all[sensor][step].push(DVector::from_vec(vec![
            parse_field(fields[2], line)?,
            parse_field(fields[3], line)?,
        ]));
    }
    Ok(all.into_iter().map(SensorFrames::new).collect())
}

/// The 2000 x 2000 surveillance region.
pub fn default_region() -> Region {
    Region::new(-1000.0, 1000.0, -1000.0, 1000.0).expect("region bounds are valid")
}

/// Unit-step constant-velocity motion with acceleration variance 25 and
/// survival probability 0.99.
pub fn default_motion() -> MotionModel {
    MotionModel::constant_velocity(1.0, 25.0, 0.99).expect("motion parameters are valid")
}

/// Four birth sites (center and three corners-of-interest) with a shared
/// per-site rate, plus spawning with weight 0.05.
pub fn default_birth(rate: f64) -> Result<BirthModel> {
    let site_cov = DMatrix::from_diagonal(&DVector::from_vec(vec![400.0, 100.0, 400.0, 100.0]));
    let sites = [
        [0.0, 0.0, 0.0, 0.0],
        [-500.0, 0.0, -500.0, 0.0],
        [0.0, 0.0, 500.0, 0.0],
        [500.0, 0.0, -500.0, 0.0],
    ];
    let components = sites
        .iter()
        .map(|m| BirthComponent::new(rate, DVector::from_row_slice(m), site_cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    let spawn_cov = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 400.0, 100.0, 400.0]));
    BirthModel::new(components, 0.05, spawn_cov)
}

/// Direct position sensor: observation noise `100 I`, constant detection
/// probability 0.95, rectangular field of view covering the whole region.
pub fn linear_sensor_at(position: Vector2<f64>, clutter_rate: f64) -> Result<SensorModel> {
    let region = default_region();
    SensorModel::linear(
        position,
        DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        DMatrix::identity(2, 2) * 100.0,
        DetectionProfile::Constant(0.95),
        clutter_rate,
        Fov::Rectangle {
            x_min: region.x_min,
            x_max: region.x_max,
            y_min: region.y_min,
            y_max: region.y_max,
        },
    )
}

/// Range-bearing sensor: range deviation 10, bearing deviation two degrees,
/// detection probability peaking at 0.95 and decaying with distance, disc
/// field of view of radius 3000.
pub fn range_bearing_sensor_at(position: Vector2<f64>, clutter_rate: f64) -> Result<SensorModel> {
    SensorModel::range_bearing(
        position,
        10.0,
        std::f64::consts::PI / 90.0,
        DetectionProfile::RangeGaussian { peak: 0.95, length_scale: 6000.0 },
        clutter_rate,
        3000.0,
    )
}

/// Default sensor for a network node, chosen by the node's sensing kind.
pub fn sensor_for(node: &NodeInfo, clutter_rate: f64) -> Result<SensorModel> {
    match node.kind {
        SensorKind::Linear => linear_sensor_at(node.position, clutter_rate),
        SensorKind::RangeBearing => range_bearing_sensor_at(node.position, clutter_rate),
    }
}
