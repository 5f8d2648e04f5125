//! Multi-target tracking from a UAV swarm: world simulation, range and bearing sensing,
//! per-step budgeted selection and EKF estimation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bound::Design;
use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::model::{PriorSpec, Problem, QuadraticObservation};
use crate::select::{self, Scheme};
use crate::synth::NoiseSpec;

/// Detection radius: fixed, or calibrated so the swarm collects a target number of
/// measurements per step on average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusSpec {
    Auto,
    Fixed(f64),
}

impl Serialize for RadiusSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RadiusSpec::Auto => s.serialize_str("auto"),
            RadiusSpec::Fixed(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for RadiusSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(r) => Ok(RadiusSpec::Fixed(r)),
            Raw::Word(w) if w == "auto" => Ok(RadiusSpec::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "radius must be a number or \"auto\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Random-walk process noise `q·I` per step.
    pub q: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self { q: 0.04 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub n_targets: usize,
    pub n_uavs: usize,
    /// `[width, height]`.
    pub area: [f64; 2],
    pub speed: f64,
    pub uav_speed: f64,
    pub steps: usize,
    pub budget_fraction: f64,
    pub noise: NoiseSpec,
    /// Bearing noise std as a multiple of the pair's range noise std.
    pub bearing_scale: f64,
    pub radius: RadiusSpec,
    /// `[low, high]` band for the mean batch size targeted by calibration.
    pub measurement_band: [f64; 2],
    pub ekf: EkfConfig,
    pub instances: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            n_targets: 10,
            n_uavs: 10,
            area: [5.0, 10.0],
            speed: 0.2,
            uav_speed: 0.5,
            steps: 60,
            budget_fraction: 0.1,
            noise: NoiseSpec::Identical { sigma: 0.01 },
            bearing_scale: 1.0,
            radius: RadiusSpec::Auto,
            measurement_band: [130.0, 170.0],
            ekf: EkfConfig::default(),
            instances: 50,
            seed: 0,
            schemes: vec![
                Scheme::Quadratic(Criterion::A),
                Scheme::Quadratic(Criterion::D),
                Scheme::Linearized,
                Scheme::Random,
            ],
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_targets == 0 || self.n_uavs == 0 {
            return bad("n_targets and n_uavs must be positive");
        }
        if !(self.area[0] > 0.0 && self.area[1] > 0.0) {
            return bad("area must be positive");
        }
        if self.speed < 0.0 || self.uav_speed < 0.0 {
            return bad("speeds must be non-negative");
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad("budget_fraction must lie in (0, 1]");
        }
        if self.instances == 0 || self.steps == 0 {
            return bad("instances and steps must be positive");
        }
        if self.ekf.q < 0.0 || self.bearing_scale < 0.0 {
            return bad("ekf.q and bearing_scale must be non-negative");
        }
        if let RadiusSpec::Fixed(r) = self.radius {
            if r <= 0.0 || !r.is_finite() {
                return bad("radius must be positive");
            }
        }
        if !(self.measurement_band[0] > 0.0 && self.measurement_band[1] >= self.measurement_band[0]) {
            return bad("measurement_band must be positive and increasing");
        }
        if self.schemes.is_empty() {
            return bad("schemes is empty");
        }
        if let NoiseSpec::Identical { sigma } = self.noise {
            // zero noise is allowed here for sanity runs
            if sigma < 0.0 {
                return bad("noise.sigma must be non-negative");
            }
        } else {
            self.noise.validate()?;
        }
        Ok(())
    }

    /// `max{1, round(fraction · n)}`, capped at `n`.
    pub fn budget(&self, n: usize) -> usize {
        ((self.budget_fraction * n as f64).round() as usize).clamp(1, n.max(1))
    }

    fn lane_height(&self) -> f64 {
        self.area[1] / self.n_uavs as f64
    }

    /// Length of one lawn-mower loop.
    pub fn uav_period_length(&self) -> f64 {
        2.0 * self.area[0] + self.lane_height()
    }
}

/// Positions at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub t: usize,
    pub targets: Vec<Vector2<f64>>,
    pub uavs: Vec<Vector2<f64>>,
    /// Arc-length offsets of the UAVs along their loops.
    pub phases: Vec<f64>,
}

/// Point at arc length `s` of UAV `lane`'s loop: out along the lower row, up, back along
/// the upper row, down.
pub fn uav_position(config: &TrackingConfig, lane: usize, s: f64) -> Vector2<f64> {
    let w = config.area[0];
    let lh = config.lane_height();
    let yc = (lane as f64 + 0.5) * lh;
    let (lo, hi) = (yc - lh / 4.0, yc + lh / 4.0);
    let s = s.rem_euclid(config.uav_period_length());
    let rise = lh / 2.0;
    if s < w {
        Vector2::new(s, lo)
    } else if s < w + rise {
        Vector2::new(w, lo + (s - w))
    } else if s < 2.0 * w + rise {
        Vector2::new(w - (s - w - rise), hi)
    } else {
        Vector2::new(0.0, hi - (s - 2.0 * w - rise))
    }
}

fn uavs_at(config: &TrackingConfig, phases: &[f64], t: usize) -> Vec<Vector2<f64>> {
    phases
        .iter()
        .enumerate()
        .map(|(lane, p)| uav_position(config, lane, p + t as f64 * config.uav_speed))
        .collect()
}

fn reflect(v: f64, hi: f64) -> f64 {
    let period = 2.0 * hi;
    let r = v.rem_euclid(period);
    if r > hi {
        period - r
    } else {
        r
    }
}

pub fn initial_world<R: Rng + ?Sized>(config: &TrackingConfig, rng: &mut R) -> WorldState {
    let l = config.uav_period_length();
    let phases: Vec<f64> = (0..config.n_uavs).map(|_| rng.random_range(0.0..l)).collect();
    let targets = (0..config.n_targets)
        .map(|_| {
            Vector2::new(
                rng.random_range(0.0..config.area[0]),
                rng.random_range(0.0..config.area[1]),
            )
        })
        .collect();
    WorldState {
        t: 0,
        uavs: uavs_at(config, &phases, 0),
        targets,
        phases,
    }
}

/// Targets take a `speed`-length step in a fresh uniform heading (reflected at the walls);
/// UAVs advance along their loops.
pub fn step_world<R: Rng + ?Sized>(config: &TrackingConfig, world: &WorldState, rng: &mut R) -> WorldState {
    let targets = world
        .targets
        .iter()
        .map(|s| {
            let heading = rng.random_range(0.0..2.0 * PI);
            let moved = s + Vector2::new(heading.cos(), heading.sin()) * config.speed;
            Vector2::new(reflect(moved.x, config.area[0]), reflect(moved.y, config.area[1]))
        })
        .collect();
    let t = world.t + 1;
    WorldState {
        t,
        uavs: uavs_at(config, &world.phases, t),
        targets,
        phases: world.phases.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Range,
    Bearing,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub kind: Kind,
    pub uav: usize,
    pub target: usize,
    pub value: f64,
    pub sigma2: f64,
    pub uav_position: Vector2<f64>,
}

/// `½‖u − s‖²`.
pub fn range_model(u: &Vector2<f64>, s: &Vector2<f64>) -> f64 {
    0.5 * (u - s).norm_squared()
}

/// `arctan((u₁ − s₁)/(u₂ − s₂))`.
pub fn bearing_model(u: &Vector2<f64>, s: &Vector2<f64>) -> f64 {
    ((u.x - s.x) / (u.y - s.y)).atan()
}

/// Gradient of [`bearing_model`] with respect to `s`.
pub fn bearing_gradient(u: &Vector2<f64>, s: &Vector2<f64>) -> Vector2<f64> {
    let d = u - s;
    let r2 = d.norm_squared();
    Vector2::new(-d.y / r2, d.x / r2)
}

/// Wraps a bearing residual into `(−π/2, π/2]`.
pub fn wrap_bearing(v: f64) -> f64 {
    let r = (v + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if r == -PI / 2.0 {
        PI / 2.0
    } else {
        r
    }
}

/// Noisy range and bearing for every UAV–target pair within `radius`. Noise is drawn for
/// every pair so the stream does not depend on the detection pattern.
pub fn sense<R: Rng + ?Sized>(
    config: &TrackingConfig,
    world: &WorldState,
    radius: f64,
    rng: &mut R,
) -> Vec<Measurement> {
    let mut batch = Vec::new();
    for (i, u) in world.uavs.iter().enumerate() {
        for (j, s) in world.targets.iter().enumerate() {
            let sigma2 = config.noise.draw(rng, 1)[0];
            let eta2 = sigma2 * config.bearing_scale * config.bearing_scale;
            let nr: f64 = StandardNormal.sample(rng);
            let nb: f64 = StandardNormal.sample(rng);
            if (u - s).norm() > radius {
                continue;
            }
            let common = |kind, value, sigma2| Measurement {
                kind,
                uav: i,
                target: j,
                value,
                sigma2,
                uav_position: *u,
            };
            batch.push(common(Kind::Range, range_model(u, s) + sigma2.sqrt() * nr, sigma2));
            batch.push(common(
                Kind::Bearing,
                wrap_bearing(bearing_model(u, s) + eta2.sqrt() * nb),
                eta2,
            ));
        }
    }
    batch
}

/// Per-target Gaussian beliefs.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub means: Vec<Vector2<f64>>,
    pub covs: Vec<Matrix2<f64>>,
    pub q: f64,
    /// Means are projected back onto `[0, w] × [0, h]` after each update.
    pub area: [f64; 2],
}

const COV_FLOOR: f64 = 1e-12;

fn repair(p: &Matrix2<f64>) -> Matrix2<f64> {
    let sym = (p + p.transpose()) * 0.5;
    let lo = sym.symmetric_eigenvalues().min();
    if lo < COV_FLOOR {
        sym + Matrix2::identity() * (COV_FLOOR - lo)
    } else {
        sym
    }
}

impl EkfState {
    /// Every target at the area center with the variance of a uniform position.
    pub fn uninformed(config: &TrackingConfig) -> Self {
        let [w, h] = config.area;
        let center = Vector2::new(w / 2.0, h / 2.0);
        let cov = Matrix2::new(w * w / 12.0, 0.0, 0.0, h * h / 12.0);
        Self {
            means: vec![center; config.n_targets],
            covs: vec![cov; config.n_targets],
            q: config.ekf.q,
            area: config.area,
        }
    }

    pub fn predict(&mut self) {
        for p in &mut self.covs {
            *p += Matrix2::identity() * self.q;
        }
    }

    /// Sequential scalar updates, each linearized at the current mean (Joseph form).
    pub fn update(&mut self, batch: &[Measurement]) {
        for meas in batch {
            let j = meas.target;
            let (s, p) = (self.means[j], self.covs[j]);
            let u = meas.uav_position;
            let (h, residual) = match meas.kind {
                Kind::Range => (s - u, meas.value - range_model(&u, &s)),
                Kind::Bearing => (
                    bearing_gradient(&u, &s),
                    wrap_bearing(meas.value - bearing_model(&u, &s)),
                ),
            };
            let ph = p * h;
            let innovation_var = h.dot(&ph) + meas.sigma2;
            if innovation_var <= 0.0 || !innovation_var.is_finite() {
                continue;
            }
            let gain = ph / innovation_var;
            let i_kh = Matrix2::identity() - gain * h.transpose();
            let moved = s + gain * residual;
            self.means[j] = Vector2::new(
                moved.x.clamp(0.0, self.area[0]),
                moved.y.clamp(0.0, self.area[1]),
            );
            self.covs[j] =
                repair(&(i_kh * p * i_kh.transpose() + gain * gain.transpose() * meas.sigma2));
        }
    }

    /// `Σ_j ‖ŝ_j − s_j‖²`.
    pub fn squared_error(&self, targets: &[Vector2<f64>]) -> f64 {
        self.means
            .iter()
            .zip(targets)
            .map(|(m, s)| (m - s).norm_squared())
            .sum()
    }
}

/// Joint selection problem over the detected targets (in ascending target order, one
/// 2-dim block each, block-diagonal prior from the EKF). Ranges are quadratic with
/// `X = I` on the block and `z = −u` in raw coordinates (so the centered `z̃ = ŝ − u`);
/// bearings are linearized at `ŝ`. Returns `None` for an empty batch.
pub fn build_selection_problem(
    batch: &[Measurement],
    ekf: &EkfState,
) -> Result<Option<(Problem, Vec<usize>)>> {
    if batch.is_empty() {
        return Ok(None);
    }
    let mut detected: Vec<usize> = batch.iter().map(|m| m.target).collect();
    detected.sort_unstable();
    detected.dedup();
    if let Some(&j) = detected.iter().find(|&&j| j >= ekf.means.len()) {
        return Err(Error::Invalid(format!("no prior for detected target {j}")));
    }
    let dim = 2 * detected.len();
    let block = |j: usize| 2 * detected.binary_search(&j).expect("detected");

    let mut cov = DMatrix::zeros(dim, dim);
    let mut mean = DVector::zeros(dim);
    for (b, &j) in detected.iter().enumerate() {
        cov.view_mut((2 * b, 2 * b), (2, 2)).copy_from(&ekf.covs[j]);
        mean.rows_mut(2 * b, 2).copy_from(&ekf.means[j]);
    }
    let prior = PriorSpec::gaussian(mean, cov)?;
    let observations = batch
        .iter()
        .map(|m| {
            let b = block(m.target);
            let mut z = DVector::zeros(dim);
            match m.kind {
                Kind::Range => {
                    let mut x = DMatrix::zeros(dim, dim);
                    x[(b, b)] = 1.0;
                    x[(b + 1, b + 1)] = 1.0;
                    z.rows_mut(b, 2).copy_from(&(-m.uav_position));
                    QuadraticObservation::new(x, z, m.sigma2)
                }
                Kind::Bearing => {
                    let g = bearing_gradient(&m.uav_position, &ekf.means[m.target]);
                    z.rows_mut(b, 2).copy_from(&g);
                    QuadraticObservation::linear(z, m.sigma2)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some((Problem::new(prior, observations)?, detected)))
}

/// Picks `k` entries of `problem` under `scheme`.
fn choose(problem: &Problem, k: usize, scheme: Scheme, seed: u64) -> Result<Vec<usize>> {
    let chosen = match scheme {
        Scheme::Quadratic(c) => {
            let design = Design::from_problem(problem)?;
            select::lazy_greedy(&design, k, c, None)?.chosen
        }
        Scheme::Linearized => select::linearized(problem, k, Criterion::A, None)?.chosen,
        Scheme::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, problem.len(), k).into_vec()
        }
    };
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub scheme: String,
    pub criterion: String,
    pub instance: usize,
    pub step: usize,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingOutput {
    pub rows: Vec<TrackingRow>,
    pub radius: f64,
    /// Mean batch size per step over all instances.
    pub mean_batch: f64,
}

/// Pre-simulated world trajectory and measurement batches of one instance.
struct Episode {
    worlds: Vec<WorldState>,
    batches: Vec<Vec<Measurement>>,
}

fn simulate_episode(config: &TrackingConfig, instance: usize, radius: f64) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(instance as u64);
    let mut world = initial_world(config, &mut rng);
    let mut worlds = Vec::with_capacity(config.steps);
    let mut batches = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        world = step_world(config, &world, &mut rng);
        batches.push(sense(config, &world, radius, &mut rng));
        worlds.push(world.clone());
    }
    Episode { worlds, batches }
}

fn pair_count(config: &TrackingConfig, instances: usize, radius: f64) -> f64 {
    let mut total = 0usize;
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xCA11_B8A7E);
        rng.set_stream(inst as u64);
        let mut world = initial_world(config, &mut rng);
        for _ in 0..config.steps {
            world = step_world(config, &world, &mut rng);
            for u in &world.uavs {
                total += world.targets.iter().filter(|s| (*u - *s).norm() <= radius).count();
            }
        }
    }
    total as f64 / (instances * config.steps) as f64
}

/// Bisection on the detection radius so the mean number of entries per step (two per
/// detected pair) hits the middle of `measurement_band`.
pub fn calibrate_radius(config: &TrackingConfig) -> f64 {
    let target = 0.5 * (config.measurement_band[0] + config.measurement_band[1]);
    let (mut lo, mut hi) = (0.0, config.area[0].hypot(config.area[1]));
    let instances = 8;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * pair_count(config, instances, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn resolve_radius(config: &TrackingConfig) -> f64 {
    match config.radius {
        RadiusSpec::Fixed(r) => r,
        RadiusSpec::Auto => calibrate_radius(config),
    }
}

fn run_instance(config: &TrackingConfig, instance: usize, radius: f64) -> Result<(Vec<TrackingRow>, usize)> {
    let episode = simulate_episode(config, instance, radius);
    let mut select_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5E1EC7);
    select_rng.set_stream(instance as u64);
    let random_seeds: Vec<u64> = (0..config.steps).map(|_| select_rng.next_u64()).collect();
    let batch_total: usize = episode.batches.iter().map(Vec::len).sum();

    let mut rows = Vec::with_capacity(config.schemes.len() * config.steps);
    for &scheme in &config.schemes {
        let mut ekf = EkfState::uninformed(config);
        for (step, (world, batch)) in episode.worlds.iter().zip(&episode.batches).enumerate() {
            ekf.predict();
            let k = config.budget(batch.len());
            if k >= batch.len() {
                ekf.update(batch);
            } else if let Some((problem, _)) = build_selection_problem(batch, &ekf)? {
                let mut chosen = choose(&problem, k, scheme, random_seeds[step])?;
                chosen.sort_unstable();
                let picked: Vec<Measurement> = chosen.iter().map(|&i| batch[i]).collect();
                ekf.update(&picked);
            }
            rows.push(TrackingRow {
                scheme: scheme.name().to_string(),
                criterion: scheme.criterion_label(),
                instance,
                step,
                mse: ekf.squared_error(&world.targets),
            });
        }
    }
    Ok((rows, batch_total))
}

/// Runs every instance (in parallel; rows ordered by instance, scheme, step).
pub fn run_tracking(config: &TrackingConfig) -> Result<TrackingOutput> {
    config.validate()?;
    let radius = resolve_radius(config);
    let per_instance = (0..config.instances)
        .into_par_iter()
        .map(|i| run_instance(config, i, radius))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut total = 0;
    for (r, count) in per_instance {
        rows.extend(r);
        total += count;
    }
    Ok(TrackingOutput {
        rows,
        radius,
        mean_batch: total as f64 / (config.instances * config.steps) as f64,
    })
}

/// Scheme key as used in configs (`quadratic_A`, `random`, ...).
pub fn scheme_key(row: &TrackingRow) -> String {
    if row.scheme == "quadratic" {
        format!("quadratic_{}", row.criterion)
    } else {
        row.scheme.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanRow {
    pub scheme: String,
    pub step: usize,
    pub mean_mse: f64,
}

/// MSE averaged over instances, per scheme and step.
pub fn mean_curves(rows: &[TrackingRow]) -> Vec<MeanRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let key = (scheme_key(r), r.step);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(scheme, step)| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.step == step && scheme_key(r) == scheme)
                .map(|r| r.mse)
                .collect();
            MeanRow {
                mean_mse: v.iter().sum::<f64>() / v.len() as f64,
                scheme,
                step,
            }
        })
        .collect()
}

/// Mean MSE of `scheme` over steps `from..` and all instances.
pub fn window_mean(rows: &[TrackingRow], scheme: &str, from: usize) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.step >= from && scheme_key(r) == scheme)
        .map(|r| r.mse)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::info_atom;
    use crate::linalg;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn static_targets_at_zero_speed() {
        let config = TrackingConfig {
            speed: 0.0,
            ..TrackingConfig::default()
        };
        let w0 = initial_world(&config, &mut rng(1));
        let w1 = step_world(&config, &w0, &mut rng(2));
        assert_eq!(w0.targets, w1.targets);
    }

    #[test]
    fn interior_step_has_speed_length() {
        let config = TrackingConfig::default();
        let mut w = initial_world(&config, &mut rng(3));
        w.targets = vec![Vector2::new(2.5, 5.0); config.n_targets];
        let next = step_world(&config, &w, &mut rng(4));
        for (a, b) in w.targets.iter().zip(&next.targets) {
            assert!(((a - b).norm() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_stay_inside() {
        let config = TrackingConfig {
            speed: 3.0,
            ..TrackingConfig::default()
        };
        let mut r = rng(5);
        let mut w = initial_world(&config, &mut r);
        for _ in 0..200 {
            w = step_world(&config, &w, &mut r);
            for s in &w.targets {
                assert!((0.0..=5.0).contains(&s.x) && (0.0..=10.0).contains(&s.y));
            }
        }
    }

    #[test]
    fn uav_loop_is_periodic() {
        let config = TrackingConfig::default();
        let period = (config.uav_period_length() / config.uav_speed).round() as usize;
        assert_eq!(period, 22);
        let w = initial_world(&config, &mut rng(6));
        let mut later = w.clone();
        for _ in 0..period {
            later = step_world(&config, &later, &mut rng(7));
        }
        for (a, b) in w.uavs.iter().zip(&later.uavs) {
            assert!((a - b).norm() < 1e-9);
        }
        for (lane, u) in w.uavs.iter().enumerate() {
            assert!(u.y >= lane as f64 && u.y <= lane as f64 + 1.0);
        }
    }

    #[test]
    fn out_of_range_pairs_are_silent() {
        let config = TrackingConfig {
            n_targets: 1,
            n_uavs: 1,
            noise: NoiseSpec::Identical { sigma: 0.0 },
            ..TrackingConfig::default()
        };
        let world = WorldState {
            t: 0,
            targets: vec![Vector2::new(1.0, 1.0)],
            uavs: vec![Vector2::new(4.0, 5.0)],
            phases: vec![0.0],
        };
        assert!(sense(&config, &world, 4.9, &mut rng(8)).is_empty());
        let batch = sense(&config, &world, 5.1, &mut rng(8));
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[0].value, 12.5);
        assert!((batch[1].value - (3.0f64 / 4.0).atan()).abs() < 1e-15);
    }

    #[test]
    fn bearing_gradient_matches_finite_differences() {
        let u = Vector2::new(1.0, 4.0);
        let s = Vector2::new(1.0, 1.0);
        let g = bearing_gradient(&u, &s);
        assert!((g - Vector2::new(-1.0 / 3.0, 0.0)).norm() < 1e-15);
        let s = Vector2::new(0.3, 2.2);
        let g = bearing_gradient(&u, &s);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = Vector2::zeros();
            e[k] = h;
            let fd = (bearing_model(&u, &(s + e)) - bearing_model(&u, &(s - e))) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn range_atom_matches_closed_form() {
        let mut ekf = EkfState::uninformed(&TrackingConfig::default());
        ekf.means[3] = Vector2::new(1.0, 2.0);
        ekf.covs[3] = Matrix2::new(0.5, 0.1, 0.1, 0.3);
        let u = Vector2::new(2.0, 4.5);
        let batch = vec![Measurement {
            kind: Kind::Range,
            uav: 0,
            target: 3,
            value: 1.0,
            sigma2: 0.01,
            uav_position: u,
        }];
        let (problem, detected) = build_selection_problem(&batch, &ekf).unwrap().unwrap();
        assert_eq!(detected, vec![3]);
        let z = ekf.means[3] - u;
        let p = ekf.covs[3];
        let expected = (p + z * z.transpose()) / 0.01;
        let atom = info_atom(&problem, 0);
        let got = Matrix2::from_iterator(atom.matrix.iter().copied());
        assert!((got - expected).norm() <= 1e-12 * expected.norm());
    }

    #[test]
    fn empty_batch_skips_selection() {
        let ekf = EkfState::uninformed(&TrackingConfig::default());
        assert!(build_selection_problem(&[], &ekf).unwrap().is_none());
    }

    #[test]
    fn joint_problem_is_block_diagonal() {
        let config = TrackingConfig::default();
        let mut r = rng(9);
        let world = step_world(&config, &initial_world(&config, &mut r), &mut r);
        let batch = sense(&config, &world, 3.0, &mut r);
        let ekf = EkfState::uninformed(&config);
        let (problem, detected) = build_selection_problem(&batch, &ekf).unwrap().unwrap();
        assert_eq!(problem.dimension(), 2 * detected.len());
        assert_eq!(problem.len(), batch.len());
        let d = Design::from_problem(&problem).unwrap();
        for (m, atom) in batch.iter().zip(d.atoms()) {
            let b = 2 * detected.binary_search(&m.target).unwrap();
            let mut outside = atom.matrix.clone();
            outside.view_mut((b, b), (2, 2)).fill(0.0);
            assert!(outside.iter().all(|v| *v == 0.0));
        }
        assert!(linalg::lambda_min(d.fisher()) > 0.0);
    }

    #[test]
    fn wrap_keeps_principal_branch() {
        assert!((wrap_bearing(PI / 2.0 + 0.1) - (-PI / 2.0 + 0.1)).abs() < 1e-12);
        assert!((wrap_bearing(-0.3) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn calibrated_radius_hits_band() {
        let config = TrackingConfig::default();
        let r = calibrate_radius(&config);
        let mean = 2.0 * pair_count(&config, 8, r);
        assert!((130.0..=170.0).contains(&mean), "{mean}");
    }

    #[test]
    fn full_budget_makes_schemes_agree() {
        let config = TrackingConfig {
            budget_fraction: 1.0,
            instances: 2,
            steps: 8,
            radius: RadiusSpec::Fixed(3.0),
            ..TrackingConfig::default()
        };
        let out = run_tracking(&config).unwrap();
        for inst in 0..2 {
            for step in 0..8 {
                let v: Vec<f64> = out
                    .rows
                    .iter()
                    .filter(|r| r.instance == inst && r.step == step)
                    .map(|r| r.mse)
                    .collect();
                assert!(v.iter().all(|x| *x == v[0]), "{v:?}");
            }
        }
    }

    #[test]
    fn noiseless_static_run_converges_monotonically() {
        let config = TrackingConfig {
            speed: 0.0,
            noise: NoiseSpec::Identical { sigma: 0.0 },
            ekf: EkfConfig { q: 0.0 },
            budget_fraction: 1.0,
            instances: 1,
            steps: 20,
            radius: RadiusSpec::Fixed(4.0),
            schemes: vec![Scheme::Random],
            ..TrackingConfig::default()
        };
        let out = run_tracking(&config).unwrap();
        for w in out.rows[5..].windows(2) {
            assert!(w[1].mse <= w[0].mse + 1e-6, "{} -> {}", w[0].mse, w[1].mse);
        }
    }

    #[test]
    fn config_parses_radius_forms() {
        let c: TrackingConfig = serde_json::from_str(r#"{"radius": "auto"}"#).unwrap();
        assert_eq!(c.radius, RadiusSpec::Auto);
        let c: TrackingConfig = serde_json::from_str(r#"{"radius": 2.5}"#).unwrap();
        assert_eq!(c.radius, RadiusSpec::Fixed(2.5));
        assert!(serde_json::from_str::<TrackingConfig>(r#"{"radius": "big"}"#).is_err());
        assert!(serde_json::from_str::<TrackingConfig>(r#"{"wat": 1}"#).is_err());
    }
}
