//! Seeded scenarios: mean estimation, supervised linear regression on a
//! non-separable mixture, agnostic evolution, stability and drift.

use std::f64::consts::{E, PI};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::agnostic_projection_moments;
use crate::basis::select_bstar;
use crate::engine::{
    run_evolution, write_trace_jsonl, EvolutionModel, FailurePolicy, RunHooks, RunParams,
};
use crate::error::{Error, Result};
use crate::model::{
    quadratic_optimum, BregmanGenerator, Condition, ConditionSampler, Dataset, GenePanel,
    MutationSet, Organism, QuadraticMoments, Target, TargetKind, TraceStep,
};
use crate::rng::{stream_rng, streams};
use crate::schedule::{
    compute_schedule, estimate_model_constants, u_constant, DriftPlan, HorizonInput, KnobTriple,
    ModelConstants, RegionMode, Schedule, ScheduleOptions, DEFAULT_SAFETY_FACTOR,
};

/// Leading constant of the step count used by the scenarios, tuned so that
/// mean estimation at `eps = 0.1` converges within `T`.
pub const TUNED_C_T: f64 = 0.003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    UnsupervisedMean,
    SupervisedLinear,
    Drift,
    Stability,
    Agnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSource {
    /// Canonical basis of the gene space.
    Orthonormal,
    /// Two random data points spanning the plane, renewed periodically.
    DataPairs,
    /// A single random unit vector (agnostic line).
    RandomLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftDirection {
    RandomUnit,
    /// Moves the target straight away from the current organism.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureParams {
    pub clusters_min: usize,
    pub clusters_max: usize,
    pub points_min: usize,
    pub points_max: usize,
    pub var_min: f64,
    pub var_max: f64,
    pub max_regenerations: usize,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            clusters_min: 3,
            clusters_max: 6,
            points_min: 30,
            points_max: 120,
            var_min: 0.01,
            var_max: 0.1,
            max_regenerations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    /// Knob triple; the stability scenario derives its own when absent.
    pub knobs: Option<KnobTriple>,
    pub c_m: f64,
    pub c_t: f64,
    pub m_cap: usize,
    /// Replaces the scheduled sample size (e.g. 5 for the noisy protocol).
    pub m_override: Option<usize>,
    /// Upper bound on the number of steps actually run.
    pub max_steps: Option<usize>,
    /// Distance between the start organism and the optimum.
    pub start_radius: f64,
    pub basis: BasisSource,
    pub renewal_period: Option<usize>,
    pub policy: FailurePolicy,
    pub mixture: MixtureParams,
    pub drift_multipliers: Vec<f64>,
    pub drift_direction: DriftDirection,
    pub stability_n: usize,
    /// Stability scenario: also run the plain knob triple for comparison.
    pub compare_standard: bool,
    /// Maximum number of organism positions kept per run for plotting.
    pub path_points: usize,
    /// Minimum `|sin|` of the angle between the two vectors of a data pair.
    pub pair_min_sin: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::defaults(ScenarioKind::UnsupervisedMean)
    }
}

impl ScenarioConfig {
    pub fn defaults(scenario: ScenarioKind) -> Self {
        let mut c = Self {
            scenario,
            seeds: (0..100).collect(),
            epsilon: 0.1,
            knobs: None,
            c_m: 1.0,
            c_t: TUNED_C_T,
            m_cap: 50_000,
            m_override: None,
            max_steps: None,
            start_radius: 2.0,
            basis: BasisSource::Orthonormal,
            renewal_period: None,
            policy: FailurePolicy::ForcedUniform,
            mixture: MixtureParams::default(),
            drift_multipliers: vec![0.0, 1.0, 4.0, 10.0],
            drift_direction: DriftDirection::Adversarial,
            stability_n: 50,
            compare_standard: true,
            path_points: 500,
            pair_min_sin: 0.5,
            output_dir: None,
        };
        match scenario {
            ScenarioKind::SupervisedLinear => {
                c.basis = BasisSource::DataPairs;
                c.renewal_period = Some(1000);
                c.pair_min_sin = 0.7;
                c.c_t = 0.1;
                c.max_steps = Some(30_000);
            }
            ScenarioKind::Stability => c.start_radius = 0.5,
            ScenarioKind::Agnostic => c.basis = BasisSource::RandomLine,
            _ => {}
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.start_radius > 0.0) {
            return Err(Error::Config("start_radius must be positive".into()));
        }
        if self.mixture.clusters_min < 2 || self.mixture.clusters_max < self.mixture.clusters_min {
            return Err(Error::Config("mixture needs at least two clusters".into()));
        }
        if self.mixture.points_min == 0 || self.mixture.points_max < self.mixture.points_min {
            return Err(Error::Config("mixture point counts are inconsistent".into()));
        }
        if self.scenario == ScenarioKind::Stability && self.stability_n == 0 {
            return Err(Error::Config("stability_n must be positive".into()));
        }
        Ok(())
    }
}

/// Labelled 2D mixture normalised into the unit disk.
#[derive(Debug, Clone)]
pub struct MixtureData {
    pub dataset: Arc<Dataset>,
    pub n_clusters: usize,
    /// Generation attempts discarded because the labels were constant or
    /// the data were linearly separable.
    pub regenerations: usize,
    pub separable: bool,
}

/// Mixture of spherical Gaussians with random variance and size, one
/// random `+-1` label per cluster, scaled to fit in the unit ball.
pub fn gen_gaussian_mixture(
    rng: &mut impl Rng,
    n_clusters: usize,
    dim: usize,
    params: &MixtureParams,
) -> Result<MixtureData> {
    if n_clusters < 2 || dim == 0 {
        return Err(Error::InvalidArgument("need at least two clusters and dim > 0".into()));
    }
    let mut regenerations = 0;
    loop {
        let mut points: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut labels = Vec::with_capacity(n_clusters);
        for _ in 0..n_clusters {
            let centre: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let var = rng.gen_range(params.var_min..=params.var_max);
            let count = rng.gen_range(params.points_min..=params.points_max);
            let label = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            labels.push(label);
            for _ in 0..count {
                let p: Vec<f64> = centre
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        c + var.sqrt() * z
                    })
                    .collect();
                points.push((p, label));
            }
        }
        if labels.iter().all(|l| *l == labels[0]) {
            regenerations += 1;
            continue;
        }
        let scale = points
            .iter()
            .map(|(p, _)| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        for (p, _) in points.iter_mut() {
            p.iter_mut().for_each(|v| *v /= scale);
        }
        let separable = dim == 2 && separable_through_origin(&points);
        if separable && regenerations < params.max_regenerations {
            regenerations += 1;
            continue;
        }
        let rows = points
            .into_iter()
            .map(|(p, y)| Condition::with_response(p, vec![y]))
            .collect::<Result<Vec<_>>>()?;
        return Ok(MixtureData {
            dataset: Arc::new(Dataset::new(rows)?),
            n_clusters,
            regenerations,
            separable,
        });
    }
}

/// Whether some `c` has `y <c, x> > 0` for every point: the vectors
/// `y x` must fit in an open half-plane, i.e. leave an angular gap above pi.
fn separable_through_origin(points: &[(Vec<f64>, f64)]) -> bool {
    let mut angles: Vec<f64> = points
        .iter()
        .filter(|(p, _)| p[0] != 0.0 || p[1] != 0.0)
        .map(|(p, y)| (y * p[1]).atan2(y * p[0]))
        .collect();
    if angles.len() < points.len() {
        return false;
    }
    angles.sort_by(|a, b| a.total_cmp(b));
    let mut gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    gap > PI
}

/// Two data points spanning the plane: `|det| > 0.05` and the angle between
/// them has `|sin| >= min_sin`.
pub fn random_data_pair(data: &Dataset, min_sin: f64, rng: &mut impl Rng) -> Result<MutationSet> {
    let rows = data.rows();
    if data.dim_x() != 2 || rows.len() < 2 {
        return Err(Error::InvalidArgument("data pairs need 2D data with two rows".into()));
    }
    for _ in 0..100_000 {
        let i = rng.gen_range(0..rows.len());
        let j = rng.gen_range(0..rows.len());
        let (a, b) = (&rows[i].x, &rows[j].x);
        let det = (a[0] * b[1] - a[1] * b[0]).abs();
        let norms = (a[0].hypot(a[1])) * (b[0].hypot(b[1]));
        if det > 0.05 && det >= min_sin * norms {
            return MutationSet::from_rows(&[a.clone(), b.clone()]);
        }
    }
    Err(Error::BasisDegenerate("no data pair spans the plane".into()))
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub schedule: Schedule,
    pub steps_run: usize,
    /// True performance relative to the reference optimum.
    pub final_true_perf: f64,
    pub success: bool,
    pub forced_steps: usize,
    pub neutral_steps: usize,
    pub failed: bool,
    /// Step after which the organism first met the accuracy target.
    pub first_hit: Option<usize>,
    /// Consecutive post-hit steps spent inside the target set.
    pub dwell: Option<usize>,
    /// Reference optimum (over the span of the mutations).
    pub reference_perf: f64,
    /// Variance of the per-step sample mean of the target outputs.
    pub sample_mean_variance: f64,
    /// Beneficial steps in the far-from-target prefix, and how many of them
    /// improved the true performance by at least `tol - alpha tau`.
    pub monotone_steps: usize,
    pub monotone_ok: usize,
    pub path: Vec<Vec<f64>>,
    #[serde(skip)]
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub label: String,
    pub drift_multiplier: Option<f64>,
    pub drift_bound: Option<f64>,
    pub success_fraction: f64,
    pub dwell_fraction: Option<f64>,
    pub monotone_fraction: Option<f64>,
    pub seeds: Vec<SeedReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub epsilon: f64,
    pub config: ScenarioConfig,
    pub arms: Vec<ArmReport>,
}

impl ScenarioReport {
    pub fn arm(&self, label: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.label == label)
    }
}

/// Everything fixed for one seed before evolution starts.
struct Instance {
    model: EvolutionModel,
    data: Arc<Dataset>,
    target: Target,
    moments: QuadraticMoments,
    mutations: MutationSet,
    f0: DVector<f64>,
    /// Unconstrained optimum in gene coordinates.
    optimum: DVector<f64>,
    /// Performance the run is judged against.
    reference_perf: f64,
    constants: ModelConstants,
    distance: f64,
    sample_variance: f64,
}

fn unit_vector(rng: &mut impl Rng) -> DVector<f64> {
    let a = rng.gen_range(0.0..2.0 * PI);
    DVector::from_vec(vec![a.cos(), a.sin()])
}

fn build_instance(cfg: &ScenarioConfig, seed: u64) -> Result<Instance> {
    let mut rng = stream_rng(seed, streams::SCENARIO, 0);
    let k = rng.gen_range(cfg.mixture.clusters_min..=cfg.mixture.clusters_max);
    let mix = gen_gaussian_mixture(&mut rng, k, 2, &cfg.mixture)?;
    let data = mix.dataset;
    let supervised = cfg.scenario == ScenarioKind::SupervisedLinear;
    let (panel, target) = if supervised {
        (GenePanel::data_columns(vec![0, 1])?, Target::new(TargetKind::Response))
    } else {
        (GenePanel::identity(2, 1.0)?, Target::new(TargetKind::ConditionValue))
    };
    let generator = BregmanGenerator::squared_euclidean();
    let sampler = ConditionSampler::empirical(Arc::clone(&data), seed);
    let whole = data.as_sample();
    let moments = quadratic_optimum(&panel, &generator, &target, &whole)?;
    let optimum = moments.optimum()?;
    let mutations = match cfg.basis {
        BasisSource::Orthonormal => MutationSet::orthonormal(2)?,
        BasisSource::DataPairs => random_data_pair(&data, cfg.pair_min_sin, &mut rng)?,
        BasisSource::RandomLine => MutationSet::new(vec![unit_vector(&mut rng)])?,
    };
    let projection = agnostic_projection_moments(&moments, &mutations)?;
    let (f0, reference_perf) = if supervised {
        (DVector::zeros(2), moments.performance(&optimum))
    } else if cfg.basis == BasisSource::RandomLine {
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let b = mutations.get(0) / mutations.get(0).norm();
        (&projection.t_in + b * (s * cfg.start_radius), projection.optimum)
    } else {
        (&optimum + unit_vector(&mut rng) * cfg.start_radius, moments.performance(&optimum))
    };
    let distance = (&projection.t_in - &f0).norm();
    let est = estimate_model_constants(&panel, &mutations, &sampler, 10 * panel.dg(), DEFAULT_SAFETY_FACTOR)?;
    let bstar = select_bstar(&mutations, panel.dg(), seed)?;
    let star = mutations.subset(&bstar.indices)?;
    let star_est = estimate_model_constants(&panel, &star, &sampler, 10 * panel.dg(), DEFAULT_SAFETY_FACTOR)?;
    let constants = ModelConstants {
        h_min: generator.h_min(),
        h_max: generator.h_max(),
        mu_min: est.mu_min,
        mu_max: est.mu_max,
        dg: bstar.rank,
        df: mutations.df(),
        bbar: bstar.quality.bbar,
        max_b_norm: mutations.max_norm(),
        e_b_norm_sq: est.e_b_norm_sq,
        sup_single: star_est.sup_single,
    };
    // variance of a single target output around its mean, for the noise report
    let mut mean = vec![0.0; panel.d()];
    let mut second = 0.0;
    for row in data.rows() {
        let t = target.output(row, &panel)?;
        for (m, v) in mean.iter_mut().zip(&t) {
            *m += v / data.len() as f64;
        }
        second += t.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    }
    let sample_variance = second - mean.iter().map(|v| v * v).sum::<f64>();
    Ok(Instance {
        model: EvolutionModel {
            panel,
            generator,
            sampler,
        },
        data,
        target,
        moments,
        mutations,
        f0,
        optimum,
        reference_perf,
        constants,
        distance,
        sample_variance,
    })
}

/// Far-from-target test on the organism: some `b_i` has
/// `rho(f - t) >= sqrt(e dG) / (h B_H) (tau + alpha H ||b_i|| rho(b_i) + tol / alpha)`.
struct FarRegime {
    threshold: f64,
}

impl FarRegime {
    fn new(inst: &Instance, s: &Schedule) -> Self {
        let c = &s.constants;
        let g = &inst.moments.gamma;
        let lead = (E * c.dg as f64).sqrt() / (c.h_min * c.b_h());
        let threshold = inst
            .mutations
            .columns()
            .iter()
            .map(|b| {
                let rho_b = b.dot(&(g * b)) / b.norm();
                lead * (s.tau + s.alpha * c.h_max * b.norm() * rho_b + s.tol / s.alpha)
            })
            .fold(f64::INFINITY, f64::min);
        Self { threshold }
    }

    fn contains(&self, inst: &Instance, coords: &DVector<f64>, shift: Option<&DVector<f64>>) -> bool {
        let mut d = coords - &inst.optimum;
        if let Some(s) = shift {
            d -= s;
        }
        let n = d.norm();
        n > 0.0 && d.dot(&(&inst.moments.gamma * &d)) / n >= self.threshold
    }
}

struct ScenarioHooks<'a> {
    inst: &'a Instance,
    renew_pairs: bool,
    pair_min_sin: f64,
    drift: Option<(f64, DriftDirection)>,
    stop_after_hit: Option<usize>,
    first_hit: Option<usize>,
    far: Option<FarRegime>,
    far_flags: Vec<bool>,
    path: Vec<Vec<f64>>,
    path_stride: usize,
}

impl ScenarioHooks<'_> {
    fn relative(&self, coords: &DVector<f64>, target: &Target) -> f64 {
        let perf = match target.shift() {
            Some(s) => self.inst.moments.performance(&(coords - s)),
            None => self.inst.moments.performance(coords),
        };
        perf - self.inst.reference_perf
    }
}

impl RunHooks for ScenarioHooks<'_> {
    fn renew(&mut self, _: usize, _: &MutationSet, rng: &mut ChaCha8Rng) -> Result<Option<MutationSet>> {
        if self.renew_pairs {
            random_data_pair(&self.inst.data, self.pair_min_sin, rng).map(Some)
        } else {
            Ok(None)
        }
    }

    fn true_performance(&self, coords: &DVector<f64>, target: &Target) -> Option<f64> {
        Some(self.relative(coords, target))
    }

    fn after_step(&mut self, step: usize, f: &Organism, target: &mut Target, rng: &mut ChaCha8Rng) -> Result<()> {
        if let Some(far) = &self.far {
            self.far_flags.push(far.contains(self.inst, f.coords(), target.shift()));
        }
        if step % self.path_stride == 0 {
            self.path.push(f.coords().as_slice().to_vec());
        }
        if let Some((nu, direction)) = self.drift {
            if nu > 0.0 {
                let dir = match direction {
                    DriftDirection::RandomUnit => unit_vector(rng),
                    DriftDirection::Adversarial => {
                        let shift = target.shift().cloned().unwrap_or_else(|| DVector::zeros(2));
                        let away = &self.inst.optimum + shift - f.coords();
                        let n = away.norm();
                        if n > 0.0 { away / n } else { unit_vector(rng) }
                    }
                };
                target.translate(&(dir * nu));
            }
        }
        Ok(())
    }

    fn stop(&mut self, step: &TraceStep) -> bool {
        if self.first_hit.is_none() && step.in_ht == Some(true) {
            self.first_hit = Some(step.step);
        }
        match (self.stop_after_hit, self.first_hit) {
            (Some(n), Some(h)) => step.step >= h + n,
            _ => false,
        }
    }
}

struct ArmSpec {
    label: String,
    knobs: KnobTriple,
    drift_multiplier: Option<f64>,
}

fn run_seed(cfg: &ScenarioConfig, arm: &ArmSpec, seed: u64) -> Result<SeedReport> {
    let inst = build_instance(cfg, seed)?;
    let options = ScheduleOptions {
        c_m: cfg.c_m,
        c_t: cfg.c_t,
        m_cap: cfg.m_cap,
    };
    let schedule = compute_schedule(
        cfg.epsilon,
        arm.knobs,
        &inst.constants,
        HorizonInput::Distance(inst.distance),
        &options,
    )?;
    let drift = match arm.drift_multiplier {
        Some(mult) => Some((DriftPlan::at_multiple(&schedule, mult)?.nu, cfg.drift_direction)),
        None => None,
    };
    let steps = cfg.max_steps.map_or(schedule.t as usize, |cap| cap.min(schedule.t as usize));
    let m = cfg.m_override.unwrap_or(schedule.m);
    let params = RunParams {
        alpha: schedule.alpha,
        tol: schedule.tol,
        m,
        steps,
        policy: cfg.policy,
        seed,
        renewal_period: cfg.renewal_period,
        epsilon: Some(cfg.epsilon),
    };
    let far = FarRegime::new(&inst, &schedule);
    let start_far = far.contains(&inst, &inst.f0, None);
    let mut hooks = ScenarioHooks {
        inst: &inst,
        renew_pairs: cfg.basis == BasisSource::DataPairs,
        pair_min_sin: cfg.pair_min_sin,
        drift,
        stop_after_hit: (cfg.scenario == ScenarioKind::Stability).then_some(cfg.stability_n),
        first_hit: None,
        far: Some(far),
        far_flags: Vec::with_capacity(steps),
        path: vec![inst.f0.as_slice().to_vec()],
        path_stride: (steps / cfg.path_points.max(1)).max(1),
    };
    let f0 = Organism::new(inst.f0.clone(), inst.mutations.df(), schedule.alpha)?;
    let result = run_evolution(&inst.model, inst.target.clone(), f0, inst.mutations.clone(), &params, &mut hooks)?;
    let final_true_perf = hooks.relative(result.final_organism.coords(), &result.target);

    // far-regime prefix: steps whose starting organism and all predecessors are far
    let margin = schedule.tol - schedule.alpha * schedule.tau;
    let (mut monotone_steps, mut monotone_ok) = (0, 0);
    let mut prefix = start_far;
    for (k, s) in result.trace.iter().enumerate() {
        if k > 0 {
            prefix = prefix && hooks.far_flags.get(k - 1).copied().unwrap_or(false);
        }
        if !prefix {
            break;
        }
        if s.chose_beneficial() {
            monotone_steps += 1;
            if let (Some(a), Some(b)) = (s.perf_true_after, s.perf_true_before) {
                if a - b >= margin {
                    monotone_ok += 1;
                }
            }
        }
    }
    let first_hit = hooks.first_hit;
    let dwell = first_hit.map(|h| {
        result.trace[h + 1..]
            .iter()
            .take(cfg.stability_n)
            .take_while(|s| s.in_ht == Some(true))
            .count()
    });
    Ok(SeedReport {
        seed,
        steps_run: result.trace.len(),
        final_true_perf,
        success: final_true_perf >= -cfg.epsilon,
        forced_steps: result.trace.iter().filter(|s| s.forced).count(),
        neutral_steps: result.trace.iter().filter(|s| s.chosen.is_some() && s.bene_size == 0 && !s.forced).count(),
        failed: result.failed,
        first_hit,
        dwell,
        reference_perf: inst.reference_perf,
        sample_mean_variance: inst.sample_variance / m as f64,
        monotone_steps,
        monotone_ok,
        path: hooks.path,
        trace: result.trace,
        schedule,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("EVOSPACE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

fn run_arm(cfg: &ScenarioConfig, arm: ArmSpec, pool: &rayon::ThreadPool, drift_bound: bool) -> Result<ArmReport> {
    let seeds: Vec<SeedReport> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|s| run_seed(cfg, &arm, *s))
            .collect::<Result<Vec<_>>>()
    })?;
    let n = seeds.len() as f64;
    let success_fraction = seeds.iter().filter(|s| s.success).count() as f64 / n;
    let dwell_fraction = (cfg.scenario == ScenarioKind::Stability).then(|| {
        seeds
            .iter()
            .filter(|s| s.dwell.is_some_and(|d| d >= cfg.stability_n))
            .count() as f64
            / n
    });
    let pooled: usize = seeds.iter().map(|s| s.monotone_steps).sum();
    let ok: usize = seeds.iter().map(|s| s.monotone_ok).sum();
    let bound = if drift_bound {
        Some(crate::schedule::drift_bound(&seeds[0].schedule)?)
    } else {
        None
    };
    Ok(ArmReport {
        label: arm.label,
        drift_multiplier: arm.drift_multiplier,
        drift_bound: bound,
        success_fraction,
        dwell_fraction,
        monotone_fraction: (pooled > 0).then(|| ok as f64 / pooled as f64),
        seeds,
    })
}

/// Runs every arm of the configured scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let pool = thread_pool()?;
    let knobs = cfg.knobs.unwrap_or_default();
    let mut arms = Vec::new();
    match cfg.scenario {
        ScenarioKind::UnsupervisedMean | ScenarioKind::SupervisedLinear | ScenarioKind::Agnostic => {
            arms.push(run_arm(cfg, ArmSpec { label: "main".into(), knobs, drift_multiplier: None }, &pool, false)?);
        }
        ScenarioKind::Drift => {
            for m in &cfg.drift_multipliers {
                let spec = ArmSpec { label: format!("drift_x{m}"), knobs, drift_multiplier: Some(*m) };
                arms.push(run_arm(cfg, spec, &pool, true)?);
            }
        }
        ScenarioKind::Stability => {
            let stable = match cfg.knobs {
                Some(k) => k,
                None => stable_knobs(cfg)?,
            };
            let spec = ArmSpec { label: "stable".into(), knobs: stable, drift_multiplier: None };
            arms.push(run_arm(cfg, spec, &pool, false)?);
            if cfg.compare_standard {
                let spec = ArmSpec { label: "standard".into(), knobs: KnobTriple::default(), drift_multiplier: None };
                arms.push(run_arm(cfg, spec, &pool, false)?);
            }
        }
    }
    let report = ScenarioReport {
        scenario: cfg.scenario,
        epsilon: cfg.epsilon,
        config: cfg.clone(),
        arms,
    };
    if let Some(dir) = &cfg.output_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

/// Stable-region witness built from the largest `U` over the seeds, checked
/// against every seed's region.
fn stable_knobs(cfg: &ScenarioConfig) -> Result<KnobTriple> {
    let mut us = Vec::with_capacity(cfg.seeds.len());
    let mut h = (0.0, 0.0);
    for s in &cfg.seeds {
        let inst = build_instance(cfg, *s)?;
        let d = crate::schedule::horizon(inst.distance, inst.constants.max_b_norm)?;
        us.push(u_constant(&inst.constants, d));
        h = (inst.constants.h_min, inst.constants.h_max);
    }
    let n = cfg.stability_n as f64;
    let u_max = us.iter().copied().fold(0.0, f64::max);
    let k = KnobTriple::stable_example(n, u_max, h.0, h.1);
    for u in us {
        let mode = RegionMode::Stable { n, u, h_min: h.0, h_max: h.1 };
        if !crate::schedule::knob_region_check(&k, &mode) {
            return Err(Error::Config("derived knobs leave the stable region".into()));
        }
    }
    Ok(k)
}

/// Aggregate JSON, per-seed traces (JSON lines) and plot data (CSV).
pub fn write_report(report: &ScenarioReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = BufWriter::new(File::create(dir.join("report.json"))?);
    serde_json::to_writer_pretty(file, report).map_err(|e| Error::Io(e.to_string()))?;
    for arm in &report.arms {
        for s in &arm.seeds {
            let stem = format!("{}_{}", arm.label, s.seed);
            write_trace_jsonl(BufWriter::new(File::create(dir.join(format!("trace_{stem}.jsonl")))?), &s.trace)?;
            let mut perf = csv::Writer::from_path(dir.join(format!("perf_{stem}.csv")))?;
            perf.write_record(["step", "perf_empirical", "perf_true", "in_ht"])?;
            for t in &s.trace {
                perf.write_record([
                    t.step.to_string(),
                    t.perf_empirical_after.to_string(),
                    t.perf_true_after.map_or(String::new(), |v| v.to_string()),
                    t.in_ht.map_or(String::new(), |v| v.to_string()),
                ])?;
            }
            perf.flush()?;
            let mut path = csv::Writer::from_path(dir.join(format!("path_{stem}.csv")))?;
            path.write_record(["x", "y"])?;
            for p in &s.path {
                path.write_record(p.iter().map(|v| v.to_string()))?;
            }
            path.flush()?;
        }
    }
    Ok(())
}
