//! Run parameters derived from the accuracy target and the model constants.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eigen_extremes;
use crate::model::{ConditionSampler, GenePanel, MutationSet, Sample};

/// Knob triple `(z_tau, z_alpha, z_tol)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnobTriple {
    pub z_tau: f64,
    pub z_alpha: f64,
    pub z_tol: f64,
}

impl Default for KnobTriple {
    fn default() -> Self {
        Self {
            z_tau: 1.0 / 9.0,
            z_alpha: 1.0 / 3.0,
            z_tol: 2.0 / 27.0,
        }
    }
}

impl KnobTriple {
    pub fn new(z_tau: f64, z_alpha: f64, z_tol: f64) -> Self {
        Self {
            z_tau,
            z_alpha,
            z_tol,
        }
    }

    /// Witness triple of the stable region for `a = n / u`, `b = 2 h_max / h_min`.
    pub fn stable_example(n: f64, u: f64, h_min: f64, h_max: f64) -> Self {
        let a = n / u;
        let b = 2.0 * h_max / h_min;
        Self {
            z_tau: 1.0 / (4.0 * b),
            z_alpha: 1.0 / (32.0 * (a + b)),
            z_tol: 1.0 / (64.0 * b * (a + b)),
        }
    }

    /// `z_tol - z_alpha z_tau`, the per-step progress margin.
    pub fn margin(&self) -> f64 {
        self.z_tol - self.z_alpha * self.z_tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegionMode {
    Standard,
    /// Stability region for `n` post-hit steps.
    Stable {
        n: f64,
        u: f64,
        h_min: f64,
        h_max: f64,
    },
}

/// Membership of `z` in the knob region (standard or stable). The stable
/// region is intersected with the standard one.
pub fn knob_region_check(z: &KnobTriple, mode: &RegionMode) -> bool {
    let (z1, z2, z3) = (z.z_tau, z.z_alpha, z.z_tol);
    let standard = z1 > 0.0
        && z2 > 0.0
        && z3 > 0.0
        && z3 - z1 * z2 > 0.0
        && z2 * z2 - z2 * (1.0 - z1) + z3 <= 0.0;
    match *mode {
        RegionMode::Standard => standard,
        RegionMode::Stable { n, u, h_min, h_max } => {
            if !(n > 0.0 && u > 0.0 && h_min > 0.0 && h_max >= h_min) {
                return false;
            }
            let a = n / u;
            let b = 2.0 * h_max / h_min;
            standard && (a + b) * z2 * z2 - z2 * (1.0 - b * z1) + b * z3 <= 0.0
        }
    }
}

/// Constants of the model entering the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub h_min: f64,
    pub h_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub dg: usize,
    pub df: usize,
    /// Normalised basis quality of the selected basis.
    pub bbar: f64,
    /// `max_i ||b_i||` in gene coordinates.
    pub max_b_norm: f64,
    /// `E ||b_i(x)||^2` for every mutation.
    pub e_b_norm_sq: Vec<f64>,
    /// `sup_x` of the summed squared expressions of the selected basis.
    pub sup_single: f64,
}

impl ModelConstants {
    fn validate(&self) -> Result<()> {
        if !(self.bbar > 0.0) {
            return Err(Error::BasisDegenerate(format!(
                "normalised basis quality must be positive, got {}",
                self.bbar
            )));
        }
        let positive = [
            ("h_min", self.h_min),
            ("h_max", self.h_max),
            ("mu_min", self.mu_min),
            ("mu_max", self.mu_max),
            ("max_b_norm", self.max_b_norm),
            ("sup_single", self.sup_single),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dg == 0 || self.df == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        if self.e_b_norm_sq.is_empty() || self.e_b_norm_sq.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "expected squared mutation expressions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn max_e_b_norm_sq(&self) -> f64 {
        self.e_b_norm_sq.iter().copied().fold(0.0, f64::max)
    }

    /// Unnormalised basis quality `B_H = Bbar * max ||b||`.
    pub fn b_h(&self) -> f64 {
        self.bbar * self.max_b_norm
    }
}

/// Leading constants and caps applied to the asymptotic expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub c_m: f64,
    pub c_t: f64,
    pub m_cap: usize,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            c_m: 1.0,
            c_t: 1.0,
            m_cap: 50_000,
        }
    }
}

/// How the horizon is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonInput {
    /// `||t - f0||` in gene coordinates.
    Distance(f64),
    /// User-supplied upper bound when the target is only observed.
    Hint(u64),
}

/// Every resolved run parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epsilon: f64,
    pub knobs: KnobTriple,
    pub u: f64,
    pub v: f64,
    pub alpha: f64,
    pub tol: f64,
    pub tau: f64,
    pub m: usize,
    /// Sample size before the cap.
    pub m_formula: f64,
    pub t: u64,
    /// Step count before rounding.
    pub t_formula: f64,
    pub horizon: u64,
    pub c_m: f64,
    pub c_t: f64,
    pub m_cap: usize,
    pub constants: ModelConstants,
}

/// `ceil(||t - f0|| / max ||b_i||)`, at least 1.
pub fn horizon(distance: f64, max_b_norm: f64) -> Result<u64> {
    if !(distance >= 0.0 && distance.is_finite()) || !(max_b_norm > 0.0) {
        return Err(Error::InvalidArgument(
            "horizon needs a finite distance and a positive mutation norm".into(),
        ));
    }
    Ok(((distance / max_b_norm).ceil() as u64).max(1))
}

/// `U`, the key scale of every knob-derived parameter.
pub fn u_constant(c: &ModelConstants, horizon: u64) -> f64 {
    (c.h_max.powf(1.5) * c.mu_max.sqrt()) / (c.h_min.powf(1.5) * c.mu_min.sqrt())
        * (2.0 * (std::f64::consts::E * c.dg as f64).sqrt() / c.bbar)
        * horizon as f64
}

/// `V = h_max * max_i E ||b_i(x)||^2`.
pub fn v_constant(c: &ModelConstants) -> f64 {
    c.h_max * c.max_e_b_norm_sq()
}

pub fn compute_schedule(
    epsilon: f64,
    knobs: KnobTriple,
    constants: &ModelConstants,
    horizon_input: HorizonInput,
    options: &ScheduleOptions,
) -> Result<Schedule> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    constants.validate()?;
    if !knob_region_check(&knobs, &RegionMode::Standard) {
        return Err(Error::Config(format!(
            "knob triple ({}, {}, {}) is outside the feasible region",
            knobs.z_tau, knobs.z_alpha, knobs.z_tol
        )));
    }
    if !(options.c_m > 0.0 && options.c_t > 0.0 && options.m_cap >= 1) {
        return Err(Error::Config("leading constants and m_cap must be positive".into()));
    }
    let d = match horizon_input {
        HorizonInput::Distance(dist) => horizon(dist, constants.max_b_norm)?,
        HorizonInput::Hint(h) => h.max(1),
    };
    let c = constants;
    let u = u_constant(c, d);
    let v = v_constant(c);
    let vmax = v.max(1.0);
    let tol = knobs.z_tol * epsilon * epsilon / (u * u * vmax);
    let alpha = knobs.z_alpha * epsilon / (u * vmax);
    let tau = knobs.z_tau * epsilon / u;
    if !(tol - alpha * tau > 0.0) {
        return Err(Error::Config("tol - alpha tau must be positive".into()));
    }

    let df = d as f64;
    let b_h = c.b_h();
    let t_formula = options.c_t / knobs.margin()
        * (c.h_max.powi(5) * c.mu_max.powi(2) * c.max_e_b_norm_sq()) / (c.h_min.powi(3) * c.mu_min)
        * (std::f64::consts::E * c.dg as f64 * c.max_b_norm.powi(4)) / (b_h * b_h)
        * df.powi(4)
        / (epsilon * epsilon);
    let t = t_formula.ceil().max(1.0) as u64;

    let log_term = ((c.df as f64 * t as f64) / epsilon).ln().max(1.0);
    let m_formula = options.c_m
        * (c.h_max * c.h_max * c.sup_single * c.sup_single / (tau * tau))
        * ((c.h_max * c.mu_max) / (c.h_min * c.mu_min) * df * df / (c.bbar * c.bbar) + alpha * alpha)
        * log_term;
    let m = if m_formula >= options.m_cap as f64 {
        options.m_cap
    } else {
        (m_formula.ceil() as usize).max(1)
    };

    Ok(Schedule {
        epsilon,
        knobs,
        u,
        v,
        alpha,
        tol,
        tau,
        m,
        m_formula,
        t,
        t_formula,
        horizon: d,
        c_m: options.c_m,
        c_t: options.c_t,
        m_cap: options.m_cap,
        constants: constants.clone(),
    })
}

/// Largest per-step target drift, in gene-coordinate norm, under which
/// convergence still holds.
pub fn drift_bound(schedule: &Schedule) -> Result<f64> {
    let k = &schedule.knobs;
    if !knob_region_check(k, &RegionMode::Standard) {
        return Err(Error::Config("knob triple is outside the feasible region".into()));
    }
    let d = schedule.horizon as f64;
    let mb = schedule.constants.max_b_norm;
    let eps = schedule.epsilon;
    Ok(k.margin() * eps.powi(4) / (2.0 * schedule.u * schedule.u * schedule.v * (2.0 + d * d * mb * mb)))
}

/// Drift magnitude and its admissible bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPlan {
    pub nu: f64,
    pub bound: f64,
    /// `1 + max{1, 2 H mu_max / (h mu_min) D^2 max ||b||^2}`.
    pub w: f64,
    pub compliant: bool,
}

impl DriftPlan {
    /// Drift of `multiplier` times the bound.
    pub fn at_multiple(schedule: &Schedule, multiplier: f64) -> Result<Self> {
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(Error::InvalidArgument("drift multiplier must be nonnegative".into()));
        }
        let bound = drift_bound(schedule)?;
        let c = &schedule.constants;
        let d = schedule.horizon as f64;
        let w = 1.0
            + f64::max(
                1.0,
                2.0 * c.h_max * c.mu_max / (c.h_min * c.mu_min) * d * d * c.max_b_norm * c.max_b_norm,
            );
        let nu = multiplier * bound;
        Ok(Self {
            nu,
            bound,
            w,
            compliant: nu <= bound,
        })
    }
}

/// Monte-Carlo estimates of the expression constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedConstants {
    pub mu_min: f64,
    pub mu_max: f64,
    pub e_b_norm_sq: Vec<f64>,
    pub sup_single: f64,
    pub gamma: DMatrix<f64>,
    /// Whether the expectation was exact over a finite dataset.
    pub exact: bool,
}

pub const DEFAULT_SAFETY_FACTOR: f64 = 1.5;
const ESTIMATE_DRAW: u64 = u64::MAX;

/// Estimates `Gamma = E[G^T G]`, `E ||b_i(x)||^2` and `sup_x sum_i ||b_i(x)||^2`.
///
/// Empirical samplers are integrated exactly over their dataset; generator
/// samplers use `n_samples` draws. The supremum is inflated by `safety`.
pub fn estimate_model_constants(
    panel: &GenePanel,
    basis: &MutationSet,
    sampler: &ConditionSampler,
    n_samples: usize,
    safety: f64,
) -> Result<EstimatedConstants> {
    let dg = panel.dg();
    if n_samples < 10 * dg {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples, got {n_samples}",
            10 * dg
        )));
    }
    if basis.dg() != dg {
        return Err(Error::DimensionMismatch {
            what: "mutation dimension",
            expected: dg,
            got: basis.dg(),
        });
    }
    let (sample, exact): (Sample, bool) = match sampler.dataset() {
        Some(data) => (data.as_sample(), true),
        None => (sampler.draw(ESTIMATE_DRAW, n_samples), false),
    };
    let mut gamma = DMatrix::zeros(dg, dg);
    let mut e_b = vec![0.0; basis.df()];
    let mut sup: f64 = 0.0;
    let mut g = DMatrix::zeros(panel.d(), dg);
    for (x, w) in sample.entries() {
        let w = *w as f64;
        panel.evaluate_into(x, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("gene panel produced non-finite output".into()));
        }
        gamma += g.transpose() * &g * w;
        let mut single = 0.0;
        for (i, b) in basis.columns().iter().enumerate() {
            let bx: DVector<f64> = &g * b;
            let n2 = bx.norm_squared();
            e_b[i] += w * n2;
            single += n2;
        }
        sup = sup.max(single);
    }
    let n = sample.size() as f64;
    gamma /= n;
    e_b.iter_mut().for_each(|v| *v /= n);
    let (mu_min, mu_max) = eigen_extremes(&gamma);
    if mu_min <= 1e-10 {
        warn!("expression Gram is singular (mu_min = {mu_min:e}); genomes may go unexpressed");
    }
    Ok(EstimatedConstants {
        mu_min,
        mu_max,
        e_b_norm_sq: e_b,
        sup_single: sup * safety,
        gamma,
        exact,
    })
}
