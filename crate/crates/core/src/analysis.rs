//! Diagnostics: expression-to-encoding ratio, return and premium of a
//! mutation, agnostic projection, and exact combinatorial oracles.

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::require_spd;
use crate::model::{
    BregmanGenerator, ConditionSampler, GenePanel, MutationSet, QuadraticMoments, Sample, Target,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExenReport {
    pub rho: f64,
    /// Norm of the mean expression `||E f(x)||`.
    pub mean_expression: f64,
    /// `E ||f(x) - E f(x)||^2`.
    pub var_expression: f64,
    /// `||f||` in gene coordinates.
    pub encoding_norm: f64,
}

const EXEN_DRAW: u64 = u64::MAX - 1;

/// `rho(f) = E ||f(x)||^2 / ||f||`. Empirical samplers are integrated
/// exactly over their dataset.
pub fn exen_ratio(
    f_coords: &DVector<f64>,
    panel: &GenePanel,
    sampler: &ConditionSampler,
    n_samples: usize,
) -> Result<ExenReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let sample = match sampler.dataset() {
        Some(d) => d.as_sample(),
        None => sampler.draw(EXEN_DRAW, n_samples),
    };
    exen_ratio_on_sample(f_coords, panel, &sample)
}

pub fn exen_ratio_on_sample(
    f_coords: &DVector<f64>,
    panel: &GenePanel,
    sample: &Sample,
) -> Result<ExenReport> {
    ensure_len("organism coordinates", panel.dg(), f_coords.len())?;
    let norm = f_coords.norm();
    if !(norm > 0.0) {
        return Err(Error::UndefinedRatio("the encoding is the void genome".into()));
    }
    if sample.is_empty() {
        return Err(Error::InvalidArgument("sample is empty".into()));
    }
    let n = sample.size() as f64;
    let mut g = DMatrix::zeros(panel.d(), panel.dg());
    let mut mean = DVector::zeros(panel.d());
    let mut second = 0.0;
    for (x, w) in sample.entries() {
        panel.evaluate_into(x, &mut g);
        let fx = &g * f_coords;
        second += *w as f64 * fx.norm_squared();
        mean += fx * (*w as f64);
    }
    mean /= n;
    second /= n;
    let mean_norm = mean.norm();
    let var = (second - mean_norm * mean_norm).max(0.0);
    Ok(ExenReport {
        rho: (var + mean_norm * mean_norm) / norm,
        mean_expression: mean_norm,
        var_expression: var,
        encoding_norm: norm,
    })
}

/// `rho(f, g) = rho(f - g)`.
pub fn exen_ratio_pair(
    f: &DVector<f64>,
    g: &DVector<f64>,
    panel: &GenePanel,
    sample: &Sample,
) -> Result<ExenReport> {
    exen_ratio_on_sample(&(f - g), panel, sample)
}

/// Empirical return `R = E <sigma b(x), grad phi(t(x)) - grad phi(f(x))>`
/// and premium `Pi = E D(f(x) + sigma alpha b(x) || f(x)) / alpha` of
/// mutant `(index, sigma)`.
#[allow(clippy::too_many_arguments)]
pub fn return_and_premium(
    f_coords: &DVector<f64>,
    mutations: &MutationSet,
    index: usize,
    sigma: i8,
    target: &Target,
    panel: &GenePanel,
    sample: &Sample,
    gen: &BregmanGenerator,
    alpha: f64,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    if sigma != 1 && sigma != -1 {
        return Err(Error::InvalidArgument("polarity must be +1 or -1".into()));
    }
    if index >= mutations.df() {
        return Err(Error::InvalidArgument(format!("mutation {index} does not exist")));
    }
    if sample.is_empty() {
        return Err(Error::InvalidArgument("sample is empty".into()));
    }
    ensure_len("organism coordinates", panel.dg(), f_coords.len())?;
    let s = sigma as f64;
    let b = mutations.get(index);
    let d = panel.d();
    let mut g = DMatrix::zeros(d, panel.dg());
    let mut t = vec![0.0; d];
    let (mut r, mut p) = (0.0, 0.0);
    for (x, w) in sample.entries() {
        let w = *w as f64;
        panel.evaluate_into(x, &mut g);
        target.output_into(x, &g, &mut t)?;
        let fx = &g * f_coords;
        let bx = (&g * b) * s;
        let gt = gen.gradient(&t);
        let gf = gen.gradient(fx.as_slice());
        let ret: f64 = (0..d).map(|k| bx[k] * (gt[k] - gf[k])).sum();
        let moved = &fx + &bx * alpha;
        r += w * ret;
        p += w * gen.divergence(moved.as_slice(), fx.as_slice())? / alpha;
    }
    let n = sample.size() as f64;
    Ok((r / n, p / n))
}

/// Best organism of `span(B)` for a quadratic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub t_in: DVector<f64>,
    /// Coefficients of `t_in` on the columns of `B`.
    pub weights: DVector<f64>,
    /// `sup_{f in span(B)} Perf(f)`.
    pub optimum: f64,
}

/// Projection of a coordinate target onto `span(B)` in the metric
/// `gamma_m = E[G^T M G]`.
pub fn agnostic_projection_oracle(
    t_coords: &DVector<f64>,
    mutations: &MutationSet,
    gamma_m: &DMatrix<f64>,
    gen: &BregmanGenerator,
) -> Result<Projection> {
    if !gen.is_quadratic() {
        return Err(Error::Unsupported(
            "the projection oracle needs a quadratic generator".into(),
        ));
    }
    ensure_len("target coordinates", gamma_m.nrows(), t_coords.len())?;
    let moments = QuadraticMoments {
        gamma: gamma_m.clone(),
        cross: gamma_m * t_coords,
        energy: t_coords.dot(&(gamma_m * t_coords)),
    };
    agnostic_projection_moments(&moments, mutations)
}

/// Projection from the moments of an observed target.
pub fn agnostic_projection_moments(
    moments: &QuadraticMoments,
    mutations: &MutationSet,
) -> Result<Projection> {
    let gamma = &moments.gamma;
    require_spd("expression Gram", gamma)?;
    ensure_len("mutation dimension", gamma.nrows(), mutations.dg())?;
    let b = DMatrix::from_columns(mutations.columns());
    let lhs = b.transpose() * gamma * &b;
    let rhs = b.transpose() * &moments.cross;
    // minimum-norm solution; t_in is unique even when B is redundant
    let scale = lhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let weights = lhs
        .svd(true, true)
        .solve(&rhs, 1e-12 * scale)
        .map_err(|e| Error::Model(e.to_string()))?;
    let t_in = &b * &weights;
    Ok(Projection {
        optimum: moments.performance(&t_in),
        t_in,
        weights,
    })
}

fn check_dg(dg: usize, limit: usize) -> Result<()> {
    if dg == 0 {
        return Err(Error::InvalidArgument("dG must be positive".into()));
    }
    if dg > limit {
        return Err(Error::Size(format!("brute force limited to dG <= {limit}, got {dg}")));
    }
    Ok(())
}

/// `P_dG(z) = z^(dG-1) (dG - (dG-1) z)`.
pub fn pdg_closed(dg: usize, z: f64) -> Result<f64> {
    check_dg(dg, usize::MAX)?;
    let k = dg as f64;
    Ok(z.powi(dg as i32 - 1) * (k - (k - 1.0) * z))
}

pub fn pdg_closed_exact(dg: usize, z: Ratio<i128>) -> Result<Ratio<i128>> {
    check_dg(dg, usize::MAX)?;
    let k = Ratio::from_integer(dg as i128);
    Ok(pow(z, dg - 1) * (k - (k - Ratio::one()) * z))
}

/// Every permutation of `0..n` with its sign and number of moved points.
fn for_each_permutation(n: usize, mut visit: impl FnMut(i8, usize)) {
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, 1, &mut visit);
}

fn permute(perm: &mut Vec<usize>, k: usize, sign: i8, visit: &mut impl FnMut(i8, usize)) {
    if k == perm.len() {
        let moved = perm.iter().enumerate().filter(|(i, p)| i != *p).count();
        visit(sign, moved);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, if i == k { sign } else { -sign }, visit);
        perm.swap(k, i);
    }
}

/// `sum_sigma sign(sigma) (1 - z)^(moved points of sigma)`.
pub fn pdg_bruteforce(dg: usize, z: f64) -> Result<f64> {
    check_dg(dg, 8)?;
    // accumulate signed counts per moved-point number, then evaluate
    let mut counts = vec![0i64; dg + 1];
    for_each_permutation(dg, |s, moved| counts[moved] += s as i64);
    Ok(counts
        .iter()
        .enumerate()
        .map(|(k, c)| *c as f64 * (1.0 - z).powi(k as i32))
        .sum())
}

pub fn pdg_bruteforce_exact(dg: usize, z: Ratio<i128>) -> Result<Ratio<i128>> {
    check_dg(dg, 8)?;
    let one_minus = Ratio::one() - z;
    let mut acc = Ratio::zero();
    for_each_permutation(dg, |s, moved| {
        acc += Ratio::from_integer(s as i128) * pow(one_minus, moved);
    });
    Ok(acc)
}

fn pow(z: Ratio<i128>, k: usize) -> Ratio<i128> {
    (0..k).fold(Ratio::one(), |a, _| a * z)
}

/// Signed derangement sum of `S_j`, computed by enumeration and as the
/// determinant of the hollow all-ones matrix; both values are returned.
pub fn derangement_sign_det(j: usize) -> Result<(i64, i64)> {
    if !(1..=9).contains(&j) {
        return Err(Error::InvalidArgument(format!("j must lie in 1..=9, got {j}")));
    }
    let mut sum = 0i64;
    for_each_permutation(j, |s, moved| {
        if moved == j {
            sum += s as i64;
        }
    });
    let hollow: Vec<Vec<i128>> = (0..j)
        .map(|r| (0..j).map(|c| if r == c { 0 } else { 1 }).collect())
        .collect();
    Ok((sum, bareiss_det(hollow) as i64))
}

/// Fraction-free integer determinant.
fn bareiss_det(mut a: Vec<Vec<i128>>) -> i128 {
    let n = a.len();
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..n.saturating_sub(1) {
        if a[k][k] == 0 {
            match (k + 1..n).find(|r| a[*r][k] != 0) {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for jj in k + 1..n {
                a[i][jj] = (a[i][jj] * a[k][k] - a[i][k] * a[k][jj]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}
