//! Efficient frontier of mutations for a quadratic divergence.
//!
//! For `delta = t - f` and the generator-weighted Gram `Gamma`, the premium
//! `Pi(b) = (alpha / 2) <b, Gamma b>` is minimised under the return
//! constraint `<b, Gamma delta> = r` and the budget `<1, b> = n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{require_spd, spd_solve};

/// Relative tolerance of the exact case splits.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierProblem {
    pub delta: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub n: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub r: f64,
    pub premium: f64,
    pub b: DVector<f64>,
    pub lambda_r: f64,
    pub lambda_n: f64,
}

/// Scalars shared by every frontier formula.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Invariants {
    /// `S = <1, Gamma^-1 1>`.
    s: f64,
    /// `Delta = <1, delta>`.
    big_delta: f64,
    /// `<delta, Gamma delta>`.
    q: f64,
    /// `P_delta = (alpha / 2) <delta, Gamma delta>`.
    p_delta: f64,
}

impl FrontierProblem {
    pub fn new(delta: DVector<f64>, gamma: DMatrix<f64>, n: f64, alpha: f64) -> Result<Self> {
        ensure_len("delta", gamma.nrows(), delta.len())?;
        ensure_finite("delta", delta.as_slice())?;
        if !(alpha > 0.0 && alpha.is_finite()) || !n.is_finite() {
            return Err(Error::InvalidArgument("alpha must be positive and n finite".into()));
        }
        require_spd("Gamma", &gamma)?;
        Ok(Self {
            delta,
            gamma,
            n,
            alpha,
        })
    }

    pub fn dg(&self) -> usize {
        self.delta.len()
    }

    fn gamma_inv_one(&self) -> Result<DVector<f64>> {
        spd_solve(&self.gamma, &DVector::from_element(self.dg(), 1.0))
    }

    fn invariants(&self) -> Result<Invariants> {
        let s = self.gamma_inv_one()?.sum();
        let q = self.delta.dot(&(&self.gamma * &self.delta));
        Ok(Invariants {
            s,
            big_delta: self.delta.sum(),
            q,
            p_delta: 0.5 * self.alpha * q,
        })
    }

    /// `S <delta, Gamma delta> - Delta^2 >= 0`, zero iff `delta` is
    /// proportional to `Gamma^-1 1`.
    fn spread(&self, inv: &Invariants) -> f64 {
        let k = inv.s * inv.q - inv.big_delta * inv.big_delta;
        if k <= DEGENERACY_TOL * inv.s * inv.q {
            0.0
        } else {
            k
        }
    }

    /// Smallest premium compatible with the budget, `alpha n^2 / (2 S)`.
    pub fn min_premium(&self) -> Result<f64> {
        let inv = self.invariants()?;
        Ok(self.alpha * self.n * self.n / (2.0 * inv.s))
    }

    /// Return at the minimum-premium point, `n Delta / S`.
    pub fn min_premium_return(&self) -> Result<f64> {
        let inv = self.invariants()?;
        Ok(self.n * inv.big_delta / inv.s)
    }

    /// Premium of a mutation vector.
    pub fn premium_of(&self, b: &DVector<f64>) -> f64 {
        0.5 * self.alpha * b.dot(&(&self.gamma * b))
    }

    /// Premium at which `xi(b)` equals `xi_b`.
    pub fn premium_for_xi(&self, xi_b: f64) -> Result<f64> {
        let inv = self.invariants()?;
        Ok(xi_b * self.alpha * self.n * self.n / (2.0 * inv.s))
    }
}

/// `xi(u) = S <u, Gamma u> / <1, u>^2`.
pub fn xi(u: &DVector<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    ensure_len("u", gamma.nrows(), u.len())?;
    let sum = u.sum();
    if sum.abs() <= 1e-12 * u.norm() || u.norm() == 0.0 {
        return Err(Error::UndefinedXi);
    }
    let s = spd_solve(gamma, &DVector::from_element(u.len(), 1.0))?.sum();
    Ok(s * u.dot(&(gamma * u)) / (sum * sum))
}

/// `(r_plus, r_minus)` on the frontier at the given premium:
/// `r = n Delta / S +- sqrt((S <delta, Gamma delta> - Delta^2)(2 S Pi / alpha - n^2)) / S`.
pub fn efficient_frontier(p: &FrontierProblem, premium_level: f64) -> Result<(f64, f64)> {
    let inv = p.invariants()?;
    let excess = 2.0 * inv.s * premium_level / p.alpha - p.n * p.n;
    let scale = (p.n * p.n).max(f64::MIN_POSITIVE);
    if !premium_level.is_finite() || excess < -DEGENERACY_TOL * scale {
        return Err(Error::Domain(format!(
            "premium {premium_level} is below the minimum {}",
            p.alpha * p.n * p.n / (2.0 * inv.s)
        )));
    }
    let centre = p.n * inv.big_delta / inv.s;
    let excess = if excess <= DEGENERACY_TOL * scale { 0.0 } else { excess };
    let half = (p.spread(&inv) * excess).sqrt() / inv.s;
    Ok((centre + half, centre - half))
}

/// The same frontier written with `xi`; only defined for `Delta != 0` and
/// `n != 0`.
pub fn efficient_frontier_xi_form(p: &FrontierProblem, premium_level: f64) -> Result<(f64, f64)> {
    let inv = p.invariants()?;
    let xi_delta = xi(&p.delta, &p.gamma)?;
    if p.n == 0.0 {
        return Err(Error::UndefinedXi);
    }
    let xi_b = 2.0 * inv.s * premium_level / (p.alpha * p.n * p.n);
    if xi_b < 1.0 - DEGENERACY_TOL {
        return Err(Error::Domain(format!("premium {premium_level} is infeasible")));
    }
    let centre = p.n * inv.big_delta / inv.s;
    let root = ((xi_delta - 1.0).max(0.0) * (xi_b - 1.0).max(0.0)).sqrt();
    let (a, b) = (centre * (1.0 + root), centre * (1.0 - root));
    Ok((a.max(b), a.min(b)))
}

/// Minimum-premium mutation achieving return `r` under the budget.
pub fn kkt_oracle(p: &FrontierProblem, r: f64) -> Result<FrontierPoint> {
    if !r.is_finite() {
        return Err(Error::InvalidArgument("target return must be finite".into()));
    }
    let inv = p.invariants()?;
    let g1 = p.gamma_inv_one()?;
    let a = p.alpha;
    let det = 2.0 * inv.s * inv.p_delta - a * inv.big_delta * inv.big_delta;
    if p.spread(&inv) == 0.0 {
        // delta is proportional to Gamma^-1 1: the return is pinned to n Delta / S
        let pinned = p.n * inv.big_delta / inv.s;
        if (r - pinned).abs() > DEGENERACY_TOL * r.abs().max(pinned.abs()).max(1.0) {
            return Err(Error::Domain(format!(
                "return {r} is infeasible; only {pinned} is reachable"
            )));
        }
        let b = &g1 * (p.n / inv.s);
        return Ok(FrontierPoint {
            r,
            premium: p.premium_of(&b),
            b,
            lambda_r: 0.0,
            lambda_n: a * p.n / inv.s,
        });
    }
    let lambda_r = (a * a * inv.s * r - a * a * inv.big_delta * p.n) / det;
    let lambda_n = (2.0 * a * inv.p_delta * p.n - a * a * inv.big_delta * r) / det;
    let b = &p.delta * (lambda_r / a) + &g1 * (lambda_n / a);
    Ok(FrontierPoint {
        r,
        premium: p.premium_of(&b),
        b,
        lambda_r,
        lambda_n,
    })
}

/// `(premium, r_minus, r_plus)` rows at `levels` premium multiples of the
/// minimum premium.
pub fn frontier_sweep(p: &FrontierProblem, levels: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let base = p.min_premium()?;
    levels
        .iter()
        .map(|l| {
            let premium = base * l;
            let (plus, minus) = efficient_frontier(p, premium)?;
            Ok((premium, minus, plus))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// Bordered KKT system solved by LU, independent of the closed forms.
    fn bordered(p: &FrontierProblem, r: f64) -> DVector<f64> {
        let k = p.dg();
        let mut m = DMatrix::zeros(k + 2, k + 2);
        let gd = &p.gamma * &p.delta;
        m.view_mut((0, 0), (k, k)).copy_from(&(&p.gamma * p.alpha));
        for i in 0..k {
            m[(i, k)] = gd[i];
            m[(k, i)] = gd[i];
            m[(i, k + 1)] = 1.0;
            m[(k + 1, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(k + 2);
        rhs[k] = r;
        rhs[k + 1] = p.n;
        m.lu().solve(&rhs).unwrap().rows(0, k).into_owned()
    }

    #[test]
    fn xi_examples() {
        assert!((xi(&dv(&[1.0, 1.0, 1.0]), &eye(3)).unwrap() - 1.0).abs() < 1e-15);
        assert!((xi(&dv(&[1.0, 0.0]), &eye(2)).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(xi(&dv(&[1.0, -1.0]), &eye(2)), Err(Error::UndefinedXi)));
    }

    #[test]
    fn degenerate_delta_pins_return() {
        let gamma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g1 = spd_solve(&gamma, &dv(&[1.0, 1.0])).unwrap();
        let p = FrontierProblem::new(&g1 * 0.7, gamma, 1.3, 0.2).unwrap();
        let pinned = p.min_premium_return().unwrap();
        for level in [1.0, 2.0, 10.0] {
            let (a, b) = efficient_frontier(&p, p.min_premium().unwrap() * level).unwrap();
            assert!((a - pinned).abs() < 1e-12 && (b - pinned).abs() < 1e-12);
        }
        let pt = kkt_oracle(&p, pinned).unwrap();
        assert_eq!(pt.lambda_r, 0.0);
        assert!((&pt.b - &g1 * (1.3 / g1.sum())).norm() < 1e-12);
        assert!(matches!(kkt_oracle(&p, pinned + 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_delta_sum_example() {
        // Gamma = I, delta = (1, -1), n = 1, alpha = 1, premium = 1:
        // S = 2, <delta, delta> = 2, xi(b) = 4, r = +-(1/2) sqrt(4 * 3) = +-sqrt(3)
        let p = FrontierProblem::new(dv(&[1.0, -1.0]), eye(2), 1.0, 1.0).unwrap();
        let (plus, minus) = efficient_frontier(&p, 1.0).unwrap();
        assert!((plus - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(plus, -minus);
        let b = bordered(&p, plus);
        assert!((p.premium_of(&b) - 1.0).abs() < 1e-12);
        let pt = kkt_oracle(&p, plus).unwrap();
        assert!((&pt.b - &b).norm() < 1e-12);
    }

    #[test]
    fn zero_budget_example() {
        let p = FrontierProblem::new(dv(&[1.0, 0.0]), eye(2), 0.0, 1.0).unwrap();
        let pt = kkt_oracle(&p, 1.0).unwrap();
        assert!((pt.b.dot(&(&p.gamma * &p.delta)) - 1.0).abs() < 1e-10);
        assert!(pt.b.sum().abs() < 1e-10);
        let expected = &p.delta * (pt.lambda_r / p.alpha)
            + spd_solve(&p.gamma, &dv(&[1.0, 1.0])).unwrap() * (pt.lambda_n / p.alpha);
        assert!((&pt.b - expected).norm() < 1e-12);
    }

    #[test]
    fn min_premium_point() {
        let gamma = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let p = FrontierProblem::new(dv(&[0.4, -0.1, 0.9]), gamma.clone(), 0.8, 0.3).unwrap();
        let r0 = p.min_premium_return().unwrap();
        let pt = kkt_oracle(&p, r0).unwrap();
        // budget-only minimiser is (n / S) Gamma^-1 1
        let g1 = spd_solve(&gamma, &DVector::from_element(3, 1.0)).unwrap();
        let budget_only = &g1 * (0.8 / g1.sum());
        assert!((p.premium_of(&budget_only) - pt.premium).abs() < 1e-12);
        assert!((pt.premium - p.min_premium().unwrap()).abs() < 1e-12);
        let (plus, minus) = efficient_frontier(&p, p.min_premium().unwrap()).unwrap();
        assert!((plus - r0).abs() < 1e-9 && (minus - r0).abs() < 1e-9);
        assert!(efficient_frontier(&p, 0.5 * p.min_premium().unwrap()).is_err());
    }

    fn arb_problem() -> impl Strategy<Value = FrontierProblem> {
        (2usize..=6).prop_flat_map(|k| {
            (
                prop::collection::vec(-1.0f64..1.0, k * k),
                prop::collection::vec(-2.0f64..2.0, k),
                -2.0f64..2.0,
                0.01f64..1.0,
            )
                .prop_map(move |(a, d, n, alpha)| {
                    let a = DMatrix::from_vec(k, k, a);
                    let gamma = &a * a.transpose() + DMatrix::identity(k, k) * 0.1;
                    FrontierProblem::new(DVector::from_vec(d), gamma, n, alpha).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn closed_form_matches_bordered_solve(p in arb_problem(), level in 1.0f64..20.0) {
            let premium = p.min_premium().unwrap() * level;
            let (plus, minus) = efficient_frontier(&p, premium).unwrap();
            prop_assert!(plus >= minus);
            for r in [plus, minus] {
                let b = bordered(&p, r);
                let pt = kkt_oracle(&p, r).unwrap();
                prop_assert!((pt.b.clone() - &b).norm() <= 1e-7 * b.norm().max(1.0));
                prop_assert!((p.premium_of(&b) - premium).abs() <= 1e-8 * premium.max(1e-12));
            }
            if let Ok((xp, xm)) = efficient_frontier_xi_form(&p, premium) {
                prop_assert!((xp - plus).abs() <= 1e-8 * plus.abs().max(1.0));
                prop_assert!((xm - minus).abs() <= 1e-8 * minus.abs().max(1.0));
            }
        }

        #[test]
        fn r_plus_is_monotone(p in arb_problem(), a in 1.0f64..10.0, b in 1.0f64..10.0) {
            let m = p.min_premium().unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(efficient_frontier(&p, m * lo).unwrap().0 <= efficient_frontier(&p, m * hi).unwrap().0 + 1e-12);
        }

        #[test]
        fn xi_at_least_one(p in arb_problem()) {
            if let Ok(x) = xi(&p.delta, &p.gamma) {
                prop_assert!(x >= 1.0 - 1e-12);
            }
        }
    }
}
