use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::require_spd;
use crate::rng::stream_rng;

pub type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User-supplied convex generator with declared Hessian bounds.
#[derive(Clone)]
pub struct CustomGenerator {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
}

impl CustomGenerator {
    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Clone)]
pub enum GeneratorKind {
    /// `phi(u) = <u, u>`, so `D(u||v) = ||u - v||^2`.
    SquaredEuclidean,
    /// `phi(u) = <u, M u>`, so `D(u||v) = <u - v, M (u - v)>`.
    Mahalanobis(DMatrix<f64>),
    Custom(CustomGenerator),
}

impl fmt::Debug for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorKind::SquaredEuclidean => write!(f, "SquaredEuclidean"),
            GeneratorKind::Mahalanobis(m) => write!(f, "Mahalanobis({m:?})"),
            GeneratorKind::Custom(c) => write!(f, "Custom(dim={})", c.dim),
        }
    }
}

/// Box in which a custom generator's declared Hessian bounds are checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRegion {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for ProbeRegion {
    fn default() -> Self {
        Self {
            lo: -2.0,
            hi: 2.0,
            points: 256,
            seed: 0,
        }
    }
}

/// Declared bounds may be violated by at most this relative margin.
pub const HESSIAN_DECLARATION_MARGIN: f64 = 0.01;

/// Strictly convex generator `phi` with Hessian eigenvalues in
/// `[h_min, h_max]`.
#[derive(Debug, Clone)]
pub struct BregmanGenerator {
    kind: GeneratorKind,
    h_min: f64,
    h_max: f64,
}

impl BregmanGenerator {
    pub fn squared_euclidean() -> Self {
        Self {
            kind: GeneratorKind::SquaredEuclidean,
            h_min: 2.0,
            h_max: 2.0,
        }
    }

    /// `m` must be symmetric positive definite; the Hessian is `2m`.
    pub fn mahalanobis(m: DMatrix<f64>) -> Result<Self> {
        let (lo, hi) = require_spd("Mahalanobis matrix", &m)?;
        Ok(Self {
            kind: GeneratorKind::Mahalanobis(m),
            h_min: 2.0 * lo,
            h_max: 2.0 * hi,
        })
    }

    /// Custom generator. The declared bounds are checked against second
    /// finite differences of `value` at random points and directions in
    /// `probe`; a violation beyond [`HESSIAN_DECLARATION_MARGIN`] is an
    /// error.
    pub fn custom(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        h_min: f64,
        h_max: f64,
        probe: &ProbeRegion,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("generator dimension must be positive".into()));
        }
        if !(h_min > 0.0 && h_min <= h_max && h_max.is_finite()) {
            return Err(Error::Model(format!(
                "Hessian bounds must satisfy 0 < h_min <= h_max < inf, got [{h_min}, {h_max}]"
            )));
        }
        let custom = CustomGenerator {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        };
        let (lo, hi) = probe_hessian(&custom, probe);
        if lo < h_min * (1.0 - HESSIAN_DECLARATION_MARGIN)
            || hi > h_max * (1.0 + HESSIAN_DECLARATION_MARGIN)
        {
            return Err(Error::Model(format!(
                "declared Hessian bounds [{h_min}, {h_max}] contradict probed range [{lo:.6}, {hi:.6}]"
            )));
        }
        Ok(Self {
            kind: GeneratorKind::Custom(custom),
            h_min,
            h_max,
        })
    }

    pub fn kind(&self) -> &GeneratorKind {
        &self.kind
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn is_quadratic(&self) -> bool {
        !matches!(self.kind, GeneratorKind::Custom(_))
    }

    /// The fixed output dimension, when the generator has one.
    pub fn dim(&self) -> Option<usize> {
        match &self.kind {
            GeneratorKind::SquaredEuclidean => None,
            GeneratorKind::Mahalanobis(m) => Some(m.nrows()),
            GeneratorKind::Custom(c) => Some(c.dim),
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        match &self.kind {
            GeneratorKind::SquaredEuclidean => u.iter().map(|a| a * a).sum(),
            GeneratorKind::Mahalanobis(m) => quad(m, u, u),
            GeneratorKind::Custom(c) => (c.value)(u),
        }
    }

    pub fn gradient_into(&self, u: &[f64], out: &mut [f64]) {
        match &self.kind {
            GeneratorKind::SquaredEuclidean => {
                for (o, a) in out.iter_mut().zip(u) {
                    *o = 2.0 * a;
                }
            }
            GeneratorKind::Mahalanobis(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = 2.0 * (0..u.len()).map(|j| m[(i, j)] * u[j]).sum::<f64>();
                }
            }
            GeneratorKind::Custom(c) => (c.gradient)(u, out),
        }
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        self.gradient_into(u, &mut g);
        g
    }

    /// `D(u||v) = phi(u) - phi(v) - <grad phi(v), u - v>`.
    pub fn divergence(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        ensure_len("divergence argument", u.len(), v.len())?;
        if let Some(d) = self.dim() {
            ensure_len("divergence argument", d, u.len())?;
        }
        ensure_finite("divergence argument", u)?;
        ensure_finite("divergence argument", v)?;
        let d = self.divergence_unchecked(u, v);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Model("divergence evaluated to a non-finite value".into()))
        }
    }

    pub fn divergence_vec(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.divergence(u.as_slice(), v.as_slice())
    }

    /// Divergence without argument checks. Quadratic kinds are evaluated
    /// in difference form, which is exact to rounding and never negative.
    pub(crate) fn divergence_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match &self.kind {
            GeneratorKind::SquaredEuclidean => u
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
            GeneratorKind::Mahalanobis(m) => {
                let n = u.len();
                let mut acc = 0.0;
                for i in 0..n {
                    let di = u[i] - v[i];
                    let mut row = 0.0;
                    for j in 0..n {
                        row += m[(i, j)] * (u[j] - v[j]);
                    }
                    acc += di * row;
                }
                acc
            }
            GeneratorKind::Custom(c) => {
                let mut g = vec![0.0; v.len()];
                (c.gradient)(v, &mut g);
                divergence_from_parts((c.value)(u), (c.value)(v), &g, u, v)
            }
        }
    }

    /// Divergence to a fixed `v` whose value and gradient are precomputed.
    pub(crate) fn divergence_to(&self, u: &[f64], v: &[f64], anchor: &Anchor) -> f64 {
        match &self.kind {
            GeneratorKind::Custom(c) => {
                divergence_from_parts((c.value)(u), anchor.value, &anchor.gradient, u, v)
            }
            _ => self.divergence_unchecked(u, v),
        }
    }

    pub(crate) fn anchor(&self, v: &[f64]) -> Anchor {
        match &self.kind {
            GeneratorKind::Custom(_) => Anchor {
                value: self.value(v),
                gradient: self.gradient(v),
            },
            _ => Anchor::default(),
        }
    }
}

/// Cached `phi(v)` and `grad phi(v)` for repeated divergences to `v`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Anchor {
    value: f64,
    gradient: Vec<f64>,
}

fn divergence_from_parts(phi_u: f64, phi_v: f64, grad_v: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let lin: f64 = grad_v
        .iter()
        .zip(u.iter().zip(v))
        .map(|(g, (a, b))| g * (a - b))
        .sum();
    phi_u - phi_v - lin
}

fn quad(m: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += u[i] * m[(i, j)] * v[j];
        }
    }
    acc
}

/// Range of Hessian Rayleigh quotients seen through second differences.
fn probe_hessian(c: &CustomGenerator, probe: &ProbeRegion) -> (f64, f64) {
    let mut rng = stream_rng(probe.seed, 0x4845_5353, 0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut plus = vec![0.0; c.dim];
    let mut minus = vec![0.0; c.dim];
    for _ in 0..probe.points.max(1) {
        let u: Vec<f64> = (0..c.dim).map(|_| rng.gen_range(probe.lo..=probe.hi)).collect();
        let mut v: Vec<f64> = (0..c.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|a| *a /= norm);
        let scale = u.iter().map(|a| a.abs()).fold(1.0, f64::max);
        let h = 1e-4 * scale;
        for k in 0..c.dim {
            plus[k] = u[k] + h * v[k];
            minus[k] = u[k] - h * v[k];
        }
        let q = ((c.value)(&plus) - 2.0 * (c.value)(&u) + (c.value)(&minus)) / (h * h);
        lo = lo.min(q);
        hi = hi.max(q);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quartic() -> BregmanGenerator {
        let probe = ProbeRegion {
            lo: 1.0,
            hi: 2.0,
            ..ProbeRegion::default()
        };
        BregmanGenerator::custom(
            1,
            |u| u[0].powi(4),
            |u, g| g[0] = 4.0 * u[0].powi(3),
            12.0,
            48.0,
            &probe,
        )
        .unwrap()
    }

    #[test]
    fn squared_euclidean_examples() {
        let g = BregmanGenerator::squared_euclidean();
        assert_eq!(g.divergence(&[3.0, -1.0], &[3.0, -1.0]).unwrap(), 0.0);
        assert_eq!(g.divergence(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!((g.h_min(), g.h_max()), (2.0, 2.0));
    }

    #[test]
    fn mahalanobis_example() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let g = BregmanGenerator::mahalanobis(m).unwrap();
        assert_eq!(g.divergence(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 3.0);
        assert_eq!((g.h_min(), g.h_max()), (2.0, 4.0));
    }

    #[test]
    fn mahalanobis_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(BregmanGenerator::mahalanobis(m).is_err());
    }

    #[test]
    fn quartic_example_matches_finite_difference_gradient() {
        // oracle: phi(2) - phi(1) - phi'(1) * 1 with phi' by central differences
        let phi = |u: f64| u.powi(4);
        let h = 1e-5;
        let dphi1 = (phi(1.0 + h) - phi(1.0 - h)) / (2.0 * h);
        let expected = phi(2.0) - phi(1.0) - dphi1 * (2.0 - 1.0);
        assert!((expected - 11.0).abs() < 1e-6);
        let g = quartic();
        assert!((g.divergence(&[2.0], &[1.0]).unwrap() - 11.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_declaration_is_rejected() {
        let probe = ProbeRegion {
            lo: 1.0,
            hi: 2.0,
            ..ProbeRegion::default()
        };
        let r = BregmanGenerator::custom(
            1,
            |u| u[0].powi(4),
            |u, g| g[0] = 4.0 * u[0].powi(3),
            12.0,
            30.0,
            &probe,
        );
        assert!(r.is_err());
        assert!(BregmanGenerator::custom(1, |u| u[0] * u[0], |u, g| g[0] = 2.0 * u[0], 0.0, 2.0, &probe).is_err());
    }

    #[test]
    fn non_finite_input_is_invalid() {
        let g = BregmanGenerator::squared_euclidean();
        assert!(matches!(
            g.divergence(&[f64::NAN], &[0.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(g.divergence(&[1.0], &[0.0, 1.0]).is_err());
    }

    fn spd2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn divergences_are_nonnegative(u in prop::array::uniform2(-5.0f64..5.0),
                                       v in prop::array::uniform2(-5.0f64..5.0)) {
            let gens = [
                BregmanGenerator::squared_euclidean(),
                BregmanGenerator::mahalanobis(spd2()).unwrap(),
            ];
            for g in &gens {
                let d = g.divergence(&u, &v).unwrap();
                prop_assert!(d >= 0.0);
                if u != v { prop_assert!(d > 0.0); }
            }
        }

        #[test]
        fn custom_divergence_is_nonnegative(u in 1.0f64..2.0, v in 1.0f64..2.0) {
            let g = quartic();
            prop_assert!(g.divergence(&[u], &[v]).unwrap() >= -1e-12);
        }
    }
}
