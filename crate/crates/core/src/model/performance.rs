use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{require_spd, spd_solve};
use crate::model::bregman::{BregmanGenerator, GeneratorKind};
use crate::model::{Condition, GenePanel, MutationSet, Sample};

pub type TargetFn = dyn Fn(&Condition) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub enum TargetKind {
    /// Known gene-basis coordinates: `t(x) = G_x t`.
    Coords(DVector<f64>),
    /// Per-condition output callback.
    Function(Arc<TargetFn>),
    /// The labelled response stored with each condition.
    Response,
    /// The condition vector itself (`t(x) = x`), used for mean estimation.
    ConditionValue,
}

impl fmt::Debug for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Coords(t) => write!(f, "Coords({:?})", t.as_slice()),
            TargetKind::Function(_) => write!(f, "Function"),
            TargetKind::Response => write!(f, "Response"),
            TargetKind::ConditionValue => write!(f, "ConditionValue"),
        }
    }
}

/// Target organism, seen only through its outputs `t(x)`.
///
/// `shift` is an additional gene-coordinate offset expressed through the
/// panel, `t(x) += G_x shift`; drift scenarios move the target through it.
#[derive(Debug, Clone)]
pub struct Target {
    kind: TargetKind,
    shift: Option<DVector<f64>>,
}

impl Target {
    pub fn new(kind: TargetKind) -> Self {
        Self { kind, shift: None }
    }

    pub fn coords(t: DVector<f64>) -> Self {
        Self::new(TargetKind::Coords(t))
    }

    pub fn function(f: impl Fn(&Condition) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::new(TargetKind::Function(Arc::new(f)))
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn shift(&self) -> Option<&DVector<f64>> {
        self.shift.as_ref()
    }

    pub fn set_shift(&mut self, shift: Option<DVector<f64>>) {
        self.shift = shift;
    }

    /// Adds `delta` (gene coordinates) to the current shift.
    pub fn translate(&mut self, delta: &DVector<f64>) {
        match &mut self.shift {
            Some(s) => *s += delta,
            None => self.shift = Some(delta.clone()),
        }
    }

    /// Gene coordinates of the target when they are known.
    pub fn known_coords(&self) -> Option<DVector<f64>> {
        match (&self.kind, &self.shift) {
            (TargetKind::Coords(t), None) => Some(t.clone()),
            (TargetKind::Coords(t), Some(s)) => Some(t + s),
            _ => None,
        }
    }

    /// Writes `t(x)` into `out` given the already evaluated `G_x`.
    pub fn output_into(&self, x: &Condition, g: &DMatrix<f64>, out: &mut [f64]) -> Result<()> {
        let d = g.nrows();
        ensure_len("target output", d, out.len())?;
        match &self.kind {
            TargetKind::Coords(t) => {
                ensure_len("target coordinates", g.ncols(), t.len())?;
                mat_vec_into(g, t.as_slice(), out);
            }
            TargetKind::Function(f) => {
                let v = f(x);
                ensure_len("target output", d, v.len())?;
                out.copy_from_slice(&v);
            }
            TargetKind::Response => {
                let r = x.response.as_ref().ok_or_else(|| {
                    Error::Model("target reads responses but the condition has none".into())
                })?;
                ensure_len("target response", d, r.len())?;
                out.copy_from_slice(r);
            }
            TargetKind::ConditionValue => {
                ensure_len("target output", d, x.dim())?;
                out.copy_from_slice(&x.x);
            }
        }
        if let Some(s) = &self.shift {
            ensure_len("target shift", g.ncols(), s.len())?;
            for (i, o) in out.iter_mut().enumerate() {
                *o += (0..g.ncols()).map(|j| g[(i, j)] * s[j]).sum::<f64>();
            }
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Model("target output is not finite".into()))
        }
    }

    pub fn output(&self, x: &Condition, panel: &GenePanel) -> Result<Vec<f64>> {
        let g = panel.evaluate(x);
        let mut out = vec![0.0; panel.d()];
        self.output_into(x, &g, &mut out)?;
        Ok(out)
    }
}

fn mat_vec_into(g: &DMatrix<f64>, c: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, cj) in c.iter().enumerate() {
            acc += g[(i, j)] * cj;
        }
        *o = acc;
    }
}

/// `-E_{x~S}[D(f(x) || t(x))]` from explicit per-condition outputs.
pub fn empirical_performance_from_outputs(
    gen: &BregmanGenerator,
    f_outputs: &[Vec<f64>],
    t_outputs: &[Vec<f64>],
) -> Result<f64> {
    if f_outputs.is_empty() {
        return Err(Error::InvalidArgument("sample is empty".into()));
    }
    ensure_len("target outputs", f_outputs.len(), t_outputs.len())?;
    let mut acc = 0.0;
    for (u, v) in f_outputs.iter().zip(t_outputs) {
        acc += gen.divergence(u, v)?;
    }
    Ok(-acc / f_outputs.len() as f64)
}

/// Empirical performance of the organism with gene coordinates `coords`.
pub fn empirical_performance(
    coords: &DVector<f64>,
    target: &Target,
    panel: &GenePanel,
    sample: &Sample,
    gen: &BregmanGenerator,
) -> Result<f64> {
    let mut eval = Evaluator::new(panel, gen, target);
    eval.performance(coords, sample)
}

/// Batched performance evaluation of an organism and its whole
/// neighbourhood on one sample. Buffers are reused across calls.
pub struct Evaluator<'a> {
    panel: &'a GenePanel,
    gen: &'a BregmanGenerator,
    target: &'a Target,
    g: DMatrix<f64>,
    fx: Vec<f64>,
    tx: Vec<f64>,
    gb: Vec<Vec<f64>>,
    u: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(panel: &'a GenePanel, gen: &'a BregmanGenerator, target: &'a Target) -> Self {
        let d = panel.d();
        Self {
            panel,
            gen,
            target,
            g: DMatrix::zeros(d, panel.dg()),
            fx: vec![0.0; d],
            tx: vec![0.0; d],
            gb: Vec::new(),
            u: vec![0.0; d],
        }
    }

    pub fn performance(&mut self, coords: &DVector<f64>, sample: &Sample) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::InvalidArgument("sample is empty".into()));
        }
        ensure_len("organism coordinates", self.panel.dg(), coords.len())?;
        let mut acc = 0.0;
        for (x, w) in sample.entries() {
            self.load(x, coords)?;
            acc += *w as f64 * self.gen.divergence_unchecked(&self.fx, &self.tx);
        }
        finish(-acc / sample.size() as f64)
    }

    /// Performance of `coords` and of every mutant, ordered
    /// `(0,+), (0,-), (1,+), (1,-), ...`.
    pub fn neighbourhood(
        &mut self,
        coords: &DVector<f64>,
        mutations: &MutationSet,
        alpha: f64,
        sample: &Sample,
        mutant_perf: &mut Vec<f64>,
    ) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::InvalidArgument("sample is empty".into()));
        }
        ensure_len("organism coordinates", self.panel.dg(), coords.len())?;
        ensure_len("mutation dimension", self.panel.dg(), mutations.dg())?;
        let df = mutations.df();
        let d = self.panel.d();
        mutant_perf.clear();
        mutant_perf.resize(2 * df, 0.0);
        self.gb.resize(df, vec![0.0; d]);
        let mut base = 0.0;
        for (x, w) in sample.entries() {
            let w = *w as f64;
            self.load(x, coords)?;
            let anchor = self.gen.anchor(&self.tx);
            base += w * self.gen.divergence_to(&self.fx, &self.tx, &anchor);
            for (i, b) in mutations.columns().iter().enumerate() {
                mat_vec_into(&self.g, b.as_slice(), &mut self.gb[i]);
                for (k, sigma) in [1.0, -1.0].into_iter().enumerate() {
                    for r in 0..d {
                        self.u[r] = self.fx[r] + sigma * alpha * self.gb[i][r];
                    }
                    mutant_perf[2 * i + k] +=
                        w * self.gen.divergence_to(&self.u, &self.tx, &anchor);
                }
            }
        }
        let n = sample.size() as f64;
        for p in mutant_perf.iter_mut() {
            *p = finish(-*p / n)?;
        }
        finish(-base / n)
    }

    fn load(&mut self, x: &Condition, coords: &DVector<f64>) -> Result<()> {
        self.panel.evaluate_into(x, &mut self.g);
        mat_vec_into(&self.g, coords.as_slice(), &mut self.fx);
        self.target.output_into(x, &self.g, &mut self.tx)
    }
}

fn finish(p: f64) -> Result<f64> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(Error::Model("performance evaluated to a non-finite value".into()))
    }
}

/// Generator-weighted second moment of the panel: `E[G_x^T M G_x]` for a
/// Mahalanobis generator, `E[G_x^T G_x]` otherwise, over `sample`.
pub fn expression_gram(panel: &GenePanel, gen: &BregmanGenerator, sample: &Sample) -> Result<DMatrix<f64>> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("sample is empty".into()));
    }
    let dg = panel.dg();
    let mut acc = DMatrix::zeros(dg, dg);
    let mut g = DMatrix::zeros(panel.d(), dg);
    for (x, w) in sample.entries() {
        panel.evaluate_into(x, &mut g);
        let term = match gen.kind() {
            GeneratorKind::Mahalanobis(m) => g.transpose() * m * &g,
            _ => g.transpose() * &g,
        };
        acc += term * (*w as f64);
    }
    Ok(acc / sample.size() as f64)
}

/// True performance bounds for a quadratic target.
///
/// For quadratic generators `gamma` is the generator-weighted Gram
/// (`E[G^T M G]` for Mahalanobis, `E[G^T G]` for squared Euclidean) and the
/// exact value `-<t - f, gamma (t - f)>` is returned twice. For custom
/// generators `gamma = E[G^T G]` and the Hessian sandwich
/// `(-H mu_max |t-f|^2 / 2, -h mu_min |t-f|^2 / 2)` is returned.
pub fn true_performance_quadratic(
    f_coords: &DVector<f64>,
    t_coords: &DVector<f64>,
    gamma: &DMatrix<f64>,
    gen: &BregmanGenerator,
) -> Result<(f64, f64)> {
    ensure_len("target coordinates", f_coords.len(), t_coords.len())?;
    ensure_len("gamma", f_coords.len(), gamma.nrows())?;
    let (mu_min, mu_max) = require_spd("gamma", gamma)?;
    let delta = t_coords - f_coords;
    if gen.is_quadratic() {
        let v = -delta.dot(&(gamma * &delta));
        Ok((v, v))
    } else {
        let n2 = delta.norm_squared();
        Ok((
            -0.5 * gen.h_max() * mu_max * n2,
            -0.5 * gen.h_min() * mu_min * n2,
        ))
    }
}

/// Least-squares optimum in gene coordinates for a quadratic generator:
/// solves `gamma c = cross` where `cross = E[G^T M t(x)]`.
pub fn quadratic_optimum(
    panel: &GenePanel,
    gen: &BregmanGenerator,
    target: &Target,
    sample: &Sample,
) -> Result<QuadraticMoments> {
    if !gen.is_quadratic() {
        return Err(Error::Unsupported(
            "moment form needs a quadratic generator".into(),
        ));
    }
    let dg = panel.dg();
    let d = panel.d();
    let mut gamma = DMatrix::zeros(dg, dg);
    let mut cross = DVector::zeros(dg);
    let mut energy = 0.0;
    let mut g = DMatrix::zeros(d, dg);
    let mut t = vec![0.0; d];
    let weight = match gen.kind() {
        GeneratorKind::Mahalanobis(m) => m.clone(),
        _ => DMatrix::identity(d, d),
    };
    for (x, w) in sample.entries() {
        let w = *w as f64;
        panel.evaluate_into(x, &mut g);
        target.output_into(x, &g, &mut t)?;
        let tv = DVector::from_column_slice(&t);
        let mt = &weight * &tv;
        gamma += (g.transpose() * &weight * &g) * w;
        cross += (g.transpose() * &mt) * w;
        energy += w * tv.dot(&mt);
    }
    let n = sample.size() as f64;
    gamma /= n;
    cross /= n;
    energy /= n;
    Ok(QuadraticMoments {
        gamma,
        cross,
        energy,
    })
}

/// Moments `Gamma = E[G^T M G]`, `cross = E[G^T M t]`, `energy = E[t^T M t]`
/// which determine every quadratic performance: for coordinates `c`,
/// `Perf(c) = -(energy - 2 c.cross + c^T Gamma c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMoments {
    pub gamma: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub energy: f64,
}

impl QuadraticMoments {
    pub fn performance(&self, c: &DVector<f64>) -> f64 {
        -(self.energy - 2.0 * c.dot(&self.cross) + c.dot(&(&self.gamma * c)))
    }

    /// Unconstrained maximiser of the performance.
    pub fn optimum(&self) -> Result<DVector<f64>> {
        spd_solve(&self.gamma, &self.cross)
    }
}
