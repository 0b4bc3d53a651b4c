//! The permissible mutator and the evolution loop.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BregmanGenerator, ConditionSampler, Evaluator, GenePanel, MutationSet, Organism, Sample,
    Target, TraceStep,
};
use crate::rng::{derive_seed, stream_rng, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct Mutant {
    pub index: usize,
    /// `+1` or `-1`.
    pub polarity: i8,
    pub coords: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Both sets empty: the mutator outputs bottom and evolution halts.
    #[default]
    Strict,
    /// Both sets empty: pick uniformly in the whole neighbourhood.
    ForcedUniform,
}

/// Position of mutant `(index, polarity)` in neighbourhood order.
#[cfg(test)]
fn slot(index: usize, polarity: i8) -> usize {
    2 * index + usize::from(polarity < 0)
}

fn unslot(k: usize) -> (usize, i8) {
    (k / 2, if k % 2 == 0 { 1 } else { -1 })
}

/// The `2 dF` mutants `f + sigma alpha b_i`, ordered `(0,+), (0,-), (1,+), ...`.
pub fn neighborhood(f: &Organism, mutations: &MutationSet, alpha: f64) -> Result<Vec<Mutant>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    let mut out = Vec::with_capacity(2 * mutations.df());
    for (i, b) in mutations.columns().iter().enumerate() {
        for polarity in [1i8, -1] {
            out.push(Mutant {
                index: i,
                polarity,
                coords: f.coords() + b * (polarity as f64 * alpha),
            });
        }
    }
    Ok(out)
}

/// Splits performance gains into beneficial (`gain >= tol`) and neutral
/// (`|gain| < tol`) positions.
pub fn classify_gains(gains: &[f64], tol: f64) -> (Vec<usize>, Vec<usize>) {
    let mut bene = Vec::new();
    let mut neut = Vec::new();
    for (k, g) in gains.iter().enumerate() {
        if *g >= tol {
            bene.push(k);
        } else if g.abs() < tol {
            neut.push(k);
        }
    }
    (bene, neut)
}

/// Classifies `mutants` of `f` with an arbitrary performance closure.
pub fn classify_mutants<F>(
    f: &Organism,
    mutants: &[Mutant],
    sample: &Sample,
    tol: f64,
    mut perf: F,
) -> Result<(Vec<Mutant>, Vec<Mutant>)>
where
    F: FnMut(&DVector<f64>, &Sample) -> Result<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if sample.is_empty() {
        return Err(Error::InvalidArgument("sample is empty".into()));
    }
    let base = perf(f.coords(), sample)?;
    let gains = mutants
        .iter()
        .map(|g| Ok(perf(&g.coords, sample)? - base))
        .collect::<Result<Vec<f64>>>()?;
    let (bene, neut) = classify_gains(&gains, tol);
    Ok((
        bene.into_iter().map(|k| mutants[k].clone()).collect(),
        neut.into_iter().map(|k| mutants[k].clone()).collect(),
    ))
}

/// One mutator call on a fresh sample. The organism is moved in place
/// unless the step fails.
#[allow(clippy::too_many_arguments)]
pub fn mutator_step(
    f: &mut Organism,
    mutations: &MutationSet,
    evaluator: &mut Evaluator<'_>,
    sample: &Sample,
    tol: f64,
    policy: FailurePolicy,
    rng: &mut impl Rng,
    step: usize,
) -> Result<TraceStep> {
    let mut perfs = Vec::with_capacity(2 * mutations.df());
    let before = evaluator.neighbourhood(f.coords(), mutations, f.alpha(), sample, &mut perfs)?;
    let gains: Vec<f64> = perfs.iter().map(|p| p - before).collect();
    let (bene, neut) = classify_gains(&gains, tol);
    let (pick, forced) = if !bene.is_empty() {
        (Some(bene[rng.gen_range(0..bene.len())]), false)
    } else if !neut.is_empty() {
        (Some(neut[rng.gen_range(0..neut.len())]), false)
    } else {
        match policy {
            FailurePolicy::Strict => (None, false),
            FailurePolicy::ForcedUniform => (Some(rng.gen_range(0..perfs.len())), true),
        }
    };
    let chosen = pick.map(unslot);
    if let Some((i, s)) = chosen {
        f.step(mutations, i, s);
    }
    Ok(TraceStep {
        step,
        perf_empirical_before: before,
        perf_empirical_after: pick.map_or(before, |k| perfs[k]),
        bene_size: bene.len(),
        neut_size: neut.len(),
        chosen,
        failed: pick.is_none(),
        forced,
        in_ht: None,
        perf_true_before: None,
        perf_true_after: None,
    })
}

/// Parameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub alpha: f64,
    pub tol: f64,
    pub m: usize,
    pub steps: usize,
    pub policy: FailurePolicy,
    pub seed: u64,
    /// Mutation-set renewal period (steps); `None` disables renewal.
    pub renewal_period: Option<usize>,
    /// Accuracy used to flag membership of the evolvability set when a
    /// true-performance oracle is available.
    pub epsilon: Option<f64>,
}

/// Read-only model shared by concurrent runs.
#[derive(Debug, Clone)]
pub struct EvolutionModel {
    pub panel: GenePanel,
    pub generator: BregmanGenerator,
    pub sampler: ConditionSampler,
}

/// Optional callbacks of the evolution loop.
pub trait RunHooks {
    /// Called every renewal period (never at step 0); a returned set
    /// replaces the current one and the organism is rebased on it.
    fn renew(
        &mut self,
        _step: usize,
        _current: &MutationSet,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Option<MutationSet>> {
        Ok(None)
    }

    /// True performance of gene coordinates against the current target.
    fn true_performance(&self, _coords: &DVector<f64>, _target: &Target) -> Option<f64> {
        None
    }

    /// Called after every step, typically to move the target.
    fn after_step(
        &mut self,
        _step: usize,
        _f: &Organism,
        _target: &mut Target,
        _rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        Ok(())
    }

    /// Early termination once the recorded step is known.
    fn stop(&mut self, _step: &TraceStep) -> bool {
        false
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl RunHooks for NoHooks {}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_organism: Organism,
    pub trace: Vec<TraceStep>,
    /// The run ended on a strict-policy failure.
    pub failed: bool,
    pub mutations: MutationSet,
    pub target: Target,
}

/// Runs up to `params.steps` mutator calls from `f0`.
///
/// Every source of randomness is a separate stream of `params.seed`:
/// condition sampling, selection, renewal and drift draws never interfere.
pub fn run_evolution(
    model: &EvolutionModel,
    mut target: Target,
    f0: Organism,
    mut mutations: MutationSet,
    params: &RunParams,
    hooks: &mut dyn RunHooks,
) -> Result<RunResult> {
    if params.m == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    if !(params.tol > 0.0 && params.alpha > 0.0) {
        return Err(Error::InvalidArgument("tol and alpha must be positive".into()));
    }
    if f0.counts().len() != mutations.df() || f0.dg() != mutations.dg() {
        return Err(Error::DimensionMismatch {
            what: "organism and mutation set",
            expected: mutations.df(),
            got: f0.counts().len(),
        });
    }
    let sampler = model
        .sampler
        .with_seed(derive_seed(params.seed, streams::SAMPLING));
    let mut f = f0;
    let mut trace = Vec::with_capacity(params.steps.min(1 << 20));
    let mut failed = false;
    for step in 0..params.steps {
        if let Some(period) = params.renewal_period {
            if period > 0 && step > 0 && step % period == 0 {
                let mut rng = stream_rng(params.seed, streams::RENEWAL, step as u64);
                if let Some(next) = hooks.renew(step, &mutations, &mut rng)? {
                    if next.dg() != mutations.dg() {
                        return Err(Error::DimensionMismatch {
                            what: "renewed mutation set",
                            expected: mutations.dg(),
                            got: next.dg(),
                        });
                    }
                    f.rebase(next.df());
                    mutations = next;
                }
            }
        }
        let sample = sampler.draw(step as u64, params.m);
        let true_before = hooks.true_performance(f.coords(), &target);
        let mut rng = stream_rng(params.seed, streams::SELECTION, step as u64);
        let mut evaluator = Evaluator::new(&model.panel, &model.generator, &target);
        let mut record = mutator_step(
            &mut f,
            &mutations,
            &mut evaluator,
            &sample,
            params.tol,
            params.policy,
            &mut rng,
            step,
        )?;
        if let Some(before) = true_before {
            let after = if record.chosen.is_some() {
                hooks.true_performance(f.coords(), &target)
            } else {
                Some(before)
            };
            record.perf_true_before = Some(before);
            record.perf_true_after = after;
            if let (Some(eps), Some(a)) = (params.epsilon, after) {
                record.in_ht = Some(a >= -eps);
            }
        }
        let stop = hooks.stop(&record);
        let halted = record.failed && params.policy == FailurePolicy::Strict;
        trace.push(record);
        if halted {
            failed = true;
            break;
        }
        let mut drift_rng = stream_rng(params.seed, streams::DRIFT, step as u64);
        hooks.after_step(step, &f, &mut target, &mut drift_rng)?;
        if stop {
            break;
        }
    }
    Ok(RunResult {
        final_organism: f,
        trace,
        failed,
        mutations,
        target,
    })
}

/// One JSON object per trace step.
pub fn write_trace_jsonl<W: Write>(mut out: W, trace: &[TraceStep]) -> Result<()> {
    for s in trace {
        serde_json::to_writer(&mut out, s).map_err(|e| Error::Io(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// CSV summary: step, perf, bene_size, neut_size, failed, forced.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceStep]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "perf", "bene_size", "neut_size", "failed", "forced"])?;
    for s in trace {
        w.write_record([
            s.step.to_string(),
            s.perf_empirical_after.to_string(),
            s.bene_size.to_string(),
            s.neut_size.to_string(),
            s.failed.to_string(),
            s.forced.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Condition, Dataset};
    use std::sync::Arc;

    fn setup() -> (EvolutionModel, Target) {
        let rows = (0..30)
            .map(|i| {
                let a = i as f64 * 0.7;
                Condition::new(vec![a.cos() * 0.5, a.sin() * 0.5]).unwrap()
            })
            .collect();
        let data = Arc::new(Dataset::new(rows).unwrap());
        let model = EvolutionModel {
            panel: GenePanel::identity(2, 1.0).unwrap(),
            generator: BregmanGenerator::squared_euclidean(),
            sampler: ConditionSampler::empirical(data, 0),
        };
        (model, Target::new(crate::model::TargetKind::ConditionValue))
    }

    #[test]
    fn neighbourhood_examples() {
        let b = MutationSet::orthonormal(2).unwrap();
        let f = Organism::new(DVector::zeros(2), 2, 1.0).unwrap();
        let n = neighborhood(&f, &b, 1.0).unwrap();
        assert_eq!(n.len(), 4);
        assert_eq!(n[0].coords, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(n[1].coords, DVector::from_vec(vec![-1.0, 0.0]));
        assert!(n.iter().all(|m| m.coords != *f.coords()));
        assert!(neighborhood(&f, &b, 0.0).is_err());
        assert_eq!(slot(3, -1), 7);
        assert_eq!(unslot(7), (3, -1));
    }

    #[test]
    fn classification_boundaries() {
        let tol = 0.25;
        let (bene, neut) = classify_gains(&[0.0, tol, -2.0 * tol, -tol, 0.1], tol);
        assert_eq!(bene, vec![1]);
        assert_eq!(neut, vec![0, 4]);
    }

    #[test]
    fn classify_with_closure() {
        let f = Organism::new(DVector::zeros(1), 1, 1.0).unwrap();
        let b = MutationSet::from_rows(&[vec![1.0]]).unwrap();
        let mutants = neighborhood(&f, &b, 1.0).unwrap();
        let s = Sample::from_conditions(vec![Condition::new(vec![0.0]).unwrap()]);
        let (bene, neut) = classify_mutants(&f, &mutants, &s, 0.5, |c, _| Ok(c[0])).unwrap();
        assert_eq!(bene.len(), 1);
        assert_eq!(bene[0].polarity, 1);
        assert!(neut.is_empty());
    }

    #[test]
    fn singleton_bene_is_always_chosen() {
        let (model, _) = setup();
        let target = Target::coords(DVector::from_vec(vec![5.0, 0.0]));
        let b = MutationSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let s = model.sampler.draw(0, 10);
        for seed in 0..50 {
            let mut f = Organism::new(DVector::zeros(2), 1, 0.1).unwrap();
            let mut ev = Evaluator::new(&model.panel, &model.generator, &target);
            let mut rng = stream_rng(seed, 0, 0);
            let rec = mutator_step(&mut f, &b, &mut ev, &s, 1e-3, FailurePolicy::Strict, &mut rng, 0).unwrap();
            assert_eq!(rec.chosen, Some((0, 1)));
            assert!(rec.perf_empirical_after - rec.perf_empirical_before >= 1e-3);
        }
    }

    #[test]
    fn neutral_choice_is_uniform() {
        let (model, _) = setup();
        let target = Target::coords(DVector::zeros(2));
        let b = MutationSet::orthonormal(2).unwrap();
        let s = model.sampler.draw(0, 5);
        let mut counts = [0u32; 4];
        let trials = 10_000;
        for k in 0..trials {
            let mut f = Organism::new(DVector::zeros(2), 2, 0.1).unwrap();
            let mut ev = Evaluator::new(&model.panel, &model.generator, &target);
            let mut rng = stream_rng(11, 0, k);
            // every gain is -alpha^2 = -0.01, neutral under tol = 1
            let rec = mutator_step(&mut f, &b, &mut ev, &s, 1.0, FailurePolicy::Strict, &mut rng, 0).unwrap();
            assert_eq!((rec.bene_size, rec.neut_size), (0, 4));
            let (i, p) = rec.chosen.unwrap();
            counts[slot(i, p)] += 1;
        }
        let expected = trials as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        // chi-square with 3 degrees of freedom, p = 0.001
        assert!(chi2 < 16.266, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn strict_failure_and_forced_move() {
        let (model, _) = setup();
        let target = Target::coords(DVector::zeros(2));
        let b = MutationSet::orthonormal(2).unwrap();
        let s = model.sampler.draw(0, 5);
        let mut f = Organism::new(DVector::zeros(2), 2, 1.0).unwrap();
        let mut ev = Evaluator::new(&model.panel, &model.generator, &target);
        let mut rng = stream_rng(0, 0, 0);
        // every gain is -1, outside both sets for tol = 0.5
        let rec = mutator_step(&mut f, &b, &mut ev, &s, 0.5, FailurePolicy::Strict, &mut rng, 0).unwrap();
        assert!(rec.failed && rec.chosen.is_none());
        assert_eq!(f.coords(), &DVector::zeros(2));
        let rec = mutator_step(&mut f, &b, &mut ev, &s, 0.5, FailurePolicy::ForcedUniform, &mut rng, 0).unwrap();
        assert!(rec.forced && !rec.failed && rec.chosen.is_some());
        assert!((f.coords().norm() - 1.0).abs() < 1e-15);
    }

    fn params(steps: usize, seed: u64) -> RunParams {
        RunParams {
            alpha: 0.05,
            tol: 1e-4,
            m: 200,
            steps,
            policy: FailurePolicy::ForcedUniform,
            seed,
            renewal_period: None,
            epsilon: None,
        }
    }

    #[test]
    fn zero_steps_returns_start() {
        let (model, target) = setup();
        let f0 = Organism::new(DVector::from_vec(vec![1.0, 1.0]), 2, 0.05).unwrap();
        let r = run_evolution(&model, target, f0.clone(), MutationSet::orthonormal(2).unwrap(), &params(0, 1), &mut NoHooks).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.final_organism, f0);
    }

    #[test]
    fn runs_are_deterministic_and_converge() {
        let (model, target) = setup();
        let f0 = Organism::new(DVector::from_vec(vec![1.0, 1.0]), 2, 0.05).unwrap();
        let b = MutationSet::orthonormal(2).unwrap();
        let a = run_evolution(&model, target.clone(), f0.clone(), b.clone(), &params(100, 3), &mut NoHooks).unwrap();
        let c = run_evolution(&model, target, f0, b.clone(), &params(100, 3), &mut NoHooks).unwrap();
        let mut ja = Vec::new();
        let mut jc = Vec::new();
        write_trace_jsonl(&mut ja, &a.trace).unwrap();
        write_trace_jsonl(&mut jc, &c.trace).unwrap();
        assert_eq!(ja, jc);
        let mean = model.sampler.dataset().unwrap().rows().iter().fold(DVector::zeros(2), |acc, r| {
            acc + DVector::from_column_slice(&r.x)
        }) / 30.0;
        assert!((a.final_organism.coords() - mean).norm() < 0.2);
        let exact = a.final_organism.recompute_coords(&b).unwrap();
        assert!((exact - a.final_organism.coords()).norm() < 1e-9);
        for s in &a.trace {
            if s.chose_beneficial() {
                assert!(s.perf_empirical_after - s.perf_empirical_before >= 1e-4);
            }
        }
        let mut csv_out = Vec::new();
        write_trace_csv(&mut csv_out, &a.trace).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert!(text.starts_with("step,perf,bene_size,neut_size,failed,forced\n"));
        assert_eq!(text.lines().count(), 101);
    }

    struct Renew(usize);

    impl RunHooks for Renew {
        fn renew(&mut self, _: usize, _: &MutationSet, _: &mut ChaCha8Rng) -> Result<Option<MutationSet>> {
            self.0 += 1;
            Ok(Some(MutationSet::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0], vec![0.0, 1.0]]).unwrap()))
        }
    }

    #[test]
    fn renewal_hook_runs_each_period() {
        let (model, target) = setup();
        let f0 = Organism::new(DVector::from_vec(vec![1.0, 1.0]), 2, 0.05).unwrap();
        let mut p = params(35, 2);
        p.renewal_period = Some(10);
        let mut hooks = Renew(0);
        let r = run_evolution(&model, target, f0, MutationSet::orthonormal(2).unwrap(), &p, &mut hooks).unwrap();
        assert_eq!(hooks.0, 3);
        assert_eq!(r.mutations.df(), 3);
        assert_eq!(r.final_organism.counts().len(), 3);
    }
}
