//! Domain types and the performance arithmetic.

pub mod bregman;
mod condition;
mod mutation;
mod organism;
mod panel;
pub mod performance;
mod trace;

pub use bregman::{BregmanGenerator, GeneratorKind, ProbeRegion};
pub use condition::{
    Condition, ConditionFn, ConditionSampler, Dataset, Sample, SamplerKind, SupportDescriptor,
};
pub use mutation::MutationSet;
pub use organism::Organism;
pub use panel::{GenePanel, PanelKind};
pub use performance::{
    empirical_performance, empirical_performance_from_outputs, expression_gram,
    quadratic_optimum, true_performance_quadratic, Evaluator, QuadraticMoments, Target,
    TargetKind,
};
pub use trace::TraceStep;

/// `D(u||v)` for the given generator.
pub fn bregman_divergence(gen: &BregmanGenerator, u: &[f64], v: &[f64]) -> crate::Result<f64> {
    gen.divergence(u, v)
}
