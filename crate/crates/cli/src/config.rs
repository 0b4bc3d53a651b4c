//! TOML run configuration and its translation into library objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use evospace::experiments::{random_data_pair, ScenarioConfig, ScenarioKind};
use evospace::model::{
    quadratic_optimum, BregmanGenerator, ConditionSampler, Dataset, GenePanel, MutationSet, Target,
    TargetKind,
};
use evospace::rng::{stream_rng, streams};
use evospace::schedule::{
    estimate_model_constants, HorizonInput, KnobTriple, ModelConstants, ScheduleOptions,
    DEFAULT_SAFETY_FACTOR,
};
use evospace::engine::FailurePolicy;
use evospace::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub mutation: MutationBlock,
    #[serde(default)]
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        deserialize_with = "scenario_over_defaults"
    )]
    pub scenario: Option<ScenarioConfig>,
}

/// Missing `[scenario]` keys take the defaults of the named scenario kind.
fn scenario_over_defaults<'de, D>(de: D) -> std::result::Result<Option<ScenarioConfig>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error as _;
    let user = toml::Table::deserialize(de)?;
    let kind = match user.get("scenario") {
        Some(v) => ScenarioKind::deserialize(v.clone()).map_err(D::Error::custom)?,
        None => ScenarioKind::UnsupervisedMean,
    };
    let mut table = toml::Table::try_from(ScenarioConfig::defaults(kind)).map_err(D::Error::custom)?;
    table.extend(user);
    ScenarioConfig::deserialize(table).map(Some).map_err(D::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PanelConfig {
    Identity {
        d: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    DataColumns {
        columns: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    SquaredEuclidean,
    /// Row-major symmetric positive definite matrix.
    Mahalanobis { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Coords { coords: Vec<f64> },
    Response,
    ConditionValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub panel: PanelConfig,
    pub generator: GeneratorConfig,
    pub target: TargetConfig,
    /// CSV file: condition columns first, then `response_columns` columns.
    pub dataset: PathBuf,
    #[serde(default)]
    pub response_columns: usize,
    /// Start organism; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MutationBlock {
    Orthonormal,
    Explicit { vectors: Vec<Vec<f64>> },
    /// Two data points spanning the plane.
    DataPairs {
        #[serde(default = "half")]
        min_sin: f64,
    },
}

impl Default for MutationBlock {
    fn default() -> Self {
        Self::Orthonormal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleBlock {
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knobs: Option<KnobTriple>,
    pub c_m: f64,
    pub c_t: f64,
    pub m_cap: usize,
    /// Horizon `D`; derived from the distance to the optimum when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_hint: Option<u64>,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        let o = ScheduleOptions::default();
        Self {
            epsilon: 0.1,
            knobs: None,
            c_m: o.c_m,
            c_t: o.c_t,
            m_cap: o.m_cap,
            d_hint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    /// Number of steps; the scheduled `T` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub policy: FailurePolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub renewal_period: Option<usize>,
    pub seeds: Vec<u64>,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            steps: None,
            policy: FailurePolicy::Strict,
            renewal_period: None,
            seeds: vec![0],
        }
    }
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.model.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.model.dataset = dir.join(&cfg.model.dataset);
            }
        }
        Ok(cfg)
    }
}

/// Library objects resolved from a [`RunConfig`].
pub struct Resolved {
    pub panel: GenePanel,
    pub generator: BregmanGenerator,
    pub target: Target,
    pub dataset: Arc<Dataset>,
    pub mutations: MutationSet,
    pub start: DVector<f64>,
    pub constants: ModelConstants,
    pub horizon: HorizonInput,
    pub knobs: KnobTriple,
    pub options: ScheduleOptions,
}

impl Resolved {
    pub fn sampler(&self, seed: u64) -> ConditionSampler {
        ConditionSampler::empirical(Arc::clone(&self.dataset), seed)
    }
}

pub fn resolve(cfg: &RunConfig, seed: u64) -> Result<Resolved> {
    let dataset = Arc::new(Dataset::from_csv(&cfg.model.dataset, cfg.model.response_columns)?);
    let panel = match &cfg.model.panel {
        PanelConfig::Identity { d, scale } => GenePanel::identity(*d, *scale)?,
        PanelConfig::DataColumns { columns } => GenePanel::data_columns(columns.clone())?,
    };
    let generator = match &cfg.model.generator {
        GeneratorConfig::SquaredEuclidean => BregmanGenerator::squared_euclidean(),
        GeneratorConfig::Mahalanobis { matrix } => {
            let n = matrix.len();
            if matrix.iter().any(|r| r.len() != n) {
                return Err(Error::Config("mahalanobis matrix must be square".into()));
            }
            let m = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
            BregmanGenerator::mahalanobis(m)?
        }
    };
    let target = match &cfg.model.target {
        TargetConfig::Coords { coords } => Target::coords(DVector::from_vec(coords.clone())),
        TargetConfig::Response => Target::new(TargetKind::Response),
        TargetConfig::ConditionValue => Target::new(TargetKind::ConditionValue),
    };
    let dg = panel.dg();
    let mutations = match &cfg.mutation {
        MutationBlock::Orthonormal => MutationSet::orthonormal(dg)?,
        MutationBlock::Explicit { vectors } => MutationSet::from_rows(vectors)?,
        MutationBlock::DataPairs { min_sin } => {
            random_data_pair(&dataset, *min_sin, &mut stream_rng(seed, streams::RENEWAL, 0))?
        }
    };
    if mutations.dg() != dg {
        return Err(Error::Config(format!(
            "mutations live in dimension {}, the panel has {dg} genes",
            mutations.dg()
        )));
    }
    let start = match &cfg.model.start {
        Some(v) if v.len() != dg => {
            return Err(Error::Config(format!("start has {} coordinates, expected {dg}", v.len())))
        }
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::zeros(dg),
    };
    let sampler = ConditionSampler::empirical(Arc::clone(&dataset), seed);
    let est = estimate_model_constants(&panel, &mutations, &sampler, 10 * dg, DEFAULT_SAFETY_FACTOR)?;
    let bstar = evospace::basis::select_bstar(&mutations, dg, seed)?;
    let star = mutations.subset(&bstar.indices)?;
    let star_est = estimate_model_constants(&panel, &star, &sampler, 10 * dg, DEFAULT_SAFETY_FACTOR)?;
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
    let horizon = match cfg.schedule.d_hint {
        Some(d) => HorizonInput::Hint(d),
        None => {
            let moments = quadratic_optimum(&panel, &generator, &target, &dataset.as_sample())?;
            HorizonInput::Distance((moments.optimum()? - &start).norm())
        }
    };
    Ok(Resolved {
        panel,
        generator,
        target,
        dataset,
        mutations,
        start,
        constants,
        horizon,
        knobs: cfg.schedule.knobs.unwrap_or_default(),
        options: ScheduleOptions {
            c_m: cfg.schedule.c_m,
            c_t: cfg.schedule.c_t,
            m_cap: cfg.schedule.m_cap,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
[model]
dataset = "points.csv"
response_columns = 1
panel = { kind = "data_columns", columns = [0, 1] }
generator = { kind = "squared_euclidean" }
target = { kind = "response" }

[mutation]
kind = "explicit"
vectors = [[1.0, 0.0], [0.0, 1.0]]

[schedule]
epsilon = 0.1
c_t = 0.003

[run]
policy = "forced_uniform"
seeds = [1, 2]
"#;

    #[test]
    fn parses_documented_example() {
        let c = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.run.seeds, vec![1, 2]);
        assert_eq!(c.run.policy, FailurePolicy::ForcedUniform);
        assert_eq!(c.schedule.m_cap, 50_000);
        assert!(matches!(c.mutation, MutationBlock::Explicit { .. }));
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = SAMPLE.replace("epsilon = 0.1", "epsilon = 0.1\nbogus = 3");
        assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn scenario_block_uses_kind_defaults() {
        let text = format!("{SAMPLE}\n[scenario]\nscenario = \"stability\"\nseeds = [4]\n");
        let c = RunConfig::from_toml(&text).unwrap().scenario.unwrap();
        assert_eq!(c, ScenarioConfig { seeds: vec![4], ..ScenarioConfig::defaults(ScenarioKind::Stability) });
        let bad = format!("{SAMPLE}\n[scenario]\nstart_radus = 1.0\n");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e6f64..1e6
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        let panel = prop_oneof![
            (1usize..5, 0.1f64..10.0).prop_map(|(d, scale)| PanelConfig::Identity { d, scale }),
            prop::collection::vec(0usize..4, 1..4).prop_map(|columns| PanelConfig::DataColumns { columns }),
        ];
        let generator = prop_oneof![
            Just(GeneratorConfig::SquaredEuclidean),
            prop::collection::vec(prop::collection::vec(finite(), 2), 2)
                .prop_map(|matrix| GeneratorConfig::Mahalanobis { matrix }),
        ];
        let target = prop_oneof![
            prop::collection::vec(finite(), 1..4).prop_map(|coords| TargetConfig::Coords { coords }),
            Just(TargetConfig::Response),
            Just(TargetConfig::ConditionValue),
        ];
        let mutation = prop_oneof![
            Just(MutationBlock::Orthonormal),
            prop::collection::vec(prop::collection::vec(finite(), 2), 1..4)
                .prop_map(|vectors| MutationBlock::Explicit { vectors }),
            (0.0f64..1.0).prop_map(|min_sin| MutationBlock::DataPairs { min_sin }),
        ];
        let schedule = (
            1e-3f64..1.0,
            prop::option::of((1e-3f64..1.0, 1e-3f64..1.0, 1e-3f64..1.0)),
            1e-3f64..10.0,
            1e-3f64..10.0,
            1usize..100_000,
            prop::option::of(1u64..20),
        )
            .prop_map(|(epsilon, k, c_m, c_t, m_cap, d_hint)| ScheduleBlock {
                epsilon,
                knobs: k.map(|(a, b, c)| KnobTriple::new(a, b, c)),
                c_m,
                c_t,
                m_cap,
                d_hint,
            });
        let run = (
            prop::option::of(1usize..10_000),
            prop::bool::ANY,
            prop::option::of(1usize..5000),
            prop::collection::vec(0u64..=i64::MAX as u64, 1..5),
        )
            .prop_map(|(steps, forced, renewal_period, seeds)| RunBlock {
                steps,
                policy: if forced { FailurePolicy::ForcedUniform } else { FailurePolicy::Strict },
                renewal_period,
                seeds,
            });
        (
            panel,
            generator,
            target,
            prop::option::of(prop::collection::vec(finite(), 1..4)),
            0usize..3,
            mutation,
            schedule,
            run,
            prop::bool::ANY,
        )
            .prop_map(|(panel, generator, target, start, response_columns, mutation, schedule, run, scen)| {
                RunConfig {
                    model: ModelBlock {
                        panel,
                        generator,
                        target,
                        dataset: PathBuf::from("data/points.csv"),
                        response_columns,
                        start,
                    },
                    mutation,
                    schedule,
                    run,
                    scenario: scen.then(ScenarioConfig::default),
                }
            })
    }

    proptest! {
        #[test]
        fn config_round_trips(c in arb_config()) {
            let text = c.to_toml().unwrap();
            prop_assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        }
    }
}
