use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::stream_rng;

/// A condition (experience) on which organisms are expressed.
///
/// `response` carries the observed target output when the condition comes
/// from a labelled dataset; it is only read through
/// [`crate::model::Target::Observed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub x: Vec<f64>,
    pub response: Option<Vec<f64>>,
}

impl Condition {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        ensure_finite("condition", &x)?;
        Ok(Self { x, response: None })
    }

    pub fn with_response(x: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        ensure_finite("condition", &x)?;
        ensure_finite("response", &response)?;
        Ok(Self {
            x,
            response: Some(response),
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// A finite list of conditions, optionally labelled.
#[derive(Debug, Clone)]
pub struct Dataset {
    rows: Vec<Arc<Condition>>,
    dim_x: usize,
    dim_response: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Condition>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
        let dim_x = first.dim();
        let dim_response = first.response.as_ref().map_or(0, Vec::len);
        for r in &rows {
            if r.dim() != dim_x || r.response.as_ref().map_or(0, Vec::len) != dim_response {
                return Err(Error::InvalidArgument(
                    "dataset rows have inconsistent widths".into(),
                ));
            }
        }
        Ok(Self {
            rows: rows.into_iter().map(Arc::new).collect(),
            dim_x,
            dim_response,
        })
    }

    /// Reads a CSV file with a header row; the last `target_columns`
    /// columns are the observed target outputs.
    pub fn from_csv(path: impl AsRef<Path>, target_columns: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let width = reader.headers()?.len();
        if width <= target_columns {
            return Err(Error::InvalidArgument(format!(
                "csv has {width} columns but {target_columns} target columns were requested"
            )));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("csv row {}: {e}", line + 2)))?;
            let split = width - target_columns;
            let row = if target_columns == 0 {
                Condition::new(values)?
            } else {
                Condition::with_response(values[..split].to_vec(), values[split..].to_vec())?
            };
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_response(&self) -> usize {
        self.dim_response
    }

    pub fn rows(&self) -> &[Arc<Condition>] {
        &self.rows
    }

    /// The whole dataset as a uniformly weighted sample; expectations over
    /// this sample are expectations under the empirical distribution.
    pub fn as_sample(&self) -> Sample {
        Sample {
            entries: self.rows.iter().map(|r| (Arc::clone(r), 1)).collect(),
            size: self.rows.len(),
        }
    }
}

/// An i.i.d. sample of conditions, stored with multiplicities.
#[derive(Debug, Clone)]
pub struct Sample {
    entries: Vec<(Arc<Condition>, u32)>,
    size: usize,
}

impl Sample {
    pub fn from_conditions(conditions: Vec<Condition>) -> Self {
        let size = conditions.len();
        Self {
            entries: conditions.into_iter().map(|c| (Arc::new(c), 1)).collect(),
            size,
        }
    }

    /// Number of draws, counting multiplicities.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Distinct conditions with their multiplicities.
    pub fn entries(&self) -> &[(Arc<Condition>, u32)] {
        &self.entries
    }
}

pub type ConditionFn = dyn Fn(&mut dyn RngCore) -> Condition + Send + Sync;

/// Describes the support of a generator sampler, for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportDescriptor {
    pub dim_x: usize,
    pub description: String,
}

#[derive(Clone)]
pub enum SamplerKind {
    /// Uniform with replacement over a dataset.
    Empirical(Arc<Dataset>),
    /// Draws from a user callback.
    Generator(Arc<ConditionFn>, SupportDescriptor),
}

impl fmt::Debug for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerKind::Empirical(d) => write!(f, "Empirical({} rows)", d.len()),
            SamplerKind::Generator(_, s) => write!(f, "Generator({:?})", s),
        }
    }
}

/// Source of i.i.d. condition samples. Draw `k` is a pure function of
/// `(seed, k)`.
#[derive(Debug, Clone)]
pub struct ConditionSampler {
    kind: SamplerKind,
    seed: u64,
}

const SAMPLER_STREAM: u64 = 0x5A4D_504C;

impl ConditionSampler {
    pub fn empirical(dataset: Arc<Dataset>, seed: u64) -> Self {
        Self {
            kind: SamplerKind::Empirical(dataset),
            seed,
        }
    }

    pub fn generator(
        f: impl Fn(&mut dyn RngCore) -> Condition + Send + Sync + 'static,
        support: SupportDescriptor,
        seed: u64,
    ) -> Self {
        Self {
            kind: SamplerKind::Generator(Arc::new(f), support),
            seed,
        }
    }

    pub fn kind(&self) -> &SamplerKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind.clone(),
            seed,
        }
    }

    pub fn dataset(&self) -> Option<&Arc<Dataset>> {
        match &self.kind {
            SamplerKind::Empirical(d) => Some(d),
            SamplerKind::Generator(..) => None,
        }
    }

    /// Draws `m` conditions i.i.d.; `draw_index` selects an independent
    /// stream so that draw `k` never depends on earlier draws.
    pub fn draw(&self, draw_index: u64, m: usize) -> Sample {
        let mut rng = stream_rng(self.seed, SAMPLER_STREAM, draw_index);
        match &self.kind {
            SamplerKind::Empirical(data) => multinomial_sample(data, m, &mut rng),
            SamplerKind::Generator(f, _) => {
                let entries = (0..m).map(|_| (Arc::new(f(&mut rng)), 1)).collect();
                Sample { entries, size: m }
            }
        }
    }
}

/// Uniform sampling with replacement, stored as per-row counts.
fn multinomial_sample(data: &Dataset, m: usize, rng: &mut impl Rng) -> Sample {
    let n = data.len();
    let mut counts = vec![0u32; n];
    if m < n {
        for _ in 0..m {
            counts[rng.gen_range(0..n)] += 1;
        }
    } else {
        // sequential conditional binomials
        let mut remaining = m as u64;
        for (i, c) in counts.iter_mut().enumerate() {
            if remaining == 0 {
                break;
            }
            let left = (n - i) as u64;
            let k = if left == 1 {
                remaining
            } else {
                Binomial::new(remaining, 1.0 / left as f64)
                    .expect("valid binomial")
                    .sample(rng)
            };
            *c = k as u32;
            remaining -= k;
        }
    }
    let entries = data
        .rows()
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(r, c)| (Arc::clone(r), c))
        .collect();
    Sample { entries, size: m }
}
