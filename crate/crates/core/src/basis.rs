//! Basis quality, selection of the best basis inside a mutation set, and
//! the normalised volume.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram, rank};
use crate::model::MutationSet;
use crate::rng::stream_rng;

/// Relative Gram-determinant threshold below which a set counts as dependent.
pub const INDEPENDENCE_THRESHOLD: f64 = 1e-12;
/// Largest subset count searched exhaustively.
pub const EXHAUSTIVE_LIMIT: u64 = 10_000;
/// Random restarts of the local-swap heuristic.
pub const HEURISTIC_RESTARTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisQuality {
    pub b_h: f64,
    pub bbar: f64,
    pub kappa_n: f64,
    pub kappa_a: f64,
    /// Minimal folded pairwise angle, in `[0, pi/2]`.
    pub theta: f64,
    /// Geometric mean of the squared norms.
    pub g_mean: f64,
    /// Arithmetic mean of the squared norms.
    pub a_mean: f64,
    pub max_norm: f64,
}

/// `det(Gram) / prod ||b_i||^2`, in `[0, 1]`.
fn normalized_gram_det(vectors: &[DVector<f64>]) -> f64 {
    let g = gram(vectors);
    let scale: f64 = vectors.iter().map(|b| b.norm_squared()).product();
    g.determinant() / scale
}

fn check_independent(vectors: &[DVector<f64>]) -> Result<()> {
    if vectors.is_empty() {
        return Err(Error::EmptyMutationSet);
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|b| b.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "basis vector",
            expected: dim,
            got: vectors.iter().map(|b| b.len()).find(|l| *l != dim).unwrap_or(dim),
        });
    }
    if vectors.len() > dim || vectors.iter().any(|b| b.norm_squared() == 0.0) {
        return Err(Error::RankDeficient(format!(
            "{} vectors in dimension {dim}",
            vectors.len()
        )));
    }
    let det = normalized_gram_det(vectors);
    if !(det > INDEPENDENCE_THRESHOLD) {
        return Err(Error::RankDeficient(format!(
            "normalised Gram determinant {det:e} is below {INDEPENDENCE_THRESHOLD:e}"
        )));
    }
    Ok(())
}

/// Quality of a set of `k` linearly independent vectors; `k` plays the role
/// of the dimension (it is the rank in agnostic mode).
pub fn basis_quality(vectors: &[DVector<f64>]) -> Result<BasisQuality> {
    check_independent(vectors)?;
    let k = vectors.len();
    let kf = k as f64;
    let norms: Vec<f64> = vectors.iter().map(|b| b.norm()).collect();
    let sq: Vec<f64> = norms.iter().map(|n| n * n).collect();
    let a_mean = sq.iter().sum::<f64>() / kf;
    let g_mean = (sq.iter().map(|s| s.ln()).sum::<f64>() / kf).exp();
    let one_minus_kn = (g_mean / a_mean).min(1.0).powf(kf / 2.0);
    let mut max_cos: f64 = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let c = (vectors[i].dot(&vectors[j]) / (norms[i] * norms[j])).abs();
            max_cos = max_cos.max(c.clamp(0.0, 1.0));
        }
    }
    let (theta, one_minus_ka) = if k == 1 {
        (FRAC_PI_2, 1.0)
    } else {
        (max_cos.acos(), (1.0 - max_cos).powi(k as i32 - 1))
    };
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let b_h = one_minus_kn * one_minus_ka * norms.iter().sum::<f64>() / kf;
    Ok(BasisQuality {
        b_h,
        bbar: b_h / max_norm,
        kappa_n: 1.0 - one_minus_kn,
        kappa_a: 1.0 - one_minus_ka,
        theta,
        g_mean,
        a_mean,
        max_norm,
    })
}

/// `vol(B~) = sqrt(det(B~^T B~))` with
/// `B~ = (k / sum ||b||^2)^((k-1)/(2k)) B`.
pub fn normalized_volume(vectors: &[DVector<f64>]) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::EmptyMutationSet);
    }
    let k = vectors.len() as f64;
    let total: f64 = vectors.iter().map(|b| b.norm_squared()).sum();
    let c = (k / total).powf((k - 1.0) / (2.0 * k));
    let det = gram(vectors).determinant().max(0.0);
    Ok(c.powf(k) * det.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BstarSelection {
    /// Indices into the mutation set, increasing.
    pub indices: Vec<usize>,
    pub quality: BasisQuality,
    pub exhaustive: bool,
    /// Dimension of `span(B)`; below `dG` in agnostic mode.
    pub rank: usize,
}

fn subset_bbar(b: &MutationSet, idx: &[usize]) -> Option<BasisQuality> {
    let v: Vec<DVector<f64>> = idx.iter().map(|i| b.get(*i).clone()).collect();
    basis_quality(&v).ok()
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Basis of `span(B)` maximising the normalised quality.
///
/// Exhaustive over all subsets of size `rank(B)` when there are at most
/// [`EXHAUSTIVE_LIMIT`] of them (ties go to the lexicographically smallest
/// index set); heuristic otherwise.
pub fn select_bstar(b: &MutationSet, dg: usize, seed: u64) -> Result<BstarSelection> {
    if b.dg() != dg {
        return Err(Error::DimensionMismatch {
            what: "mutation dimension",
            expected: dg,
            got: b.dg(),
        });
    }
    let r = rank(b.columns());
    if r == 0 {
        return Err(Error::EmptyMutationSet);
    }
    if binomial(b.df(), r) <= EXHAUSTIVE_LIMIT {
        exhaustive(b, r)
    } else {
        select_bstar_heuristic(b, r, seed)
    }
}

fn exhaustive(b: &MutationSet, k: usize) -> Result<BstarSelection> {
    let n = b.df();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<usize>, BasisQuality)> = None;
    loop {
        if let Some(q) = subset_bbar(b, &idx) {
            if best.as_ref().map_or(true, |(_, bq)| q.bbar > bq.bbar) {
                best = Some((idx.clone(), q));
            }
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                let (indices, quality) = best.ok_or_else(|| {
                    Error::RankDeficient("no independent subset of full rank".into())
                })?;
                return Ok(BstarSelection {
                    indices,
                    quality,
                    exhaustive: true,
                    rank: k,
                });
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Greedy volume seed followed by local swaps, plus random restarts.
pub fn select_bstar_heuristic(b: &MutationSet, k: usize, seed: u64) -> Result<BstarSelection> {
    let n = b.df();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot pick {k} of {n} vectors")));
    }
    let mut best: Option<(Vec<usize>, BasisQuality)> = None;
    let consider = |start: Vec<usize>, best: &mut Option<(Vec<usize>, BasisQuality)>| {
        if let Some((idx, q)) = local_swap(b, start) {
            let better = match best {
                None => true,
                Some((bi, bq)) => q.bbar > bq.bbar || (q.bbar == bq.bbar && idx < *bi),
            };
            if better {
                *best = Some((idx, q));
            }
        }
    };
    consider(greedy_volume(b, k), &mut best);
    let mut rng = stream_rng(seed, 0x4253_5441, 0);
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..HEURISTIC_RESTARTS {
        let mut start: Vec<usize> = all.choose_multiple(&mut rng, k).copied().collect();
        start.sort_unstable();
        consider(start, &mut best);
    }
    let (indices, quality) =
        best.ok_or_else(|| Error::RankDeficient("no independent subset found".into()))?;
    Ok(BstarSelection {
        indices,
        quality,
        exhaustive: false,
        rank: k,
    })
}

fn greedy_volume(b: &MutationSet, k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut pick = None;
        let mut best_vol = -1.0;
        for i in 0..b.df() {
            if chosen.contains(&i) {
                continue;
            }
            let mut v: Vec<DVector<f64>> = chosen.iter().map(|j| b.get(*j).clone()).collect();
            v.push(b.get(i).clone());
            let vol = gram(&v).determinant();
            if vol > best_vol {
                best_vol = vol;
                pick = Some(i);
            }
        }
        chosen.push(pick.expect("k <= df"));
    }
    chosen.sort_unstable();
    chosen
}

/// Hill-climbs by single swaps; `None` when the start is dependent and no
/// swap repairs it.
fn local_swap(b: &MutationSet, mut idx: Vec<usize>) -> Option<(Vec<usize>, BasisQuality)> {
    let mut current = subset_bbar(b, &idx);
    loop {
        let mut improved = false;
        'outer: for pos in 0..idx.len() {
            for cand in 0..b.df() {
                if idx.contains(&cand) {
                    continue;
                }
                let mut trial = idx.clone();
                trial[pos] = cand;
                trial.sort_unstable();
                if let Some(q) = subset_bbar(b, &trial) {
                    if current.as_ref().map_or(true, |c| q.bbar > c.bbar) {
                        idx = trial;
                        current = Some(q);
                        improved = true;
                        break 'outer;
                    }
                }
            }
        }
        if !improved {
            return current.map(|q| (idx, q));
        }
    }
}

/// Columns of `vectors` as a matrix.
pub fn as_matrix(vectors: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_columns(vectors)
}
