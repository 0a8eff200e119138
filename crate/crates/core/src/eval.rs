//! Metrics and link-prediction baselines.
//!
//! Graphs are undirected: adjacency is stored as a symmetric [`ObservedOnes`],
//! candidates are unordered pairs `i < j`, and self-pairs never appear.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PumcError, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::model::{MatrixModel, ObservedOnes};
use crate::spectral::{topk_svd, ObservationOperator};

/// Katz defaults: walks up to length 4, damping 0.005.
pub const DEFAULT_KATZ_BETA: f64 = 0.005;
pub const DEFAULT_KATZ_MAX_LEN: usize = 4;

fn check_shapes(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
        return Err(PumcError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Mean squared entrywise difference.
pub fn mse(x_hat: &DenseMatrix, m: &DenseMatrix) -> Result<f64> {
    check_shapes(x_hat, m)?;
    let sum: f64 = x_hat.values().iter().zip(m.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / m.values().len() as f64)
}

/// Fraction of entries where `x > q` disagrees with the binary `y`.
pub fn recovery_error(x_hat: &DenseMatrix, y: &DenseMatrix, q: f64) -> Result<f64> {
    check_shapes(x_hat, y)?;
    if let Some(v) = y.values().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(PumcError::Data(format!("recovery error needs a 0/1 target, found {v}")));
    }
    let wrong = x_hat
        .values()
        .iter()
        .zip(y.values())
        .filter(|(&x, &t)| (x > q) != (t == 1.0))
        .count();
    Ok(wrong as f64 / y.values().len() as f64)
}

/// Fraction of pairs whose sign of `2x - 1` disagrees with the
/// same-cluster (+1) / different-cluster (-1) ground truth. A prediction of
/// exactly 1/2 has no sign and counts as wrong.
pub fn clustering_sign_error(x_hat: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if x_hat.rows() != n || x_hat.cols() != n {
        return Err(PumcError::DimensionMismatch(format!(
            "{} labels for a {}x{} prediction",
            n,
            x_hat.rows(),
            x_hat.cols()
        )));
    }
    let mut wrong = 0usize;
    for i in 0..n {
        for j in 0..n {
            let truth = if labels[i] == labels[j] { 1.0 } else { -1.0 };
            if (2.0 * x_hat.get(i, j) - 1.0).signum() != truth || x_hat.get(i, j) == 0.5 {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / (n * n) as f64)
}

/// Scored candidate pairs in ranking order, best first. Ties are broken by
/// `(row, col)` so rankings are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPredictions {
    pub candidates: Vec<(usize, usize, f64)>,
    /// Training edges; never ranked.
    #[serde(skip)]
    pub excluded: Option<ObservedOnes>,
}

impl RankedPredictions {
    fn from_unsorted(mut candidates: Vec<(usize, usize, f64)>, excluded: &ObservedOnes, top: usize) -> Self {
        let order = |a: &(usize, usize, f64), b: &(usize, usize, f64)| {
            b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
        };
        if top < candidates.len() {
            candidates.select_nth_unstable_by(top, order);
            candidates.truncate(top);
        }
        candidates.sort_unstable_by(order);
        Self {
            candidates,
            excluded: Some(excluded.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Scores every unordered non-training pair `i < j` with `row_scores(i)[j]`
/// and keeps the best `top`.
pub fn rank_pairs(
    train: &ObservedOnes,
    top: usize,
    row_scores: impl Fn(usize) -> Vec<f64> + Sync,
) -> Result<RankedPredictions> {
    let n = check_square(train)?;
    let candidates: Vec<(usize, usize, f64)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let scores = row_scores(i);
            let neighbors = train.row_cols(i);
            ((i + 1)..n)
                .filter(move |j| neighbors.binary_search(j).is_err())
                .map(move |j| (i, j, scores[j]))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(RankedPredictions::from_unsorted(candidates, train, top))
}

/// Ranks pairs by a fitted model's predictions.
pub fn rank_model(model: &(dyn MatrixModel + Sync), train: &ObservedOnes, top: usize) -> Result<RankedPredictions> {
    if model.rows() != train.rows() || model.cols() != train.cols() {
        return Err(PumcError::DimensionMismatch("model and graph sizes differ".into()));
    }
    let n = train.rows();
    rank_pairs(train, top, |i| (0..n).map(|j| model.predict_unchecked(i, j)).collect())
}

fn check_square(train: &ObservedOnes) -> Result<usize> {
    if train.rows() != train.cols() {
        return Err(PumcError::DimensionMismatch(format!(
            "link prediction needs a square adjacency, got {}x{}",
            train.rows(),
            train.cols()
        )));
    }
    Ok(train.rows())
}

/// `y = A v` for the sparse 0/1 adjacency.
fn sparse_apply(a: &ObservedOnes, v: &[f64]) -> Vec<f64> {
    (0..a.rows()).map(|i| a.row_cols(i).iter().map(|&j| v[j]).sum()).collect()
}

/// `score(i, j) = |N(i) ∩ N(j)|`.
pub fn baseline_common_neighbors(train: &ObservedOnes, top: usize) -> Result<RankedPredictions> {
    let n = check_square(train)?;
    rank_pairs(train, top, |i| {
        let mut counts = vec![0.0; n];
        for &l in train.row_cols(i) {
            for &j in train.row_cols(l) {
                counts[j] += 1.0;
            }
        }
        counts
    })
}

/// Truncated Katz index `Σ_{l=2..max_len} βˡ (Aˡ)_ij`.
pub fn baseline_katz(train: &ObservedOnes, beta: f64, max_len: usize, top: usize) -> Result<RankedPredictions> {
    let n = check_square(train)?;
    check_katz(beta)?;
    if !train.is_empty() {
        let sigma = topk_svd(&ObservationOperator(train), 1, 100, 1e-8, 0)?.singular_values[0];
        if beta * sigma >= 1.0 {
            log::warn!("Katz series diverges: beta * sigma_1 = {:.3} >= 1", beta * sigma);
        }
    }
    rank_pairs(train, top, |i| {
        let mut walk = vec![0.0; n];
        walk[i] = 1.0;
        let mut acc = vec![0.0; n];
        let mut weight = 1.0;
        for len in 1..=max_len {
            walk = sparse_apply(train, &walk);
            weight *= beta;
            if len >= 2 {
                acc.iter_mut().zip(&walk).for_each(|(a, w)| *a += weight * w);
            }
        }
        acc
    })
}

/// Katz index computed on the rank-k approximation `A ≈ U Σ Vᵀ`:
/// `A_kˡ = U Σ (B Σ)^{l-1} Vᵀ` with `B = VᵀU`, so all powers live in `k x k`.
pub fn baseline_svd_katz(
    train: &ObservedOnes,
    rank_k: usize,
    beta: f64,
    max_len: usize,
    top: usize,
) -> Result<RankedPredictions> {
    let n = check_square(train)?;
    check_katz(beta)?;
    let k = rank_k.min(n);
    if k == 0 {
        return Err(PumcError::InvalidParameter("rank_k must be at least 1".into()));
    }
    let svd = topk_svd(&ObservationOperator(train), k, 300, 1e-13, 0)?;
    let (u, v, s) = (&svd.u, &svd.v, &svd.singular_values);
    let b = v.t_matmul(u)?;
    // power = Σ (BΣ)^{l-1}, core = Σ_l βˡ Σ (BΣ)^{l-1}
    let b_sigma = DenseMatrix::from_fn(k, k, |a, c| b.get(a, c) * s[c]);
    let mut power = DenseMatrix::identity(k);
    let mut core = DenseMatrix::zeros(k, k);
    let mut weight = 1.0;
    for len in 1..=max_len {
        weight *= beta;
        if len >= 2 {
            power = power.matmul(&b_sigma)?;
            for a in 0..k {
                for c in 0..k {
                    core.set(a, c, core.get(a, c) + weight * s[a] * power.get(a, c));
                }
            }
        }
    }
    let left = u.matmul(&core)?;
    rank_pairs(train, top, |i| (0..n).map(|j| dot(left.row(i), v.row(j))).collect())
}

fn check_katz(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(PumcError::InvalidParameter(format!("beta must be >= 0, got {beta}")))
    }
}

/// Set of pairs over which false positives are counted.
#[derive(Debug, Clone, PartialEq)]
pub enum Universe {
    /// Every unordered pair `i < j`; the non-link count is computed in closed form.
    AllPairs,
    /// An explicit candidate list (unordered pairs, normalized to `i < j`).
    Candidates(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprFnrCurve {
    pub points: Vec<CurvePoint>,
}

impl FprFnrCurve {
    /// Point at prefix size `k`, clamped to the longest prefix available.
    pub fn at(&self, k: usize) -> CurvePoint {
        self.points[k.min(self.points.len() - 1)]
    }
}

/// Unordered pairs `i < j` of a symmetric pattern (or all off-diagonal
/// entries of a directed one, each counted once as `(min, max)`).
fn undirected_pairs(obs: &ObservedOnes) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = obs
        .entries()
        .iter()
        .filter(|(i, j)| i != j)
        .map(|&(i, j)| (i.min(j), i.max(j)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// FPR and FNR after each prefix of the ranking, for `k = 0..=len`.
pub fn fpr_fnr(pred: &RankedPredictions, test_edges: &ObservedOnes, universe: &Universe) -> Result<FprFnrCurve> {
    let test = undirected_pairs(test_edges);
    if test.is_empty() {
        return Err(PumcError::Data("test edge set is empty".into()));
    }
    let n = test_edges.rows();
    let train = match &pred.excluded {
        Some(train) => {
            if train.rows() != n || train.cols() != test_edges.cols() {
                return Err(PumcError::DimensionMismatch("train and test graphs differ in size".into()));
            }
            if let Some(&(i, j)) = test.iter().find(|&&(i, j)| train.contains(i, j) || train.contains(j, i)) {
                return Err(PumcError::Data(format!("test edge ({i}, {j}) is also a training edge")));
            }
            undirected_pairs(train)
        }
        None => Vec::new(),
    };
    let non_links = match universe {
        Universe::AllPairs => (n * n.saturating_sub(1) / 2) as f64 - train.len() as f64 - test.len() as f64,
        Universe::Candidates(c) => {
            let mut pairs: Vec<(usize, usize)> = c.iter().filter(|(i, j)| i != j).map(|&(i, j)| (i.min(j), i.max(j))).collect();
            pairs.sort_unstable();
            pairs.dedup();
            pairs
                .iter()
                .filter(|p| train.binary_search(p).is_err() && test.binary_search(p).is_err())
                .count() as f64
        }
    };
    let mut points = Vec::with_capacity(pred.len() + 1);
    let (mut hits, mut misses) = (0usize, 0usize);
    points.push(CurvePoint { k: 0, fpr: 0.0, fnr: 1.0 });
    for (idx, &(i, j, _)) in pred.candidates.iter().enumerate() {
        if test.binary_search(&(i.min(j), i.max(j))).is_ok() {
            hits += 1;
        } else {
            misses += 1;
        }
        points.push(CurvePoint {
            k: idx + 1,
            fpr: if non_links > 0.0 { (misses as f64 / non_links).min(1.0) } else { 0.0 },
            fnr: 1.0 - hits as f64 / test.len() as f64,
        });
    }
    Ok(FprFnrCurve { points })
}
