//! Synthetic ground truth, the two observation processes and the
//! `ρ`-selection helpers.
//!
//! Every stochastic routine takes an explicit seed. Randomness comes from
//! ChaCha8 streams: one seed addresses independent streams, so the clean
//! matrix and the thinning of its ones never share random numbers.
//!
//! The revealed set is produced by independent Bernoulli(1 - ρ) thinning of
//! the ones of `Y`. Conditioned on its size, that set is a uniform subset of
//! the ones, and its marginal law is `P(A_ij = 1) = M_ij (1 - ρ)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PumcError, Result};
use crate::linalg::{dot, orthonormal_columns, DenseMatrix};
use crate::model::{check_rho, check_unit_open, ObservedOnes};

/// Clamp ceiling for grid values of `ρ`.
pub const RHO_CEILING: f64 = 1.0 - 1e-6;

const STREAM_BASIS: u64 = 0;
const STREAM_CLEAN: u64 = 1;
const STREAM_THINNING: u64 = 2;
const STREAM_GRAPH: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_FEATURES: u64 = 5;

/// Seeded generator on a given stream of `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Entries of `M` in [0, 1] are Bernoulli parameters for `Y`.
    NonDeterministic,
    /// `Y` is `M` thresholded at `q`.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QPolicy {
    /// `q` at the lower median, so `Y` has (almost) equal zeros and ones.
    Balanced,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub k: usize,
    pub setting: Setting,
    pub rho: f64,
    pub q_policy: QPolicy,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(PumcError::InvalidParameter(format!(
                "need 1 <= k <= n, got k = {}, n = {}",
                self.k, self.n
            )));
        }
        check_rho(self.rho)
    }
}

/// A generated PU problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PuInstance {
    pub ground_truth_m: DenseMatrix,
    pub clean_y: DenseMatrix,
    pub observed: ObservedOnes,
    /// The configured noise rate.
    pub true_rho: f64,
    /// `1 - s̄/s`, the fraction of ones actually hidden.
    pub realized_rho: f64,
    /// Threshold used to build `Y` (deterministic setting only).
    pub q_used: Option<f64>,
}

/// `U Uᵀ` for `U` an orthonormal basis of a seeded Gaussian `n x k` matrix.
pub fn random_projection(n: usize, k: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeded_rng(seed, STREAM_BASIS);
    let g = DenseMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    let u = orthonormal_columns(&g);
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(u.row(i), u.row(j));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// Ground truth `M = U Uᵀ`, linearly rescaled to [0, 1] in the
/// non-deterministic setting.
pub fn generate_ground_truth(spec: &SyntheticSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    let mut m = random_projection(spec.n, spec.k, spec.seed);
    if spec.setting == Setting::NonDeterministic {
        rescale_unit_interval(&mut m);
    }
    Ok(m)
}

/// Affine map of the entries onto [0, 1]. Constant matrices map to zero.
pub fn rescale_unit_interval(m: &mut DenseMatrix) {
    let (lo, hi) = m
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in m.values_mut() {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
}

fn thin_ones(y: &DenseMatrix, rho: f64, seed: u64) -> Result<ObservedOnes> {
    let mut rng = seeded_rng(seed, STREAM_THINNING);
    let keep = 1.0 - rho;
    let mut pairs = Vec::new();
    for i in 0..y.rows() {
        for (j, &v) in y.row(i).iter().enumerate() {
            if v == 1.0 && rng.random::<f64>() < keep {
                pairs.push((i, j));
            }
        }
    }
    ObservedOnes::new(y.rows(), y.cols(), pairs)
}

fn assemble(m: &DenseMatrix, y: DenseMatrix, rho: f64, seed: u64, q_used: Option<f64>) -> Result<PuInstance> {
    let observed = thin_ones(&y, rho, seed)?;
    let ones = y.values().iter().filter(|&&v| v == 1.0).count();
    let realized_rho = if ones == 0 {
        0.0
    } else {
        1.0 - observed.len() as f64 / ones as f64
    };
    Ok(PuInstance {
        ground_truth_m: m.clone(),
        clean_y: y,
        observed,
        true_rho: rho,
        realized_rho,
        q_used,
    })
}

/// Draws `Y_ij ~ Bernoulli(M_ij)`, then reveals each one with probability
/// `1 - ρ`.
pub fn observe_nondeterministic(m: &DenseMatrix, rho: f64, seed: u64) -> Result<PuInstance> {
    check_rho(rho)?;
    if let Some(v) = m.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(PumcError::Data(format!(
            "non-deterministic setting needs entries in [0, 1], found {v}"
        )));
    }
    let mut rng = seeded_rng(seed, STREAM_CLEAN);
    let y = DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| {
        if rng.random::<f64>() < m.get(i, j) {
            1.0
        } else {
            0.0
        }
    });
    assemble(m, y, rho, seed, None)
}

/// Lower median of the entries: with strict thresholding at this value at
/// most half of the entries become ones.
pub fn balanced_threshold(m: &DenseMatrix) -> Result<f64> {
    let mut sorted = m.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[sorted.len().div_ceil(2) - 1];
    if sorted.last().is_some_and(|&max| max <= q) {
        return Err(PumcError::InvalidParameter(
            "balanced threshold impossible: no entry lies above the median".into(),
        ));
    }
    Ok(q)
}

/// `Y = I(M > q)` followed by one-sided thinning.
pub fn observe_deterministic(m: &DenseMatrix, q_policy: QPolicy, rho: f64, seed: u64) -> Result<PuInstance> {
    check_rho(rho)?;
    let q = match q_policy {
        QPolicy::Balanced => balanced_threshold(m)?,
        QPolicy::Fixed(q) => {
            if !q.is_finite() {
                return Err(PumcError::InvalidParameter(format!("threshold must be finite, got {q}")));
            }
            q
        }
    };
    let y = DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| if m.get(i, j) > q { 1.0 } else { 0.0 });
    assemble(m, y, rho, seed, Some(q))
}

/// Ground truth plus observations for one synthetic instance.
pub fn generate_instance(spec: &SyntheticSpec) -> Result<PuInstance> {
    let m = generate_ground_truth(spec)?;
    match spec.setting {
        Setting::NonDeterministic => observe_nondeterministic(&m, spec.rho, spec.seed),
        Setting::Deterministic => observe_deterministic(&m, spec.q_policy, spec.rho, spec.seed),
    }
}

/// Candidate noise rates `{1-2s, 10(1-2s), 100(1-2s), 1000(1-2s)}` for
/// `s = s̄/(mn)`, clamped to `[0, 1 - 1e-6]` and deduplicated in order.
pub fn rho_grid(observed: &ObservedOnes) -> Result<Vec<f64>> {
    if observed.is_empty() {
        return Err(PumcError::Data("cannot build a rho grid from no observations".into()));
    }
    let base = 1.0 - 2.0 * observed.density();
    let mut grid: Vec<f64> = Vec::with_capacity(4);
    for scale in [1.0, 10.0, 100.0, 1000.0] {
        let v = (scale * base).clamp(0.0, RHO_CEILING);
        if !grid.contains(&v) {
            grid.push(v);
        }
    }
    Ok(grid)
}

/// Uniform random partition of the revealed ones; `fraction` of them (rounded)
/// go to the validation part.
pub fn holdout_split(observed: &ObservedOnes, fraction: f64, seed: u64) -> Result<(ObservedOnes, ObservedOnes)> {
    check_unit_open("holdout fraction", fraction)?;
    let total = observed.len();
    let n_val = (fraction * total as f64).round() as usize;
    if n_val == 0 || n_val == total {
        return Err(PumcError::InvalidParameter(format!(
            "holdout fraction {fraction} leaves an empty part of {total} observations"
        )));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut seeded_rng(seed, STREAM_THINNING));
    let pick = |sel: &[usize]| -> Vec<(usize, usize)> { sel.iter().map(|&p| observed.entries()[p]).collect() };
    let validation = ObservedOnes::new(observed.rows(), observed.cols(), pick(&idx[..n_val]))?;
    let train = ObservedOnes::new(observed.rows(), observed.cols(), pick(&idx[n_val..]))?;
    Ok((train, validation))
}

/// Degree-corrected two-community random graph on `n` nodes (symmetric, no
/// self-loops). Node `i` gets community `i % 2` and a propensity drawn
/// uniformly from `[0.5, 1.5]`; the pair `(i, j)` links with probability
/// `min(1, θ_i θ_j p)`, `p` being `p_in` within and `p_out` across.
pub fn two_community_graph(n: usize, p_in: f64, p_out: f64, seed: u64) -> Result<ObservedOnes> {
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(PumcError::InvalidParameter(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    let mut rng = seeded_rng(seed, STREAM_GRAPH);
    let theta: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if i % 2 == j % 2 { p_in } else { p_out };
            if rng.random::<f64>() < (theta[i] * theta[j] * p).min(1.0) {
                pairs.push((i, j));
            }
        }
    }
    ObservedOnes::new(n, n, pairs)?.symmetrize()
}

/// Splits the undirected edges of a symmetric graph into train and test
/// parts; `fraction` of the edges (rounded) are held out. Both parts are
/// symmetric.
pub fn split_edges(graph: &ObservedOnes, fraction: f64, seed: u64) -> Result<(ObservedOnes, ObservedOnes)> {
    check_unit_open("test fraction", fraction)?;
    if !graph.is_symmetric() {
        return Err(PumcError::Data("edge split needs a symmetric graph".into()));
    }
    let mut edges: Vec<(usize, usize)> = graph.entries().iter().copied().filter(|&(i, j)| i < j).collect();
    edges.shuffle(&mut seeded_rng(seed, STREAM_SPLIT));
    let n_test = (fraction * edges.len() as f64).round() as usize;
    let part = |sel: &[(usize, usize)]| ObservedOnes::new(graph.rows(), graph.cols(), sel.to_vec())?.symmetrize();
    Ok((part(&edges[n_test..])?, part(&edges[..n_test])?))
}

/// Two balanced Gaussian clusters in `dim` dimensions plus a constant bias
/// feature. Class means sit at `±separation/2` along the all-ones direction;
/// noise is standard normal. Returns the `n x (dim + 1)` features and labels.
pub fn gaussian_clusters(n: usize, dim: usize, separation: f64, seed: u64) -> Result<(DenseMatrix, Vec<usize>)> {
    if n < 2 || dim == 0 {
        return Err(PumcError::InvalidParameter(format!("need n >= 2 and dim >= 1, got n={n}, dim={dim}")));
    }
    let mut rng = seeded_rng(seed, STREAM_FEATURES);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let offset = 0.5 * separation / (dim as f64).sqrt();
    let features = DenseMatrix::from_fn(n, dim + 1, |i, c| {
        if c == dim {
            return 1.0;
        }
        let sign = if labels[i] == 0 { 1.0 } else { -1.0 };
        let noise: f64 = StandardNormal.sample(&mut rng);
        sign * offset + noise
    });
    Ok((features, labels))
}

/// `count` distinct same-label pairs `i != j`, drawn uniformly and stored in
/// both directions.
pub fn sample_positive_pairs(labels: &[usize], count: usize, seed: u64) -> Result<ObservedOnes> {
    let n = labels.len();
    let available: usize = {
        let mut sizes = std::collections::BTreeMap::new();
        for &l in labels {
            *sizes.entry(l).or_insert(0usize) += 1;
        }
        sizes.values().map(|&s| s * s.saturating_sub(1) / 2).sum()
    };
    if count > available {
        return Err(PumcError::InvalidParameter(format!(
            "asked for {count} positive pairs, only {available} exist"
        )));
    }
    let mut rng = seeded_rng(seed, STREAM_SPLIT);
    let mut chosen = std::collections::BTreeSet::new();
    while chosen.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && labels[i] == labels[j] {
            chosen.insert((i.min(j), i.max(j)));
        }
    }
    ObservedOnes::new(n, n, chosen.into_iter().collect())?.symmetrize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_svd;
    use std::collections::HashSet;

    fn spec(n: usize, k: usize, setting: Setting) -> SyntheticSpec {
        SyntheticSpec {
            n,
            k,
            setting,
            rho: 0.9,
            q_policy: QPolicy::Balanced,
            seed: 17,
        }
    }

    #[test]
    fn projection_is_psd_rank_k() {
        let m = generate_ground_truth(&spec(30, 4, Setting::Deterministic)).unwrap();
        let mut rng = seeded_rng(3, 0);
        for _ in 0..20 {
            let v: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mv: Vec<f64> = (0..30).map(|i| dot(m.row(i), &v)).collect();
            assert!(dot(&v, &mv) >= -1e-10);
        }
        let svd = dense_svd(&m).unwrap();
        assert!(svd.singular_values[4] <= 1e-8);
        assert!((svd.singular_values[3] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn nondeterministic_truth_spans_unit_interval() {
        let m = generate_ground_truth(&spec(25, 3, Setting::NonDeterministic)).unwrap();
        let lo = m.values().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = m.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_thinning_reveals_all_ones() {
        let m = generate_ground_truth(&spec(20, 3, Setting::NonDeterministic)).unwrap();
        let inst = observe_nondeterministic(&m, 0.0, 5).unwrap();
        let ones = inst.clean_y.values().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(inst.observed.len(), ones);
        assert_eq!(inst.realized_rho, 0.0);
    }

    #[test]
    fn all_ones_thinning_count_is_binomial() {
        let m = DenseMatrix::from_fn(100, 100, |_, _| 1.0);
        let inst = observe_nondeterministic(&m, 0.9, 8).unwrap();
        let sd = (10_000.0f64 * 0.9 * 0.1).sqrt();
        assert!((inst.observed.len() as f64 - 1000.0).abs() <= 4.0 * sd);
        assert_eq!(inst.true_rho, 0.9);
        assert!((inst.realized_rho - 0.9).abs() < 0.02);
    }

    #[test]
    fn all_zero_truth_reveals_nothing() {
        let m = DenseMatrix::zeros(10, 10);
        assert!(observe_nondeterministic(&m, 0.3, 1).unwrap().observed.is_empty());
    }

    #[test]
    fn out_of_range_truth_rejected() {
        let m = DenseMatrix::from_fn(2, 2, |i, _| i as f64 * 1.5);
        assert!(matches!(observe_nondeterministic(&m, 0.3, 1), Err(PumcError::Data(_))));
    }

    #[test]
    fn fixed_threshold() {
        let m = DenseMatrix::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let inst = observe_deterministic(&m, QPolicy::Fixed(0.5), 0.0, 1).unwrap();
        assert_eq!(inst.clean_y.values(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(inst.observed.entries(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn balanced_threshold_splits_generic_matrix() {
        let mut rng = seeded_rng(11, 0);
        let m = DenseMatrix::from_fn(100, 100, |_, _| rng.random::<f64>());
        let inst = observe_deterministic(&m, QPolicy::Balanced, 0.5, 2).unwrap();
        let ones = inst.clean_y.values().iter().filter(|&&v| v == 1.0).count() as i64;
        assert!((ones - (10_000 - ones)).abs() <= 1);
        let q = inst.q_used.unwrap();
        for (mv, yv) in m.values().iter().zip(inst.clean_y.values()) {
            assert_eq!(*yv == 1.0, *mv > q);
        }
    }

    #[test]
    fn balanced_threshold_rejects_constant() {
        let m = DenseMatrix::from_fn(4, 4, |_, _| 0.3);
        assert!(observe_deterministic(&m, QPolicy::Balanced, 0.5, 2).is_err());
    }

    #[test]
    fn deterministic_thinning_is_binomial() {
        // 1000 ones in a 50x40 matrix
        let m = DenseMatrix::from_fn(50, 40, |i, _| if i < 25 { 1.0 } else { 0.0 });
        let inst = observe_deterministic(&m, QPolicy::Fixed(0.5), 0.9, 3).unwrap();
        let sd = (1000.0f64 * 0.9 * 0.1).sqrt();
        assert!((inst.observed.len() as f64 - 100.0).abs() <= 4.0 * sd);
    }

    #[test]
    fn observed_subset_of_clean_ones() {
        for setting in [Setting::NonDeterministic, Setting::Deterministic] {
            let inst = generate_instance(&SyntheticSpec { rho: 0.6, ..spec(40, 5, setting) }).unwrap();
            for &(i, j) in inst.observed.entries() {
                assert_eq!(inst.clean_y.get(i, j), 1.0);
            }
        }
    }

    #[test]
    fn rho_grid_clamps_and_dedups() {
        let obs_with = |count: usize, m: usize, n: usize| {
            let pairs = (0..count).map(|p| (p / n, p % n)).collect();
            ObservedOnes::new(m, n, pairs).unwrap()
        };
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&rho_grid(&obs_with(40, 10, 10)).unwrap(), &[0.2, RHO_CEILING]));
        assert!(close(&rho_grid(&obs_with(5, 100, 100)).unwrap(), &[0.999, RHO_CEILING]));
        assert!(close(&rho_grid(&obs_with(25, 10, 10)).unwrap(), &[0.5, RHO_CEILING]));
        assert!(rho_grid(&ObservedOnes::empty(3, 3).unwrap()).is_err());
    }

    #[test]
    fn holdout_partition() {
        let pairs: Vec<(usize, usize)> = (0..1000).map(|p| (p / 50, p % 50)).collect();
        let obs = ObservedOnes::new(20, 50, pairs).unwrap();
        let (train, val) = holdout_split(&obs, 0.5, 4).unwrap();
        assert_eq!((train.len(), val.len()), (500, 500));
        let t: HashSet<_> = train.entries().iter().copied().collect();
        let v: HashSet<_> = val.entries().iter().copied().collect();
        assert!(t.is_disjoint(&v));
        let union: HashSet<_> = t.union(&v).copied().collect();
        assert_eq!(union, obs.entries().iter().copied().collect());
        assert_eq!(holdout_split(&obs, 0.5, 4).unwrap(), (train, val));
        assert!(holdout_split(&obs, 0.0, 4).is_err());
        assert!(holdout_split(&obs, 1.0, 4).is_err());
    }

    #[test]
    fn community_graph_is_symmetric_and_assortative() {
        let g = two_community_graph(200, 0.2, 0.02, 1).unwrap();
        assert!(g.is_symmetric());
        assert!(g.entries().iter().all(|(i, j)| i != j));
        let within = g.entries().iter().filter(|(i, j)| i % 2 == j % 2).count();
        assert!(within > 5 * (g.len() - within));
        assert_eq!(g, two_community_graph(200, 0.2, 0.02, 1).unwrap());
    }

    #[test]
    fn edge_split_partitions() {
        let g = two_community_graph(60, 0.3, 0.05, 2).unwrap();
        let (train, test) = split_edges(&g, 0.5, 9).unwrap();
        assert!(train.is_symmetric() && test.is_symmetric());
        assert_eq!(train.len() + test.len(), g.len());
        assert!(test.entries().iter().all(|&(i, j)| !train.contains(i, j) && g.contains(i, j)));
        assert_eq!(test.len() / 2, ((g.len() / 2) as f64 * 0.5).round() as usize);
    }

    #[test]
    fn clusters_and_pairs() {
        let (f, labels) = gaussian_clusters(40, 10, 3.0, 4).unwrap();
        assert_eq!((f.rows(), f.cols()), (40, 11));
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 20);
        assert!((0..40).all(|i| f.get(i, 10) == 1.0));
        let pairs = sample_positive_pairs(&labels, 30, 5).unwrap();
        assert_eq!(pairs.len(), 60);
        assert!(pairs.entries().iter().all(|&(i, j)| i != j && labels[i] == labels[j]));
        assert!(sample_positive_pairs(&labels, 1000, 5).is_err());
    }
}
