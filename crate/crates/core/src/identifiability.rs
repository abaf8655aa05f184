//! Covariance lags, generic Kruskal rank of the co-array manifold and the
//! resulting bounds on the number of identifiable sources.

use rand::Rng;
use rayon::prelude::*;

use crate::geometry::{co_array_manifold, ArrayGeometry, Position, SubarrayGeometry};
use crate::linalg::C64;
use crate::rng::trial_rng;

/// Deduplication tolerance for lags, in half-wavelengths.
pub const LAG_TOL: f64 = 1e-9;

/// Set of 2-D covariance lags, deduplicated within [`LAG_TOL`].
#[derive(Debug, Clone, Default)]
pub struct LagSet {
    lags: Vec<Position>,
}

impl LagSet {
    pub fn insert(&mut self, b: Position) {
        if !self.contains(&b) {
            self.lags.push(b);
        }
    }

    pub fn contains(&self, b: &Position) -> bool {
        self.lags
            .iter()
            .any(|l| (l.x - b.x).abs() <= LAG_TOL && (l.y - b.y).abs() <= LAG_TOL)
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Position> {
        self.lags.iter()
    }

    pub fn union(&self, other: &LagSet) -> LagSet {
        let mut out = self.clone();
        for b in other.iter() {
            out.insert(*b);
        }
        out
    }
}

/// `B_k = {ζ'_j − ζ'_i}` over all sensor pairs of one subarray.
pub fn covariance_lags(geom: &SubarrayGeometry) -> LagSet {
    let mut set = LagSet::default();
    for a in geom.offsets() {
        for b in geom.offsets() {
            set.insert(b - a);
        }
    }
    set
}

/// `B = ∪_k B_k`.
pub fn lag_union(array: &ArrayGeometry) -> LagSet {
    array
        .subarrays()
        .iter()
        .fold(LagSet::default(), |acc, g| acc.union(&covariance_lags(g)))
}

/// `⌊card(B)/2⌋`.
pub fn corollary_bound(array: &ArrayGeometry) -> usize {
    lag_union(array).len() / 2
}

#[derive(Debug, Clone, Copy)]
pub struct KruskalOptions {
    pub trials: usize,
    /// Relative smallest-singular-value threshold.
    pub tol: f64,
    pub seed: u64,
    /// Minimum separation of probe DOAs, radians.
    pub min_separation: f64,
    /// Fraction of probes that must be full rank for a candidate to pass.
    pub pass_fraction: f64,
}

impl Default for KruskalOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            tol: 1e-8,
            seed: 0,
            min_separation: 0.5f64.to_radians(),
            pass_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KruskalEstimate {
    pub rank: usize,
    /// `(m, fraction of probes that were full rank)` for each tested `m`.
    pub pass_rates: Vec<(usize, f64)>,
}

/// Generic Kruskal-rank estimate of the co-array manifold.
///
/// For `m = 1, 2, …` draws `trials` random DOA `m`-tuples on `(−90°, 90°)`
/// and tests `σ_min/σ_max > tol`. A candidate passes when at least
/// `pass_fraction` of its probes are full rank; the search stops at the
/// first failing `m` or at `min(M̆, card(B))`.
///
/// The strict "every probe passes" rule is `pass_fraction = 1`. With
/// irregular lag sets, some probes lose rank well below the generic rank
/// because a few columns happen to be nearly aligned.
pub fn numeric_kruskal_rank(array: &ArrayGeometry, opts: &KruskalOptions) -> KruskalEstimate {
    let cap = array.co_array_len().min(lag_union(array).len());
    let mut rank = 0;
    let mut pass_rates = Vec::new();
    for m in 1..=cap {
        let passes = (0..opts.trials)
            .into_par_iter()
            .filter(|&t| {
                let doas = random_doas(m, opts.min_separation, opts.seed, m as u64, t as u64);
                full_column_rank(&co_array_manifold(array, &doas), opts.tol)
            })
            .count();
        let rate = passes as f64 / opts.trials.max(1) as f64;
        pass_rates.push((m, rate));
        if rate + 1e-12 < opts.pass_fraction {
            break;
        }
        rank = m;
    }
    KruskalEstimate { rank, pass_rates }
}

/// `⌊ρ/2⌋`.
pub fn max_identifiable(kruskal_rank: usize) -> usize {
    kruskal_rank / 2
}

fn random_doas(m: usize, min_sep: f64, seed: u64, a: u64, b: u64) -> Vec<f64> {
    let mut rng = trial_rng(seed, a, b);
    let half = std::f64::consts::FRAC_PI_2;
    let mut out: Vec<f64> = Vec::with_capacity(m);
    while out.len() < m {
        let t: f64 = rng.random_range(-half..half);
        if t > -half && out.iter().all(|s| (s - t).abs() >= min_sep) {
            out.push(t);
        }
    }
    out
}

fn full_column_rank(m: &nalgebra::DMatrix<C64>, tol: f64) -> bool {
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    max > 0.0 && min > tol * max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Identifiability {
    /// `θ'` is a permutation of `θ`, so the premise of the test fails.
    Equivalent,
    /// `‖V̆(θ)λ − V̆(θ')λ'‖` exceeds the tolerance.
    Separated { distance: f64 },
    /// Different directions produce (numerically) the same covariances.
    Collision { distance: f64 },
}

/// Uniqueness check: compares `V̆(θ)λ` against `V̆(θ')λ'`. Symmetric in its
/// two `(θ, λ)` arguments.
pub fn check_unique_identifiability(
    array: &ArrayGeometry,
    theta: &[f64],
    lambda: &[f64],
    theta2: &[f64],
    lambda2: &[f64],
    tol: f64,
) -> Identifiability {
    if same_up_to_permutation(theta, theta2) {
        return Identifiability::Equivalent;
    }
    let r1 = co_array_manifold(array, theta) * real_vector(lambda);
    let r2 = co_array_manifold(array, theta2) * real_vector(lambda2);
    let distance = (r1 - r2).norm();
    if distance > tol {
        Identifiability::Separated { distance }
    } else {
        Identifiability::Collision { distance }
    }
}

fn real_vector(x: &[f64]) -> nalgebra::DVector<C64> {
    nalgebra::DVector::from_iterator(x.len(), x.iter().map(|&v| C64::new(v, 0.0)))
}

fn same_up_to_permutation(a: &[f64], b: &[f64]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12)
}
