//! SPICE: sparse covariance fitting over a DOA grid, solved by cyclic
//! minimization.
//!
//! The program is
//!
//! ```text
//! minimize   Σ_k tr(R̃_k⁻¹ R̂_k)
//! subject to Σ_g w_g p_g + w̄ σ² = 1,  p ≥ 0,  σ² ≥ 0
//! R̃_k = Ṽ_k diag(p) Ṽ_kᴴ + σ² I
//! ```
//!
//! Each iteration refreshes `R̃_k` and applies the closed-form update
//! `p_g ∝ sqrt(β_g / w_g)` with `β_g = p_g² Σ_k v_gᴴ R̃_k⁻¹R̂_kR̃_k⁻¹ v_g`,
//! normalized so the constraint holds exactly. The objective is
//! non-increasing under this update.

use log::warn;

use super::Grid;
use crate::geometry::{steering_vector, ArrayGeometry};
use crate::linalg::{hermitian_eigenvalues, hpd_inverse, trace, CMatrix, C64};
use crate::signal::CovarianceSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SpiceOptions {
    pub max_iter: usize,
    /// Converged when the relative objective change drops below this.
    pub rel_tol: f64,
    /// Load singular sample covariances with `1e-8 · tr(R̂)/M` instead of
    /// failing.
    pub diagonal_loading: bool,
}

impl Default for SpiceOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            rel_tol: 1e-9,
            diagonal_loading: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpiceResult {
    /// Grid powers `p̃`.
    pub powers: Vec<f64>,
    pub noise_var: f64,
    /// Objective before the first update and after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Dual-feasibility violation `max_g (q_g/w_g − f)₊ / f`, where
    /// `q_g = −∂f/∂p_g`; zero at the optimum.
    pub kkt_residual: f64,
    pub weights: Vec<f64>,
    pub noise_weight: f64,
}

impl SpiceResult {
    pub fn constraint_residual(&self) -> f64 {
        let s: f64 = self.weights.iter().zip(&self.powers).map(|(w, p)| w * p).sum();
        (s + self.noise_weight * self.noise_var - 1.0).abs()
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("objective has at least one entry")
    }
}

/// Grid dictionary for one array, reusable across covariance sets.
///
/// The diagonal of `v_g v_gᴴ` is all ones, so only the strictly upper
/// entries `v_{g,i} v̄_{g,j}` (`i < j`) are stored, as interleaved real and
/// imaginary rows. `Σ_k v_gᴴ B_k v_g` for Hermitian `B_k` is then
/// `Σ_k tr B_k + 2 uᵀ b` with `b` the matching entries of `B_k`.
#[derive(Debug, Clone)]
pub struct Spice {
    sizes: Vec<usize>,
    total_sensors: usize,
    /// Row-major `G × width`, `width = Σ_k M_k(M_k − 1)`.
    upper: Vec<f64>,
    width: usize,
    grid: Grid,
}

impl Spice {
    pub fn new(array: &ArrayGeometry, grid: &Grid) -> Self {
        let sizes: Vec<usize> = array.subarrays().iter().map(|g| g.num_sensors()).collect();
        let width: usize = sizes.iter().map(|m| m * (m - 1)).sum();
        let mut upper = Vec::with_capacity(width * grid.len());
        for &t in grid.radians() {
            for g in array.subarrays() {
                let v = steering_vector(g, t);
                for j in 1..v.len() {
                    for i in 0..j {
                        let d = v[i] * v[j].conj();
                        upper.extend([d.re, d.im]);
                    }
                }
            }
        }
        Self {
            sizes,
            total_sensors: array.total_sensors(),
            upper,
            width,
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Sample covariances (loaded if needed) and their inverses.
    fn prepared(&self, covs: &CovarianceSet, opts: &SpiceOptions) -> Result<(Vec<CMatrix>, Vec<CMatrix>)> {
        if covs.sizes() != self.sizes {
            return Err(Error::Dimension(format!(
                "covariance sizes {:?} do not match dictionary {:?}",
                covs.sizes(),
                self.sizes
            )));
        }
        let mut mats = Vec::with_capacity(self.sizes.len());
        let mut invs = Vec::with_capacity(self.sizes.len());
        for (k, r) in covs.matrices().iter().enumerate() {
            let m = r.nrows();
            let ev = hermitian_eigenvalues(r);
            let singular = ev[0] <= 1e-14 * ev[m - 1].abs() || hpd_inverse(r).is_none();
            let r = if singular {
                let load = 1e-8 * trace(r).re / m as f64;
                if !opts.diagonal_loading || load <= 0.0 {
                    return Err(Error::SingularCovariance { subarray: k });
                }
                warn!("sample covariance of subarray {k} is singular; loading diagonal by {load:e}");
                r + CMatrix::identity(m, m) * C64::new(load, 0.0)
            } else {
                r.clone()
            };
            let inv = hpd_inverse(&r).ok_or(Error::SingularCovariance { subarray: k })?;
            mats.push(r);
            invs.push(inv);
        }
        Ok((mats, invs))
    }

    /// `(w, w̄)`.
    pub fn weights(&self, covs: &CovarianceSet, opts: &SpiceOptions) -> Result<(Vec<f64>, f64)> {
        let (_, invs) = self.prepared(covs, opts)?;
        Ok(self.weights_from_inverses(&invs))
    }

    fn weights_from_inverses(&self, invs: &[CMatrix]) -> (Vec<f64>, f64) {
        let m = self.total_sensors as f64;
        let w = self.project(invs).into_iter().map(|q| q / m).collect();
        let wbar = invs.iter().map(|r| trace(r).re).sum::<f64>() / m;
        (w, wbar)
    }

    /// `Σ_k v_gᴴ B_k v_g` for every grid point; `B_k` Hermitian.
    pub fn project(&self, mats: &[CMatrix]) -> Vec<f64> {
        let diag: f64 = mats.iter().map(|b| trace(b).re).sum();
        let mut b = Vec::with_capacity(self.width);
        for m in mats {
            for j in 1..m.nrows() {
                for i in 0..j {
                    b.extend([m[(i, j)].re, m[(i, j)].im]);
                }
            }
        }
        if self.width == 0 {
            return vec![diag; self.grid.len()];
        }
        self.upper
            .chunks_exact(self.width)
            .map(|row| diag + 2.0 * dot(row, &b))
            .collect()
    }

    /// Model covariances `R̃_k` for the given powers.
    pub fn model_covariances(&self, powers: &[f64], noise_var: f64) -> Vec<CMatrix> {
        let total: f64 = powers.iter().sum();
        let mut entries = vec![0.0; self.width];
        if self.width > 0 {
            for (row, &p) in self.upper.chunks_exact(self.width).zip(powers) {
                for (e, u) in entries.iter_mut().zip(row) {
                    *e += p * u;
                }
            }
        }
        let mut row = 0;
        self.sizes
            .iter()
            .map(|&m| {
                let mut r = CMatrix::identity(m, m) * C64::new(total + noise_var, 0.0);
                for j in 1..m {
                    for i in 0..j {
                        let z = C64::new(entries[row], entries[row + 1]);
                        r[(i, j)] = z;
                        r[(j, i)] = z.conj();
                        row += 2;
                    }
                }
                r
            })
            .collect()
    }

    pub fn solve(&self, covs: &CovarianceSet, opts: &SpiceOptions) -> Result<SpiceResult> {
        let (rhat, rhat_inv) = self.prepared(covs, opts)?;
        let (w, wbar) = self.weights_from_inverses(&rhat_inv);
        if w.iter().chain([&wbar]).any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Grid("non-positive SPICE weight".into()));
        }

        // beamformer start, rescaled onto the constraint
        let m2: usize = self.sizes.iter().map(|m| m * m).sum();
        let mut p: Vec<f64> = self
            .project(&rhat)
            .into_iter()
            .map(|q| q.max(0.0) / m2 as f64)
            .collect();
        let mut sigma2 = rhat
            .iter()
            .map(|r| hermitian_eigenvalues(r)[0].max(1e-12 * trace(r).re / r.nrows() as f64))
            .sum::<f64>()
            / rhat.len() as f64;
        let c: f64 = w.iter().zip(&p).map(|(w, p)| w * p).sum::<f64>() + wbar * sigma2;
        p.iter_mut().for_each(|x| *x /= c);
        sigma2 /= c;

        let mut objective = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut state = self.evaluate(&p, sigma2, &rhat)?;
        objective.push(state.f);
        while iterations < opts.max_iter {
            let beta: Vec<f64> = p.iter().zip(&state.q).map(|(p, q)| p * p * q.max(0.0)).collect();
            let beta_s = sigma2 * sigma2 * state.tr_b.max(0.0);
            let rho = w.iter().zip(&beta).map(|(w, b)| (w * b).sqrt()).sum::<f64>() + (wbar * beta_s).sqrt();
            if !(rho > 0.0 && rho.is_finite()) {
                break;
            }
            for ((pg, wg), bg) in p.iter_mut().zip(&w).zip(&beta) {
                *pg = (bg / wg).sqrt() / rho;
            }
            sigma2 = (beta_s / wbar).sqrt() / rho;
            iterations += 1;
            let prev = state.f;
            state = self.evaluate(&p, sigma2, &rhat)?;
            objective.push(state.f);
            if (prev - state.f).abs() <= opts.rel_tol * state.f.abs() {
                converged = true;
                break;
            }
        }
        let noise_gap = (state.tr_b / wbar - state.f).max(0.0);
        let kkt_residual = w
            .iter()
            .zip(&state.q)
            .map(|(w, q)| (q / w - state.f).max(0.0))
            .fold(noise_gap, f64::max)
            / state.f;
        Ok(SpiceResult {
            powers: p,
            noise_var: sigma2,
            objective,
            iterations,
            converged,
            kkt_residual,
            weights: w,
            noise_weight: wbar,
        })
    }

    fn evaluate(&self, p: &[f64], sigma2: f64, rhat: &[CMatrix]) -> Result<Evaluation> {
        let model = self.model_covariances(p, sigma2);
        let mut f = 0.0;
        let mut tr_b = 0.0;
        let mut bs = Vec::with_capacity(model.len());
        for (k, (r, rh)) in model.iter().zip(rhat).enumerate() {
            let inv = hpd_inverse(r).ok_or(Error::SingularCovariance { subarray: k })?;
            let ir = &inv * rh;
            f += trace(&ir).re;
            let b = &ir * &inv;
            tr_b += trace(&b).re;
            bs.push(b);
        }
        Ok(Evaluation {
            f,
            tr_b,
            q: self.project(&bs),
        })
    }
}

struct Evaluation {
    f: f64,
    tr_b: f64,
    /// `Σ_k v_gᴴ R̃_k⁻¹R̂_kR̃_k⁻¹ v_g`, the negative objective gradient.
    q: Vec<f64>,
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// One-shot convenience wrapper around [`Spice::solve`].
pub fn spice_solve(array: &ArrayGeometry, covs: &CovarianceSet, grid: &Grid, opts: &SpiceOptions) -> Result<SpiceResult> {
    Spice::new(array, grid).solve(covs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deg;
    use crate::geometry::{Position, SubarrayGeometry};
    use crate::linalg::hermitian_defect;
    use crate::signal::{CovarianceKind, NoiseModel, SourceModel};
    use proptest::prelude::*;

    fn pair_array(d: f64) -> ArrayGeometry {
        ArrayGeometry::new(vec![SubarrayGeometry::linear(&[0.0, d], Position::zeros()).unwrap()]).unwrap()
    }

    #[test]
    fn identity_covariance_weights() {
        let arr = pair_array(1.0);
        let grid = Grid::uniform_deg(-30.0, 30.0, 10.0).unwrap();
        let spice = Spice::new(&arr, &grid);
        let covs = CovarianceSet::new(vec![CMatrix::identity(2, 2)], CovarianceKind::True).unwrap();
        let (w, wbar) = spice.weights(&covs, &SpiceOptions::default()).unwrap();
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-14));
        assert!((wbar - 1.0).abs() < 1e-14);
        let scaled = CovarianceSet::new(vec![CMatrix::identity(2, 2) * C64::new(4.0, 0.0)], CovarianceKind::True).unwrap();
        let (w4, wbar4) = spice.weights(&scaled, &SpiceOptions::default()).unwrap();
        assert!(w4.iter().all(|x| (x - 0.25).abs() < 1e-14));
        assert!((wbar4 - 0.25).abs() < 1e-14);
    }

    #[test]
    fn reference_weights_are_positive() {
        let arr = crate::experiment::presets::reference_array();
        let grid = Grid::default();
        let model = SourceModel::equal_power(vec![deg(-11.4), deg(-1.1)], 1.0).unwrap();
        let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::from_snr_db(0.0, 1.0).unwrap(), 50, 1, false).unwrap();
        let (w, wbar) = Spice::new(&arr, &grid).weights(&covs, &SpiceOptions::default()).unwrap();
        assert_eq!(w.len(), 1799);
        assert!(w.iter().all(|x| x.is_finite() && *x > 0.0));
        assert!(wbar.is_finite() && wbar > 0.0);
    }

    #[test]
    fn noise_only_approaches_noise_model() {
        // every grid point is KKT-active at this optimum, so convergence is
        // sublinear; check the objective gap and the fitted covariance
        let arr = crate::experiment::presets::reference_array();
        let grid = Grid::uniform_deg(-80.0, 80.0, 1.0).unwrap();
        let covs = CovarianceSet::new(
            arr.subarrays().iter().map(|_| CMatrix::identity(2, 2) * C64::new(0.5, 0.0)).collect(),
            CovarianceKind::True,
        )
        .unwrap();
        let res = spice_solve(&arr, &covs, &grid, &SpiceOptions::default()).unwrap();
        let m = arr.total_sensors() as f64;
        assert!(res.final_objective() - m < 1e-3 * m, "gap {}", res.final_objective() - m);
        assert!(res.noise_weight * res.noise_var > 0.95);
        assert!(res.constraint_residual() < 1e-8);
        let fitted = Spice::new(&arr, &grid).model_covariances(&res.powers, res.noise_var);
        for (a, b) in covs.matrices().iter().zip(&fitted) {
            assert!((a - b).camax() < 0.02);
        }
    }

    #[test]
    fn noise_free_single_source_on_grid() {
        let arr = crate::experiment::presets::reference_array();
        let grid = Grid::uniform_deg(-60.0, 60.0, 0.5).unwrap();
        let truth = 57;
        let covs = CovarianceSet::new(
            arr.subarrays()
                .iter()
                .map(|g| {
                    let v = crate::geometry::steering_vector(g, grid.radians()[truth]);
                    &v * v.adjoint()
                })
                .collect(),
            CovarianceKind::True,
        )
        .unwrap();
        let opts = SpiceOptions {
            max_iter: 1000,
            ..Default::default()
        };
        let res = spice_solve(&arr, &covs, &grid, &opts).unwrap();
        let total: f64 = res.powers.iter().sum();
        assert!(total - res.powers[truth] < 1e-6 * total);
        assert!(res.constraint_residual() < 1e-8);

        // moving constraint mass from the truth to any other point raises
        // the objective (same loading as the solver)
        let sp = Spice::new(&arr, &grid);
        let loaded: Vec<CMatrix> = covs
            .matrices()
            .iter()
            .map(|r| r + CMatrix::identity(2, 2) * C64::new(1e-8 * trace(r).re / 2.0, 0.0))
            .collect();
        let objective = |p: &[f64], s2: f64| -> f64 {
            sp.model_covariances(p, s2)
                .iter()
                .zip(&loaded)
                .map(|(r, rh)| trace(&(hpd_inverse(r).unwrap() * rh)).re)
                .sum()
        };
        let f0 = objective(&res.powers, res.noise_var);
        let delta = 1e-3 * res.weights[truth] * res.powers[truth];
        for g in [0, truth - 1, truth + 1, grid.len() - 1] {
            let mut p = res.powers.clone();
            p[truth] -= delta / res.weights[truth];
            p[g] += delta / res.weights[g];
            assert!(objective(&p, res.noise_var) > f0);
        }
    }

    #[test]
    fn exact_single_source_on_grid() {
        let arr = crate::experiment::presets::reference_array();
        let grid = Grid::uniform_deg(-60.0, 60.0, 0.5).unwrap();
        let truth = 57; // -31.5°
        let model = SourceModel::equal_power(vec![grid.radians()[truth]], 1.0).unwrap();
        let covs = CovarianceSet::true_covariances(&arr, &model, &NoiseModel::new(0.1).unwrap());
        let m = arr.total_sensors() as f64;
        let mut gaps = Vec::new();
        for iters in [100, 1000, 10_000] {
            let opts = SpiceOptions {
                rel_tol: 0.0,
                max_iter: iters,
                ..Default::default()
            };
            let res = spice_solve(&arr, &covs, &grid, &opts).unwrap();
            // the optimum reproduces R exactly, where the objective equals Σ M_k
            gaps.push(res.final_objective() - m);
            let total: f64 = res.powers.iter().sum();
            let peak = (0..grid.len()).max_by(|a, b| res.powers[*a].total_cmp(&res.powers[*b])).unwrap();
            assert_eq!(peak, truth);
            if iters == 10_000 {
                let near: f64 = res.powers[truth - 2..=truth + 2].iter().sum();
                assert!(near > 0.99 * total, "mass near truth {}", near / total);
                assert!(res.kkt_residual < 1e-3);
            }
        }
        assert!(gaps.iter().all(|g| *g >= -1e-9));
        assert!(gaps[1] < 0.1 * gaps[0] && gaps[2] < 0.1 * gaps[1], "{gaps:?}");
    }

    #[test]
    fn singular_covariance_loading() {
        let arr = pair_array(1.0);
        let grid = Grid::uniform_deg(-30.0, 30.0, 5.0).unwrap();
        let v = crate::geometry::steering_vector(arr.subarray(0), 0.2);
        let covs = CovarianceSet::new(vec![&v * v.adjoint()], CovarianceKind::Sample { snapshots: 1 }).unwrap();
        let strict = SpiceOptions {
            diagonal_loading: false,
            ..Default::default()
        };
        assert!(matches!(
            spice_solve(&arr, &covs, &grid, &strict),
            Err(Error::SingularCovariance { subarray: 0 })
        ));
        let res = spice_solve(&arr, &covs, &grid, &SpiceOptions::default()).unwrap();
        assert!(res.constraint_residual() < 1e-8);
        let zero = CovarianceSet::new(vec![CMatrix::zeros(2, 2)], CovarianceKind::Sample { snapshots: 1 }).unwrap();
        assert!(spice_solve(&arr, &zero, &grid, &SpiceOptions::default()).is_err());
    }

    #[test]
    fn compact_dictionary_matches_dense_manifold() {
        let arr = ArrayGeometry::new(vec![
            SubarrayGeometry::new(vec![Position::zeros(), Position::new(0.7, 0.2), Position::new(-1.3, 2.0)], Position::zeros()).unwrap(),
            SubarrayGeometry::linear(&[0.0, 2.5], Position::new(4.0, -1.0)).unwrap(),
        ])
        .unwrap();
        let grid = Grid::uniform_deg(-50.0, 50.0, 10.0).unwrap();
        let sp = Spice::new(&arr, &grid);
        let dense = crate::geometry::co_array_manifold(&arr, grid.radians());
        let powers: Vec<f64> = (0..grid.len()).map(|g| 0.1 + (g % 3) as f64).collect();
        let p = crate::linalg::CVector::from_iterator(grid.len(), powers.iter().map(|&x| C64::new(x, 0.0)));
        let r = &dense * p + crate::geometry::stacked_identity(&arr) * C64::new(0.4, 0.0);
        let model = sp.model_covariances(&powers, 0.4);
        let mut row = 0;
        for m in &model {
            let n = m.nrows();
            let expect = crate::linalg::unvec(&r.as_slice()[row..row + n * n], n);
            assert!((m - expect).camax() < 1e-12);
            row += n * n;
        }
        // Σ_k v_gᴴ R_k v_g via the dense columns
        let q = sp.project(&model);
        for (g, qg) in q.iter().enumerate() {
            let col = dense.column(g);
            let stacked = crate::linalg::CVector::from_iterator(r.len(), model.iter().flat_map(|m| crate::linalg::vec_cols(m).iter().copied().collect::<Vec<_>>()));
            let expect = col.dotc(&stacked).re;
            assert!((qg - expect).abs() < 1e-10 * expect.abs());
        }
    }

    #[test]
    fn rejects_mismatched_sizes() {
        let arr = pair_array(1.0);
        let grid = Grid::uniform_deg(-30.0, 30.0, 5.0).unwrap();
        let covs = CovarianceSet::new(vec![CMatrix::identity(3, 3)], CovarianceKind::True).unwrap();
        assert!(matches!(spice_solve(&arr, &covs, &grid, &SpiceOptions::default()), Err(Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn constraint_and_monotonicity(seed in 0u64..10_000, snr in -10.0f64..20.0, l in 1usize..4) {
            let arr = crate::experiment::presets::reference_array();
            let grid = Grid::uniform_deg(-89.0, 89.0, 1.0).unwrap();
            let doas: Vec<f64> = (0..l).map(|i| deg(-40.0 + 30.0 * i as f64 + (seed % 7) as f64)).collect();
            let model = SourceModel::equal_power(doas, 1.0).unwrap();
            let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::from_snr_db(snr, 1.0).unwrap(), 20, seed, false).unwrap();
            let opts = SpiceOptions { max_iter: 300, ..Default::default() };
            let res = spice_solve(&arr, &covs, &grid, &opts).unwrap();
            prop_assert!(res.constraint_residual() < 1e-8);
            prop_assert!(res.powers.iter().all(|p| *p >= 0.0) && res.noise_var >= 0.0);
            for w in res.objective.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "objective rose {} -> {}", w[0], w[1]);
            }
            let sp = Spice::new(&arr, &grid);
            for r in sp.model_covariances(&res.powers, res.noise_var) {
                prop_assert!(hermitian_defect(&r) < 1e-12);
                prop_assert!(hermitian_eigenvalues(&r)[0] > 0.0);
            }
        }
    }
}
