//! Stochastic maximum-likelihood estimators built on per-subarray sample
//! covariances.
//!
//! Negative log-likelihood: `Σ_k N (log det R_k + tr(R_k⁻¹ R̂_k))`.
//! Gradients use `∂/∂x = N Σ_k Re tr(G_k ∂R_k/∂x)` with
//! `G_k = R_k⁻¹ − R_k⁻¹ R̂_k R_k⁻¹`.

use nalgebra::DVector;

use super::optim::{minimize, BfgsOptions};
use crate::geometry::{steering_derivative_matrix, steering_matrix, ArrayGeometry};
use crate::linalg::{hpd_inverse_logdet, trace, CMatrix, C64, J};
use crate::signal::CovarianceSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct MleOptions {
    pub bfgs: BfgsOptions,
}

/// Starting point; `noise_var` and `powers` must be positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MleInit {
    pub doas: Vec<f64>,
    pub powers: Vec<f64>,
    pub noise_var: f64,
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub doas: Vec<f64>,
    /// Diagonal of the estimated source covariance.
    pub powers: Vec<f64>,
    pub source_cov: CMatrix,
    pub noise_var: f64,
    /// Diagonals of `Φ̂_k` (correlated model only, `Φ̂_1 = I`).
    pub phases: Vec<Vec<C64>>,
    pub nll: f64,
    pub init_nll: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Prepared<'a> {
    covs: &'a [CMatrix],
    n: f64,
}

impl<'a> Prepared<'a> {
    fn new(array: &ArrayGeometry, covs: &'a CovarianceSet, n: f64) -> Result<Self> {
        covs.check_against(array)?;
        if !(n > 0.0) {
            return Err(Error::Config("snapshot count must be positive".into()));
        }
        Ok(Self { covs: covs.matrices(), n })
    }
}

/// Smallest admissible `σ² / tr R`. Since `σ²` bounds the smallest
/// eigenvalue of `R` from below, this caps the condition number; beyond it
/// the Cholesky factor loses the noise floor to roundoff and the computed
/// cost can run to −∞ along a diverging source power.
const MIN_NOISE_TO_TRACE: f64 = 1e-10;

/// `R = A P Aᴴ + σ² I`, returning `(log det R + tr(R⁻¹R̂), G)` or `None`
/// when `R` is not positive definite or too ill-conditioned to evaluate.
fn subarray_terms(a: &CMatrix, p: &CMatrix, noise_var: f64, rhat: &CMatrix) -> Option<(f64, CMatrix)> {
    let m = a.nrows();
    let r = a * p * a.adjoint() + CMatrix::identity(m, m) * C64::new(noise_var, 0.0);
    if !(noise_var >= MIN_NOISE_TO_TRACE * trace(&r).re) {
        return None;
    }
    let (inv, logdet) = hpd_inverse_logdet(&r)?;
    let ir = &inv * rhat;
    let f = logdet + trace(&ir).re;
    let g = &inv - &ir * &inv;
    Some((f, g))
}

fn diag_real(x: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&DVector::from_iterator(x.len(), x.iter().map(|&v| C64::new(v, 0.0))))
}

/// Uncorrelated negative log-likelihood; `+∞` when a model covariance is
/// not positive definite or its noise floor is below `1e-10 · tr R`.
pub fn nll_uncorrelated(
    array: &ArrayGeometry,
    covs: &CovarianceSet,
    snapshots: f64,
    doas: &[f64],
    powers: &[f64],
    noise_var: f64,
) -> Result<f64> {
    Ok(nll_uncorrelated_grad(array, covs, snapshots, doas, powers, noise_var)?.0)
}

/// Gradient blocks in natural parameters.
#[derive(Debug, Clone)]
pub struct UncorrelatedGrad {
    pub doas: Vec<f64>,
    pub powers: Vec<f64>,
    pub noise_var: f64,
}

pub fn nll_uncorrelated_grad(
    array: &ArrayGeometry,
    covs: &CovarianceSet,
    snapshots: f64,
    doas: &[f64],
    powers: &[f64],
    noise_var: f64,
) -> Result<(f64, UncorrelatedGrad)> {
    if doas.len() != powers.len() {
        return Err(Error::Dimension("DOA and power counts differ".into()));
    }
    let prep = Prepared::new(array, covs, snapshots)?;
    Ok(uncorrelated_eval(array, &prep, doas, powers, noise_var))
}

fn uncorrelated_eval(
    array: &ArrayGeometry,
    prep: &Prepared,
    doas: &[f64],
    powers: &[f64],
    noise_var: f64,
) -> (f64, UncorrelatedGrad) {
    let l = doas.len();
    let p = diag_real(powers);
    let mut f = 0.0;
    let mut g_doa = vec![0.0; l];
    let mut g_pow = vec![0.0; l];
    let mut g_noise = 0.0;
    for (geom, rhat) in array.subarrays().iter().zip(prep.covs) {
        let v = steering_matrix(geom, doas);
        let Some((fk, g)) = subarray_terms(&v, &p, noise_var, rhat) else {
            let nan = UncorrelatedGrad {
                doas: vec![f64::NAN; l],
                powers: vec![f64::NAN; l],
                noise_var: f64::NAN,
            };
            return (f64::INFINITY, nan);
        };
        f += fk;
        let dv = steering_derivative_matrix(geom, doas);
        let gv = &g * &v;
        let gdv = &g * &dv;
        for i in 0..l {
            let vg = v.column(i).adjoint();
            g_doa[i] += 2.0 * powers[i] * (&vg * gdv.column(i))[0].re;
            g_pow[i] += (&vg * gv.column(i))[0].re;
        }
        g_noise += trace(&g).re;
    }
    let n = prep.n;
    (
        n * f,
        UncorrelatedGrad {
            doas: g_doa.into_iter().map(|x| n * x).collect(),
            powers: g_pow.into_iter().map(|x| n * x).collect(),
            noise_var: n * g_noise,
        },
    )
}

/// Perturbs repeated starting DOAs by +0.01° per repeat.
fn separate_duplicates(doas: &mut [f64]) {
    let step = 0.01f64.to_radians();
    for i in 1..doas.len() {
        while doas[..i].iter().any(|d| (d - doas[i]).abs() < 1e-12) {
            doas[i] += step;
        }
    }
}

/// Maps an unconstrained DOA back to its canonical range: `(−π/2, π/2]`
/// via `asin(sin θ)` when every sensor lies on the x axis (the likelihood
/// then depends on `sin θ` only), otherwise `(−π, π]`.
pub fn fold_doa(array: &ArrayGeometry, theta: f64) -> f64 {
    let linear = array
        .subarrays()
        .iter()
        .all(|g| g.offsets().iter().all(|p| p.y == 0.0));
    if linear {
        theta.sin().asin()
    } else {
        let t = theta.rem_euclid(2.0 * std::f64::consts::PI);
        if t > std::f64::consts::PI {
            t - 2.0 * std::f64::consts::PI
        } else {
            t
        }
    }
}

fn check_init(init: &MleInit) -> Result<()> {
    if init.doas.is_empty() || init.doas.len() != init.powers.len() {
        return Err(Error::Dimension("MLE init needs matching, non-empty DOAs and powers".into()));
    }
    if init.powers.iter().chain([&init.noise_var]).any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Config("MLE init powers and noise variance must be positive".into()));
    }
    Ok(())
}

/// Local minimization of [`nll_uncorrelated`] over `(θ, log λ, log σ²)`.
pub fn mle_uncorrelated(
    array: &ArrayGeometry,
    covs: &CovarianceSet,
    snapshots: f64,
    init: &MleInit,
    opts: &MleOptions,
) -> Result<MleResult> {
    check_init(init)?;
    let prep = Prepared::new(array, covs, snapshots)?;
    let l = init.doas.len();
    let mut doas0 = init.doas.clone();
    separate_duplicates(&mut doas0);
    let mut x0 = DVector::zeros(2 * l + 1);
    for i in 0..l {
        x0[i] = doas0[i];
        x0[l + i] = init.powers[i].ln();
    }
    x0[2 * l] = init.noise_var.ln();

    let unpack = |x: &DVector<f64>| {
        let doas: Vec<f64> = x.rows(0, l).iter().copied().collect();
        let powers: Vec<f64> = x.rows(l, l).iter().map(|v| v.exp()).collect();
        (doas, powers, x[2 * l].exp())
    };
    let fg = |x: &DVector<f64>| {
        let (doas, powers, s2) = unpack(x);
        let (f, g) = uncorrelated_eval(array, &prep, &doas, &powers, s2);
        let mut grad = DVector::zeros(2 * l + 1);
        for i in 0..l {
            grad[i] = g.doas[i];
            grad[l + i] = g.powers[i] * powers[i];
        }
        grad[2 * l] = g.noise_var * s2;
        (f, grad)
    };
    let init_nll = fg(&x0).0;
    let res = minimize(fg, x0, &opts.bfgs);
    let (doas, powers, noise_var) = unpack(&res.x);
    Ok(MleResult {
        doas: doas.into_iter().map(|t| fold_doa(array, t)).collect(),
        source_cov: diag_real(&powers),
        powers,
        noise_var,
        phases: Vec::new(),
        nll: res.f,
        init_nll,
        iterations: res.iterations,
        converged: res.converged && res.f.is_finite(),
    })
}

/// Packed parameters of the correlated model:
/// `[θ (L), C (L² reals), log σ², ψ_{k,l} for k = 2..K]` where `P = C Cᴴ`,
/// `C` lower triangular with real diagonal, and `Φ_k = diag(e^{jψ_{k,·}})`.
#[derive(Debug, Clone, Copy)]
pub struct CorrelatedLayout {
    pub sources: usize,
    pub subarrays: usize,
}

impl CorrelatedLayout {
    pub fn len(&self) -> usize {
        let l = self.sources;
        l + l * l + 1 + (self.subarrays - 1) * l
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn c_offset(&self) -> usize {
        self.sources
    }

    fn noise_index(&self) -> usize {
        self.sources + self.sources * self.sources
    }

    fn phase_index(&self, k: usize, l: usize) -> usize {
        debug_assert!(k >= 1);
        self.noise_index() + 1 + (k - 1) * self.sources + l
    }

    /// Strictly-lower positions `(i, j)` in packing order.
    fn lower_pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let l = self.sources;
        (0..l).flat_map(move |i| (0..i).map(move |j| (i, j)))
    }

    pub fn factor(&self, x: &DVector<f64>) -> CMatrix {
        let l = self.sources;
        let mut c = CMatrix::zeros(l, l);
        let off = self.c_offset();
        for i in 0..l {
            c[(i, i)] = C64::new(x[off + i], 0.0);
        }
        for (n, (i, j)) in self.lower_pairs().enumerate() {
            c[(i, j)] = C64::new(x[off + l + 2 * n], x[off + l + 2 * n + 1]);
        }
        c
    }

    pub fn phases(&self, x: &DVector<f64>) -> Vec<Vec<C64>> {
        (0..self.subarrays)
            .map(|k| {
                (0..self.sources)
                    .map(|l| {
                        if k == 0 {
                            C64::new(1.0, 0.0)
                        } else {
                            C64::from_polar(1.0, x[self.phase_index(k, l)])
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Packs a starting point with `P = diag(powers)` and `Φ_k = I`.
    pub fn pack_diagonal(&self, doas: &[f64], powers: &[f64], noise_var: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for i in 0..self.sources {
            x[i] = doas[i];
            x[self.c_offset() + i] = powers[i].sqrt();
        }
        x[self.noise_index()] = noise_var.ln();
        x
    }
}

/// Correlated negative log-likelihood in natural parameters; `phases[k]` is
/// the diagonal of `Φ_k` (the first entry must be all ones).
pub fn nll_correlated(
    array: &ArrayGeometry,
    covs: &CovarianceSet,
    snapshots: f64,
    doas: &[f64],
    source_cov: &CMatrix,
    noise_var: f64,
    phases: &[Vec<C64>],
) -> Result<f64> {
    let prep = Prepared::new(array, covs, snapshots)?;
    if phases.len() != array.num_subarrays() || source_cov.shape() != (doas.len(), doas.len()) {
        return Err(Error::Dimension("phase or source covariance dimensions".into()));
    }
    let mut f = 0.0;
    for ((geom, rhat), phi) in array.subarrays().iter().zip(prep.covs).zip(phases) {
        let a = phased_steering(geom, doas, phi);
        match subarray_terms(&a, source_cov, noise_var, rhat) {
            Some((fk, _)) => f += fk,
            None => return Ok(f64::INFINITY),
        }
    }
    Ok(prep.n * f)
}

fn phased_steering(geom: &crate::SubarrayGeometry, doas: &[f64], phi: &[C64]) -> CMatrix {
    let mut a = steering_matrix(geom, doas);
    for (l, &p) in phi.iter().enumerate() {
        a.column_mut(l).iter_mut().for_each(|z| *z *= p);
    }
    a
}

/// Value and gradient of the correlated negative log-likelihood at packed
/// parameters `x`.
pub fn nll_correlated_packed(
    array: &ArrayGeometry,
    covs: &CovarianceSet,
    snapshots: f64,
    layout: &CorrelatedLayout,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let prep = Prepared::new(array, covs, snapshots)?;
    if layout.subarrays != array.num_subarrays() || x.len() != layout.len() {
        return Err(Error::Dimension("packed parameter length".into()));
    }
    Ok(correlated_eval(array, &prep, layout, x))
}

fn correlated_eval(array: &ArrayGeometry, prep: &Prepared, layout: &CorrelatedLayout, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let l = layout.sources;
    let doas: Vec<f64> = x.rows(0, l).iter().copied().collect();
    let c = layout.factor(x);
    let p = &c * c.adjoint();
    let s2 = x[layout.noise_index()].exp();
    let phases = layout.phases(x);
    let mut f = 0.0;
    let mut grad = DVector::zeros(layout.len());
    let mut s_acc = CMatrix::zeros(l, l);
    let mut tr_g = 0.0;
    for (k, (geom, rhat)) in array.subarrays().iter().zip(prep.covs).enumerate() {
        let a = phased_steering(geom, &doas, &phases[k]);
        let Some((fk, g)) = subarray_terms(&a, &p, s2, rhat) else {
            return (f64::INFINITY, DVector::from_element(layout.len(), f64::NAN));
        };
        f += fk;
        tr_g += trace(&g).re;
        let dv = steering_derivative_matrix(geom, &doas);
        let ga = &g * &a;
        // rows of P Aᴴ G
        let pag = &p * ga.adjoint();
        let pag_dv = &pag * &dv;
        let pag_a = &pag * &a;
        for i in 0..l {
            grad[i] += 2.0 * (phases[k][i] * pag_dv[(i, i)]).re;
            if k > 0 {
                grad[layout.phase_index(k, i)] += 2.0 * (J * pag_a[(i, i)]).re;
            }
        }
        s_acc += a.adjoint() * ga;
    }
    let t = c.adjoint() * s_acc;
    let off = layout.c_offset();
    for i in 0..l {
        grad[off + i] = 2.0 * t[(i, i)].re;
    }
    for (n, (i, j)) in layout.lower_pairs().enumerate() {
        grad[off + l + 2 * n] = 2.0 * t[(j, i)].re;
        grad[off + l + 2 * n + 1] = -2.0 * t[(j, i)].im;
    }
    grad[layout.noise_index()] = s2 * tr_g;
    (prep.n * f, grad * prep.n)
}

/// Local minimization of the correlated likelihood over `θ`, `P ⪰ 0`, `σ²`
/// and the phases of subarrays `2..K`. Starts from `P = diag(powers)` and
/// `Φ_k = I`.
pub fn mle_correlated(
    array: &ArrayGeometry,
    covs: &CovarianceSet,
    snapshots: f64,
    init: &MleInit,
    opts: &MleOptions,
) -> Result<MleResult> {
    check_init(init)?;
    let prep = Prepared::new(array, covs, snapshots)?;
    let layout = CorrelatedLayout {
        sources: init.doas.len(),
        subarrays: array.num_subarrays(),
    };
    let mut doas0 = init.doas.clone();
    separate_duplicates(&mut doas0);
    let fg = |x: &DVector<f64>| correlated_eval(array, &prep, &layout, x);
    let init_nll = fg(&layout.pack_diagonal(&doas0, &init.powers, init.noise_var)).0;
    // Continuation: fit the nested diagonal-P model first. Started far from
    // the optimum, the free cross terms and phases otherwise absorb the DOA
    // error and the descent settles in a spurious basin.
    let stage = mle_uncorrelated(array, covs, snapshots, init, opts)?;
    let x0 = if stage.nll.is_finite() && stage.nll <= init_nll {
        layout.pack_diagonal(&stage.doas, &stage.powers, stage.noise_var)
    } else {
        layout.pack_diagonal(&doas0, &init.powers, init.noise_var)
    };
    let mut res = minimize(fg, x0, &opts.bfgs);
    res.iterations += stage.iterations;
    let x = res.x;
    let c = layout.factor(&x);
    let p = crate::linalg::hermitian_part(&(&c * c.adjoint()));
    let l = layout.sources;
    Ok(MleResult {
        doas: x.rows(0, l).iter().map(|&t| fold_doa(array, t)).collect(),
        powers: p.diagonal().iter().map(|z| z.re).collect(),
        source_cov: p,
        noise_var: x[layout.noise_index()].exp(),
        phases: layout.phases(&x),
        nll: res.f,
        init_nll,
        iterations: res.iterations,
        converged: res.converged && res.f.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deg;
    use crate::geometry::{Position, SubarrayGeometry};
    use crate::linalg::hpd_inverse_logdet;
    use crate::signal::{CovarianceKind, NoiseModel, SourceModel};
    use proptest::prelude::*;

    fn reference() -> ArrayGeometry {
        crate::experiment::presets::reference_array()
    }

    fn small_array() -> ArrayGeometry {
        ArrayGeometry::new(vec![
            SubarrayGeometry::linear(&[0.0, 1.3, 2.1], Position::zeros()).unwrap(),
            SubarrayGeometry::linear(&[0.0, 0.7], Position::new(5.0, 2.0)).unwrap(),
            SubarrayGeometry::new(vec![Position::zeros(), Position::new(0.4, 1.1)], Position::new(-3.0, 1.0)).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn exact_covariances_give_logdet_plus_m() {
        let arr = reference();
        let model = SourceModel::equal_power(vec![deg(-11.4), deg(-1.1)], 1.0).unwrap();
        let noise = NoiseModel::from_snr_db(5.0, 1.0).unwrap();
        let covs = CovarianceSet::true_covariances(&arr, &model, &noise);
        let f = nll_uncorrelated(&arr, &covs, 50.0, model.doas(), model.powers(), noise.variance()).unwrap();
        let expect: f64 = covs
            .matrices()
            .iter()
            .map(|r| 50.0 * (hpd_inverse_logdet(r).unwrap().1 + r.nrows() as f64))
            .sum();
        assert!((f - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn diverging_power_is_infeasible() {
        let arr = reference();
        let doas = [deg(-11.4), deg(-1.1)];
        let model = SourceModel::equal_power(doas.to_vec(), 1.0).unwrap();
        let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::from_snr_db(10.0, 1.0).unwrap(), 50, 41, false).unwrap();
        let f = |p: f64| nll_uncorrelated(&arr, &covs, 50.0, &[deg(-8.7), deg(-3.6)], &[1.0, p], 0.74).unwrap();
        assert!(f(1e3).is_finite() && f(1e3) > 0.0);
        assert_eq!(f(7e16), f64::INFINITY);
    }

    #[test]
    fn scalar_case() {
        let arr = ArrayGeometry::new(vec![SubarrayGeometry::linear(&[0.0], Position::zeros()).unwrap()]).unwrap();
        let covs = CovarianceSet::new(vec![CMatrix::from_element(1, 1, C64::new(3.0, 0.0))], CovarianceKind::True).unwrap();
        // r = λ + σ² = 2
        let f = nll_uncorrelated(&arr, &covs, 7.0, &[0.3], &[1.5], 0.5).unwrap();
        assert!((f - 7.0 * (2f64.ln() + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn truth_is_stationary_for_exact_covariances() {
        let arr = reference();
        let model = SourceModel::equal_power(vec![deg(-11.4), deg(-1.1)], 1.0).unwrap();
        let noise = NoiseModel::from_snr_db(10.0, 1.0).unwrap();
        let covs = CovarianceSet::true_covariances(&arr, &model, &noise);
        let (f, g) = nll_uncorrelated_grad(&arr, &covs, 50.0, model.doas(), model.powers(), noise.variance()).unwrap();
        let norm = g.doas.iter().chain(&g.powers).chain([&g.noise_var]).fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(norm / f.abs() < 1e-8, "gradient {norm}");

        let model = SourceModel::correlated_pair([deg(-11.4), deg(-1.1)], 1.0, C64::new(0.6, 0.0)).unwrap();
        let covs = CovarianceSet::true_covariances(&arr, &model, &noise);
        let layout = CorrelatedLayout {
            sources: 2,
            subarrays: arr.num_subarrays(),
        };
        let x = truth_packed(&arr, &layout, &model, noise.variance());
        let (f, g) = nll_correlated_packed(&arr, &covs, 50.0, &layout, &x).unwrap();
        assert!(g.camax() / f.abs() < 1e-8, "gradient {}", g.camax());
    }

    /// Packed truth: `Φ_k` carries the displacement phases relative to
    /// subarray 1, which has none.
    fn truth_packed(arr: &ArrayGeometry, layout: &CorrelatedLayout, model: &SourceModel, s2: f64) -> DVector<f64> {
        let mut x = DVector::zeros(layout.len());
        for i in 0..2 {
            x[i] = model.doas()[i];
        }
        // 2 × 2 Cholesky with real diagonal; c11 → 0 for a coherent pair
        let p = model.source_covariance();
        let c00 = p[(0, 0)].re.sqrt();
        let c10 = p[(1, 0)] / c00;
        let c11 = (p[(1, 1)].re - c10.norm_sqr()).max(0.0).sqrt();
        let off = layout.c_offset();
        x[off] = c00;
        x[off + 1] = c11;
        x[off + 2] = c10.re;
        x[off + 3] = c10.im;
        x[layout.noise_index()] = s2.ln();
        for k in 1..arr.num_subarrays() {
            for l in 0..2 {
                let phi = crate::geometry::phase_shift(&arr.subarray(k).displacement(), model.doas()[l]);
                x[layout.phase_index(k, l)] = phi.arg();
            }
        }
        x
    }

    #[test]
    fn correlated_equals_uncorrelated_for_diagonal_p() {
        let arr = small_array();
        let model = SourceModel::uncorrelated(vec![0.2, -0.5], vec![1.0, 0.4]).unwrap();
        let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::new(0.3).unwrap(), 40, 3, false).unwrap();
        let unc = nll_uncorrelated(&arr, &covs, 40.0, &[0.25, -0.45], &[0.9, 0.5], 0.35).unwrap();
        let phases: Vec<Vec<C64>> = (0..3)
            .map(|k| (0..2).map(|l| if k == 0 { C64::new(1.0, 0.0) } else { C64::from_polar(1.0, 0.3 * (k + l) as f64) }).collect())
            .collect();
        let p = diag_real(&[0.9, 0.5]);
        let cor = nll_correlated(&arr, &covs, 40.0, &[0.25, -0.45], &p, 0.35, &phases).unwrap();
        assert!((unc - cor).abs() < 1e-10 * unc.abs());
    }

    fn central_difference<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            (0..x.len()).map(|i| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            }),
        )
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).camax() / b.camax().max(1e-12)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn uncorrelated_gradient_matches_finite_differences(
            seed in 0u64..1000,
            t1 in -1.2f64..1.2, t2 in -1.2f64..1.2,
            l1 in 0.2f64..2.0, l2 in 0.2f64..2.0, s2 in 0.05f64..1.0,
        ) {
            let arr = small_array();
            let model = SourceModel::uncorrelated(vec![0.3, -0.6], vec![1.0, 0.7]).unwrap();
            let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::new(0.2).unwrap(), 30, seed, false).unwrap();
            let x = DVector::from_vec(vec![t1, t2, l1, l2, s2]);
            let f = |x: &DVector<f64>| nll_uncorrelated(&arr, &covs, 30.0, &[x[0], x[1]], &[x[2], x[3]], x[4]).unwrap();
            let (_, g) = nll_uncorrelated_grad(&arr, &covs, 30.0, &[t1, t2], &[l1, l2], s2).unwrap();
            let an = DVector::from_vec(vec![g.doas[0], g.doas[1], g.powers[0], g.powers[1], g.noise_var]);
            let fd = central_difference(f, &x, 1e-6);
            prop_assert!(rel_err(&an, &fd) < 1e-5, "{an} vs {fd}");
        }

        #[test]
        fn correlated_gradient_matches_finite_differences(seed in 0u64..1000, raw in prop::collection::vec(-1.0f64..1.0, 11)) {
            let arr = small_array();
            let model = SourceModel::correlated_pair([0.3, -0.6], 1.0, C64::new(0.4, 0.3)).unwrap();
            let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::new(0.2).unwrap(), 30, seed, false).unwrap();
            let layout = CorrelatedLayout { sources: 2, subarrays: 3 };
            prop_assert_eq!(layout.len(), 11);
            let x = DVector::from_vec(raw);
            let f = |x: &DVector<f64>| nll_correlated_packed(&arr, &covs, 30.0, &layout, x).unwrap().0;
            let (_, an) = nll_correlated_packed(&arr, &covs, 30.0, &layout, &x).unwrap();
            let fd = central_difference(f, &x, 1e-6);
            prop_assert!(rel_err(&an, &fd) < 1e-5, "{an} vs {fd}");
        }
    }

    #[test]
    fn init_at_truth_returns_truth() {
        let arr = reference();
        let model = SourceModel::equal_power(vec![deg(-11.4), deg(-1.1)], 1.0).unwrap();
        let noise = NoiseModel::from_snr_db(10.0, 1.0).unwrap();
        let covs = CovarianceSet::true_covariances(&arr, &model, &noise);
        let init = MleInit {
            doas: model.doas().to_vec(),
            powers: vec![1.0, 1.0],
            noise_var: noise.variance(),
        };
        let r = mle_uncorrelated(&arr, &covs, 50.0, &init, &MleOptions::default()).unwrap();
        assert!(r.converged);
        for (a, b) in r.doas.iter().zip(model.doas()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(r.nll <= r.init_nll);
    }

    #[test]
    fn recovers_single_source_from_exact_covariances() {
        let arr = reference();
        let truth = deg(23.456);
        let model = SourceModel::equal_power(vec![truth], 1.0).unwrap();
        let noise = NoiseModel::from_snr_db(0.0, 1.0).unwrap();
        let covs = CovarianceSet::true_covariances(&arr, &model, &noise);
        let init = MleInit {
            doas: vec![deg(23.4)],
            powers: vec![0.7],
            noise_var: 1.5,
        };
        let r = mle_uncorrelated(&arr, &covs, 50.0, &init, &MleOptions::default()).unwrap();
        assert!((r.doas[0] - truth).abs().to_degrees() < 1e-4);
        assert!((r.powers[0] - 1.0).abs() < 1e-6);
        assert!((r.noise_var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coherent_pair_recovered_by_correlated_mle() {
        let arr = reference();
        let doas = [deg(-11.4), deg(-1.1)];
        let model = SourceModel::correlated_pair(doas, 1.0, C64::new(1.0, 0.0)).unwrap();
        let noise = NoiseModel::from_snr_db(10.0, 1.0).unwrap();
        let covs = CovarianceSet::true_covariances(&arr, &model, &noise);
        let init = MleInit {
            doas: vec![deg(-11.3), deg(-1.2)],
            powers: vec![0.8, 0.8],
            noise_var: 0.2,
        };
        let opts = MleOptions {
            bfgs: BfgsOptions {
                max_iter: 5000,
                ..Default::default()
            },
        };
        let r = mle_correlated(&arr, &covs, 50.0, &init, &opts).unwrap();
        for (a, b) in r.doas.iter().zip(&doas) {
            assert!((a - b).abs().to_degrees() < 1e-3, "{} vs {}", a.to_degrees(), b.to_degrees());
        }
        assert!(r.nll <= r.init_nll);
        assert!(r.phases[0].iter().all(|z| *z == C64::new(1.0, 0.0)));
        assert!(r.phases.iter().flatten().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert!(crate::linalg::hermitian_eigenvalues(&r.source_cov)[0] > -1e-12);
    }

    #[test]
    fn correlated_agrees_with_uncorrelated_on_uncorrelated_data() {
        // the gap between the two fits shrinks like 1/√N; about 0.3° at N = 50
        let arr = reference();
        let truth = [deg(-11.4), deg(-1.1)];
        let model = SourceModel::equal_power(truth.to_vec(), 1.0).unwrap();
        let noise = NoiseModel::from_snr_db(20.0, 1.0).unwrap();
        let n = 5000;
        let init = MleInit {
            doas: vec![deg(-11.0), deg(-1.5)],
            powers: vec![0.8, 1.2],
            noise_var: 0.05,
        };
        for seed in 0..3 {
            let covs = CovarianceSet::simulate(&arr, &model, &noise, n, seed, false).unwrap();
            let u = mle_uncorrelated(&arr, &covs, n as f64, &init, &MleOptions::default()).unwrap();
            let c = mle_correlated(&arr, &covs, n as f64, &init, &MleOptions::default()).unwrap();
            assert!(u.converged && c.converged);
            assert!(c.nll <= u.nll + 1e-9 * u.nll.abs());
            for (a, b) in u.doas.iter().zip(&c.doas) {
                assert!((a - b).abs().to_degrees() < 0.05, "seed {seed}: {} vs {}", a.to_degrees(), b.to_degrees());
            }
        }
    }

    #[test]
    fn duplicate_start_is_separated() {
        let mut d = vec![0.1, 0.1, 0.1];
        separate_duplicates(&mut d);
        let step = 0.01f64.to_radians();
        assert!((d[1] - 0.1 - step).abs() < 1e-15);
        assert!((d[2] - 0.1 - 2.0 * step).abs() < 1e-15);
    }

    #[test]
    fn fold_doa_maps_to_canonical_range() {
        let arr = reference();
        assert!((fold_doa(&arr, std::f64::consts::PI - 0.3) - 0.3).abs() < 1e-12);
        let planar = small_array();
        assert!((fold_doa(&planar, 2.0 * std::f64::consts::PI + 0.2) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_init() {
        let arr = reference();
        let covs = CovarianceSet::true_covariances(
            &arr,
            &SourceModel::equal_power(vec![0.0], 1.0).unwrap(),
            &NoiseModel::new(1.0).unwrap(),
        );
        let bad = MleInit {
            doas: vec![0.0],
            powers: vec![-1.0],
            noise_var: 1.0,
        };
        assert!(mle_uncorrelated(&arr, &covs, 10.0, &bad, &MleOptions::default()).is_err());
    }
}
