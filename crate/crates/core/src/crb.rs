//! Cramér-Rao bounds on the DOAs from per-subarray covariances.
//!
//! With `Ω_k = N (R_k⁻ᵀ ⊗ R_k⁻¹)` the real Fisher information between real
//! parameters `a, b` contributed by subarray `k` is
//! `N Re tr(R_k⁻¹ ∂_a R_k R_k⁻¹ ∂_b R_k) = Re(∂_a r_kᴴ Ω_k ∂_b r_k)`.
//! The DOA bound is the inverse of the Schur complement of the nuisance
//! block in the summed FIM `J = Σ_k J_k`; a pseudo-inverse handles nuisance
//! directions the data cannot see.

use nalgebra::DMatrix;

use crate::geometry::{direction, direction_derivative, steering_derivative_matrix, ArrayGeometry};
use crate::linalg::{hpd_inverse, hpsd_rcond, psd_pinv, spd_inverse, CMatrix, C64, J};
use crate::signal::{displaced_steering_matrix, SourceModel};
use crate::{Error, Result};
use std::f64::consts::PI;

/// Below this reciprocal condition number the projected FIM is declared
/// singular.
pub const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CrbResult {
    /// `L × L` bound on the DOA covariance, radians².
    pub matrix: DMatrix<f64>,
    /// Reciprocal condition number of the projected FIM.
    pub rcond: f64,
}

impl CrbResult {
    /// `sqrt(CRB_ll)` per DOA, degrees.
    pub fn bounds_deg(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|v| v.max(0.0).sqrt().to_degrees()).collect()
    }

    /// `sqrt(mean_l CRB_ll)`, degrees.
    pub fn summary_deg(&self) -> f64 {
        let d = self.matrix.diagonal();
        (d.iter().sum::<f64>() / d.len() as f64).max(0.0).sqrt().to_degrees()
    }
}

/// Derivatives of one subarray covariance with respect to the global real
/// parameter indices they depend on.
struct SubarrayModel {
    /// Matrix whose inverse weights the derivatives (`R_k`, or its noiseless
    /// high-SNR counterpart).
    weight: CMatrix,
    derivs: Vec<(usize, CMatrix)>,
}

/// `Σ_k N Re tr(W_k⁻¹ ∂_a W_k⁻¹ ∂_b)` for every subarray, `dim × dim` each.
fn subarray_fims(models: &[SubarrayModel], dim: usize, n: f64) -> Result<Vec<DMatrix<f64>>> {
    models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let inv = hpd_inverse(&m.weight).ok_or(Error::SingularCovariance { subarray: k })?;
            let x: Vec<(usize, CMatrix)> = m.derivs.iter().map(|(i, d)| (*i, &inv * d)).collect();
            let mut fim = DMatrix::zeros(dim, dim);
            for (a, (i, xi)) in x.iter().enumerate() {
                for (j, xj) in &x[a..] {
                    // tr(X_i X_j) without forming the product
                    let t: C64 = xi.iter().zip(xj.transpose().iter()).map(|(p, q)| p * q).sum();
                    fim[(*i, *j)] += n * t.re;
                    if i != j {
                        fim[(*j, *i)] += n * t.re;
                    }
                }
            }
            Ok(fim)
        })
        .collect()
}

/// `J = Σ_k J_k`.
pub fn fim_total(fims: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = fims.first().map(|f| f.nrows()).unwrap_or(0);
    fims.iter().fold(DMatrix::zeros(n, n), |acc, f| acc + f)
}

/// Inverse of `J_θθ − J_θη J_ηη⁺ J_ηθ` for the leading `l` parameters.
pub fn schur_crb(fim: &DMatrix<f64>, l: usize) -> Result<CrbResult> {
    let n = fim.nrows();
    let jtt = fim.view((0, 0), (l, l)).into_owned();
    let projected = if n > l {
        let jte = fim.view((0, l), (l, n - l));
        let jee = fim.view((l, l), (n - l, n - l)).into_owned();
        let pinv = psd_pinv(&jee, 1e-13);
        jtt - jte * pinv * jte.transpose()
    } else {
        jtt
    };
    let (inv, rcond) = spd_inverse(&projected);
    match inv {
        Some(m) if rcond >= RCOND_MIN => Ok(CrbResult { matrix: m, rcond }),
        _ => Err(Error::NotIdentifiable { rcond }),
    }
}

fn outer(u: nalgebra::DVectorView<C64>, v: nalgebra::DVectorView<C64>) -> CMatrix {
    u * v.adjoint()
}

fn check_n(n: f64) -> Result<()> {
    if n > 0.0 && n.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("snapshot count must be positive, got {n}")))
    }
}

/// Uncorrelated-source model: parameters `[θ (L), λ (L), σ²]`.
fn uncorrelated_models(array: &ArrayGeometry, doas: &[f64], powers: &[f64], noise_var: f64) -> Vec<SubarrayModel> {
    let l = doas.len();
    array
        .subarrays()
        .iter()
        .map(|g| {
            let m = g.num_sensors();
            let v = crate::geometry::steering_matrix(g, doas);
            let dv = steering_derivative_matrix(g, doas);
            let mut weight = CMatrix::identity(m, m) * C64::new(noise_var, 0.0);
            let mut derivs = Vec::with_capacity(2 * l + 1);
            for i in 0..l {
                let vv = outer(v.column(i), v.column(i));
                weight += &vv * C64::new(powers[i], 0.0);
                let d = outer(dv.column(i), v.column(i));
                derivs.push((i, (&d + d.adjoint()) * C64::new(powers[i], 0.0)));
                derivs.push((l + i, vv));
            }
            derivs.push((2 * l, CMatrix::identity(m, m)));
            SubarrayModel { weight, derivs }
        })
        .collect()
}

pub fn fims_uncorrelated(array: &ArrayGeometry, doas: &[f64], powers: &[f64], noise_var: f64, n: f64) -> Result<Vec<DMatrix<f64>>> {
    check_n(n)?;
    if doas.len() != powers.len() {
        return Err(Error::Dimension("DOA and power counts differ".into()));
    }
    subarray_fims(&uncorrelated_models(array, doas, powers, noise_var), 2 * doas.len() + 1, n)
}

/// Exact CRB for uncorrelated sources with nuisance `[λ, σ²]`.
pub fn crb_uncorrelated(array: &ArrayGeometry, doas: &[f64], powers: &[f64], noise_var: f64, n: f64) -> Result<CrbResult> {
    let fims = fims_uncorrelated(array, doas, powers, noise_var, n)?;
    schur_crb(&fim_total(&fims), doas.len())
}

/// `∂a_{k,l}/∂θ_l` including the displacement phase.
fn displaced_steering_derivative(g: &crate::SubarrayGeometry, doas: &[f64]) -> CMatrix {
    let a = displaced_steering_matrix(g, doas);
    let mut d = steering_derivative_matrix(g, doas);
    let zeta = g.displacement();
    for (l, &t) in doas.iter().enumerate() {
        let phi = crate::geometry::phase_shift(&zeta, t);
        let dphase = J * PI * zeta.dot(&direction_derivative(t));
        for i in 0..d.nrows() {
            d[(i, l)] = d[(i, l)] * phi + dphase * a[(i, l)];
        }
    }
    d
}

/// Index of each real parameter of `P` in the correlated layout, relative to
/// the block start: diagonal first, then `(Re, Im)` of the upper triangle.
fn p_derivatives(a: &CMatrix) -> Vec<CMatrix> {
    let l = a.ncols();
    let mut out = Vec::with_capacity(l * l);
    for i in 0..l {
        out.push(outer(a.column(i), a.column(i)));
    }
    for i in 0..l {
        for j in i + 1..l {
            let x = outer(a.column(i), a.column(j));
            out.push(&x + x.adjoint());
            out.push((&x - x.adjoint()) * J);
        }
    }
    out
}

/// Correlated model with nuisance `[p (L² reals), σ², ζ_2, …, ζ_K]` and
/// optional noise term. `cov` is `P` (exact) or `Υ` (high SNR).
fn correlated_models(array: &ArrayGeometry, doas: &[f64], cov: &CMatrix, noise_var: Option<f64>) -> (Vec<SubarrayModel>, usize) {
    let l = doas.len();
    let p_off = l;
    let s_off = l + l * l;
    let z_off = s_off + usize::from(noise_var.is_some());
    let dim = z_off + 2 * (array.num_subarrays() - 1);
    let models = array
        .subarrays()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let m = g.num_sensors();
            let a = displaced_steering_matrix(g, doas);
            let da = displaced_steering_derivative(g, doas);
            let apa = &a * cov * a.adjoint();
            let mut weight = apa.clone();
            let mut derivs = Vec::new();
            // θ_l: ∂A has only column l
            for i in 0..l {
                let mut dai = CMatrix::zeros(m, l);
                dai.set_column(i, &da.column(i));
                let x = &dai * cov * a.adjoint();
                derivs.push((i, &x + x.adjoint()));
            }
            for (j, d) in p_derivatives(&a).into_iter().enumerate() {
                derivs.push((p_off + j, d));
            }
            if let Some(s2) = noise_var {
                weight += CMatrix::identity(m, m) * C64::new(s2, 0.0);
                derivs.push((s_off, CMatrix::identity(m, m)));
            }
            if k > 0 {
                for c in 0..2 {
                    // ∂a_l/∂ζ_c = jπ ν_c(θ_l) a_l
                    let mut dz = a.clone();
                    for (i, &t) in doas.iter().enumerate() {
                        let s = J * PI * direction(t)[c];
                        dz.column_mut(i).iter_mut().for_each(|z| *z *= s);
                    }
                    let x = &dz * cov * a.adjoint();
                    derivs.push((z_off + 2 * (k - 1) + c, &x + x.adjoint()));
                }
            }
            SubarrayModel { weight, derivs }
        })
        .collect();
    (models, dim)
}

pub fn fims_correlated(array: &ArrayGeometry, model: &SourceModel, noise_var: f64, n: f64) -> Result<Vec<DMatrix<f64>>> {
    check_n(n)?;
    let (models, dim) = correlated_models(array, model.doas(), &model.source_covariance(), Some(noise_var));
    subarray_fims(&models, dim, n)
}

/// Exact CRB for possibly correlated sources. The displacements stored in
/// `array` are the true ones; they enter as nuisance parameters together with
/// the `L²` real parameters of `P` and `σ²`.
pub fn crb_correlated(array: &ArrayGeometry, model: &SourceModel, noise_var: f64, n: f64) -> Result<CrbResult> {
    let fims = fims_correlated(array, model, noise_var, n)?;
    schur_crb(&fim_total(&fims), model.num_sources())
}

fn check_high_snr_weights(models: &[SubarrayModel]) -> Result<()> {
    for (k, m) in models.iter().enumerate() {
        let rc = hpsd_rcond(&m.weight);
        if rc < RCOND_MIN {
            let ev = crate::linalg::hermitian_eigenvalues(&m.weight);
            let top = ev.last().copied().unwrap_or(0.0);
            let rank = ev.iter().filter(|&&e| e > RCOND_MIN * top).count();
            return Err(Error::SingularHighSnrWeight {
                subarray: k,
                rank,
                dim: m.weight.nrows(),
            });
        }
    }
    Ok(())
}

/// High-SNR limit of the uncorrelated CRB for unit powers: the derivatives
/// of `V̆ 1` weighted by `blkdiag((V_kV_kᴴ)⁻ᵀ ⊗ (V_kV_kᴴ)⁻¹)`, with the
/// power and noise directions `[V̆, i]` projected out. Declines when some
/// `V_kV_kᴴ` is singular.
pub fn crb_high_snr_uncorrelated(array: &ArrayGeometry, doas: &[f64], n: f64) -> Result<CrbResult> {
    check_n(n)?;
    let l = doas.len();
    let mut models = uncorrelated_models(array, doas, &vec![1.0; l], 0.0);
    for m in &mut models {
        m.weight = crate::linalg::hermitian_part(&m.weight);
    }
    check_high_snr_weights(&models)?;
    schur_crb(&fim_total(&subarray_fims(&models, 2 * l + 1, n)?), l)
}

/// High-SNR limit of the correlated CRB with normalized source covariance
/// `Υ`: `u_k = vec(A_kΥA_kᴴ)` weighted by `(A_kΥA_kᴴ)⁻ᵀ ⊗ (A_kΥA_kᴴ)⁻¹`,
/// with `p`, noise and displacement directions projected out. Declines for
/// rank-deficient `A_kΥA_kᴴ` (e.g. a coherent pair).
pub fn crb_high_snr_correlated(array: &ArrayGeometry, doas: &[f64], upsilon: &CMatrix, n: f64) -> Result<CrbResult> {
    check_n(n)?;
    let l = doas.len();
    if upsilon.shape() != (l, l) {
        return Err(Error::Dimension("Υ must be L × L".into()));
    }
    let (mut models, dim) = correlated_models(array, doas, upsilon, None);
    // keep the noise direction as a nuisance even though σ² → 0
    let s_idx = dim;
    for m in &mut models {
        let k = m.weight.nrows();
        m.derivs.push((s_idx, CMatrix::identity(k, k)));
    }
    check_high_snr_weights(&models)?;
    schur_crb(&fim_total(&subarray_fims(&models, dim + 1, n)?), l)
}
