//! Subarray geometry, steering vectors and co-array (Khatri-Rao) manifolds.
//!
//! Positions are in half-wavelength units, so the spatial phase of a sensor
//! at offset `ζ` for a plane wave from azimuth `θ` is `π ζᵀ ν(θ)` with
//! `ν(θ) = [sin θ, cos θ]`.

use std::f64::consts::PI;

use nalgebra::Vector2;

use crate::linalg::{vec_outer, CMatrix, CVector, C64, J};
use crate::{Error, Result};

pub type Position = Vector2<f64>;

/// Unit propagation direction `[sin θ, cos θ]`.
#[inline]
pub fn direction(theta: f64) -> Position {
    Position::new(theta.sin(), theta.cos())
}

/// `dν/dθ = [cos θ, -sin θ]`.
#[inline]
pub fn direction_derivative(theta: f64) -> Position {
    Position::new(theta.cos(), -theta.sin())
}

/// One perfectly calibrated subarray.
#[derive(Debug, Clone, PartialEq)]
pub struct SubarrayGeometry {
    offsets: Vec<Position>,
    displacement: Position,
}

impl SubarrayGeometry {
    /// `offsets[0]` must be the origin; `displacement` is the (unknown to
    /// estimators) position of the reference sensor.
    pub fn new(offsets: Vec<Position>, displacement: Position) -> Result<Self> {
        let first = offsets
            .first()
            .ok_or_else(|| Error::Geometry("subarray needs at least one sensor".into()))?;
        if first.x != 0.0 || first.y != 0.0 {
            return Err(Error::Geometry(format!(
                "first sensor offset must be the origin, got ({}, {})",
                first.x, first.y
            )));
        }
        if offsets.iter().chain([&displacement]).any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Geometry("non-finite position".into()));
        }
        Ok(Self {
            offsets,
            displacement,
        })
    }

    /// Linear subarray along x with sensors at the given abscissae.
    pub fn linear(xs: &[f64], displacement: Position) -> Result<Self> {
        Self::new(xs.iter().map(|&x| Position::new(x, 0.0)).collect(), displacement)
    }

    pub fn offsets(&self) -> &[Position] {
        &self.offsets
    }

    pub fn displacement(&self) -> Position {
        self.displacement
    }

    pub fn num_sensors(&self) -> usize {
        self.offsets.len()
    }

    pub fn with_displacement(&self, displacement: Position) -> Self {
        Self {
            offsets: self.offsets.clone(),
            displacement,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    subarrays: Vec<SubarrayGeometry>,
}

impl ArrayGeometry {
    pub fn new(subarrays: Vec<SubarrayGeometry>) -> Result<Self> {
        let first = subarrays
            .first()
            .ok_or_else(|| Error::Geometry("array needs at least one subarray".into()))?;
        if first.displacement != Position::zeros() {
            return Err(Error::Geometry("first subarray must have zero displacement".into()));
        }
        Ok(Self { subarrays })
    }

    pub fn subarrays(&self) -> &[SubarrayGeometry] {
        &self.subarrays
    }

    pub fn subarray(&self, k: usize) -> &SubarrayGeometry {
        &self.subarrays[k]
    }

    pub fn num_subarrays(&self) -> usize {
        self.subarrays.len()
    }

    /// `M = Σ M_k`.
    pub fn total_sensors(&self) -> usize {
        self.subarrays.iter().map(|s| s.num_sensors()).sum()
    }

    /// `Σ M_k²`, the length of the stacked covariance vector.
    pub fn co_array_len(&self) -> usize {
        self.subarrays.iter().map(|s| s.num_sensors().pow(2)).sum()
    }

    /// Row offset of subarray `k` inside the stacked covariance vector.
    pub fn co_array_offset(&self, k: usize) -> usize {
        self.subarrays[..k].iter().map(|s| s.num_sensors().pow(2)).sum()
    }

    /// The array restricted to its first subarray.
    pub fn first_subarray_only(&self) -> Self {
        Self {
            subarrays: vec![self.subarrays[0].clone()],
        }
    }
}

/// `v_k(θ)`: entry `i` is `exp(jπ ζ'ᵢᵀ ν(θ))`.
pub fn steering_vector(geom: &SubarrayGeometry, theta: f64) -> CVector {
    let nu = direction(theta);
    CVector::from_iterator(
        geom.num_sensors(),
        geom.offsets.iter().map(|p| {
            if p.x == 0.0 && p.y == 0.0 {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, PI * p.dot(&nu))
            }
        }),
    )
}

/// `dv_k/dθ`, entry `i` is `jπ ζ'ᵢᵀ ν'(θ) · exp(jπ ζ'ᵢᵀ ν(θ))`.
pub fn steering_derivative(geom: &SubarrayGeometry, theta: f64) -> CVector {
    let nu = direction(theta);
    let dnu = direction_derivative(theta);
    CVector::from_iterator(
        geom.num_sensors(),
        geom.offsets.iter().map(|p| {
            if p.x == 0.0 && p.y == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                J * PI * p.dot(&dnu) * C64::from_polar(1.0, PI * p.dot(&nu))
            }
        }),
    )
}

/// `φ(θ, ζ) = exp(jπ ζᵀ ν(θ))`.
pub fn phase_shift(displacement: &Position, theta: f64) -> C64 {
    if displacement.x == 0.0 && displacement.y == 0.0 {
        return C64::new(1.0, 0.0);
    }
    C64::from_polar(1.0, PI * displacement.dot(&direction(theta)))
}

/// `V_k(θ) = [v_k(θ_1), …, v_k(θ_L)]`.
pub fn steering_matrix(geom: &SubarrayGeometry, thetas: &[f64]) -> CMatrix {
    let cols: Vec<CVector> = thetas.iter().map(|&t| steering_vector(geom, t)).collect();
    CMatrix::from_columns(&cols)
}

pub fn steering_derivative_matrix(geom: &SubarrayGeometry, thetas: &[f64]) -> CMatrix {
    let cols: Vec<CVector> = thetas.iter().map(|&t| steering_derivative(geom, t)).collect();
    CMatrix::from_columns(&cols)
}

/// Co-subarray manifold `V_k* ∘ V_k` (M_k² × L); column `l` is
/// `vec(v_k(θ_l) v_k(θ_l)ᴴ)`.
pub fn co_subarray_manifold(geom: &SubarrayGeometry, thetas: &[f64]) -> CMatrix {
    let cols: Vec<CVector> = thetas
        .iter()
        .map(|&t| {
            let v = steering_vector(geom, t);
            vec_outer(&v, &v)
        })
        .collect();
    CMatrix::from_columns(&cols)
}

/// Co-array manifold: vertical stack of [`co_subarray_manifold`] over the
/// subarrays, `Σ M_k² × L`.
pub fn co_array_manifold(array: &ArrayGeometry, thetas: &[f64]) -> CMatrix {
    stack_rows(array, |g| co_subarray_manifold(g, thetas), thetas.len())
}

/// Column-wise `d/dθ_l` of [`co_array_manifold`].
pub fn co_manifold_derivative(array: &ArrayGeometry, thetas: &[f64]) -> CMatrix {
    stack_rows(
        array,
        |g| {
            let cols: Vec<CVector> = thetas
                .iter()
                .map(|&t| {
                    let v = steering_vector(g, t);
                    let dv = steering_derivative(g, t);
                    vec_outer(&dv, &v) + vec_outer(&v, &dv)
                })
                .collect();
            CMatrix::from_columns(&cols)
        },
        thetas.len(),
    )
}

/// `i = [vec(I_{M_1}); …; vec(I_{M_K})]`.
pub fn stacked_identity(array: &ArrayGeometry) -> CVector {
    let mut out = CVector::zeros(array.co_array_len());
    let mut row = 0;
    for g in array.subarrays() {
        let m = g.num_sensors();
        for i in 0..m {
            out[row + i * m + i] = C64::new(1.0, 0.0);
        }
        row += m * m;
    }
    out
}

fn stack_rows<F>(array: &ArrayGeometry, block: F, cols: usize) -> CMatrix
where
    F: Fn(&SubarrayGeometry) -> CMatrix,
{
    let mut out = CMatrix::zeros(array.co_array_len(), cols);
    let mut row = 0;
    for g in array.subarrays() {
        let b = block(g);
        out.view_mut((row, 0), (b.nrows(), cols)).copy_from(&b);
        row += b.nrows();
    }
    out
}
