//! Source and noise models, snapshot synthesis and covariance matrices.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{phase_shift, steering_matrix, ArrayGeometry, SubarrayGeometry};
use crate::linalg::{hermitian_defect, psd_factor, vec_cols, CMatrix, CVector, C64};
use crate::{Error, Result};

const PSD_TOL: f64 = 1e-10;

/// Far-field sources: DOAs (radians), powers `λ` and the zero-diagonal
/// Hermitian cross-correlation `F`, so that `P = diag(λ) + F`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    doas: Vec<f64>,
    powers: Vec<f64>,
    cross_corr: CMatrix,
}

impl SourceModel {
    pub fn new(doas: Vec<f64>, powers: Vec<f64>, cross_corr: CMatrix) -> Result<Self> {
        let l = doas.len();
        if l == 0 {
            return Err(Error::SourceModel("at least one source is required".into()));
        }
        if powers.len() != l || cross_corr.shape() != (l, l) {
            return Err(Error::Dimension(format!(
                "{} DOAs, {} powers, {}x{} cross-correlation",
                l,
                powers.len(),
                cross_corr.nrows(),
                cross_corr.ncols()
            )));
        }
        if let Some(p) = powers.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::SourceModel(format!("source power must be positive, got {p}")));
        }
        if doas.iter().any(|t| !t.is_finite()) {
            return Err(Error::SourceModel("non-finite DOA".into()));
        }
        if cross_corr.diagonal().iter().any(|z| *z != C64::new(0.0, 0.0)) {
            return Err(Error::SourceModel("cross-correlation must have a zero diagonal".into()));
        }
        if hermitian_defect(&cross_corr) > 1e-12 {
            return Err(Error::SourceModel("cross-correlation must be Hermitian".into()));
        }
        for i in 0..l {
            for j in 0..l {
                let bound = (powers[i] * powers[j]).sqrt();
                if cross_corr[(i, j)].norm() > bound * (1.0 + 1e-12) {
                    return Err(Error::SourceModel(format!(
                        "|F[{i},{j}]| = {} exceeds sqrt(λ_i λ_j) = {bound}",
                        cross_corr[(i, j)].norm()
                    )));
                }
            }
        }
        let model = Self {
            doas,
            powers,
            cross_corr,
        };
        psd_factor(&model.source_covariance(), PSD_TOL)?;
        Ok(model)
    }

    pub fn uncorrelated(doas: Vec<f64>, powers: Vec<f64>) -> Result<Self> {
        let l = doas.len();
        Self::new(doas, powers, CMatrix::zeros(l, l))
    }

    /// Equal-power uncorrelated sources.
    pub fn equal_power(doas: Vec<f64>, power: f64) -> Result<Self> {
        let l = doas.len();
        Self::uncorrelated(doas, vec![power; l])
    }

    /// Two sources with `P = λ [[1, ε], [ε*, 1]]`.
    pub fn correlated_pair(doas: [f64; 2], power: f64, epsilon: C64) -> Result<Self> {
        let mut f = CMatrix::zeros(2, 2);
        f[(0, 1)] = epsilon * power;
        f[(1, 0)] = epsilon.conj() * power;
        Self::new(doas.to_vec(), vec![power; 2], f)
    }

    pub fn doas(&self) -> &[f64] {
        &self.doas
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn cross_corr(&self) -> &CMatrix {
        &self.cross_corr
    }

    pub fn num_sources(&self) -> usize {
        self.doas.len()
    }

    pub fn is_uncorrelated(&self) -> bool {
        self.cross_corr.iter().all(|z| *z == C64::new(0.0, 0.0))
    }

    /// `P = Λ + F`.
    pub fn source_covariance(&self) -> CMatrix {
        let mut p = self.cross_corr.clone();
        for (i, &l) in self.powers.iter().enumerate() {
            p[(i, i)] = C64::new(l, 0.0);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    variance: f64,
}

impl NoiseModel {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::SourceModel(format!("noise variance must be positive, got {variance}")));
        }
        Ok(Self { variance })
    }

    /// `σ² = λ / 10^(snr/10)`.
    pub fn from_snr_db(snr_db: f64, source_power: f64) -> Result<Self> {
        Self::new(source_power / 10f64.powf(snr_db / 10.0))
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// `A_k = V_k Φ_k`, the steering matrix including the unknown displacement
/// phase of subarray `k`.
pub fn displaced_steering_matrix(geom: &SubarrayGeometry, doas: &[f64]) -> CMatrix {
    let mut a = steering_matrix(geom, doas);
    let zeta = geom.displacement();
    for (l, &t) in doas.iter().enumerate() {
        let phi = phase_shift(&zeta, t);
        a.column_mut(l).iter_mut().for_each(|z| *z *= phi);
    }
    a
}

/// `R_k = V_k Φ_k P Φ_kᴴ V_kᴴ + σ² I`; for uncorrelated sources the phases
/// cancel and `V_k Λ V_kᴴ + σ² I` is used directly.
pub fn true_covariance(geom: &SubarrayGeometry, model: &SourceModel, noise: &NoiseModel) -> CMatrix {
    let m = geom.num_sensors();
    let mut r = if model.is_uncorrelated() {
        let v = steering_matrix(geom, model.doas());
        let mut vl = v.clone();
        for (l, &p) in model.powers().iter().enumerate() {
            vl.column_mut(l).iter_mut().for_each(|z| *z *= p);
        }
        vl * v.adjoint()
    } else {
        let a = displaced_steering_matrix(geom, model.doas());
        &a * model.source_covariance() * a.adjoint()
    };
    for i in 0..m {
        r[(i, i)] += noise.variance();
    }
    crate::linalg::hermitian_part(&r)
}

/// Snapshot batches, one `N × M_k` matrix per subarray (row `t` is `x_k(t)ᵀ`).
///
/// With `shared_sources == false` each subarray sees its own independent
/// source realization with covariance `P`; otherwise one realization is
/// reused by all subarrays.
pub fn generate_snapshots(
    array: &ArrayGeometry,
    model: &SourceModel,
    noise: &NoiseModel,
    snapshots: usize,
    seed: u64,
    shared_sources: bool,
) -> Result<Vec<CMatrix>> {
    if snapshots == 0 {
        return Err(Error::Config("snapshot count must be at least 1".into()));
    }
    let factor = psd_factor(&model.source_covariance(), PSD_TOL)?;
    let l = model.num_sources();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    let noise_sd = noise.variance().sqrt();

    let draw = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        CMatrix::from_fn(rows, cols, |_, _| C64::new(unit.sample(rng), unit.sample(rng)))
    };
    // rows are s(t)ᵀ = (F z)ᵀ
    let shared = shared_sources.then(|| draw(snapshots, l, &mut rng) * factor.transpose());

    let mut out = Vec::with_capacity(array.num_subarrays());
    for geom in array.subarrays() {
        let s = match &shared {
            Some(s) => s.clone(),
            None => draw(snapshots, l, &mut rng) * factor.transpose(),
        };
        let a = displaced_steering_matrix(geom, model.doas());
        let n = draw(snapshots, geom.num_sensors(), &mut rng) * C64::new(noise_sd, 0.0);
        out.push(s * a.transpose() + n);
    }
    Ok(out)
}

/// `(1/N) Σ_t x(t) x(t)ᴴ` for a batch whose rows are snapshots.
pub fn sample_covariance(batch: &CMatrix) -> CMatrix {
    let n = batch.nrows().max(1) as f64;
    let r = batch.transpose() * batch.map(|z| z.conj()) / C64::new(n, 0.0);
    crate::linalg::hermitian_part(&r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    True,
    Sample { snapshots: usize },
}

/// Per-subarray covariance matrices `R_k` or `R̂_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    matrices: Vec<CMatrix>,
    kind: CovarianceKind,
}

const FORMAT_TAG: &str = "ncdoa-covariance 1";

impl CovarianceSet {
    pub fn new(matrices: Vec<CMatrix>, kind: CovarianceKind) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Dimension("covariance set is empty".into()));
        }
        for (k, m) in matrices.iter().enumerate() {
            if !m.is_square() || m.nrows() == 0 {
                return Err(Error::Dimension(format!("matrix {k} is not square")));
            }
            let scale = m.camax().max(1.0);
            if hermitian_defect(m) > 1e-12 * scale {
                return Err(Error::Dimension(format!("matrix {k} is not Hermitian")));
            }
        }
        if let CovarianceKind::Sample { snapshots: 0 } = kind {
            return Err(Error::Config("snapshot count must be at least 1".into()));
        }
        Ok(Self { matrices, kind })
    }

    pub fn true_covariances(array: &ArrayGeometry, model: &SourceModel, noise: &NoiseModel) -> Self {
        Self {
            matrices: array
                .subarrays()
                .iter()
                .map(|g| true_covariance(g, model, noise))
                .collect(),
            kind: CovarianceKind::True,
        }
    }

    pub fn from_snapshots(batches: &[CMatrix]) -> Result<Self> {
        let n = batches.first().map(|b| b.nrows()).unwrap_or(0);
        if batches.iter().any(|b| b.nrows() != n) {
            return Err(Error::Dimension("snapshot batches differ in length".into()));
        }
        Self::new(
            batches.iter().map(sample_covariance).collect(),
            CovarianceKind::Sample { snapshots: n },
        )
    }

    /// Simulate `N` snapshots and return the sample covariances.
    pub fn simulate(
        array: &ArrayGeometry,
        model: &SourceModel,
        noise: &NoiseModel,
        snapshots: usize,
        seed: u64,
        shared_sources: bool,
    ) -> Result<Self> {
        Self::from_snapshots(&generate_snapshots(array, model, noise, snapshots, seed, shared_sources)?)
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn snapshots(&self) -> Option<usize> {
        match self.kind {
            CovarianceKind::True => None,
            CovarianceKind::Sample { snapshots } => Some(snapshots),
        }
    }

    pub fn num_subarrays(&self) -> usize {
        self.matrices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.matrices.iter().map(|m| m.nrows()).collect()
    }

    /// Errors unless the set has one matrix per subarray with matching sizes.
    pub fn check_against(&self, array: &ArrayGeometry) -> Result<()> {
        let expect: Vec<usize> = array.subarrays().iter().map(|g| g.num_sensors()).collect();
        if self.sizes() != expect {
            return Err(Error::Dimension(format!(
                "covariance sizes {:?} do not match geometry {:?}",
                self.sizes(),
                expect
            )));
        }
        Ok(())
    }

    /// `r = [vec(R_1); …; vec(R_K)]`.
    pub fn stack_vectorize(&self) -> CVector {
        let total: usize = self.matrices.iter().map(|m| m.len()).sum();
        let mut out = CVector::zeros(total);
        let mut row = 0;
        for m in &self.matrices {
            let v = vec_cols(m);
            out.rows_mut(row, v.len()).copy_from(&v);
            row += v.len();
        }
        out
    }

    /// Text serialization. Values use the shortest representation that
    /// parses back to the same `f64`, so a round trip is bit-exact.
    ///
    /// ```text
    /// ncdoa-covariance 1
    /// subarrays K
    /// snapshots N        (or `snapshots true`)
    /// matrix M_k
    /// re im re im ...    (one line per row, M_k pairs)
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FORMAT_TAG}").unwrap();
        writeln!(s, "subarrays {}", self.matrices.len()).unwrap();
        match self.kind {
            CovarianceKind::True => writeln!(s, "snapshots true").unwrap(),
            CovarianceKind::Sample { snapshots } => writeln!(s, "snapshots {snapshots}").unwrap(),
        }
        for m in &self.matrices {
            writeln!(s, "matrix {}", m.nrows()).unwrap();
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols())
                    .map(|j| format!("{} {}", m[(i, j)].re, m[(i, j)].im))
                    .collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .map(|(i, l)| l.map(|s| (i + 1, s)))
            .filter(|res| res.as_ref().map(|(_, s)| !s.trim().is_empty()).unwrap_or(true));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some(Ok(v)) => Ok(v),
                Some(Err(e)) => Err(e.into()),
                None => Err(Error::Parse {
                    line: 0,
                    msg: format!("unexpected end of input, expected {what}"),
                }),
            }
        };
        let (ln, tag) = next("format tag")?;
        if tag.trim() != FORMAT_TAG {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected `{FORMAT_TAG}`"),
            });
        }
        let k: usize = keyword(next("subarray count")?, "subarrays")?;
        let (ln, snap) = next("snapshot count")?;
        let kind = match snap.trim().strip_prefix("snapshots ").map(str::trim) {
            Some("true") => CovarianceKind::True,
            Some(n) => CovarianceKind::Sample {
                snapshots: n.parse().map_err(|_| Error::Parse {
                    line: ln,
                    msg: format!("bad snapshot count `{n}`"),
                })?,
            },
            None => {
                return Err(Error::Parse {
                    line: ln,
                    msg: "expected `snapshots N` or `snapshots true`".into(),
                })
            }
        };
        let mut matrices = Vec::with_capacity(k);
        for _ in 0..k {
            let m: usize = keyword(next("matrix header")?, "matrix")?;
            let mut mat = CMatrix::zeros(m, m);
            for i in 0..m {
                let (ln, row) = next("matrix row")?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line: ln,
                        msg: e.to_string(),
                    })?;
                if vals.len() != 2 * m {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("expected {} numbers, found {}", 2 * m, vals.len()),
                    });
                }
                for j in 0..m {
                    mat[(i, j)] = C64::new(vals[2 * j], vals[2 * j + 1]);
                }
            }
            matrices.push(mat);
        }
        if let Some(Ok((ln, _))) = lines.next() {
            return Err(Error::Parse {
                line: ln,
                msg: "trailing content".into(),
            });
        }
        Self::new(matrices, kind)
    }
}

fn keyword<T: std::str::FromStr>((ln, line): (usize, String), key: &str) -> Result<T> {
    line.trim()
        .strip_prefix(key)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line: ln,
            msg: format!("expected `{key} <n>`"),
        })
}
