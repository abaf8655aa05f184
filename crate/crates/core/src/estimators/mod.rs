//! DOA estimators operating on per-subarray covariances only.
//!
//! [`spice`] fits a sparse grid spectrum; [`mle`] refines its peaks by local
//! maximum-likelihood search under the uncorrelated or correlated source
//! model.

pub mod mle;
pub mod optim;
pub mod peaks;
pub mod spice;

pub use mle::{mle_correlated, mle_uncorrelated, nll_correlated, nll_uncorrelated, MleInit, MleOptions, MleResult};
pub use peaks::pick_peaks;
pub use spice::{spice_solve, Spice, SpiceOptions, SpiceResult};

use serde::{Deserialize, Serialize};

use crate::geometry::ArrayGeometry;
use crate::signal::CovarianceSet;
use crate::{Error, Result};

/// Uniform DOA grid. Stored in degrees (as specified) and radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    degrees: Vec<f64>,
    radians: Vec<f64>,
}

impl Grid {
    /// `lo, lo + step, …` up to `hi` (inclusive within rounding).
    pub fn uniform_deg(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(Error::Grid(format!("invalid grid [{lo}, {hi}] step {step}")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        let degrees: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        Ok(Self {
            radians: degrees.iter().map(|d| d.to_radians()).collect(),
            degrees,
        })
    }

    /// Grid on the open field of view `(−fov, fov)`.
    pub fn open_fov(fov_deg: f64, step: f64) -> Result<Self> {
        Self::uniform_deg(-fov_deg + step, fov_deg - step, step)
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn radians(&self) -> &[f64] {
        &self.radians
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }
}

impl Default for Grid {
    /// `−89.9°, −89.8°, …, 89.9°` (1799 points).
    fn default() -> Self {
        Self::open_fov(90.0, 0.1).expect("default grid is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Spice,
    Mle,
    MleCorrelated,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Spice => "spice",
            Self::Mle => "mle",
            Self::MleCorrelated => "mle_correlated",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spice" => Ok(Self::Spice),
            "mle" => Ok(Self::Mle),
            "mle_correlated" => Ok(Self::MleCorrelated),
            _ => Err(Error::Config(format!("unknown estimator `{s}`"))),
        }
    }
}

/// MLE starting point from a SPICE fit: the `l` largest peaks, each with
/// the power of its whole lobe (an off-grid source spreads over several
/// points), and powers and noise rescaled by `c = Σ_k tr(R̃_k⁻¹R̂_k) / Σ_k M_k`, the likelihood
/// optimal scaling of the SPICE model covariance.
pub fn mle_init_from_spice(spice: &Spice, res: &SpiceResult, total_sensors: usize, l: usize) -> MleInit {
    init_at(spice, res, total_sensors, &peaks::pick_peak_indices(&res.powers, l))
}

/// Starting points built from SPICE peaks: the first is
/// [`mle_init_from_spice`]; then every swap of one of its peaks for one of
/// the next `spare` tallest peaks. At low SNR a spurious peak often
/// outranks a true one, and a single start then settles in the wrong basin.
pub fn mle_inits_from_spice(spice: &Spice, res: &SpiceResult, total_sensors: usize, l: usize, spare: usize) -> Vec<MleInit> {
    let base = peaks::pick_peak_indices(&res.powers, l);
    let mut out = vec![init_at(spice, res, total_sensors, &base)];
    let mut ranked = peaks::local_maxima(&res.powers);
    ranked.sort_by(|a, b| res.powers[*b].total_cmp(&res.powers[*a]).then(a.cmp(b)));
    let extra: Vec<usize> = ranked.into_iter().filter(|i| !base.contains(i)).take(spare).collect();
    for &e in &extra {
        for j in 0..base.len() {
            let mut idx = base.clone();
            idx[j] = e;
            idx.sort_unstable();
            out.push(init_at(spice, res, total_sensors, &idx));
        }
    }
    out
}

fn init_at(spice: &Spice, res: &SpiceResult, total_sensors: usize, idx: &[usize]) -> MleInit {
    let scale = res.final_objective() / total_sensors as f64;
    let pmax = res.powers.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = 1e-3 * pmax.max(f64::MIN_POSITIVE);
    MleInit {
        doas: idx.iter().map(|&i| spice.grid().radians()[i]).collect(),
        powers: idx.iter().map(|&i| peaks::lobe_mass(&res.powers, i).max(floor) * scale).collect(),
        // SPICE can drive the noise to ~0 at high SNR; the likelihood needs
        // a noise floor it can evaluate
        noise_var: res.noise_var.max(1e-3 * floor) * scale,
    }
}

/// Output of one estimator on one covariance set.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub kind: EstimatorKind,
    /// Sorted ascending, radians.
    pub doas: Vec<f64>,
    pub converged: bool,
}

/// SPICE followed by the requested MLE refinements, sharing one SPICE fit.
/// A non-converged MLE falls back to the SPICE peaks and is flagged.
///
/// The uncorrelated MLE runs from every start of [`mle_inits_from_spice`]
/// and keeps the converged fit with the lowest likelihood cost; the
/// correlated MLE starts from the start that won there.
#[derive(Debug, Clone)]
pub struct Pipeline {
    spice: Spice,
    total_sensors: usize,
    pub spice_opts: SpiceOptions,
    pub mle_opts: MleOptions,
    /// Runner-up SPICE peaks tried as MLE starts; 0 gives a single start.
    pub spare_peaks: usize,
}

impl Pipeline {
    pub fn new(array: &ArrayGeometry, grid: &Grid) -> Self {
        Self {
            spice: Spice::new(array, grid),
            total_sensors: array.total_sensors(),
            spice_opts: SpiceOptions::default(),
            mle_opts: MleOptions::default(),
            spare_peaks: 2,
        }
    }

    pub fn spice(&self) -> &Spice {
        &self.spice
    }

    pub fn run(
        &self,
        array: &ArrayGeometry,
        covs: &CovarianceSet,
        snapshots: f64,
        sources: usize,
        kinds: &[EstimatorKind],
    ) -> Result<Vec<Estimate>> {
        Ok(self.run_with_spectrum(array, covs, snapshots, sources, kinds)?.1)
    }

    /// As [`Pipeline::run`], also returning the SPICE fit.
    pub fn run_with_spectrum(
        &self,
        array: &ArrayGeometry,
        covs: &CovarianceSet,
        snapshots: f64,
        sources: usize,
        kinds: &[EstimatorKind],
    ) -> Result<(SpiceResult, Vec<Estimate>)> {
        if self.spice.grid().len() <= sources {
            return Err(Error::Grid(format!(
                "grid of {} points cannot hold {sources} sources",
                self.spice.grid().len()
            )));
        }
        let sp = self.spice.solve(covs, &self.spice_opts)?;
        let spare = if kinds.iter().any(|k| *k != EstimatorKind::Spice) { self.spare_peaks } else { 0 };
        let inits = mle_inits_from_spice(&self.spice, &sp, self.total_sensors, sources, spare);
        let peaks_est = |kind| Estimate {
            kind,
            doas: inits[0].doas.clone(),
            converged: false,
        };
        // best uncorrelated fit over the starts, with the start it came from
        let mut best: Option<(usize, MleResult)> = None;
        if kinds.iter().any(|k| *k != EstimatorKind::Spice) {
            for (i, init) in inits.iter().enumerate() {
                match mle_uncorrelated(array, covs, snapshots, init, &self.mle_opts) {
                    Ok(r) if r.converged => {
                        if best.as_ref().is_none_or(|(_, b)| r.nll < b.nll) {
                            best = Some((i, r));
                        }
                    }
                    Ok(_) | Err(Error::SingularCovariance { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        let mut out = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let est = match kind {
                EstimatorKind::Spice => Estimate {
                    converged: sp.converged,
                    ..peaks_est(kind)
                },
                EstimatorKind::Mle => match &best {
                    Some((_, r)) => sorted_estimate(kind, &r.doas),
                    None => {
                        log::debug!("mle did not converge from any start; reporting SPICE peaks");
                        peaks_est(kind)
                    }
                },
                EstimatorKind::MleCorrelated => {
                    let start = &inits[best.as_ref().map_or(0, |(i, _)| *i)];
                    match mle_correlated(array, covs, snapshots, start, &self.mle_opts) {
                        Ok(r) if r.converged => sorted_estimate(kind, &r.doas),
                        Ok(_) | Err(Error::SingularCovariance { .. }) => {
                            log::debug!("mle_correlated did not converge; reporting SPICE peaks");
                            peaks_est(kind)
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            out.push(est);
        }
        Ok((sp, out))
    }
}

fn sorted_estimate(kind: EstimatorKind, doas: &[f64]) -> Estimate {
    let mut d = doas.to_vec();
    d.sort_by(f64::total_cmp);
    Estimate {
        kind,
        doas: d,
        converged: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deg;
    use crate::signal::{NoiseModel, SourceModel};

    #[test]
    fn default_grid_has_1799_points() {
        let g = Grid::default();
        assert_eq!(g.len(), 1799);
        assert!((g.degrees()[0] + 89.9).abs() < 1e-9);
        assert!((g.degrees()[1798] - 89.9).abs() < 1e-9);
        assert!(g.degrees().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::uniform_deg(0.0, 1.0, 0.0).is_err());
        assert!(Grid::uniform_deg(1.0, 0.0, 0.1).is_err());
        assert_eq!(Grid::uniform_deg(-1.0, 1.0, 0.5).unwrap().len(), 5);
    }

    #[test]
    fn estimator_names_round_trip() {
        for k in [EstimatorKind::Spice, EstimatorKind::Mle, EstimatorKind::MleCorrelated] {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("music".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn pipeline_on_reference_scenario() {
        let arr = crate::experiment::presets::reference_array();
        let truth = [deg(-11.4), deg(-1.1)];
        let model = SourceModel::equal_power(truth.to_vec(), 1.0).unwrap();
        let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::from_snr_db(20.0, 1.0).unwrap(), 50, 8, false).unwrap();
        let pipe = Pipeline::new(&arr, &Grid::default());
        let out = pipe
            .run(&arr, &covs, 50.0, 2, &[EstimatorKind::Spice, EstimatorKind::Mle, EstimatorKind::MleCorrelated])
            .unwrap();
        for est in &out {
            assert_eq!(est.doas.len(), 2);
            for (a, b) in est.doas.iter().zip(&truth) {
                assert!((a - b).abs().to_degrees() < 1.5, "{:?}: {}", est.kind, a.to_degrees());
            }
        }
        // the correlated model nests the uncorrelated one
        let sp = pipe.spice().solve(&covs, &pipe.spice_opts).unwrap();
        let init = mle_init_from_spice(pipe.spice(), &sp, arr.total_sensors(), 2);
        let unc = mle_uncorrelated(&arr, &covs, 50.0, &init, &pipe.mle_opts).unwrap();
        let cor = mle_correlated(&arr, &covs, 50.0, &init, &pipe.mle_opts).unwrap();
        assert!(cor.nll <= unc.nll + 1e-6 * unc.nll.abs(), "{} > {}", cor.nll, unc.nll);
    }

    #[test]
    fn extra_starts_swap_one_peak_each() {
        let arr = crate::experiment::presets::reference_array();
        let model = SourceModel::equal_power(vec![deg(-11.4), deg(-1.1)], 1.0).unwrap();
        let covs = CovarianceSet::simulate(&arr, &model, &NoiseModel::from_snr_db(-6.0, 1.0).unwrap(), 50, 3, false).unwrap();
        let grid = Grid::default();
        let sp = Spice::new(&arr, &grid);
        let res = sp.solve(&covs, &SpiceOptions::default()).unwrap();
        let inits = mle_inits_from_spice(&sp, &res, arr.total_sensors(), 2, 2);
        assert_eq!(inits.len(), 5);
        assert_eq!(inits[0].doas, mle_init_from_spice(&sp, &res, arr.total_sensors(), 2).doas);
        for init in &inits[1..] {
            let shared = init.doas.iter().filter(|d| inits[0].doas.contains(d)).count();
            assert_eq!(shared, 1);
        }
        // the pipeline keeps the best start, so it never does worse than the first
        let opts = MleOptions::default();
        let first = mle_uncorrelated(&arr, &covs, 50.0, &inits[0], &opts).unwrap();
        let est = Pipeline::new(&arr, &grid).run(&arr, &covs, 50.0, 2, &[EstimatorKind::Mle]).unwrap();
        let chosen = MleInit { doas: est[0].doas.clone(), ..inits[0].clone() };
        let again = mle_uncorrelated(&arr, &covs, 50.0, &chosen, &opts).unwrap();
        assert!(again.nll <= first.nll + 1e-6 * first.nll.abs(), "{} > {}", again.nll, first.nll);
    }
}
