//! Scenario files.
//!
//! One scenario per TOML file, flat `key = value` pairs:
//!
//! | key              | type                         | meaning                                   |
//! |------------------|------------------------------|-------------------------------------------|
//! | `name`           | string                       | label                                     |
//! | `offsets`        | `[[[x, y], ...], ...]`       | sensor offsets per subarray, first `[0,0]` |
//! | `displacements`  | `[[x, y], ...]`              | reference-sensor positions, first `[0,0]`  |
//! | `doas_deg`       | list of numbers              | source DOAs (omit when `sources` is set)  |
//! | `power`          | number                       | common source power (default 1)           |
//! | `epsilon`        | number or list               | correlation of a source pair (default 0)  |
//! | `snr_db`         | number or list               | SNR, `10 log10(power/σ²)`                 |
//! | `snapshots`      | integer or list              | `N`                                       |
//! | `sources`        | integer or list              | `L`, taking the first `L` of `doa_pool_deg` |
//! | `doa_pool_deg`   | list of numbers              | DOA pool for `sources`                    |
//! | `trials`         | integer                      | Monte Carlo trials per sweep point        |
//! | `seed`           | integer                      | master seed                               |
//! | `grid_step_deg`  | number                       | SPICE grid spacing (default 0.1)          |
//! | `fov_deg`        | number                       | grid spans `(−fov, fov)` (default 90)     |
//! | `estimators`     | list of `spice`, `mle`, `mle_correlated` |                               |
//! | `shared_sources` | bool                         | one source realization for all subarrays  |
//!
//! At most one of `snr_db`, `snapshots`, `sources`, `epsilon` may hold more
//! than one value; that key is the sweep axis.

use serde::{Deserialize, Serialize};

use crate::estimators::{EstimatorKind, Grid};
use crate::geometry::{ArrayGeometry, Position, SubarrayGeometry};
use crate::signal::{NoiseModel, SourceModel};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

fn default_power() -> f64 {
    1.0
}
fn default_epsilon() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}
fn default_step() -> f64 {
    0.1
}
fn default_fov() -> f64 {
    90.0
}
fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub offsets: Vec<Vec<[f64; 2]>>,
    pub displacements: Vec<[f64; 2]>,
    #[serde(default)]
    pub doas_deg: Option<Vec<f64>>,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: OneOrMany<f64>,
    pub snr_db: OneOrMany<f64>,
    pub snapshots: OneOrMany<usize>,
    #[serde(default)]
    pub sources: Option<OneOrMany<usize>>,
    #[serde(default)]
    pub doa_pool_deg: Option<Vec<f64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step")]
    pub grid_step_deg: f64,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default)]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub shared_sources: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SnrDb,
    Snapshots,
    Sources,
    Epsilon,
    /// Nothing varies; a single point.
    None,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SnrDb => "snr_db",
            Self::Snapshots => "snapshots",
            Self::Sources => "sources",
            Self::Epsilon => "epsilon",
            Self::None => "none",
        }
    }
}

/// One fully specified simulation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Value of the sweep axis (or the SNR when nothing is swept).
    pub value: f64,
    /// DOAs, radians.
    pub doas: Vec<f64>,
    pub power: f64,
    pub epsilon: f64,
    pub snr_db: f64,
    pub snapshots: usize,
}

impl SweepPoint {
    pub fn source_model(&self) -> Result<SourceModel> {
        if self.epsilon == 0.0 {
            SourceModel::equal_power(self.doas.clone(), self.power)
        } else if self.doas.len() == 2 {
            SourceModel::correlated_pair([self.doas[0], self.doas[1]], self.power, C64::new(self.epsilon, 0.0))
        } else {
            Err(Error::Config(format!(
                "epsilon = {} needs exactly two sources, got {}",
                self.epsilon,
                self.doas.len()
            )))
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::from_snr_db(self.snr_db, self.power)
    }
}

/// Validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub array: ArrayGeometry,
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub trials: usize,
    pub seed: u64,
    pub grid: Grid,
    pub estimators: Vec<EstimatorKind>,
    pub shared_sources: bool,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        if self.offsets.len() != self.displacements.len() {
            return Err(Error::Config(format!(
                "{} offset lists but {} displacements",
                self.offsets.len(),
                self.displacements.len()
            )));
        }
        let subs = self
            .offsets
            .iter()
            .zip(&self.displacements)
            .map(|(offs, d)| {
                SubarrayGeometry::new(
                    offs.iter().map(|p| Position::new(p[0], p[1])).collect(),
                    Position::new(d[0], d[1]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ArrayGeometry::new(subs)
    }

    pub fn build(&self) -> Result<Scenario> {
        let array = self.geometry()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::Config("power must be positive".into()));
        }
        let grid = Grid::open_fov(self.fov_deg, self.grid_step_deg)?;
        let snrs = self.snr_db.values();
        let ns = self.snapshots.values();
        let eps = self.epsilon.values();
        let ls = self.sources.as_ref().map(|s| s.values());
        for (key, len) in [
            ("snr_db", snrs.len()),
            ("snapshots", ns.len()),
            ("epsilon", eps.len()),
            ("sources", ls.as_ref().map_or(1, |v| v.len())),
        ] {
            if len == 0 {
                return Err(Error::Config(format!("`{key}` is empty")));
            }
        }
        let swept: Vec<SweepAxis> = [
            (snrs.len() > 1, SweepAxis::SnrDb),
            (ns.len() > 1, SweepAxis::Snapshots),
            (ls.as_ref().is_some_and(|v| v.len() > 1), SweepAxis::Sources),
            (eps.len() > 1, SweepAxis::Epsilon),
        ]
        .into_iter()
        .filter_map(|(on, a)| on.then_some(a))
        .collect();
        if swept.len() > 1 {
            let names: Vec<_> = swept.iter().map(|a| a.name()).collect();
            return Err(Error::Config(format!("only one key may be swept, found {}", names.join(", "))));
        }
        let axis = swept.first().copied().unwrap_or(SweepAxis::None);

        let doas_for = |l: Option<usize>| -> Result<Vec<f64>> {
            let deg = match (l, &self.doas_deg, &self.doa_pool_deg) {
                (Some(l), _, Some(pool)) => {
                    if l == 0 || l > pool.len() {
                        return Err(Error::Config(format!("sources = {l} but the pool has {} DOAs", pool.len())));
                    }
                    pool[..l].to_vec()
                }
                (Some(_), _, None) => return Err(Error::Config("`sources` needs `doa_pool_deg`".into())),
                (None, Some(d), _) => d.clone(),
                (None, None, _) => return Err(Error::Config("either `doas_deg` or `sources` is required".into())),
            };
            if deg.is_empty() {
                return Err(Error::Config("no source DOAs".into()));
            }
            if let Some(d) = deg.iter().find(|d| !(d.abs() < self.fov_deg)) {
                return Err(Error::Config(format!("DOA {d}° is outside the field of view")));
            }
            Ok(deg.into_iter().map(f64::to_radians).collect())
        };

        let ls_opt: Vec<Option<usize>> = match &ls {
            Some(v) => v.iter().map(|&l| Some(l)).collect(),
            None => vec![None],
        };
        let mut points = Vec::new();
        for &snr in &snrs {
            for &n in &ns {
                if n == 0 {
                    return Err(Error::Config("snapshots must be at least 1".into()));
                }
                for &l in &ls_opt {
                    for &e in &eps {
                        let doas = doas_for(l)?;
                        let value = match axis {
                            SweepAxis::SnrDb | SweepAxis::None => snr,
                            SweepAxis::Snapshots => n as f64,
                            SweepAxis::Sources => doas.len() as f64,
                            SweepAxis::Epsilon => e,
                        };
                        let p = SweepPoint {
                            value,
                            doas,
                            power: self.power,
                            epsilon: e,
                            snr_db: snr,
                            snapshots: n,
                        };
                        p.source_model()?;
                        p.noise_model()?;
                        if grid.len() <= p.doas.len() {
                            return Err(Error::Config("grid has fewer points than sources".into()));
                        }
                        points.push(p);
                    }
                }
            }
        }
        Ok(Scenario {
            name: self.name.clone(),
            array,
            axis,
            points,
            trials: self.trials,
            seed: self.seed,
            grid,
            estimators: self.estimators.clone(),
            shared_sources: self.shared_sources,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::presets::preset_source;

    const MINIMAL: &str = r#"
offsets = [[[0, 0], [1, 0]], [[0, 0], [2.5, 0]]]
displacements = [[0, 0], [3, 4]]
doas_deg = [10.0]
snr_db = [0.0, 10.0]
snapshots = 20
"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let sc = cfg.build().unwrap();
        assert_eq!(sc.axis, SweepAxis::SnrDb);
        assert_eq!(sc.points.len(), 2);
        assert_eq!(sc.trials, 100);
        assert_eq!(sc.grid.len(), 1799);
        assert!(sc.estimators.is_empty());
        assert_eq!(sc.points[1].value, 10.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let two_axes = MINIMAL.replace("snapshots = 20", "snapshots = [20, 30]");
        assert!(matches!(ScenarioConfig::from_toml(&two_axes).unwrap().build(), Err(Error::Config(_))));
        let unknown = format!("{MINIMAL}\nfoo = 1\n");
        assert!(ScenarioConfig::from_toml(&unknown).is_err());
        let outside = MINIMAL.replace("[10.0]", "[95.0]");
        assert!(ScenarioConfig::from_toml(&outside).unwrap().build().is_err());
        let eps3 = MINIMAL.replace("snr_db = [0.0, 10.0]", "snr_db = 0.0\nepsilon = 0.5");
        assert!(ScenarioConfig::from_toml(&eps3).unwrap().build().is_err());
        let bad_first = MINIMAL.replace("[[0, 0], [1, 0]]", "[[1, 0], [0, 0]]");
        assert!(ScenarioConfig::from_toml(&bad_first).unwrap().build().is_err());
        let zero_trials = format!("{MINIMAL}\ntrials = 0\n");
        assert!(ScenarioConfig::from_toml(&zero_trials).unwrap().build().is_err());
        let bad_est = format!("{MINIMAL}\nestimators = [\"music\"]\n");
        assert!(ScenarioConfig::from_toml(&bad_est).is_err());
    }

    #[test]
    fn source_sweep_consumes_pool_in_order() {
        let cfg = ScenarioConfig::from_toml(preset_source("fig6").unwrap()).unwrap();
        let sc = cfg.build().unwrap();
        assert_eq!(sc.axis, SweepAxis::Sources);
        assert_eq!(sc.points.len(), 8);
        let last: Vec<f64> = sc.points[7].doas.iter().map(|d| d.to_degrees()).collect();
        let pool = [15.0, -15.0, 30.0, -30.0, 45.0, -45.0, 60.0, -60.0];
        for (a, b) in last.iter().zip(pool) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(sc.points[2].doas.len(), 3);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::from_toml(preset_source("fig7").unwrap()).unwrap();
        let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
        let sc = cfg.build().unwrap();
        assert_eq!(sc.axis, SweepAxis::Epsilon);
        assert!(sc.points[3].source_model().is_ok());
    }
}
