//! Flat TOML scenario files.
//!
//! Per-plant and per-BS quantities accept either a scalar (broadcast) or a
//! list of the right length. Optional keys fall back to documented defaults
//! and every fallback is recorded in [`Scenario::provenance`].

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::PlantModel;
use crate::error::{Error, Result};
use crate::model::{NetworkConfig, Point, Topology};

pub const DEFAULT_OUTAGE_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_PATHLOSS_EXPONENT: f64 = 3.0;
pub const DEFAULT_FEEDBACK_KAPPA: f64 = 10.0;
pub const DEFAULT_ETA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn expand(&self, field: &str, len: usize) -> Result<Vec<f64>> {
        match self {
            OneOrMany::One(v) => Ok(vec![*v; len]),
            OneOrMany::Many(v) if v.len() == len => Ok(v.clone()),
            OneOrMany::Many(v) => Err(Error::config(
                field,
                format!("expected a scalar or {len} entries, got {}", v.len()),
            )),
        }
    }
}

/// The on-disk key set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub num_bs: Option<usize>,
    pub num_plants: Option<usize>,
    pub num_antennas: Option<usize>,
    pub bs_positions_m: Option<Vec<Point>>,
    pub plant_positions_m: Option<Vec<Point>>,
    pub area_side_m: Option<f64>,
    pub placement_seed: Option<u64>,

    pub bandwidth_hz: Option<f64>,
    pub noise_psd_dbm_per_hz: Option<f64>,
    pub pathloss_ref_db: Option<f64>,
    pub pathloss_ref_distance_m: Option<f64>,
    pub pathloss_exponent: Option<f64>,
    pub uplink_power_cap_w: Option<OneOrMany>,
    pub downlink_power_budget_w: Option<OneOrMany>,
    pub bits_uplink: Option<OneOrMany>,
    pub bits_compute: Option<OneOrMany>,
    pub bits_downlink: Option<OneOrMany>,
    pub cycles_per_bit: Option<OneOrMany>,
    pub cpu_freq_hz: Option<OneOrMany>,
    pub outage_threshold: Option<f64>,
    pub rng_seed: Option<u64>,
    pub independent_downlink: Option<bool>,

    pub plant_a: Option<Vec<Vec<f64>>>,
    pub plant_b: Option<Vec<Vec<f64>>>,
    pub plant_q: Option<Vec<Vec<f64>>>,
    pub plant_r: Option<Vec<Vec<f64>>>,
    pub plant_eta: Option<f64>,
    pub feedback_kappa: Option<f64>,
    pub plant_feedback_gain: Option<Vec<Vec<f64>>>,
}

/// How plant positions were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Placement {
    Explicit,
    /// Uniform over `[0, side]²`. Without a fixed seed the layout is drawn
    /// from the channel seed, so every seed sees a fresh drop.
    Uniform { side_m: f64, seed: Option<u64> },
}

/// Everything needed to instantiate one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: Topology,
    pub network: NetworkConfig,
    pub plant: PlantModel,
    pub placement: Placement,
    pub provenance: Vec<String>,
}

fn require<T: Clone>(v: &Option<T>, field: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::config(field, "missing mandatory key"))
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::config(field, "must be a nonempty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

pub fn uniform_positions(count: usize, side_m: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_9A_CE);
    (0..count)
        .map(|_| [rng.random::<f64>() * side_m, rng.random::<f64>() * side_m])
        .collect()
}

impl RawScenario {
    pub fn into_scenario(self) -> Result<Scenario> {
        let mut provenance = Vec::new();
        let mut default = |field: &str, value: String| {
            log::info!("{field} not set, using default {value}");
            provenance.push(format!("{field} = {value} (default)"));
        };

        let num_bs = require(&self.num_bs, "num_bs")?;
        if num_bs == 0 {
            return Err(Error::config("num_bs", "must be at least 1"));
        }
        let num_plants = require(&self.num_plants, "num_plants")?;
        if num_plants == 0 {
            return Err(Error::config("num_plants", "must be at least 1"));
        }
        let num_antennas = require(&self.num_antennas, "num_antennas")?;
        let bs_positions = require(&self.bs_positions_m, "bs_positions_m")?;
        if bs_positions.len() != num_bs {
            return Err(Error::config(
                "bs_positions_m",
                format!("expected {num_bs} entries, got {}", bs_positions.len()),
            ));
        }
        let rng_seed = match self.rng_seed {
            Some(s) => s,
            None => {
                default("rng_seed", "0".into());
                0
            }
        };
        let (plant_positions, placement) = match (&self.plant_positions_m, self.area_side_m) {
            (Some(p), _) => (p.clone(), Placement::Explicit),
            (None, Some(side)) => {
                if !(side.is_finite() && side > 0.0) {
                    return Err(Error::config("area_side_m", "must be finite and > 0"));
                }
                let seed = self.placement_seed;
                (
                    uniform_positions(num_plants, side, seed.unwrap_or(rng_seed)),
                    Placement::Uniform { side_m: side, seed },
                )
            }
            (None, None) => {
                return Err(Error::config(
                    "plant_positions_m",
                    "missing; give plant_positions_m or area_side_m",
                ))
            }
        };
        let topology = Topology {
            num_bs,
            num_plants,
            num_antennas,
            bs_positions,
            plant_positions,
        };
        topology.validate()?;

        let per_plant = |v: &Option<OneOrMany>, field: &str| -> Result<Vec<f64>> {
            require(v, field)?.expand(field, num_plants)
        };
        let per_bs = |v: &Option<OneOrMany>, field: &str| -> Result<Vec<f64>> {
            require(v, field)?.expand(field, num_bs)
        };
        let pathloss_exponent = self.pathloss_exponent.unwrap_or_else(|| {
            default("pathloss_exponent", DEFAULT_PATHLOSS_EXPONENT.to_string());
            DEFAULT_PATHLOSS_EXPONENT
        });
        let outage_threshold = self.outage_threshold.unwrap_or_else(|| {
            default("outage_threshold", DEFAULT_OUTAGE_THRESHOLD.to_string());
            DEFAULT_OUTAGE_THRESHOLD
        });
        let independent_downlink = self.independent_downlink.unwrap_or_else(|| {
            default("independent_downlink", "false".into());
            false
        });
        let network = NetworkConfig {
            bandwidth_hz: require(&self.bandwidth_hz, "bandwidth_hz")?,
            noise_psd_dbm_per_hz: require(&self.noise_psd_dbm_per_hz, "noise_psd_dbm_per_hz")?,
            pathloss_ref_db: require(&self.pathloss_ref_db, "pathloss_ref_db")?,
            pathloss_ref_distance_m: require(&self.pathloss_ref_distance_m, "pathloss_ref_distance_m")?,
            pathloss_exponent,
            uplink_power_cap_w: per_plant(&self.uplink_power_cap_w, "uplink_power_cap_w")?,
            downlink_power_budget_w: per_bs(&self.downlink_power_budget_w, "downlink_power_budget_w")?,
            bits_uplink: per_plant(&self.bits_uplink, "bits_uplink")?,
            bits_compute: per_plant(&self.bits_compute, "bits_compute")?,
            bits_downlink: per_plant(&self.bits_downlink, "bits_downlink")?,
            cycles_per_bit: per_plant(&self.cycles_per_bit, "cycles_per_bit")?,
            cpu_freq_hz: per_bs(&self.cpu_freq_hz, "cpu_freq_hz")?,
            outage_threshold,
            rng_seed,
            independent_downlink,
        };
        network.validate(&topology)?;

        let mut plant_matrix = |v: &Option<Vec<Vec<f64>>>, field: &str, fallback: DMatrix<f64>| {
            match v {
                Some(rows) => matrix(field, rows),
                None => {
                    default(field, format!("{:?}", fallback.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()));
                    Ok(fallback)
                }
            }
        };
        let a = plant_matrix(&self.plant_a, "plant_a", DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]))?;
        let dim = a.nrows();
        let b = plant_matrix(&self.plant_b, "plant_b", DMatrix::identity(dim, dim))?;
        let q = plant_matrix(&self.plant_q, "plant_q", DMatrix::identity(dim, dim))?;
        let r = plant_matrix(&self.plant_r, "plant_r", DMatrix::identity(dim, dim))?;
        let eta = self.plant_eta.unwrap_or_else(|| {
            default("plant_eta", DEFAULT_ETA.to_string());
            DEFAULT_ETA
        });
        let plant = match (&self.plant_feedback_gain, self.feedback_kappa) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "plant_feedback_gain",
                    "give either plant_feedback_gain or feedback_kappa, not both",
                ))
            }
            (Some(k), None) => PlantModel::new(a, b, q, r, matrix("plant_feedback_gain", k)?, eta)?,
            (None, kappa) => {
                let kappa = kappa.unwrap_or_else(|| {
                    default("feedback_kappa", DEFAULT_FEEDBACK_KAPPA.to_string());
                    DEFAULT_FEEDBACK_KAPPA
                });
                PlantModel::with_kappa(a, b, q, r, eta, kappa)?
            }
        };

        Ok(Scenario {
            topology,
            network,
            plant,
            placement,
            provenance,
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    raw.into_scenario()
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

pub fn load_config(path: &Path) -> Result<(Topology, NetworkConfig)> {
    let s = load_scenario(path)?;
    Ok((s.topology, s.network))
}

impl Scenario {
    /// Copy driven by another channel seed; uniform drops without a fixed
    /// placement seed are redrawn from it.
    pub fn with_seed(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.network.rng_seed = seed;
        if let Placement::Uniform { side_m, seed: None } = s.placement {
            s.topology.plant_positions = uniform_positions(s.topology.num_plants, side_m, seed);
        }
        s
    }

    pub fn with_downlink_power(&self, watts: f64) -> Scenario {
        let mut s = self.clone();
        s.network.downlink_power_budget_w = vec![watts; s.topology.num_bs];
        s
    }

    pub fn with_cpu_freq(&self, hz: f64) -> Scenario {
        let mut s = self.clone();
        s.network.cpu_freq_hz = vec![hz; s.topology.num_bs];
        s
    }
}
