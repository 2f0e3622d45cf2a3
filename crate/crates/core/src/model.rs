//! Scenario description, channel realizations and matched-filter gains.

use std::io::Write;
use std::path::Path;

use nalgebra::{Complex, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub num_bs: usize,
    pub num_plants: usize,
    pub num_antennas: usize,
    pub bs_positions: Vec<Point>,
    pub plant_positions: Vec<Point>,
}

impl Topology {
    pub fn new(
        num_antennas: usize,
        bs_positions: Vec<Point>,
        plant_positions: Vec<Point>,
    ) -> Result<Self> {
        let topo = Topology {
            num_bs: bs_positions.len(),
            num_plants: plant_positions.len(),
            num_antennas,
            bs_positions,
            plant_positions,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bs == 0 {
            return Err(Error::config("num_bs", "must be at least 1"));
        }
        if self.num_plants == 0 {
            return Err(Error::config("num_plants", "must be at least 1"));
        }
        if self.num_antennas == 0 {
            return Err(Error::config("num_antennas", "must be at least 1"));
        }
        if self.bs_positions.len() != self.num_bs {
            return Err(Error::config(
                "bs_positions_m",
                format!("expected {} entries, got {}", self.num_bs, self.bs_positions.len()),
            ));
        }
        if self.plant_positions.len() != self.num_plants {
            return Err(Error::config(
                "plant_positions_m",
                format!(
                    "expected {} entries, got {}",
                    self.num_plants,
                    self.plant_positions.len()
                ),
            ));
        }
        let finite = |p: &Point| p[0].is_finite() && p[1].is_finite();
        if !self.bs_positions.iter().all(finite) {
            return Err(Error::config("bs_positions_m", "coordinates must be finite"));
        }
        if !self.plant_positions.iter().all(finite) {
            return Err(Error::config("plant_positions_m", "coordinates must be finite"));
        }
        if self.num_antennas < self.num_plants {
            log::warn!(
                "num_antennas ({}) is below num_plants ({}); matched filtering will be interference-limited",
                self.num_antennas,
                self.num_plants
            );
        }
        Ok(())
    }

    pub fn distance(&self, bs: usize, plant: usize) -> f64 {
        let a = self.bs_positions[bs];
        let b = self.plant_positions[plant];
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Closest BS to `plant`; ties go to the lower BS index.
    pub fn nearest_bs(&self, plant: usize) -> usize {
        let mut best = 0;
        let mut best_d = self.distance(0, plant);
        for m in 1..self.num_bs {
            let d = self.distance(m, plant);
            if d < best_d {
                best = m;
                best_d = d;
            }
        }
        best
    }
}

/// Radio, traffic and compute constants. Per-plant and per-BS quantities
/// are stored as vectors of length K and M respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_ref_distance_m: f64,
    pub pathloss_exponent: f64,
    pub uplink_power_cap_w: Vec<f64>,
    pub downlink_power_budget_w: Vec<f64>,
    pub bits_uplink: Vec<f64>,
    pub bits_compute: Vec<f64>,
    pub bits_downlink: Vec<f64>,
    pub cycles_per_bit: Vec<f64>,
    pub cpu_freq_hz: Vec<f64>,
    pub outage_threshold: f64,
    pub rng_seed: u64,
    pub independent_downlink: bool,
}

impl NetworkConfig {
    /// Receiver noise power over `bandwidth_hz`, in watts.
    pub fn noise_power(&self) -> f64 {
        self.noise_power_over(self.bandwidth_hz)
    }

    pub fn noise_power_over(&self, bandwidth_hz: f64) -> f64 {
        10f64.powf((self.noise_psd_dbm_per_hz - 30.0) / 10.0) * bandwidth_hz
    }

    /// Linear path-loss gain at distance `d` meters (clamped below at d0).
    pub fn pathloss(&self, d: f64) -> f64 {
        let d0 = self.pathloss_ref_distance_m;
        let beta0 = 10f64.powf(self.pathloss_ref_db / 10.0);
        beta0 * (d.max(d0) / d0).powf(-self.pathloss_exponent)
    }

    /// CPU cycles needed to serve plant `k`.
    pub fn compute_cycles(&self, k: usize) -> f64 {
        self.cycles_per_bit[k] * self.bits_compute[k]
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and > 0, got {v}")))
            }
        }
        fn positive_list(field: &str, v: &[f64], len: usize) -> Result<()> {
            if v.len() != len {
                return Err(Error::config(
                    field,
                    format!("expected {len} entries, got {}", v.len()),
                ));
            }
            v.iter().try_for_each(|&x| positive(field, x))
        }
        positive("bandwidth_hz", self.bandwidth_hz)?;
        if !self.noise_psd_dbm_per_hz.is_finite() {
            return Err(Error::config("noise_psd_dbm_per_hz", "must be finite"));
        }
        if !self.pathloss_ref_db.is_finite() {
            return Err(Error::config("pathloss_ref_db", "must be finite"));
        }
        positive("pathloss_ref_distance_m", self.pathloss_ref_distance_m)?;
        positive("pathloss_exponent", self.pathloss_exponent)?;
        let (m, k) = (topo.num_bs, topo.num_plants);
        positive_list("uplink_power_cap_w", &self.uplink_power_cap_w, k)?;
        positive_list("downlink_power_budget_w", &self.downlink_power_budget_w, m)?;
        positive_list("bits_uplink", &self.bits_uplink, k)?;
        positive_list("bits_compute", &self.bits_compute, k)?;
        positive_list("bits_downlink", &self.bits_downlink, k)?;
        positive_list("cycles_per_bit", &self.cycles_per_bit, k)?;
        positive_list("cpu_freq_hz", &self.cpu_freq_hz, m)?;
        if !(self.outage_threshold > 0.0 && self.outage_threshold < 0.5) {
            return Err(Error::config(
                "outage_threshold",
                format!("must lie in (0, 0.5), got {}", self.outage_threshold),
            ));
        }
        Ok(())
    }
}

pub type ChannelVector = DVector<Complex<f64>>;

/// Channel vectors indexed `[bs][plant]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub uplink: Vec<Vec<ChannelVector>>,
    pub downlink: Vec<Vec<ChannelVector>>,
}

pub fn generate_channels(topo: &Topology, config: &NetworkConfig) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<ChannelVector>> {
        (0..topo.num_bs)
            .map(|m| {
                (0..topo.num_plants)
                    .map(|k| {
                        let std = (config.pathloss(topo.distance(m, k)) / 2.0).sqrt();
                        DVector::from_iterator(
                            topo.num_antennas,
                            (0..topo.num_antennas).map(|_| {
                                let re: f64 = StandardNormal.sample(rng);
                                let im: f64 = StandardNormal.sample(rng);
                                Complex::new(std * re, std * im)
                            }),
                        )
                    })
                    .collect()
            })
            .collect()
    };
    let uplink = draw(&mut rng);
    let downlink = if config.independent_downlink {
        draw(&mut rng)
    } else {
        uplink.clone()
    };
    ChannelSet { uplink, downlink }
}

impl ChannelSet {
    pub fn num_bs(&self) -> usize {
        self.uplink.len()
    }

    pub fn num_plants(&self) -> usize {
        self.uplink.first().map_or(0, Vec::len)
    }

    /// CSV rows `(link, bs, plant, antenna, re, im)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["link", "bs", "plant", "antenna", "re", "im"])?;
        for (link, set) in [("up", &self.uplink), ("down", &self.downlink)] {
            for (m, row) in set.iter().enumerate() {
                for (k, g) in row.iter().enumerate() {
                    for (n, z) in g.iter().enumerate() {
                        w.write_record([
                            link.to_string(),
                            m.to_string(),
                            k.to_string(),
                            n.to_string(),
                            format!("{:e}", z.re),
                            format!("{:e}", z.im),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Matched-filter power gains, `xi[m][l][k]` (uplink) and `zeta[m][l][k]`
/// (downlink): the gain of plant/precoder `l` as seen on the beam for `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTensors {
    pub xi: Vec<Vec<Vec<f64>>>,
    pub zeta: Vec<Vec<Vec<f64>>>,
}

fn inner(a: &ChannelVector, b: &ChannelVector) -> Complex<f64> {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn effective_gains(channels: &ChannelSet) -> Result<GainTensors> {
    let m_count = channels.num_bs();
    let k_count = channels.num_plants();
    let mut xi = vec![vec![vec![0.0; k_count]; k_count]; m_count];
    let mut zeta = vec![vec![vec![0.0; k_count]; k_count]; m_count];
    for m in 0..m_count {
        let up = &channels.uplink[m];
        let down = &channels.downlink[m];
        let up_norm: Vec<f64> = up.iter().map(|g| g.norm_squared()).collect();
        let down_norm: Vec<f64> = down.iter().map(|g| g.norm_squared()).collect();
        for k in 0..k_count {
            if up_norm[k] <= 0.0 || down_norm[k] <= 0.0 {
                return Err(Error::ZeroChannel { bs: m, plant: k });
            }
        }
        for l in 0..k_count {
            for k in 0..k_count {
                xi[m][l][k] = if l == k {
                    up_norm[k]
                } else {
                    inner(&up[l], &up[k]).norm_sqr() / up_norm[k]
                };
                zeta[m][l][k] = if l == k {
                    down_norm[k]
                } else {
                    inner(&down[k], &down[l]).norm_sqr() / down_norm[l]
                };
            }
        }
    }
    Ok(GainTensors { xi, zeta })
}

impl GainTensors {
    pub fn num_bs(&self) -> usize {
        self.xi.len()
    }

    pub fn num_plants(&self) -> usize {
        self.xi.first().map_or(0, Vec::len)
    }
}

/// Relaxed or rounded association, `alpha[m][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub alpha: Vec<Vec<f64>>,
}

impl AssociationMatrix {
    pub fn from_assignment(num_bs: usize, assignment: &[usize]) -> Self {
        let mut alpha = vec![vec![0.0; assignment.len()]; num_bs];
        for (k, &m) in assignment.iter().enumerate() {
            alpha[m][k] = 1.0;
        }
        AssociationMatrix { alpha }
    }

    pub fn num_bs(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_plants(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.alpha[m][k]
    }

    pub fn row_sum(&self, m: usize) -> f64 {
        self.alpha[m].iter().sum()
    }

    pub fn column_sum(&self, k: usize) -> f64 {
        self.alpha.iter().map(|row| row[k]).sum()
    }

    pub fn is_column_stochastic(&self, tol: f64) -> bool {
        (0..self.num_plants()).all(|k| {
            (self.column_sum(k) - 1.0).abs() <= tol
                && self.alpha.iter().all(|row| row[k] >= -tol && row[k] <= 1.0 + tol)
        })
    }

    pub fn is_rounded(&self) -> bool {
        (0..self.num_plants()).all(|k| {
            let ones = self.alpha.iter().filter(|row| row[k] == 1.0).count();
            let zeros = self.alpha.iter().filter(|row| row[k] == 0.0).count();
            ones == 1 && ones + zeros == self.num_bs()
        })
    }

    /// Per-column argmax; ties go to the lower BS index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.num_plants())
            .map(|k| {
                let mut best = 0;
                for m in 1..self.num_bs() {
                    if self.alpha[m][k] > self.alpha[best][k] {
                        best = m;
                    }
                }
                best
            })
            .collect()
    }

    /// Number of plants per BS in the rounded sense.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_bs()];
        for m in self.argmax() {
            counts[m] += 1;
        }
        counts
    }
}

/// Uplink (`up[m][k]`, plant k towards BS m) and downlink (`down[m][k]`)
/// transmit powers in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub up: Vec<Vec<f64>>,
    pub down: Vec<Vec<f64>>,
}

/// Slot lengths in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAllocation {
    pub up: Vec<f64>,
    pub compute: f64,
    pub down: Vec<f64>,
    pub period: f64,
}

impl TimeAllocation {
    pub fn slot_sum(&self) -> f64 {
        self.up.iter().sum::<f64>() + self.compute + self.down.iter().sum::<f64>()
    }

    /// Relative mismatch between the TDMA slot sum and the period.
    pub fn budget_residual(&self) -> f64 {
        (self.slot_sum() - self.period).abs() / self.period
    }

    /// Time available to BS `m` for computing under the TDMA frame: the
    /// uplink slots after its own, the shared compute slot and the downlink
    /// slots before its own.
    pub fn tdma_compute_window(&self, m: usize) -> f64 {
        self.up[m + 1..].iter().sum::<f64>() + self.compute + self.down[..m].iter().sum::<f64>()
    }
}
