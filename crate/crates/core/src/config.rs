//! Simulation parameters and their flat key-value file format.
//!
//! Files are TOML with one `key = value` line per field; every key is
//! optional and missing keys keep their default. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::clustering::{HandoverConfig, Strategy};
use crate::error::{Result, SimError};
use crate::geometry::DeploymentConfig;
use crate::pilot::PilotConfig;
use crate::signaling::FrameConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub deployment: DeploymentConfig,
    /// Handover settings; `strategy` and `threshold_db` are overridden per
    /// sweep cell.
    pub handover: HandoverConfig,
    pub channel: ChannelParams,
    pub frame: FrameConfig,
    pub tau_p: usize,
    pub ue_power_w: f64,
    pub noise_dbm: f64,
    pub sample_time_s: f64,
    pub sim_time_s: f64,
    pub speeds_kmh: Vec<f64>,
    pub thresholds_db: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub num_setups: usize,
    /// Monte-Carlo draws per step for the effective-gain statistics.
    pub n_mc: usize,
    pub seed: u64,
    /// Scale SE by `τ_u / (τ_u + τ_p)`.
    pub apply_prelog: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        FlatConfig::default().try_into_config().expect("defaults are valid")
    }
}

impl SimConfig {
    /// The reduced deployment used for quick trend checks: K=10, L=16, C=4,
    /// N=4, |M^s|=8, |M^m|=12, 5 setups.
    pub fn desk_scale() -> Self {
        let mut cfg = SimConfig::default();
        cfg.deployment.num_ues = 10;
        cfg.deployment.num_orus = 16;
        cfg.deployment.num_odus = 4;
        cfg.deployment.antennas_per_oru = 4;
        cfg.handover.serving_size = 8;
        cfg.handover.measurement_size = 12;
        cfg.num_setups = 5;
        cfg
    }

    pub fn noise_power_w(&self) -> f64 {
        10f64.powf((self.noise_dbm - 30.0) / 10.0)
    }

    pub fn num_steps(&self) -> usize {
        (self.sim_time_s / self.sample_time_s).round() as usize
    }

    pub fn pilot_config(&self) -> PilotConfig {
        PilotConfig::new(self.deployment.num_ues, self.tau_p, self.ue_power_w)
    }

    pub fn prelog(&self) -> f64 {
        if self.apply_prelog {
            let tau_u = self.frame.tau_u as f64;
            tau_u / (tau_u + self.tau_p as f64)
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.deployment.validate()?;
        self.handover.validate(self.deployment.num_orus)?;
        self.frame.validate()?;
        self.pilot_config().validate()?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        let non_negative = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::config(field, format!("must be non-negative and finite, got {v}")))
            }
        };
        positive("ue_power_mw", self.ue_power_w)?;
        if !self.noise_dbm.is_finite() {
            return Err(SimError::config("noise_dbm", "must be finite"));
        }
        positive("sample_time_s", self.sample_time_s)?;
        positive("sim_time_s", self.sim_time_s)?;
        let steps = self.sim_time_s / self.sample_time_s;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(SimError::config(
                "sim_time_s",
                format!("{} s is not a whole number of {} s steps", self.sim_time_s, self.sample_time_s),
            ));
        }
        if self.speeds_kmh.is_empty() {
            return Err(SimError::config("speeds_kmh", "needs at least one speed"));
        }
        for &v in &self.speeds_kmh {
            non_negative("speeds_kmh", v)?;
        }
        if self.thresholds_db.is_empty() {
            return Err(SimError::config("thresholds_db", "needs at least one threshold"));
        }
        for &m in &self.thresholds_db {
            if !(m >= 0.0) {
                return Err(SimError::config("thresholds_db", format!("must be non-negative, got {m}")));
            }
        }
        if self.strategies.is_empty() {
            return Err(SimError::config("strategies", "needs at least one strategy"));
        }
        if self.num_setups == 0 {
            return Err(SimError::config("num_setups", "must be at least 1"));
        }
        if self.n_mc < 2 {
            return Err(SimError::config("n_mc", "must be at least 2"));
        }
        non_negative("sigma_sf_db", self.channel.sigma_sf_db)?;
        non_negative("alpha_per_m", self.channel.alpha)?;
        positive("antenna_spacing", self.channel.antenna_spacing)?;
        non_negative("angular_spread_deg", self.channel.angular_spread)?;
        if self.channel.angular_spread > std::f64::consts::FRAC_PI_2 {
            return Err(SimError::config("angular_spread_deg", "must not exceed 90"));
        }
        positive("min_distance_m", self.channel.min_distance_m)?;
        positive("carrier_ghz", self.channel.carrier_hz)?;
        let uses_opportunistic = self.strategies.contains(&Strategy::Opportunistic)
            || self.handover.strategy == Strategy::Opportunistic;
        let d = &self.deployment;
        if uses_opportunistic && d.num_ues > d.num_orus * d.antennas_per_oru {
            return Err(SimError::config(
                "num_ues",
                format!(
                    "{} UEs exceed the {} primary slots of the opportunistic strategy",
                    d.num_ues,
                    d.num_orus * d.antennas_per_oru
                ),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let flat: FlatConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        let cfg = flat.try_into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The resolved configuration in file format.
    pub fn to_toml(&self) -> String {
        toml::to_string(&FlatConfig::from_config(self)).expect("flat config always serializes")
    }
}

/// Names the key on the line a TOML error points at.
fn toml_error(text: &str, err: &toml::de::Error) -> SimError {
    let msg = err.message().to_string();
    if let Some(rest) = msg.split("unknown field `").nth(1) {
        if let Some(key) = rest.split('`').next() {
            return SimError::config(key, format!("unknown key; {msg}"));
        }
    }
    let key = err
        .span()
        .and_then(|span| {
            let start = text[..span.start.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
            let line = text[start..].lines().next()?;
            let key = line.split('=').next()?.trim();
            (!key.is_empty() && line.contains('=')).then(|| key.to_string())
        })
        .unwrap_or_else(|| "config".to_string());
    SimError::config(key, msg)
}

/// On-disk field set, with units in the key names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatConfig {
    num_ues: usize,
    num_orus: usize,
    num_odus: usize,
    antennas_per_oru: usize,
    grid_side_m: f64,
    strategy: String,
    threshold_db: f64,
    serving_size: usize,
    measurement_size: usize,
    cellular_hysteresis_db: f64,
    tau_p: usize,
    ue_power_mw: f64,
    noise_dbm: f64,
    tau_u: u64,
    blocks_per_step: u64,
    sample_time_s: f64,
    sim_time_s: f64,
    speeds_kmh: Vec<f64>,
    thresholds_db: Vec<f64>,
    strategies: Vec<String>,
    num_setups: usize,
    n_mc: usize,
    seed: u64,
    sigma_sf_db: f64,
    alpha_per_m: f64,
    antenna_spacing: f64,
    angular_spread_deg: f64,
    min_distance_m: f64,
    carrier_ghz: f64,
    apply_prelog: bool,
}

impl Default for FlatConfig {
    fn default() -> Self {
        FlatConfig {
            num_ues: 40,
            num_orus: 36,
            num_odus: 9,
            antennas_per_oru: 4,
            grid_side_m: 1000.0,
            strategy: "fixed".into(),
            threshold_db: 2.0,
            serving_size: 16,
            measurement_size: 25,
            cellular_hysteresis_db: 2.0,
            tau_p: 100,
            ue_power_mw: 100.0,
            noise_dbm: -94.0,
            tau_u: 100,
            blocks_per_step: 1,
            sample_time_s: 0.5,
            sim_time_s: 10.0,
            speeds_kmh: vec![3.0, 30.0, 60.0, 120.0],
            thresholds_db: vec![2.0, 3.0],
            strategies: Strategy::ALL.iter().map(|s| s.name().to_string()).collect(),
            num_setups: 25,
            n_mc: 100,
            seed: 1,
            sigma_sf_db: 4.0,
            alpha_per_m: 0.05,
            antenna_spacing: 0.5,
            angular_spread_deg: 10.0,
            min_distance_m: 1.0,
            carrier_ghz: 3.5,
            apply_prelog: false,
        }
    }
}

impl FlatConfig {
    fn try_into_config(&self) -> Result<SimConfig> {
        let strategy: Strategy = self.strategy.parse()?;
        let strategies = self
            .strategies
            .iter()
            .map(|s| s.parse::<Strategy>().map_err(|_| SimError::config("strategies", format!("unknown strategy `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SimConfig {
            deployment: DeploymentConfig {
                grid_side_m: self.grid_side_m,
                num_orus: self.num_orus,
                num_odus: self.num_odus,
                antennas_per_oru: self.antennas_per_oru,
                num_ues: self.num_ues,
            },
            handover: HandoverConfig {
                strategy,
                threshold_db: self.threshold_db,
                serving_size: self.serving_size,
                measurement_size: self.measurement_size,
                cellular_hysteresis_db: self.cellular_hysteresis_db,
            },
            channel: ChannelParams {
                sigma_sf_db: self.sigma_sf_db,
                alpha: self.alpha_per_m,
                antenna_spacing: self.antenna_spacing,
                angular_spread: self.angular_spread_deg.to_radians(),
                min_distance_m: self.min_distance_m,
                carrier_hz: self.carrier_ghz * 1e9,
            },
            frame: FrameConfig {
                tau_u: self.tau_u,
                blocks_per_step: self.blocks_per_step,
            },
            tau_p: self.tau_p,
            ue_power_w: self.ue_power_mw * 1e-3,
            noise_dbm: self.noise_dbm,
            sample_time_s: self.sample_time_s,
            sim_time_s: self.sim_time_s,
            speeds_kmh: self.speeds_kmh.clone(),
            thresholds_db: self.thresholds_db.clone(),
            strategies,
            num_setups: self.num_setups,
            n_mc: self.n_mc,
            seed: self.seed,
            apply_prelog: self.apply_prelog,
        })
    }

    fn from_config(cfg: &SimConfig) -> Self {
        FlatConfig {
            num_ues: cfg.deployment.num_ues,
            num_orus: cfg.deployment.num_orus,
            num_odus: cfg.deployment.num_odus,
            antennas_per_oru: cfg.deployment.antennas_per_oru,
            grid_side_m: cfg.deployment.grid_side_m,
            strategy: cfg.handover.strategy.name().into(),
            threshold_db: cfg.handover.threshold_db,
            serving_size: cfg.handover.serving_size,
            measurement_size: cfg.handover.measurement_size,
            cellular_hysteresis_db: cfg.handover.cellular_hysteresis_db,
            tau_p: cfg.tau_p,
            ue_power_mw: cfg.ue_power_w * 1e3,
            noise_dbm: cfg.noise_dbm,
            tau_u: cfg.frame.tau_u,
            blocks_per_step: cfg.frame.blocks_per_step,
            sample_time_s: cfg.sample_time_s,
            sim_time_s: cfg.sim_time_s,
            speeds_kmh: cfg.speeds_kmh.clone(),
            thresholds_db: cfg.thresholds_db.clone(),
            strategies: cfg.strategies.iter().map(|s| s.name().to_string()).collect(),
            num_setups: cfg.num_setups,
            n_mc: cfg.n_mc,
            seed: cfg.seed,
            sigma_sf_db: cfg.channel.sigma_sf_db,
            alpha_per_m: cfg.channel.alpha,
            antenna_spacing: cfg.channel.antenna_spacing,
            angular_spread_deg: cfg.channel.angular_spread.to_degrees(),
            min_distance_m: cfg.channel.min_distance_m,
            carrier_ghz: cfg.channel.carrier_hz / 1e9,
            apply_prelog: cfg.apply_prelog,
        }
    }
}
