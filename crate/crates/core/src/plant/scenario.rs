use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{Disturbance, PlantParams, PlantState, Species};
use crate::error::{Error, Result};

/// A rectangular additive disturbance on one influent level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledEvent {
    pub start: usize,
    pub duration: usize,
    pub species: Species,
    pub magnitude: f64,
}

impl ScheduledEvent {
    pub fn active(&self, step: usize) -> bool {
        step >= self.start && step < self.start + self.duration
    }

    pub fn end(&self) -> usize {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStd {
    pub phosphate: f64,
    pub nitrate: f64,
    pub ammonia: f64,
    pub biomass: f64,
}

impl NoiseStd {
    pub const ZERO: NoiseStd = NoiseStd {
        phosphate: 0.0,
        nitrate: 0.0,
        ammonia: 0.0,
        biomass: 0.0,
    };

    fn get(&self, s: Species) -> f64 {
        match s {
            Species::Phosphate => self.phosphate,
            Species::Nitrate => self.nitrate,
            Species::Ammonia => self.ammonia,
            Species::Biomass => self.biomass,
        }
    }
}

/// Unmeasured inputs: scheduled events plus AR(1) influent noise with
/// innovation standard deviations `noise_std` and lag-one correlation
/// `noise_correlation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceProfile {
    pub schedule: Vec<ScheduledEvent>,
    pub noise_std: NoiseStd,
    pub noise_correlation: f64,
    pub seed: u64,
}

/// Steps between repetitions of the default event cycle.
pub const REGIME_CYCLE: usize = 2500;
pub const PULSE_OFFSET: usize = 400;
pub const TREND_OFFSET: usize = 1200;
pub const AMMONIA_OFFSET: usize = 1800;
pub const BIOMASS_OFFSET: usize = 2000;

impl DisturbanceProfile {
    /// No events, no noise: only the diurnal load cycle remains.
    pub fn quiet() -> Self {
        DisturbanceProfile {
            schedule: Vec::new(),
            noise_std: NoiseStd::ZERO,
            noise_correlation: 0.0,
            seed: 0,
        }
    }

    /// Repeating cycle of an influent phosphate pulse, a nitrate level
    /// shift, an ammonia pulse and a biomass activity dip, on top of
    /// correlated influent noise.
    pub fn regimes(duration: usize) -> Self {
        let mut schedule = Vec::new();
        let mut base = 0;
        while base < duration {
            schedule.push(ScheduledEvent {
                start: base + PULSE_OFFSET,
                duration: 60,
                species: Species::Phosphate,
                magnitude: 2.0,
            });
            schedule.push(ScheduledEvent {
                start: base + TREND_OFFSET,
                duration: 800,
                species: Species::Nitrate,
                magnitude: 2.5,
            });
            schedule.push(ScheduledEvent {
                start: base + AMMONIA_OFFSET,
                duration: 90,
                species: Species::Ammonia,
                magnitude: 3.0,
            });
            schedule.push(ScheduledEvent {
                start: base + BIOMASS_OFFSET,
                duration: 300,
                species: Species::Biomass,
                magnitude: -0.2,
            });
            base += REGIME_CYCLE;
        }
        schedule.retain(|e| e.start < duration);
        DisturbanceProfile {
            schedule,
            noise_std: NoiseStd {
                phosphate: 0.02,
                nitrate: 0.05,
                ammonia: 0.04,
                biomass: 0.002,
            },
            noise_correlation: 0.98,
            seed: 11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return Err(Error::config("noise_correlation must lie in [0, 1)"));
        }
        for s in Species::ALL {
            let std = self.noise_std.get(s);
            if !(std >= 0.0) || !std.is_finite() {
                return Err(Error::config(format!("noise std for {s:?} must be >= 0")));
            }
            let mut events: Vec<_> = self.schedule.iter().filter(|e| e.species == s).collect();
            events.sort_by_key(|e| e.start);
            for w in events.windows(2) {
                if w[0].end() > w[1].start {
                    return Err(Error::config(format!(
                        "overlapping {s:?} events starting at {} and {}",
                        w[0].start, w[1].start
                    )));
                }
            }
        }
        if let Some(e) = self.schedule.iter().find(|e| !e.magnitude.is_finite()) {
            return Err(Error::config(format!(
                "event at step {} has non-finite magnitude",
                e.start
            )));
        }
        Ok(())
    }

    /// Per-step disturbance vectors: diurnal load cycle, scheduled events
    /// and AR(1) noise.
    pub fn sequence(&self, params: &PlantParams, duration: usize, seed: u64) -> Vec<Disturbance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = Disturbance::ZERO;
        let rho = self.noise_correlation;
        let mut out = Vec::with_capacity(duration);
        let dt = params.sampling_interval_min;
        let amp = params.diurnal_amplitude;
        let inf = params.influent;
        for k in 0..duration {
            let phase = 2.0 * PI * (k as f64 * dt) / (24.0 * 60.0);
            let mut d = Disturbance {
                phosphate: inf.phosphate * amp * phase.sin(),
                nitrate: inf.nitrate * amp * (phase - 0.5).sin(),
                ammonia: inf.ammonia * amp * (phase - 0.25).sin(),
                biomass: 0.0,
            };
            for e in self.schedule.iter().filter(|e| e.active(k)) {
                *d.get_mut(e.species) += e.magnitude;
            }
            for s in Species::ALL {
                let z: f64 = StandardNormal.sample(&mut rng);
                let n = noise.get_mut(s);
                *n = rho * *n + self.noise_std.get(s) * z;
                *d.get_mut(s) += *n;
            }
            out.push(d);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureMode {
    /// Reading frozen at the previous emitted value.
    HoldLast,
    /// Reading missing (NaN).
    Dropout,
    /// Reading multiplied by ten.
    Spike,
}

/// A window of steps during which every sensor reports bad quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureBurst {
    pub start: usize,
    pub duration: usize,
}

/// Measurement model for the four analyser channels
/// (phosphate, nitrate, ammonia, ammonia + nitrate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    pub noise_std: [f64; 4],
    pub failure_probability: f64,
    pub failure_mode: FailureMode,
    #[serde(default)]
    pub bursts: Vec<FailureBurst>,
    pub seed: u64,
}

pub const SENSOR_BURST_PERIOD: usize = 5000;
pub const SENSOR_BURST_OFFSET: usize = 3300;

impl SensorModel {
    pub fn perfect() -> Self {
        SensorModel {
            noise_std: [0.0; 4],
            failure_probability: 0.0,
            failure_mode: FailureMode::HoldLast,
            bursts: Vec::new(),
            seed: 0,
        }
    }

    /// Light analyser noise, rare spikes, and a 20-step outage every
    /// [`SENSOR_BURST_PERIOD`] steps.
    pub fn realistic(duration: usize) -> Self {
        let bursts = (0..)
            .map(|i| SENSOR_BURST_OFFSET + i * SENSOR_BURST_PERIOD)
            .take_while(|s| *s < duration)
            .map(|start| FailureBurst {
                start,
                duration: 20,
            })
            .collect();
        SensorModel {
            noise_std: [0.005, 0.025, 0.015, 0.03],
            failure_probability: 0.005,
            failure_mode: FailureMode::Spike,
            bursts,
            seed: 23,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.failure_probability) {
            return Err(Error::config("failure probability must lie in [0, 1]"));
        }
        if self
            .noise_std
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::config("sensor noise std must be finite and >= 0"));
        }
        Ok(())
    }

    fn in_burst(&self, step: usize) -> bool {
        self.bursts
            .iter()
            .any(|b| step >= b.start && step < b.start + b.duration)
    }
}

/// Stateful sensor bank: remembers the last emitted reading per channel
/// for the hold-last failure mode.
#[derive(Debug, Clone)]
pub struct SensorArray {
    model: SensorModel,
    rng: ChaCha8Rng,
    last: Vec<Option<f64>>,
}

impl SensorArray {
    pub fn new(model: SensorModel, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(SensorArray {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: Vec::new(),
        })
    }

    /// One (value, quality) pair per analyser channel.
    pub fn measure(&mut self, state: &PlantState, step: usize) -> [(f64, u8); 4] {
        let truth = [
            state.phosphate,
            state.nitrate,
            state.ammonia,
            state.ammonia + state.nitrate,
        ];
        let mut out = [(0.0, 0); 4];
        for (ch, t) in truth.into_iter().enumerate() {
            let std = self.model.noise_std[ch];
            out[ch] = self.read(ch, t, std, step);
        }
        out
    }

    /// Applies noise and the failure model to one channel. Channels are
    /// addressed by index; indices beyond the analysers are auxiliary.
    pub fn read(&mut self, channel: usize, truth: f64, noise_std: f64, step: usize) -> (f64, u8) {
        if self.last.len() <= channel {
            self.last.resize(channel + 1, None);
        }
        let noisy = if noise_std > 0.0 {
            let n = Normal::new(0.0, noise_std).expect("validated std");
            truth + n.sample(&mut self.rng)
        } else {
            truth
        };
        let p = self.model.failure_probability;
        let failed = self.model.in_burst(step) || (p > 0.0 && self.rng.random::<f64>() < p);
        let value = if failed {
            match self.model.failure_mode {
                FailureMode::HoldLast => self.last[channel].unwrap_or(noisy),
                FailureMode::Dropout => f64::NAN,
                FailureMode::Spike => noisy * 10.0,
            }
        } else {
            noisy
        };
        if !value.is_nan() {
            self.last[channel] = Some(value);
        }
        (value, u8::from(failed))
    }
}
