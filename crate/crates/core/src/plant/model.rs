//! Lumped phosphorus-removal tank with chemical (metal-salt) and biological
//! removal.
//!
//! One explicit-Euler step of length `dt` minutes maps `(x, u, d)` to
//!
//! ```text
//! bio  = k_u · B · P/(K_P + P) / (1 + N/K_inh)        biological P uptake
//! chem = k_d · u · P/(K_c + P)                          precipitation by dosage u
//! nit  = k_n · B · A/(K_A + A)                          nitrification
//! den  = k_dn · N/(K_N + N)                             denitrification
//!
//! P' = P + dt·((P_in − P)/τ_P − bio − chem)
//! N' = N + dt·((N_in − N)/τ_N + nit − den)
//! A' = A + dt·((A_in − A)/τ_A − nit)
//! B' = B + dt·(B_in − B)/τ_B
//! ```
//!
//! where `X_in = max(0, mean_X + d_X)` and `B_in = clamp(mean_B + d_B, 0, 1)`.
//! Concentrations are clamped at zero after the step. Because `chem` is
//! increasing in `u`, `P'` is non-increasing in the dosage.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// mg/L
    pub phosphate: f64,
    /// mg/L
    pub nitrate: f64,
    /// mg/L
    pub ammonia: f64,
    /// dimensionless, in [0, 1]
    pub biomass_activity: f64,
}

impl PlantState {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.phosphate,
            self.nitrate,
            self.ammonia,
            self.biomass_activity,
        ]
    }

    pub fn is_admissible(&self) -> bool {
        self.phosphate >= 0.0
            && self.nitrate >= 0.0
            && self.ammonia >= 0.0
            && (0.0..=1.0).contains(&self.biomass_activity)
    }

    fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("phosphate", self.phosphate),
            ("nitrate", self.nitrate),
            ("ammonia", self.ammonia),
            ("biomass_activity", self.biomass_activity),
        ] {
            ensure_finite(v, || format!("plant state `{name}`"))?;
        }
        Ok(())
    }
}

/// Per-step deviation of the influent levels from their means.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub phosphate: f64,
    pub nitrate: f64,
    pub ammonia: f64,
    pub biomass: f64,
}

impl Disturbance {
    pub const ZERO: Disturbance = Disturbance {
        phosphate: 0.0,
        nitrate: 0.0,
        ammonia: 0.0,
        biomass: 0.0,
    };

    pub fn get(&self, species: Species) -> f64 {
        match species {
            Species::Phosphate => self.phosphate,
            Species::Nitrate => self.nitrate,
            Species::Ammonia => self.ammonia,
            Species::Biomass => self.biomass,
        }
    }

    pub fn get_mut(&mut self, species: Species) -> &mut f64 {
        match species {
            Species::Phosphate => &mut self.phosphate,
            Species::Nitrate => &mut self.nitrate,
            Species::Ammonia => &mut self.ammonia,
            Species::Biomass => &mut self.biomass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Phosphate,
    Nitrate,
    Ammonia,
    Biomass,
}

impl Species {
    pub const ALL: [Species; 4] = [
        Species::Phosphate,
        Species::Nitrate,
        Species::Ammonia,
        Species::Biomass,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConstants {
    pub phosphate: f64,
    pub nitrate: f64,
    pub ammonia: f64,
    pub biomass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluentMeans {
    pub phosphate: f64,
    pub nitrate: f64,
    pub ammonia: f64,
    /// Target biomass activity, in [0, 1].
    pub biomass: f64,
}

/// Rates are per minute; time constants in minutes; dosage in m³/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub sampling_interval_min: f64,
    pub time_constants: TimeConstants,
    pub influent: InfluentMeans,
    /// Relative amplitude of the daily influent load cycle.
    pub diurnal_amplitude: f64,
    /// Chemical removal gain, mg/L per minute per (m³/h).
    pub removal_gain: f64,
    pub removal_half_saturation: f64,
    /// Maximum biological uptake rate, mg/L per minute.
    pub uptake_rate: f64,
    pub uptake_half_saturation: f64,
    pub nitrate_inhibition: f64,
    pub nitrification_rate: f64,
    pub ammonia_half_saturation: f64,
    pub denitrification_rate: f64,
    pub nitrate_half_saturation: f64,
    pub dosage_min: f64,
    pub dosage_max: f64,
}

/// The state and dosage that the default parameters hold fixed under zero
/// disturbance.
pub const EQUILIBRIUM_STATE: PlantState = PlantState {
    phosphate: 1.04,
    nitrate: 6.0,
    ammonia: 2.0,
    biomass_activity: 0.7,
};
pub const EQUILIBRIUM_DOSAGE: f64 = 0.8;

impl Default for PlantParams {
    /// Kinetic constants with influent means back-solved so that
    /// ([`EQUILIBRIUM_STATE`], [`EQUILIBRIUM_DOSAGE`]) is a fixed point.
    fn default() -> Self {
        let mut p = PlantParams {
            sampling_interval_min: 2.0,
            time_constants: TimeConstants {
                phosphate: 120.0,
                nitrate: 90.0,
                ammonia: 90.0,
                biomass: 720.0,
            },
            influent: InfluentMeans {
                phosphate: 0.0,
                nitrate: 0.0,
                ammonia: 0.0,
                biomass: EQUILIBRIUM_STATE.biomass_activity,
            },
            diurnal_amplitude: 0.3,
            removal_gain: 0.01,
            removal_half_saturation: 0.3,
            uptake_rate: 0.02,
            uptake_half_saturation: 0.5,
            nitrate_inhibition: 10.0,
            nitrification_rate: 0.05,
            ammonia_half_saturation: 1.0,
            denitrification_rate: 0.04,
            nitrate_half_saturation: 2.0,
            dosage_min: 0.0,
            dosage_max: 10.0,
        };
        p.influent = p.influent_for_equilibrium(&EQUILIBRIUM_STATE, EQUILIBRIUM_DOSAGE);
        p
    }
}

struct Rates {
    bio: f64,
    chem: f64,
    nit: f64,
    den: f64,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let tc = &self.time_constants;
        if !(self.sampling_interval_min > 0.0) {
            return Err(Error::config("sampling interval must be > 0"));
        }
        for (name, tau) in [
            ("phosphate", tc.phosphate),
            ("nitrate", tc.nitrate),
            ("ammonia", tc.ammonia),
            ("biomass", tc.biomass),
        ] {
            if !(tau > 0.0) {
                return Err(Error::config(format!("time constant `{name}` must be > 0")));
            }
            if tau < self.sampling_interval_min {
                return Err(Error::config(format!(
                    "time constant `{name}` ({tau} min) is shorter than the sampling interval"
                )));
            }
        }
        if !(self.dosage_min <= self.dosage_max) {
            return Err(Error::config("dosage bounds must satisfy min <= max"));
        }
        if !(0.0..=1.0).contains(&self.influent.biomass) {
            return Err(Error::config("influent biomass target must lie in [0, 1]"));
        }
        let non_negative = [
            ("influent.phosphate", self.influent.phosphate),
            ("influent.nitrate", self.influent.nitrate),
            ("influent.ammonia", self.influent.ammonia),
            ("diurnal_amplitude", self.diurnal_amplitude),
            ("removal_gain", self.removal_gain),
            ("uptake_rate", self.uptake_rate),
            ("nitrification_rate", self.nitrification_rate),
            ("denitrification_rate", self.denitrification_rate),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("`{name}` must be finite and >= 0")));
            }
        }
        let positive = [
            ("removal_half_saturation", self.removal_half_saturation),
            ("uptake_half_saturation", self.uptake_half_saturation),
            ("nitrate_inhibition", self.nitrate_inhibition),
            ("ammonia_half_saturation", self.ammonia_half_saturation),
            ("nitrate_half_saturation", self.nitrate_half_saturation),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("`{name}` must be finite and > 0")));
            }
        }
        Ok(())
    }

    pub fn clamp_dosage(&self, u: f64) -> f64 {
        u.clamp(self.dosage_min, self.dosage_max)
    }

    fn rates(&self, x: &PlantState, u: f64) -> Rates {
        let p = x.phosphate;
        let bio = self.uptake_rate * x.biomass_activity * p
            / (self.uptake_half_saturation + p)
            / (1.0 + x.nitrate / self.nitrate_inhibition);
        let chem = self.removal_gain * u * p / (self.removal_half_saturation + p);
        let nit = self.nitrification_rate * x.biomass_activity * x.ammonia
            / (self.ammonia_half_saturation + x.ammonia);
        let den =
            self.denitrification_rate * x.nitrate / (self.nitrate_half_saturation + x.nitrate);
        Rates {
            bio,
            chem,
            nit,
            den,
        }
    }

    /// Influent means that make `(state, dosage)` stationary under zero
    /// disturbance.
    pub fn influent_for_equilibrium(&self, state: &PlantState, dosage: f64) -> InfluentMeans {
        let r = self.rates(state, dosage);
        let tc = &self.time_constants;
        InfluentMeans {
            phosphate: state.phosphate + tc.phosphate * (r.bio + r.chem),
            nitrate: state.nitrate + tc.nitrate * (r.den - r.nit),
            ammonia: state.ammonia + tc.ammonia * r.nit,
            biomass: state.biomass_activity,
        }
    }
}

/// Advances the plant by one sampling interval.
pub fn step_plant(
    state: &PlantState,
    action: f64,
    disturbance: &Disturbance,
    params: &PlantParams,
) -> Result<PlantState> {
    state.check_finite()?;
    ensure_finite(action, || "dosage action".into())?;
    for s in Species::ALL {
        ensure_finite(disturbance.get(s), || format!("disturbance on {s:?}"))?;
    }
    let u = params.clamp_dosage(action);
    let dt = params.sampling_interval_min;
    let tc = &params.time_constants;
    let inf = &params.influent;
    let p_in = (inf.phosphate + disturbance.phosphate).max(0.0);
    let n_in = (inf.nitrate + disturbance.nitrate).max(0.0);
    let a_in = (inf.ammonia + disturbance.ammonia).max(0.0);
    let b_in = (inf.biomass + disturbance.biomass).clamp(0.0, 1.0);

    let r = params.rates(state, u);
    let x = state;
    let phosphate = x.phosphate + dt * ((p_in - x.phosphate) / tc.phosphate - r.bio - r.chem);
    let nitrate = x.nitrate + dt * ((n_in - x.nitrate) / tc.nitrate + r.nit - r.den);
    let ammonia = x.ammonia + dt * ((a_in - x.ammonia) / tc.ammonia - r.nit);
    let biomass = x.biomass_activity + dt * (b_in - x.biomass_activity) / tc.biomass;
    Ok(PlantState {
        phosphate: phosphate.max(0.0),
        nitrate: nitrate.max(0.0),
        ammonia: ammonia.max(0.0),
        biomass_activity: biomass.clamp(0.0, 1.0),
    })
}

/// Proportional dosing law `u = clamp(K·(y_d − y_m), u_min, u_max)`.
///
/// The gain carries the sign: with `K < 0` dosage rises when phosphate
/// exceeds the setpoint.
pub fn dose_controller(measured: f64, setpoint: f64, gain: f64, bounds: (f64, f64)) -> Result<f64> {
    if !measured.is_finite() {
        return Err(Error::NonFinite {
            context: "measured phosphate fed to the dosing controller (bad sensor reading must be handled upstream)".into(),
        });
    }
    let (lo, hi) = bounds;
    if !(lo <= hi) {
        return Err(Error::config("controller bounds must satisfy min <= max"));
    }
    Ok((gain * (setpoint - measured)).clamp(lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub gain: f64,
    pub setpoint: f64,
}

impl Default for ControllerConfig {
    /// Negative gain: dosage rises as phosphate climbs above 1.0 mg/L.
    fn default() -> Self {
        ControllerConfig {
            gain: -20.0,
            setpoint: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = PlantParams::default();
        p.validate().unwrap();
        let next = step_plant(
            &EQUILIBRIUM_STATE,
            EQUILIBRIUM_DOSAGE,
            &Disturbance::ZERO,
            &p,
        )
        .unwrap();
        for (a, b) in next.as_array().iter().zip(EQUILIBRIUM_STATE.as_array()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn doubling_dosage_lowers_next_phosphate() {
        let p = PlantParams::default();
        let base = step_plant(
            &EQUILIBRIUM_STATE,
            EQUILIBRIUM_DOSAGE,
            &Disturbance::ZERO,
            &p,
        )
        .unwrap();
        let dosed = step_plant(
            &EQUILIBRIUM_STATE,
            2.0 * EQUILIBRIUM_DOSAGE,
            &Disturbance::ZERO,
            &p,
        )
        .unwrap();
        assert!(dosed.phosphate < base.phosphate);
    }

    #[test]
    fn influent_pulse_raises_peak_phosphate() {
        let p = PlantParams::default();
        let run = |pulse: f64| {
            let mut x = EQUILIBRIUM_STATE;
            let mut peak = x.phosphate;
            for k in 0..200 {
                let d = Disturbance {
                    phosphate: if (20..30).contains(&k) { pulse } else { 0.0 },
                    ..Disturbance::ZERO
                };
                x = step_plant(&x, EQUILIBRIUM_DOSAGE, &d, &p).unwrap();
                peak = peak.max(x.phosphate);
            }
            peak
        };
        assert!(run(2.0) > run(0.0));
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let p = PlantParams::default();
        assert!(step_plant(&EQUILIBRIUM_STATE, f64::NAN, &Disturbance::ZERO, &p).is_err());
        let bad = PlantState {
            nitrate: f64::INFINITY,
            ..EQUILIBRIUM_STATE
        };
        assert!(step_plant(&bad, 1.0, &Disturbance::ZERO, &p).is_err());
    }

    #[test]
    fn controller_examples() {
        assert!((dose_controller(0.6, 1.0, 2.0, (-10.0, 10.0)).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(dose_controller(1.0, 1.0, 2.0, (-10.0, 10.0)).unwrap(), 0.0);
        assert_eq!(dose_controller(1.0, 1.0, 2.0, (0.5, 10.0)).unwrap(), 0.5);
        assert_eq!(dose_controller(1.5, 1.0, -2.0, (0.0, 10.0)).unwrap(), 1.0);
        assert!(dose_controller(f64::NAN, 1.0, 2.0, (0.0, 1.0)).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = PlantParams::default();
        p.time_constants.nitrate = 0.0;
        assert!(p.validate().is_err());
        let mut p = PlantParams::default();
        p.dosage_min = 5.0;
        p.dosage_max = 1.0;
        assert!(p.validate().is_err());
    }

    fn admissible_state() -> impl Strategy<Value = PlantState> {
        (0.0..10.0f64, 0.0..20.0f64, 0.0..10.0f64, 0.0..=1.0f64).prop_map(|(p, n, a, b)| {
            PlantState {
                phosphate: p,
                nitrate: n,
                ammonia: a,
                biomass_activity: b,
            }
        })
    }

    proptest! {
        #[test]
        fn phosphate_non_increasing_in_dosage(x in admissible_state(), u1 in 0.0..10.0f64, du in 0.0..10.0f64) {
            let p = PlantParams::default();
            let lo = step_plant(&x, u1, &Disturbance::ZERO, &p).unwrap();
            let hi = step_plant(&x, u1 + du, &Disturbance::ZERO, &p).unwrap();
            prop_assert!(hi.phosphate <= lo.phosphate);
        }

        #[test]
        fn step_preserves_admissibility(x in admissible_state(), u in -5.0..20.0f64, d in -5.0..5.0f64) {
            let p = PlantParams::default();
            let dist = Disturbance { phosphate: d, nitrate: -d, ammonia: d, biomass: d / 5.0 };
            let next = step_plant(&x, u, &dist, &p).unwrap();
            prop_assert!(next.is_admissible());
        }
    }
}
