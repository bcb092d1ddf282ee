//! Tree-structured Parzen estimator search. After a handful of uniform
//! draws, finished trials are split into a good group (the best tenth) and
//! the rest; candidates drawn from the good-group density are scored by the
//! ratio of good to bad density, independently per axis.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hyper::{Axis, HyperParams, SearchSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpeConfig {
    /// Uniformly sampled trials before the density model takes over.
    pub startup_trials: usize,
    /// Candidates scored per suggestion.
    pub candidates: usize,
    pub prior_weight: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            startup_trials: 10,
            candidates: 24,
            prior_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub point: Vec<f64>,
    /// Objective value, `None` when the trial failed.
    pub value: Option<f64>,
    pub error: Option<String>,
}

/// Axis in sampling coordinates: log scale for log-uniform axes, the
/// rounding interval widened by a half step for integers.
#[derive(Debug, Clone)]
enum Dim {
    Continuous { low: f64, high: f64, log: bool, int: bool },
    Categorical(Vec<f64>),
}

impl Dim {
    fn new(axis: &Axis) -> Dim {
        match axis {
            Axis::LogUniform { low, high } => Dim::Continuous {
                low: low.ln(),
                high: high.ln(),
                log: true,
                int: false,
            },
            Axis::Uniform { low, high } => Dim::Continuous {
                low: *low,
                high: *high,
                log: false,
                int: false,
            },
            Axis::Int { low, high } => Dim::Continuous {
                low: *low as f64 - 0.5,
                high: *high as f64 + 0.5,
                log: false,
                int: true,
            },
            Axis::Choice(values) => Dim::Categorical(values.clone()),
        }
    }

    fn to_external(&self, u: f64) -> f64 {
        match self {
            Dim::Continuous { low, high, log, int } => {
                if *log {
                    u.exp()
                } else if *int {
                    u.round().clamp((low + 0.5).ceil(), (high - 0.5).floor())
                } else {
                    u
                }
            }
            Dim::Categorical(values) => values[u as usize],
        }
    }

    fn to_internal(&self, x: f64) -> f64 {
        match self {
            Dim::Continuous { log: true, .. } => x.ln(),
            Dim::Continuous { .. } => x,
            Dim::Categorical(values) => values.iter().position(|v| *v == x).unwrap_or(0) as f64,
        }
    }

    fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Dim::Continuous { low, high, .. } => rng.random_range(*low..*high),
            Dim::Categorical(values) => rng.random_range(0..values.len()) as f64,
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Mixture of truncated normals on `[low, high]`: one per observation plus
/// a broad prior component.
struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    weights: Vec<f64>,
    low: f64,
    high: f64,
}

impl Parzen {
    fn fit(obs: &[f64], low: f64, high: f64, prior_weight: f64) -> Parzen {
        let width = high - low;
        let mut points: Vec<(f64, bool)> = obs.iter().map(|x| (*x, false)).collect();
        points.push((0.5 * (low + high), true));
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let min_sigma = width / (100.0f64).min(points.len() as f64);
        let mut mus = Vec::with_capacity(points.len());
        let mut sigmas = Vec::with_capacity(points.len());
        let mut weights = Vec::with_capacity(points.len());
        for (i, (mu, prior)) in points.iter().enumerate() {
            let left = if i == 0 { mu - low } else { mu - points[i - 1].0 };
            let right = if i + 1 == points.len() {
                high - mu
            } else {
                points[i + 1].0 - mu
            };
            let sigma = if *prior { width } else { left.max(right) };
            mus.push(*mu);
            sigmas.push(sigma.clamp(min_sigma, width));
            weights.push(if *prior { prior_weight } else { 1.0 });
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Parzen {
            mus,
            sigmas,
            weights,
            low,
            high,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut pick = rng.random::<f64>();
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if pick < *w {
                k = i;
                break;
            }
            pick -= w;
        }
        for _ in 0..100 {
            let z: f64 = StandardNormal.sample(rng);
            let x = self.mus[k] + self.sigmas[k] * z;
            if x >= self.low && x <= self.high {
                return x;
            }
        }
        self.mus[k].clamp(self.low, self.high)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let mut p = 0.0;
        for ((mu, s), w) in self.mus.iter().zip(&self.sigmas).zip(&self.weights) {
            let mass = normal_cdf((self.high - mu) / s) - normal_cdf((self.low - mu) / s);
            let z = (x - mu) / s;
            p += w * (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt() * mass.max(1e-300));
        }
        p.max(1e-300).ln()
    }
}

fn categorical_probs(obs: &[f64], k: usize, prior_weight: f64) -> Vec<f64> {
    let mut p = vec![prior_weight / k as f64; k];
    for o in obs {
        p[*o as usize] += 1.0;
    }
    let total: f64 = p.iter().sum();
    p.iter().map(|v| v / total).collect()
}

/// Sequential ask/tell sampler.
#[derive(Debug, Clone)]
pub struct TpeSampler {
    dims: Vec<Dim>,
    cfg: TpeConfig,
    rng: ChaCha8Rng,
    trials: Vec<Trial>,
}

impl TpeSampler {
    pub fn new(axes: &[Axis], cfg: TpeConfig, seed: u64) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::config("search space has no axes"));
        }
        for a in axes {
            a.validate()?;
        }
        if cfg.candidates == 0 || !(cfg.prior_weight > 0.0) {
            return Err(Error::config("TPE needs at least one candidate and a positive prior weight"));
        }
        Ok(TpeSampler {
            dims: axes.iter().map(Dim::new).collect(),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trials: Vec::new(),
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    /// Lowest finished trial; ties go to the earlier one.
    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.value.is_some())
            .min_by(|a, b| a.value.unwrap().total_cmp(&b.value.unwrap()).then(a.index.cmp(&b.index)))
    }

    /// Next point to evaluate, in axis coordinates.
    pub fn ask(&mut self) -> Vec<f64> {
        let finished = self.trials.iter().filter(|t| t.value.is_some()).count();
        let internal = if self.trials.len() < self.cfg.startup_trials || finished == 0 {
            let dims = self.dims.clone();
            dims.iter().map(|d| d.sample_uniform(&mut self.rng)).collect()
        } else {
            self.suggest()
        };
        self.dims
            .iter()
            .zip(internal)
            .map(|(d, u)| d.to_external(u))
            .collect()
    }

    pub fn tell(&mut self, point: Vec<f64>, outcome: std::result::Result<f64, String>) {
        let (value, error) = match outcome {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("non-finite objective {v}"))),
            Err(e) => (None, Some(e)),
        };
        self.trials.push(Trial {
            index: self.trials.len(),
            point,
            value,
            error,
        });
    }

    fn split(&self) -> (Vec<Trial>, Vec<Trial>) {
        let mut done: Vec<Trial> = self.trials.iter().filter(|t| t.value.is_some()).cloned().collect();
        done.sort_by(|a, b| a.value.unwrap().total_cmp(&b.value.unwrap()).then(a.index.cmp(&b.index)));
        let n_good = ((done.len() as f64 * 0.1).ceil() as usize).clamp(1, 25);
        let bad: Vec<Trial> = done[n_good..]
            .iter()
            .chain(self.trials.iter().filter(|t| t.value.is_none()))
            .cloned()
            .collect();
        done.truncate(n_good);
        (done, bad)
    }

    fn suggest(&mut self) -> Vec<f64> {
        let (good, bad) = self.split();
        let coords = |group: &[Trial], i: usize, d: &Dim| -> Vec<f64> {
            group.iter().map(|t| d.to_internal(t.point[i])).collect()
        };
        let prior = self.cfg.prior_weight;
        let mut out = Vec::with_capacity(self.dims.len());
        let dims = self.dims.clone();
        for (i, d) in dims.iter().enumerate() {
            let g = coords(&good, i, d);
            let b = coords(&bad, i, d);
            let best = match d {
                Dim::Continuous { low, high, .. } => {
                    let l = Parzen::fit(&g, *low, *high, prior);
                    let h = Parzen::fit(&b, *low, *high, prior);
                    let mut best = (f64::NEG_INFINITY, 0.0);
                    for _ in 0..self.cfg.candidates {
                        let x = l.sample(&mut self.rng);
                        let score = l.log_pdf(x) - h.log_pdf(x);
                        if score > best.0 {
                            best = (score, x);
                        }
                    }
                    best.1
                }
                Dim::Categorical(values) => {
                    let l = categorical_probs(&g, values.len(), prior);
                    let h = categorical_probs(&b, values.len(), prior);
                    let mut best = (f64::NEG_INFINITY, 0.0);
                    for _ in 0..self.cfg.candidates {
                        let mut pick = self.rng.random::<f64>();
                        let mut k = values.len() - 1;
                        for (j, p) in l.iter().enumerate() {
                            if pick < *p {
                                k = j;
                                break;
                            }
                            pick -= p;
                        }
                        let score = l[k].ln() - h[k].ln();
                        if score > best.0 {
                            best = (score, k as f64);
                        }
                    }
                    best.1
                }
            };
            out.push(best);
        }
        out
    }
}

/// Runs `budget` trials of `objective` and returns them in order. Failing
/// trials are kept with their error; if every trial fails the search fails.
pub fn tpe_minimize<F>(axes: &[Axis], budget: usize, seed: u64, cfg: &TpeConfig, mut objective: F) -> Result<Vec<Trial>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::config("tuning budget must be at least 1"));
    }
    let mut sampler = TpeSampler::new(axes, cfg.clone(), seed)?;
    for _ in 0..budget {
        let point = sampler.ask();
        let outcome = objective(&point).map_err(|e| e.to_string());
        sampler.tell(point, outcome);
    }
    if sampler.best().is_none() {
        let summary = sampler
            .trials()
            .iter()
            .map(|t| format!("trial {}: {}", t.index, t.error.as_deref().unwrap_or("?")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::AllTrialsFailed {
            trials: budget,
            summary,
        });
    }
    Ok(sampler.trials)
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub space: SearchSpace,
    pub trials: Vec<Trial>,
    pub best: HyperParams,
    pub best_val_mse: f64,
}

impl TuneOutcome {
    /// `trial,<axis names>,val_mse`; failed trials leave `val_mse` empty.
    pub fn ledger_csv(&self) -> String {
        let mut out = String::from("trial");
        for name in self.space.names() {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",val_mse\n");
        for t in &self.trials {
            let _ = write!(out, "{}", t.index);
            for v in &t.point {
                let _ = write!(out, ",{v}");
            }
            match t.value {
                Some(v) => {
                    let _ = writeln!(out, ",{v}");
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn write_ledger(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.ledger_csv()).map_err(|e| Error::io(path, e))
    }
}

/// TPE over `space`; `objective` trains a model at the given point and
/// returns its best validation MSE.
pub fn tune<F>(space: &SearchSpace, budget: usize, seed: u64, cfg: &TpeConfig, mut objective: F) -> Result<TuneOutcome>
where
    F: FnMut(&HyperParams) -> Result<f64>,
{
    space.validate()?;
    let axes: Vec<Axis> = space.axes.iter().map(|(_, a)| a.clone()).collect();
    let trials = tpe_minimize(&axes, budget, seed, cfg, |point| {
        let hp = space.decode(point)?;
        let v = objective(&hp)?;
        log::info!("trial {hp:?}: validation mse {v}");
        Ok(v)
    })?;
    let best = trials
        .iter()
        .filter(|t| t.value.is_some())
        .min_by(|a, b| a.value.unwrap().total_cmp(&b.value.unwrap()).then(a.index.cmp(&b.index)))
        .expect("at least one finished trial");
    Ok(TuneOutcome {
        space: space.clone(),
        best: space.decode(&best.point)?,
        best_val_mse: best.value.unwrap(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn quadratic_minimum_found() {
        let axes = [Axis::Uniform { low: -10.0, high: 10.0 }];
        for seed in 0..5 {
            let trials = tpe_minimize(&axes, 50, seed, &TpeConfig::default(), |p| {
                Ok((p[0] - 3.0).powi(2) + 1.0)
            })
            .unwrap();
            let best = trials.iter().filter_map(|t| t.value).fold(f64::INFINITY, f64::min);
            assert!(best <= 1.1, "seed {seed}: best {best}");
        }
    }

    #[test]
    fn tpe_beats_its_own_startup_on_log_axis() {
        let axes = [Axis::LogUniform { low: 1e-6, high: 1.0 }];
        let trials = tpe_minimize(&axes, 40, 3, &TpeConfig::default(), |p| Ok((p[0].log10() + 2.0).powi(2))).unwrap();
        let startup = trials[..10].iter().filter_map(|t| t.value).fold(f64::INFINITY, f64::min);
        let all = trials.iter().filter_map(|t| t.value).fold(f64::INFINITY, f64::min);
        assert!(all <= startup && all < 0.05, "{all}");
    }

    #[test]
    fn discrete_optimum_visited() {
        let axes = [Axis::Choice((0..10).map(f64::from).collect())];
        for seed in 0..5 {
            let trials = tpe_minimize(&axes, 200, seed, &TpeConfig::default(), |p| Ok((p[0] - 6.0).abs())).unwrap();
            assert!(trials.iter().any(|t| t.point[0] == 6.0));
            // once found, the good group concentrates near it
            let late = trials[100..].iter().filter(|t| t.point[0] == 6.0).count();
            assert!(late > 30, "seed {seed}: {late}");
        }
    }

    #[test]
    fn budget_one_returns_the_sample() {
        let space = SearchSpace::desk(ModelKind::NLinear);
        let mut seen = Vec::new();
        let out = tune(&space, 1, 4, &TpeConfig::default(), |hp| {
            seen.push(hp.clone());
            Ok(0.5)
        })
        .unwrap();
        assert_eq!(seen, vec![out.best.clone()]);
        assert_eq!(out.trials.len(), 1);
        assert!(space.admits(&out.best));
    }

    #[test]
    fn integer_axes_stay_integral_and_inside() {
        let axes = [Axis::Int { low: 1, high: 3 }, Axis::Choice(vec![8.0, 16.0])];
        let trials = tpe_minimize(&axes, 60, 1, &TpeConfig::default(), |p| Ok(p[0] + p[1])).unwrap();
        for t in &trials {
            assert!(axes[0].contains(t.point[0]) && axes[1].contains(t.point[1]), "{:?}", t.point);
        }
    }

    #[test]
    fn all_failures_reported() {
        let axes = [Axis::Uniform { low: 0.0, high: 1.0 }];
        let err = tpe_minimize(&axes, 3, 0, &TpeConfig::default(), |_| {
            Err(Error::Diverged {
                epoch: 1,
                last_finite_loss: None,
            })
        })
        .unwrap_err();
        assert!(matches!(err, Error::AllTrialsFailed { trials: 3, .. }));
        assert!(tpe_minimize(&axes, 0, 0, &TpeConfig::default(), |_| Ok(0.0)).is_err());
    }

    #[test]
    fn failed_trials_do_not_win_and_ledger_lists_all() {
        let space = SearchSpace::desk(ModelKind::DLinear);
        let mut calls = 0;
        let out = tune(&space, 6, 2, &TpeConfig::default(), |hp| {
            calls += 1;
            if calls % 2 == 0 {
                Err(Error::Diverged {
                    epoch: 1,
                    last_finite_loss: None,
                })
            } else {
                Ok(hp.learning_rate)
            }
        })
        .unwrap();
        let csv = out.ledger_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "trial,learning_rate,dropout,batch_size,val_mse");
        assert_eq!(lines.len(), 7);
        assert!(lines[2].ends_with(','));
        assert_eq!(out.best_val_mse, out.best.learning_rate);
    }

    #[test]
    fn same_seed_same_trials() {
        let space = SearchSpace::desk(ModelKind::Lstm);
        let run = || tune(&space, 15, 8, &TpeConfig::default(), |hp| Ok(hp.learning_rate * hp.dim.unwrap() as f64)).unwrap().trials;
        assert_eq!(run(), run());
    }
}
