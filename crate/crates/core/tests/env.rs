use dosesim::data::{preprocess, PreprocessConfig, Prepared, ScalerStats};
use dosesim::env::{
    cumulative_reward, replay_rollout, Dynamics, EnvConfig, Environment, PlantOracle,
};
use dosesim::plant::{simulate, step_plant, GenerateConfig, Simulation};
use dosesim::Result;
use ndarray::{s, Array1, ArrayView2};
use proptest::prelude::*;

const L: usize = 240;

fn noiseless(n: usize) -> (Simulation, Prepared, chrono::DateTime<chrono::Utc>) {
    let cfg = GenerateConfig::noiseless_sensors(n, 5);
    let sim = simulate(&cfg).unwrap();
    let (prep, _, _) = preprocess(&sim.dataset, &PreprocessConfig::default()).unwrap();
    (sim, prep, cfg.start_time)
}

fn oracle_env(n: usize, env_cfg: EnvConfig) -> (Environment<PlantOracle>, Simulation) {
    let (sim, prep, t0) = noiseless(n);
    let oracle = PlantOracle::new(
        sim.trajectory.clone(),
        t0,
        prep.data().clone(),
        prep.scaler().clone(),
        L,
    )
    .unwrap();
    (Environment::new(oracle, prep.data().clone(), env_cfg).unwrap(), sim)
}

#[test]
fn oracle_replay_matches_noiseless_data() {
    let cfg = EnvConfig {
        start: 1000,
        episode_length: 200,
        ..EnvConfig::default()
    };
    let (mut env, _) = oracle_env(2000, cfg);
    let trace = replay_rollout(&mut env).unwrap();
    assert_eq!(trace.len(), 200);
    let data = env.dataset().values();
    let mut worst: f64 = 0.0;
    for (t, r) in trace.records.iter().enumerate() {
        assert_eq!(r.row, 1000 + t);
        for (p, d) in r.predicted.iter().zip(data.row(r.row)) {
            worst = worst.max((p - d).abs());
        }
        assert!(r.step_mse.unwrap() <= 1e-8);
    }
    assert!(worst <= 1e-8, "worst deviation {worst}");
}

#[test]
fn oracle_step_is_the_plant_step() {
    let cfg = EnvConfig {
        start: 600,
        episode_length: 5,
        ..EnvConfig::default()
    };
    let (mut env, sim) = oracle_env(2000, cfg);
    env.reset().unwrap();
    let ia = env.action_column();
    let io = env.objective_column();
    let tr = &sim.trajectory;
    let a = 3.5;
    let res = env.step(a).unwrap();
    let next = step_plant(&tr.states[599], a, &tr.disturbances[599], &tr.params).unwrap();
    assert!((res.state[io] - next.phosphate).abs() <= 1e-10);
    assert_eq!(res.info.input_action, a);
    // the injected action sits in the row behind the prediction
    assert_eq!(env.window()[[L - 2, ia]], a);
}

#[test]
fn reset_returns_the_dataset_slice() {
    let cfg = EnvConfig {
        start: 700,
        episode_length: 3,
        ..EnvConfig::default()
    };
    let (mut env, _) = oracle_env(2000, cfg);
    let s0 = env.reset().unwrap();
    assert_eq!(s0.dim(), (L, env.dataset().n_features()));
    assert_eq!(s0, env.dataset().values().slice(s![460..700, ..]));
    let dones: Vec<bool> = (0..3).map(|_| env.step(1.0).unwrap().done).collect();
    assert_eq!(dones, [false, false, true]);
    assert!(env.step(1.0).is_err());
}

#[test]
fn start_before_a_full_window_is_rejected() {
    let cfg = EnvConfig {
        start: L - 1,
        ..EnvConfig::default()
    };
    let (mut env, _) = oracle_env(2000, cfg);
    let err = env.reset().unwrap_err().to_string();
    assert!(err.contains(&L.to_string()), "{err}");
}

#[test]
fn empty_episode_and_short_data() {
    let (mut env, _) = oracle_env(
        2000,
        EnvConfig {
            start: 500,
            episode_length: 0,
            ..EnvConfig::default()
        },
    );
    assert!(replay_rollout(&mut env).unwrap().is_empty());
    let (mut env, _) = oracle_env(
        2000,
        EnvConfig {
            start: 1900,
            episode_length: 200,
            ..EnvConfig::default()
        },
    );
    assert!(replay_rollout(&mut env).is_err());
}

/// Echoes the newest row, so the window's contents are easy to follow.
struct Persistence {
    features: Vec<String>,
    scaler: ScalerStats,
    seen: Vec<Array1<f64>>,
}

impl Dynamics for Persistence {
    fn features(&self) -> &[String] {
        &self.features
    }
    fn window(&self) -> usize {
        L
    }
    fn scaler(&self) -> &ScalerStats {
        &self.scaler
    }
    fn predict(&mut self, w: ArrayView2<f64>, _row: usize) -> Result<Array1<f64>> {
        let last = w.row(w.nrows() - 1).to_owned();
        self.seen.push(last.clone());
        Ok(last.mapv(|v| v * 1.001))
    }
}

fn persistence_env(cfg: EnvConfig) -> Environment<Persistence> {
    let (_, prep, _) = noiseless(2000);
    let p = Persistence {
        features: prep.features().to_vec(),
        scaler: prep.scaler().clone(),
        seen: Vec::new(),
    };
    Environment::new(p, prep.data().clone(), cfg).unwrap()
}

#[test]
fn replay_feeds_recorded_actions_and_never_predicted_ones() {
    let cfg = EnvConfig {
        start: 800,
        episode_length: 50,
        ..EnvConfig::default()
    };
    let mut env = persistence_env(cfg);
    let trace = replay_rollout(&mut env).unwrap();
    let ia = env.action_column();
    let data = env.dataset().values().clone();
    for (t, r) in trace.records.iter().enumerate() {
        assert_eq!(r.action, data[[799 + t, ia]]);
        assert_eq!(env.dynamics().seen[t][ia], data[[799 + t, ia]]);
    }
    assert_eq!(trace.to_csv_string().lines().count(), 51);
}

#[test]
fn window_keeps_predictions_at_the_end() {
    let cfg = EnvConfig {
        start: 800,
        episode_length: 10,
        ..EnvConfig::default()
    };
    let mut env = persistence_env(cfg);
    env.reset().unwrap();
    let mut preds = Vec::new();
    for k in 1..=5 {
        let r = env.step(0.5).unwrap();
        assert_eq!(r.info.predicted_rows, k);
        preds.push(r.state);
    }
    let w = env.window();
    let ia = env.action_column();
    for (k, p) in preds.iter().enumerate() {
        let mut expect = p.clone();
        // later steps overwrote the action of every row but the newest
        if k < 4 {
            expect[ia] = 0.5;
        }
        assert_eq!(w.row(L - 5 + k), expect.view());
    }
    let mut last_real = env.dataset().values().row(799).to_owned();
    last_real[ia] = 0.5;
    assert_eq!(w.row(L - 6), last_real.view());
    assert_eq!(w.row(L - 7), env.dataset().values().row(798));
}

#[test]
fn stride_advances_several_rows_per_step() {
    let cfg = EnvConfig {
        start: 800,
        episode_length: 4,
        stride: 3,
        ..EnvConfig::default()
    };
    let mut env = persistence_env(cfg);
    let trace = replay_rollout(&mut env).unwrap();
    let rows: Vec<usize> = trace.records.iter().map(|r| r.row).collect();
    assert_eq!(rows, [802, 805, 808, 811]);
    assert_eq!(env.dynamics().seen.len(), 12);
}

#[test]
fn divergence_guard_ends_the_episode() {
    let cfg = EnvConfig {
        start: 800,
        episode_length: 100,
        divergence_guard: 1e-3,
        ..EnvConfig::default()
    };
    let mut env = persistence_env(cfg);
    let trace = replay_rollout(&mut env).unwrap();
    assert!(trace.diverged);
    assert!(trace.len() < 100);
}

fn brute_force_return(r: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    for (i, ri) in r.iter().enumerate() {
        let mut g = 1.0;
        for _ in 0..i {
            g *= gamma;
        }
        total += g * ri;
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn discounted_return_matches_brute_force(
        r in prop::collection::vec(-10.0..0.0f64, 0..40),
        gamma in prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64],
    ) {
        prop_assert_eq!(cumulative_reward(&r, gamma).to_bits(), brute_force_return(&r, gamma).to_bits());
    }
}

#[test]
fn trace_csv_reads_back() {
    let cfg = EnvConfig {
        start: 800,
        episode_length: 20,
        ..EnvConfig::default()
    };
    let mut env = persistence_env(cfg);
    let trace = replay_rollout(&mut env).unwrap();
    let back = dosesim::env::RolloutTrace::from_csv_str(&trace.to_csv_string(), 800).unwrap();
    assert_eq!(back.len(), 20);
    for (a, b) in trace.records.iter().zip(&back.records) {
        assert_eq!((a.t, a.row, a.action, a.reward), (b.t, b.row, b.action, b.reward));
        assert_eq!(a.step_mse.map(f64::to_bits), b.step_mse.map(f64::to_bits));
        assert_eq!(a.predicted_objective.to_bits(), b.predicted_objective.to_bits());
    }
    assert!(dosesim::env::RolloutTrace::from_csv_str("a,b\n1,2\n", 0).is_err());
}

#[test]
fn oracle_replay_is_bit_exact_over_long_runs() {
    let gen = GenerateConfig::noiseless_sensors(50_000, 7);
    let sim = simulate(&gen).unwrap();
    let (prep, _, _) = preprocess(&sim.dataset, &PreprocessConfig::default()).unwrap();
    let oracle =
        PlantOracle::new(sim.trajectory.clone(), gen.start_time, prep.data().clone(), prep.scaler().clone(), L).unwrap();
    for start in [43_000, 45_000, 47_000] {
        let cfg = EnvConfig {
            start,
            episode_length: 300,
            ..EnvConfig::default()
        };
        let mut env = Environment::new(oracle.clone(), prep.data().clone(), cfg).unwrap();
        let trace = replay_rollout(&mut env).unwrap();
        for rec in &trace.records {
            assert_eq!(rec.predicted, prep.data().values().row(rec.row), "start {start} step {}", rec.t);
        }
    }
}
