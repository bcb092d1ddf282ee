use dosesim::data::{preprocess, PreprocessConfig};
use dosesim::diagnostics::{
    multi_sequence_eval, render_report, stepwise_mse, Normalization, SequenceSuite, SummaryRow,
};
use dosesim::env::{EnvConfig, PlantOracle};
use dosesim::plant::{simulate, GenerateConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn double_loop(p: &Array2<f64>, t: &Array2<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..p.nrows() {
        let mut acc = 0.0;
        for d in 0..p.ncols() {
            acc += (p[[i, d]] - t[[i, d]]) * (p[[i, d]] - t[[i, d]]);
        }
        out.push(acc);
    }
    out
}

#[test]
fn stepwise_mse_equals_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=50);
        let p = Array2::from_shape_fn((m, n), |_| rng.random_range(-3.0..3.0));
        let t = Array2::from_shape_fn((m, n), |_| rng.random_range(-3.0..3.0));
        assert_eq!(stepwise_mse(p.view(), t.view()).unwrap(), double_loop(&p, &t));
    }
}

#[test]
fn oracle_suite_has_flat_error_curves() {
    let cfg = GenerateConfig::noiseless_sensors(6000, 5);
    let sim = simulate(&cfg).unwrap();
    let (prep, _, _) = preprocess(&sim.dataset, &PreprocessConfig::default()).unwrap();
    let oracle = PlantOracle::new(
        sim.trajectory.clone(),
        cfg.start_time,
        prep.data().clone(),
        prep.scaler().clone(),
        240,
    )
    .unwrap();
    let m = 100;
    let suite = SequenceSuite::regimes(0..prep.data().len(), prep.data().len(), 240, m);
    assert_eq!(suite.entries.len(), 4);
    let env_cfg = EnvConfig {
        episode_length: m,
        ..EnvConfig::default()
    };
    let cells = multi_sequence_eval(
        &[("oracle".to_string(), oracle)],
        prep.data(),
        &suite,
        &env_cfg,
        Normalization::MinMax,
    )
    .unwrap();
    assert_eq!(cells.len(), 4);
    for c in &cells {
        let (_, curve) = c.outcome.as_ref().unwrap();
        assert!(curve.mse.iter().all(|v| *v <= 1e-8), "{}", c.sequence);
    }

    let dir = tempfile::tempdir().unwrap();
    render_report(&cells, dir.path()).unwrap();
    let rows: Vec<SummaryRow> = csv::Reader::from_path(dir.path().join("summary.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(rows.len(), 4);
    for (r, e) in rows.iter().zip(&suite.entries) {
        assert_eq!((r.model.as_str(), r.sequence.as_str()), ("oracle", e.label.as_str()));
        assert!(dir.path().join(format!("oracle_{}.svg", e.label)).exists());
    }
}

#[test]
fn failing_cell_does_not_stop_the_others() {
    let cfg = GenerateConfig::noiseless_sensors(2000, 5);
    let sim = simulate(&cfg).unwrap();
    let (prep, _, _) = preprocess(&sim.dataset, &PreprocessConfig::default()).unwrap();
    let oracle = PlantOracle::new(
        sim.trajectory.clone(),
        cfg.start_time,
        prep.data().clone(),
        prep.scaler().clone(),
        240,
    )
    .unwrap();
    let suite = SequenceSuite {
        entries: vec![
            dosesim::diagnostics::SequenceEntry {
                label: "late".into(),
                start: 1990,
            },
            dosesim::diagnostics::SequenceEntry {
                label: "ok".into(),
                start: 1000,
            },
        ],
    };
    let env_cfg = EnvConfig {
        episode_length: 30,
        ..EnvConfig::default()
    };
    let cells = multi_sequence_eval(&[("oracle".into(), oracle)], prep.data(), &suite, &env_cfg, Normalization::MinMax).unwrap();
    assert!(cells[0].outcome.is_err());
    assert!(cells[1].outcome.is_ok());
}
