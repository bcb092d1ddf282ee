use dosesim::models::{
    lstm_forward, nlinear_reference, CellActivation, Forecaster, FormerConfig, LinearConfig,
    LstmConfig, ModelKind, ModelSpec,
};
use dosesim::nn::{gradcheck::check_gradients, ParamSet, Tape};
use ndarray::{s, Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn small_spec(kind: ModelKind) -> ModelSpec {
    variant_spec(kind, false)
}

/// `alt` switches to shared linear weights, a sigmoid candidate, one
/// encoder layer and no positional encoding.
fn variant_spec(kind: ModelKind, alt: bool) -> ModelSpec {
    let former = FormerConfig {
        d_model: 4,
        heads: 2,
        encoder_layers: if alt { 1 } else { 2 },
        decoder_layers: 1,
        d_ff: 4,
        dropout: 0.0,
        factor: 1.0,
        label_len: 3,
        kernel: 3,
        positional_encoding: !alt,
    };
    let linear = LinearConfig {
        kernel: if alt { 5 } else { 3 },
        individual: !alt,
    };
    match kind {
        ModelKind::Lstm => ModelSpec::Lstm(LstmConfig {
            hidden: 4,
            layers: if alt { 1 } else { 2 },
            dropout: 0.0,
            candidate: if alt {
                CellActivation::Sigmoid
            } else {
                CellActivation::Tanh
            },
        }),
        ModelKind::Transformer => ModelSpec::Transformer(former),
        ModelKind::Informer => ModelSpec::Informer(FormerConfig {
            decoder_layers: 2,
            ..former
        }),
        ModelKind::Autoformer => ModelSpec::Autoformer(former),
        ModelKind::DLinear => ModelSpec::DLinear(linear),
        ModelKind::NLinear => ModelSpec::NLinear(linear),
    }
}

/// Nudges every parameter so zero-initialized tensors are exercised too.
fn jitter(params: &mut ParamSet, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        params
            .tensor_mut(id)
            .mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut failures = Vec::new();
    let mut tensors = 0;
    for (alt, (l, n, batch)) in [(false, (8, 3, 2)), (true, (6, 2, 3))] {
        for kind in ModelKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut model = Forecaster::new(&variant_spec(kind, alt), n, l, 3).unwrap();
            jitter(model.params_mut(), &mut rng);
            let windows: Vec<Array2<f64>> = (0..batch).map(|_| random(l, n, &mut rng)).collect();
            let views: Vec<ArrayView2<f64>> = windows.iter().map(|w| w.view()).collect();
            let targets = random(batch, n, &mut rng);
            let (_, grads) = model
                .loss_and_grads(model.params(), &views, targets.view(), None)
                .unwrap();
            let loss = |p: &ParamSet| {
                model
                    .loss_and_grads(p, &views, targets.view(), None)
                    .unwrap()
                    .0
            };
            let checks = check_gradients(model.params(), &grads, loss, 1e-3, 24);
            assert_eq!(checks.len(), model.params().len());
            for c in checks {
                tensors += 1;
                if !c.passes(1e-4) {
                    failures.push(format!(
                        "{kind} (alt {alt}) {}: {:.2e}",
                        c.name, c.max_rel_error
                    ));
                }
            }
        }
    }
    assert!(tensors > 100);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn every_model_maps_240_by_5_to_one_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = random(240, 5, &mut rng);
    for kind in ModelKind::ALL {
        let model = Forecaster::new(&ModelSpec::default_for(kind), 5, 240, 7).unwrap();
        let y = model.predict(w.view()).unwrap();
        assert_eq!(y.len(), 5, "{kind}");
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(model.predict(w.slice(s![..239, ..])).is_err());
    }
}

#[test]
fn predictions_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random(16, 3, &mut rng);
    for kind in ModelKind::ALL {
        let spec = small_spec(kind);
        let a = Forecaster::new(&spec, 3, 16, 9).unwrap();
        let b = Forecaster::new(&spec, 3, 16, 9).unwrap();
        assert_eq!(a.predict(w.view()).unwrap(), a.predict(w.view()).unwrap());
        assert_eq!(a.predict(w.view()).unwrap(), b.predict(w.view()).unwrap());
    }
}

#[test]
fn lstm_tape_matches_unrolled_recurrence() {
    for candidate in [CellActivation::Tanh, CellActivation::Sigmoid] {
        let spec = ModelSpec::Lstm(LstmConfig {
            hidden: 3,
            layers: 2,
            dropout: 0.0,
            candidate,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Forecaster::new(&spec, 2, 4, 1).unwrap();
        jitter(model.params_mut(), &mut rng);
        let w = random(4, 2, &mut rng);
        let oracle = lstm_forward(w.view(), &model.lstm_weights().unwrap()).unwrap();
        let tape = model.predict(w.view()).unwrap();
        for (a, b) in tape.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn batched_lstm_equals_single_window_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Forecaster::new(&small_spec(ModelKind::Lstm), 3, 8, 2).unwrap();
    let ws: Vec<Array2<f64>> = (0..5).map(|_| random(8, 3, &mut rng)).collect();
    let views: Vec<_> = ws.iter().map(|w| w.view()).collect();
    let batch = model.predict_batch(&views).unwrap();
    for (i, w) in ws.iter().enumerate() {
        let one = model.predict(w.view()).unwrap();
        for (a, b) in one.iter().zip(batch.row(i).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn pooled_encoding(model: &Forecaster, w: ArrayView2<f64>) -> Array2<f64> {
    let mut tape = Tape::new(model.params());
    let enc = model.encode(&mut tape, w).unwrap().unwrap();
    let pooled = tape.mean_rows(enc);
    tape.value(pooled).clone()
}

#[test]
fn positional_encoding_breaks_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random(8, 3, &mut rng);
    let mut perm: Vec<usize> = (0..8).collect();
    perm.reverse();
    perm.swap(0, 3);
    let permuted = w.select(ndarray::Axis(0), &perm);
    for positional in [false, true] {
        let spec = ModelSpec::Transformer(FormerConfig {
            positional_encoding: positional,
            ..match small_spec(ModelKind::Transformer) {
                ModelSpec::Transformer(c) => c,
                _ => unreachable!(),
            }
        });
        let model = Forecaster::new(&spec, 3, 8, 4).unwrap();
        let a = pooled_encoding(&model, w.view());
        let b = pooled_encoding(&model, permuted.view());
        let diff = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
        if positional {
            assert!(diff > 1e-6, "positions ignored");
        } else {
            assert!(diff < 1e-12, "pooled encoder output changed by {diff}");
        }
    }
}

#[test]
fn informer_dense_limit_matches_dense_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = random(32, 3, &mut rng);
    let cfg = FormerConfig {
        factor: 1e6,
        ..match small_spec(ModelKind::Informer) {
            ModelSpec::Informer(c) => c,
            _ => unreachable!(),
        }
    };
    let sparse = Forecaster::new(&ModelSpec::Informer(cfg), 3, 32, 5).unwrap();
    let mut dense = sparse.clone();
    dense.set_dense_encoder(true);
    let a = pooled_encoding(&sparse, w.view());
    let b = pooled_encoding(&dense, w.view());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= 1e-8);
    }
    let ya = sparse.predict(w.view()).unwrap();
    let yb = dense.predict(w.view()).unwrap();
    for (x, y) in ya.iter().zip(yb.iter()) {
        assert!((x - y).abs() <= 1e-8);
    }
}

#[test]
fn informer_encoder_halves_length_per_distill() {
    let cfg = FormerConfig {
        encoder_layers: 3,
        ..match small_spec(ModelKind::Informer) {
            ModelSpec::Informer(c) => c,
            _ => unreachable!(),
        }
    };
    let model = Forecaster::new(&ModelSpec::Informer(cfg), 2, 96, 1).unwrap();
    let w = Array2::from_elem((96, 2), 0.5);
    let mut tape = Tape::new(model.params());
    let enc = model.encode(&mut tape, w.view()).unwrap().unwrap();
    assert_eq!(tape.shape(enc).0, 24);
}

fn linear_with_weights(
    kind: ModelKind,
    l: usize,
    n: usize,
    fill: impl Fn(usize) -> f64,
) -> Forecaster {
    let spec = ModelSpec::default_for(kind);
    let spec = match spec {
        ModelSpec::DLinear(_) => ModelSpec::DLinear(LinearConfig {
            kernel: 3,
            individual: true,
        }),
        other => other,
    };
    let mut model = Forecaster::new(&spec, n, l, 0).unwrap();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = model.params().name(id).to_string();
        let t = model.params_mut().tensor_mut(id);
        if name.ends_with(".w") {
            for ((r, _), v) in t.indexed_iter_mut() {
                *v = fill(r);
            }
        } else {
            t.fill(0.0);
        }
    }
    model
}

#[test]
fn dlinear_one_hot_and_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (l, n) = (10, 3);
    let w = random(l, n, &mut rng);
    let last = linear_with_weights(
        ModelKind::DLinear,
        l,
        n,
        |r| if r == l - 1 { 1.0 } else { 0.0 },
    );
    let y = last.predict(w.view()).unwrap();
    for c in 0..n {
        assert!((y[c] - w[[l - 1, c]]).abs() < 1e-12);
    }
    let mean = linear_with_weights(ModelKind::DLinear, l, n, |_| 1.0 / l as f64);
    let y = mean.predict(w.view()).unwrap();
    for c in 0..n {
        assert!((y[c] - w.column(c).mean().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn nlinear_matches_reference_and_plain_linear_at_zero_last() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (l, n) = (6, 2);
    let mut model = Forecaster::new(&ModelSpec::default_for(ModelKind::NLinear), n, l, 0).unwrap();
    jitter(model.params_mut(), &mut rng);
    let wid = model.params().find("linear.w").unwrap();
    let weights = model.params().tensor(wid).clone();
    let mut x = random(l, n, &mut rng);
    let y = model.predict(x.view()).unwrap();
    let r = nlinear_reference(x.view(), weights.view());
    for (a, b) in y.iter().zip(r.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    x.row_mut(l - 1).fill(0.0);
    let y = model.predict(x.view()).unwrap();
    for c in 0..n {
        let plain: f64 = (0..l).map(|t| weights[[t, c]] * x[[t, c]]).sum();
        assert!((y[c] - plain).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nlinear_fixed_point_and_shift_equivariance(seed in 0u64..10_000, c in -50.0f64..50.0, k in -3.0f64..3.0, individual in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, n) = (7, 3);
        let spec = ModelSpec::NLinear(LinearConfig { kernel: 3, individual });
        let mut model = Forecaster::new(&spec, n, l, seed).unwrap();
        jitter(model.params_mut(), &mut rng);
        let constant = Array2::from_elem((l, n), k);
        let y = model.predict(constant.view()).unwrap();
        prop_assert!(y.iter().all(|v| *v == k));

        // arbitrary reals: equal up to rounding
        let x = random(l, n, &mut rng);
        let y0 = model.predict(x.view()).unwrap();
        let y1 = model.predict((&x + c).view()).unwrap();
        for (a, b) in y0.iter().zip(y1.iter()) {
            prop_assert!((a + c - b).abs() <= 1e-12 * (1.0 + c.abs()));
        }

        // on a dyadic grid every intermediate is representable, so the
        // identity holds bit for bit
        let grid = |v: f64| (v * 1024.0).round() / 1024.0;
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            model.params_mut().tensor_mut(id).mapv_inplace(grid);
        }
        let shift = (c * 64.0).round() / 64.0;
        let x = x.mapv(grid);
        let y0 = model.predict(x.view()).unwrap();
        let y1 = model.predict((&x + shift).view()).unwrap();
        for (a, b) in y0.iter().zip(y1.iter()) {
            prop_assert_eq!(a + shift, *b);
        }
    }

    #[test]
    fn contract_finite_in_finite_out(seed in 0u64..1000, kind_ix in 0usize..6, scale in 0.1f64..10.0) {
        let kind = ModelKind::ALL[kind_ix];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Forecaster::new(&small_spec(kind), 3, 8, seed).unwrap();
        let x = random(8, 3, &mut rng) * scale;
        let y = model.predict(x.view()).unwrap();
        prop_assert_eq!(y.len(), 3);
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}
