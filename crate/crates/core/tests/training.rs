use dosesim::data::{ScalerStats, WindowSet};
use dosesim::models::{Forecaster, FormerConfig, LinearConfig, LstmConfig, ModelKind, ModelSpec};
use dosesim::training::{
    evaluate, train, Checkpoint, HyperParams, Layers, TrainConfig, CHECKPOINT_VERSION,
};
use dosesim::Error;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const L: usize = 12;
const N: usize = 3;

fn ar_series(len: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((len, N));
    for i in 1..len {
        for j in 0..N {
            x[[i, j]] = 0.9 * x[[i - 1, j]] + 0.3 * rng.random_range(-1.0..1.0);
        }
    }
    x
}

fn spec(kind: ModelKind) -> ModelSpec {
    let former = FormerConfig {
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        d_ff: 8,
        dropout: 0.0,
        factor: 3.0,
        label_len: 4,
        kernel: 5,
        positional_encoding: true,
    };
    let linear = LinearConfig {
        kernel: 5,
        individual: true,
    };
    match kind {
        ModelKind::Lstm => ModelSpec::Lstm(LstmConfig {
            hidden: 8,
            ..LstmConfig::default()
        }),
        ModelKind::Transformer => ModelSpec::Transformer(former),
        ModelKind::Informer => ModelSpec::Informer(former),
        ModelKind::Autoformer => ModelSpec::Autoformer(former),
        ModelKind::DLinear => ModelSpec::DLinear(linear),
        ModelKind::NLinear => ModelSpec::NLinear(linear),
    }
}

fn hp(kind: ModelKind, lr: f64, batch: usize) -> HyperParams {
    HyperParams::from_spec(&spec(kind), lr, batch)
}

fn whole(x: &Array2<f64>) -> WindowSet<'_> {
    WindowSet::new(x.view(), L, 1, &[0..x.nrows()]).unwrap()
}

#[test]
fn small_lstm_overfits_ten_samples() {
    let x = ar_series(L + 10, 1);
    let set = whole(&x);
    assert_eq!(set.len(), 10);
    let cfg = TrainConfig {
        epochs: 600,
        patience: 600,
        seed: 3,
        ..TrainConfig::default()
    };
    let (model, report) = train(&spec(ModelKind::Lstm), &hp(ModelKind::Lstm, 1e-2, 10), &set, &set, &cfg).unwrap();
    let m = evaluate(&model, &set, None).unwrap();
    assert!(m.mse < 1e-3, "training mse {}", m.mse);
    assert_eq!(report.best_val_mse, report.epochs[report.best_epoch - 1].val_mse);
}

#[test]
fn dlinear_learns_an_ar_process() {
    let x = ar_series(3000, 2);
    let tr = WindowSet::new(x.view(), L, 1, &[0..2000]).unwrap();
    let va = WindowSet::new(x.view(), L, 1, &[2000..2500]).unwrap();
    let te = WindowSet::new(x.view(), L, 1, &[2500..3000]).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        seed: 1,
        ..TrainConfig::default()
    };
    let (model, _) = train(&spec(ModelKind::DLinear), &hp(ModelKind::DLinear, 1e-2, 32), &tr, &va, &cfg).unwrap();
    // innovations have variance 0.03 against a stationary variance of 0.16
    let m = evaluate(&model, &te, None).unwrap();
    assert!(m.accuracy > 0.75, "accuracy {}", m.accuracy);
}

#[test]
fn same_seed_same_losses() {
    let x = ar_series(200, 4);
    let tr = WindowSet::new(x.view(), L, 1, &[0..150]).unwrap();
    let va = WindowSet::new(x.view(), L, 1, &[150..200]).unwrap();
    for kind in ModelKind::ALL {
        let mut h = hp(kind, 1e-3, 8);
        h.dropout = if h.layers == Layers::None { 0.0 } else { 0.1 };
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ra) = train(&spec(kind), &h, &tr, &va, &cfg).unwrap();
        let (b, rb) = train(&spec(kind), &h, &tr, &va, &cfg).unwrap();
        assert_eq!(ra.epochs, rb.epochs, "{kind}");
        assert_eq!(a.params(), b.params(), "{kind}");
    }
}

#[test]
fn full_batch_loss_is_non_increasing_at_small_learning_rate() {
    let x = ar_series(L + 40, 5);
    let set = whole(&x);
    let cfg = TrainConfig {
        epochs: 30,
        patience: 30,
        seed: 0,
        ..TrainConfig::default()
    };
    for kind in [ModelKind::Lstm, ModelKind::DLinear, ModelKind::Transformer] {
        let (_, report) = train(&spec(kind), &hp(kind, 1e-4, 40), &set, &set, &cfg).unwrap();
        for w in report.epochs.windows(2) {
            assert!(w[1].val_mse <= w[0].val_mse, "{kind}: {:?}", report.epochs);
        }
    }
}

#[test]
fn schema_mismatch_is_rejected() {
    let x = ar_series(100, 6);
    let set = whole(&x);
    let model = Forecaster::new(&spec(ModelKind::NLinear), N + 1, L, 0).unwrap();
    assert!(matches!(evaluate(&model, &set, None), Err(Error::Schema(_))));
}

fn checkpoint(kind: ModelKind, raw: &Array2<f64>) -> Checkpoint {
    let names: Vec<String> = (0..N).map(|j| format!("f{j}")).collect();
    let scaler = ScalerStats::fit(&names, raw.view()).unwrap();
    let mut model = Forecaster::new(&spec(kind), N, L, 11).unwrap();
    // move away from the initialisation so every tensor carries information
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        model
            .params_mut()
            .tensor_mut(id)
            .mapv_inplace(|v| v + 0.05 * rng.random_range(-1.0..1.0));
    }
    Checkpoint::new(&model, hp(kind, 1e-3, 16), scaler).unwrap()
}

fn raw_series() -> Array2<f64> {
    ar_series(60, 8).mapv(|v| 3.0 + 2.0 * v)
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let raw = raw_series();
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let ck = checkpoint(kind, &raw);
        let path = dir.path().join(format!("{kind}.ckpt"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let (m0, m1) = (ck.model().unwrap(), back.model().unwrap());
        for start in [0, 17, 40] {
            let w = raw.slice(s![start..start + L, ..]);
            let a = ck.predict_raw(&m0, w).unwrap();
            let b = back.predict_raw(&m1, w).unwrap();
            let bits = |v: &ndarray::Array1<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b), "{kind}");
        }
        assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ck = checkpoint(ModelKind::Lstm, &raw_series());
    let bytes = ck.to_bytes().unwrap();
    for cut in [0, 10, 30, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() - 100;
    flipped[mid] ^= 1;
    assert!(Checkpoint::from_bytes(&flipped).is_err());

    let mut future = bytes.clone();
    future[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match Checkpoint::from_bytes(&future) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
        other => panic!("{:?}", other.map(|c| c.kind())),
    }
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&magic).is_err());
}

#[test]
fn checkpoint_schema_check_names_features() {
    let ck = checkpoint(ModelKind::DLinear, &raw_series());
    assert!(ck.check_schema(&["f0".into(), "f1".into(), "f2".into()]).is_ok());
    assert!(matches!(ck.check_schema(&["f0".into(), "f2".into(), "f1".into()]), Err(Error::Schema(_))));
}
