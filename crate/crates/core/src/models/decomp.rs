use ndarray::{Array2, ArrayView2};

use super::layers::moving_average_matrix;
use crate::error::{Error, Result};
use crate::nn::{circular_correlation_fft, softmax_rows, Tape, Var};

/// Splits each column of `x` into a moving-average trend and a remainder.
///
/// The trend is a centered average over `kernel` rows with the first and
/// last rows repeated at the edges. Both parts are adjusted so that
/// `trend + remainder` reproduces `x` exactly in floating point.
pub fn series_decompose(x: ArrayView2<f64>, kernel: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    check_kernel(kernel, x.nrows())?;
    let a = moving_average_matrix(x.nrows(), kernel);
    // averaging offsets from the centre value keeps constant stretches exact
    let mut trend = Array2::zeros(x.dim());
    for ((i, c), t) in trend.indexed_iter_mut() {
        let centre: f64 = x[[i, c]];
        let dev: f64 = a
            .row(i)
            .iter()
            .zip(x.column(c).iter())
            .map(|(w, v)| w * (v - centre))
            .sum();
        *t = centre + dev;
    }
    let mut remainder = Array2::zeros(x.dim());
    for ((t, r), &xv) in trend.iter_mut().zip(remainder.iter_mut()).zip(x.iter()) {
        let mut rv = xv - *t;
        let mut tv = *t;
        for _ in 0..4 {
            if rv + tv == xv {
                break;
            }
            tv = xv - rv;
            rv = xv - tv;
        }
        if rv + tv != xv {
            // give the whole value to the trend
            tv = xv;
            rv = 0.0;
        }
        *t = tv;
        *r = rv;
    }
    Ok((remainder, trend))
}

pub(crate) fn check_kernel(kernel: usize, len: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::config(format!(
            "moving-average kernel must be odd and positive, got {kernel}"
        )));
    }
    if kernel > len {
        return Err(Error::config(format!(
            "moving-average kernel {kernel} exceeds sequence length {len}"
        )));
    }
    Ok(())
}

/// Channel-averaged circular autocorrelation between `q` and `k` at every
/// lag, computed with FFTs.
pub fn autocorrelation(q: ArrayView2<f64>, k: ArrayView2<f64>) -> Vec<f64> {
    circular_correlation_fft(q, k).row(0).to_vec()
}

/// The `k` lags with the largest correlation, strongest first. Values are
/// compared on a grid of 1e-9 times the peak magnitude so that FFT rounding
/// does not reorder equal peaks; ties go to the smaller lag. With
/// `skip_zero` lag 0 is not a candidate.
pub fn top_delays(corr: &[f64], k: usize, skip_zero: bool) -> Vec<usize> {
    let first = usize::from(skip_zero);
    let peak = corr.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let grid = 1e-9 * peak;
    let key = |lag: usize| (corr[lag] / grid).round();
    let mut lags: Vec<usize> = (first..corr.len()).collect();
    lags.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    lags.truncate(k.min(lags.len()));
    lags
}

/// `⌊c · ln L⌋` delays, at least one.
pub fn delay_count(len: usize, factor: f64) -> usize {
    let k = (factor * (len as f64).ln()).floor();
    if k.is_finite() && k >= 1.0 {
        (k as usize).min(len)
    } else {
        1
    }
}

/// `v` rolled so that row `t` of the result is row `(t + delay) mod L`.
pub fn roll_rows(v: ArrayView2<f64>, delay: usize) -> Array2<f64> {
    let len = v.nrows();
    Array2::from_shape_fn(v.dim(), |(t, c)| v[[(t + delay) % len, c]])
}

/// Aggregates `v` rolled by each delay, weighted by the softmax of the
/// correlation at those delays.
pub fn aggregate_delays(v: ArrayView2<f64>, corr: &[f64], delays: &[usize]) -> Array2<f64> {
    let logits = Array2::from_shape_fn((1, delays.len()), |(_, i)| corr[delays[i]]);
    let w = softmax_rows(logits.view());
    let mut out = Array2::zeros(v.dim());
    for (i, &d) in delays.iter().enumerate() {
        out.scaled_add(w[[0, i]], &roll_rows(v, d));
    }
    out
}

/// Auto-correlation attention on plain matrices of equal length.
pub fn autocorrelation_block(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    top_k: usize,
) -> Result<Array2<f64>> {
    if q.dim() != k.dim() || q.nrows() != v.nrows() || q.nrows() == 0 {
        return Err(Error::shape(format!(
            "auto-correlation needs equal lengths, got Q {:?}, K {:?}, V {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let corr = autocorrelation(q, k);
    let delays = top_delays(&corr, top_k.max(1), false);
    Ok(aggregate_delays(v, &corr, &delays))
}

pub(crate) fn autocorrelation_var(tape: &mut Tape, q: Var, k: Var, v: Var, top_k: usize) -> Var {
    let len = tape.shape(q).0;
    let corr = tape.circular_correlation(q, k);
    let delays = top_delays(
        tape.value(corr).row(0).as_slice().expect("row"),
        top_k,
        false,
    );
    let ct = tape.transpose(corr);
    let picked = tape.rows(ct, delays.clone());
    let logits = tape.transpose(picked);
    let w = tape.softmax_rows(logits);
    let rolled: Vec<Var> = delays
        .iter()
        .map(|&d| tape.rows(v, (0..len).map(|t| (t + d) % len).collect()))
        .collect();
    tape.weighted_sum(&rolled, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    #[test]
    fn constant_series_is_all_trend() {
        let x = Array2::from_elem((30, 2), 4.25);
        let (rem, trend) = series_decompose(x.view(), 25).unwrap();
        assert!(trend.iter().all(|t| *t == 4.25));
        assert!(rem.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn ramp_interior_and_edges() {
        let len = 20;
        let x = Array2::from_shape_fn((len, 1), |(i, _)| 0.5 * i as f64 + 1.0);
        let (_, trend) = series_decompose(x.view(), 5).unwrap();
        for i in 2..len - 2 {
            assert!((trend[[i, 0]] - x[[i, 0]]).abs() < 1e-12);
        }
        // replicated edge: mean of x0, x0, x0, x1, x2 = x0 + 0.5 * 3 / 5
        assert!((trend[[0, 0]] - (1.0 + 0.3)).abs() < 1e-12);
        assert!((trend[[1, 0]] - (1.5 + 0.1)).abs() < 1e-12);
        assert!((trend[[len - 1, 0]] - (x[[len - 1, 0]] - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn even_or_oversized_kernel_rejected() {
        let x = Array2::zeros((10, 1));
        assert!(series_decompose(x.view(), 4).is_err());
        assert!(series_decompose(x.view(), 11).is_err());
        assert!(series_decompose(x.view(), 0).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_is_exact(seed in 0u64..10_000, len in 1usize..60, half in 0usize..12, scale in -6i32..6) {
            let kernel = (2 * half + 1).min(if len % 2 == 1 { len } else { len - 1 });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = 10f64.powi(scale);
            let x = Array2::from_shape_fn((len, 3), |_| rng.random_range(-1.0..1.0) * s);
            let (rem, trend) = series_decompose(x.view(), kernel).unwrap();
            for ((r, t), xv) in rem.iter().zip(trend.iter()).zip(x.iter()) {
                prop_assert_eq!(r + t, *xv);
            }
        }
    }

    fn direct_correlation(q: &Array2<f64>, k: &Array2<f64>) -> Vec<f64> {
        let (len, d) = q.dim();
        (0..len)
            .map(|tau| {
                let mut s = 0.0;
                for c in 0..d {
                    for t in 0..len {
                        s += q[[t, c]] * k[[(t + len - tau) % len, c]];
                    }
                }
                s / d as f64
            })
            .collect()
    }

    #[test]
    fn sinusoid_period_is_the_top_delay() {
        for (len, p) in [(96usize, 24usize), (120, 40), (64, 16)] {
            let x = Array2::from_shape_fn((len, 1), |(t, _)| (TAU * t as f64 / p as f64).sin());
            let corr = autocorrelation(x.view(), x.view());
            let oracle = direct_correlation(&x, &x);
            for (a, b) in corr.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9);
            }
            assert_eq!(top_delays(&corr, 1, true), vec![p]);
        }
    }

    #[test]
    fn white_noise_autocorrelation_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let len = 4096;
        let x = Array2::from_shape_fn((len, 1), |_| rng.random_range(-1.0..1.0));
        let corr = autocorrelation(x.view(), x.view());
        for lag in 1..len {
            assert!((corr[lag] / corr[0]).abs() < 0.1, "lag {lag}");
        }
    }

    #[test]
    fn zero_delay_leaves_values_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        let corr = vec![0.3; 12];
        assert_eq!(aggregate_delays(v.view(), &corr, &[0]), v);
    }

    #[test]
    fn tape_block_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mk =
            |rng: &mut ChaCha8Rng| Array2::from_shape_fn((16, 2), |_| rng.random_range(-1.0..1.0));
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let plain = autocorrelation_block(q.view(), k.view(), v.view(), 3).unwrap();
        let ps = crate::nn::ParamSet::default();
        let mut tape = Tape::new(&ps);
        let (a, b, c) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let out = autocorrelation_var(&mut tape, a, b, c, 3);
        for (x, y) in tape.value(out).iter().zip(plain.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
