//! Encoder/decoder blocks shared by the Transformer and the Informer, and
//! the three former models themselves.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::attention::{AttnKind, MultiHead};
use super::decomp::{autocorrelation_var, delay_count};
use super::layers::{ConstCache, FeedForward, Linear};
use super::spec::FormerConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tape, Var};

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHead,
    ffn: FeedForward,
}

impl EncoderLayer {
    fn new(ps: &mut ParamSet, name: &str, cfg: &FormerConfig, rng: &mut impl Rng) -> Self {
        EncoderLayer {
            attn: MultiHead::new(ps, &format!("{name}.attn"), cfg.d_model, cfg.heads, rng),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), cfg.d_model, cfg.d_ff, rng),
        }
    }

    fn apply(&self, tape: &mut Tape, x: Var, kind: AttnKind, dropout: f64) -> Var {
        let a = self.attn.apply(tape, x, x, kind, None);
        let a = tape.dropout(a, dropout);
        let h = tape.add(x, a);
        let h = tape.layer_norm(h);
        let f = self.ffn.apply(tape, h, dropout);
        let f = tape.dropout(f, dropout);
        let out = tape.add(h, f);
        tape.layer_norm(out)
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHead,
    cross_attn: MultiHead,
    ffn: FeedForward,
}

impl DecoderLayer {
    fn new(ps: &mut ParamSet, name: &str, cfg: &FormerConfig, rng: &mut impl Rng) -> Self {
        DecoderLayer {
            self_attn: MultiHead::new(ps, &format!("{name}.self"), cfg.d_model, cfg.heads, rng),
            cross_attn: MultiHead::new(ps, &format!("{name}.cross"), cfg.d_model, cfg.heads, rng),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), cfg.d_model, cfg.d_ff, rng),
        }
    }

    fn apply(&self, tape: &mut Tape, x: Var, memory: Var, cache: &ConstCache, dropout: f64) -> Var {
        let len = tape.shape(x).0;
        let mask = cache.causal_mask(len);
        let a = self
            .self_attn
            .apply(tape, x, x, AttnKind::Causal, Some(&mask));
        let a = tape.dropout(a, dropout);
        let h = tape.add(x, a);
        let h = tape.layer_norm(h);
        let c = self
            .cross_attn
            .apply(tape, h, memory, AttnKind::Dense, None);
        let c = tape.dropout(c, dropout);
        let h = tape.add(h, c);
        let h = tape.layer_norm(h);
        let f = self.ffn.apply(tape, h, dropout);
        let f = tape.dropout(f, dropout);
        let out = tape.add(h, f);
        tape.layer_norm(out)
    }
}

/// Value embedding plus optional sinusoidal positions starting at `offset`.
fn embed(
    tape: &mut Tape,
    proj: &Linear,
    cache: &ConstCache,
    rows: Var,
    offset: usize,
    d_model: usize,
    positional: bool,
) -> Var {
    let e = proj.apply(tape, rows);
    if !positional {
        return e;
    }
    let len = tape.shape(rows).0;
    let pe = cache.positional(len, d_model, offset);
    let pe = tape.constant((*pe).clone());
    tape.add(e, pe)
}

/// 1-D convolution (kernel 3, circular padding), ELU, then max pooling with
/// kernel 3 and stride 2 that keeps `⌊L/2⌋` rows.
#[derive(Debug, Clone)]
pub(crate) struct Distill {
    conv: Linear,
}

impl Distill {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Distill {
            conv: Linear::new(ps, &format!("{name}.conv"), 3 * d, d, true, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let len = tape.shape(x).0;
        if len < 2 {
            return Err(Error::shape(format!(
                "distilling needs at least 2 rows, got {len}"
            )));
        }
        let prev = tape.rows(x, (0..len).map(|i| (i + len - 1) % len).collect());
        let next = tape.rows(x, (0..len).map(|i| (i + 1) % len).collect());
        let cat = tape.concat_cols(&[prev, x, next]);
        let y = self.conv.apply(tape, cat);
        let y = tape.elu(y);
        let groups: Vec<Vec<usize>> = (0..len / 2)
            .map(|r| {
                let c = 2 * r;
                let mut g = Vec::with_capacity(3);
                if c > 0 {
                    g.push(c - 1);
                }
                g.push(c);
                if c + 1 < len {
                    g.push(c + 1);
                }
                g
            })
            .collect();
        Ok(tape.max_pool(y, &groups))
    }
}

/// Encoder-decoder Transformer. The decoder sees a single token: the last
/// observed row, embedded at position `l`.
#[derive(Debug, Clone)]
pub(crate) struct Transformer {
    cfg: FormerConfig,
    embed: Linear,
    dec_embed: Linear,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
    cache: ConstCache,
}

impl Transformer {
    pub fn new(ps: &mut ParamSet, cfg: &FormerConfig, n: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        Transformer {
            cfg: cfg.clone(),
            embed: Linear::new(ps, "embed", n, d, true, rng),
            dec_embed: Linear::new(ps, "dec_embed", n, d, true, rng),
            encoder: (0..cfg.encoder_layers)
                .map(|i| EncoderLayer::new(ps, &format!("enc{i}"), cfg, rng))
                .collect(),
            decoder: (0..cfg.decoder_layers)
                .map(|i| DecoderLayer::new(ps, &format!("dec{i}"), cfg, rng))
                .collect(),
            head: Linear::new(ps, "head", d, n, true, rng),
            cache: ConstCache::default(),
        }
    }

    /// Encoder output, `l x d_model`.
    pub fn encode(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Var {
        let x = tape.constant_view(window);
        let mut h = embed(
            tape,
            &self.embed,
            &self.cache,
            x,
            0,
            self.cfg.d_model,
            self.cfg.positional_encoding,
        );
        h = tape.dropout(h, self.cfg.dropout);
        for layer in &self.encoder {
            h = layer.apply(tape, h, AttnKind::Dense, self.cfg.dropout);
        }
        h
    }

    pub fn forward_one(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Var {
        let l = window.nrows();
        let memory = self.encode(tape, window);
        let last = tape.constant(window.slice(ndarray::s![l - 1..l, ..]).to_owned());
        let mut y = embed(
            tape,
            &self.dec_embed,
            &self.cache,
            last,
            l,
            self.cfg.d_model,
            self.cfg.positional_encoding,
        );
        y = tape.dropout(y, self.cfg.dropout);
        for layer in &self.decoder {
            y = layer.apply(tape, y, memory, &self.cache, self.cfg.dropout);
        }
        self.head.apply(tape, y)
    }
}

/// Informer: ProbSparse self-attention with distilling between encoder
/// layers, and a decoder fed `label_len` start tokens plus one zero
/// placeholder whose output is the forecast.
#[derive(Debug, Clone)]
pub(crate) struct Informer {
    cfg: FormerConfig,
    embed: Linear,
    dec_embed: Linear,
    encoder: Vec<EncoderLayer>,
    distill: Vec<Distill>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
    cache: ConstCache,
    pub(crate) dense_encoder: bool,
}

impl Informer {
    pub fn new(ps: &mut ParamSet, cfg: &FormerConfig, n: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        Informer {
            cfg: cfg.clone(),
            embed: Linear::new(ps, "embed", n, d, true, rng),
            dec_embed: Linear::new(ps, "dec_embed", n, d, true, rng),
            encoder: (0..cfg.encoder_layers)
                .map(|i| EncoderLayer::new(ps, &format!("enc{i}"), cfg, rng))
                .collect(),
            distill: (0..cfg.encoder_layers.saturating_sub(1))
                .map(|i| Distill::new(ps, &format!("distill{i}"), d, rng))
                .collect(),
            decoder: (0..cfg.decoder_layers)
                .map(|i| DecoderLayer::new(ps, &format!("dec{i}"), cfg, rng))
                .collect(),
            head: Linear::new(ps, "head", d, n, true, rng),
            cache: ConstCache::default(),
            dense_encoder: false,
        }
    }

    pub fn encode(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Result<Var> {
        let x = tape.constant_view(window);
        let mut h = embed(
            tape,
            &self.embed,
            &self.cache,
            x,
            0,
            self.cfg.d_model,
            self.cfg.positional_encoding,
        );
        h = tape.dropout(h, self.cfg.dropout);
        let kind = if self.dense_encoder {
            AttnKind::Dense
        } else {
            AttnKind::ProbSparse(self.cfg.factor)
        };
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.apply(tape, h, kind, self.cfg.dropout);
            if let Some(d) = self.distill.get(i) {
                h = d.apply(tape, h)?;
            }
        }
        Ok(h)
    }

    pub fn forward_one(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Result<Var> {
        let (l, n) = window.dim();
        let memory = self.encode(tape, window)?;
        let label = self.cfg.label_len.min(l);
        let mut dec_in = Array2::zeros((label + 1, n));
        dec_in
            .slice_mut(ndarray::s![..label, ..])
            .assign(&window.slice(ndarray::s![l - label.., ..]));
        let dec_in = tape.constant(dec_in);
        let mut y = embed(
            tape,
            &self.dec_embed,
            &self.cache,
            dec_in,
            l - label,
            self.cfg.d_model,
            self.cfg.positional_encoding,
        );
        y = tape.dropout(y, self.cfg.dropout);
        for layer in &self.decoder {
            y = layer.apply(tape, y, memory, &self.cache, self.cfg.dropout);
        }
        let last = tape.row_range(y, label, label + 1);
        Ok(self.head.apply(tape, last))
    }
}

#[derive(Debug, Clone)]
struct AutoCorrelation {
    attn: MultiHead,
    factor: f64,
}

impl AutoCorrelation {
    fn new(ps: &mut ParamSet, name: &str, cfg: &FormerConfig, rng: &mut impl Rng) -> Self {
        AutoCorrelation {
            attn: MultiHead::new(ps, name, cfg.d_model, cfg.heads, rng),
            factor: cfg.factor,
        }
    }

    /// Keys and values are cut or zero-padded to the query length.
    fn apply(&self, tape: &mut Tape, query: Var, memory: Var) -> Var {
        let (q, k, v) = self.attn.project(tape, query, memory);
        let lq = tape.shape(q).0;
        let lk = tape.shape(k).0;
        let (k, v) = if lk > lq {
            (tape.row_range(k, 0, lq), tape.row_range(v, 0, lq))
        } else if lk < lq {
            let d = tape.shape(k).1;
            let z = tape.constant(Array2::zeros((lq - lk, d)));
            (tape.concat_rows(&[k, z]), tape.concat_rows(&[v, z]))
        } else {
            (k, v)
        };
        let top_k = delay_count(lq, self.factor);
        let dh = self.attn.head_dim();
        let outs: Vec<Var> = (0..self.attn.heads())
            .map(|h| {
                let qh = tape.cols(q, h * dh, (h + 1) * dh);
                let kh = tape.cols(k, h * dh, (h + 1) * dh);
                let vh = tape.cols(v, h * dh, (h + 1) * dh);
                autocorrelation_var(tape, qh, kh, vh, top_k)
            })
            .collect();
        self.attn.output(tape, &outs)
    }
}

fn decompose(tape: &mut Tape, cache: &ConstCache, x: Var, kernel: usize) -> (Var, Var) {
    let len = tape.shape(x).0;
    let a = cache.moving_average(len, kernel);
    let trend = tape.left_const(a, x);
    let seasonal = tape.sub(x, trend);
    (seasonal, trend)
}

#[derive(Debug, Clone)]
struct AutoEncoderLayer {
    attn: AutoCorrelation,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct AutoDecoderLayer {
    self_attn: AutoCorrelation,
    cross_attn: AutoCorrelation,
    ffn: FeedForward,
    trend_proj: Linear,
}

/// Autoformer: auto-correlation blocks with progressive series
/// decomposition; the forecast is the sum of a seasonal and a trend path.
#[derive(Debug, Clone)]
pub(crate) struct Autoformer {
    cfg: FormerConfig,
    embed: Linear,
    dec_embed: Linear,
    encoder: Vec<AutoEncoderLayer>,
    decoder: Vec<AutoDecoderLayer>,
    head: Linear,
    cache: ConstCache,
}

impl Autoformer {
    pub fn new(ps: &mut ParamSet, cfg: &FormerConfig, n: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        Autoformer {
            cfg: cfg.clone(),
            embed: Linear::new(ps, "embed", n, d, true, rng),
            dec_embed: Linear::new(ps, "dec_embed", n, d, true, rng),
            encoder: (0..cfg.encoder_layers)
                .map(|i| AutoEncoderLayer {
                    attn: AutoCorrelation::new(ps, &format!("enc{i}.attn"), cfg, rng),
                    ffn: FeedForward::new(ps, &format!("enc{i}.ffn"), d, cfg.d_ff, rng),
                })
                .collect(),
            decoder: (0..cfg.decoder_layers)
                .map(|i| AutoDecoderLayer {
                    self_attn: AutoCorrelation::new(ps, &format!("dec{i}.self"), cfg, rng),
                    cross_attn: AutoCorrelation::new(ps, &format!("dec{i}.cross"), cfg, rng),
                    ffn: FeedForward::new(ps, &format!("dec{i}.ffn"), d, cfg.d_ff, rng),
                    trend_proj: Linear::new(ps, &format!("dec{i}.trend"), d, n, false, rng),
                })
                .collect(),
            head: Linear::new(ps, "head", d, n, true, rng),
            cache: ConstCache::default(),
        }
    }

    pub fn forward_one(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Var {
        let (l, n) = window.dim();
        let (kernel, p) = (self.cfg.kernel, self.cfg.dropout);
        let x = tape.constant_view(window);

        let mut h = self.embed.apply(tape, x);
        h = tape.dropout(h, p);
        for layer in &self.encoder {
            let a = layer.attn.apply(tape, h, h);
            let a = tape.dropout(a, p);
            let s = tape.add(h, a);
            let (s, _) = decompose(tape, &self.cache, s, kernel);
            let f = layer.ffn.apply(tape, s, p);
            let f = tape.dropout(f, p);
            let s2 = tape.add(s, f);
            (h, _) = decompose(tape, &self.cache, s2, kernel);
        }
        let memory = tape.layer_norm(h);

        // decoder initialisation from the decomposed window
        let label = self.cfg.label_len.min(l);
        let (seasonal_x, trend_x) = decompose(tape, &self.cache, x, kernel);
        let season_tail = tape.row_range(seasonal_x, l - label, l);
        let zeros = tape.constant(Array2::zeros((1, n)));
        let season_init = tape.concat_rows(&[season_tail, zeros]);
        let trend_tail = tape.row_range(trend_x, l - label, l);
        // the placeholder continues the last trend value, not the window mean
        let last_trend = tape.row_range(trend_x, l - 1, l);
        let mut trend = tape.concat_rows(&[trend_tail, last_trend]);

        let mut y = self.dec_embed.apply(tape, season_init);
        y = tape.dropout(y, p);
        for layer in &self.decoder {
            let a = layer.self_attn.apply(tape, y, y);
            let a = tape.dropout(a, p);
            let s = tape.add(y, a);
            let (s, t1) = decompose(tape, &self.cache, s, kernel);
            let c = layer.cross_attn.apply(tape, s, memory);
            let c = tape.dropout(c, p);
            let s = tape.add(s, c);
            let (s, t2) = decompose(tape, &self.cache, s, kernel);
            let f = layer.ffn.apply(tape, s, p);
            let f = tape.dropout(f, p);
            let s = tape.add(s, f);
            let (s, t3) = decompose(tape, &self.cache, s, kernel);
            y = s;
            let t12 = tape.add(t1, t2);
            let t = tape.add(t12, t3);
            let t = layer.trend_proj.apply(tape, t);
            trend = tape.add(trend, t);
        }
        let y = tape.layer_norm(y);
        let seasonal = self.head.apply(tape, y);
        let out = tape.add(seasonal, trend);
        tape.row_range(out, label, label + 1)
    }
}
