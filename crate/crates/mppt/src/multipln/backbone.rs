//! Compact BERT-style masked-LM encoder with hand-written backprop.
//!
//! Post-LN residual blocks: `x = LN(x + Attn(x))`, then `x = LN(x + FF(x))`,
//! with a layer-normalized token + position embedding at the bottom.
//! Generic over the float type so tests can instantiate the exact same code
//! at `f64` for finite-difference verification while the model trains at
//! `f32`.

use ndarray::{s, Array1, Array2, Axis, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiplnError;

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub max_position: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    /// Dropout probability on each sub-layer output; 0 disables it.
    #[serde(default)]
    pub dropout: f64,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), MultiplnError> {
        let bad = |reason: String| MultiplnError::BadConfig { reason };
        if self.vocab_size == 0 || self.max_position == 0 || self.n_layers == 0 {
            return Err(bad("vocab_size, max_position, n_layers must be positive".into()));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(bad("d_model, n_heads, d_ff must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(bad(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams<F> {
    pub wq: Array2<F>,
    pub bq: Array1<F>,
    pub wk: Array2<F>,
    pub bk: Array1<F>,
    pub wv: Array2<F>,
    pub bv: Array1<F>,
    pub wo: Array2<F>,
    pub bo: Array1<F>,
    pub ln1_g: Array1<F>,
    pub ln1_b: Array1<F>,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
    pub ln2_g: Array1<F>,
    pub ln2_b: Array1<F>,
}

/// Encoder parameters. The same type doubles as the gradient accumulator
/// and as optimizer moment storage: all three are tensors of identical
/// shape walked in the same slot order.
#[derive(Debug, Clone)]
pub struct Backbone<F> {
    pub config: BackboneConfig,
    pub token_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub emb_ln_g: Array1<F>,
    pub emb_ln_b: Array1<F>,
    pub layers: Vec<LayerParams<F>>,
}

/// Walks every parameter tensor in a fixed order. `$iter`/`$as_slice` select
/// shared or mutable access so the two accessors below cannot drift apart.
macro_rules! for_each_slot {
    ($self:expr, $iter:ident, $as_slice:ident, $out:ident) => {{
        $out.push((
            String::from("token_emb"),
            true,
            $self.token_emb.$as_slice().expect("contiguous"),
        ));
        $out.push((String::from("pos_emb"), true, $self.pos_emb.$as_slice().expect("contiguous")));
        $out.push((
            String::from("emb_ln_g"),
            false,
            $self.emb_ln_g.$as_slice().expect("contiguous"),
        ));
        $out.push((
            String::from("emb_ln_b"),
            false,
            $self.emb_ln_b.$as_slice().expect("contiguous"),
        ));
        for (i, layer) in $self.layers.$iter().enumerate() {
            $out.push((format!("layer{i}.wq"), true, layer.wq.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.bq"), false, layer.bq.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.wk"), true, layer.wk.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.bk"), false, layer.bk.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.wv"), true, layer.wv.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.bv"), false, layer.bv.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.wo"), true, layer.wo.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.bo"), false, layer.bo.$as_slice().expect("contiguous")));
            $out.push((
                format!("layer{i}.ln1_g"),
                false,
                layer.ln1_g.$as_slice().expect("contiguous"),
            ));
            $out.push((
                format!("layer{i}.ln1_b"),
                false,
                layer.ln1_b.$as_slice().expect("contiguous"),
            ));
            $out.push((format!("layer{i}.w1"), true, layer.w1.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.b1"), false, layer.b1.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.w2"), true, layer.w2.$as_slice().expect("contiguous")));
            $out.push((format!("layer{i}.b2"), false, layer.b2.$as_slice().expect("contiguous")));
            $out.push((
                format!("layer{i}.ln2_g"),
                false,
                layer.ln2_g.$as_slice().expect("contiguous"),
            ));
            $out.push((
                format!("layer{i}.ln2_b"),
                false,
                layer.ln2_b.$as_slice().expect("contiguous"),
            ));
        }
    }};
}

/// Per-row layer-norm intermediates kept for backward.
#[derive(Debug, Clone)]
struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

fn layer_norm_forward<F: NdFloat>(
    x: &Array2<F>,
    g: &Array1<F>,
    b: &Array1<F>,
) -> (Array2<F>, LnCache<F>) {
    let (n, d) = x.dim();
    let df = F::from(d).expect("dim fits in float");
    let eps = F::from(LN_EPS).expect("eps fits in float");
    let mut y = Array2::zeros((n, d));
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    for i in 0..n {
        let mut mean = F::zero();
        for j in 0..d {
            mean += x[[i, j]];
        }
        mean /= df;
        let mut var = F::zero();
        for j in 0..d {
            let c = x[[i, j]] - mean;
            var += c * c;
        }
        var /= df;
        let istd = F::one() / (var + eps).sqrt();
        inv_std[i] = istd;
        for j in 0..d {
            let xh = (x[[i, j]] - mean) * istd;
            xhat[[i, j]] = xh;
            y[[i, j]] = g[j] * xh + b[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward<F: NdFloat>(
    cache: &LnCache<F>,
    g: &Array1<F>,
    dy: &Array2<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let (n, d) = dy.dim();
    let df = F::from(d).expect("dim fits in float");
    let mut dx = Array2::zeros((n, d));
    let mut dg = Array1::zeros(d);
    let mut db = Array1::zeros(d);
    for i in 0..n {
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for j in 0..d {
            let dyij = dy[[i, j]];
            dg[j] += dyij * cache.xhat[[i, j]];
            db[j] += dyij;
            let dxhat = dyij * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * cache.xhat[[i, j]];
        }
        let istd = cache.inv_std[i];
        for j in 0..d {
            let dxhat = dy[[i, j]] * g[j];
            dx[[i, j]] = istd * (dxhat - sum_dxhat / df - cache.xhat[[i, j]] * sum_dxhat_xhat / df);
        }
    }
    (dx, dg, db)
}

fn gelu<F: NdFloat>(x: F) -> F {
    let c = F::from(0.797_884_560_802_865_4).expect("const");
    let a = F::from(0.044715).expect("const");
    let half = F::from(0.5).expect("const");
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: NdFloat>(x: F) -> F {
    let c = F::from(0.797_884_560_802_865_4).expect("const");
    let a = F::from(0.044715).expect("const");
    let half = F::from(0.5).expect("const");
    let three = F::from(3.0).expect("const");
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

fn linear<F: NdFloat>(x: &Array2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    x.dot(w) + b
}

/// Returns (dx, dw, db) for y = xW + b.
fn linear_backward<F: NdFloat>(
    x: &Array2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    (dy.dot(&w.t()), x.t().dot(dy), dy.sum_axis(Axis(0)))
}

/// Row-wise softmax backward: ds = p ⊙ (dp − rowsum(p ⊙ dp)).
fn rows_softmax_backward<F: NdFloat>(p: &Array2<F>, dp: &Array2<F>) -> Array2<F> {
    let (n, m) = p.dim();
    let mut ds = Array2::zeros((n, m));
    for i in 0..n {
        let mut inner = F::zero();
        for j in 0..m {
            inner += p[[i, j]] * dp[[i, j]];
        }
        for j in 0..m {
            ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - inner);
        }
    }
    ds
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    x_in: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    attn_drop: Option<Array2<F>>,
    ln1: LnCache<F>,
    x_mid: Array2<F>,
    ff_pre: Array2<F>,
    ff_act: Array2<F>,
    ff_drop: Option<Array2<F>>,
    ln2: LnCache<F>,
}

/// Everything one forward pass must retain for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    ids: Vec<usize>,
    emb_ln: LnCache<F>,
    layers: Vec<LayerCache<F>>,
}

impl<F: NdFloat> Backbone<F> {
    fn zeroed(config: BackboneConfig) -> Self {
        let d = config.d_model;
        let f = config.d_ff;
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: Array2::zeros((d, d)),
                bq: Array1::zeros(d),
                wk: Array2::zeros((d, d)),
                bk: Array1::zeros(d),
                wv: Array2::zeros((d, d)),
                bv: Array1::zeros(d),
                wo: Array2::zeros((d, d)),
                bo: Array1::zeros(d),
                ln1_g: Array1::zeros(d),
                ln1_b: Array1::zeros(d),
                w1: Array2::zeros((d, f)),
                b1: Array1::zeros(f),
                w2: Array2::zeros((f, d)),
                b2: Array1::zeros(d),
                ln2_g: Array1::zeros(d),
                ln2_b: Array1::zeros(d),
            })
            .collect();
        Backbone {
            token_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.max_position, d)),
            emb_ln_g: Array1::zeros(d),
            emb_ln_b: Array1::zeros(d),
            layers,
            config,
        }
    }

    /// Seeded initialization: truncated-normal (±2σ, σ = 0.02) weights,
    /// unit layer-norm gains, zero biases.
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self, MultiplnError> {
        config.validate()?;
        let mut b = Self::zeroed(config.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = F::from(INIT_STD).expect("const");
        for (name, decay, data) in b.slots_mut() {
            if decay {
                for v in data {
                    *v = F::from(trunc_normal_unit(&mut rng)).expect("sample fits") * std;
                }
            } else if name.ends_with("_g") {
                for v in data {
                    *v = F::one();
                }
            }
        }
        Ok(b)
    }

    /// Same shapes, all zeros — a gradient accumulator or moment store.
    pub fn zeros_like(&self) -> Self {
        Self::zeroed(self.config.clone())
    }

    /// (name, weight-decay flag, tensor data) in fixed slot order.
    pub fn slots(&self) -> Vec<(String, bool, &[F])> {
        let mut out = Vec::new();
        for_each_slot!(self, iter, as_slice, out);
        out
    }

    /// Mutable variant of [`slots`](Self::slots); identical order.
    pub fn slots_mut(&mut self) -> Vec<(String, bool, &mut [F])> {
        let mut out = Vec::new();
        for_each_slot!(self, iter_mut, as_slice_mut, out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|(_, _, s)| s.len()).sum()
    }

    fn apply_dropout(
        &self,
        x: &mut Array2<F>,
        train: bool,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Option<Array2<F>> {
        let p = self.config.dropout;
        if !train || p <= 0.0 {
            return None;
        }
        let rng = rng.as_mut().expect("training with dropout requires an RNG");
        let scale = F::from(1.0 / (1.0 - p)).expect("scale fits");
        let mask =
            Array2::from_shape_fn(
                x.dim(),
                |_| {
                    if rng.random::<f64>() < p {
                        F::zero()
                    } else {
                        scale
                    }
                },
            );
        *x *= &mask;
        Some(mask)
    }

    fn layer_forward(
        &self,
        p: &LayerParams<F>,
        x: &Array2<F>,
        train: bool,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> (Array2<F>, LayerCache<F>) {
        let (n, d) = x.dim();
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = F::from(1.0 / (dh as f64).sqrt()).expect("scale fits");

        let q = linear(x, &p.wq, &p.bq);
        let k = linear(x, &p.wk, &p.bk);
        let v = linear(x, &p.wv, &p.bv);
        let mut ctx = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * scale;
            let mut ph = Array2::zeros((n, n));
            for i in 0..n {
                ph.row_mut(i).assign(&super::head::softmax(&scores.row(i)));
            }
            ctx.slice_mut(cols).assign(&ph.dot(&vh));
            probs.push(ph);
        }
        let mut attn_out = linear(&ctx, &p.wo, &p.bo);
        let attn_drop = self.apply_dropout(&mut attn_out, train, rng);
        let res1 = x + &attn_out;
        let (x_mid, ln1) = layer_norm_forward(&res1, &p.ln1_g, &p.ln1_b);

        let ff_pre = linear(&x_mid, &p.w1, &p.b1);
        let ff_act = ff_pre.mapv(gelu);
        let mut ff_out = linear(&ff_act, &p.w2, &p.b2);
        let ff_drop = self.apply_dropout(&mut ff_out, train, rng);
        let res2 = &x_mid + &ff_out;
        let (out, ln2) = layer_norm_forward(&res2, &p.ln2_g, &p.ln2_b);

        let cache = LayerCache {
            x_in: x.clone(),
            q,
            k,
            v,
            probs,
            ctx,
            attn_drop,
            ln1,
            x_mid,
            ff_pre,
            ff_act,
            ff_drop,
            ln2,
        };
        (out, cache)
    }

    /// Encode one sequence; returns final hidden states `[n × d_model]` and
    /// the cache backprop needs. Pass an RNG when training with dropout.
    pub fn forward(
        &self,
        ids: &[u32],
        train: bool,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<F>, ForwardCache<F>) {
        let n = ids.len();
        assert!(
            n >= 1 && n <= self.config.max_position,
            "sequence length {n} outside 1..={}",
            self.config.max_position
        );
        let d = self.config.d_model;
        let mut summed = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            assert!(id < self.config.vocab_size, "token id {id} out of vocab");
            for j in 0..d {
                summed[[i, j]] = self.token_emb[[id, j]] + self.pos_emb[[i, j]];
            }
        }
        let (mut x, emb_ln) = layer_norm_forward(&summed, &self.emb_ln_g, &self.emb_ln_b);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = self.layer_forward(layer, &x, train, &mut dropout_rng);
            layers.push(cache);
            x = out;
        }
        let ids = ids.iter().map(|&i| i as usize).collect();
        (x, ForwardCache { ids, emb_ln, layers })
    }

    fn layer_backward(
        &self,
        p: &LayerParams<F>,
        cache: &LayerCache<F>,
        dout: &Array2<F>,
        g: &mut LayerParams<F>,
    ) -> Array2<F> {
        let (n, d) = cache.x_in.dim();
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = F::from(1.0 / (dh as f64).sqrt()).expect("scale fits");

        let (dres2, dln2_g, dln2_b) = layer_norm_backward(&cache.ln2, &p.ln2_g, dout);
        g.ln2_g += &dln2_g;
        g.ln2_b += &dln2_b;

        let mut dff_out = dres2.clone();
        if let Some(mask) = &cache.ff_drop {
            dff_out *= mask;
        }
        let (dff_act, dw2, db2) = linear_backward(&cache.ff_act, &p.w2, &dff_out);
        g.w2 += &dw2;
        g.b2 += &db2;
        let dff_pre = &dff_act * &cache.ff_pre.mapv(gelu_grad);
        let (dx_mid_ff, dw1, db1) = linear_backward(&cache.x_mid, &p.w1, &dff_pre);
        g.w1 += &dw1;
        g.b1 += &db1;
        let dx_mid = &dres2 + &dx_mid_ff;

        let (dres1, dln1_g, dln1_b) = layer_norm_backward(&cache.ln1, &p.ln1_g, &dx_mid);
        g.ln1_g += &dln1_g;
        g.ln1_b += &dln1_b;

        let mut dattn_out = dres1.clone();
        if let Some(mask) = &cache.attn_drop {
            dattn_out *= mask;
        }
        let (dctx, dwo, dbo) = linear_backward(&cache.ctx, &p.wo, &dattn_out);
        g.wo += &dwo;
        g.bo += &dbo;

        let mut dq = Array2::zeros((n, d));
        let mut dk = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let vh = cache.v.slice(cols);
            let ph = &cache.probs[h];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&vh.t());
            dv.slice_mut(cols).assign(&ph.t().dot(&dctx_h));
            let dscores = rows_softmax_backward(ph, &dp) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&kh));
            dk.slice_mut(cols).assign(&dscores.t().dot(&qh));
        }
        let (dx_q, dwq, dbq) = linear_backward(&cache.x_in, &p.wq, &dq);
        let (dx_k, dwk, dbk) = linear_backward(&cache.x_in, &p.wk, &dk);
        let (dx_v, dwv, dbv) = linear_backward(&cache.x_in, &p.wv, &dv);
        g.wq += &dwq;
        g.bq += &dbq;
        g.wk += &dwk;
        g.bk += &dbk;
        g.wv += &dwv;
        g.bv += &dbv;

        dres1 + dx_q + dx_k + dx_v
    }

    /// Accumulates parameter gradients into `grads` given dL/dhidden.
    pub fn backward(&self, cache: &ForwardCache<F>, dhidden: &Array2<F>, grads: &mut Self) {
        let mut dx = dhidden.clone();
        for i in (0..self.layers.len()).rev() {
            dx = self.layer_backward(&self.layers[i], &cache.layers[i], &dx, &mut grads.layers[i]);
        }
        let (dsum, dg, db) = layer_norm_backward(&cache.emb_ln, &self.emb_ln_g, &dx);
        grads.emb_ln_g += &dg;
        grads.emb_ln_b += &db;
        let d = self.config.d_model;
        for (i, &id) in cache.ids.iter().enumerate() {
            for j in 0..d {
                grads.token_emb[[id, j]] += dsum[[i, j]];
                grads.pos_emb[[i, j]] += dsum[[i, j]];
            }
        }
    }
}

/// Standard normal truncated to ±2, via Box–Muller.
pub(crate) fn trunc_normal_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z;
        }
    }
}
