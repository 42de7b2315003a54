//! Causal pre-norm transformer with explicit backward pass and an
//! incremental decoder that reproduces the full forward bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dropout::dropout_mask;
use super::kernels::{affine, affine_backward, axpy, bias_backward, dot, gelu, gelu_grad, row_affine, Mat};
use super::params::{ParamId, ParameterSet, Tensor};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub attn_dropout_p: f64,
}

impl Default for TransformerConfig {
    /// Desk-scale default.
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            embed_dim: 64,
            ffn_dim: 256,
            dropout_p: 0.1,
            attn_dropout_p: 0.1,
        }
    }
}

impl TransformerConfig {
    pub fn base() -> Self {
        Self {
            layers: 6,
            heads: 8,
            embed_dim: 512,
            ffn_dim: 2048,
            dropout_p: 0.1,
            attn_dropout_p: 0.1,
        }
    }

    pub fn large() -> Self {
        Self {
            layers: 12,
            heads: 16,
            embed_dim: 1024,
            ffn_dim: 4096,
            dropout_p: 0.1,
            attn_dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.embed_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        for (name, p) in [("dropout", self.dropout_p), ("attn_dropout", self.attn_dropout_p)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} not in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w_ff1: ParamId,
    b_ff1: ParamId,
    w_ff2: ParamId,
    b_ff2: ParamId,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    config: TransformerConfig,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

struct LayerCache {
    x_in: Mat,
    ln1: LnCache,
    h1: Mat,
    qkv: Mat,
    /// Per head, row-major `T×T` softmax probabilities (upper triangle unused).
    probs: Vec<Vec<f64>>,
    attn_masks: Option<Vec<Vec<f64>>>,
    ctx: Mat,
    attn_drop: Option<Vec<f64>>,
    ln2: LnCache,
    h2: Mat,
    ff_pre: Mat,
    ff_act: Mat,
    ff_drop: Option<Vec<f64>>,
}

struct TransformerCache {
    input_drop: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

/// Activations recorded by a forward pass for the matching backward pass.
#[derive(Default)]
pub struct Tape {
    cache: Option<TransformerCache>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.cache.is_some()
    }
}

/// Per-layer key/value history for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecodeState {
    qkv: Vec<Vec<f64>>,
    len: usize,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64], xhat: &mut [f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv_std;
        out[i] = g[i] * xhat[i] + b[i];
    }
    inv_std
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> (Mat, LnCache) {
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let c = x.cols;
        let s = layer_norm_row(
            x.row(i),
            g,
            b,
            &mut xhat.data[i * c..(i + 1) * c],
            &mut out.data[i * c..(i + 1) * c],
        );
        inv_std.push(s);
    }
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_backward(cache: &LnCache, g: &[f64], dy: &Mat, dg: &mut [f64], db: &mut [f64]) -> Mat {
    let n = dy.cols;
    let mut dx = Mat::zeros(dy.rows, n);
    let mut dxhat = vec![0.0; n];
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        for k in 0..n {
            dg[k] += dyr[k] * xh[k];
            db[k] += dyr[k];
            dxhat[k] = dyr[k] * g[k];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let s = cache.inv_std[i];
        let out = dx.row_mut(i);
        for k in 0..n {
            out[k] = s * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
    dx
}

/// Causal attention output for query row `i` of one head. `qkv` holds rows of
/// `[q | k | v]` with the given stride.
#[allow(clippy::too_many_arguments)]
fn attend_row(
    qkv: &[f64],
    stride: usize,
    i: usize,
    head: usize,
    cfg: &TransformerConfig,
    probs: &mut [f64],
    mask: Option<&[f64]>,
    ctx: &mut [f64],
) {
    let (d, dh) = (cfg.embed_dim, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let q = &qkv[i * stride + head * dh..i * stride + (head + 1) * dh];
    let mut max = f64::NEG_INFINITY;
    for j in 0..=i {
        let k = &qkv[j * stride + d + head * dh..j * stride + d + (head + 1) * dh];
        let s = dot(q, k) * scale;
        probs[j] = s;
        if s > max {
            max = s;
        }
    }
    let mut total = 0.0;
    for p in probs[..=i].iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    for p in probs[..=i].iter_mut() {
        *p /= total;
    }
    ctx.fill(0.0);
    for j in 0..=i {
        let w = match mask {
            Some(m) => probs[j] * m[j],
            None => probs[j],
        };
        let v = &qkv[j * stride + 2 * d + head * dh..j * stride + 2 * d + (head + 1) * dh];
        axpy(w, v, ctx);
    }
}

fn apply_mask(x: &mut Mat, mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, s) in x.data.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

impl Transformer {
    /// Registers freshly initialized parameters under `prefix`.
    pub fn register(
        config: TransformerConfig,
        params: &mut ParameterSet,
        prefix: &str,
        init_std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (d, f) = (config.embed_dim, config.ffn_dim);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("{prefix}layers.{l}.");
            layers.push(LayerIds {
                ln1_g: params.add_filled(format!("{p}ln1.gain"), &[d], 1.0),
                ln1_b: params.add_filled(format!("{p}ln1.bias"), &[d], 0.0),
                w_qkv: params.add_normal(format!("{p}attn.qkv.weight"), &[d, 3 * d], init_std, rng),
                b_qkv: params.add_filled(format!("{p}attn.qkv.bias"), &[3 * d], 0.0),
                w_o: params.add_normal(format!("{p}attn.out.weight"), &[d, d], init_std, rng),
                b_o: params.add_filled(format!("{p}attn.out.bias"), &[d], 0.0),
                ln2_g: params.add_filled(format!("{p}ln2.gain"), &[d], 1.0),
                ln2_b: params.add_filled(format!("{p}ln2.bias"), &[d], 0.0),
                w_ff1: params.add_normal(format!("{p}ffn.fc1.weight"), &[d, f], init_std, rng),
                b_ff1: params.add_filled(format!("{p}ffn.fc1.bias"), &[f], 0.0),
                w_ff2: params.add_normal(format!("{p}ffn.fc2.weight"), &[f, d], init_std, rng),
                b_ff2: params.add_filled(format!("{p}ffn.fc2.bias"), &[d], 0.0),
            });
        }
        let lnf_g = params.add_filled(format!("{prefix}final_ln.gain"), &[d], 1.0);
        let lnf_b = params.add_filled(format!("{prefix}final_ln.bias"), &[d], 0.0);
        Ok(Self {
            config,
            layers,
            lnf_g,
            lnf_b,
        })
    }

    /// Looks up existing parameters by name, checking shapes.
    pub fn bind(config: TransformerConfig, params: &ParameterSet, prefix: &str) -> Result<Self> {
        config.validate()?;
        let (d, f) = (config.embed_dim, config.ffn_dim);
        let get = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let t: &Tensor = params.get(id);
            if t.shape != shape {
                return Err(Error::Shape {
                    name,
                    expected: shape.to_vec(),
                    got: t.shape.clone(),
                });
            }
            Ok(id)
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("{prefix}layers.{l}.");
            layers.push(LayerIds {
                ln1_g: get(format!("{p}ln1.gain"), &[d])?,
                ln1_b: get(format!("{p}ln1.bias"), &[d])?,
                w_qkv: get(format!("{p}attn.qkv.weight"), &[d, 3 * d])?,
                b_qkv: get(format!("{p}attn.qkv.bias"), &[3 * d])?,
                w_o: get(format!("{p}attn.out.weight"), &[d, d])?,
                b_o: get(format!("{p}attn.out.bias"), &[d])?,
                ln2_g: get(format!("{p}ln2.gain"), &[d])?,
                ln2_b: get(format!("{p}ln2.bias"), &[d])?,
                w_ff1: get(format!("{p}ffn.fc1.weight"), &[d, f])?,
                b_ff1: get(format!("{p}ffn.fc1.bias"), &[f])?,
                w_ff2: get(format!("{p}ffn.fc2.weight"), &[f, d])?,
                b_ff2: get(format!("{p}ffn.fc2.bias"), &[d])?,
            });
        }
        Ok(Self {
            config,
            layers,
            lnf_g: get(format!("{prefix}final_ln.gain"), &[d])?,
            lnf_b: get(format!("{prefix}final_ln.bias"), &[d])?,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    /// Runs the stack over `input` (`T × embed_dim`). When `tape` is given the
    /// activations needed by [`Transformer::backward`] are recorded.
    pub fn forward(
        &self,
        params: &ParameterSet,
        input: &Mat,
        mode: Mode,
        tape: Option<&mut Tape>,
    ) -> Result<Mat> {
        let cfg = &self.config;
        let d = cfg.embed_dim;
        if input.cols != d {
            return Err(Error::Shape {
                name: "transformer input".into(),
                expected: vec![input.rows, d],
                got: vec![input.rows, input.cols],
            });
        }
        let t_len = input.rows;
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let p_drop = if rng.is_some() { cfg.dropout_p } else { 0.0 };
        let p_attn = if rng.is_some() { cfg.attn_dropout_p } else { 0.0 };
        let record = tape.is_some();

        let mut x = input.clone();
        let input_drop = rng.as_mut().and_then(|r| dropout_mask(x.data.len(), p_drop, r));
        apply_mask(&mut x, &input_drop);

        let mut layer_caches = Vec::new();
        for ids in &self.layers {
            let x_in = x;
            let (h1, ln1) = layer_norm(&x_in, params.data(ids.ln1_g), params.data(ids.ln1_b));
            let qkv = affine(&h1, params.data(ids.w_qkv), Some(params.data(ids.b_qkv)), 3 * d);

            let mut ctx = Mat::zeros(t_len, d);
            let mut probs = Vec::with_capacity(cfg.heads);
            let mut attn_masks = if p_attn > 0.0 { Some(Vec::new()) } else { None };
            let dh = cfg.head_dim();
            let mut ctx_head = vec![0.0; dh];
            for h in 0..cfg.heads {
                let mut p_h = vec![0.0; t_len * t_len];
                let m_h = match (rng.as_mut(), attn_masks.is_some()) {
                    (Some(r), true) => dropout_mask(t_len * t_len, p_attn, r),
                    _ => None,
                };
                for i in 0..t_len {
                    attend_row(
                        &qkv.data,
                        3 * d,
                        i,
                        h,
                        cfg,
                        &mut p_h[i * t_len..(i + 1) * t_len],
                        m_h.as_ref().map(|m| &m[i * t_len..(i + 1) * t_len]),
                        &mut ctx_head,
                    );
                    ctx.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(&ctx_head);
                }
                probs.push(p_h);
                if let (Some(masks), Some(m)) = (attn_masks.as_mut(), m_h) {
                    masks.push(m);
                }
            }

            let mut a = affine(&ctx, params.data(ids.w_o), Some(params.data(ids.b_o)), d);
            let attn_drop = rng.as_mut().and_then(|r| dropout_mask(a.data.len(), p_drop, r));
            apply_mask(&mut a, &attn_drop);
            let mut x_mid = x_in.clone();
            for (v, av) in x_mid.data.iter_mut().zip(&a.data) {
                *v += av;
            }

            let (h2, ln2) = layer_norm(&x_mid, params.data(ids.ln2_g), params.data(ids.ln2_b));
            let ff_pre = affine(&h2, params.data(ids.w_ff1), Some(params.data(ids.b_ff1)), cfg.ffn_dim);
            let mut ff_act = ff_pre.clone();
            for v in &mut ff_act.data {
                *v = gelu(*v);
            }
            let mut f = affine(&ff_act, params.data(ids.w_ff2), Some(params.data(ids.b_ff2)), d);
            let ff_drop = rng.as_mut().and_then(|r| dropout_mask(f.data.len(), p_drop, r));
            apply_mask(&mut f, &ff_drop);
            let mut x_out = x_mid;
            for (v, fv) in x_out.data.iter_mut().zip(&f.data) {
                *v += fv;
            }

            if record {
                layer_caches.push(LayerCache {
                    x_in,
                    ln1,
                    h1,
                    qkv,
                    probs,
                    attn_masks,
                    ctx,
                    attn_drop,
                    ln2,
                    h2,
                    ff_pre,
                    ff_act,
                    ff_drop,
                });
            }
            x = x_out;
        }
        let (y, lnf) = layer_norm(&x, params.data(self.lnf_g), params.data(self.lnf_b));
        if let Some(tape) = tape {
            tape.cache = Some(TransformerCache {
                input_drop,
                layers: layer_caches,
                lnf,
            });
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        params: &ParameterSet,
        tape: &Tape,
        d_out: &Mat,
        grads: &mut ParameterSet,
    ) -> Result<Mat> {
        let cache = tape.cache.as_ref().ok_or(Error::NoForward)?;
        let cfg = &self.config;
        let (d, dh) = (cfg.embed_dim, cfg.head_dim());
        let t_len = d_out.rows;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dx = {
            let (mut dg, mut db) = take2(grads, self.lnf_g, self.lnf_b);
            let r = layer_norm_backward(&cache.lnf, params.data(self.lnf_g), d_out, &mut dg, &mut db);
            put2(grads, self.lnf_g, self.lnf_b, dg, db);
            r
        };

        for (ids, lc) in self.layers.iter().zip(&cache.layers).rev() {
            // FFN branch: x_out = x_mid + drop(fc2(gelu(fc1(ln2(x_mid))))).
            let mut df = dx.clone();
            apply_mask(&mut df, &lc.ff_drop);
            bias_backward(&df, grads.data_mut(ids.b_ff2));
            let mut d_act =
                affine_backward(&lc.ff_act, params.data(ids.w_ff2), &df, grads.data_mut(ids.w_ff2));
            for (g, &pre) in d_act.data.iter_mut().zip(&lc.ff_pre.data) {
                *g *= gelu_grad(pre);
            }
            bias_backward(&d_act, grads.data_mut(ids.b_ff1));
            let dh2 = affine_backward(&lc.h2, params.data(ids.w_ff1), &d_act, grads.data_mut(ids.w_ff1));
            let dx_mid_ln = {
                let (mut dg, mut db) = take2(grads, ids.ln2_g, ids.ln2_b);
                let r = layer_norm_backward(&lc.ln2, params.data(ids.ln2_g), &dh2, &mut dg, &mut db);
                put2(grads, ids.ln2_g, ids.ln2_b, dg, db);
                r
            };
            let mut dx_mid = dx;
            for (a, b) in dx_mid.data.iter_mut().zip(&dx_mid_ln.data) {
                *a += b;
            }

            // Attention branch: x_mid = x_in + drop(out(attn(qkv(ln1(x_in))))).
            let mut da = dx_mid.clone();
            apply_mask(&mut da, &lc.attn_drop);
            bias_backward(&da, grads.data_mut(ids.b_o));
            let dctx = affine_backward(&lc.ctx, params.data(ids.w_o), &da, grads.data_mut(ids.w_o));

            let mut dqkv = Mat::zeros(t_len, 3 * d);
            let stride = 3 * d;
            let mut dp = vec![0.0; t_len];
            let mut dq_row = vec![0.0; dh];
            for h in 0..cfg.heads {
                let probs = &lc.probs[h];
                let mask = lc.attn_masks.as_ref().map(|m| &m[h]);
                for i in 0..t_len {
                    let dc = &dctx.row(i)[h * dh..(h + 1) * dh];
                    let prow = &probs[i * t_len..(i + 1) * t_len];
                    for j in 0..=i {
                        let v = &lc.qkv.data[j * stride + 2 * d + h * dh..j * stride + 2 * d + (h + 1) * dh];
                        let m = mask.map_or(1.0, |m| m[i * t_len + j]);
                        dp[j] = dot(dc, v) * m;
                        let w = prow[j] * m;
                        let dv = &mut dqkv.data[j * stride + 2 * d + h * dh..j * stride + 2 * d + (h + 1) * dh];
                        axpy(w, dc, dv);
                    }
                    let s: f64 = (0..=i).map(|j| prow[j] * dp[j]).sum();
                    dq_row.fill(0.0);
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - s) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let k = &lc.qkv.data[j * stride + d + h * dh..j * stride + d + (h + 1) * dh];
                        let q = &lc.qkv.data[i * stride + h * dh..i * stride + (h + 1) * dh];
                        axpy(ds, k, &mut dq_row[..]);
                        let dk = &mut dqkv.data[j * stride + d + h * dh..j * stride + d + (h + 1) * dh];
                        axpy(ds, q, dk);
                    }
                    axpy(1.0, &dq_row, &mut dqkv.data[i * stride + h * dh..i * stride + (h + 1) * dh]);
                }
            }
            bias_backward(&dqkv, grads.data_mut(ids.b_qkv));
            let dh1 = affine_backward(&lc.h1, params.data(ids.w_qkv), &dqkv, grads.data_mut(ids.w_qkv));
            let dx_in_ln = {
                let (mut dg, mut db) = take2(grads, ids.ln1_g, ids.ln1_b);
                let r = layer_norm_backward(&lc.ln1, params.data(ids.ln1_g), &dh1, &mut dg, &mut db);
                put2(grads, ids.ln1_g, ids.ln1_b, dg, db);
                r
            };
            let mut dx_in = dx_mid;
            for (a, b) in dx_in.data.iter_mut().zip(&dx_in_ln.data) {
                *a += b;
            }
            let _ = &lc.x_in;
            dx = dx_in;
        }
        apply_mask(&mut dx, &cache.input_drop);
        Ok(dx)
    }

    pub fn start_decode(&self) -> DecodeState {
        DecodeState {
            qkv: vec![Vec::new(); self.layers.len()],
            len: 0,
        }
    }

    /// Eval-mode forward of one new position given the cached history.
    pub fn decode_step(&self, params: &ParameterSet, x_row: &[f64], state: &mut DecodeState) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let d = cfg.embed_dim;
        if x_row.len() != d {
            return Err(Error::Shape {
                name: "decoder input".into(),
                expected: vec![d],
                got: vec![x_row.len()],
            });
        }
        let i = state.len;
        let dh = cfg.head_dim();
        let mut x = x_row.to_vec();
        let mut xhat = vec![0.0; d];
        let mut h = vec![0.0; d];
        let mut qkv_row = vec![0.0; 3 * d];
        let mut ctx = vec![0.0; d];
        let mut probs = vec![0.0; i + 1];
        let mut ctx_head = vec![0.0; dh];
        let mut a = vec![0.0; d];
        let mut ff = vec![0.0; cfg.ffn_dim];
        let mut f = vec![0.0; d];
        for (ids, hist) in self.layers.iter().zip(state.qkv.iter_mut()) {
            layer_norm_row(&x, params.data(ids.ln1_g), params.data(ids.ln1_b), &mut xhat, &mut h);
            row_affine(&h, params.data(ids.w_qkv), Some(params.data(ids.b_qkv)), &mut qkv_row);
            hist.extend_from_slice(&qkv_row);
            for head in 0..cfg.heads {
                attend_row(hist, 3 * d, i, head, cfg, &mut probs, None, &mut ctx_head);
                ctx[head * dh..(head + 1) * dh].copy_from_slice(&ctx_head);
            }
            row_affine(&ctx, params.data(ids.w_o), Some(params.data(ids.b_o)), &mut a);
            for (v, av) in x.iter_mut().zip(&a) {
                *v += av;
            }
            layer_norm_row(&x, params.data(ids.ln2_g), params.data(ids.ln2_b), &mut xhat, &mut h);
            row_affine(&h, params.data(ids.w_ff1), Some(params.data(ids.b_ff1)), &mut ff);
            for v in &mut ff {
                *v = gelu(*v);
            }
            row_affine(&ff, params.data(ids.w_ff2), Some(params.data(ids.b_ff2)), &mut f);
            for (v, fv) in x.iter_mut().zip(&f) {
                *v += fv;
            }
        }
        let mut y = vec![0.0; d];
        layer_norm_row(&x, params.data(self.lnf_g), params.data(self.lnf_b), &mut xhat, &mut y);
        state.len += 1;
        Ok(y)
    }
}

fn take2(grads: &mut ParameterSet, a: ParamId, b: ParamId) -> (Vec<f64>, Vec<f64>) {
    (
        std::mem::take(&mut grads.get_mut(a).data),
        std::mem::take(&mut grads.get_mut(b).data),
    )
}

fn put2(grads: &mut ParameterSet, a: ParamId, b: ParamId, da: Vec<f64>, db: Vec<f64>) {
    grads.get_mut(a).data = da;
    grads.get_mut(b).data = db;
}
