//! Small bidirectional transformer denoiser: token, position, timestep and
//! context embeddings, one single-head attention layer, one feed-forward
//! block and a projection to codebook logits. Parameters live in one flat
//! vector; gradients are computed by hand.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

#[allow(unused_imports)]
use num_traits::Float;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::context::{SceneContext, FEATURE_DIM};
use crate::diffusion::{log_softmax_at, softmax_into, Condition, Denoiser, DenoiserOutput, NoisySequence, Step};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub time_buckets: usize,
    pub feature_dim: usize,
    /// Standard deviation of the output projection at initialization; zero
    /// gives exactly uniform predictions.
    pub output_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 401,
            seq_len: 32,
            dim: 64,
            ff_dim: 128,
            time_buckets: 16,
            feature_dim: FEATURE_DIM,
            output_init_std: 0.01,
        }
    }
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok_emb: Range<usize>,
    mask_emb: Range<usize>,
    pos_emb: Range<usize>,
    time_emb: Range<usize>,
    ctx_w: Range<usize>,
    ctx_b: Range<usize>,
    null_emb: Range<usize>,
    wq: Range<usize>,
    wk: Range<usize>,
    wv: Range<usize>,
    wo: Range<usize>,
    ff1_w: Range<usize>,
    ff1_b: Range<usize>,
    ff2_w: Range<usize>,
    ff2_b: Range<usize>,
    out_w: Range<usize>,
    out_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let d = c.dim;
        let layout = Layout {
            tok_emb: take(c.vocab_size * d),
            mask_emb: take(d),
            pos_emb: take(c.seq_len * d),
            time_emb: take(c.time_buckets * d),
            ctx_w: take(d * c.feature_dim),
            ctx_b: take(d),
            null_emb: take(d),
            wq: take(d * d),
            wk: take(d * d),
            wv: take(d * d),
            wo: take(d * d),
            ff1_w: take(c.ff_dim * d),
            ff1_b: take(c.ff_dim),
            ff2_w: take(d * c.ff_dim),
            ff2_b: take(d),
            out_w: take(c.vocab_size * d),
            out_b: take(c.vocab_size),
            total: 0,
        };
        Layout { total: at, ..layout }
    }

    fn tensors(&self, c: &ModelConfig) -> Vec<(&'static str, Vec<usize>, Range<usize>)> {
        let (d, h, v) = (c.dim, c.ff_dim, c.vocab_size);
        vec![
            ("tok_emb", vec![v, d], self.tok_emb.clone()),
            ("mask_emb", vec![d], self.mask_emb.clone()),
            ("pos_emb", vec![c.seq_len, d], self.pos_emb.clone()),
            ("time_emb", vec![c.time_buckets, d], self.time_emb.clone()),
            ("ctx_w", vec![d, c.feature_dim], self.ctx_w.clone()),
            ("ctx_b", vec![d], self.ctx_b.clone()),
            ("null_emb", vec![d], self.null_emb.clone()),
            ("wq", vec![d, d], self.wq.clone()),
            ("wk", vec![d, d], self.wk.clone()),
            ("wv", vec![d, d], self.wv.clone()),
            ("wo", vec![d, d], self.wo.clone()),
            ("ff1_w", vec![h, d], self.ff1_w.clone()),
            ("ff1_b", vec![h], self.ff1_b.clone()),
            ("ff2_w", vec![d, h], self.ff2_w.clone()),
            ("ff2_b", vec![d], self.ff2_b.clone()),
            ("out_w", vec![v, d], self.out_w.clone()),
            ("out_b", vec![v], self.out_b.clone()),
        ]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut s = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    s[0] + s[1] + s[2] + s[3] + tail
}

/// `y += alpha * x`
#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x (+ b)` with `W` row-major `rows x x.len()`.
fn matvec(w: &[f64], bias: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&w[r * cols..(r + 1) * cols], x) + bias.map_or(0.0, |b| b[r]);
    }
}

/// `dx += W^T dy`
fn matvec_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &w[r * cols..(r + 1) * cols], dx);
        }
    }
}

/// `dW += dy x^T`
fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, x, &mut dw[r * cols..(r + 1) * cols]);
        }
    }
}

/// Activations kept for the backward pass. Matrices are row-major per slot.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tokens: Vec<Option<u32>>,
    bucket: usize,
    null: bool,
    features: Vec<f64>,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    rows: Vec<bool>,
    logits: DenoiserOutput,
}

impl ForwardCache {
    pub fn logits(&self) -> &DenoiserOutput {
        &self.logits
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainableDenoiser {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl TrainableDenoiser {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        validate(&config)?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = rng::from_seed(seed);
        let d = config.dim as f64;
        let mut fill = |range: &Range<usize>, std: f64, params: &mut [f64]| {
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("positive std");
                for p in &mut params[range.clone()] {
                    *p = normal.sample(&mut rng);
                }
            }
        };
        let emb = 0.1;
        fill(&layout.tok_emb, emb, &mut params);
        fill(&layout.mask_emb, emb, &mut params);
        fill(&layout.pos_emb, emb, &mut params);
        fill(&layout.time_emb, emb, &mut params);
        fill(&layout.null_emb, emb, &mut params);
        fill(&layout.ctx_w, 1.0 / (config.feature_dim as f64).sqrt(), &mut params);
        for w in [&layout.wq, &layout.wk, &layout.wv, &layout.wo] {
            fill(w, 1.0 / d.sqrt(), &mut params);
        }
        fill(&layout.ff1_w, (2.0 / d).sqrt(), &mut params);
        fill(&layout.ff2_w, 1.0 / (config.ff_dim as f64).sqrt(), &mut params);
        fill(&layout.out_w, config.output_init_std, &mut params);
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        validate(&config)?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(alloc::format!(
                "{} parameters, configuration needs {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        self.layout
            .tensors(&self.config)
            .into_iter()
            .map(|(name, shape, _)| TensorInfo { name: name.into(), shape })
            .collect()
    }

    /// Named slices of the flat parameter vector, in layout order.
    pub fn tensors(&self) -> Vec<(TensorInfo, &[f64])> {
        self.layout
            .tensors(&self.config)
            .into_iter()
            .map(|(name, shape, range)| (TensorInfo { name: name.into(), shape }, &self.params[range]))
            .collect()
    }

    /// Parameter range of tensor `name`.
    pub fn tensor_range(&self, name: &str) -> Option<Range<usize>> {
        self.layout.tensors(&self.config).into_iter().find(|t| t.0 == name).map(|t| t.2)
    }

    pub fn time_bucket(&self, step: Step) -> usize {
        let b = self.config.time_buckets;
        let raw = (step.fraction() * b as f64 - 1e-9).ceil() as isize - 1;
        raw.clamp(0, b as isize - 1) as usize
    }

    fn check_inputs(&self, noisy: &NoisySequence, ctx: &SceneContext) -> Result<()> {
        if noisy.len() != self.config.seq_len {
            return Err(Error::Shape(alloc::format!("sequence length {} != {}", noisy.len(), self.config.seq_len)));
        }
        if ctx.features.len() != self.config.feature_dim {
            return Err(Error::Shape(alloc::format!(
                "context length {} != {}",
                ctx.features.len(),
                self.config.feature_dim
            )));
        }
        if let Some(t) = noisy.tokens().iter().flatten().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange { token: *t, vocab_size: self.config.vocab_size });
        }
        Ok(())
    }

    /// Logits for every slot.
    pub fn forward(&self, noisy: &NoisySequence, ctx: &SceneContext, step: Step) -> Result<DenoiserOutput> {
        let rows = vec![true; noisy.len()];
        Ok(self.forward_cached(noisy, ctx, step, &rows)?.logits)
    }

    /// Forward pass that only projects the slots flagged in `rows` to logits
    /// (other rows stay zero) and keeps the activations for
    /// [`Self::backward`].
    pub fn forward_cached(
        &self,
        noisy: &NoisySequence,
        ctx: &SceneContext,
        step: Step,
        rows: &[bool],
    ) -> Result<ForwardCache> {
        self.check_inputs(noisy, ctx)?;
        if rows.len() != noisy.len() {
            return Err(Error::Shape(alloc::format!("{} row flags for {} slots", rows.len(), noisy.len())));
        }
        let p = &self.params;
        let l = &self.layout;
        let (n, d, hd, vocab) = (self.config.seq_len, self.config.dim, self.config.ff_dim, self.config.vocab_size);
        let bucket = self.time_bucket(step);

        let mut c = vec![0.0; d];
        if ctx.null {
            c.copy_from_slice(&p[l.null_emb.clone()]);
        } else {
            matvec(&p[l.ctx_w.clone()], Some(&p[l.ctx_b.clone()]), &ctx.features, &mut c);
        }
        let time = &p[l.time_emb.start + bucket * d..][..d];

        let mut x = vec![0.0; n * d];
        for i in 0..n {
            let e = match noisy.token(i) {
                Some(t) => &p[l.tok_emb.start + t as usize * d..][..d],
                None => &p[l.mask_emb.clone()],
            };
            let pos = &p[l.pos_emb.start + i * d..][..d];
            let xi = &mut x[i * d..(i + 1) * d];
            for j in 0..d {
                xi[j] = e[j] + pos[j] + time[j] + c[j];
            }
        }

        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            matvec(&p[l.wq.clone()], None, xi, &mut q[i * d..(i + 1) * d]);
            matvec(&p[l.wk.clone()], None, xi, &mut k[i * d..(i + 1) * d]);
            matvec(&p[l.wv.clone()], None, xi, &mut v[i * d..(i + 1) * d]);
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = vec![0.0; n * n];
        let mut scores = vec![0.0; n];
        for i in 0..n {
            let qi = &q[i * d..(i + 1) * d];
            for j in 0..n {
                scores[j] = dot(qi, &k[j * d..(j + 1) * d]) * scale;
            }
            softmax_into(&scores, &mut attn[i * n..(i + 1) * n]);
        }
        let mut z = vec![0.0; n * d];
        for i in 0..n {
            let zi = &mut z[i * d..(i + 1) * d];
            for j in 0..n {
                axpy(attn[i * n + j], &v[j * d..(j + 1) * d], zi);
            }
        }
        let mut r = x.clone();
        let mut tmp = vec![0.0; d];
        for i in 0..n {
            matvec(&p[l.wo.clone()], None, &z[i * d..(i + 1) * d], &mut tmp);
            axpy(1.0, &tmp, &mut r[i * d..(i + 1) * d]);
        }
        let mut u = vec![0.0; n * hd];
        let mut g = vec![0.0; n * hd];
        let mut h = r.clone();
        for i in 0..n {
            let ui = &mut u[i * hd..(i + 1) * hd];
            matvec(&p[l.ff1_w.clone()], Some(&p[l.ff1_b.clone()]), &r[i * d..(i + 1) * d], ui);
            let gi = &mut g[i * hd..(i + 1) * hd];
            for (gv, uv) in gi.iter_mut().zip(ui.iter()) {
                *gv = uv.max(0.0);
            }
            matvec(&p[l.ff2_w.clone()], Some(&p[l.ff2_b.clone()]), gi, &mut tmp);
            axpy(1.0, &tmp, &mut h[i * d..(i + 1) * d]);
        }
        let mut logits = DenoiserOutput::zeros(n, vocab);
        for i in (0..n).filter(|&i| rows[i]) {
            matvec(&p[l.out_w.clone()], Some(&p[l.out_b.clone()]), &h[i * d..(i + 1) * d], logits.row_mut(i));
        }
        Ok(ForwardCache {
            tokens: noisy.tokens().to_vec(),
            bucket,
            null: ctx.null,
            features: ctx.features.clone(),
            x,
            q,
            k,
            v,
            attn,
            z,
            r,
            u,
            g,
            h,
            rows: rows.to_vec(),
            logits,
        })
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d logits`
    /// (rows not projected in the forward pass must be zero).
    pub fn backward(&self, cache: &ForwardCache, dlogits: &DenoiserOutput, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.layout.total {
            return Err(Error::Shape(alloc::format!("gradient buffer {} != {}", grad.len(), self.layout.total)));
        }
        let p = &self.params;
        let l = &self.layout;
        let (n, d, hd, vocab) = (self.config.seq_len, self.config.dim, self.config.ff_dim, self.config.vocab_size);
        if dlogits.len() != n || dlogits.vocab_size() != vocab {
            return Err(Error::Shape("logit gradient has the wrong shape".into()));
        }

        // Output projection.
        let mut dh = vec![0.0; n * d];
        for i in (0..n).filter(|&i| cache.rows[i]) {
            let dy = dlogits.row(i);
            let hi = &cache.h[i * d..(i + 1) * d];
            matvec_t_acc(&p[l.out_w.clone()], dy, &mut dh[i * d..(i + 1) * d]);
            outer_acc(&mut grad[l.out_w.clone()], dy, hi);
            axpy(1.0, dy, &mut grad[l.out_b.clone()]);
        }

        // Feed-forward block with residual.
        let mut dr = dh.clone();
        let mut dg = vec![0.0; hd];
        for i in 0..n {
            let dhi = &dh[i * d..(i + 1) * d];
            if dhi.iter().all(|&x| x == 0.0) {
                continue;
            }
            outer_acc(&mut grad[l.ff2_w.clone()], dhi, &cache.g[i * hd..(i + 1) * hd]);
            axpy(1.0, dhi, &mut grad[l.ff2_b.clone()]);
            dg.fill(0.0);
            matvec_t_acc(&p[l.ff2_w.clone()], dhi, &mut dg);
            for (gv, uv) in dg.iter_mut().zip(&cache.u[i * hd..(i + 1) * hd]) {
                if *uv <= 0.0 {
                    *gv = 0.0;
                }
            }
            outer_acc(&mut grad[l.ff1_w.clone()], &dg, &cache.r[i * d..(i + 1) * d]);
            axpy(1.0, &dg, &mut grad[l.ff1_b.clone()]);
            matvec_t_acc(&p[l.ff1_w.clone()], &dg, &mut dr[i * d..(i + 1) * d]);
        }

        // Attention with residual: r = x + Wo z.
        let mut dx = dr.clone();
        let mut dz = vec![0.0; n * d];
        for i in 0..n {
            let dri = &dr[i * d..(i + 1) * d];
            outer_acc(&mut grad[l.wo.clone()], dri, &cache.z[i * d..(i + 1) * d]);
            matvec_t_acc(&p[l.wo.clone()], dri, &mut dz[i * d..(i + 1) * d]);
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for i in 0..n {
            let dzi = &dz[i * d..(i + 1) * d];
            let ai = &cache.attn[i * n..(i + 1) * n];
            for j in 0..n {
                da[j] = dot(dzi, &cache.v[j * d..(j + 1) * d]);
                axpy(ai[j], dzi, &mut dv[j * d..(j + 1) * d]);
            }
            let mean = dot(ai, &da);
            let qi = &cache.q[i * d..(i + 1) * d];
            for j in 0..n {
                let ds = ai[j] * (da[j] - mean) * scale;
                if ds != 0.0 {
                    axpy(ds, &cache.k[j * d..(j + 1) * d], &mut dq[i * d..(i + 1) * d]);
                    axpy(ds, qi, &mut dk[j * d..(j + 1) * d]);
                }
            }
        }
        for i in 0..n {
            let xi = &cache.x[i * d..(i + 1) * d];
            let dxi = &mut dx[i * d..(i + 1) * d];
            for (w, dy) in [(&l.wq, &dq), (&l.wk, &dk), (&l.wv, &dv)] {
                let dyi = &dy[i * d..(i + 1) * d];
                outer_acc(&mut grad[w.clone()], dyi, xi);
                matvec_t_acc(&p[w.clone()], dyi, dxi);
            }
        }

        // Embeddings.
        let mut dc = vec![0.0; d];
        for i in 0..n {
            let dxi = &dx[i * d..(i + 1) * d];
            let e = match cache.tokens[i] {
                Some(t) => l.tok_emb.start + t as usize * d,
                None => l.mask_emb.start,
            };
            axpy(1.0, dxi, &mut grad[e..e + d]);
            axpy(1.0, dxi, &mut grad[l.pos_emb.start + i * d..][..d]);
            axpy(1.0, dxi, &mut grad[l.time_emb.start + cache.bucket * d..][..d]);
            axpy(1.0, dxi, &mut dc);
        }
        if cache.null {
            axpy(1.0, &dc, &mut grad[l.null_emb.clone()]);
        } else {
            outer_acc(&mut grad[l.ctx_w.clone()], &dc, &cache.features);
            axpy(1.0, &dc, &mut grad[l.ctx_b.clone()]);
        }
        Ok(())
    }

    /// Mean masked negative log-likelihood of `clean` for one masked
    /// sequence; adds `weight * d loss / d params` to `grad` when given.
    pub fn masked_loss(
        &self,
        noisy: &NoisySequence,
        ctx: &SceneContext,
        step: Step,
        clean: &[u32],
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<(f64, usize)> {
        let rows = noisy.mask_flags();
        let count = rows.iter().filter(|&&m| m).count();
        if count == 0 {
            return Ok((0.0, 0));
        }
        let cache = self.forward_cached(noisy, ctx, step, &rows)?;
        let vocab = self.config.vocab_size;
        let mut dlogits = DenoiserOutput::zeros(noisy.len(), vocab);
        let mut sum = 0.0;
        for i in (0..noisy.len()).filter(|&i| rows[i]) {
            let target = clean[i] as usize;
            let row = dlogits.row_mut(i);
            softmax_into(cache.logits.row(i), row);
            sum -= log_softmax_at(cache.logits.row(i), target);
            row[target] -= 1.0;
        }
        if !sum.is_finite() {
            return Err(Error::NonFiniteLogits { slot: 0 });
        }
        if let Some((grad, weight)) = grad {
            let w = weight / count as f64;
            for i in (0..noisy.len()).filter(|&i| rows[i]) {
                for g in dlogits.row_mut(i) {
                    *g *= w;
                }
            }
            self.backward(&cache, &dlogits, grad)?;
        }
        Ok((sum / count as f64, count))
    }
}

fn validate(c: &ModelConfig) -> Result<()> {
    if c.vocab_size == 0 || c.seq_len == 0 || c.dim == 0 || c.ff_dim == 0 || c.time_buckets == 0 {
        return Err(Error::InvalidArgument("model dimensions must be positive".into()));
    }
    if !(c.output_init_std >= 0.0 && c.output_init_std.is_finite()) {
        return Err(Error::InvalidArgument("output_init_std must be non-negative".into()));
    }
    Ok(())
}

impl Denoiser for TrainableDenoiser {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn denoise(&self, noisy: &NoisySequence, cond: &Condition<'_>, step: Step) -> Result<DenoiserOutput> {
        let ctx = if cond.null { SceneContext::null() } else { SceneContext::encode(cond.scene, cond.goal) };
        self.forward(noisy, &ctx, step)
    }
}
