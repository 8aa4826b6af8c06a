//! Encoder forward pass and its hand-written backward pass.
//!
//! Sequences are packed row-wise into one matrix at their true lengths, so the
//! dense layers run as single large products while attention stays within
//! each sequence. A padded batch is supported by masking pad keys.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{gelu, gelu_grad, gemm, log_softmax_row, View, ViewMut};
use super::params::{LayerOffsets, Layout};
use super::{MlmError, ModelConfig, Scalar};

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<T>,
}

/// Gradient buffer shaped like [`Model::params`].
pub type Grads<T> = Vec<T>;

/// Packed sequences: `(first row, length)` per sequence, in order.
struct Segments {
    spans: Vec<(usize, usize)>,
    /// Start of each sequence's `[heads, len, len]` attention block.
    prob_starts: Vec<usize>,
}

impl Segments {
    fn new(lens: impl IntoIterator<Item = usize>) -> Self {
        let (mut spans, mut prob_starts) = (Vec::new(), Vec::new());
        let (mut row, mut sq) = (0, 0);
        for len in lens {
            spans.push((row, len));
            prob_starts.push(sq);
            row += len;
            sq += len * len;
        }
        prob_starts.push(sq);
        Segments { spans, prob_starts }
    }

    fn prob_len(&self, heads: usize) -> usize {
        heads * self.prob_starts.last().copied().unwrap_or(0)
    }

    fn prob_off(&self, seg: usize, head: usize, heads: usize) -> usize {
        let len = self.spans[seg].1;
        heads * self.prob_starts[seg] + head * len * len
    }
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    x_in: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    probs_mask: Option<Vec<T>>,
    ctx: Vec<T>,
    attn_mask: Option<Vec<T>>,
    ln1: LnCache<T>,
    x1: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
    ffn_mask: Option<Vec<T>>,
    ln2: LnCache<T>,
}

struct SeqCache<T> {
    emb_ln: LnCache<T>,
    emb_mask: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    out: Vec<T>,
}

struct HeadCache<T> {
    hs: Vec<T>,
    z: Vec<T>,
    ln: LnCache<T>,
    u: Vec<T>,
    logp: Vec<T>,
}

fn ln_forward<T: Scalar>(x: &[T], g: &[T], b: &[T], eps: T, cols: usize, out: &mut [T]) -> LnCache<T> {
    let rows = x.len() / cols;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let nf = T::c(cols as f64);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / nf;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nf;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let xh = (row[c] - mean) * rs;
            xhat[r * cols + c] = xh;
            out[r * cols + c] = xh * g[c] + b[c];
        }
    }
    LnCache { xhat, rstd }
}

/// Overwrites `dx`; accumulates into `dg`/`db`.
fn ln_backward<T: Scalar>(dy: &[T], cache: &LnCache<T>, g: &[T], cols: usize, dx: &mut [T], dg: &mut [T], db: &mut [T]) {
    let nf = T::c(cols as f64);
    let mut dxhat = vec![T::zero(); cols];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * cols..(r + 1) * cols];
        let xh = &cache.xhat[r * cols..(r + 1) * cols];
        let mut sum = T::zero();
        let mut dot = T::zero();
        for c in 0..cols {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
            sum += dxhat[c];
            dot += dxhat[c] * xh[c];
        }
        let (mean, mdot) = (sum / nf, dot / nf);
        for c in 0..cols {
            dx[r * cols + c] = rs * (dxhat[c] - mean - xh[c] * mdot);
        }
    }
}

fn dropout_mask<T: Scalar>(rng: Option<&mut ChaCha8Rng>, n: usize, p: f64) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::c(1.0 / (1.0 - p));
    Some((0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect())
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(a, &b)| *a *= b);
    }
}

fn add_bias_rows<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(a, &b)| *a += b);
    }
}

fn col_sums_into<T: Scalar>(x: &[T], cols: usize, out: &mut [T]) {
    for row in x.chunks(cols) {
        out.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, MlmError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = layout.init(config.init_std, seed);
        Ok(Model { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self, MlmError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(MlmError::InvalidConfig(format!("expected {} parameters, got {}", layout.total, params.len())));
        }
        Ok(Model { config, layout, params })
    }

    pub fn zero_grads(&self) -> Grads<T> {
        vec![T::zero(); self.layout.total]
    }

    fn p(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    fn w(&self, off: usize, rows: usize, cols: usize) -> View<'_, T> {
        View::new(&self.params[off..off + rows * cols], rows, cols)
    }

    fn check(&self, ids: &[u32]) -> Result<(), MlmError> {
        if ids.len() > self.config.max_seq_len {
            return Err(MlmError::SequenceTooLong { len: ids.len(), max: self.config.max_seq_len });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(MlmError::TokenOutOfRange(bad));
        }
        Ok(())
    }

    /// Runs the encoder stack over packed sequences. `keys` marks which rows may
    /// be attended to.
    fn encode_cached(&self, ids: &[u32], segs: &Segments, keys: Option<&[bool]>, mut rng: Option<&mut ChaCha8Rng>) -> SeqCache<T> {
        let cfg = &self.config;
        let (n, h) = (ids.len(), cfg.hidden);
        let eps = T::c(cfg.layer_norm_eps);
        let p = cfg.dropout;
        let lay = &self.layout;

        let mut x = vec![T::zero(); n * h];
        for &(start, len) in &segs.spans {
            for t in 0..len {
                let row = start + t;
                let tok = self.p(lay.tok_emb + ids[row] as usize * h, h);
                let pos = self.p(lay.pos_emb + t * h, h);
                for c in 0..h {
                    x[row * h + c] = tok[c] + pos[c];
                }
            }
        }
        let mut z = vec![T::zero(); n * h];
        let emb_ln = ln_forward(&x, self.p(lay.emb_ln_g, h), self.p(lay.emb_ln_b, h), eps, h, &mut z);
        let emb_mask = dropout_mask(rng.as_deref_mut(), n * h, p);
        apply_mask(&mut z, &emb_mask);

        let mut layers = Vec::with_capacity(cfg.layers);
        for lo in &lay.layers {
            let (cache, out) = self.layer_forward(lo, z, segs, keys, rng.as_deref_mut());
            layers.push(cache);
            z = out;
        }
        SeqCache { emb_ln, emb_mask, layers, out: z }
    }

    fn layer_forward(
        &self,
        lo: &LayerOffsets,
        x_in: Vec<T>,
        segs: &Segments,
        keys: Option<&[bool]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (LayerCache<T>, Vec<T>) {
        let cfg = &self.config;
        let (h, f, nh, d) = (cfg.hidden, cfg.intermediate, cfg.heads, cfg.head_dim());
        let n = x_in.len() / h;
        let eps = T::c(cfg.layer_norm_eps);
        let p = cfg.dropout;
        let scale = T::c(1.0 / (d as f64).sqrt());

        let mut qkv = vec![T::zero(); n * 3 * h];
        gemm(T::one(), View::new(&x_in, n, h), self.w(lo.wqkv, h, 3 * h), T::zero(), ViewMut::new(&mut qkv, n, 3 * h));
        add_bias_rows(&mut qkv, self.p(lo.bqkv, 3 * h));

        let mut probs = vec![T::zero(); segs.prob_len(nh)];
        for (si, &(start, len)) in segs.spans.iter().enumerate() {
            let rows = View::new(&qkv, n, 3 * h).rows(start, len);
            for hd in 0..nh {
                let q = rows.cols(hd * d, d);
                let k = rows.cols(h + hd * d, d).t();
                let off = segs.prob_off(si, hd, nh);
                let sm = &mut probs[off..off + len * len];
                gemm(scale, q, k, T::zero(), ViewMut::new(sm, len, len));
                for row in sm.chunks_mut(len) {
                    if let Some(keys) = keys {
                        row.iter_mut().zip(&keys[start..start + len]).filter(|(_, &k)| !k).for_each(|(x, _)| *x = T::neg_infinity());
                    }
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    if max == T::neg_infinity() {
                        row.fill(T::zero());
                        continue;
                    }
                    let mut sum = T::zero();
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        sum += *x;
                    }
                    row.iter_mut().for_each(|x| *x = *x / sum);
                }
            }
        }
        let probs_mask = dropout_mask(rng.as_deref_mut(), probs.len(), p);
        let mut ctx = vec![T::zero(); n * h];
        {
            let mut pd = probs.clone();
            apply_mask(&mut pd, &probs_mask);
            for (si, &(start, len)) in segs.spans.iter().enumerate() {
                for hd in 0..nh {
                    let v = View::new(&qkv, n, 3 * h).rows(start, len).cols(2 * h + hd * d, d);
                    let off = segs.prob_off(si, hd, nh);
                    let ph = View::new(&pd[off..off + len * len], len, len);
                    gemm(T::one(), ph, v, T::zero(), ViewMut::new(&mut ctx, n, h).rows(start, len).cols(hd * d, d));
                }
            }
        }
        let mut a = vec![T::zero(); n * h];
        gemm(T::one(), View::new(&ctx, n, h), self.w(lo.wo, h, h), T::zero(), ViewMut::new(&mut a, n, h));
        add_bias_rows(&mut a, self.p(lo.bo, h));
        let attn_mask = dropout_mask(rng.as_deref_mut(), n * h, p);
        apply_mask(&mut a, &attn_mask);
        a.iter_mut().zip(&x_in).for_each(|(a, &x)| *a += x);
        let mut x1 = vec![T::zero(); n * h];
        let ln1 = ln_forward(&a, self.p(lo.ln1_g, h), self.p(lo.ln1_b, h), eps, h, &mut x1);

        let mut pre = vec![T::zero(); n * f];
        gemm(T::one(), View::new(&x1, n, h), self.w(lo.w1, h, f), T::zero(), ViewMut::new(&mut pre, n, f));
        add_bias_rows(&mut pre, self.p(lo.b1, f));
        let act: Vec<T> = pre.iter().map(|&x| gelu(x)).collect();
        let mut g = vec![T::zero(); n * h];
        gemm(T::one(), View::new(&act, n, f), self.w(lo.w2, f, h), T::zero(), ViewMut::new(&mut g, n, h));
        add_bias_rows(&mut g, self.p(lo.b2, h));
        let ffn_mask = dropout_mask(rng, n * h, p);
        apply_mask(&mut g, &ffn_mask);
        g.iter_mut().zip(&x1).for_each(|(g, &x)| *g += x);
        let mut out = vec![T::zero(); n * h];
        let ln2 = ln_forward(&g, self.p(lo.ln2_g, h), self.p(lo.ln2_b, h), eps, h, &mut out);

        let cache = LayerCache { x_in, qkv, probs, probs_mask, ctx, attn_mask, ln1, x1, pre, act, ffn_mask, ln2 };
        (cache, out)
    }

    /// LM head at the given rows of the final hidden states; returns log-probs `[rows, V]`.
    fn head_forward(&self, out: &[T], positions: &[usize]) -> HeadCache<T> {
        let cfg = &self.config;
        let (h, v, m) = (cfg.hidden, cfg.vocab_size, positions.len());
        let lay = &self.layout;
        let mut hs = vec![T::zero(); m * h];
        for (i, &t) in positions.iter().enumerate() {
            hs[i * h..(i + 1) * h].copy_from_slice(&out[t * h..(t + 1) * h]);
        }
        let mut z = vec![T::zero(); m * h];
        gemm(T::one(), View::new(&hs, m, h), self.w(lay.head_w, h, h), T::zero(), ViewMut::new(&mut z, m, h));
        add_bias_rows(&mut z, self.p(lay.head_b, h));
        let t: Vec<T> = z.iter().map(|&x| gelu(x)).collect();
        let mut u = vec![T::zero(); m * h];
        let ln = ln_forward(&t, self.p(lay.head_ln_g, h), self.p(lay.head_ln_b, h), T::c(cfg.layer_norm_eps), h, &mut u);
        let mut logp = vec![T::zero(); m * v];
        gemm(T::one(), View::new(&u, m, h), self.w(lay.tok_emb, v, h).t(), T::zero(), ViewMut::new(&mut logp, m, v));
        add_bias_rows(&mut logp, self.p(lay.out_bias, v));
        logp.chunks_mut(v).for_each(log_softmax_row);
        HeadCache { hs, z, ln, u, logp }
    }

    /// Log-probabilities `[positions.len(), V]` at chosen positions (dropout off).
    pub fn log_probs_at(&self, ids: &[u32], positions: &[usize]) -> Result<Vec<T>, MlmError> {
        let queries: Vec<(usize, usize)> = positions.iter().map(|&t| (0, t)).collect();
        self.log_probs_batch(&[ids], &queries)
    }

    /// Log-probabilities `[queries.len(), V]` for `(sequence, position)` queries
    /// over several sequences run in one packed pass (dropout off).
    pub fn log_probs_batch(&self, seqs: &[&[u32]], queries: &[(usize, usize)]) -> Result<Vec<T>, MlmError> {
        for s in seqs {
            self.check(s)?;
        }
        let segs = Segments::new(seqs.iter().map(|s| s.len()));
        let mut rows = Vec::with_capacity(queries.len());
        for &(si, t) in queries {
            let len = seqs.get(si).map_or(0, |s| s.len());
            if t >= len {
                return Err(MlmError::InvalidConfig(format!("query ({si}, {t}) outside the batch")));
            }
            rows.push(segs.spans[si].0 + t);
        }
        let ids: Vec<u32> = seqs.concat();
        let cache = self.encode_cached(&ids, &segs, None, None);
        Ok(self.head_forward(&cache.out, &rows).logp)
    }

    /// Log-softmax outputs `[n, V]` for one unpadded sequence (dropout off).
    pub fn logits(&self, ids: &[u32]) -> Result<Vec<T>, MlmError> {
        self.forward_padded(ids, ids.len(), None)
    }

    /// Outputs for a row-major `[batch, seq_len]` id matrix, attending only where
    /// `attend` is true. Returns `[batch, seq_len, V]` log-softmax logits.
    pub fn forward_padded(&self, ids: &[u32], seq_len: usize, attend: Option<&[bool]>) -> Result<Vec<T>, MlmError> {
        assert!(seq_len > 0 && ids.len().is_multiple_of(seq_len), "ids must be a whole number of rows");
        for row in ids.chunks(seq_len) {
            self.check(row)?;
        }
        let segs = Segments::new(std::iter::repeat_n(seq_len, ids.len() / seq_len));
        let rows: Vec<usize> = (0..ids.len()).collect();
        let cache = self.encode_cached(ids, &segs, attend, None);
        Ok(self.head_forward(&cache.out, &rows).logp)
    }

    /// Sum of cross-entropy over `labels`; accumulates `scale ·` its gradient into `grads`.
    /// Dropout is active iff `rng` is given.
    pub fn loss_and_grad(
        &self,
        ids: &[u32],
        labels: &[(usize, u32)],
        scale: T,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut [T],
    ) -> Result<T, MlmError> {
        self.loss_and_grad_batch(&[(ids, labels)], scale, rng, grads)
    }

    /// As [`Model::loss_and_grad`] for several sequences packed into one pass.
    pub fn loss_and_grad_batch(
        &self,
        batch: &[(&[u32], &[(usize, u32)])],
        scale: T,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut [T],
    ) -> Result<T, MlmError> {
        let cfg = &self.config;
        let (h, v) = (cfg.hidden, cfg.vocab_size);
        for (ids, labels) in batch {
            self.check(ids)?;
            for &(t, target) in labels.iter() {
                if t >= ids.len() || target as usize >= v {
                    return Err(MlmError::InvalidConfig(format!("label ({t}, {target}) out of range")));
                }
            }
        }
        let segs = Segments::new(batch.iter().map(|b| b.0.len()));
        let mut positions = Vec::new();
        let mut targets = Vec::new();
        for ((_, labels), &(start, _)) in batch.iter().zip(&segs.spans) {
            for &(t, target) in labels.iter() {
                positions.push(start + t);
                targets.push(target);
            }
        }
        if positions.is_empty() {
            return Ok(T::zero());
        }
        let ids: Vec<u32> = batch.iter().flat_map(|b| b.0.iter().copied()).collect();
        let n = ids.len();
        let lay = &self.layout;
        let cache = self.encode_cached(&ids, &segs, None, rng);
        let head = self.head_forward(&cache.out, &positions);
        let m = positions.len();

        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); m * v];
        for (i, &target) in targets.iter().enumerate() {
            let lp = &head.logp[i * v..(i + 1) * v];
            loss -= lp[target as usize];
            let d = &mut dlogits[i * v..(i + 1) * v];
            for c in 0..v {
                d[c] = lp[c].exp() * scale;
            }
            d[target as usize] -= scale;
        }

        // Head backward.
        let (before, rest) = grads.split_at_mut(lay.out_bias);
        col_sums_into(&dlogits, v, &mut rest[..v]);
        gemm(
            T::one(),
            View::new(&dlogits, m, v).t(),
            View::new(&head.u, m, h),
            T::one(),
            ViewMut::new(&mut before[lay.tok_emb..lay.tok_emb + v * h], v, h),
        );
        let mut du = vec![T::zero(); m * h];
        gemm(T::one(), View::new(&dlogits, m, v), self.w(lay.tok_emb, v, h), T::zero(), ViewMut::new(&mut du, m, h));
        let mut dt = vec![T::zero(); m * h];
        {
            let (g, b) = grads[lay.head_ln_g..lay.head_ln_b + h].split_at_mut(h);
            ln_backward(&du, &head.ln, self.p(lay.head_ln_g, h), h, &mut dt, g, b);
        }
        let dz: Vec<T> = dt.iter().zip(&head.z).map(|(&d, &z)| d * gelu_grad(z)).collect();
        gemm(
            T::one(),
            View::new(&head.hs, m, h).t(),
            View::new(&dz, m, h),
            T::one(),
            ViewMut::new(&mut grads[lay.head_w..lay.head_w + h * h], h, h),
        );
        col_sums_into(&dz, h, &mut grads[lay.head_b..lay.head_b + h]);
        let mut dhs = vec![T::zero(); m * h];
        gemm(T::one(), View::new(&dz, m, h), self.w(lay.head_w, h, h).t(), T::zero(), ViewMut::new(&mut dhs, m, h));
        let mut dx = vec![T::zero(); n * h];
        for (i, &t) in positions.iter().enumerate() {
            for c in 0..h {
                dx[t * h + c] += dhs[i * h + c];
            }
        }

        for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(lo, lc, &segs, &dx, grads);
        }

        // Embeddings.
        apply_mask(&mut dx, &cache.emb_mask);
        let mut de = vec![T::zero(); n * h];
        {
            let (g, b) = grads[lay.emb_ln_g..lay.emb_ln_b + h].split_at_mut(h);
            ln_backward(&dx, &cache.emb_ln, self.p(lay.emb_ln_g, h), h, &mut de, g, b);
        }
        for &(start, len) in &segs.spans {
            for t in 0..len {
                let row = &de[(start + t) * h..(start + t + 1) * h];
                let tok = lay.tok_emb + ids[start + t] as usize * h;
                let pos = lay.pos_emb + t * h;
                for c in 0..h {
                    grads[tok + c] += row[c];
                    grads[pos + c] += row[c];
                }
            }
        }
        Ok(loss)
    }

    /// Returns the gradient w.r.t. the layer input.
    fn layer_backward(&self, lo: &LayerOffsets, lc: &LayerCache<T>, segs: &Segments, dy: &[T], grads: &mut [T]) -> Vec<T> {
        let cfg = &self.config;
        let (h, f, nh, d) = (cfg.hidden, cfg.intermediate, cfg.heads, cfg.head_dim());
        let n = dy.len() / h;
        let scale = T::c(1.0 / (d as f64).sqrt());

        let mut dz2 = vec![T::zero(); n * h];
        {
            let (g, b) = grads[lo.ln2_g..lo.ln2_b + h].split_at_mut(h);
            ln_backward(dy, &lc.ln2, self.p(lo.ln2_g, h), h, &mut dz2, g, b);
        }
        let mut dg = dz2.clone();
        apply_mask(&mut dg, &lc.ffn_mask);
        gemm(T::one(), View::new(&lc.act, n, f).t(), View::new(&dg, n, h), T::one(), ViewMut::new(&mut grads[lo.w2..lo.w2 + f * h], f, h));
        col_sums_into(&dg, h, &mut grads[lo.b2..lo.b2 + h]);
        let mut dact = vec![T::zero(); n * f];
        gemm(T::one(), View::new(&dg, n, h), self.w(lo.w2, f, h).t(), T::zero(), ViewMut::new(&mut dact, n, f));
        let dpre: Vec<T> = dact.iter().zip(&lc.pre).map(|(&a, &p)| a * gelu_grad(p)).collect();
        gemm(T::one(), View::new(&lc.x1, n, h).t(), View::new(&dpre, n, f), T::one(), ViewMut::new(&mut grads[lo.w1..lo.w1 + h * f], h, f));
        col_sums_into(&dpre, f, &mut grads[lo.b1..lo.b1 + f]);
        let mut dx1 = dz2;
        gemm(T::one(), View::new(&dpre, n, f), self.w(lo.w1, h, f).t(), T::one(), ViewMut::new(&mut dx1, n, h));

        let mut dz1 = vec![T::zero(); n * h];
        {
            let (g, b) = grads[lo.ln1_g..lo.ln1_b + h].split_at_mut(h);
            ln_backward(&dx1, &lc.ln1, self.p(lo.ln1_g, h), h, &mut dz1, g, b);
        }
        let mut da = dz1.clone();
        apply_mask(&mut da, &lc.attn_mask);
        gemm(T::one(), View::new(&lc.ctx, n, h).t(), View::new(&da, n, h), T::one(), ViewMut::new(&mut grads[lo.wo..lo.wo + h * h], h, h));
        col_sums_into(&da, h, &mut grads[lo.bo..lo.bo + h]);
        let mut dctx = vec![T::zero(); n * h];
        gemm(T::one(), View::new(&da, n, h), self.w(lo.wo, h, h).t(), T::zero(), ViewMut::new(&mut dctx, n, h));

        let mut pd = lc.probs.clone();
        apply_mask(&mut pd, &lc.probs_mask);
        let mut dqkv = vec![T::zero(); n * 3 * h];
        for (si, &(start, len)) in segs.spans.iter().enumerate() {
            let mut dp = vec![T::zero(); len * len];
            let rows = View::new(&lc.qkv, n, 3 * h).rows(start, len);
            for hd in 0..nh {
                let off = segs.prob_off(si, hd, nh);
                let r = off..off + len * len;
                let dctx_h = View::new(&dctx, n, h).rows(start, len).cols(hd * d, d);
                let v_h = rows.cols(2 * h + hd * d, d);
                gemm(
                    T::one(),
                    View::new(&pd[r.clone()], len, len).t(),
                    dctx_h,
                    T::zero(),
                    ViewMut::new(&mut dqkv, n, 3 * h).rows(start, len).cols(2 * h + hd * d, d),
                );
                gemm(T::one(), dctx_h, v_h.t(), T::zero(), ViewMut::new(&mut dp, len, len));
                if let Some(mask) = &lc.probs_mask {
                    dp.iter_mut().zip(&mask[r.clone()]).for_each(|(a, &b)| *a *= b);
                }
                let probs = &lc.probs[r];
                for i in 0..len {
                    let prow = &probs[i * len..(i + 1) * len];
                    let drow = &mut dp[i * len..(i + 1) * len];
                    let dot = prow.iter().zip(drow.iter()).fold(T::zero(), |a, (&p, &g)| a + p * g);
                    drow.iter_mut().zip(prow).for_each(|(g, &p)| *g = p * (*g - dot));
                }
                let q_h = rows.cols(hd * d, d);
                let k_h = rows.cols(h + hd * d, d);
                gemm(scale, View::new(&dp, len, len), k_h, T::zero(), ViewMut::new(&mut dqkv, n, 3 * h).rows(start, len).cols(hd * d, d));
                gemm(
                    scale,
                    View::new(&dp, len, len).t(),
                    q_h,
                    T::zero(),
                    ViewMut::new(&mut dqkv, n, 3 * h).rows(start, len).cols(h + hd * d, d),
                );
            }
        }
        gemm(
            T::one(),
            View::new(&lc.x_in, n, h).t(),
            View::new(&dqkv, n, 3 * h),
            T::one(),
            ViewMut::new(&mut grads[lo.wqkv..lo.wqkv + h * 3 * h], h, 3 * h),
        );
        col_sums_into(&dqkv, 3 * h, &mut grads[lo.bqkv..lo.bqkv + 3 * h]);
        let mut dx = dz1;
        gemm(T::one(), View::new(&dqkv, n, 3 * h), self.w(lo.wqkv, h, 3 * h).t(), T::one(), ViewMut::new(&mut dx, n, h));
        dx
    }

    /// Attention distributions `[layers][heads, n, n]` for one sequence (dropout off).
    pub fn attention_probs(&self, ids: &[u32]) -> Result<Vec<Vec<T>>, MlmError> {
        self.check(ids)?;
        let cache = self.encode_cached(ids, &Segments::new([ids.len()]), None, None);
        Ok(cache.layers.into_iter().map(|l| l.probs).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            hidden: 8,
            intermediate: 16,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
            max_seq_len: 12,
            vocab_size: vocab,
        }
    }

    #[test]
    fn logits_shape_and_normalization() {
        let m: Model<f64> = Model::new(tiny(30), 1).unwrap();
        let ids = [3u32, 7, 9, 11, 4, 0, 0, 0, 0, 0, 3, 8, 8, 4, 0, 0, 0, 0, 0, 0];
        let out = m.forward_padded(&ids, 10, None).unwrap();
        assert_eq!(out.len(), 2 * 10 * 30);
        for row in out.chunks(30) {
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn padded_tail_has_no_influence() {
        let mut m: Model<f64> = Model::new(tiny(30), 2).unwrap();
        // Larger weights make any leak visible.
        m.params.iter_mut().for_each(|x| *x *= 20.0);
        let a = [3u32, 7, 9, 4, 0, 0, 0];
        let b = [3u32, 7, 9, 4, 0, 0, 0];
        let attend: Vec<bool> = a.iter().map(|&i| i != 0).collect();
        let mut b2 = b;
        // Permute pad-only tail content (pretend pads carry arbitrary ids).
        b2[4..].copy_from_slice(&[12, 5, 21]);
        let x = m.forward_padded(&a, 7, Some(&attend)).unwrap();
        let y = m.forward_padded(&b2, 7, Some(&attend)).unwrap();
        for i in 0..4 * 30 {
            assert!((x[i] - y[i]).abs() < 1e-9);
        }
        let unpadded = m.logits(&a[..4]).unwrap();
        for i in 0..4 * 30 {
            assert!((x[i] - unpadded[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let m: Model<f32> = Model::new(tiny(30), 3).unwrap();
        for layer in m.attention_probs(&[3, 5, 6, 7, 4]).unwrap() {
            for row in layer.chunks(5) {
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        // Zero token embeddings and output bias make every logit zero.
        let mut m: Model<f64> = Model::new(tiny(50), 4).unwrap();
        let r = m.layout.get("embeddings.token").unwrap().range();
        m.params[r].fill(0.0);
        let mut g = m.zero_grads();
        let loss = m.loss_and_grad(&[3, 5, 6, 4], &[(1, 9), (2, 17)], 1.0, None, &mut g).unwrap();
        assert!((loss / 2.0 - (50f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn eval_is_deterministic_and_dropout_is_not() {
        let m: Model<f64> = Model::new(tiny(30), 5).unwrap();
        assert_eq!(m.logits(&[3, 5, 6, 4]).unwrap(), m.logits(&[3, 5, 6, 4]).unwrap());
        let labels = [(1, 5u32), (2, 6)];
        let mut g = m.zero_grads();
        let clean = m.loss_and_grad(&[3, 5, 6, 4], &labels, 1.0, None, &mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noisy = m.loss_and_grad(&[3, 5, 6, 4], &labels, 1.0, Some(&mut rng), &mut g).unwrap();
        assert_ne!(clean, noisy);
    }

    #[test]
    fn rejects_long_and_out_of_vocab() {
        let m: Model<f32> = Model::new(tiny(30), 6).unwrap();
        assert!(matches!(m.logits(&[1; 13]), Err(MlmError::SequenceTooLong { len: 13, max: 12 })));
        assert!(matches!(m.logits(&[1, 30]), Err(MlmError::TokenOutOfRange(30))));
    }
}
