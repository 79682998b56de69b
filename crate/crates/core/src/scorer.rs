//! Miniature causal transformer that reads a composed prompt and scores every
//! catalog item from the representation at the final position.
//!
//! Blocks are pre-norm: `x += Attn(LN₁(x))`, `x += W₂·gelu(W₁·LN₂(x))`, then a
//! final layer norm and a linear head over the `n_items` item tokens only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{Position, PromptSequence};
use crate::rng::Rng;
use crate::tensor::{
    add_into, argmax, dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_into, Tensor, CE_EPSILON,
};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerDims {
    pub n_tokens: usize,
    pub n_items: usize,
    pub d_lm: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
}

impl ScorerDims {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_items > self.n_tokens {
            return Err(Error::Config(format!(
                "scorer needs 1 ≤ n_items ≤ n_tokens, got {} and {}",
                self.n_items, self.n_tokens
            )));
        }
        if self.n_heads == 0 || !self.d_lm.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_lm {} is not divisible by {} heads",
                self.d_lm, self.n_heads
            )));
        }
        if self.d_lm == 0 || self.d_ff == 0 || self.max_len == 0 {
            return Err(Error::Config("scorer dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_ff1: Tensor,
    pub w_ff2: Tensor,
}

impl Block {
    fn zeros(d: usize, d_ff: usize) -> Self {
        Block {
            ln1_gain: Tensor::zeros(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            w_q: Tensor::zeros(&[d, d]),
            w_k: Tensor::zeros(&[d, d]),
            w_v: Tensor::zeros(&[d, d]),
            w_o: Tensor::zeros(&[d, d]),
            ln2_gain: Tensor::zeros(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
            w_ff1: Tensor::zeros(&[d, d_ff]),
            w_ff2: Tensor::zeros(&[d_ff, d]),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 10] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w_ff1", &self.w_ff1),
            ("w_ff2", &self.w_ff2),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 10] {
        [
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
            ("w_ff1", &mut self.w_ff1),
            ("w_ff2", &mut self.w_ff2),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    pub dims: ScorerDims,
    /// `[n_tokens × d_lm]`; hard-prompt and USER positions read from here.
    pub token_embed: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<Block>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
    /// `[d_lm × n_items]`
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ScorerParams {
    /// All weights zero (layer-norm gains included).
    pub fn zeros(dims: ScorerDims) -> Self {
        let d = dims.d_lm;
        ScorerParams {
            dims,
            token_embed: Tensor::zeros(&[dims.n_tokens, d]),
            pos_embed: Tensor::zeros(&[dims.max_len, d]),
            blocks: (0..dims.n_layers).map(|_| Block::zeros(d, dims.d_ff)).collect(),
            lnf_gain: Tensor::zeros(&[d]),
            lnf_bias: Tensor::zeros(&[d]),
            head_w: Tensor::zeros(&[d, dims.n_items]),
            head_b: Tensor::zeros(&[dims.n_items]),
        }
    }

    /// Embeddings and block weights uniform in `±range`, layer-norm gains 1,
    /// shifts 0, output head zero (so an untrained scorer is uniform).
    pub fn init(dims: ScorerDims, range: f64, rng: &mut Rng) -> Self {
        let mut p = ScorerParams::zeros(dims);
        for (name, t) in p.tensors_mut() {
            if name.ends_with("_gain") {
                t.fill(1.0);
            } else if name.ends_with("_bias") || name.starts_with("head") {
                // zero
            } else {
                *t = rng.uniform_tensor(t.shape(), -range, range);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        ScorerParams::zeros(self.dims)
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("token_embed".to_string(), &self.token_embed),
            ("pos_embed".to_string(), &self.pos_embed),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            v.extend(b.tensors().into_iter().map(|(n, t)| (format!("block{l}.{n}"), t)));
        }
        v.push(("lnf_gain".to_string(), &self.lnf_gain));
        v.push(("lnf_bias".to_string(), &self.lnf_bias));
        v.push(("head_w".to_string(), &self.head_w));
        v.push(("head_b".to_string(), &self.head_b));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![
            ("token_embed".to_string(), &mut self.token_embed),
            ("pos_embed".to_string(), &mut self.pos_embed),
        ];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            v.extend(b.tensors_mut().into_iter().map(|(n, t)| (format!("block{l}.{n}"), t)));
        }
        v.push(("lnf_gain".to_string(), &mut self.lnf_gain));
        v.push(("lnf_bias".to_string(), &mut self.lnf_bias));
        v.push(("head_w".to_string(), &mut self.head_w));
        v.push(("head_b".to_string(), &mut self.head_b));
        v
    }
}

struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let mut out = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            xhat[r * d + j] = xh;
            out[r * d + j] = gain[j] * xh + bias[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LayerNormCache,
    d: usize,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let rows = cache.inv_std.len();
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        let inv = cache.inv_std[r];
        for j in 0..d {
            dx[r * d + j] = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

#[inline]
fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

#[inline]
fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

struct BlockTrace {
    x_in: Vec<f64>,
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, `[T × T]` row-stochastic, zero above the diagonal.
    attn: Vec<Vec<f64>>,
    z: Vec<f64>,
    ln2: LayerNormCache,
    b: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ScorerTrace {
    len: usize,
    blocks: Vec<BlockTrace>,
    lnf: LayerNormCache,
    final_repr: Vec<f64>,
    pub probs: Tensor,
}

impl ScorerTrace {
    /// Attention weights of `layer`/`head` as a `[T × T]` matrix.
    pub fn attention(&self, layer: usize, head: usize) -> Tensor {
        Tensor::from_vec(&[self.len, self.len], self.blocks[layer].attn[head].clone()).expect("square")
    }
}

fn check_prompt(params: &ScorerParams, prompt: &PromptSequence) -> Result<usize> {
    let t = prompt.len();
    if t == 0 {
        return Err(Error::domain("empty prompt"));
    }
    if t > params.dims.max_len {
        return Err(Error::domain(format!(
            "prompt of length {t} exceeds the scorer's max_len {}",
            params.dims.max_len
        )));
    }
    if prompt.embeddings.shape() != [t, params.dims.d_lm] {
        return Err(Error::dim(
            "scorer prompt",
            prompt.embeddings.shape(),
            &[t, params.dims.d_lm],
        ));
    }
    Ok(t)
}

/// Runs the network and keeps the intermediate activations.
pub fn scorer_forward(params: &ScorerParams, prompt: &PromptSequence) -> Result<ScorerTrace> {
    let t_len = check_prompt(params, prompt)?;
    let dims = params.dims;
    let (d, d_ff, n_heads) = (dims.d_lm, dims.d_ff, dims.n_heads);
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = prompt.embeddings.data().to_vec();
    add_into(&mut x, &params.pos_embed.data()[..t_len * d]);

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for blk in &params.blocks {
        let x_in = x.clone();
        let (a, ln1) = layer_norm(&x, t_len, d, blk.ln1_gain.data(), blk.ln1_bias.data());
        let mut q = vec![0.0; t_len * d];
        let mut k = vec![0.0; t_len * d];
        let mut v = vec![0.0; t_len * d];
        matmul_acc(&a, blk.w_q.data(), &mut q, t_len, d, d);
        matmul_acc(&a, blk.w_k.data(), &mut k, t_len, d, d);
        matmul_acc(&a, blk.w_v.data(), &mut v, t_len, d, d);

        let mut z = vec![0.0; t_len * d];
        let mut attn = Vec::with_capacity(n_heads);
        let mut scores = vec![0.0; t_len];
        for h in 0..n_heads {
            let off = h * dh;
            let mut p = vec![0.0; t_len * t_len];
            for i in 0..t_len {
                let qi = &q[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    scores[j] = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                }
                softmax_into(&scores[..=i], &mut p[i * t_len..i * t_len + i + 1]);
                let zi = &mut z[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let w = p[i * t_len + j];
                    for (zz, vv) in zi.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *zz += w * vv;
                    }
                }
            }
            attn.push(p);
        }
        matmul_acc(&z, blk.w_o.data(), &mut x, t_len, d, d);

        let (b, ln2) = layer_norm(&x, t_len, d, blk.ln2_gain.data(), blk.ln2_bias.data());
        let mut u = vec![0.0; t_len * d_ff];
        matmul_acc(&b, blk.w_ff1.data(), &mut u, t_len, d, d_ff);
        let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
        matmul_acc(&g, blk.w_ff2.data(), &mut x, t_len, d_ff, d);

        blocks.push(BlockTrace {
            x_in,
            ln1,
            a,
            q,
            k,
            v,
            attn,
            z,
            ln2,
            b,
            u,
            g,
        });
    }

    let last = &x[(t_len - 1) * d..];
    let (final_repr, lnf) = layer_norm(last, 1, d, params.lnf_gain.data(), params.lnf_bias.data());
    let mut logits = params.head_b.data().to_vec();
    matmul_acc(&final_repr, params.head_w.data(), &mut logits, 1, d, dims.n_items);
    let mut probs = vec![0.0; dims.n_items];
    softmax_into(&logits, &mut probs);

    Ok(ScorerTrace {
        len: t_len,
        blocks,
        lnf,
        final_repr,
        probs: Tensor::vector(probs),
    })
}

/// Item distribution and its ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredItems {
    pub probs: Tensor,
    /// Item indices by descending probability, ties by ascending index.
    pub ranking: Vec<usize>,
}

/// Orders indices by descending score, ties by ascending index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn score_candidates(params: &ScorerParams, prompt: &PromptSequence) -> Result<ScoredItems> {
    let trace = scorer_forward(params, prompt)?;
    let ranking = rank_by_score(trace.probs.data());
    Ok(ScoredItems {
        probs: trace.probs,
        ranking,
    })
}

/// Most probable item, ties to the lowest index.
pub fn predict_next(params: &ScorerParams, prompt: &PromptSequence) -> Result<usize> {
    let trace = scorer_forward(params, prompt)?;
    Ok(argmax(trace.probs.data()).expect("n_items ≥ 1"))
}

pub fn top_k(params: &ScorerParams, prompt: &PromptSequence, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > params.dims.n_items {
        return Err(Error::domain(format!("k = {k} outside 1..={}", params.dims.n_items)));
    }
    let mut ranking = score_candidates(params, prompt)?.ranking;
    ranking.truncate(k);
    Ok(ranking)
}

/// Reverse pass of `−ln(probs[target] + ε)`.
///
/// Parameter gradients accumulate into `grads`; gradients at token positions
/// (USER and hard prompt) go into `grads.token_embed`. The returned `[T × d_lm]`
/// tensor holds the gradient w.r.t. every prompt position's embedding, from
/// which callers take the soft rows.
pub fn scorer_backward_into(
    params: &ScorerParams,
    prompt: &PromptSequence,
    trace: &ScorerTrace,
    target: usize,
    grads: &mut ScorerParams,
) -> Result<Tensor> {
    let dims = params.dims;
    if grads.dims != dims {
        return Err(Error::State("gradient buffer does not match scorer".into()));
    }
    if trace.len != prompt.len() || trace.blocks.len() != params.blocks.len() || trace.probs.len() != dims.n_items {
        return Err(Error::State("trace was not produced by this scorer and prompt".into()));
    }
    if target >= dims.n_items {
        return Err(Error::Index {
            what: "item head",
            index: target,
            len: dims.n_items,
        });
    }
    let t_len = trace.len;
    let (d, d_ff, n_heads) = (dims.d_lm, dims.d_ff, dims.n_heads);
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // ∂/∂logits of −ln(p_t + ε) = r·(p − e_t), r = p_t / (p_t + ε)
    let p = trace.probs.data();
    let r = p[target] / (p[target] + CE_EPSILON);
    let mut dlogits: Vec<f64> = p.iter().map(|&pj| r * pj).collect();
    dlogits[target] -= r;

    matmul_tn_acc(&trace.final_repr, &dlogits, grads.head_w.data_mut(), 1, d, dims.n_items);
    add_into(grads.head_b.data_mut(), &dlogits);
    let mut dfinal = vec![0.0; d];
    matmul_nt_acc(&dlogits, params.head_w.data(), &mut dfinal, 1, dims.n_items, d);
    let dlast = layer_norm_backward(
        &dfinal,
        &trace.lnf,
        d,
        params.lnf_gain.data(),
        grads.lnf_gain.data_mut(),
        grads.lnf_bias.data_mut(),
    );
    let mut dx = vec![0.0; t_len * d];
    dx[(t_len - 1) * d..].copy_from_slice(&dlast);

    for (l, bt) in trace.blocks.iter().enumerate().rev() {
        let blk = &params.blocks[l];
        let gblk = &mut grads.blocks[l];

        // feed-forward residual
        matmul_tn_acc(&bt.g, &dx, gblk.w_ff2.data_mut(), t_len, d_ff, d);
        let mut dg = vec![0.0; t_len * d_ff];
        matmul_nt_acc(&dx, blk.w_ff2.data(), &mut dg, t_len, d, d_ff);
        for (dgv, &uv) in dg.iter_mut().zip(&bt.u) {
            *dgv *= gelu_grad(uv);
        }
        matmul_tn_acc(&bt.b, &dg, gblk.w_ff1.data_mut(), t_len, d, d_ff);
        let mut db = vec![0.0; t_len * d];
        matmul_nt_acc(&dg, blk.w_ff1.data(), &mut db, t_len, d_ff, d);
        let dmid = layer_norm_backward(
            &db,
            &bt.ln2,
            d,
            blk.ln2_gain.data(),
            gblk.ln2_gain.data_mut(),
            gblk.ln2_bias.data_mut(),
        );
        add_into(&mut dx, &dmid);

        // attention residual
        matmul_tn_acc(&bt.z, &dx, gblk.w_o.data_mut(), t_len, d, d);
        let mut dz = vec![0.0; t_len * d];
        matmul_nt_acc(&dx, blk.w_o.data(), &mut dz, t_len, d, d);

        let mut dq = vec![0.0; t_len * d];
        let mut dk = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        let mut dp = vec![0.0; t_len];
        for h in 0..n_heads {
            let off = h * dh;
            let pm = &bt.attn[h];
            for i in 0..t_len {
                let dzi = &dz[i * d + off..i * d + off + dh];
                let prow = &pm[i * t_len..i * t_len + i + 1];
                for j in 0..=i {
                    dp[j] = dot(dzi, &bt.v[j * d + off..j * d + off + dh]);
                    let w = prow[j];
                    for (dvv, &g) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dzi) {
                        *dvv += w * g;
                    }
                }
                let inner: f64 = (0..=i).map(|j| prow[j] * dp[j]).sum();
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * bt.k[j * d + off + c];
                        dk[j * d + off + c] += ds * bt.q[i * d + off + c];
                    }
                }
            }
        }
        matmul_tn_acc(&bt.a, &dq, gblk.w_q.data_mut(), t_len, d, d);
        matmul_tn_acc(&bt.a, &dk, gblk.w_k.data_mut(), t_len, d, d);
        matmul_tn_acc(&bt.a, &dv, gblk.w_v.data_mut(), t_len, d, d);
        let mut da = vec![0.0; t_len * d];
        matmul_nt_acc(&dq, blk.w_q.data(), &mut da, t_len, d, d);
        matmul_nt_acc(&dk, blk.w_k.data(), &mut da, t_len, d, d);
        matmul_nt_acc(&dv, blk.w_v.data(), &mut da, t_len, d, d);
        let din = layer_norm_backward(
            &da,
            &bt.ln1,
            d,
            blk.ln1_gain.data(),
            gblk.ln1_gain.data_mut(),
            gblk.ln1_bias.data_mut(),
        );
        add_into(&mut dx, &din);
        debug_assert_eq!(bt.x_in.len(), dx.len());
    }

    add_into(&mut grads.pos_embed.data_mut()[..t_len * d], &dx);
    for (pos, kind) in prompt.positions.iter().enumerate() {
        if let Position::Token(tok) = *kind {
            add_into(grads.token_embed.row_mut(tok), &dx[pos * d..(pos + 1) * d]);
        }
    }
    Tensor::from_vec(&[t_len, d], dx)
}

/// Forward and backward in one call; returns fresh parameter gradients and
/// the per-position prompt gradient.
pub fn scorer_backward(
    params: &ScorerParams,
    prompt: &PromptSequence,
    target: usize,
) -> Result<(ScorerParams, Tensor)> {
    let trace = scorer_forward(params, prompt)?;
    let mut grads = params.zeros_like();
    let dprompt = scorer_backward_into(params, prompt, &trace, target, &mut grads)?;
    Ok((grads, dprompt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_relative_error, DEFAULT_STEP};
    use crate::tensor::cross_entropy;

    fn dims(n_items: usize) -> ScorerDims {
        ScorerDims {
            n_tokens: n_items + 4,
            n_items,
            d_lm: 8,
            d_ff: 12,
            n_layers: 1,
            n_heads: 2,
            max_len: 6,
        }
    }

    fn token_prompt(params: &ScorerParams, tokens: &[usize]) -> PromptSequence {
        let d = params.dims.d_lm;
        let mut data = Vec::new();
        for &t in tokens {
            data.extend_from_slice(params.token_embed.row(t));
        }
        PromptSequence {
            embeddings: Tensor::from_vec(&[tokens.len(), d], data).unwrap(),
            positions: tokens.iter().map(|&t| Position::Token(t)).collect(),
        }
    }

    fn random_params(dims: ScorerDims, seed: u64) -> ScorerParams {
        let mut rng = Rng::new(seed);
        let mut p = ScorerParams::init(dims, 0.5, &mut rng);
        for (_, t) in p.tensors_mut() {
            let noise = rng.uniform_tensor(t.shape(), -0.5, 0.5);
            t.add_assign(&noise).unwrap();
        }
        p
    }

    #[test]
    fn constant_logits_give_uniform_probs() {
        let mut p = ScorerParams::zeros(dims(5));
        p.head_b.fill(0.3);
        let prompt = token_prompt(&p, &[1, 2]);
        let s = score_candidates(&p, &prompt).unwrap();
        assert!(s.probs.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert_eq!(s.ranking, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn head_bias_closed_form() {
        let mut p = ScorerParams::zeros(dims(2));
        p.head_b = Tensor::vector(vec![0.0, 3f64.ln()]);
        let prompt = token_prompt(&p, &[0]);
        let s = score_candidates(&p, &prompt).unwrap();
        assert!((s.probs.data()[0] - 0.25).abs() < 1e-9);
        assert!((s.probs.data()[1] - 0.75).abs() < 1e-9);

        let mut shifted = p.clone();
        shifted.head_b.data_mut().iter_mut().for_each(|b| *b += 4.2);
        let s2 = score_candidates(&shifted, &prompt).unwrap();
        for (a, b) in s.probs.data().iter().zip(s2.probs.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_and_topk() {
        let mut p = ScorerParams::zeros(dims(4));
        p.head_b = Tensor::vector(vec![0.4f64.ln(), 0.3f64.ln(), 0.2f64.ln(), 0.1f64.ln()]);
        let prompt = token_prompt(&p, &[0]);
        assert_eq!(top_k(&p, &prompt, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_k(&p, &prompt, 1).unwrap(), vec![predict_next(&p, &prompt).unwrap()]);
        assert_eq!(top_k(&p, &prompt, 4).unwrap().len(), 4);
        assert!(top_k(&p, &prompt, 0).is_err());
        assert!(top_k(&p, &prompt, 5).is_err());

        p.head_b = Tensor::vector(vec![0.1f64.ln(), 0.7f64.ln(), 0.2f64.ln(), -50.0]);
        assert_eq!(predict_next(&p, &prompt).unwrap(), 1);
        p.head_b = Tensor::vector(vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(predict_next(&p, &prompt).unwrap(), 0);
    }

    #[test]
    fn too_long_prompt_is_rejected() {
        let p = ScorerParams::zeros(dims(3));
        let prompt = token_prompt(&p, &[0, 1, 2, 0, 1, 2, 0]);
        assert!(matches!(score_candidates(&p, &prompt), Err(Error::Domain(_))));
    }

    #[test]
    fn attention_rows_are_distributions_and_causal() {
        let p = random_params(dims(5), 3);
        let prompt = token_prompt(&p, &[0, 3, 1, 4, 2]);
        let tr = scorer_forward(&p, &prompt).unwrap();
        for h in 0..2 {
            let a = tr.attention(0, h);
            for i in 0..5 {
                let row = a.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row[i + 1..].iter().all(|&w| w == 0.0));
            }
        }
    }

    #[test]
    fn prefix_scoring_ignores_later_positions() {
        // Scoring a length-j prefix equals scoring the full prompt truncated
        // at j, and perturbing position j leaves earlier positions' scores alone.
        let p = random_params(dims(5), 4);
        let full = token_prompt(&p, &[0, 3, 1, 4]);
        let short = token_prompt(&p, &[0, 3]);
        let mut truncated = full.clone();
        truncated.positions.truncate(2);
        truncated.embeddings = Tensor::from_vec(&[2, 8], full.embeddings.data()[..16].to_vec()).unwrap();
        assert_eq!(
            score_candidates(&p, &short).unwrap(),
            score_candidates(&p, &truncated).unwrap()
        );
        let mut perturbed = full.clone();
        perturbed.embeddings.row_mut(3).iter_mut().for_each(|v| *v += 1.0);
        let a = scorer_forward(&p, &full).unwrap();
        let b = scorer_forward(&p, &perturbed).unwrap();
        for l in 0..1 {
            for i in 0..3 {
                assert_eq!(a.blocks[l].z[i * 8..(i + 1) * 8], b.blocks[l].z[i * 8..(i + 1) * 8]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dims = ScorerDims {
            n_tokens: 9,
            n_items: 5,
            d_lm: 8,
            d_ff: 12,
            n_layers: 1,
            n_heads: 2,
            max_len: 6,
        };
        let p = random_params(dims, 11);
        let tokens = [6usize, 2, 7, 4];
        let prompt = token_prompt(&p, &tokens);
        let target = 3;
        let loss = |q: &ScorerParams| {
            let pr = token_prompt(q, &tokens);
            cross_entropy(&scorer_forward(q, &pr).unwrap().probs, target).unwrap()
        };
        let trace = scorer_forward(&p, &prompt).unwrap();
        let mut grads = p.zeros_like();
        scorer_backward_into(&p, &prompt, &trace, target, &mut grads).unwrap();
        let n = p.tensors().len();
        for k in 0..n {
            let numeric = finite_diff_grad(
                |x| {
                    let mut q = p.clone();
                    *q.tensors_mut()[k].1 = x.clone();
                    loss(&q)
                },
                p.tensors()[k].1,
                DEFAULT_STEP,
            )
            .unwrap();
            let name = p.tensors()[k].0.clone();
            let err = max_relative_error(grads.tensors()[k].1, &numeric);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
        // pos_embed rows past the prompt never receive gradient
        assert!(grads.pos_embed.data()[4 * 8..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn prompt_gradient_matches_finite_differences() {
        let p = random_params(dims(5), 12);
        let mut prompt = token_prompt(&p, &[5, 0, 2]);
        prompt.positions[1] = Position::Soft(0);
        let (_, dprompt) = scorer_backward(&p, &prompt, 1).unwrap();
        let numeric = finite_diff_grad(
            |e| {
                let pr = PromptSequence {
                    embeddings: e.clone(),
                    positions: prompt.positions.clone(),
                };
                cross_entropy(&scorer_forward(&p, &pr).unwrap().probs, 1).unwrap()
            },
            &prompt.embeddings,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(max_relative_error(&dprompt, &numeric) < 1e-4);
    }
}
