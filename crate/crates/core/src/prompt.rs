//! Prompt construction: the LSTM hidden state is mapped to `m` soft vectors,
//! recent history (and item categories) become hard tokens, and both are laid
//! out behind a leading USER token as one embedding sequence for the scorer.
//!
//! Layout: `[USER] ++ [soft₁ … soft_m] ++ [SEP, item, (CAT), item, (CAT), …]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ItemVocab;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{add_into, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMode {
    /// `h·W1 + b1`
    Affine,
    /// `tanh(h·W0 + b0)·W1 + b1`
    Mlp1,
}

impl FromStr for TransformMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(TransformMode::Affine),
            "mlp1" => Ok(TransformMode::Mlp1),
            other => Err(Error::Config(format!(
                "unknown prompt transform `{other}` (expected affine or mlp1)"
            ))),
        }
    }
}

impl fmt::Display for TransformMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformMode::Affine => "affine",
            TransformMode::Mlp1 => "mlp1",
        })
    }
}

/// Learnable map from the intent vector `h` to `m` soft-prompt vectors of
/// width `d_lm`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTransform {
    pub mode: TransformMode,
    pub m: usize,
    pub d_lm: usize,
    /// `[d_h × d_f]`, only in [`TransformMode::Mlp1`].
    pub w0: Option<Tensor>,
    pub b0: Option<Tensor>,
    /// `[d_in1 × (m·d_lm)]` where `d_in1` is `d_h` (affine) or `d_f` (mlp1).
    pub w1: Tensor,
    pub b1: Tensor,
}

impl PromptTransform {
    pub fn zeros(mode: TransformMode, d_h: usize, d_f: usize, m: usize, d_lm: usize) -> Self {
        let (w0, b0, d_in1) = match mode {
            TransformMode::Affine => (None, None, d_h),
            TransformMode::Mlp1 => (Some(Tensor::zeros(&[d_h, d_f])), Some(Tensor::zeros(&[d_f])), d_f),
        };
        PromptTransform {
            mode,
            m,
            d_lm,
            w0,
            b0,
            w1: Tensor::zeros(&[d_in1, m * d_lm]),
            b1: Tensor::zeros(&[m * d_lm]),
        }
    }

    /// Weights uniform in `±range`, biases zero.
    pub fn init(mode: TransformMode, d_h: usize, d_f: usize, m: usize, d_lm: usize, range: f64, rng: &mut Rng) -> Self {
        let mut t = PromptTransform::zeros(mode, d_h, d_f, m, d_lm);
        if let Some(w0) = t.w0.as_mut() {
            *w0 = rng.uniform_tensor(w0.shape(), -range, range);
        }
        t.w1 = rng.uniform_tensor(t.w1.shape(), -range, range);
        t
    }

    pub fn zeros_like(&self) -> Self {
        let d_f = self.w0.as_ref().map_or(0, |w| w.cols());
        PromptTransform::zeros(self.mode, self.d_h(), d_f, self.m, self.d_lm)
    }

    pub fn d_h(&self) -> usize {
        match &self.w0 {
            Some(w0) => w0.rows(),
            None => self.w1.rows(),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = Vec::new();
        if let (Some(w0), Some(b0)) = (&self.w0, &self.b0) {
            v.push(("w0", w0));
            v.push(("b0", b0));
        }
        v.push(("w1", &self.w1));
        v.push(("b1", &self.b1));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = Vec::new();
        if let (Some(w0), Some(b0)) = (self.w0.as_mut(), self.b0.as_mut()) {
            v.push(("w0", w0));
            v.push(("b0", b0));
        }
        v.push(("w1", &mut self.w1));
        v.push(("b1", &mut self.b1));
        v
    }
}

/// Forward cache for [`soft_prompt_backward`].
#[derive(Clone, Debug)]
pub struct SoftTrace {
    h: Vec<f64>,
    hidden: Option<Vec<f64>>,
}

/// Returns the soft prompt as an `[m × d_lm]` tensor (one vector per row).
pub fn build_soft_prompt(t: &PromptTransform, h: &Tensor) -> Result<Tensor> {
    soft_prompt_forward(t, h.data()).map(|(p, _)| p)
}

pub fn soft_prompt_forward(t: &PromptTransform, h: &[f64]) -> Result<(Tensor, SoftTrace)> {
    if h.len() != t.d_h() {
        return Err(Error::dim("build_soft_prompt", &[h.len()], &[t.d_h()]));
    }
    let out_w = t.m * t.d_lm;
    if t.w1.cols() != out_w || t.b1.len() != out_w {
        return Err(Error::dim("build_soft_prompt output", t.w1.shape(), &[t.m, t.d_lm]));
    }
    let hidden = match (&t.w0, &t.b0) {
        (Some(w0), Some(b0)) => {
            let mut z = b0.data().to_vec();
            matmul_acc(h, w0.data(), &mut z, 1, h.len(), w0.cols());
            z.iter_mut().for_each(|v| *v = v.tanh());
            Some(z)
        }
        _ => None,
    };
    let input = hidden.as_deref().unwrap_or(h);
    if input.len() != t.w1.rows() {
        return Err(Error::dim("build_soft_prompt", &[input.len()], t.w1.shape()));
    }
    let mut out = t.b1.data().to_vec();
    matmul_acc(input, t.w1.data(), &mut out, 1, input.len(), out_w);
    let prompt = Tensor::from_vec(&[t.m, t.d_lm], out)?;
    Ok((prompt, SoftTrace { h: h.to_vec(), hidden }))
}

/// Accumulates parameter gradients into `grads` and returns `∂L/∂h`.
pub fn soft_prompt_backward(
    t: &PromptTransform,
    trace: &SoftTrace,
    grad_out: &Tensor,
    grads: &mut PromptTransform,
) -> Result<Vec<f64>> {
    let out_w = t.m * t.d_lm;
    if grad_out.len() != out_w {
        return Err(Error::dim("soft_prompt_backward", grad_out.shape(), &[t.m, t.d_lm]));
    }
    let g = grad_out.data();
    let input = trace.hidden.as_deref().unwrap_or(&trace.h);
    matmul_tn_acc(input, g, grads.w1.data_mut(), 1, input.len(), out_w);
    add_into(grads.b1.data_mut(), g);
    let mut d_input = vec![0.0; input.len()];
    matmul_nt_acc(g, t.w1.data(), &mut d_input, 1, out_w, input.len());

    match (&t.w0, &trace.hidden, grads.w0.as_mut(), grads.b0.as_mut()) {
        (Some(w0), Some(z), Some(gw0), Some(gb0)) => {
            let dz: Vec<f64> = d_input.iter().zip(z).map(|(d, z)| d * (1.0 - z * z)).collect();
            matmul_tn_acc(&trace.h, &dz, gw0.data_mut(), 1, trace.h.len(), dz.len());
            add_into(gb0.data_mut(), &dz);
            let mut dh = vec![0.0; trace.h.len()];
            matmul_nt_acc(&dz, w0.data(), &mut dh, 1, dz.len(), trace.h.len());
            Ok(dh)
        }
        (None, None, None, None) => Ok(d_input),
        _ => Err(Error::State("soft prompt trace does not match transform".into())),
    }
}

/// Discrete part of the prompt: `SEP` followed by recent history tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardPrompt {
    pub token_ids: Vec<usize>,
}

impl HardPrompt {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// `[SEP] ++` the most recent prefix items in time order, each followed by its
/// `CAT` token when `with_categories` is set and the item has one. The result
/// never exceeds `max_hard_len` tokens; truncation drops the oldest items
/// first (and, if only one slot is left, the newest item's category token).
pub fn build_hard_prompt(
    prefix: &[usize],
    vocab: &ItemVocab,
    with_categories: bool,
    max_hard_len: usize,
) -> HardPrompt {
    let mut token_ids = Vec::with_capacity(max_hard_len);
    if max_hard_len == 0 {
        return HardPrompt { token_ids };
    }
    token_ids.push(vocab.sep());
    let mut budget = max_hard_len - 1;
    let mut picked: Vec<(usize, Option<usize>)> = Vec::new();
    for &item in prefix.iter().rev() {
        let cat = if with_categories {
            vocab.category_of(item).map(|c| vocab.category_token(c))
        } else {
            None
        };
        let need = 1 + cat.is_some() as usize;
        if need <= budget {
            budget -= need;
            picked.push((item, cat));
        } else {
            if picked.is_empty() && budget >= 1 {
                picked.push((item, None));
            }
            break;
        }
    }
    for (item, cat) in picked.into_iter().rev() {
        token_ids.push(item);
        token_ids.extend(cat);
    }
    HardPrompt { token_ids }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Position {
    /// Embedding row `token` of the scorer's token table.
    Token(usize),
    /// Soft vector `j`, produced from the intent vector.
    Soft(usize),
}

/// Composed prompt: `[T × d_lm]` embeddings plus what each position came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSequence {
    pub embeddings: Tensor,
    pub positions: Vec<Position>,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_soft(&self, pos: usize) -> bool {
        matches!(self.positions[pos], Position::Soft(_))
    }
}

/// Lays out `[USER] ++ soft ++ hard`, looking token embeddings up in
/// `token_embed` (`[n_tokens × d_lm]`).
pub fn compose_prompt(
    user_token: usize,
    soft: &Tensor,
    hard: &HardPrompt,
    token_embed: &Tensor,
) -> Result<PromptSequence> {
    let d_lm = token_embed.cols();
    if soft.shape().len() != 2 || soft.cols() != d_lm {
        return Err(Error::dim("compose_prompt soft vectors", soft.shape(), &[d_lm]));
    }
    let m = soft.rows();
    let n_tokens = token_embed.rows();
    let t_len = 1 + m + hard.len();
    let mut data = Vec::with_capacity(t_len * d_lm);
    let mut positions = Vec::with_capacity(t_len);
    let push_token = |tok: usize, data: &mut Vec<f64>, positions: &mut Vec<Position>| -> Result<()> {
        if tok >= n_tokens {
            return Err(Error::Index {
                what: "token embedding table",
                index: tok,
                len: n_tokens,
            });
        }
        data.extend_from_slice(token_embed.row(tok));
        positions.push(Position::Token(tok));
        Ok(())
    };
    push_token(user_token, &mut data, &mut positions)?;
    for j in 0..m {
        data.extend_from_slice(soft.row(j));
        positions.push(Position::Soft(j));
    }
    for &tok in &hard.token_ids {
        push_token(tok, &mut data, &mut positions)?;
    }
    Ok(PromptSequence {
        embeddings: Tensor::from_vec(&[t_len, d_lm], data)?,
        positions,
    })
}
