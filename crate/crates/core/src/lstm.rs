//! LSTM intent encoder: item embeddings fed through a single LSTM layer whose
//! final hidden state summarizes the session so far.
//!
//! Gate equations, with `⊙` the elementwise product:
//!
//! ```text
//! I = σ(x·W_xi + H_{t-1}·W_hi + b_i)
//! F = σ(x·W_xf + H_{t-1}·W_hf + b_f)
//! O = σ(x·W_xo + H_{t-1}·W_ho + b_o)
//! C̃ = tanh(x·W_xc + H_{t-1}·W_hc + b_c)
//! C = F ⊙ C_{t-1} + I ⊙ C̃
//! H = O ⊙ tanh(C)
//! ```
//!
//! The input `x` is the item's embedding row, optionally concatenated with the
//! embedding of its category token.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid_scalar, Tensor};

pub const INIT_RANGE: f64 = 0.1;
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `[n_tokens × d_embed]`, shared by items, special tokens and categories.
    pub embed: Tensor,
    pub w_xi: Tensor,
    pub w_xf: Tensor,
    pub w_xo: Tensor,
    pub w_xc: Tensor,
    pub w_hi: Tensor,
    pub w_hf: Tensor,
    pub w_ho: Tensor,
    pub w_hc: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

impl LstmParams {
    /// All-zero parameters. `d_in` must be `d_embed` (item only) or
    /// `2 · d_embed` (item ++ category).
    pub fn zeros(n_tokens: usize, d_embed: usize, d_in: usize, d_h: usize) -> Self {
        let wx = || Tensor::zeros(&[d_in, d_h]);
        let wh = || Tensor::zeros(&[d_h, d_h]);
        let b = || Tensor::zeros(&[d_h]);
        LstmParams {
            embed: Tensor::zeros(&[n_tokens, d_embed]),
            w_xi: wx(),
            w_xf: wx(),
            w_xo: wx(),
            w_xc: wx(),
            w_hi: wh(),
            w_hf: wh(),
            w_ho: wh(),
            w_hc: wh(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    /// Weights and embeddings uniform in ±0.1, biases zero except the forget
    /// gate at 1.0.
    pub fn init(n_tokens: usize, d_embed: usize, d_in: usize, d_h: usize, rng: &mut Rng) -> Self {
        let mut p = LstmParams::zeros(n_tokens, d_embed, d_in, d_h);
        for (name, t) in p.tensors_mut() {
            if !name.starts_with("b_") {
                *t = rng.uniform_tensor(t.shape(), -INIT_RANGE, INIT_RANGE);
            }
        }
        p.b_f.fill(FORGET_BIAS_INIT);
        p
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.n_tokens(), self.d_embed(), self.d_in(), self.d_h())
    }

    pub fn n_tokens(&self) -> usize {
        self.embed.rows()
    }

    pub fn d_embed(&self) -> usize {
        self.embed.cols()
    }

    pub fn d_in(&self) -> usize {
        self.w_xi.rows()
    }

    pub fn d_h(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn uses_categories(&self) -> bool {
        self.d_in() == 2 * self.d_embed()
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("embed", &self.embed),
            ("w_xi", &self.w_xi),
            ("w_xf", &self.w_xf),
            ("w_xo", &self.w_xo),
            ("w_xc", &self.w_xc),
            ("w_hi", &self.w_hi),
            ("w_hf", &self.w_hf),
            ("w_ho", &self.w_ho),
            ("w_hc", &self.w_hc),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_c", &self.b_c),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("embed", &mut self.embed),
            ("w_xi", &mut self.w_xi),
            ("w_xf", &mut self.w_xf),
            ("w_xo", &mut self.w_xo),
            ("w_xc", &mut self.w_xc),
            ("w_hi", &mut self.w_hi),
            ("w_hf", &mut self.w_hf),
            ("w_ho", &mut self.w_ho),
            ("w_hc", &mut self.w_hc),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
            ("b_c", &mut self.b_c),
        ]
    }

    fn check_shapes(&self) -> Result<()> {
        let (d_in, d_h) = (self.d_in(), self.d_h());
        for w in [&self.w_xf, &self.w_xo, &self.w_xc] {
            if w.shape() != [d_in, d_h] {
                return Err(Error::dim("lstm input weights", w.shape(), &[d_in, d_h]));
            }
        }
        for w in [&self.w_hi, &self.w_hf, &self.w_ho, &self.w_hc] {
            if w.shape() != [d_h, d_h] {
                return Err(Error::dim("lstm recurrent weights", w.shape(), &[d_h, d_h]));
            }
        }
        for b in [&self.b_i, &self.b_f, &self.b_o, &self.b_c] {
            if b.shape() != [d_h] {
                return Err(Error::dim("lstm bias", b.shape(), &[d_h]));
            }
        }
        if d_in != self.d_embed() && d_in != 2 * self.d_embed() {
            return Err(Error::dim("lstm input width", &[d_in], &[self.d_embed()]));
        }
        Ok(())
    }
}

/// Row `idx` of the embedding table.
pub fn embed_item(params: &LstmParams, idx: usize) -> Result<Tensor> {
    if idx >= params.n_tokens() {
        return Err(Error::Index {
            what: "embedding table",
            index: idx,
            len: params.n_tokens(),
        });
    }
    Ok(Tensor::vector(params.embed.row(idx).to_vec()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(d_h: usize) -> Self {
        LstmState {
            h: vec![0.0; d_h],
            c: vec![0.0; d_h],
        }
    }
}

/// Cached values of one cell step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    /// Embedding rows that were concatenated into `x` (item, then category).
    pub tokens: Vec<usize>,
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellTrace {
    pub steps: Vec<StepTrace>,
}

fn gate_preactivation(x: &[f64], h: &[f64], wx: &Tensor, wh: &Tensor, b: &Tensor) -> Vec<f64> {
    let d_h = b.len();
    let mut z = b.data().to_vec();
    matmul_acc(x, wx.data(), &mut z, 1, x.len(), d_h);
    matmul_acc(h, wh.data(), &mut z, 1, d_h, d_h);
    z
}

/// One LSTM step on input `x`.
pub fn lstm_cell(params: &LstmParams, x: &[f64], prev: &LstmState) -> Result<(LstmState, StepTrace)> {
    params.check_shapes()?;
    let d_h = params.d_h();
    if x.len() != params.d_in() {
        return Err(Error::dim("lstm_cell input", &[x.len()], &[params.d_in()]));
    }
    if prev.h.len() != d_h || prev.c.len() != d_h {
        return Err(Error::dim(
            "lstm_cell state",
            &[prev.h.len(), prev.c.len()],
            &[d_h, d_h],
        ));
    }
    let p = params;
    let sig = |mut v: Vec<f64>| {
        v.iter_mut().for_each(|z| *z = sigmoid_scalar(*z));
        v
    };
    let input_gate = sig(gate_preactivation(x, &prev.h, &p.w_xi, &p.w_hi, &p.b_i));
    let forget_gate = sig(gate_preactivation(x, &prev.h, &p.w_xf, &p.w_hf, &p.b_f));
    let output_gate = sig(gate_preactivation(x, &prev.h, &p.w_xo, &p.w_ho, &p.b_o));
    let mut candidate = gate_preactivation(x, &prev.h, &p.w_xc, &p.w_hc, &p.b_c);
    candidate.iter_mut().for_each(|z| *z = z.tanh());

    let c: Vec<f64> = (0..d_h)
        .map(|j| forget_gate[j] * prev.c[j] + input_gate[j] * candidate[j])
        .collect();
    let h: Vec<f64> = (0..d_h).map(|j| output_gate[j] * c[j].tanh()).collect();

    let state = LstmState {
        h: h.clone(),
        c: c.clone(),
    };
    let trace = StepTrace {
        tokens: Vec::new(),
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        input_gate,
        forget_gate,
        output_gate,
        candidate,
        c,
        h,
    };
    Ok((state, trace))
}

fn step_input(params: &LstmParams, item: usize, category: Option<usize>) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut tokens = vec![item];
    let mut x = embed_item(params, item)?.into_data();
    if let Some(cat) = category {
        x.extend_from_slice(embed_item(params, cat)?.data());
        tokens.push(cat);
    }
    Ok((tokens, x))
}

fn fold_steps(params: &LstmParams, items: &[usize], categories: Option<&[usize]>) -> Result<(Vec<f64>, CellTrace)> {
    if items.is_empty() {
        return Err(Error::domain("cannot encode an empty sequence"));
    }
    let mut state = LstmState::zeros(params.d_h());
    let mut trace = CellTrace::default();
    for (t, &item) in items.iter().enumerate() {
        let (tokens, x) = step_input(params, item, categories.map(|c| c[t]))?;
        let (next, mut step) = lstm_cell(params, &x, &state)?;
        step.tokens = tokens;
        trace.steps.push(step);
        state = next;
    }
    Ok((state.h, trace))
}

/// Left fold of [`lstm_cell`] from the zero state; returns the last hidden
/// state and the per-step trace.
pub fn encode_sequence(params: &LstmParams, items: &[usize]) -> Result<(Tensor, CellTrace)> {
    if params.uses_categories() {
        return Err(Error::State(
            "encoder expects category tokens; use encode_with_categories".into(),
        ));
    }
    let (h, trace) = fold_steps(params, items, None)?;
    Ok((Tensor::vector(h), trace))
}

/// Like [`encode_sequence`], with `categories[t]` the category token whose
/// embedding is appended to step `t`'s input.
pub fn encode_with_categories(
    params: &LstmParams,
    items: &[usize],
    categories: &[usize],
) -> Result<(Tensor, CellTrace)> {
    if !params.uses_categories() {
        return Err(Error::State("encoder was built without category inputs".into()));
    }
    if categories.len() != items.len() {
        return Err(Error::dim("category tokens", &[categories.len()], &[items.len()]));
    }
    let (h, trace) = fold_steps(params, items, Some(categories))?;
    Ok((Tensor::vector(h), trace))
}

/// Backpropagation through time. Accumulates `∂(grad_h_final · h_final)/∂θ`
/// into `grads` for every weight, bias and consumed embedding row.
pub fn lstm_backward_into(
    params: &LstmParams,
    trace: &CellTrace,
    grad_h_final: &[f64],
    grads: &mut LstmParams,
) -> Result<()> {
    let (d_in, d_h) = (params.d_in(), params.d_h());
    if grad_h_final.len() != d_h {
        return Err(Error::dim("lstm_backward grad", &[grad_h_final.len()], &[d_h]));
    }
    if grads.embed.shape() != params.embed.shape() || grads.d_in() != d_in || grads.d_h() != d_h {
        return Err(Error::State("gradient buffer does not match parameters".into()));
    }
    let d_embed = params.d_embed();
    for step in &trace.steps {
        if step.x.len() != d_in
            || step.h.len() != d_h
            || step.tokens.len() * d_embed != d_in
            || step.tokens.iter().any(|&t| t >= params.n_tokens())
        {
            return Err(Error::State("trace was not produced with these parameters".into()));
        }
    }

    let mut dh = grad_h_final.to_vec();
    let mut dc = vec![0.0; d_h];
    let mut da = [vec![0.0; d_h], vec![0.0; d_h], vec![0.0; d_h], vec![0.0; d_h]];
    for step in trace.steps.iter().rev() {
        for j in 0..d_h {
            let tc = step.c[j].tanh();
            let (i, f, o, g) = (
                step.input_gate[j],
                step.forget_gate[j],
                step.output_gate[j],
                step.candidate[j],
            );
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            let d_i = dc[j] * g;
            let d_g = dc[j] * i;
            let d_f = dc[j] * step.c_prev[j];
            da[0][j] = d_i * i * (1.0 - i);
            da[1][j] = d_f * f * (1.0 - f);
            da[2][j] = d_o * o * (1.0 - o);
            da[3][j] = d_g * (1.0 - g * g);
            dc[j] *= f;
        }

        let mut dx = vec![0.0; d_in];
        let mut dh_prev = vec![0.0; d_h];
        let gates = [
            (
                &params.w_xi,
                &params.w_hi,
                &mut grads.w_xi,
                &mut grads.w_hi,
                &mut grads.b_i,
            ),
            (
                &params.w_xf,
                &params.w_hf,
                &mut grads.w_xf,
                &mut grads.w_hf,
                &mut grads.b_f,
            ),
            (
                &params.w_xo,
                &params.w_ho,
                &mut grads.w_xo,
                &mut grads.w_ho,
                &mut grads.b_o,
            ),
            (
                &params.w_xc,
                &params.w_hc,
                &mut grads.w_xc,
                &mut grads.w_hc,
                &mut grads.b_c,
            ),
        ];
        for (g, (wx, wh, gwx, gwh, gb)) in gates.into_iter().enumerate() {
            let a = &da[g];
            matmul_tn_acc(&step.x, a, gwx.data_mut(), 1, d_in, d_h);
            matmul_tn_acc(&step.h_prev, a, gwh.data_mut(), 1, d_h, d_h);
            crate::tensor::add_into(gb.data_mut(), a);
            matmul_nt_acc(a, wx.data(), &mut dx, 1, d_h, d_in);
            matmul_nt_acc(a, wh.data(), &mut dh_prev, 1, d_h, d_h);
        }
        for (slot, &tok) in step.tokens.iter().enumerate() {
            let row = grads.embed.row_mut(tok);
            crate::tensor::add_into(row, &dx[slot * d_embed..(slot + 1) * d_embed]);
        }
        dh = dh_prev;
    }
    Ok(())
}

/// Gradients of `grad_h_final · h_final` w.r.t. all parameters.
pub fn lstm_backward(params: &LstmParams, trace: &CellTrace, grad_h_final: &Tensor) -> Result<LstmParams> {
    let mut grads = params.zeros_like();
    lstm_backward_into(params, trace, grad_h_final.data(), &mut grads)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_relative_error, DEFAULT_STEP};

    fn scalar_params(w: f64) -> LstmParams {
        let mut p = LstmParams::zeros(2, 1, 1, 1);
        for (name, t) in p.tensors_mut() {
            if name.starts_with("w_") {
                t.fill(w);
            }
        }
        p
    }

    #[test]
    fn zero_params_give_half_gates_and_zero_state() {
        let p = LstmParams::zeros(3, 2, 2, 3);
        let (s, tr) = lstm_cell(&p, &[0.7, -1.2], &LstmState::zeros(3)).unwrap();
        assert!(tr
            .input_gate
            .iter()
            .chain(&tr.forget_gate)
            .chain(&tr.output_gate)
            .all(|&g| g == 0.5));
        assert!(tr.candidate.iter().all(|&g| g == 0.0));
        assert!(s.c.iter().chain(&s.h).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_preserve_memory() {
        let mut p = LstmParams::zeros(1, 1, 1, 1);
        p.b_f.fill(20.0);
        p.b_i.fill(-20.0);
        let prev = LstmState {
            h: vec![0.0],
            c: vec![0.7],
        };
        let (s, _) = lstm_cell(&p, &[0.3], &prev).unwrap();
        assert!((s.c[0] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn scalar_hand_evaluation() {
        let p = scalar_params(1.0);
        let (s, tr) = lstm_cell(&p, &[1.0], &LstmState::zeros(1)).unwrap();
        for g in [tr.input_gate[0], tr.forget_gate[0], tr.output_gate[0]] {
            assert!((g - 0.731059).abs() < 1e-5);
        }
        assert!((tr.candidate[0] - 0.761594).abs() < 1e-5);
        // σ(1)·tanh(1) and σ(1)·tanh(σ(1)·tanh(1)), evaluated independently.
        assert!((s.c[0] - 0.556770).abs() < 1e-5);
        assert!((s.h[0] - 0.369606).abs() < 1e-5);
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let p = LstmParams::zeros(3, 2, 2, 3);
        assert!(matches!(
            lstm_cell(&p, &[1.0], &LstmState::zeros(3)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            lstm_cell(&p, &[1.0, 2.0], &LstmState::zeros(2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn embedding_lookup() {
        let mut rng = Rng::new(5);
        let mut p = LstmParams::init(6, 3, 3, 4, &mut rng);
        assert_eq!(embed_item(&p, 0).unwrap().data(), p.embed.row(0));
        assert_eq!(embed_item(&p, 2).unwrap(), embed_item(&p, 2).unwrap());
        p.embed.row_mut(3).fill(1.0);
        assert_eq!(embed_item(&p, 3).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(matches!(embed_item(&p, 6), Err(Error::Index { .. })));
    }

    #[test]
    fn encode_is_a_fold_of_the_cell() {
        let mut rng = Rng::new(9);
        let p = LstmParams::init(10, 4, 4, 5, &mut rng);
        assert!(encode_sequence(&p, &[]).is_err());

        let (h1, _) = encode_sequence(&p, &[3]).unwrap();
        let (s1, _) = lstm_cell(&p, p.embed.row(3), &LstmState::zeros(5)).unwrap();
        assert_eq!(h1.data(), &s1.h[..]);

        let (h2, tr) = encode_sequence(&p, &[3, 7]).unwrap();
        let (s2, _) = lstm_cell(&p, p.embed.row(7), &s1).unwrap();
        assert_eq!(h2.data(), &s2.h[..]);
        assert_eq!(tr.steps.len(), 2);

        let zero = LstmParams::zeros(10, 4, 4, 5);
        assert!(encode_sequence(&zero, &[1]).unwrap().0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = Rng::new(2);
        let p = LstmParams::init(6, 3, 3, 4, &mut rng);
        let (_, tr) = encode_sequence(&p, &[1, 2, 5]).unwrap();
        let g = lstm_backward(&p, &tr, &Tensor::zeros(&[4])).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let mut rng = Rng::new(2);
        let p = LstmParams::init(6, 3, 3, 4, &mut rng);
        let other = LstmParams::init(6, 3, 3, 2, &mut rng);
        let (_, tr) = encode_sequence(&other, &[1, 2]).unwrap();
        assert!(matches!(
            lstm_backward(&p, &tr, &Tensor::zeros(&[4])),
            Err(Error::State(_))
        ));
    }

    /// Objective `Σ_j w_j h_j` with fixed random `w`, checked against central
    /// differences for every parameter tensor.
    fn check_all(p: &LstmParams, items: &[usize], cats: Option<&[usize]>, tol: f64) {
        let d_h = p.d_h();
        let mut rng = Rng::new(77);
        let weights = rng.uniform_tensor(&[d_h], -1.0, 1.0);
        let objective = |q: &LstmParams| {
            let (h, _) = match cats {
                Some(c) => encode_with_categories(q, items, c).unwrap(),
                None => encode_sequence(q, items).unwrap(),
            };
            h.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, tr) = match cats {
            Some(c) => encode_with_categories(p, items, c).unwrap(),
            None => encode_sequence(p, items).unwrap(),
        };
        let grads = lstm_backward(p, &tr, &weights).unwrap();
        let n = p.tensors().len();
        for k in 0..n {
            let (name, base) = p.tensors()[k];
            let numeric = finite_diff_grad(
                |t| {
                    let mut q = p.clone();
                    *q.tensors_mut()[k].1 = t.clone();
                    objective(&q)
                },
                base,
                DEFAULT_STEP,
            )
            .unwrap();
            let err = max_relative_error(grads.tensors()[k].1, &numeric);
            assert!(err < tol, "{name}: relative error {err}");
        }
    }

    #[test]
    fn scalar_case_gradients() {
        let p = scalar_params(1.0);
        check_all(&p, &[0], None, 1e-5);
    }

    #[test]
    fn sequence_gradients_match_finite_differences() {
        let mut rng = Rng::new(31);
        let mut p = LstmParams::init(7, 3, 3, 4, &mut rng);
        for (_, t) in p.tensors_mut() {
            *t = rng.uniform_tensor(t.shape(), -0.8, 0.8);
        }
        check_all(&p, &[2, 5, 2], None, 1e-4);
    }

    #[test]
    fn category_inputs_gradients() {
        let mut rng = Rng::new(8);
        let mut p = LstmParams::init(9, 2, 4, 3, &mut rng);
        for (_, t) in p.tensors_mut() {
            *t = rng.uniform_tensor(t.shape(), -0.8, 0.8);
        }
        check_all(&p, &[0, 3, 1], Some(&[7, 8, 7]), 1e-4);
    }
}
