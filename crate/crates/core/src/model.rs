//! The full recommender: prefix → LSTM intent → soft prompt, plus hard
//! history tokens → causal scorer → item distribution.

use serde::{Deserialize, Serialize};

use crate::data::{Example, ItemVocab};
use crate::error::{Error, Result};
use crate::lstm::{encode_sequence, encode_with_categories, lstm_backward_into, CellTrace, LstmParams};
use crate::prompt::{
    build_hard_prompt, compose_prompt, soft_prompt_backward, soft_prompt_forward, PromptSequence, PromptTransform,
    SoftTrace, TransformMode,
};
use crate::rng::Rng;
use crate::scorer::{rank_by_score, scorer_backward_into, scorer_forward, ScoredItems, ScorerDims, ScorerParams};
use crate::tensor::{argmax, cross_entropy, Tensor};

/// Uniform init range for every weight matrix and embedding table.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width of one token fed to the LSTM.
    pub d_in: usize,
    pub d_h: usize,
    pub d_lm: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Soft-prompt length.
    pub m: usize,
    pub max_hard_len: usize,
    pub max_len: usize,
    pub prompt_mode: TransformMode,
    /// Hidden width of the `mlp1` prompt transform.
    pub d_f: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 64,
            d_h: 64,
            d_lm: 64,
            d_ff: 128,
            n_layers: 2,
            n_heads: 2,
            m: 4,
            max_hard_len: 8,
            max_len: 64,
            prompt_mode: TransformMode::Affine,
            d_f: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_in", self.d_in),
            ("d_h", self.d_h),
            ("d_lm", self.d_lm),
            ("d_ff", self.d_ff),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("m", self.m),
            ("max_len", self.max_len),
            ("d_f", self.d_f),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.max_hard_len < 2 {
            return Err(Error::Config(
                "max_hard_len must be at least 2 (SEP plus one item)".into(),
            ));
        }
        if self.max_len < 1 + self.m + self.max_hard_len {
            return Err(Error::Config(format!(
                "max_len {} is shorter than 1 + m + max_hard_len = {}",
                self.max_len,
                1 + self.m + self.max_hard_len
            )));
        }
        if !self.d_lm.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_lm {} is not divisible by n_heads {}",
                self.d_lm, self.n_heads
            )));
        }
        Ok(())
    }

    fn scorer_dims(&self, vocab: &ItemVocab) -> ScorerDims {
        ScorerDims {
            n_tokens: vocab.n_tokens(),
            n_items: vocab.n_items(),
            d_lm: self.d_lm,
            d_ff: self.d_ff,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_len: self.max_len,
        }
    }
}

/// Every trainable tensor of the model. Also used as the gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DuipParams {
    pub lstm: LstmParams,
    pub prompt: PromptTransform,
    pub scorer: ScorerParams,
}

impl DuipParams {
    pub fn zeros_like(&self) -> Self {
        DuipParams {
            lstm: self.lstm.zeros_like(),
            prompt: self.prompt.zeros_like(),
            scorer: self.scorer.zeros_like(),
        }
    }

    /// `(name, tensor)` in a fixed order; names are stable checkpoint keys.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = Vec::new();
        v.extend(self.lstm.tensors().into_iter().map(|(n, t)| (format!("lstm.{n}"), t)));
        v.extend(
            self.prompt
                .tensors()
                .into_iter()
                .map(|(n, t)| (format!("prompt.{n}"), t)),
        );
        v.extend(
            self.scorer
                .tensors()
                .into_iter()
                .map(|(n, t)| (format!("scorer.{n}"), t)),
        );
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v: Vec<(String, &mut Tensor)> = Vec::new();
        v.extend(
            self.lstm
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("lstm.{n}"), t)),
        );
        v.extend(
            self.prompt
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("prompt.{n}"), t)),
        );
        v.extend(
            self.scorer
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("scorer.{n}"), t)),
        );
        v
    }

    /// Elementwise `self += other` over matching tensors.
    pub fn accumulate(&mut self, other: &DuipParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::tensor::add_into(a.data_mut(), b.data());
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Intermediate values of one forward pass.
pub struct ForwardPass {
    pub prompt: PromptSequence,
    lstm_trace: CellTrace,
    soft_trace: SoftTrace,
    scorer_trace: crate::scorer::ScorerTrace,
}

impl ForwardPass {
    pub fn probs(&self) -> &Tensor {
        &self.scorer_trace.probs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DuipModel {
    pub config: ModelConfig,
    pub vocab: ItemVocab,
    pub params: DuipParams,
}

impl DuipModel {
    /// Fresh model. The LSTM reads item embeddings concatenated with category
    /// embeddings when the vocabulary carries categories.
    pub fn new(config: ModelConfig, vocab: ItemVocab, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if vocab.n_items() == 0 {
            return Err(Error::domain("vocabulary has no items"));
        }
        let n_tokens = vocab.n_tokens();
        let d_lstm_in = if vocab.has_categories() {
            2 * config.d_in
        } else {
            config.d_in
        };
        let lstm = LstmParams::init(n_tokens, config.d_in, d_lstm_in, config.d_h, rng);
        let prompt = PromptTransform::init(
            config.prompt_mode,
            config.d_h,
            config.d_f,
            config.m,
            config.d_lm,
            INIT_RANGE,
            rng,
        );
        let scorer = ScorerParams::init(config.scorer_dims(&vocab), INIT_RANGE, rng);
        Ok(DuipModel {
            config,
            vocab,
            params: DuipParams { lstm, prompt, scorer },
        })
    }

    /// Reassembles a model from parameters, checking shapes against the config
    /// and vocabulary.
    pub fn from_parts(config: ModelConfig, vocab: ItemVocab, params: DuipParams) -> Result<Self> {
        let mut rng = Rng::new(0);
        let template = DuipModel::new(config, vocab, &mut rng)?;
        let want = template.params.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                want.len(),
                got.len()
            )));
        }
        for ((wn, wt), (gn, gt)) in want.iter().zip(&got) {
            if wn != gn || wt.shape() != gt.shape() {
                return Err(Error::Config(format!(
                    "parameter {gn} {:?} does not fit {wn} {:?}",
                    gt.shape(),
                    wt.shape()
                )));
            }
        }
        Ok(DuipModel {
            config: template.config,
            vocab: template.vocab,
            params,
        })
    }

    pub fn n_items(&self) -> usize {
        self.vocab.n_items()
    }

    fn uses_categories(&self) -> bool {
        self.params.lstm.uses_categories()
    }

    /// Runs the whole pipeline on `prefix`, keeping what the backward pass needs.
    pub fn forward(&self, prefix: &[usize]) -> Result<ForwardPass> {
        if prefix.is_empty() {
            return Err(Error::domain("prefix must contain at least one item"));
        }
        let n_tokens = self.vocab.n_tokens();
        if let Some(&bad) = prefix.iter().find(|&&t| t >= n_tokens) {
            return Err(Error::Index {
                what: "token space",
                index: bad,
                len: n_tokens,
            });
        }
        let p = &self.params;
        let (h, lstm_trace) = if self.uses_categories() {
            let cats: Vec<usize> = prefix
                .iter()
                .map(|&it| {
                    self.vocab
                        .category_of(it)
                        .map_or(self.vocab.unk(), |c| self.vocab.category_token(c))
                })
                .collect();
            encode_with_categories(&p.lstm, prefix, &cats)?
        } else {
            encode_sequence(&p.lstm, prefix)?
        };
        let (soft, soft_trace) = soft_prompt_forward(&p.prompt, h.data())?;
        let hard = build_hard_prompt(prefix, &self.vocab, self.uses_categories(), self.config.max_hard_len);
        let prompt = compose_prompt(self.vocab.user(), &soft, &hard, &p.scorer.token_embed)?;
        let scorer_trace = scorer_forward(&p.scorer, &prompt)?;
        Ok(ForwardPass {
            prompt,
            lstm_trace,
            soft_trace,
            scorer_trace,
        })
    }

    /// `−ln P(target | prompt(prefix))`.
    pub fn forward_loss(&self, example: &Example) -> Result<f64> {
        let pass = self.forward(&example.prefix)?;
        cross_entropy(pass.probs(), example.target)
    }

    /// Loss of `example`, with its gradient accumulated into `grads`.
    pub fn loss_and_grad(&self, example: &Example, grads: &mut DuipParams) -> Result<f64> {
        let pass = self.forward(&example.prefix)?;
        let loss = cross_entropy(pass.probs(), example.target)?;
        let p = &self.params;
        let dprompt = scorer_backward_into(
            &p.scorer,
            &pass.prompt,
            &pass.scorer_trace,
            example.target,
            &mut grads.scorer,
        )?;
        let (m, d_lm) = (p.prompt.m, p.prompt.d_lm);
        // soft vectors sit at positions 1..=m
        let dsoft = Tensor::from_vec(&[m, d_lm], dprompt.data()[d_lm..(1 + m) * d_lm].to_vec())?;
        let dh = soft_prompt_backward(&p.prompt, &pass.soft_trace, &dsoft, &mut grads.prompt)?;
        lstm_backward_into(&p.lstm, &pass.lstm_trace, &dh, &mut grads.lstm)?;
        Ok(loss)
    }

    pub fn score(&self, prefix: &[usize]) -> Result<ScoredItems> {
        let pass = self.forward(prefix)?;
        let probs = pass.scorer_trace.probs;
        Ok(ScoredItems {
            ranking: rank_by_score(probs.data()),
            probs,
        })
    }

    pub fn predict_next(&self, prefix: &[usize]) -> Result<usize> {
        let pass = self.forward(prefix)?;
        Ok(argmax(pass.probs().data()).expect("at least one item"))
    }

    pub fn top_k(&self, prefix: &[usize], k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.n_items() {
            return Err(Error::domain(format!("k = {k} outside 1..={}", self.n_items())));
        }
        let mut ranking = self.score(prefix)?.ranking;
        ranking.truncate(k);
        Ok(ranking)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CategoryTable;
    use crate::gradcheck::{finite_diff_grad, max_relative_error, DEFAULT_STEP};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_in: 4,
            d_h: 8,
            d_lm: 8,
            d_ff: 12,
            n_layers: 1,
            n_heads: 2,
            m: 2,
            max_hard_len: 4,
            max_len: 8,
            prompt_mode: TransformMode::Affine,
            d_f: 6,
        }
    }

    #[test]
    fn untrained_model_is_uniform() {
        let vocab = ItemVocab::from_ids((0..100).map(|i| format!("i{i}")));
        let mut cfg = tiny_config();
        cfg.d_h = 4;
        let model = DuipModel::new(cfg, vocab, &mut Rng::new(1)).unwrap();
        let loss = model
            .forward_loss(&Example {
                prefix: vec![3, 4],
                target: 9,
            })
            .unwrap();
        assert!((loss - 100f64.ln()).abs() < 0.01);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.max_len = 6;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny_config();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    fn randomized(mut model: DuipModel, seed: u64) -> DuipModel {
        let mut rng = Rng::new(seed);
        for (_, t) in model.params.tensors_mut() {
            let noise = rng.uniform_tensor(t.shape(), -0.5, 0.5);
            t.add_assign(&noise).unwrap();
        }
        model
    }

    fn end_to_end_check(model: &DuipModel, example: &Example) {
        let mut grads = model.params.zeros_like();
        model.loss_and_grad(example, &mut grads).unwrap();
        let n = model.params.tensors().len();
        for k in 0..n {
            let numeric = finite_diff_grad(
                |x| {
                    let mut q = model.clone();
                    *q.params.tensors_mut()[k].1 = x.clone();
                    q.forward_loss(example).unwrap()
                },
                model.params.tensors()[k].1,
                DEFAULT_STEP,
            )
            .unwrap();
            let name = &model.params.tensors()[k].0;
            let err = max_relative_error(grads.tensors()[k].1, &numeric);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn end_to_end_gradient_affine() {
        let vocab = ItemVocab::from_ids((0..5).map(|i| format!("i{i}")));
        let model = randomized(DuipModel::new(tiny_config(), vocab, &mut Rng::new(2)).unwrap(), 3);
        end_to_end_check(
            &model,
            &Example {
                prefix: vec![1, 4, 1],
                target: 2,
            },
        );
    }

    #[test]
    fn end_to_end_gradient_mlp_with_categories() {
        let mut vocab = ItemVocab::from_ids((0..5).map(|i| format!("i{i}")));
        let mut table = CategoryTable::default();
        table.insert("i0", "a");
        table.insert("i1", "b");
        table.insert("i4", "a");
        vocab.attach_categories(&table);
        let mut cfg = tiny_config();
        cfg.prompt_mode = TransformMode::Mlp1;
        cfg.max_hard_len = 5;
        cfg.max_len = 8;
        let model = randomized(DuipModel::new(cfg, vocab, &mut Rng::new(4)).unwrap(), 5);
        assert!(model.params.lstm.uses_categories());
        end_to_end_check(
            &model,
            &Example {
                prefix: vec![0, 2, 4],
                target: 1,
            },
        );
    }

    #[test]
    fn from_parts_rejects_mismatched_shapes() {
        let vocab = ItemVocab::from_ids((0..5).map(|i| format!("i{i}")));
        let model = DuipModel::new(tiny_config(), vocab, &mut Rng::new(2)).unwrap();
        let other_vocab = ItemVocab::from_ids((0..6).map(|i| format!("i{i}")));
        assert!(DuipModel::from_parts(tiny_config(), other_vocab, model.params.clone()).is_err());
        let ok = DuipModel::from_parts(tiny_config(), model.vocab.clone(), model.params.clone()).unwrap();
        assert_eq!(ok, model);
    }

    #[test]
    fn soft_positions_depend_on_intent_hard_positions_do_not() {
        let vocab = ItemVocab::from_ids((0..5).map(|i| format!("i{i}")));
        let model = randomized(DuipModel::new(tiny_config(), vocab, &mut Rng::new(2)).unwrap(), 9);
        let a = model.forward(&[1, 2]).unwrap().prompt;
        let b = model.forward(&[3, 2]).unwrap().prompt;
        // [3,2] differs in history but the last hard token (item 2) is shared
        assert_ne!(a.embeddings.row(1), b.embeddings.row(1));
        assert_eq!(a.embeddings.row(a.len() - 1), b.embeddings.row(b.len() - 1));
        assert_eq!(a.embeddings.row(0), b.embeddings.row(0));
    }
}
