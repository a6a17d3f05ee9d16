//! The image captioner and the target-language model, both built on a shared
//! embedding → LSTM → vocabulary-projection decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::caption::Caption;
use super::rnn::{lstm_step, uniform_param, zero_param, LstmParams, LstmVars, INIT_SCALE};
use super::vocab::{BOS, EOS, PAD};
use crate::autodiff::{Parameters, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Additive logit for ids the decoder may never emit. Finite so tensors stay
/// finite; its exp underflows to exactly zero.
pub const MASKED_LOGIT: f64 = -1e9;

/// Inverted dropout driven by a caller-owned RNG.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask<T: Real>(&mut self, len: usize) -> Vec<T> {
        let keep = 1.0 - self.rate;
        let scale = T::lit(1.0 / keep);
        (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    fn apply<T: Real>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let m = self.mask(tape.value(x).len());
        Ok(tape.mul_const(x, m)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Debug)]
pub struct DecoderCore<T> {
    pub embed: Tensor<T>,
    pub lstm: LstmParams<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct CoreVars {
    embed: Var,
    lstm: LstmVars,
    out_w: Var,
    out_b: Var,
}

impl<T: Real> DecoderCore<T> {
    pub fn init<R: Rng>(vocab: usize, embed: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            embed: uniform_param(&[vocab, embed], INIT_SCALE, rng),
            lstm: LstmParams::init(embed, hidden, rng),
            out_w: uniform_param(&[hidden, vocab], INIT_SCALE, rng),
            out_b: zero_param(&[vocab]),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.hidden_size()
    }

    fn check(&self) -> Result<()> {
        self.lstm.check()?;
        let v = self.vocab_size();
        let h = self.hidden_size();
        if self.lstm.input_size() != self.embed.shape()[1]
            || self.out_w.shape() != [h, v]
            || self.out_b.len() != v
        {
            return Err(Error::Invalid("decoder parameter shapes disagree".into()));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> CoreVars {
        CoreVars {
            embed: tape.param(&self.embed),
            lstm: self.lstm.bind(tape),
            out_w: tape.param(&self.out_w),
            out_b: tape.param(&self.out_b),
        }
    }

    /// Embeds `tokens`, advances the LSTM and returns log-probabilities over
    /// the vocabulary. PAD and BOS are never emitted; EOS is not allowed
    /// directly after BOS, so every sentence has at least one content token.
    pub fn step(
        &self,
        tape: &mut Tape<T>,
        vars: &CoreVars,
        state: DecoderState,
        tokens: &[usize],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(DecoderState, Var)> {
        let v = self.vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= v) {
            return Err(Error::InvalidToken { id: bad, size: v });
        }
        let mut x = tape.gather_rows(vars.embed, tokens)?;
        if let Some(d) = dropout.as_deref_mut() {
            x = d.apply(tape, x)?;
        }
        let (h, c) = lstm_step(tape, vars.lstm, x, state.h, state.c)?;
        let mut out = h;
        if let Some(d) = dropout.as_deref_mut() {
            out = d.apply(tape, out)?;
        }
        let logits = tape.matmul(out, vars.out_w)?;
        let logits = tape.add_row(logits, vars.out_b)?;
        let mask = output_mask::<T>(tokens, v);
        let logits = tape.add_const(logits, &mask)?;
        let logp = tape.log_softmax(logits)?;
        Ok((DecoderState { h, c }, logp))
    }
}

fn output_mask<T: Real>(tokens: &[usize], vocab: usize) -> Vec<T> {
    let masked = T::lit(MASKED_LOGIT);
    let row = |first: bool| {
        let mut r = vec![T::zero(); vocab];
        r[PAD] = masked;
        r[BOS] = masked;
        if first {
            r[EOS] = masked;
        }
        r
    };
    let firsts = tokens.iter().filter(|&&t| t == BOS).count();
    if firsts == 0 || firsts == tokens.len() {
        row(firsts > 0)
    } else {
        tokens.iter().flat_map(|&t| row(t == BOS)).collect()
    }
}

impl<T: Real> Parameters<T> for DecoderCore<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{p}embed"), &self.embed);
        self.lstm.visit(&format!("{p}lstm."), f);
        f(format!("{p}out_w"), &self.out_w);
        f(format!("{p}out_b"), &self.out_b);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{p}embed"), &mut self.embed);
        self.lstm.visit_mut(&format!("{p}lstm."), f);
        f(format!("{p}out_w"), &mut self.out_w);
        f(format!("{p}out_b"), &mut self.out_b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CaptionerDims {
    pub feature: usize,
    pub embed: usize,
    pub hidden: usize,
    pub vocab: usize,
}

/// Image captioner: the image feature initializes the LSTM hidden state and
/// conditions generation only through it.
#[derive(Clone, Debug)]
pub struct Captioner<T> {
    pub img_w: Tensor<T>,
    pub img_b: Tensor<T>,
    pub core: DecoderCore<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct CaptionerVars {
    img_w: Var,
    img_b: Var,
    pub core: CoreVars,
}

impl<T: Real> Captioner<T> {
    pub fn init<R: Rng>(dims: CaptionerDims, rng: &mut R) -> Self {
        Self {
            img_w: uniform_param(&[dims.feature, dims.hidden], INIT_SCALE, rng),
            img_b: zero_param(&[dims.hidden]),
            core: DecoderCore::init(dims.vocab, dims.embed, dims.hidden, rng),
        }
    }

    pub fn dims(&self) -> CaptionerDims {
        CaptionerDims {
            feature: self.img_w.shape()[0],
            embed: self.core.embed.shape()[1],
            hidden: self.core.hidden_size(),
            vocab: self.core.vocab_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.core.check()?;
        if self.img_w.shape()[1] != self.core.hidden_size() || self.img_b.len() != self.core.hidden_size() {
            return Err(Error::Invalid("image projection does not match hidden size".into()));
        }
        Ok(())
    }

    /// `h0 = v·W + b`, `c0 = 0` for a batch of features `[B, F]`.
    pub fn init_state(&self, tape: &mut Tape<T>, vars: &CaptionerVars, features: &Tensor<T>) -> Result<DecoderState> {
        let f = self.img_w.shape()[0];
        if features.rank() != 2 || features.cols() != f {
            return Err(Error::Dim {
                what: "image feature",
                expected: f,
                got: features.cols(),
            });
        }
        let v = tape.constant(features.clone());
        let h = tape.matmul(v, vars.img_w)?;
        let h = tape.add_row(h, vars.img_b)?;
        let c = tape.constant(Tensor::zeros(&[features.rows(), self.core.hidden_size()]));
        Ok(DecoderState { h, c })
    }
}

impl<T: Real> Parameters<T> for Captioner<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{p}img_w"), &self.img_w);
        f(format!("{p}img_b"), &self.img_b);
        self.core.visit(p, f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{p}img_w"), &mut self.img_w);
        f(format!("{p}img_b"), &mut self.img_b);
        self.core.visit_mut(p, f);
    }
}

/// Unconditional LSTM language model over the target vocabulary.
#[derive(Clone, Debug)]
pub struct LanguageModel<T> {
    pub core: DecoderCore<T>,
}

impl<T: Real> LanguageModel<T> {
    pub fn init<R: Rng>(vocab: usize, embed: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            core: DecoderCore::init(vocab, embed, hidden, rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.core.check()
    }
}

impl<T: Real> Parameters<T> for LanguageModel<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.core.visit(p, f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.core.visit_mut(p, f);
    }
}

/// Common interface of the two generative models.
pub trait SequenceModel<T: Real>: Parameters<T> {
    type Vars: Copy;

    fn bind(&self, tape: &mut Tape<T>) -> Self::Vars;

    fn core(&self) -> &DecoderCore<T>;

    fn core_vars(vars: &Self::Vars) -> &CoreVars;

    /// Initial state for a batch of `batch` rows. Captioners require
    /// `features: [batch, F]`; the language model takes none.
    fn start(
        &self,
        tape: &mut Tape<T>,
        vars: &Self::Vars,
        batch: usize,
        features: Option<&Tensor<T>>,
    ) -> Result<DecoderState>;

    fn step(
        &self,
        tape: &mut Tape<T>,
        vars: &Self::Vars,
        state: DecoderState,
        tokens: &[usize],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(DecoderState, Var)> {
        self.core().step(tape, Self::core_vars(vars), state, tokens, dropout)
    }

    fn vocab_size(&self) -> usize {
        self.core().vocab_size()
    }
}

impl<T: Real> SequenceModel<T> for Captioner<T> {
    type Vars = CaptionerVars;

    fn bind(&self, tape: &mut Tape<T>) -> CaptionerVars {
        CaptionerVars {
            img_w: tape.param(&self.img_w),
            img_b: tape.param(&self.img_b),
            core: self.core.bind(tape),
        }
    }

    fn core(&self) -> &DecoderCore<T> {
        &self.core
    }

    fn core_vars(vars: &CaptionerVars) -> &CoreVars {
        &vars.core
    }

    fn start(&self, tape: &mut Tape<T>, vars: &CaptionerVars, batch: usize, features: Option<&Tensor<T>>) -> Result<DecoderState> {
        let features = features.ok_or_else(|| Error::Invalid("captioner needs image features".into()))?;
        if features.rows() != batch {
            return Err(Error::Length {
                what: "feature rows",
                left: features.rows(),
                right: batch,
            });
        }
        self.init_state(tape, vars, features)
    }
}

impl<T: Real> SequenceModel<T> for LanguageModel<T> {
    type Vars = CoreVars;

    fn bind(&self, tape: &mut Tape<T>) -> CoreVars {
        self.core.bind(tape)
    }

    fn core(&self) -> &DecoderCore<T> {
        &self.core
    }

    fn core_vars(vars: &CoreVars) -> &CoreVars {
        vars
    }

    fn start(&self, tape: &mut Tape<T>, _vars: &CoreVars, batch: usize, features: Option<&Tensor<T>>) -> Result<DecoderState> {
        if features.is_some() {
            return Err(Error::Invalid("language model takes no image features".into()));
        }
        let hsz = self.core.hidden_size();
        let h = tape.constant(Tensor::zeros(&[batch, hsz]));
        let c = tape.constant(Tensor::zeros(&[batch, hsz]));
        Ok(DecoderState { h, c })
    }
}

/// Stacks feature vectors into a `[B, F]` batch.
pub fn feature_batch<T: Real, S: AsRef<[T]>>(rows: &[S]) -> Result<Tensor<T>> {
    let f = rows.first().ok_or(Error::Empty("feature batch"))?.as_ref().len();
    let mut data = Vec::with_capacity(rows.len() * f);
    for r in rows {
        if r.as_ref().len() != f {
            return Err(Error::Dim {
                what: "image feature",
                expected: f,
                got: r.as_ref().len(),
            });
        }
        data.extend_from_slice(r.as_ref());
    }
    Ok(Tensor::matrix(rows.len(), f, data)?)
}

/// Teacher-forced per-token log-probabilities of a batch of captions, kept on
/// the tape so losses can weight and sum them.
pub struct TokenLogProbs {
    steps: Vec<(Var, Vec<(usize, usize)>)>,
    lens: Vec<usize>,
}

impl TokenLogProbs {
    /// `Σ_{i,j} weight(i, j) · log P(w_ij | ...)` over all scored positions.
    pub fn weighted_sum<T: Real>(&self, tape: &mut Tape<T>, weight: impl Fn(usize, usize) -> T) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (var, slots) in &self.steps {
            let w: Vec<T> = slots.iter().map(|&(i, j)| weight(i, j)).collect();
            let term = tape.mul_const(*var, w)?;
            let s = tape.sum(term)?;
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        total.ok_or(Error::Empty("token log-probs"))
    }

    /// Per-sequence log-prob values (length n + 1 each).
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.lens.iter().map(|&n| vec![0.0; n]).collect();
        for (var, slots) in &self.steps {
            for (k, &(i, j)) in slots.iter().enumerate() {
                out[i][j] = tape.value(*var).data()[k].as_f64();
            }
        }
        out
    }

    pub fn scored_lens(&self) -> &[usize] {
        &self.lens
    }
}

/// Runs the model over `BOS w1..wn` for every caption and picks the log-prob
/// of `w1..wn EOS`.
pub fn teacher_forced<T: Real, M: SequenceModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    vars: &M::Vars,
    captions: &[&Caption],
    features: Option<&Tensor<T>>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<TokenLogProbs> {
    if captions.is_empty() {
        return Err(Error::Empty("caption batch"));
    }
    let b = captions.len();
    let vocab = model.vocab_size();
    let lens: Vec<usize> = captions.iter().map(|c| c.scored_len()).collect();
    let steps_n = *lens.iter().max().expect("non-empty");
    let mut state = model.start(tape, vars, b, features)?;
    let mut steps = Vec::with_capacity(steps_n);
    for t in 0..steps_n {
        let tokens: Vec<usize> = captions
            .iter()
            .map(|c| if t < c.scored_len() { c.input_at(t) } else { PAD })
            .collect();
        let (next, logp) = model.step(tape, vars, state, &tokens, dropout.as_deref_mut())?;
        state = next;
        let mut flat = Vec::new();
        let mut slots = Vec::new();
        for (i, c) in captions.iter().enumerate() {
            if t < c.scored_len() {
                flat.push(i * vocab + c.target_at(t));
                slots.push((i, t));
            }
        }
        let picked = tape.pick(logp, &flat)?;
        steps.push((picked, slots));
    }
    Ok(TokenLogProbs { steps, lens })
}

/// Teacher-forced log-probs of one caption: `n + 1` terms including EOS.
pub fn sequence_log_prob<T: Real, M: SequenceModel<T>>(
    model: &M,
    caption: &Caption,
    features: Option<&[T]>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let feats = features.map(|f| feature_batch(&[f])).transpose()?;
    let lp = teacher_forced(model, &mut tape, &vars, &[caption], feats.as_ref(), None)?;
    Ok(lp.values(&tape).remove(0))
}
