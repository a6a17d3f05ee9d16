use rand::Rng;

use crate::autodiff::{Parameters, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seq::rnn::{uniform_param, zero_param, GruVars, INIT_SCALE};
use crate::seq::{feature_batch, gru_step, GruParams, PAD};

/// Linear image projection followed by L2 normalization.
#[derive(Clone, Debug)]
pub struct ImageEncoder<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct ImageVars {
    w: Var,
    b: Var,
}

impl<T: Real> ImageEncoder<T> {
    pub fn init<R: Rng>(feature: usize, joint: usize, rng: &mut R) -> Self {
        Self {
            w: uniform_param(&[feature, joint], INIT_SCALE, rng),
            b: zero_param(&[joint]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn joint_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ImageVars {
        ImageVars {
            w: tape.param(&self.w),
            b: tape.param(&self.b),
        }
    }

    /// `[B, F]` features to `[B, D]` unit rows.
    pub fn encode(&self, tape: &mut Tape<T>, vars: ImageVars, features: &Tensor<T>) -> Result<Var> {
        if features.rank() != 2 || features.cols() != self.feature_dim() {
            return Err(Error::Dim {
                what: "image feature",
                expected: self.feature_dim(),
                got: features.cols(),
            });
        }
        let v = tape.constant(features.clone());
        let x = tape.matmul(v, vars.w)?;
        let x = tape.add_row(x, vars.b)?;
        Ok(tape.normalize_rows(x)?)
    }

    pub fn embed(&self, features: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.encode(&mut tape, vars, &feature_batch(&[features])?)?;
        Ok(tape.value(out).data().to_vec())
    }
}

impl<T: Real> Parameters<T> for ImageEncoder<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{p}w"), &self.w);
        f(format!("{p}b"), &self.b);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{p}w"), &mut self.w);
        f(format!("{p}b"), &mut self.b);
    }
}

/// Word embeddings, a bidirectional GRU and an optional projection. The
/// sentence vector is the mean of the final forward and backward states.
#[derive(Clone, Debug)]
pub struct SentenceEncoder<T> {
    pub embed: Tensor<T>,
    pub fwd: GruParams<T>,
    pub bwd: GruParams<T>,
    pub proj: Option<(Tensor<T>, Tensor<T>)>,
}

#[derive(Clone, Copy, Debug)]
pub struct SentenceVars {
    embed: Var,
    fwd: GruVars,
    bwd: GruVars,
    proj: Option<(Var, Var)>,
}

impl<T: Real> SentenceEncoder<T> {
    pub fn init<R: Rng>(vocab: usize, embed: usize, hidden: usize, joint: usize, rng: &mut R) -> Self {
        let embed_t = uniform_param(&[vocab, embed], INIT_SCALE, rng);
        let fwd = GruParams::init(embed, hidden, rng);
        let bwd = GruParams::init(embed, hidden, rng);
        let proj = (hidden != joint)
            .then(|| (uniform_param(&[hidden, joint], INIT_SCALE, rng), zero_param(&[joint])));
        Self {
            embed: embed_t,
            fwd,
            bwd,
            proj,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.shape()[0]
    }

    pub fn joint_dim(&self) -> usize {
        match &self.proj {
            Some((w, _)) => w.shape()[1],
            None => self.fwd.hidden_size(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> SentenceVars {
        SentenceVars {
            embed: tape.param(&self.embed),
            fwd: self.fwd.bind(tape),
            bwd: self.bwd.bind(tape),
            proj: self.proj.as_ref().map(|(w, b)| (tape.param(w), tape.param(b))),
        }
    }

    /// Encodes a batch of non-empty token sequences into `[B, D]` unit rows.
    /// Shorter rows hold their state once their tokens run out.
    pub fn encode(&self, tape: &mut Tape<T>, vars: SentenceVars, sentences: &[&[usize]]) -> Result<Var> {
        if sentences.is_empty() {
            return Err(Error::Empty("sentence batch"));
        }
        let v = self.vocab_size();
        for s in sentences {
            if s.is_empty() {
                return Err(Error::Empty("sentence"));
            }
            if let Some(&bad) = s.iter().find(|&&t| t >= v) {
                return Err(Error::InvalidToken { id: bad, size: v });
            }
        }
        let b = sentences.len();
        let hid = self.fwd.hidden_size();
        let max_len = sentences.iter().map(|s| s.len()).max().expect("non-empty");
        let mut hf = tape.constant(Tensor::zeros(&[b, hid]));
        let mut hb = tape.constant(Tensor::zeros(&[b, hid]));
        for t in 0..max_len {
            let active: Vec<bool> = sentences.iter().map(|s| t < s.len()).collect();
            let fwd_tokens: Vec<usize> = sentences
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(PAD))
                .collect();
            let bwd_tokens: Vec<usize> = sentences
                .iter()
                .map(|s| if t < s.len() { s[s.len() - 1 - t] } else { PAD })
                .collect();
            hf = masked_gru(tape, vars.embed, vars.fwd, &fwd_tokens, hf, &active)?;
            hb = masked_gru(tape, vars.embed, vars.bwd, &bwd_tokens, hb, &active)?;
        }
        let sum = tape.add(hf, hb)?;
        let mut out = tape.scale(sum, T::lit(0.5))?;
        if let Some((w, bias)) = vars.proj {
            out = tape.matmul(out, w)?;
            out = tape.add_row(out, bias)?;
        }
        Ok(tape.normalize_rows(out)?)
    }

    pub fn embed_sentence(&self, tokens: &[usize]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.encode(&mut tape, vars, &[tokens])?;
        Ok(tape.value(out).data().to_vec())
    }
}

fn masked_gru<T: Real>(
    tape: &mut Tape<T>,
    embed: Var,
    gru: GruVars,
    tokens: &[usize],
    h: Var,
    active: &[bool],
) -> Result<Var> {
    let x = tape.gather_rows(embed, tokens)?;
    let next = gru_step(tape, gru, x, h)?;
    if active.iter().all(|&a| a) {
        return Ok(next);
    }
    let hid = tape.shape(h)[1];
    let keep: Vec<T> = active
        .iter()
        .flat_map(|&a| std::iter::repeat_n(if a { T::one() } else { T::zero() }, hid))
        .collect();
    let hold: Vec<T> = keep.iter().map(|&k| T::one() - k).collect();
    let a = tape.mul_const(next, keep)?;
    let b = tape.mul_const(h, hold)?;
    Ok(tape.add(a, b)?)
}

impl<T: Real> Parameters<T> for SentenceEncoder<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{p}embed"), &self.embed);
        self.fwd.visit(&format!("{p}fwd."), f);
        self.bwd.visit(&format!("{p}bwd."), f);
        if let Some((w, b)) = &self.proj {
            f(format!("{p}proj_w"), w);
            f(format!("{p}proj_b"), b);
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{p}embed"), &mut self.embed);
        self.fwd.visit_mut(&format!("{p}fwd."), f);
        self.bwd.visit_mut(&format!("{p}bwd."), f);
        if let Some((w, b)) = &mut self.proj {
            f(format!("{p}proj_w"), w);
            f(format!("{p}proj_b"), b);
        }
    }
}

/// One embedding row per concept, normalized when used.
#[derive(Clone, Debug)]
pub struct ConceptEmbedding<T> {
    pub table: Tensor<T>,
}

impl<T: Real> ConceptEmbedding<T> {
    pub fn init<R: Rng>(concepts: usize, joint: usize, rng: &mut R) -> Self {
        Self {
            table: uniform_param(&[concepts, joint], INIT_SCALE, rng),
        }
    }

    pub fn len(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, tape: &mut Tape<T>, table: Var, ids: &[usize]) -> Result<Var> {
        let rows = tape.gather_rows(table, ids)?;
        Ok(tape.normalize_rows(rows)?)
    }

    pub fn embed_concept(&self, id: usize) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let table = tape.param(&self.table);
        let out = self.encode(&mut tape, table, &[id])?;
        Ok(tape.value(out).data().to_vec())
    }

    /// All rows normalized, without recording anything.
    pub fn normalized(&self) -> Vec<Vec<T>> {
        let eps = T::lit(crate::autodiff::NORM_EPS);
        (0..self.len())
            .map(|r| {
                let row = self.table.row(r);
                let n = row.iter().map(|&x| x * x).sum::<T>().sqrt().max(eps);
                row.iter().map(|&x| x / n).collect()
            })
            .collect()
    }
}

impl<T: Real> Parameters<T> for ConceptEmbedding<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{p}table"), &self.table);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{p}table"), &mut self.table);
    }
}

/// Image-sentence matching model `(E_i, E_c)`.
#[derive(Clone, Debug)]
pub struct SentenceVse<T> {
    pub image: ImageEncoder<T>,
    pub sentence: SentenceEncoder<T>,
}

impl<T: Real> Parameters<T> for SentenceVse<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.image.visit(&format!("{p}image."), f);
        self.sentence.visit(&format!("{p}sentence."), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.image.visit_mut(&format!("{p}image."), f);
        self.sentence.visit_mut(&format!("{p}sentence."), f);
    }
}

/// Image-concept matching model `(E_i', E_w)`.
#[derive(Clone, Debug)]
pub struct ConceptVse<T> {
    pub image: ImageEncoder<T>,
    pub concepts: ConceptEmbedding<T>,
}

impl<T: Real> ConceptVse<T> {
    /// Concept ids ordered by similarity to the image (ties: lower id first).
    pub fn rank_concepts(&self, features: &[T]) -> Result<Vec<(usize, f64)>> {
        let v = self.image.embed(features)?;
        let mut scored: Vec<(usize, f64)> = self
            .concepts
            .normalized()
            .iter()
            .enumerate()
            .map(|(i, w)| (i, cosine_sim(&v, w)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }
}

impl<T: Real> Parameters<T> for ConceptVse<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.image.visit(&format!("{p}image."), f);
        self.concepts.visit(&format!("{p}concepts."), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.image.visit_mut(&format!("{p}image."), f);
        self.concepts.visit_mut(&format!("{p}concepts."), f);
    }
}

/// Dot product of two unit vectors, accumulated in f64.
pub fn cosine_sim<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum()
}
