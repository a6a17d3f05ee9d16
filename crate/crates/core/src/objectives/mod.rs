//! Training losses: teacher-forced cross-entropy, the self-critical fluency
//! and relevancy losses, the CIDEr self-critical control, and their weighted
//! combination. Every loss is a batch mean.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::CiderScorer;
use crate::seq::{teacher_forced, Caption, Captioner, Dropout, LanguageModel, SequenceModel, TokenLogProbs};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.15,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Invalid(format!("loss weights {w:?} must be non-negative")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Invalid("all loss weights are zero".into()));
        }
        Ok(())
    }
}

fn mean_neg<T: Real>(tape: &mut Tape<T>, lp: &TokenLogProbs, weight: impl Fn(usize, usize) -> f64) -> Result<Var> {
    let b = lp.scored_lens().len() as f64;
    let s = lp.weighted_sum(tape, |i, j| T::lit(-weight(i, j) / b))?;
    Ok(s)
}

/// Mean over the batch of the negated teacher-forced log-prob sum.
pub fn xent_loss<T: Real, M: SequenceModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    vars: &M::Vars,
    captions: &[&Caption],
    features: Option<&Tensor<T>>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let lp = teacher_forced(model, tape, vars, captions, features, dropout)?;
    mean_neg(tape, &lp, |_, _| 1.0)
}

pub fn caption_xent_loss<T: Real>(
    model: &Captioner<T>,
    tape: &mut Tape<T>,
    vars: &<Captioner<T> as SequenceModel<T>>::Vars,
    captions: &[&Caption],
    features: &Tensor<T>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    xent_loss(model, tape, vars, captions, Some(features), dropout)
}

pub fn lm_xent_loss<T: Real>(
    model: &LanguageModel<T>,
    tape: &mut Tape<T>,
    vars: &<LanguageModel<T> as SequenceModel<T>>::Vars,
    sentences: &[&Caption],
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    xent_loss(model, tape, vars, sentences, None, dropout)
}

fn check_batch(lp: &TokenLogProbs, n: usize, what: &'static str) -> Result<()> {
    if lp.scored_lens().len() != n {
        return Err(Error::Length {
            what,
            left: n,
            right: lp.scored_lens().len(),
        });
    }
    Ok(())
}

fn norm(length_norm: bool, len: usize) -> f64 {
    if length_norm {
        1.0 / len as f64
    } else {
        1.0
    }
}

/// `mean_i −a_i Σ_j log P(w_ij)` over the sampled sentences' log-probs
/// `lp`, with `a_i = r(s_s) − r(s_b)`. With `length_norm` each sum is divided
/// by its number of scored tokens.
pub fn selfcritical_loss<T: Real>(
    tape: &mut Tape<T>,
    lp: &TokenLogProbs,
    advantages: &[f64],
    length_norm: bool,
) -> Result<Var> {
    check_batch(lp, advantages.len(), "advantages")?;
    let lens = lp.scored_lens().to_vec();
    mean_neg(tape, lp, |i, _| advantages[i] * norm(length_norm, lens[i]))
}

/// Fluency self-critical loss from sampled and baseline fluency rewards.
pub fn flc_selfcritical_loss<T: Real>(
    tape: &mut Tape<T>,
    lp: &TokenLogProbs,
    sampled: &[f64],
    baseline: &[f64],
    length_norm: bool,
) -> Result<Var> {
    if sampled.len() != baseline.len() {
        return Err(Error::Length {
            what: "baseline rewards",
            left: baseline.len(),
            right: sampled.len(),
        });
    }
    let adv: Vec<f64> = sampled.iter().zip(baseline).map(|(s, b)| s - b).collect();
    selfcritical_loss(tape, lp, &adv, length_norm)
}

/// Multi-level relevancy loss: `mean_i −Σ_j (Δsrlv_i + r_crlv_ij) log P(w_ij)`.
/// `r_crlv[i]` covers content tokens; the EOS term carries `Δsrlv_i` alone.
pub fn rlv_selfcritical_loss<T: Real>(
    tape: &mut Tape<T>,
    lp: &TokenLogProbs,
    srlv_sampled: &[f64],
    srlv_baseline: &[f64],
    r_crlv: &[Vec<f64>],
    length_norm: bool,
) -> Result<Var> {
    check_batch(lp, srlv_sampled.len(), "sentence rewards")?;
    check_batch(lp, srlv_baseline.len(), "baseline rewards")?;
    check_batch(lp, r_crlv.len(), "concept rewards")?;
    let lens = lp.scored_lens().to_vec();
    for (i, r) in r_crlv.iter().enumerate() {
        if r.len() + 1 != lens[i] {
            return Err(Error::Length {
                what: "concept rewards vs sampled tokens",
                left: r.len(),
                right: lens[i] - 1,
            });
        }
    }
    mean_neg(tape, lp, |i, j| {
        let d = srlv_sampled[i] - srlv_baseline[i] + r_crlv[i].get(j).copied().unwrap_or(0.0);
        d * norm(length_norm, lens[i])
    })
}

/// CIDEr advantages of sampled over baseline sentences against each image's
/// pseudo references.
pub fn cider_advantages(
    scorer: &CiderScorer<usize>,
    sampled: &[&Caption],
    baseline: &[&Caption],
    refs: &[Vec<Vec<usize>>],
) -> Result<Vec<f64>> {
    if sampled.len() != baseline.len() || sampled.len() != refs.len() {
        return Err(Error::Length {
            what: "cider batch",
            left: sampled.len(),
            right: baseline.len().min(refs.len()),
        });
    }
    (0..sampled.len())
        .map(|i| Ok(scorer.score(sampled[i].ids(), &refs[i])? - scorer.score(baseline[i].ids(), &refs[i])?))
        .collect()
}

pub fn cider_selfcritical_loss<T: Real>(
    tape: &mut Tape<T>,
    lp: &TokenLogProbs,
    scorer: &CiderScorer<usize>,
    sampled: &[&Caption],
    baseline: &[&Caption],
    refs: &[Vec<Vec<usize>>],
    length_norm: bool,
) -> Result<Var> {
    let adv = cider_advantages(scorer, sampled, baseline, refs)?;
    selfcritical_loss(tape, lp, &adv, length_norm)
}

/// `α L_cap + β L_flc + γ L_rlv`; absent or zero-weighted terms are skipped.
pub fn joint_loss<T: Real>(
    tape: &mut Tape<T>,
    weights: &LossWeights,
    cap: Option<Var>,
    flc: Option<Var>,
    rlv: Option<Var>,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (w, term) in [(weights.alpha, cap), (weights.beta, flc), (weights.gamma, rlv)] {
        let Some(v) = term else { continue };
        if w == 0.0 {
            continue;
        }
        let scaled = tape.scale(v, T::lit(w))?;
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(T::zero()))),
    }
}

#[cfg(test)]
mod tests;
