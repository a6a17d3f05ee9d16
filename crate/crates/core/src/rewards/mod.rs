//! Self-supervised reward signals: fluency under a frozen language model,
//! sentence-level and concept-level visual relevancy under frozen VSE models.
//! All values are plain numbers computed on private tapes.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::error::{Error, Result};
use crate::seq::{feature_batch, teacher_forced, Caption, SequenceModel, Vocabulary};
use crate::vse::{cosine_sim, ConceptVocabulary, ConceptVse, SentenceVse};

pub const LAMBDA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub image_id: u64,
    pub tokens: Vec<usize>,
    pub r_flc: f64,
    pub r_srlv: f64,
    /// One entry per content token; empty for baseline sentences.
    pub r_crlv: Vec<f64>,
}

/// Mean teacher-forced log-prob per scored token (content plus EOS) for
/// each caption.
pub fn fluency_rewards<T: Real, M: SequenceModel<T>>(lm: &M, captions: &[&Caption]) -> Result<Vec<f64>> {
    if captions.is_empty() {
        return Err(Error::Empty("sentence batch"));
    }
    let mut tape = Tape::new();
    let vars = lm.bind(&mut tape);
    let lp = teacher_forced(lm, &mut tape, &vars, captions, None, None)?;
    Ok(lp
        .values(&tape)
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect())
}

pub fn fluency_reward<T: Real, M: SequenceModel<T>>(lm: &M, caption: &Caption) -> Result<f64> {
    Ok(fluency_rewards(lm, &[caption])?[0])
}

/// Cosine between image and sentence embeddings for aligned rows.
pub fn sentence_relevancy_rewards<T: Real>(
    vse: &SentenceVse<T>,
    features: &[&[T]],
    captions: &[&Caption],
) -> Result<Vec<f64>> {
    if features.len() != captions.len() {
        return Err(Error::Length {
            what: "sentences",
            left: captions.len(),
            right: features.len(),
        });
    }
    if captions.is_empty() {
        return Err(Error::Empty("sentence batch"));
    }
    let mut tape = Tape::new();
    let iv = vse.image.bind(&mut tape);
    let sv = vse.sentence.bind(&mut tape);
    let img = vse.image.encode(&mut tape, iv, &feature_batch(features)?)?;
    let ids: Vec<&[usize]> = captions.iter().map(|c| c.ids()).collect();
    let sen = vse.sentence.encode(&mut tape, sv, &ids)?;
    let (a, b) = (tape.value(img), tape.value(sen));
    Ok((0..captions.len()).map(|i| cosine_sim(a.row(i), b.row(i))).collect())
}

pub fn sentence_relevancy_reward<T: Real>(vse: &SentenceVse<T>, features: &[T], caption: &Caption) -> Result<f64> {
    Ok(sentence_relevancy_rewards(vse, &[features], &[caption])?[0])
}

/// `δ(w) · (cos − λ p(w))` for one token given the unit image embedding and,
/// when the token is a concept, its unit embedding and prior.
pub fn concept_relevancy(image: &[f64], concept: Option<(&[f64], f64)>, lambda: f64) -> f64 {
    match concept {
        Some((w, p)) => cosine_sim(image, w) - lambda * p,
        None => 0.0,
    }
}

/// Frozen concept-level scorer with concept embeddings cached and the
/// caption vocabulary mapped onto concept ids.
pub struct ConceptScorer<'a, T> {
    vse: &'a ConceptVse<T>,
    table: Vec<Vec<f64>>,
    prior: Vec<f64>,
    id_map: Vec<Option<usize>>,
    lambda: f64,
}

impl<'a, T: Real> ConceptScorer<'a, T> {
    pub fn new(vse: &'a ConceptVse<T>, concepts: &ConceptVocabulary, vocab: &Vocabulary, lambda: f64) -> Result<Self> {
        if vse.concepts.len() != concepts.len() {
            return Err(Error::Length {
                what: "concept embeddings",
                left: vse.concepts.len(),
                right: concepts.len(),
            });
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Invalid(format!("lambda {lambda} must be a non-negative number")));
        }
        Ok(Self {
            vse,
            table: vse
                .concepts
                .normalized()
                .iter()
                .map(|r| r.iter().map(|x| x.as_f64()).collect())
                .collect(),
            prior: (0..concepts.len()).map(|i| concepts.prior(i)).collect(),
            id_map: concepts.id_map(vocab),
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_concept(&self, token: usize) -> bool {
        self.concept_of(token).is_some()
    }

    fn concept_of(&self, token: usize) -> Option<usize> {
        self.id_map.get(token).copied().flatten()
    }

    pub fn max_prior(&self) -> f64 {
        self.prior.iter().copied().fold(0.0, f64::max)
    }

    pub fn image_embedding(&self, features: &[T]) -> Result<Vec<f64>> {
        Ok(self.vse.image.embed(features)?.iter().map(|x| x.as_f64()).collect())
    }

    pub fn token_reward(&self, image: &[f64], token: usize) -> f64 {
        let c = self
            .concept_of(token)
            .map(|k| (self.table[k].as_slice(), self.prior[k]));
        concept_relevancy(image, c, self.lambda)
    }

    /// Per-content-token rewards of one caption.
    pub fn rewards(&self, features: &[T], caption: &Caption) -> Result<Vec<f64>> {
        let img = self.image_embedding(features)?;
        Ok(caption.ids().iter().map(|&w| self.token_reward(&img, w)).collect())
    }
}

/// The three frozen scorers used during reinforcement.
pub struct RewardModels<'a, T, L> {
    pub lm: &'a L,
    pub sentence: &'a SentenceVse<T>,
    pub concept: ConceptScorer<'a, T>,
}

impl<T: Real, L: SequenceModel<T>> RewardModels<'_, T, L> {
    /// Rewards for sampled and baseline sentences of the same images. The
    /// baseline bundles carry no concept rewards.
    pub fn bundle_batch(
        &self,
        image_ids: &[u64],
        features: &[&[T]],
        sampled: &[&Caption],
        baseline: &[&Caption],
    ) -> Result<(Vec<RewardBundle>, Vec<RewardBundle>)> {
        for (what, n) in [("image ids", image_ids.len()), ("sampled", sampled.len()), ("baseline", baseline.len())] {
            if n != features.len() {
                return Err(Error::Length {
                    what,
                    left: n,
                    right: features.len(),
                });
            }
        }
        let both: Vec<&Caption> = sampled.iter().chain(baseline).copied().collect();
        let feats2: Vec<&[T]> = features.iter().chain(features).copied().collect();
        let flc = fluency_rewards(self.lm, &both)?;
        let srlv = sentence_relevancy_rewards(self.sentence, &feats2, &both)?;
        let b = sampled.len();
        let mut s_out = Vec::with_capacity(b);
        let mut b_out = Vec::with_capacity(b);
        for i in 0..b {
            s_out.push(RewardBundle {
                image_id: image_ids[i],
                tokens: sampled[i].ids().to_vec(),
                r_flc: flc[i],
                r_srlv: srlv[i],
                r_crlv: self.concept.rewards(features[i], sampled[i])?,
            });
            b_out.push(RewardBundle {
                image_id: image_ids[i],
                tokens: baseline[i].ids().to_vec(),
                r_flc: flc[b + i],
                r_srlv: srlv[b + i],
                r_crlv: Vec::new(),
            });
        }
        Ok((s_out, b_out))
    }

    pub fn bundle(&self, image_id: u64, features: &[T], sampled: &Caption, baseline: &Caption) -> Result<(RewardBundle, RewardBundle)> {
        let (mut s, mut b) = self.bundle_batch(&[image_id], &[features], &[sampled], &[baseline])?;
        Ok((s.remove(0), b.remove(0)))
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    image_id: u64,
    sentence: String,
    r_flc: f64,
    r_srlv: f64,
    r_crlv: &'a [f64],
}

/// Appends one JSON line per bundle.
pub fn write_trace<W: Write>(out: W, bundles: &[RewardBundle], vocab: &Vocabulary) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    for b in bundles {
        let line = TraceLine {
            image_id: b.image_id,
            sentence: vocab.decode(&b.tokens).join(" "),
            r_flc: b.r_flc,
            r_srlv: b.r_srlv,
            r_crlv: &b.r_crlv,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn append_trace(path: &Path, bundles: &[RewardBundle], vocab: &Vocabulary) -> Result<()> {
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|f| write_trace(f, bundles, vocab))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
