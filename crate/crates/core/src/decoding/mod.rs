//! Caption generation: Monte-Carlo sampling, greedy decoding and beam search.
//!
//! `max_len` is the step budget including EOS: the final step only admits
//! EOS, so every returned caption is terminated and its stored log-probs
//! equal a teacher-forced rescoring.

use std::cmp::Ordering;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::seq::{feature_batch, Caption, DecoderState, SequenceModel, BOS, EOS, PAD};

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub caption: Caption,
    /// One term per content token plus the final EOS.
    pub log_probs: Vec<f64>,
}

impl Decoded {
    pub fn score(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

fn check_len(max_len: usize) -> Result<()> {
    if max_len < 2 {
        return Err(Error::Invalid(format!(
            "max_len {max_len} leaves no room for a content token and EOS"
        )));
    }
    Ok(())
}

fn row_f64<T: Real>(t: &Tensor<T>, r: usize) -> Vec<f64> {
    t.row(r).iter().map(|x| x.as_f64()).collect()
}

fn argmax(logp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logp.iter().enumerate() {
        if x > logp[best] {
            best = i;
        }
    }
    best
}

fn categorical(logp: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let probs: Vec<f64> = logp.iter().map(|&x| x.exp()).collect();
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Decodes a batch step by step. With `rngs` each row samples from its own
/// stream; without, it takes the argmax (ties: lowest id).
fn decode_batch<T: Real, M: SequenceModel<T>>(
    model: &M,
    features: Option<&Tensor<T>>,
    batch: usize,
    max_len: usize,
    mut rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<Vec<Decoded>> {
    check_len(max_len)?;
    if batch == 0 {
        return Err(Error::Empty("decode batch"));
    }
    if let Some(r) = rngs.as_deref() {
        if r.len() != batch {
            return Err(Error::Length {
                what: "rng streams",
                left: r.len(),
                right: batch,
            });
        }
    }
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut state = model.start(&mut tape, &vars, batch, features)?;
    let mut tokens = vec![Vec::new(); batch];
    let mut logps = vec![Vec::new(); batch];
    let mut done = vec![false; batch];
    let mut input = vec![BOS; batch];
    for t in 0..max_len {
        let (next, lp) = model.step(&mut tape, &vars, state, &input, None)?;
        state = next;
        let lpv = tape.value(lp).clone();
        for i in 0..batch {
            if done[i] {
                input[i] = PAD;
                continue;
            }
            let row = row_f64(&lpv, i);
            let w = if t + 1 == max_len {
                EOS
            } else {
                match rngs.as_deref_mut() {
                    Some(r) => categorical(&row, &mut r[i]),
                    None => argmax(&row),
                }
            };
            logps[i].push(row[w]);
            if w == EOS {
                done[i] = true;
                input[i] = PAD;
            } else {
                tokens[i].push(w);
                input[i] = w;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    tokens
        .into_iter()
        .zip(logps)
        .map(|(ids, log_probs)| {
            Ok(Decoded {
                caption: Caption::new(ids)?,
                log_probs,
            })
        })
        .collect()
}

/// One Monte-Carlo sample per row of `features` (`[B, F]`, or `None` with
/// `batch` rows for the language model).
pub fn sample_batch<T: Real, M: SequenceModel<T>>(
    model: &M,
    features: Option<&Tensor<T>>,
    batch: usize,
    max_len: usize,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Decoded>> {
    decode_batch(model, features, batch, max_len, Some(rngs))
}

pub fn greedy_batch<T: Real, M: SequenceModel<T>>(
    model: &M,
    features: Option<&Tensor<T>>,
    batch: usize,
    max_len: usize,
) -> Result<Vec<Decoded>> {
    decode_batch(model, features, batch, max_len, None)
}

fn single<T: Real>(features: Option<&[T]>) -> Result<Option<Tensor<T>>> {
    features.map(|f| feature_batch(&[f])).transpose()
}

pub fn sample_sentence<T: Real, M: SequenceModel<T>>(
    model: &M,
    features: Option<&[T]>,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Decoded> {
    let f = single(features)?;
    let mut rngs = [rng.clone()];
    let out = sample_batch(model, f.as_ref(), 1, max_len, &mut rngs)?;
    *rng = rngs[0].clone();
    Ok(out.into_iter().next().expect("one row"))
}

pub fn greedy_decode<T: Real, M: SequenceModel<T>>(
    model: &M,
    features: Option<&[T]>,
    max_len: usize,
) -> Result<Decoded> {
    let f = single(features)?;
    Ok(greedy_batch(model, f.as_ref(), 1, max_len)?
        .into_iter()
        .next()
        .expect("one row"))
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<usize>,
    log_probs: Vec<f64>,
    score: f64,
}

fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search over summed log-probs without length penalty. Hypotheses
/// that emit EOS retire to a pool; the search stops once the best retired
/// score is at least the best live score, since scores never increase.
pub fn beam_search<T: Real, M: SequenceModel<T>>(
    model: &M,
    features: Option<&[T]>,
    beam: usize,
    max_len: usize,
) -> Result<Decoded> {
    check_len(max_len)?;
    if beam == 0 {
        return Err(Error::Invalid("beam must be at least 1".into()));
    }
    let f = single(features)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let init = model.start(&mut tape, &vars, 1, f.as_ref())?;
    let mut state: DecoderState = init;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        log_probs: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for t in 0..max_len {
        let input: Vec<usize> = live
            .iter()
            .map(|h| h.tokens.last().copied().unwrap_or(BOS))
            .collect();
        let (next, lp) = model.step(&mut tape, &vars, state, &input, None)?;
        let lpv = tape.value(lp).clone();
        let last = t + 1 == max_len;
        let mut cands: Vec<(f64, Vec<usize>, usize, usize, f64)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let row = row_f64(&lpv, i);
            for (w, &l) in row.iter().enumerate() {
                let allowed = if last {
                    w == EOS
                } else {
                    w != PAD && w != BOS && !(w == EOS && h.tokens.is_empty())
                };
                if !allowed {
                    continue;
                }
                let mut seq = h.tokens.clone();
                seq.push(w);
                cands.push((h.score + l, seq, i, w, l));
            }
        }
        cands.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        cands.truncate(beam);
        let mut next_live = Vec::new();
        let mut parents = Vec::new();
        for (score, seq, parent, w, l) in cands {
            let mut log_probs = live[parent].log_probs.clone();
            log_probs.push(l);
            let tokens = if w == EOS { seq[..seq.len() - 1].to_vec() } else { seq };
            let hyp = Hyp {
                tokens,
                log_probs,
                score,
            };
            if w == EOS {
                finished.push(hyp);
            } else {
                parents.push(parent);
                next_live.push(hyp);
            }
        }
        if next_live.is_empty() {
            break;
        }
        let best_live = next_live
            .iter()
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_done = finished
            .iter()
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_done >= best_live {
            break;
        }
        let h = tape.gather_rows(next.h, &parents)?;
        let c = tape.gather_rows(next.c, &parents)?;
        state = DecoderState { h, c };
        live = next_live;
    }
    let pool = if finished.is_empty() { &live } else { &finished };
    let best = pool
        .iter()
        .min_by(|a, b| rank((a.score, &a.tokens), (b.score, &b.tokens)))
        .ok_or(Error::Empty("beam"))?;
    Ok(Decoded {
        caption: Caption::new(best.tokens.clone())?,
        log_probs: best.log_probs.clone(),
    })
}
