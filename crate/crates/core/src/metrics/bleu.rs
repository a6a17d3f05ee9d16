use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

pub(crate) fn ngram_counts<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_default() += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate counts for orders 1..=4 plus the
/// hypothesis and effective reference lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NGramStats {
    pub matches: [usize; MAX_ORDER],
    pub candidates: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl NGramStats {
    pub fn of<T: Hash + Eq + Clone, R: AsRef<[T]>>(hyp: &[T], refs: &[R]) -> Self {
        let mut s = Self {
            hyp_len: hyp.len(),
            ref_len: closest_ref_len(hyp.len(), refs),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r.as_ref(), n) {
                    let e = max_ref.entry(g).or_default();
                    *e = (*e).max(c);
                }
            }
            s.candidates[n - 1] = h.values().sum();
            s.matches[n - 1] = h
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, o: &Self) {
        for k in 0..MAX_ORDER {
            self.matches[k] += o.matches[k];
            self.candidates[k] += o.candidates[k];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// BLEU@n from accumulated counts; no smoothing.
    pub fn bleu(&self, n: usize) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matches[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.candidates[k] as f64).ln();
        }
        let c = self.hyp_len as f64;
        let r = self.ref_len as f64;
        let bp = (1.0 - r / c).min(0.0).exp();
        bp * (log_sum / n as f64).exp()
    }
}

/// Reference length closest to `hyp_len`; ties go to the shorter one.
fn closest_ref_len<T, R: AsRef<[T]>>(hyp_len: usize, refs: &[R]) -> usize {
    refs.iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&l| (l.abs_diff(hyp_len), l))
        .unwrap_or(0)
}

pub(crate) fn check_corpus<A, B>(hyps: &[A], refs: &[B]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Empty("hypothesis corpus"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Length {
            what: "reference sets",
            left: refs.len(),
            right: hyps.len(),
        });
    }
    Ok(())
}

pub fn corpus_stats<T, H, R>(hyps: &[H], refs: &[Vec<R>]) -> Result<NGramStats>
where
    T: Hash + Eq + Clone,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    check_corpus(hyps, refs)?;
    let mut total = NGramStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        if r.is_empty() {
            return Err(Error::Missing("item without references".into()));
        }
        total.add(&NGramStats::of(h.as_ref(), r));
    }
    Ok(total)
}

/// Corpus-level BLEU@n: geometric mean of clipped precisions for orders
/// 1..=n times the brevity penalty `exp(min(0, 1 - r/c))`.
pub fn bleu<T, H, R>(hyps: &[H], refs: &[Vec<R>], n: usize) -> Result<f64>
where
    T: Hash + Eq + Clone,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::Invalid(format!("BLEU order {n} outside 1..=4")));
    }
    Ok(corpus_stats(hyps, refs)?.bleu(n))
}
