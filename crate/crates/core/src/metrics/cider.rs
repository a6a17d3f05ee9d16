use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use super::bleu::{check_corpus as check, ngram_counts, MAX_ORDER};
use crate::error::{Error, Result};

/// Plain CIDEr with document frequencies fitted on a reference corpus.
#[derive(Clone, Debug)]
pub struct CiderScorer<T: Hash + Eq> {
    df: HashMap<Vec<T>, usize>,
    docs: usize,
}

type Vector = (BTreeMap<usize, f64>, f64);

impl<T: Hash + Eq + Clone + Ord> CiderScorer<T> {
    /// `df(g)` is the number of items whose reference set contains `g`.
    pub fn fit<R: AsRef<[T]>>(refs: &[Vec<R>]) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::Empty("reference corpus"));
        }
        let mut df: HashMap<Vec<T>, usize> = HashMap::new();
        for item in refs {
            let mut seen: HashSet<&[T]> = HashSet::new();
            for r in item {
                for n in 1..=MAX_ORDER {
                    seen.extend(ngram_counts(r.as_ref(), n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_default() += 1;
            }
        }
        Ok(Self {
            df,
            docs: refs.len(),
        })
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    pub fn df(&self, gram: &[T]) -> usize {
        self.df.get(gram).copied().unwrap_or(0)
    }

    /// tf-idf vector of order `n` as (n-gram slot → weight, norm); slots are
    /// indices into a shared n-gram list so two vectors can be dotted.
    fn vector<'a>(&self, tokens: &'a [T], n: usize, slots: &mut HashMap<&'a [T], usize>) -> Vector {
        let counts = ngram_counts(tokens, n);
        let total: usize = counts.values().sum();
        let mut v = BTreeMap::new();
        let mut norm = 0.0;
        let docs = self.docs as f64;
        let mut keys: Vec<_> = counts.into_iter().collect();
        keys.sort();
        for (g, c) in keys {
            let idf = (docs / self.df(g).max(1) as f64).ln();
            let w = c as f64 / total as f64 * idf;
            let next = slots.len();
            let slot = *slots.entry(g).or_insert(next);
            v.insert(slot, w);
            norm += w * w;
        }
        (v, norm.sqrt())
    }

    /// Item score: mean over orders of the mean cosine to each reference,
    /// times 10.
    pub fn score<R: AsRef<[T]>>(&self, hyp: &[T], refs: &[R]) -> Result<f64> {
        if refs.is_empty() {
            return Err(Error::Missing("item without references".into()));
        }
        let mut total = 0.0;
        for n in 1..=MAX_ORDER {
            let mut slots = HashMap::new();
            let (hv, hn) = self.vector(hyp, n, &mut slots);
            let mut acc = 0.0;
            for r in refs {
                let (rv, rn) = self.vector(r.as_ref(), n, &mut slots);
                if hn > 0.0 && rn > 0.0 {
                    let dot: f64 = hv
                        .iter()
                        .filter_map(|(k, a)| rv.get(k).map(|b| a * b))
                        .sum();
                    acc += dot / (hn * rn);
                }
            }
            total += acc / refs.len() as f64;
        }
        Ok(10.0 * total / MAX_ORDER as f64)
    }

    /// Per-item scores.
    pub fn score_corpus<H: AsRef<[T]>, R: AsRef<[T]>>(&self, hyps: &[H], refs: &[Vec<R>]) -> Result<Vec<f64>> {
        check(hyps, refs)?;
        hyps.iter()
            .zip(refs)
            .map(|(h, r)| self.score(h.as_ref(), r))
            .collect()
    }
}

/// Corpus CIDEr: scorer fitted on `refs`, mean item score.
pub fn cider<T, H, R>(hyps: &[H], refs: &[Vec<R>]) -> Result<f64>
where
    T: Hash + Eq + Clone + Ord,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    check(hyps, refs)?;
    let scorer = CiderScorer::fit(refs)?;
    let s = scorer.score_corpus(hyps, refs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
