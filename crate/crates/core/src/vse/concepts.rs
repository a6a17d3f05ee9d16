use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::seq::Vocabulary;

/// Concept tokens seen in the training captions with their relative
/// frequencies `p(w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptVocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    prior: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ConceptVocabulary {
    /// Counts concept occurrences; ids follow (count desc, token asc).
    pub fn build<'a, I, S>(concept_lists: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for list in concept_lists {
            for w in list {
                *counts.entry(w.as_ref().to_string()).or_default() += 1;
            }
        }
        let mut pairs: Vec<(String, usize)> = counts.into_iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_counts(pairs)
    }

    fn from_counts(pairs: Vec<(String, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("concept vocabulary"));
        }
        if pairs.iter().any(|(_, c)| *c == 0) {
            return Err(Error::Invalid("concept with zero count".into()));
        }
        let total: usize = pairs.iter().map(|(_, c)| c).sum();
        let prior = pairs.iter().map(|(_, c)| *c as f64 / total as f64).collect();
        let index = pairs
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let (tokens, counts) = pairs.into_iter().unzip();
        Ok(Self {
            tokens,
            counts,
            prior,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, i: usize) -> usize {
        self.counts[i]
    }

    pub fn prior(&self, i: usize) -> f64 {
        self.prior[i]
    }

    pub fn max_prior(&self) -> f64 {
        self.prior.iter().copied().fold(0.0, f64::max)
    }

    /// Concept index for every id of `vocab` (`None` for non-concepts).
    pub fn id_map(&self, vocab: &Vocabulary) -> Vec<Option<usize>> {
        (0..vocab.len())
            .map(|id| self.index_of(vocab.token(id)))
            .collect()
    }

    /// One `token count prior` line per concept.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for i in 0..self.len() {
            writeln!(s, "{} {} {:e}", self.tokens[i], self.counts[i], self.prior[i]).expect("string write");
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Reads a saved table; priors are recomputed from counts and checked
    /// against the stored values.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: String| Error::Parse {
            path: path.into(),
            line,
            msg,
        };
        let mut pairs = Vec::new();
        let mut stored = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(n + 1, "expected `token count prior`".into()));
            }
            let count = parts[1].parse::<usize>().map_err(|e| bad(n + 1, e.to_string()))?;
            let prior = parts[2].parse::<f64>().map_err(|e| bad(n + 1, e.to_string()))?;
            pairs.push((parts[0].to_string(), count));
            stored.push(prior);
        }
        let out = Self::from_counts(pairs)?;
        for (i, p) in stored.iter().enumerate() {
            if (p - out.prior[i]).abs() > 1e-12 {
                return Err(bad(i + 1, format!("prior {p} disagrees with counts")));
            }
        }
        Ok(out)
    }
}
