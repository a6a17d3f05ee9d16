use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<PAD>", "<BOS>", "<EOS>", "<UNK>"];

/// Token/id mapping. Ids 0..4 are reserved; corpus tokens follow in
/// (count desc, token asc) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    threshold: usize,
}

impl Vocabulary {
    /// Keeps tokens whose corpus frequency is strictly greater than `threshold`.
    pub fn build<'a, I, S>(corpus: I, threshold: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for tok in sentence {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c > threshold && !RESERVED.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()), threshold)
    }

    /// Vocabulary from content tokens in id order (reserved ids prepended).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>, threshold: usize) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens: all,
            index,
            threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in id order, after a `# threshold N` header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("# threshold {}\n", self.threshold);
        for t in &self.tokens[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let threshold = header
            .strip_prefix("# threshold ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.into(),
                line: 1,
                msg: "expected '# threshold N' header".into(),
            })?;
        Ok(Self::from_tokens(
            lines.filter(|l| !l.is_empty()).map(str::to_string),
            threshold,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(counts: &[(&str, usize)]) -> Vec<Vec<String>> {
        counts.iter()
            .flat_map(|&(t, n)| std::iter::repeat_n(vec![t.to_string()], n))
            .collect()
    }

    #[test]
    fn strict_frequency_threshold() {
        let c = corpus(&[("five", 5), ("four", 4)]);
        let v = Vocabulary::build(c.iter().map(Vec::as_slice), 4);
        assert_eq!(v.id("five"), 4);
        assert_eq!(v.id("four"), UNK);
    }

    #[test]
    fn empty_after_threshold_is_reserved_only() {
        let c = corpus(&[("a", 1), ("b", 2)]);
        let v = Vocabulary::build(c.iter().map(Vec::as_slice), 4);
        assert_eq!(v.len(), 4);
        assert!(v.is_empty());
    }

    #[test]
    fn order_is_count_desc_then_token() {
        let c = corpus(&[("b", 6), ("a", 6), ("c", 9)]);
        let v = Vocabulary::build(c.iter().map(Vec::as_slice), 0);
        assert_eq!(&v.tokens()[4..], &["c", "a", "b"]);
        assert_eq!(v.token(BOS), "<BOS>");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::from_tokens(["x".to_string(), "y".to_string()], 4);
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
