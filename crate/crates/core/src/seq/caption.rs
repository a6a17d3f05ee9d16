use super::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Content token ids of a sentence. BOS and EOS are implicit: the model sees
/// `BOS w1 .. wn` as inputs and scores `w1 .. wn EOS`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Caption {
    ids: Vec<usize>,
}

impl Caption {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("caption"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i == PAD || i == BOS || i == EOS) {
            return Err(Error::Invalid(format!(
                "reserved id {bad} inside caption content"
            )));
        }
        Ok(Self { ids })
    }

    /// Content length `n` (excluding BOS/EOS).
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Number of scored positions: content tokens plus EOS.
    pub fn scored_len(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn input_at(&self, j: usize) -> usize {
        if j == 0 {
            BOS
        } else {
            self.ids[j - 1]
        }
    }

    pub fn target_at(&self, j: usize) -> usize {
        self.ids.get(j).copied().unwrap_or(EOS)
    }

    /// `BOS w1 .. wn EOS`
    pub fn with_markers(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.ids.len() + 2);
        v.push(BOS);
        v.extend_from_slice(&self.ids);
        v.push(EOS);
        v
    }

    pub fn truncated(&self, max_len: usize) -> Self {
        let keep = self.ids.len().min(max_len.max(1));
        Self {
            ids: self.ids[..keep].to_vec(),
        }
    }
}
