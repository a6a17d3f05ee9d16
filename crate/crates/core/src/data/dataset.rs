use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::io::{read_split, write_split};
use super::noise::{pseudo_translate, NoiseFlags, NoiseSpec};
use super::world::{extract_concepts, MicroWorld};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::seq::{Caption, Vocabulary};

pub const PIVOT_MAX_LEN: usize = 20;
pub const TARGET_MAX_LEN: usize = 16;
pub const VOCAB_THRESHOLD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub features: Vec<f32>,
    /// Ground-truth concepts as target-language tokens.
    pub gt_concepts: Vec<String>,
}

/// An image with its pivot caption and the (possibly corrupted) pseudo
/// translation. Noise flags and references are for evaluation only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub split: Split,
    #[serde(flatten)]
    pub image: ImageRecord,
    pub pivot: Vec<String>,
    pub target: Vec<String>,
    pub concepts: Vec<String>,
    pub flags: NoiseFlags,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refs: Vec<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 200,
            test: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<PseudoPair>,
    pub val: Vec<PseudoPair>,
    pub test: Vec<PseudoPair>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[PseudoPair] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in Split::ALL {
            write_split(&dir.join(format!("{}.jsonl", s.name())), self.split(s))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut parts = Split::ALL
            .iter()
            .map(|s| read_split(&dir.join(format!("{}.jsonl", s.name())), *s));
        let (train, val, test) = (
            parts.next().expect("3")?,
            parts.next().expect("3")?,
            parts.next().expect("3")?,
        );
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        Ok(Self { train, val, test })
    }
}

/// Keeps the first `max_len` content tokens (EOS is implicit).
pub fn truncate_caption(caption: &Caption, max_len: usize) -> Caption {
    caption.truncated(max_len)
}

pub fn truncate_tokens(tokens: &[String], max_len: usize) -> Vec<String> {
    tokens[..tokens.len().min(max_len)].to_vec()
}

pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], threshold: usize) -> Vocabulary {
    Vocabulary::build(corpus.iter().map(|c| c.as_slice()), threshold)
}

fn make_pair(world: &MicroWorld, noise: &NoiseSpec, seed: u64, split: Split, image_id: u64) -> Result<PseudoPair> {
    let mut rng = stream(seed, &[1, image_id]);
    let content = world.sample_content(&mut rng);
    let features = world.features(&content, &mut rng);
    let templates = world.templates_for(&content);
    let t = *templates
        .choose(&mut rng)
        .ok_or_else(|| Error::Invalid("no template covers the sampled content".into()))?;
    let pivot = truncate_tokens(&world.render_pivot(t, &content)?, PIVOT_MAX_LEN);
    let (target, flags) = pseudo_translate(&pivot, &content, world, noise, &mut rng)?;
    let target = truncate_tokens(&target, TARGET_MAX_LEN);
    let concepts = extract_concepts(&target, world)?;
    let gt_concepts = content
        .concepts()
        .into_iter()
        .map(|c| world.concepts[c].target.clone())
        .collect();
    let refs = if split == Split::Train {
        Vec::new()
    } else {
        world.references(&content)?
    };
    Ok(PseudoPair {
        split,
        image: ImageRecord {
            image_id,
            features,
            gt_concepts,
        },
        pivot,
        target,
        concepts,
        flags,
        refs,
    })
}

/// Deterministic train/val/test pseudo pairs; image ids run consecutively
/// across the splits and each image draws from its own RNG stream.
pub fn generate_dataset(world: &MicroWorld, sizes: DatasetSizes, noise: &NoiseSpec, seed: u64) -> Result<Dataset> {
    noise.validate()?;
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(Error::Invalid("split sizes must be positive".into()));
    }
    let mut next = 0u64;
    let mut gen = |split: Split, n: usize| -> Result<Vec<PseudoPair>> {
        let out = (0..n as u64)
            .map(|k| make_pair(world, noise, seed, split, next + k))
            .collect();
        next += n as u64;
        out
    };
    Ok(Dataset {
        train: gen(Split::Train, sizes.train)?,
        val: gen(Split::Val, sizes.val)?,
        test: gen(Split::Test, sizes.test)?,
    })
}

/// Clean target-language sentences describing random unseen images, used as
/// the mono-lingual language-model corpus.
pub fn generate_corpus(world: &MicroWorld, n: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    (0..n as u64)
        .map(|k| {
            let mut rng = stream(seed, &[2, k]);
            let content = world.sample_content(&mut rng);
            let t = *world.templates_for(&content).choose(&mut rng).expect("template");
            world.translate(&world.render_pivot(t, &content)?)
        })
        .collect()
}

/// Distinct token inventory of a corpus, for audits.
pub fn token_set(corpus: &[Vec<String>]) -> BTreeSet<&str> {
    corpus.iter().flatten().map(String::as_str).collect()
}
