use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoders::{ConceptEmbedding, ConceptVse, ImageEncoder, SentenceEncoder, SentenceVse};
use super::loss::{contrastive_loss, MARGIN};
use crate::autodiff::{adam_step, collect_grads, AdamConfig, AdamState, Parameters, Tape, Var};
use crate::error::{Error, Result};
use crate::seq::feature_batch;

#[derive(Clone, Debug, PartialEq)]
pub struct VseConfig {
    pub embed_dim: usize,
    pub sentence_hidden: usize,
    pub sentence_joint: usize,
    pub concept_joint: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for VseConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            sentence_hidden: 64,
            sentence_joint: 64,
            concept_joint: 32,
            margin: MARGIN,
            learning_rate: 2e-4,
            batch_size: 128,
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

/// An image with one of its captions.
#[derive(Clone, Copy, Debug)]
pub struct SentenceExample<'a> {
    pub image_id: u64,
    pub features: &'a [f32],
    pub tokens: &'a [usize],
}

/// An image with the concept ids extracted from its caption.
#[derive(Clone, Debug)]
pub struct ConceptExample<'a> {
    pub image_id: u64,
    pub features: &'a [f32],
    pub concepts: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub heldout_loss: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_heldout(&self) -> f64 {
        self.heldout_loss
            .get(self.best_epoch)
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

/// Mini-batch Adam with held-out early stopping; the best parameters are
/// restored at the end.
fn fit<M: Parameters<f32> + Clone>(
    model: &mut M,
    n_train: usize,
    n_heldout: usize,
    cfg: &VseConfig,
    loss: &dyn Fn(&M, &mut Tape<f32>, &[usize], bool) -> Result<Var>,
) -> Result<TrainHistory> {
    if n_train == 0 {
        return Err(Error::Empty("training pairs"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model, AdamConfig::with_lr(cfg.learning_rate));
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut hist = TrainHistory::default();
    let mut best = model.clone();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let l = loss(model, &mut tape, batch, true)?;
            total += tape.value(l).item() as f64;
            tape.backward(l)?;
            collect_grads(model, &tape)?;
            adam_step(model, &mut adam)?;
        }
        hist.train_loss.push(total / n_train as f64);
        let held = if n_heldout == 0 {
            total / n_train as f64
        } else {
            let idx: Vec<usize> = (0..n_heldout).collect();
            let mut sum = 0.0;
            for batch in idx.chunks(cfg.batch_size) {
                let mut tape = Tape::new();
                let l = loss(model, &mut tape, batch, false)?;
                sum += tape.value(l).item() as f64;
            }
            sum / n_heldout as f64
        };
        hist.heldout_loss.push(held);
        if epoch == 0 || held < hist.best_heldout() {
            hist.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *model = best;
    Ok(hist)
}

/// Trains the image-sentence matcher. `heldout` may be empty, in which case
/// the training loss drives early stopping.
pub fn train_sentence_vse(
    model: &mut SentenceVse<f32>,
    train: &[SentenceExample<'_>],
    heldout: &[SentenceExample<'_>],
    cfg: &VseConfig,
) -> Result<TrainHistory> {
    let margin = cfg.margin;
    let loss = |m: &SentenceVse<f32>, tape: &mut Tape<f32>, batch: &[usize], training: bool| {
        let set = if training { train } else { heldout };
        let items: Vec<&SentenceExample<'_>> = batch.iter().map(|&i| &set[i]).collect();
        sentence_batch_loss(m, tape, &items, margin)
    };
    fit(model, train.len(), heldout.len(), cfg, &loss)
}

pub fn sentence_batch_loss(
    model: &SentenceVse<f32>,
    tape: &mut Tape<f32>,
    items: &[&SentenceExample<'_>],
    margin: f64,
) -> Result<Var> {
    let feats = feature_batch(&items.iter().map(|e| e.features).collect::<Vec<_>>())?;
    let iv = model.image.bind(tape);
    let sv = model.sentence.bind(tape);
    let img = model.image.encode(tape, iv, &feats)?;
    let sents: Vec<&[usize]> = items.iter().map(|e| e.tokens).collect();
    let sen = model.sentence.encode(tape, sv, &sents)?;
    let neg = |a: usize, b: usize| items[a].image_id != items[b].image_id && items[a].tokens != items[b].tokens;
    contrastive_loss(tape, img, sen, margin, &neg)
}

/// Trains the image-concept matcher on every (image, concept) pair.
pub fn train_concept_vse(
    model: &mut ConceptVse<f32>,
    train: &[ConceptExample<'_>],
    heldout: &[ConceptExample<'_>],
    cfg: &VseConfig,
) -> Result<TrainHistory> {
    let expand = |set: &[ConceptExample<'_>]| -> Vec<(usize, usize)> {
        set.iter()
            .enumerate()
            .flat_map(|(i, e)| {
                let mut cs = e.concepts.clone();
                cs.sort_unstable();
                cs.dedup();
                cs.into_iter().map(move |c| (i, c))
            })
            .collect()
    };
    let train_pairs = expand(train);
    let held_pairs = expand(heldout);
    let margin = cfg.margin;
    let loss = |m: &ConceptVse<f32>, tape: &mut Tape<f32>, batch: &[usize], training: bool| {
        let (set, pairs) = if training {
            (train, &train_pairs)
        } else {
            (heldout, &held_pairs)
        };
        let items: Vec<(&ConceptExample<'_>, usize)> = batch
            .iter()
            .map(|&k| (&set[pairs[k].0], pairs[k].1))
            .collect();
        concept_batch_loss(m, tape, &items, margin)
    };
    fit(model, train_pairs.len(), held_pairs.len(), cfg, &loss)
}

pub fn concept_batch_loss(
    model: &ConceptVse<f32>,
    tape: &mut Tape<f32>,
    items: &[(&ConceptExample<'_>, usize)],
    margin: f64,
) -> Result<Var> {
    let feats = feature_batch(&items.iter().map(|(e, _)| e.features).collect::<Vec<_>>())?;
    let iv = model.image.bind(tape);
    let table = tape.param(&model.concepts.table);
    let img = model.image.encode(tape, iv, &feats)?;
    let ids: Vec<usize> = items.iter().map(|&(_, c)| c).collect();
    let con = model.concepts.encode(tape, table, &ids)?;
    let neg = |a: usize, b: usize| !items[a].0.concepts.contains(&items[b].1);
    contrastive_loss(tape, img, con, margin, &neg)
}

impl SentenceVse<f32> {
    pub fn init_with(feature: usize, vocab: usize, cfg: &VseConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e17);
        Self {
            image: ImageEncoder::init(feature, cfg.sentence_joint, &mut rng),
            sentence: SentenceEncoder::init(vocab, cfg.embed_dim, cfg.sentence_hidden, cfg.sentence_joint, &mut rng),
        }
    }
}

impl ConceptVse<f32> {
    pub fn init_with(feature: usize, concepts: usize, cfg: &VseConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0c0);
        Self {
            image: ImageEncoder::init(feature, cfg.concept_joint, &mut rng),
            concepts: ConceptEmbedding::init(concepts, cfg.concept_joint, &mut rng),
        }
    }
}

/// Cosine similarities between every image and every sentence.
pub fn sentence_sim_matrix(model: &SentenceVse<f32>, features: &[&[f32]], sentences: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let iv = model.image.bind(&mut tape);
    let sv = model.sentence.bind(&mut tape);
    let img = model.image.encode(&mut tape, iv, &feature_batch(features)?)?;
    let sen = model.sentence.encode(&mut tape, sv, sentences)?;
    let sims = tape.matmul_bt(img, sen)?;
    let s = tape.value(sims);
    Ok((0..s.rows()).map(|r| s.row(r).iter().map(|&x| x as f64).collect()).collect())
}
