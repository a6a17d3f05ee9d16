use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::eval::{evaluate_corpus, EvalReport};
use crate::autodiff::{adam_step, clip_grad_norm, collect_grads, AdamConfig, AdamState, Tape, Var};
use crate::data::{generate_corpus, generate_dataset, Dataset, MicroWorld, PseudoPair};
use crate::decoding::{greedy_batch, sample_batch};
use crate::error::{Error, Result};
use crate::metrics::CiderScorer;
use crate::objectives::{
    caption_xent_loss, cider_advantages, flc_selfcritical_loss, joint_loss, rlv_selfcritical_loss, selfcritical_loss,
    xent_loss,
};
use crate::rewards::{ConceptScorer, RewardBundle, RewardModels};
use crate::rng::stream;
use crate::seq::{feature_batch, teacher_forced, Caption, Captioner, Dropout, LanguageModel, SequenceModel, Vocabulary};
use crate::vse::{
    train_concept_vse, train_sentence_vse, ConceptExample, ConceptVocabulary, ConceptVse, SentenceExample, SentenceVse,
    TrainHistory,
};

/// RNG stream tags.
const TAG_INIT: u64 = 10;
const TAG_SHUFFLE: u64 = 11;
const TAG_DROPOUT: u64 = 12;
const TAG_SAMPLE: u64 = 13;

/// Generated data and the vocabularies derived from the training split.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub world: MicroWorld,
    pub dataset: Dataset,
    /// Clean mono-lingual target sentences for the language model.
    pub mono: Vec<Vec<String>>,
    pub vocab: Vocabulary,
    pub concepts: ConceptVocabulary,
}

impl Corpus {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let world = MicroWorld::generate(cfg.world(), cfg.seed)?;
        let dataset = generate_dataset(&world, cfg.sizes(), &cfg.noise(), cfg.seed)?;
        let mono = generate_corpus(&world, cfg.mono_size, cfg.seed)?;
        Self::assemble(world, dataset, mono, cfg.vocab_threshold)
    }

    pub fn assemble(world: MicroWorld, dataset: Dataset, mono: Vec<Vec<String>>, vocab_threshold: usize) -> Result<Self> {
        let vocab = Vocabulary::build(dataset.train.iter().map(|p| p.target.as_slice()), vocab_threshold);
        let concepts = ConceptVocabulary::build(dataset.train.iter().map(|p| p.concepts.as_slice()))?;
        Ok(Self {
            world,
            dataset,
            mono,
            vocab,
            concepts,
        })
    }

    pub fn caption(&self, tokens: &[String]) -> Result<Caption> {
        Caption::new(self.vocab.encode(tokens))
    }

    pub fn captions(&self, pairs: &[PseudoPair]) -> Result<Vec<Caption>> {
        pairs.iter().map(|p| self.caption(&p.target)).collect()
    }
}

/// The models held fixed during reinforcement.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub lm: LanguageModel<f32>,
    pub sentence: SentenceVse<f32>,
    pub concept: ConceptVse<f32>,
}

impl Frozen {
    pub fn reward_models<'a>(&'a self, corpus: &Corpus, lambda: f64) -> Result<RewardModels<'a, f32, LanguageModel<f32>>> {
        Ok(RewardModels {
            lm: &self.lm,
            sentence: &self.sentence,
            concept: ConceptScorer::new(&self.concept, &corpus.concepts, &corpus.vocab, lambda)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct XeOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub seed: u64,
}

/// One teacher-forcing example; `features` is present for captioners only.
#[derive(Clone, Copy, Debug)]
pub struct XeExample<'a> {
    pub caption: &'a Caption,
    pub features: Option<&'a [f32]>,
}

fn xe_batch_loss<M: SequenceModel<f32>>(
    model: &M,
    tape: &mut Tape<f32>,
    items: &[XeExample<'_>],
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let feats = if items[0].features.is_some() {
        let rows: Vec<&[f32]> = items
            .iter()
            .map(|e| e.features.ok_or(Error::Missing("features on a captioner example".into())))
            .collect::<Result<_>>()?;
        Some(feature_batch(&rows)?)
    } else {
        None
    };
    let caps: Vec<&Caption> = items.iter().map(|e| e.caption).collect();
    let vars = model.bind(tape);
    xent_loss(model, tape, &vars, &caps, feats.as_ref(), dropout)
}

/// Mean held-out cross-entropy per sentence.
pub fn heldout_xe<M: SequenceModel<f32>>(model: &M, items: &[XeExample<'_>], batch: usize) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("held-out set"));
    }
    let mut sum = 0.0;
    for chunk in items.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let l = xe_batch_loss(model, &mut tape, chunk, None)?;
        sum += tape.value(l).item() as f64 * chunk.len() as f64;
    }
    Ok(sum / items.len() as f64)
}

/// Adam on teacher-forced cross-entropy with early stopping on the held-out
/// loss; the best parameters are restored.
pub fn train_xe<M: SequenceModel<f32> + Clone>(
    model: &mut M,
    train: &[XeExample<'_>],
    heldout: &[XeExample<'_>],
    opts: &XeOptions,
) -> Result<TrainHistory> {
    if train.is_empty() {
        return Err(Error::Empty("training sentences"));
    }
    if heldout.is_empty() {
        return Err(Error::Empty("held-out sentences"));
    }
    let mut adam = AdamState::new(model, AdamConfig::with_lr(opts.learning_rate));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut hist = TrainHistory::default();
    let mut best = model.clone();
    let mut stale = 0;
    for epoch in 0..opts.max_epochs {
        order.shuffle(&mut stream(opts.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut drop_rng = stream(opts.seed, &[TAG_DROPOUT, epoch as u64]);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let items: Vec<XeExample<'_>> = batch.iter().map(|&i| train[i]).collect();
            let mut tape = Tape::new();
            let mut drop = Dropout {
                rate: opts.dropout,
                rng: &mut drop_rng,
            };
            let l = xe_batch_loss(model, &mut tape, &items, Some(&mut drop))?;
            total += tape.value(l).item() as f64 * items.len() as f64;
            tape.backward(l)?;
            collect_grads(model, &tape)?;
            adam_step(model, &mut adam)?;
        }
        hist.train_loss.push(total / train.len() as f64);
        let held = heldout_xe(model, heldout, opts.batch_size)?;
        hist.heldout_loss.push(held);
        if epoch == 0 || held < hist.best_heldout() {
            hist.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }
    *model = best;
    Ok(hist)
}

fn xe_options(cfg: &ExperimentConfig, lr: f64, epochs: usize, salt: u64) -> XeOptions {
    XeOptions {
        learning_rate: lr,
        batch_size: cfg.batch_pretrain,
        max_epochs: epochs,
        patience: cfg.patience,
        dropout: cfg.dropout,
        seed: crate::rng::derive_seed(cfg.seed, &[salt]),
    }
}

/// Language model on the mono-lingual corpus; the last tenth is held out.
pub fn pretrain_lm(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(LanguageModel<f32>, TrainHistory)> {
    if corpus.mono.len() < 2 {
        return Err(Error::Empty("mono-lingual corpus"));
    }
    let sents: Vec<Caption> = corpus
        .mono
        .iter()
        .map(|s| corpus.caption(s))
        .collect::<Result<_>>()?;
    let cut = sents.len() - (sents.len() / 10).max(1);
    let ex: Vec<XeExample<'_>> = sents.iter().map(|c| XeExample { caption: c, features: None }).collect();
    let mut rng = stream(cfg.seed, &[TAG_INIT, 1]);
    let mut lm = LanguageModel::init(corpus.vocab.len(), cfg.lm_embed_dim, cfg.lm_hidden_dim, &mut rng);
    let hist = train_xe(&mut lm, &ex[..cut], &ex[cut..], &xe_options(cfg, cfg.lr_lm, cfg.epochs_lm, 1))?;
    Ok((lm, hist))
}

fn sentence_examples<'a>(pairs: &'a [PseudoPair], toks: &'a [Vec<usize>]) -> Vec<SentenceExample<'a>> {
    pairs
        .iter()
        .zip(toks)
        .map(|(p, t)| SentenceExample {
            image_id: p.image.image_id,
            features: &p.image.features,
            tokens: t,
        })
        .collect()
}

/// Images with the known concepts of their caption; images without any are
/// dropped.
fn concept_examples<'a>(corpus: &Corpus, pairs: &'a [PseudoPair]) -> Vec<ConceptExample<'a>> {
    pairs
        .iter()
        .map(|p| ConceptExample {
            image_id: p.image.image_id,
            features: &p.image.features,
            concepts: p.concepts.iter().filter_map(|c| corpus.concepts.index_of(c)).collect(),
        })
        .filter(|e| !e.concepts.is_empty())
        .collect()
}

fn xe_examples<'a>(pairs: &'a [PseudoPair], caps: &'a [Caption]) -> Vec<XeExample<'a>> {
    pairs
        .iter()
        .zip(caps)
        .map(|(p, c)| XeExample {
            caption: c,
            features: Some(&p.image.features),
        })
        .collect()
}

/// Image-sentence and image-concept matchers on the training pseudo pairs,
/// early-stopped on the validation pseudo pairs.
pub fn pretrain_vse(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
) -> Result<(SentenceVse<f32>, ConceptVse<f32>, TrainHistory, TrainHistory)> {
    let vcfg = cfg.vse();
    let encode = |pairs: &[PseudoPair]| -> Vec<Vec<usize>> { pairs.iter().map(|p| corpus.vocab.encode(&p.target)).collect() };
    let (train_tok, val_tok) = (encode(&corpus.dataset.train), encode(&corpus.dataset.val));
    let mut svse = SentenceVse::init_with(cfg.feature_dim, corpus.vocab.len(), &vcfg);
    let sh = train_sentence_vse(
        &mut svse,
        &sentence_examples(&corpus.dataset.train, &train_tok),
        &sentence_examples(&corpus.dataset.val, &val_tok),
        &vcfg,
    )?;
    let mut cvse = ConceptVse::init_with(cfg.feature_dim, corpus.concepts.len(), &vcfg);
    let ch = train_concept_vse(&mut cvse, &concept_examples(corpus, &corpus.dataset.train), &concept_examples(corpus, &corpus.dataset.val), &vcfg)?;
    Ok((svse, cvse, sh, ch))
}

/// Teacher-forced captioner on the pseudo pairs; the best validation
/// checkpoint is the Baseline model.
pub fn pretrain_captioner(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(Captioner<f32>, TrainHistory)> {
    let train_caps = corpus.captions(&corpus.dataset.train)?;
    let val_caps = corpus.captions(&corpus.dataset.val)?;
    let mut rng = stream(cfg.seed, &[TAG_INIT, 2]);
    let mut cap = Captioner::init(cfg.captioner_dims(corpus.vocab.len()), &mut rng);
    let hist = train_xe(
        &mut cap,
        &xe_examples(&corpus.dataset.train, &train_caps),
        &xe_examples(&corpus.dataset.val, &val_caps),
        &xe_options(cfg, cfg.lr_captioner, cfg.epochs_captioner, 2),
    )?;
    Ok((cap, hist))
}

/// One line of the reinforcement log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlEpoch {
    pub mode: Mode,
    pub epoch: usize,
    pub loss: f64,
    pub train_r_flc: f64,
    pub train_r_srlv: f64,
    pub train_r_crlv: f64,
    pub val_cider: f64,
    pub val_r_flc: f64,
    pub val_r_srlv: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RlHistory {
    /// Entry 0 describes the initial model before any update.
    pub epochs: Vec<RlEpoch>,
    pub best_epoch: usize,
}

/// Validation decode scored with CIDEr against clean references plus the
/// mean fluency and sentence rewards of the decodes.
fn validate(
    cfg: &ExperimentConfig,
    model: &Captioner<f32>,
    corpus: &Corpus,
    rewards: &RewardModels<'_, f32, LanguageModel<f32>>,
) -> Result<EvalReport> {
    evaluate_corpus(
        model,
        &corpus.dataset.val,
        &corpus.vocab,
        Some(rewards),
        cfg.val_beam_size,
        cfg.max_decode_len,
    )
}

/// Self-critical reinforcement of the captioner in the given mode. The
/// frozen models are only read. Returns the parameters with the best
/// validation CIDEr, the initial ones included.
pub fn train_ssr(
    cfg: &ExperimentConfig,
    mode: Mode,
    init: &Captioner<f32>,
    corpus: &Corpus,
    frozen: &Frozen,
) -> Result<(Captioner<f32>, RlHistory)> {
    let mut model = init.clone();
    if !mode.trains() {
        return Ok((model, RlHistory::default()));
    }
    let rewards = frozen.reward_models(corpus, cfg.lambda)?;
    let weights = cfg.loss_weights();
    let (use_flc, use_srlv, use_crlv) = mode.rewards();
    let train = &corpus.dataset.train;
    let pseudo = corpus.captions(train)?;
    let cider = if mode == Mode::BaselinePlus {
        let refs: Vec<Vec<Vec<usize>>> = pseudo.iter().map(|c| vec![c.ids().to_vec()]).collect();
        Some((CiderScorer::fit(&refs)?, refs))
    } else {
        None
    };

    let mut adam = AdamState::new(&model, AdamConfig::with_lr(cfg.lr_rl));
    let mut hist = RlHistory::default();
    let first = validate(cfg, &model, corpus, &rewards)?;
    hist.epochs.push(RlEpoch {
        mode,
        epoch: 0,
        loss: 0.0,
        train_r_flc: 0.0,
        train_r_srlv: 0.0,
        train_r_crlv: 0.0,
        val_cider: first.cider,
        val_r_flc: first.r_flc,
        val_r_srlv: first.r_srlv,
    });
    let mut best = model.clone();
    let mut best_cider = first.cider;
    let mut stale = 0;
    let k = cfg.samples_per_image;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs_rl {
        order.shuffle(&mut stream(cfg.seed, &[TAG_SHUFFLE, 100 + epoch as u64]));
        let (mut loss_sum, mut flc_sum, mut srlv_sum, mut crlv_sum, mut crlv_n) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_rl) {
            let feats: Vec<&[f32]> = batch.iter().map(|&i| train[i].image.features.as_slice()).collect();
            let ids: Vec<u64> = batch.iter().map(|&i| train[i].image.image_id).collect();
            let fb = feature_batch(&feats)?;
            let greedy = greedy_batch(&model, Some(&fb), batch.len(), cfg.max_decode_len)?;

            // K samples per image, laid out sample-major.
            let rep_feats: Vec<&[f32]> = (0..k).flat_map(|_| feats.iter().copied()).collect();
            let rep_ids: Vec<u64> = (0..k).flat_map(|_| ids.iter().copied()).collect();
            let rep_fb = feature_batch(&rep_feats)?;
            let mut rngs: Vec<ChaCha8Rng> = (0..k)
                .flat_map(|s| ids.iter().map(move |&id| stream(cfg.seed, &[TAG_SAMPLE, mode as u64, epoch as u64, id, s as u64])))
                .collect();
            let sampled = sample_batch(&model, Some(&rep_fb), rep_feats.len(), cfg.max_decode_len, &mut rngs)?;
            let s_caps: Vec<&Caption> = sampled.iter().map(|d| &d.caption).collect();
            let g_caps: Vec<&Caption> = (0..k).flat_map(|_| greedy.iter().map(|d| &d.caption)).collect();

            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let gold: Vec<&Caption> = batch.iter().map(|&i| &pseudo[i]).collect();
            let l_cap = caption_xent_loss(&model, &mut tape, &vars, &gold, &fb, None)?;
            let lp = teacher_forced(&model, &mut tape, &vars, &s_caps, Some(&rep_fb), None)?;
            let (l_flc, l_rlv) = if let Some((scorer, refs)) = &cider {
                let rep_refs: Vec<Vec<Vec<usize>>> =
                    (0..k).flat_map(|_| batch.iter().map(|&i| refs[i].clone())).collect();
                let adv = cider_advantages(scorer, &s_caps, &g_caps, &rep_refs)?;
                (None, Some(selfcritical_loss(&mut tape, &lp, &adv, cfg.length_norm)?))
            } else if use_flc || use_srlv || use_crlv {
                let (sb, bb) = rewards.bundle_batch(&rep_ids, &rep_feats, &s_caps, &g_caps)?;
                flc_sum += sb.iter().map(|b| b.r_flc).sum::<f64>();
                srlv_sum += sb.iter().map(|b| b.r_srlv).sum::<f64>();
                for b in &sb {
                    crlv_sum += b.r_crlv.iter().sum::<f64>();
                    crlv_n += b.r_crlv.len();
                }
                let s_flc: Vec<f64> = sb.iter().map(|b| b.r_flc).collect();
                let b_flc: Vec<f64> = bb.iter().map(|b| b.r_flc).collect();
                let l_flc = if use_flc {
                    Some(flc_selfcritical_loss(&mut tape, &lp, &s_flc, &b_flc, cfg.length_norm)?)
                } else {
                    None
                };
                let l_rlv = if use_srlv || use_crlv {
                    let pick = |on: bool, xs: &[RewardBundle]| -> Vec<f64> {
                        xs.iter().map(|b| if on { b.r_srlv } else { 0.0 }).collect()
                    };
                    let crlv: Vec<Vec<f64>> = sb
                        .iter()
                        .map(|b| if use_crlv { b.r_crlv.clone() } else { vec![0.0; b.r_crlv.len()] })
                        .collect();
                    Some(rlv_selfcritical_loss(
                        &mut tape,
                        &lp,
                        &pick(use_srlv, &sb),
                        &pick(use_srlv, &bb),
                        &crlv,
                        cfg.length_norm,
                    )?)
                } else {
                    None
                };
                (l_flc, l_rlv)
            } else {
                (None, None)
            };
            let total = joint_loss(&mut tape, &weights, Some(l_cap), l_flc, l_rlv)?;
            loss_sum += tape.value(total).item() as f64 * batch.len() as f64;
            tape.backward(total)?;
            collect_grads(&mut model, &tape)?;
            clip_grad_norm(&mut model, cfg.clip_norm);
            adam_step(&mut model, &mut adam)?;
        }
        let n_samples = (train.len() * k) as f64;
        let val = validate(cfg, &model, corpus, &rewards)?;
        hist.epochs.push(RlEpoch {
            mode,
            epoch,
            loss: loss_sum / train.len() as f64,
            train_r_flc: flc_sum / n_samples,
            train_r_srlv: srlv_sum / n_samples,
            train_r_crlv: if crlv_n == 0 { 0.0 } else { crlv_sum / crlv_n as f64 },
            val_cider: val.cider,
            val_r_flc: val.r_flc,
            val_r_srlv: val.r_srlv,
        });
        if val.cider > best_cider {
            best_cider = val.cider;
            best = model.clone();
            hist.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, hist))
}
