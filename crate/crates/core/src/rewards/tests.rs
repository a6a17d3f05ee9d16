use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Parameters;
use crate::seq::{sequence_log_prob, LanguageModel, EOS};
use crate::testing::{TableModel, A, B, C};
use crate::vse::{ConceptEmbedding, ImageEncoder, SentenceEncoder};

fn cap(ids: &[usize]) -> Caption {
    Caption::new(ids.to_vec()).unwrap()
}

#[test]
fn fluency_of_certain_model_is_zero() {
    let lm = TableModel::new(&[(&[], &[(A, 1.0)]), (&[A], &[(EOS, 1.0)])]);
    assert_eq!(fluency_reward(&lm, &cap(&[A])).unwrap(), 0.0);
}

#[test]
fn fluency_of_uniform_model_is_log_quarter() {
    let u: &[(usize, f64)] = &[(A, 0.25), (B, 0.25), (C, 0.25), (EOS, 0.25)];
    let lm = TableModel::new(&[(&[], u), (&[A], u), (&[A, B], u), (&[A, B, C], u)]);
    for s in [cap(&[A]), cap(&[A, B]), cap(&[A, B, C])] {
        assert!((fluency_reward(&lm, &s).unwrap() - 0.25f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn fluency_hand_table() {
    let lm = TableModel::new(&[(&[], &[(A, 0.5), (B, 0.5)]), (&[A], &[(EOS, 0.25), (A, 0.75)])]);
    let r = fluency_reward(&lm, &cap(&[A])).unwrap();
    assert!((r - (0.5f64.ln() + 0.25f64.ln()) / 2.0).abs() < 1e-12);
    assert!((r + 1.0397).abs() < 1e-4);
}

#[test]
fn batched_fluency_matches_single_and_is_non_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lm = LanguageModel::<f64>::init(9, 5, 6, &mut rng);
    let caps = [cap(&[4, 5]), cap(&[6]), cap(&[7, 8, 4, 4])];
    let refs: Vec<&Caption> = caps.iter().collect();
    let batch = fluency_rewards(&lm, &refs).unwrap();
    for (c, b) in caps.iter().zip(&batch) {
        let lp = sequence_log_prob(&lm, c, None).unwrap();
        let single = lp.iter().sum::<f64>() / lp.len() as f64;
        assert!((single - b).abs() < 1e-12);
        assert!(*b <= 0.0);
    }
    assert!(fluency_rewards(&lm, &[]).is_err());
}

/// Encoders whose outputs are fixed unit vectors: zero weights, the output
/// set entirely by the bias.
fn constant_vse(image: [f64; 3], sentence: [f64; 3]) -> SentenceVse<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut vse = SentenceVse {
        image: ImageEncoder::init(4, 3, &mut rng),
        sentence: SentenceEncoder::init(9, 3, 2, 3, &mut rng),
    };
    vse.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|x| *x = 0.0));
    vse.image.b.data_mut().copy_from_slice(&image);
    vse.sentence.proj.as_mut().unwrap().1.data_mut().copy_from_slice(&sentence);
    vse
}

#[test]
fn sentence_relevancy_equal_and_orthogonal() {
    let f = [0.3, -0.2, 0.5, 0.1];
    let same = constant_vse([0.6, 0.8, 0.0], [0.6, 0.8, 0.0]);
    assert!((sentence_relevancy_reward(&same, &f, &cap(&[4, 5])).unwrap() - 1.0).abs() < 1e-12);
    let orth = constant_vse([1.0, 0.0, 0.0], [0.0, 0.0, 2.0]);
    assert!(sentence_relevancy_reward(&orth, &f, &cap(&[4])).unwrap().abs() < 1e-12);
}

#[test]
fn sentence_relevancy_matches_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vse = SentenceVse::<f64> {
        image: ImageEncoder::init(4, 3, &mut rng),
        sentence: SentenceEncoder::init(9, 3, 3, 3, &mut rng),
    };
    let feats: [&[f64]; 2] = [&[0.1, 0.2, 0.3, 0.4], &[-0.5, 0.0, 0.2, 0.9]];
    let caps = [cap(&[4, 5, 6]), cap(&[8])];
    let got = sentence_relevancy_rewards(&vse, &feats, &[&caps[0], &caps[1]]).unwrap();
    for i in 0..2 {
        let a = vse.image.embed(feats[i]).unwrap();
        let b = vse.sentence.embed_sentence(caps[i].ids()).unwrap();
        assert!((got[i] - cosine_sim(&a, &b)).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&got[i]));
    }
    assert!(sentence_relevancy_rewards(&vse, &feats[..1], &[&caps[0], &caps[1]]).is_err());
}

#[test]
fn concept_relevancy_hand_cases() {
    let img = [1.0, 0.0];
    let w = [0.6, 0.8];
    assert!((concept_relevancy(&img, Some((&w, 0.2)), LAMBDA) - 0.5).abs() < 1e-12);
    assert_eq!(concept_relevancy(&img, None, LAMBDA), 0.0);
    let hi = concept_relevancy(&img, Some((&w, 0.3)), LAMBDA);
    let lo = concept_relevancy(&img, Some((&w, 0.1)), LAMBDA);
    assert!(hi < lo);
}

fn toy_world() -> (Vocabulary, ConceptVocabulary) {
    let sents: Vec<Vec<&str>> = vec![vec!["a", "dog", "runs"], vec!["a", "cat", "runs"], vec!["the", "dog", "sits"]];
    let vocab = Vocabulary::build(sents.iter().map(|s| s.as_slice()), 0);
    let lists: Vec<Vec<&str>> = vec![vec!["dog", "runs"], vec!["cat", "runs"], vec!["dog", "sits"]];
    let cv = ConceptVocabulary::build(lists.iter().map(|s| s.as_slice())).unwrap();
    (vocab, cv)
}

fn toy_concept_vse(seed: u64, concepts: usize) -> ConceptVse<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ConceptVse {
        image: ImageEncoder::init(4, 3, &mut rng),
        concepts: ConceptEmbedding::init(concepts, 3, &mut rng),
    }
}

#[test]
fn concept_scorer_uses_membership_and_prior() {
    let (vocab, cv) = toy_world();
    let vse = toy_concept_vse(1, cv.len());
    let scorer = ConceptScorer::new(&vse, &cv, &vocab, LAMBDA).unwrap();
    let f = [0.2, 0.4, -0.1, 0.3];
    let img = vse.image.embed(&f).unwrap();
    let ids = vocab.encode(&["a", "dog", "runs", "the", "cat", "zebra"]);
    let r = scorer.rewards(&f, &cap(&ids)).unwrap();
    assert_eq!(r[0], 0.0);
    assert_eq!(r[3], 0.0);
    assert_eq!(r[5], 0.0);
    let dog = cv.index_of("dog").unwrap();
    let expect = cosine_sim(&img, &vse.concepts.embed_concept(dog).unwrap()) - LAMBDA * cv.prior(dog);
    assert!((r[1] - expect).abs() < 1e-12);
    assert!(r[1] != 0.0 && r[2] != 0.0 && r[4] != 0.0);
    assert!(ConceptScorer::new(&vse, &cv, &vocab, -1.0).is_err());
    let small = toy_concept_vse(1, cv.len() - 1);
    assert!(ConceptScorer::new(&small, &cv, &vocab, LAMBDA).is_err());
}

fn toy_models<'a>(
    lm: &'a LanguageModel<f64>,
    svse: &'a SentenceVse<f64>,
    cvse: &'a ConceptVse<f64>,
    cv: &ConceptVocabulary,
    vocab: &Vocabulary,
) -> RewardModels<'a, f64, LanguageModel<f64>> {
    RewardModels {
        lm,
        sentence: svse,
        concept: ConceptScorer::new(cvse, cv, vocab, LAMBDA).unwrap(),
    }
}

#[test]
fn bundle_matches_standalone_and_zero_advantage() {
    let (vocab, cv) = toy_world();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lm = LanguageModel::<f64>::init(vocab.len(), 4, 5, &mut rng);
    let svse = SentenceVse {
        image: ImageEncoder::init(4, 3, &mut rng),
        sentence: SentenceEncoder::init(vocab.len(), 3, 4, 3, &mut rng),
    };
    let cvse = toy_concept_vse(2, cv.len());
    let models = toy_models(&lm, &svse, &cvse, &cv, &vocab);
    let f = [0.5, -0.1, 0.3, 0.0];
    let s = cap(&vocab.encode(&["a", "dog", "runs"]));
    let b = cap(&vocab.encode(&["the", "cat"]));
    let (rs, rb) = models.bundle(7, &f, &s, &b).unwrap();
    assert_eq!(rs.image_id, 7);
    assert_eq!(rs.r_crlv.len(), 3);
    assert!(rb.r_crlv.is_empty());
    assert!((rs.r_flc - fluency_reward(&lm, &s).unwrap()).abs() < 1e-12);
    assert!((rb.r_flc - fluency_reward(&lm, &b).unwrap()).abs() < 1e-12);
    assert!((rs.r_srlv - sentence_relevancy_reward(&svse, &f, &s).unwrap()).abs() < 1e-12);
    assert_eq!(rs.r_crlv, models.concept.rewards(&f, &s).unwrap());

    let (again, _) = models.bundle(7, &f, &s, &b).unwrap();
    assert_eq!(again, rs);

    let (x, y) = models.bundle(7, &f, &s, &s).unwrap();
    assert_eq!(x.r_flc - y.r_flc, 0.0);
    assert_eq!(x.r_srlv - y.r_srlv, 0.0);
}

#[test]
fn trace_lines_are_json() {
    let (vocab, _) = toy_world();
    let b = RewardBundle {
        image_id: 3,
        tokens: vocab.encode(&["a", "dog"]),
        r_flc: -1.5,
        r_srlv: 0.25,
        r_crlv: vec![0.0, 0.4],
    };
    let mut out = Vec::new();
    write_trace(&mut out, &[b.clone(), b], &vocab).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["image_id"], 3);
    assert_eq!(v["sentence"], "a dog");
    assert_eq!(v["r_crlv"][1], 0.4);
}

proptest! {
    #[test]
    fn concept_reward_range_and_zero_iff_non_concept(seed in 0u64..500, f in prop::collection::vec(-1.0f64..1.0, 4)) {
        let (vocab, cv) = toy_world();
        let vse = toy_concept_vse(seed, cv.len());
        let scorer = ConceptScorer::new(&vse, &cv, &vocab, LAMBDA).unwrap();
        let img = scorer.image_embedding(&f).unwrap();
        let lo = -1.0 - LAMBDA * cv.max_prior() - 1e-12;
        for tok in 0..vocab.len() {
            let r = scorer.token_reward(&img, tok);
            prop_assert!(r >= lo && r <= 1.0 + 1e-12);
            if !scorer.is_concept(tok) {
                prop_assert_eq!(r, 0.0);
            }
        }
    }

    #[test]
    fn concept_reward_strictly_decreasing_in_prior(cos in -1.0f64..1.0, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
        prop_assume!(p1 < p2);
        let img = [1.0, 0.0];
        let w = [cos, (1.0 - cos * cos).sqrt()];
        prop_assert!(concept_relevancy(&img, Some((&w, p2)), LAMBDA) < concept_relevancy(&img, Some((&w, p1)), LAMBDA));
    }
}
