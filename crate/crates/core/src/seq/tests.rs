use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rnn::uniform_param;
use super::*;
use crate::autodiff::{finite_diff_check_params, Parameters, Tape, Tensor};

fn dims(vocab: usize) -> CaptionerDims {
    CaptionerDims {
        feature: 3,
        embed: 4,
        hidden: 5,
        vocab,
    }
}

fn perturbed_captioner(seed: u64, vocab: usize) -> Captioner<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Captioner::<f64>::init(dims(vocab), &mut rng);
    // larger weights than the default init so tests see non-trivial values
    m.visit_mut("", &mut |_, t| {
        let shape = t.shape().to_vec();
        *t = uniform_param(&shape, 0.6, &mut rng);
    });
    m
}

fn step_once(m: &Captioner<f64>, v: &[f64], token: usize) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let f = feature_batch(&[v]).unwrap();
    let s0 = m.start(&mut tape, &vars, 1, Some(&f)).unwrap();
    let h0 = tape.value(s0.h).data().to_vec();
    let (_, lp) = m.step(&mut tape, &vars, s0, &[token], None).unwrap();
    (h0, tape.value(lp).data().to_vec())
}

#[test]
fn captioner_init_zero_projection_gives_bias() {
    let mut m = perturbed_captioner(1, 8);
    m.img_w = Tensor::zeros(&[3, 5]).into_param();
    let (h0, _) = step_once(&m, &[0.3, -0.2, 0.9], BOS);
    assert_eq!(h0, m.img_b.data());

    let m = perturbed_captioner(2, 8);
    let (h0, _) = step_once(&m, &[0.0, 0.0, 0.0], BOS);
    assert_eq!(h0, m.img_b.data());
}

#[test]
fn captioner_init_matches_matmul_oracle() {
    let m = perturbed_captioner(3, 8);
    let v = [0.4, -1.1, 0.25];
    let (h0, _) = step_once(&m, &v, BOS);
    for (j, &h) in h0.iter().enumerate() {
        let mut e = m.img_b.data()[j];
        for (i, &vi) in v.iter().enumerate() {
            e += vi * m.img_w.at(i, j);
        }
        assert!((h - e).abs() < 1e-14);
    }
}

#[test]
fn captioner_rejects_wrong_feature_dim_and_bad_token() {
    let m = perturbed_captioner(4, 8);
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let f = feature_batch(&[[1.0, 2.0]]).unwrap();
    assert!(m.start(&mut tape, &vars, 1, Some(&f)).is_err());
    let f = feature_batch(&[[1.0, 2.0, 3.0]]).unwrap();
    let s = m.start(&mut tape, &vars, 1, Some(&f)).unwrap();
    assert!(m.step(&mut tape, &vars, s, &[8], None).is_err());
}

#[test]
fn step_outputs_normalize_and_are_deterministic() {
    let m = perturbed_captioner(5, 9);
    let v = [0.1, 0.2, -0.3];
    for tok in [BOS, 4, 7, UNK] {
        let (_, lp) = step_once(&m, &v, tok);
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(lp[PAD].exp(), 0.0);
        assert_eq!(lp[BOS].exp(), 0.0);
        assert_eq!(step_once(&m, &v, tok).1, lp);
    }
    // EOS cannot directly follow BOS
    assert_eq!(step_once(&m, &v, BOS).1[EOS].exp(), 0.0);
    assert!(step_once(&m, &v, 4).1[EOS].exp() > 0.0);
}

#[test]
fn three_token_hand_oracle() {
    // vocabulary: 4 reserved + 3 words; 1-dim embedding, hidden and feature
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let m = Captioner::<f64> {
        img_w: Tensor::matrix(1, 1, vec![0.5]).unwrap(),
        img_b: Tensor::vector(vec![0.1]),
        core: DecoderCore {
            embed: Tensor::matrix(7, 1, vec![0.0, 1.0, 0.3, -0.2, 0.7, -0.5, 0.9]).unwrap(),
            lstm: LstmParams {
                wx: Tensor::matrix(1, 4, vec![0.4, 0.2, -0.3, 0.6]).unwrap(),
                wh: Tensor::matrix(1, 4, vec![-0.1, 0.5, 0.8, 0.3]).unwrap(),
                b: Tensor::vector(vec![0.0, 0.1, 0.0, -0.2]),
            },
            out_w: Tensor::matrix(1, 7, vec![0.0, 0.0, 1.0, -1.0, 2.0, 0.5, -0.7]).unwrap(),
            out_b: Tensor::vector(vec![0.0, 0.0, 0.2, 0.0, -0.1, 0.3, 0.0]),
        },
    };
    let v = 0.8;
    let token = 4; // first word, input at step 1
    let h0 = 0.5 * v + 0.1;
    let x = 0.7;
    let i = sig(0.4 * x - 0.1 * h0);
    let _f = sig(0.2 * x + 0.5 * h0 + 0.1);
    let g = (-0.3 * x + 0.8 * h0).tanh();
    let o = sig(0.6 * x + 0.3 * h0 - 0.2);
    let c = i * g;
    let h = o * c.tanh();
    let allowed = [2usize, 3, 4, 5, 6];
    let logits: Vec<f64> = allowed.iter().map(|&k| h * m.core.out_w.data()[k] + m.core.out_b.data()[k]).collect();
    let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();

    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let fb = feature_batch(&[[v]]).unwrap();
    let s0 = m.start(&mut tape, &vars, 1, Some(&fb)).unwrap();
    let (_, lp) = m.step(&mut tape, &vars, s0, &[token], None).unwrap();
    let lp = tape.value(lp).data();
    for (k, &id) in allowed.iter().enumerate() {
        assert!((lp[id] - (logits[k] - lse)).abs() < 1e-12, "id {id}");
    }
}

fn lm(seed: u64, vocab: usize) -> LanguageModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = LanguageModel::<f64>::init(vocab, 4, 5, &mut rng);
    m.visit_mut("", &mut |_, t| {
        let shape = t.shape().to_vec();
        *t = uniform_param(&shape, 0.6, &mut rng);
    });
    m
}

#[test]
fn lm_step_and_composition() {
    let m = lm(9, 8);
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let s0 = m.start(&mut tape, &vars, 1, None).unwrap();
    let (s1, lp1) = m.step(&mut tape, &vars, s0, &[BOS], None).unwrap();
    let p1 = tape.value(lp1).data().to_vec();
    assert!((p1.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    let (s2, lp2) = m.step(&mut tape, &vars, s1, &[5], None).unwrap();
    let p2 = tape.value(lp2).data().to_vec();
    let (_, lp3) = m.step(&mut tape, &vars, s2, &[6], None).unwrap();
    let p3 = tape.value(lp3).data().to_vec();

    let cap = Caption::new(vec![5, 6]).unwrap();
    let seq = sequence_log_prob(&m, &cap, None).unwrap();
    assert_eq!(seq.len(), 3);
    // BOS-only context defines P(w1)
    assert_eq!(seq[0], p1[5]);
    assert!((seq[0] + seq[1] - (p1[5] + p2[6])).abs() < 1e-14);
    assert_eq!(seq[2], p3[EOS]);
}

#[test]
fn sequence_log_prob_rejects_missing_features() {
    let m = perturbed_captioner(1, 8);
    let cap = Caption::new(vec![4]).unwrap();
    assert!(sequence_log_prob(&m, &cap, None).is_err());
    let l = lm(1, 8);
    assert!(sequence_log_prob(&l, &cap, Some(&[1.0, 2.0, 3.0])).is_err());
}

#[test]
fn degenerate_vocab_scores_zero() {
    // Output bias puts all mass on the single word until length 2, then EOS.
    let mut m = lm(2, 5);
    m.core.out_w = Tensor::zeros(&[5, 5]).into_param();
    m.core.out_b = Tensor::vector(vec![0.0, 0.0, 0.0, -60.0, 60.0]).into_param();
    let cap = Caption::new(vec![4]).unwrap();
    let seq = sequence_log_prob(&m, &cap, None).unwrap();
    assert!(seq[0].abs() < 1e-12, "{}", seq[0]);
}

#[test]
fn batched_teacher_forcing_matches_single() {
    let m = perturbed_captioner(7, 10);
    let caps = [
        Caption::new(vec![4, 5, 6]).unwrap(),
        Caption::new(vec![9]).unwrap(),
        Caption::new(vec![7, 7, 8, 3, 4]).unwrap(),
    ];
    let feats = [[0.1, 0.5, -0.2], [0.9, -0.4, 0.0], [0.3, 0.3, 0.3]];
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let fb = feature_batch(&feats).unwrap();
    let refs: Vec<&Caption> = caps.iter().collect();
    let lp = teacher_forced(&m, &mut tape, &vars, &refs, Some(&fb), None).unwrap();
    let vals = lp.values(&tape);
    for (i, c) in caps.iter().enumerate() {
        let single = sequence_log_prob(&m, c, Some(&feats[i])).unwrap();
        assert_eq!(vals[i], single);
        // step-wise accumulation equals the sum
        let s: f64 = single.iter().sum();
        assert!((s - vals[i].iter().sum::<f64>()).abs() < 1e-14);
    }
}

#[test]
fn teacher_forcing_is_permutation_sensitive() {
    let m = perturbed_captioner(8, 10);
    let v = [0.2, -0.6, 0.4];
    let a = Caption::new(vec![4, 5, 6, 7]).unwrap();
    let b = Caption::new(vec![6, 4, 7, 5]).unwrap();
    let sa: f64 = sequence_log_prob(&m, &a, Some(&v)).unwrap().iter().sum();
    let sb: f64 = sequence_log_prob(&m, &b, Some(&v)).unwrap().iter().sum();
    assert!((sa - sb).abs() > 1e-6);
}

#[test]
fn captioner_xent_gradcheck() {
    let mut m = perturbed_captioner(11, 7);
    let caps = [Caption::new(vec![4, 5]).unwrap(), Caption::new(vec![6, 3, 4]).unwrap()];
    let feats = feature_batch(&[[0.3, -0.5, 0.8], [-0.2, 0.1, 0.6]]).unwrap();
    let err = finite_diff_check_params(
        &mut m,
        |tape, m| {
            let vars = m.bind(tape);
            let refs: Vec<&Caption> = caps.iter().collect();
            let lp = teacher_forced(m, tape, &vars, &refs, Some(&feats), None)?;
            lp.weighted_sum(tape, |_, _| -0.5)
        },
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn dropout_only_changes_training_pass() {
    let m = perturbed_captioner(12, 8);
    let cap = Caption::new(vec![4, 5, 6]).unwrap();
    let feats = feature_batch(&[[0.3, -0.5, 0.8]]).unwrap();
    let run = |rate: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dropout { rate, rng: &mut rng };
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let lp = teacher_forced(&m, &mut tape, &vars, &[&cap], Some(&feats), Some(&mut d)).unwrap();
        lp.values(&tape).remove(0)
    };
    let clean = sequence_log_prob(&m, &cap, Some(feats.row(0))).unwrap();
    assert_eq!(run(0.0), clean);
    assert_ne!(run(0.3), clean);
}
