use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{adam_step, collect_grads, finite_diff_check_params, zero_grads, AdamConfig, AdamState, Parameters};
use crate::metrics::CiderScorer;
use crate::seq::{feature_batch, sequence_log_prob, CaptionerDims, EOS};
use crate::testing::{TableModel, A, B, C};

fn cap(ids: &[usize]) -> Caption {
    Caption::new(ids.to_vec()).unwrap()
}

fn value(tape: &Tape<f64>, v: Var) -> f64 {
    tape.value(v).item()
}

/// Table model scoring `[A, B]` with log-probs `[-1, -2, 0]`.
fn hand_model() -> TableModel {
    let e1 = (-1.0f64).exp();
    let e2 = (-2.0f64).exp();
    TableModel::new(&[
        (&[], &[(A, e1), (B, 1.0 - e1)]),
        (&[A], &[(B, e2), (C, 1.0 - e2)]),
        (&[A, B], &[(EOS, 1.0)]),
    ])
}

fn table_lp(m: &TableModel, tape: &mut Tape<f64>, caps: &[&Caption]) -> TokenLogProbs {
    teacher_forced(m, tape, &(), caps, None, None).unwrap()
}

fn toy_captioner(seed: u64) -> Captioner<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = CaptionerDims {
        feature: 3,
        embed: 4,
        hidden: 5,
        vocab: 8,
    };
    let mut m = Captioner::init(dims, &mut rng);
    m.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|x| *x *= 10.0));
    m
}

fn feats(seed: u64, rows: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<Vec<f64>> = (0..rows).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    feature_batch(&r).unwrap()
}

#[test]
fn xent_of_certain_model_is_zero() {
    let m = TableModel::new(&[(&[], &[(A, 1.0)]), (&[A], &[(EOS, 1.0)])]);
    let mut tape = Tape::new();
    let l = xent_loss(&m, &mut tape, &(), &[&cap(&[A])], None, None).unwrap();
    assert_eq!(value(&tape, l), 0.0);
}

#[test]
fn xent_of_uniform_model_is_t_log_v() {
    let u: &[(usize, f64)] = &[(A, 0.25), (B, 0.25), (C, 0.25), (EOS, 0.25)];
    let m = TableModel::new(&[(&[], u), (&[A], u), (&[A, B], u)]);
    let mut tape = Tape::new();
    let s = cap(&[A, B]);
    let l = xent_loss(&m, &mut tape, &(), &[&s, &s], None, None).unwrap();
    assert!((value(&tape, l) - 3.0 * 4f64.ln()).abs() < 1e-12);
}

#[test]
fn xent_is_mean_of_negated_sequence_log_probs() {
    let m = toy_captioner(1);
    let f = feats(2, 2);
    let caps = [cap(&[4, 5, 6]), cap(&[7])];
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let l = caption_xent_loss(&m, &mut tape, &vars, &[&caps[0], &caps[1]], &f, None).unwrap();
    let expect: f64 = (0..2)
        .map(|i| -sequence_log_prob(&m, &caps[i], Some(f.row(i))).unwrap().iter().sum::<f64>())
        .sum::<f64>()
        / 2.0;
    assert!((value(&tape, l) - expect).abs() < 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lm = LanguageModel::<f64>::init(8, 4, 5, &mut rng);
    let mut tape = Tape::new();
    let vars = lm.bind(&mut tape);
    let l = lm_xent_loss(&lm, &mut tape, &vars, &[&caps[0], &caps[1]], None).unwrap();
    let expect: f64 = caps
        .iter()
        .map(|c| -sequence_log_prob(&lm, c, None).unwrap().iter().sum::<f64>())
        .sum::<f64>()
        / 2.0;
    assert!((value(&tape, l) - expect).abs() < 1e-10);
    assert!(lm_xent_loss(&lm, &mut tape, &vars, &[], None).is_err());
}

#[test]
fn flc_hand_case_and_zero_advantage() {
    // Σ log P of [A] is -3: P(A) = e^-1, P(EOS | A) = e^-2.
    let e1 = (-1.0f64).exp();
    let e2 = (-2.0f64).exp();
    let m = TableModel::new(&[(&[], &[(A, e1), (B, 1.0 - e1)]), (&[A], &[(EOS, e2), (B, 1.0 - e2)])]);
    let s = cap(&[A]);
    let mut tape = Tape::new();
    let lp = table_lp(&m, &mut tape, &[&s]);
    let l = flc_selfcritical_loss(&mut tape, &lp, &[-0.5], &[-1.0], false).unwrap();
    assert!((value(&tape, l) - 1.5).abs() < 1e-12);
    let l = flc_selfcritical_loss(&mut tape, &lp, &[-0.7], &[-0.7], false).unwrap();
    assert_eq!(value(&tape, l), 0.0);
    let l = flc_selfcritical_loss(&mut tape, &lp, &[-0.5], &[-1.0], true).unwrap();
    assert!((value(&tape, l) - 0.75).abs() < 1e-12);
    assert!(flc_selfcritical_loss(&mut tape, &lp, &[0.0, 1.0], &[0.0, 1.0], false).is_err());
    assert!(flc_selfcritical_loss(&mut tape, &lp, &[0.0], &[0.0, 1.0], false).is_err());
}

#[test]
fn rlv_hand_case() {
    let m = hand_model();
    let s = cap(&[A, B]);
    let mut tape = Tape::new();
    let lp = table_lp(&m, &mut tape, &[&s]);
    let l = rlv_selfcritical_loss(&mut tape, &lp, &[0.3], &[0.2], &[vec![0.0, 0.5]], false).unwrap();
    assert!((value(&tape, l) - 1.3).abs() < 1e-12);
    let l = rlv_selfcritical_loss(&mut tape, &lp, &[0.0], &[0.0], &[vec![0.0, 0.0]], false).unwrap();
    assert_eq!(value(&tape, l), 0.0);
    let l = rlv_selfcritical_loss(&mut tape, &lp, &[0.4], &[0.4], &[vec![0.0, 0.0]], false).unwrap();
    assert_eq!(value(&tape, l), 0.0);
    assert!(rlv_selfcritical_loss(&mut tape, &lp, &[0.1], &[0.0], &[vec![0.0]], false).is_err());
    assert!(rlv_selfcritical_loss(&mut tape, &lp, &[0.1], &[0.0], &[vec![0.0, 0.0, 0.0]], false).is_err());
}

#[test]
fn joint_loss_examples() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::scalar(2.0));
    let f = tape.constant(Tensor::scalar(1.0));
    let r = tape.constant(Tensor::scalar(0.5));
    let w = LossWeights::default();
    let l = joint_loss(&mut tape, &w, Some(c), Some(f), Some(r)).unwrap();
    assert!((value(&tape, l) - 0.75).abs() < 1e-12);
    let only = LossWeights {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };
    let l = joint_loss(&mut tape, &only, Some(c), Some(f), Some(r)).unwrap();
    assert_eq!(value(&tape, l), 2.0);
    let z = tape.constant(Tensor::scalar(0.0));
    let l = joint_loss(&mut tape, &w, Some(z), Some(z), Some(z)).unwrap();
    assert_eq!(value(&tape, l), 0.0);
    let l = joint_loss(&mut tape, &w, None, None, None).unwrap();
    assert_eq!(value(&tape, l), 0.0);
    assert!(w.validate().is_ok());
    assert!(LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 }.validate().is_err());
    assert!(LossWeights { alpha: -1.0, beta: 0.0, gamma: 1.0 }.validate().is_err());
}

#[test]
fn cider_selfcritical_cases() {
    let refs = vec![vec![vec![4usize, 5, 6, 7]], vec![vec![6usize, 7, 5, 4, 4]]];
    let scorer = CiderScorer::fit(&refs).unwrap();
    let m = toy_captioner(9);
    let f = feats(10, 2);
    let sampled = [cap(&[4, 5, 6, 7]), cap(&[6, 7, 4])];
    let baseline = [cap(&[3, 3]), cap(&[5, 5])];
    let s_refs: Vec<&Caption> = sampled.iter().collect();
    let b_refs: Vec<&Caption> = baseline.iter().collect();

    let adv = cider_advantages(&scorer, &s_refs, &b_refs, &refs).unwrap();
    assert!(adv[0] > 0.0);
    // Baseline shares nothing with the reference, so the advantage is the
    // sampled score itself.
    let exact = scorer.score(&[4, 5, 6, 7], &refs[0]).unwrap();
    assert_eq!(scorer.score(&[3, 3], &refs[0]).unwrap(), 0.0);
    assert!((adv[0] - exact).abs() < 1e-12);

    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let lp = teacher_forced(&m, &mut tape, &vars, &s_refs, Some(&f), None).unwrap();
    let l = cider_selfcritical_loss(&mut tape, &lp, &scorer, &s_refs, &b_refs, &refs, false).unwrap();
    let sums: Vec<f64> = lp.values(&tape).iter().map(|v| v.iter().sum()).collect();
    let expect = -(adv[0] * sums[0] + adv[1] * sums[1]) / 2.0;
    assert!((value(&tape, l) - expect).abs() < 1e-10);

    let l = cider_selfcritical_loss(&mut tape, &lp, &scorer, &s_refs, &s_refs, &refs, false).unwrap();
    assert_eq!(value(&tape, l), 0.0);
    assert!(cider_advantages(&scorer, &s_refs, &b_refs, &refs[..1]).is_err());
}

fn param_grads<F: Fn(&mut Tape<f64>, &Captioner<f64>) -> Var>(m: &mut Captioner<f64>, f: F) -> Vec<f64> {
    zero_grads(m);
    let mut tape = Tape::new();
    let out = f(&mut tape, m);
    tape.backward(out).unwrap();
    collect_grads(m, &tape).unwrap();
    let mut g = Vec::new();
    m.visit("", &mut |_, t| g.extend_from_slice(t.grad().unwrap()));
    zero_grads(m);
    g
}

#[test]
fn selfcritical_gradient_is_scaled_log_prob_gradient() {
    let mut m = toy_captioner(13);
    let f = feats(14, 1);
    let s = cap(&[4, 6, 5]);
    let a = 0.37;
    let sum_lp = |tape: &mut Tape<f64>, m: &Captioner<f64>| {
        let vars = m.bind(tape);
        let lp = teacher_forced(m, tape, &vars, &[&s], Some(&f), None).unwrap();
        lp.weighted_sum(tape, |_, _| 1.0).unwrap()
    };
    let base = param_grads(&mut m, sum_lp);
    let flc = param_grads(&mut m, |tape, m| {
        let vars = m.bind(tape);
        let lp = teacher_forced(m, tape, &vars, &[&s], Some(&f), None).unwrap();
        flc_selfcritical_loss(tape, &lp, &[a - 0.1], &[-0.1], false).unwrap()
    });
    let rlv = param_grads(&mut m, |tape, m| {
        let vars = m.bind(tape);
        let lp = teacher_forced(m, tape, &vars, &[&s], Some(&f), None).unwrap();
        rlv_selfcritical_loss(tape, &lp, &[a + 0.2], &[0.2], &[vec![0.0; 3]], false).unwrap()
    });
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let want = -a * base[i];
        for got in [flc[i], rlv[i]] {
            worst = worst.max((got - want).abs() / want.abs().max(1e-12));
        }
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn losses_pass_gradcheck() {
    let mut m = toy_captioner(17);
    let f = feats(18, 2);
    let caps = [cap(&[4, 5]), cap(&[7, 6, 6])];
    let refs: Vec<&Caption> = caps.iter().collect();
    let cap_err = finite_diff_check_params(
        &mut m,
        |tape: &mut Tape<f64>, m: &Captioner<f64>| {
            let vars = m.bind(tape);
            caption_xent_loss(m, tape, &vars, &refs, &f, None)
        },
        1e-6,
    )
    .unwrap();
    let flc_err = finite_diff_check_params(
        &mut m,
        |tape: &mut Tape<f64>, m: &Captioner<f64>| {
            let vars = m.bind(tape);
            let lp = teacher_forced(m, tape, &vars, &refs, Some(&f), None)?;
            flc_selfcritical_loss(tape, &lp, &[-1.0, -2.5], &[-1.5, -2.0], false)
        },
        1e-6,
    )
    .unwrap();
    let rlv_err = finite_diff_check_params(
        &mut m,
        |tape: &mut Tape<f64>, m: &Captioner<f64>| {
            let vars = m.bind(tape);
            let lp = teacher_forced(m, tape, &vars, &refs, Some(&f), None)?;
            rlv_selfcritical_loss(tape, &lp, &[0.3, 0.1], &[0.2, 0.4], &[vec![0.0, 0.6], vec![0.2, 0.0, -0.3]], false)
        },
        1e-6,
    )
    .unwrap();
    for e in [cap_err, flc_err, rlv_err] {
        assert!(e < 1e-4, "{cap_err} {flc_err} {rlv_err}");
    }
}

#[test]
fn positive_advantage_step_raises_sample_log_prob() {
    let mut m = toy_captioner(21);
    let f = feats(22, 1);
    let s = cap(&[5, 4, 7]);
    let before: f64 = sequence_log_prob(&m, &s, Some(f.row(0))).unwrap().iter().sum();
    let mut opt = AdamState::new(&m, AdamConfig::with_lr(1e-4));
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let lp = teacher_forced(&m, &mut tape, &vars, &[&s], Some(&f), None).unwrap();
    let l = flc_selfcritical_loss(&mut tape, &lp, &[0.5], &[0.0], false).unwrap();
    tape.backward(l).unwrap();
    collect_grads(&mut m, &tape).unwrap();
    adam_step(&mut m, &mut opt).unwrap();
    let after: f64 = sequence_log_prob(&m, &s, Some(f.row(0))).unwrap().iter().sum();
    assert!(after > before, "{before} -> {after}");
}

proptest! {
    #[test]
    fn advantage_shift_invariance(s in -3.0f64..0.0, b in -3.0f64..0.0, c in -5.0f64..5.0, d in -1.0f64..1.0, e in -1.0f64..1.0) {
        let m = hand_model();
        let x = cap(&[A, B]);
        let mut tape = Tape::new();
        let lp = table_lp(&m, &mut tape, &[&x]);
        let l1 = flc_selfcritical_loss(&mut tape, &lp, &[s], &[b], false).unwrap();
        let l2 = flc_selfcritical_loss(&mut tape, &lp, &[s + c], &[b + c], false).unwrap();
        prop_assert!((value(&tape, l1) - value(&tape, l2)).abs() < 1e-12);
        let r1 = rlv_selfcritical_loss(&mut tape, &lp, &[d], &[e], &[vec![0.1, 0.0]], false).unwrap();
        let r2 = rlv_selfcritical_loss(&mut tape, &lp, &[d + c], &[e + c], &[vec![0.1, 0.0]], false).unwrap();
        prop_assert!((value(&tape, r1) - value(&tape, r2)).abs() < 1e-12);
    }
}
