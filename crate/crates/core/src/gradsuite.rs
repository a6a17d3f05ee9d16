//! Finite-difference verification of every differentiable tape operation,
//! the recurrent cells, and every training loss, on small random instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    finite_diff_report_many, finite_diff_report_params, AdError, FdReport, Parameters, Tape, Tensor, Var,
};
use crate::metrics::CiderScorer;
use crate::objectives::{
    caption_xent_loss, cider_selfcritical_loss, flc_selfcritical_loss, joint_loss, lm_xent_loss, rlv_selfcritical_loss,
    LossWeights,
};
use crate::rng::stream;
use crate::seq::{
    feature_batch, gru_step, lstm_step, teacher_forced, Caption, Captioner, CaptionerDims, GruParams, LanguageModel,
    LstmParams, SequenceModel, TokenLogProbs, UNK,
};
use crate::vse::{contrastive_loss, ConceptEmbedding, ConceptVse, ImageEncoder, SentenceEncoder, SentenceVse};
use crate::{Error, Result};

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 3;
const EPS: f64 = 1e-3;
/// Fresh instances drawn when one lands on a kink of a piecewise op.
const MAX_REDRAWS: usize = 20;
const MAX_EXTENT: usize = 5;
/// Vocabulary of the toy models: the reserved ids plus one content token.
const VOCAB: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> std::result::Result<Var, AdError>;

fn weighted(tape: &mut Tape<f64>, y: Var) -> std::result::Result<Var, AdError> {
    // non-uniform weights so symmetric ops still get distinct adjoints
    let len = tape.value(y).len();
    let w: Vec<f64> = (0..len).map(|i| 0.3 + 0.17 * i as f64).collect();
    let z = tape.mul_const(y, w)?;
    tape.sum(z)
}

/// Every tape operation wrapped into a scalar function of its inputs, with
/// input shapes derived from `(n, m, k)`.
pub fn op_cases(n: usize, m: usize, k: usize) -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("add", vec![vec![n, m], vec![n, m]], |t, v| { let y = t.add(v[0], v[1])?; weighted(t, y) }),
        ("sub", vec![vec![n, m], vec![n, m]], |t, v| { let y = t.sub(v[0], v[1])?; weighted(t, y) }),
        ("mul", vec![vec![n, m], vec![n, m]], |t, v| { let y = t.mul(v[0], v[1])?; weighted(t, y) }),
        ("sigmoid", vec![vec![n, m]], |t, v| { let y = t.sigmoid(v[0])?; weighted(t, y) }),
        ("tanh", vec![vec![n, m]], |t, v| { let y = t.tanh(v[0])?; weighted(t, y) }),
        ("exp", vec![vec![n, m]], |t, v| { let y = t.exp(v[0])?; weighted(t, y) }),
        ("log", vec![vec![n, m]], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let p = t.add_scalar(sq, 0.5)?;
            let y = t.log(p)?;
            weighted(t, y)
        }),
        ("relu", vec![vec![n, m]], |t, v| { let y = t.relu(v[0])?; weighted(t, y) }),
        ("hinge_pos", vec![vec![n, m]], |t, v| { let y = t.hinge_pos(v[0])?; weighted(t, y) }),
        ("scale", vec![vec![n, m]], |t, v| { let y = t.scale(v[0], -1.7)?; weighted(t, y) }),
        ("add_scalar", vec![vec![n, m]], |t, v| {
            let y = t.add_scalar(v[0], 0.4)?;
            let y = t.mul(y, y)?;
            weighted(t, y)
        }),
        ("mul_const", vec![vec![n, m]], |t, v| {
            let len = t.value(v[0]).len();
            let y = t.mul_const(v[0], (0..len).map(|i| 1.1 - 0.3 * i as f64).collect())?;
            let y = t.tanh(y)?;
            t.sum(y)
        }),
        ("add_const", vec![vec![n, m]], |t, v| {
            let len = t.value(v[0]).len();
            let c: Vec<f64> = (0..len).map(|i| 0.2 * i as f64 - 0.5).collect();
            let y = t.add_const(v[0], &c)?;
            let y = t.tanh(y)?;
            weighted(t, y)
        }),
        ("add_row", vec![vec![n, m], vec![m]], |t, v| { let y = t.add_row(v[0], v[1])?; weighted(t, y) }),
        ("matmul", vec![vec![n, k], vec![k, m]], |t, v| { let y = t.matmul(v[0], v[1])?; weighted(t, y) }),
        ("matmul_bt", vec![vec![n, k], vec![m, k]], |t, v| { let y = t.matmul_bt(v[0], v[1])?; weighted(t, y) }),
        ("log_softmax", vec![vec![n, m]], |t, v| { let y = t.log_softmax(v[0])?; weighted(t, y) }),
        ("gather_rows", vec![vec![n, m]], |t, v| {
            let rows = t.value(v[0]).shape()[0];
            let ids: Vec<usize> = (0..rows + 1).map(|i| (i * 7) % rows).collect();
            let y = t.gather_rows(v[0], &ids)?;
            weighted(t, y)
        }),
        ("pick", vec![vec![n, m]], |t, v| {
            let len = t.value(v[0]).len();
            let y = t.pick(v[0], &[0, len - 1, len / 2, 0])?;
            weighted(t, y)
        }),
        ("slice_cols", vec![vec![n, m]], |t, v| {
            let cols = t.value(v[0]).cols();
            let y = t.slice_cols(v[0], cols / 2, cols - cols / 2)?;
            weighted(t, y)
        }),
        ("normalize_rows", vec![vec![n, m]], |t, v| { let y = t.normalize_rows(v[0])?; weighted(t, y) }),
        ("row_dot", vec![vec![n, m], vec![n, m]], |t, v| { let y = t.row_dot(v[0], v[1])?; weighted(t, y) }),
        ("sum", vec![vec![n, m]], |t, v| { let y = t.mul(v[0], v[0])?; t.sum(y) }),
        ("mean", vec![vec![n, m]], |t, v| { let y = t.mul(v[0], v[0])?; t.mean(y) }),
    ]
}

/// Uniform values in `[-1.5, 1.5)`, pushed off the relu/hinge kink.
pub fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let a: f64 = rng.random_range(-1.5..1.5);
            if a.abs() < 1e-2 { a + 0.05 } else { a }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn extent(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=MAX_EXTENT)
}

/// Overwrites every parameter with uniform values in `±scale`, so gradients
/// are well away from zero.
fn randomize<M: Parameters<f64>>(model: &mut M, scale: f64, rng: &mut ChaCha8Rng) {
    model.visit_mut("", &mut |_, t| {
        t.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
    });
}

fn random_captions(count: usize, rng: &mut ChaCha8Rng) -> Vec<Caption> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(1..=4);
            Caption::new((0..len).map(|_| rng.random_range(UNK..VOCAB)).collect()).expect("content ids only")
        })
        .collect()
}

fn random_features(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let r: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    feature_batch(&r)
}

/// Parameters plus free inputs, so one check covers both.
struct Probe<P> {
    params: P,
    inputs: Vec<Tensor<f64>>,
}

impl<P: Parameters<f64>> Parameters<f64> for Probe<P> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<f64>)) {
        self.params.visit(p, f);
        for (i, t) in self.inputs.iter().enumerate() {
            f(format!("{p}input{i}"), t);
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<f64>)) {
        self.params.visit_mut(p, f);
        for (i, t) in self.inputs.iter_mut().enumerate() {
            f(format!("{p}input{i}"), t);
        }
    }
}

fn squares(tape: &mut Tape<f64>, outs: &[Var]) -> std::result::Result<Var, AdError> {
    let mut total: Option<Var> = None;
    for &o in outs {
        let sq = tape.mul(o, o)?;
        let y = weighted(tape, sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, y)?,
            None => y,
        });
    }
    Ok(total.expect("at least one output"))
}

fn check_lstm(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let (b, input, hidden) = (extent(rng), extent(rng), extent(rng));
    let mut params = LstmParams::init(input, hidden, rng);
    randomize(&mut params, 1.0, rng);
    let inputs = vec![
        random_input(&[b, input], rng),
        random_input(&[b, hidden], rng),
        random_input(&[b, hidden], rng),
    ];
    let inputs = inputs.into_iter().map(Tensor::into_param).collect();
    let mut probe = Probe { params, inputs };
    finite_diff_report_params::<_, _, Error>(
        &mut probe,
        |tape, m| {
            let v = m.params.bind(tape);
            let (x, h, c) = (tape.param(&m.inputs[0]), tape.param(&m.inputs[1]), tape.param(&m.inputs[2]));
            let (h2, c2) = lstm_step(tape, v, x, h, c)?;
            Ok(squares(tape, &[h2, c2])?)
        },
        EPS,
    )
}

fn check_gru(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let (b, input, hidden) = (extent(rng), extent(rng), extent(rng));
    let mut params = GruParams::init(input, hidden, rng);
    randomize(&mut params, 1.0, rng);
    let inputs = vec![random_input(&[b, input], rng), random_input(&[b, hidden], rng)];
    let inputs = inputs.into_iter().map(Tensor::into_param).collect();
    let mut probe = Probe { params, inputs };
    finite_diff_report_params::<_, _, Error>(
        &mut probe,
        |tape, m| {
            let v = m.params.bind(tape);
            let (x, h) = (tape.param(&m.inputs[0]), tape.param(&m.inputs[1]));
            let h2 = gru_step(tape, v, x, h)?;
            Ok(squares(tape, &[h2])?)
        },
        EPS,
    )
}

fn toy_captioner(rng: &mut ChaCha8Rng) -> Captioner<f64> {
    let dims = CaptionerDims {
        feature: extent(rng),
        embed: extent(rng),
        hidden: extent(rng),
        vocab: VOCAB,
    };
    let mut m = Captioner::init(dims, rng);
    randomize(&mut m, 1.0, rng);
    m
}

/// A captioner with a batch of captions and matching features.
struct CaptionCase {
    model: Captioner<f64>,
    captions: Vec<Caption>,
    features: Tensor<f64>,
}

impl CaptionCase {
    fn new(rng: &mut ChaCha8Rng) -> Result<Self> {
        let model = toy_captioner(rng);
        let b = extent(rng);
        let captions = random_captions(b, rng);
        let features = random_features(b, model.dims().feature, rng)?;
        Ok(Self { model, captions, features })
    }

    fn check(&mut self, loss: impl Fn(&mut Tape<f64>, &TokenLogProbs, &[&Caption]) -> Result<Var>) -> Result<FdReport> {
        let caps: Vec<&Caption> = self.captions.iter().collect();
        let f = &self.features;
        finite_diff_report_params(
            &mut self.model,
            |tape, m| {
                let vars = m.bind(tape);
                let lp = teacher_forced(m, tape, &vars, &caps, Some(f), None)?;
                loss(tape, &lp, &caps)
            },
            EPS,
        )
    }
}

fn uniform_vec(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn check_caption_xent(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let mut c = CaptionCase::new(rng)?;
    let caps: Vec<&Caption> = c.captions.iter().collect();
    let f = &c.features;
    finite_diff_report_params(
        &mut c.model,
        |tape, m| {
            let vars = m.bind(tape);
            caption_xent_loss(m, tape, &vars, &caps, f, None)
        },
        EPS,
    )
}

fn check_lm_xent(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let mut m = LanguageModel::init(VOCAB, extent(rng), extent(rng), rng);
    randomize(&mut m, 1.0, rng);
    let sentences = random_captions(extent(rng), rng);
    let refs: Vec<&Caption> = sentences.iter().collect();
    finite_diff_report_params(
        &mut m,
        |tape, m| {
            let vars = m.bind(tape);
            lm_xent_loss(m, tape, &vars, &refs, None)
        },
        EPS,
    )
}

fn check_flc(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let mut c = CaptionCase::new(rng)?;
    let b = c.captions.len();
    let (s, g) = (uniform_vec(b, -3.0, 0.0, rng), uniform_vec(b, -3.0, 0.0, rng));
    c.check(|tape, lp, _| flc_selfcritical_loss(tape, lp, &s, &g, false))
}

fn check_rlv(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let mut c = CaptionCase::new(rng)?;
    let b = c.captions.len();
    let (s, g) = (uniform_vec(b, -1.0, 1.0, rng), uniform_vec(b, -1.0, 1.0, rng));
    let crlv: Vec<Vec<f64>> = c.captions.iter().map(|cap| uniform_vec(cap.len(), -0.5, 1.0, rng)).collect();
    c.check(|tape, lp, _| rlv_selfcritical_loss(tape, lp, &s, &g, &crlv, false))
}

fn check_cider(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let mut c = CaptionCase::new(rng)?;
    let b = c.captions.len();
    let refs: Vec<Vec<Vec<usize>>> = (0..b)
        .map(|_| random_captions(2, rng).into_iter().map(|r| r.ids().to_vec()).collect())
        .collect();
    let scorer = CiderScorer::fit(&refs)?;
    let baseline = random_captions(b, rng);
    let base: Vec<&Caption> = baseline.iter().collect();
    c.check(|tape, lp, caps| cider_selfcritical_loss(tape, lp, &scorer, caps, &base, &refs, false))
}

fn check_joint(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let mut c = CaptionCase::new(rng)?;
    let b = c.captions.len();
    let (fs, fg) = (uniform_vec(b, -3.0, 0.0, rng), uniform_vec(b, -3.0, 0.0, rng));
    let (rs, rg) = (uniform_vec(b, -1.0, 1.0, rng), uniform_vec(b, -1.0, 1.0, rng));
    let crlv: Vec<Vec<f64>> = c.captions.iter().map(|cap| uniform_vec(cap.len(), -0.5, 1.0, rng)).collect();
    let weights = LossWeights {
        alpha: rng.random_range(0.0..1.0),
        beta: rng.random_range(0.0..1.0),
        gamma: rng.random_range(0.0..1.0),
    };
    let caps: Vec<&Caption> = c.captions.iter().collect();
    let f = &c.features;
    finite_diff_report_params(
        &mut c.model,
        |tape, m| {
            let vars = m.bind(tape);
            let cap = caption_xent_loss(m, tape, &vars, &caps, f, None)?;
            let lp = teacher_forced(m, tape, &vars, &caps, Some(f), None)?;
            let flc = flc_selfcritical_loss(tape, &lp, &fs, &fg, false)?;
            let rlv = rlv_selfcritical_loss(tape, &lp, &rs, &rg, &crlv, false)?;
            joint_loss(tape, &weights, Some(cap), Some(flc), Some(rlv))
        },
        EPS,
    )
}

fn check_sentence_contrastive(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let (feature, joint, b) = (extent(rng), extent(rng), rng.random_range(2..=MAX_EXTENT));
    let mut m = SentenceVse {
        image: ImageEncoder::init(feature, joint, rng),
        sentence: SentenceEncoder::init(VOCAB, extent(rng), extent(rng), joint, rng),
    };
    randomize(&mut m, 1.0, rng);
    let f = random_input(&[b, feature], rng);
    let sents: Vec<Vec<usize>> = random_captions(b, rng).into_iter().map(|c| c.ids().to_vec()).collect();
    let margin = rng.random_range(0.1..1.0);
    finite_diff_report_params(
        &mut m,
        |tape, m| {
            let iv = m.image.bind(tape);
            let sv = m.sentence.bind(tape);
            let img = m.image.encode(tape, iv, &f)?;
            let refs: Vec<&[usize]> = sents.iter().map(Vec::as_slice).collect();
            let sen = m.sentence.encode(tape, sv, &refs)?;
            contrastive_loss(tape, img, sen, margin, &|_, _| true)
        },
        EPS,
    )
}

fn check_concept_contrastive(rng: &mut ChaCha8Rng) -> Result<FdReport> {
    let (feature, joint, concepts) = (extent(rng), extent(rng), rng.random_range(2..=MAX_EXTENT));
    let b = rng.random_range(2..=concepts);
    let mut m = ConceptVse {
        image: ImageEncoder::init(feature, joint, rng),
        concepts: ConceptEmbedding::init(concepts, joint, rng),
    };
    randomize(&mut m, 1.0, rng);
    let f = random_input(&[b, feature], rng);
    let mut ids: Vec<usize> = (0..concepts).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), rng);
    ids.truncate(b);
    let margin = rng.random_range(0.1..1.0);
    finite_diff_report_params(
        &mut m,
        |tape, m| {
            let iv = m.image.bind(tape);
            let table = tape.param(&m.concepts.table);
            let img = m.image.encode(tape, iv, &f)?;
            let con = m.concepts.encode(tape, table, &ids)?;
            contrastive_loss(tape, img, con, margin, &|_, _| true)
        },
        EPS,
    )
}

type CaseFn = fn(&mut ChaCha8Rng) -> Result<FdReport>;

const MODEL_CASES: [(&str, CaseFn); 10] = [
    ("lstm_step", check_lstm),
    ("gru_step", check_gru),
    ("loss.caption_xent", check_caption_xent),
    ("loss.lm_xent", check_lm_xent),
    ("loss.sentence_contrastive", check_sentence_contrastive),
    ("loss.concept_contrastive", check_concept_contrastive),
    ("loss.flc_selfcritical", check_flc),
    ("loss.rlv_selfcritical", check_rlv),
    ("loss.cider_selfcritical", check_cider),
    ("loss.joint", check_joint),
];

/// Draws instances from `case` until one is smooth around every probed
/// coordinate (or the redraw budget runs out) and returns its error.
fn smooth_instance(mut case: impl FnMut() -> Result<FdReport>) -> Result<f64> {
    let mut report = case()?;
    for _ in 0..MAX_REDRAWS {
        if !report.kinked {
            break;
        }
        report = case()?;
    }
    Ok(report.max_rel_err)
}

/// Runs every check on `trials` random instances and reports the worst
/// relative error per operation, in a fixed order.
pub fn run_suite(seed: u64, trials: usize) -> Result<Vec<GradCheck>> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(err),
        None => worst.push((name.to_string(), err)),
    };
    for trial in 0..trials as u64 {
        let mut rng = stream(seed, &[trial]);
        let (n, m, k) = (extent(&mut rng), extent(&mut rng), extent(&mut rng));
        for (name, shapes, f) in op_cases(n, m, k) {
            let err = smooth_instance(|| {
                let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_input(s, &mut rng)).collect();
                finite_diff_report_many::<_, Error>(|t, v| Ok(f(t, v)?), &inputs, EPS)
            })?;
            record(name, err);
        }
        for (name, f) in MODEL_CASES {
            record(name, smooth_instance(|| f(&mut rng))?);
        }
    }
    Ok(worst
        .into_iter()
        .map(|(name, max_rel_err)| GradCheck { name, max_rel_err })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_covers_every_op() {
        let report = run_suite(7, 2).unwrap();
        assert_eq!(report.len(), op_cases(1, 1, 1).len() + MODEL_CASES.len());
        for c in &report {
            assert!(c.passed(), "{}: {}", c.name, c.max_rel_err);
        }
    }
}
