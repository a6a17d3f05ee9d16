//! Test doubles shared by unit tests.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Parameters, Tape, Tensor, Var};
use crate::error::Result;
use crate::seq::models::CoreVars;
use crate::seq::{DecoderCore, DecoderState, Dropout, SequenceModel, BOS, MASKED_LOGIT, PAD};

pub const A: usize = 4;
pub const B: usize = 5;
pub const C: usize = 6;

/// Next-token distributions looked up by prefix; the state rows store the
/// prefix itself.
pub struct TableModel {
    core: DecoderCore<f64>,
    table: HashMap<Vec<usize>, Vec<(usize, f64)>>,
}

impl TableModel {
    pub fn new(entries: &[(&[usize], &[(usize, f64)])]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self {
            core: DecoderCore::init(7, 1, 1, &mut rng),
            table: entries.iter().map(|(k, v)| (k.to_vec(), v.to_vec())).collect(),
        }
    }

    pub fn logp(&self, prefix: &[usize]) -> Vec<f64> {
        let mut row = vec![MASKED_LOGIT; 7];
        if let Some(d) = self.table.get(prefix) {
            for &(w, p) in d {
                row[w] = p.ln();
            }
        }
        row
    }
}

impl Parameters<f64> for TableModel {
    fn visit(&self, _: &str, _: &mut dyn FnMut(String, &Tensor<f64>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(String, &mut Tensor<f64>)) {}
}

const DEPTH: usize = 8;

impl SequenceModel<f64> for TableModel {
    type Vars = ();

    fn bind(&self, _: &mut Tape<f64>) {}

    fn core(&self) -> &DecoderCore<f64> {
        &self.core
    }

    fn core_vars(_: &()) -> &CoreVars {
        unimplemented!("table model has no decoder core")
    }

    fn start(&self, tape: &mut Tape<f64>, _: &(), batch: usize, _: Option<&Tensor<f64>>) -> Result<DecoderState> {
        let h = tape.constant(Tensor::zeros(&[batch, DEPTH]));
        Ok(DecoderState { h, c: h })
    }

    fn step(
        &self,
        tape: &mut Tape<f64>,
        _: &(),
        state: DecoderState,
        tokens: &[usize],
        _: Option<&mut Dropout<'_>>,
    ) -> Result<(DecoderState, Var)> {
        let hv = tape.value(state.h).clone();
        let mut next = Vec::new();
        let mut logp = Vec::new();
        for (i, &tok) in tokens.iter().enumerate() {
            let row = hv.row(i);
            let n = row[0] as usize;
            let mut prefix: Vec<usize> = row[1..=n].iter().map(|&x| x as usize).collect();
            if tok != BOS && tok != PAD {
                prefix.push(tok);
            }
            let mut enc = vec![0.0; DEPTH];
            enc[0] = prefix.len() as f64;
            for (k, &t) in prefix.iter().enumerate() {
                enc[k + 1] = t as f64;
            }
            next.extend(enc);
            logp.extend(self.logp(&prefix));
        }
        let h = tape.constant(Tensor::matrix(tokens.len(), DEPTH, next)?);
        let lp = tape.constant(Tensor::matrix(tokens.len(), 7, logp)?);
        Ok((DecoderState { h, c: h }, lp))
    }
}

