use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::{MicroWorld, SceneContent};
use crate::error::{Error, Result};

/// Translation corruption model: one disfluency op and one concept
/// substitution, each applied with its own probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub disfluency_rate: f64,
    pub irrelevancy_rate: f64,
    pub swap: f64,
    pub drop: f64,
    pub duplicate: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::with_rates(0.3, 0.3)
    }
}

impl NoiseSpec {
    pub fn with_rates(disfluency_rate: f64, irrelevancy_rate: f64) -> Self {
        Self {
            disfluency_rate,
            irrelevancy_rate,
            swap: 1.0 / 3.0,
            drop: 1.0 / 3.0,
            duplicate: 1.0 / 3.0,
        }
    }

    pub fn clean() -> Self {
        Self::with_rates(0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.disfluency_rate) || !unit(self.irrelevancy_rate) {
            return Err(Error::Invalid("noise rates must lie in [0, 1]".into()));
        }
        let mix = [self.swap, self.drop, self.duplicate];
        if mix.iter().any(|&p| !(p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid("disfluency op mix must be a distribution".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseFlags {
    pub disfluent: bool,
    pub irrelevant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisfluencyOp {
    Swap,
    Drop,
    Duplicate,
}

/// Applies `op` at `pos`; returns false when the caption is too short.
pub fn apply_disfluency(tokens: &mut Vec<String>, op: DisfluencyOp, pos: usize) -> bool {
    match op {
        DisfluencyOp::Swap if tokens.len() >= 2 => tokens.swap(pos, pos + 1),
        DisfluencyOp::Drop if tokens.len() >= 2 => {
            tokens.remove(pos);
        }
        DisfluencyOp::Duplicate if !tokens.is_empty() => {
            let t = tokens[pos].clone();
            tokens.insert(pos + 1, t);
        }
        _ => return false,
    }
    true
}

/// Dictionary translation of `pivot`, then with probability
/// `disfluency_rate` one swap/drop/duplicate, then with probability
/// `irrelevancy_rate` one concept token replaced by a concept of the same
/// category that is absent from the image.
pub fn pseudo_translate<R: Rng>(
    pivot: &[String],
    content: &SceneContent,
    world: &MicroWorld,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<(Vec<String>, NoiseFlags)> {
    let mut out = world.translate(pivot)?;
    let mut flags = NoiseFlags::default();
    if rng.random::<f64>() < noise.disfluency_rate {
        let u: f64 = rng.random();
        let op = if u < noise.swap {
            DisfluencyOp::Swap
        } else if u < noise.swap + noise.drop {
            DisfluencyOp::Drop
        } else {
            DisfluencyOp::Duplicate
        };
        let span = if op == DisfluencyOp::Swap {
            out.len().saturating_sub(1)
        } else {
            out.len()
        };
        if span > 0 {
            let pos = rng.random_range(0..span);
            flags.disfluent = apply_disfluency(&mut out, op, pos);
        }
    }
    if rng.random::<f64>() < noise.irrelevancy_rate {
        let present = content.concepts();
        let slots: Vec<(usize, usize)> = out
            .iter()
            .enumerate()
            .filter_map(|(i, t)| world.target_concept(t).map(|c| (i, c)))
            .collect();
        if let Some(&(pos, c)) = slots.choose(rng) {
            let cat = world.concepts[c].category;
            let pool: Vec<usize> = world
                .concepts_in(cat)
                .filter(|k| !present.contains(k))
                .collect();
            if let Some(&d) = pool.choose(rng) {
                out[pos] = world.concepts[d].target.clone();
                flags.irrelevant = true;
            }
        }
    }
    Ok((out, flags))
}
