use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default ranking margin.
pub const MARGIN: f64 = 0.2;

/// Max-violating hinge loss over a `[B, B]` similarity matrix whose diagonal
/// holds the positive pairs (`sims[i][j] = s(image_i, partner_j)`).
///
/// For each pair `i` the hardest partner `j ≠ i` and the hardest image
/// `k ≠ i` are selected among entries allowed by `is_negative(image, partner)`;
/// the two hinges are summed over the batch. Pairs without any allowed
/// negative contribute nothing.
pub fn contrastive_from_sims<T: Real>(
    tape: &mut Tape<T>,
    sims: Var,
    margin: f64,
    is_negative: &dyn Fn(usize, usize) -> bool,
) -> Result<Var> {
    let sv = tape.value(sims);
    if sv.rank() != 2 || sv.shape()[0] != sv.shape()[1] {
        return Err(Error::Invalid(format!(
            "similarity matrix must be square, got {:?}",
            sv.shape()
        )));
    }
    let b = sv.shape()[0];
    let at = |i: usize, j: usize| sv.data()[i * b + j];
    let hardest = |cands: &mut dyn Iterator<Item = (usize, T)>| {
        let mut best: Option<(usize, T)> = None;
        for (idx, s) in cands {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((idx, s));
            }
        }
        best.map(|(idx, _)| idx)
    };
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for i in 0..b {
        let row = hardest(&mut (0..b).filter(|&j| j != i && is_negative(i, j)).map(|j| (j, at(i, j))));
        if let Some(j) = row {
            neg.push(i * b + j);
            pos.push(i * b + i);
        }
        let col = hardest(&mut (0..b).filter(|&k| k != i && is_negative(k, i)).map(|k| (k, at(k, i))));
        if let Some(k) = col {
            neg.push(k * b + i);
            pos.push(i * b + i);
        }
    }
    if neg.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let n = tape.pick(sims, &neg)?;
    let p = tape.pick(sims, &pos)?;
    let d = tape.sub(n, p)?;
    let d = tape.add_scalar(d, T::lit(margin))?;
    let h = tape.hinge_pos(d)?;
    Ok(tape.sum(h)?)
}

/// Contrastive loss between unit image rows `[B, D]` and unit partner rows
/// `[B, D]`.
pub fn contrastive_loss<T: Real>(
    tape: &mut Tape<T>,
    images: Var,
    partners: Var,
    margin: f64,
    is_negative: &dyn Fn(usize, usize) -> bool,
) -> Result<Var> {
    let sims = tape.matmul_bt(images, partners)?;
    contrastive_from_sims(tape, sims, margin, is_negative)
}

/// Fraction of queries whose gold gallery item ranks within the top `k`.
/// Ties are broken in favour of the lower gallery index.
pub fn recall_at_k(sims: &[Vec<f64>], gold: &[usize], k: usize) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::Empty("similarity matrix"));
    }
    if sims.len() != gold.len() {
        return Err(Error::Length {
            what: "gold indices",
            left: gold.len(),
            right: sims.len(),
        });
    }
    let gallery = sims[0].len();
    if k == 0 || k > gallery {
        return Err(Error::Invalid(format!("k = {k} outside 1..={gallery}")));
    }
    let mut hits = 0usize;
    for (row, &g) in sims.iter().zip(gold) {
        if row.len() != gallery {
            return Err(Error::Length {
                what: "similarity row",
                left: row.len(),
                right: gallery,
            });
        }
        if g >= gallery {
            return Err(Error::InvalidToken { id: g, size: gallery });
        }
        let sg = row[g];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > sg || (s == sg && j < g))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / sims.len() as f64)
}
