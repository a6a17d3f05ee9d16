use super::tape::Tape;
use super::tensor::{Real, Tensor};
use super::AdError;

/// A collection of named parameter tensors visited in a fixed order.
pub trait Parameters<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));
}

/// Moves gradients from a tape into the parameters bound on it.
pub fn collect_grads<T: Real, M: Parameters<T> + ?Sized>(
    model: &mut M,
    tape: &Tape<T>,
) -> Result<(), AdError> {
    let mut err = None;
    model.visit_mut("", &mut |_, t| {
        if err.is_none() {
            if let Err(e) = tape.accumulate_into(t) {
                err = Some(e);
            }
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn zero_grads<T: Real, M: Parameters<T> + ?Sized>(model: &mut M) {
    model.visit_mut("", &mut |_, t| t.zero_grad());
}

pub fn freeze<T: Real, M: Parameters<T> + ?Sized>(model: &mut M) {
    model.visit_mut("", &mut |_, t| t.freeze());
}

pub fn param_count<T: Real, M: Parameters<T> + ?Sized>(model: &M) -> usize {
    let mut n = 0;
    model.visit("", &mut |_, t| n += t.len());
    n
}

/// Named copies of every parameter value.
pub fn snapshot<T: Real, M: Parameters<T> + ?Sized>(model: &M) -> Vec<(String, Vec<T>)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, t| out.push((name, t.data().to_vec())));
    out
}

pub fn grad_norm<T: Real, M: Parameters<T> + ?Sized>(model: &M) -> f64 {
    let mut s = 0.0;
    model.visit("", &mut |_, t| {
        if let Some(g) = t.grad() {
            s += g.iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>();
        }
    });
    s.sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real, M: Parameters<T> + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let norm = grad_norm(model);
    if norm > max_norm && norm > 0.0 {
        let k = T::lit(max_norm / norm);
        model.visit_mut("", &mut |_, t| {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= k);
            }
        });
    }
    norm
}
