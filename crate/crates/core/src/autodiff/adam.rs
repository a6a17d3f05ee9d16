use super::params::Parameters;
use super::tensor::Real;
use super::AdError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First/second moment estimates for every trainable parameter, in visit order.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<M: Parameters<T> + ?Sized>(model: &M, config: AdamConfig) -> Self {
        let (mut names, mut first, mut second) = (Vec::new(), Vec::new(), Vec::new());
        model.visit("", &mut |name, t| {
            if t.requires_grad() {
                names.push(name);
                first.push(vec![T::zero(); t.len()]);
                second.push(vec![T::zero(); t.len()]);
            }
        });
        Self {
            config,
            step: 0,
            names,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[T] {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &[T] {
        &self.second[i]
    }
}

/// One bias-corrected Adam update over all trainable parameters, then clears
/// their gradients. Fails without touching anything if a gradient is absent.
pub fn adam_step<T: Real, M: Parameters<T> + ?Sized>(
    model: &mut M,
    state: &mut AdamState<T>,
) -> Result<(), AdError> {
    let mut problem = None;
    let mut idx = 0;
    model.visit("", &mut |name, t| {
        if !t.requires_grad() || problem.is_some() {
            return;
        }
        if state.names.get(idx) != Some(&name) || state.first[idx].len() != t.len() {
            problem = Some(AdError::StateMismatch(name));
        } else if t.grad().is_none() {
            problem = Some(AdError::MissingGrad(name));
        }
        idx += 1;
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if idx != state.names.len() {
        return Err(AdError::StateMismatch(format!(
            "{} trainable tensors, state holds {}",
            idx,
            state.names.len()
        )));
    }

    state.step += 1;
    let c = state.config;
    let t_step = state.step as i32;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let bc1 = T::lit(1.0 - c.beta1.powi(t_step));
    let bc2 = T::lit(1.0 - c.beta2.powi(t_step));
    let (lr, eps) = (T::lit(c.learning_rate), T::lit(c.epsilon));
    let mut idx = 0;
    model.visit_mut("", &mut |_, t| {
        if !t.requires_grad() {
            return;
        }
        let g = t.take_grad().expect("checked above");
        let (m, v) = (&mut state.first[idx], &mut state.second[idx]);
        for (j, p) in t.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
        idx += 1;
    });
    Ok(())
}
