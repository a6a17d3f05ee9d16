//! LSTM and GRU cells expressed on the tape.

use rand::Rng;

use crate::autodiff::{AdError, Parameters, Real, Tape, Tensor, Var};

/// Uniform weights in `[-scale, scale]`, marked trainable.
pub fn uniform_param<T: Real, R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-scale..=scale))).collect();
    Tensor::new(shape, data).expect("valid shape").into_param()
}

pub fn zero_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).into_param()
}

pub const INIT_SCALE: f64 = 0.08;

/// Gate layout along the 4H axis: input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmParams<T> {
    pub wx: Tensor<T>,
    pub wh: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    wx: Var,
    wh: Var,
    b: Var,
}

impl<T: Real> LstmParams<T> {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            wx: uniform_param(&[input, 4 * hidden], INIT_SCALE, rng),
            wh: uniform_param(&[hidden, 4 * hidden], INIT_SCALE, rng),
            b: zero_param(&[4 * hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.wx.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.shape()[0]
    }

    pub fn check(&self) -> Result<(), AdError> {
        let h = self.hidden_size();
        let ok = self.wx.shape()[1] == 4 * h && self.wh.shape() == [h, 4 * h] && self.b.len() == 4 * h;
        if ok {
            Ok(())
        } else {
            Err(AdError::ShapeMismatch {
                op: "lstm params",
                left: self.wx.shape().to_vec(),
                right: self.wh.shape().to_vec(),
            })
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LstmVars {
        LstmVars {
            wx: tape.param(&self.wx),
            wh: tape.param(&self.wh),
            b: tape.param(&self.b),
        }
    }
}

impl<T: Real> Parameters<T> for LstmParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}wx"), &self.wx);
        f(format!("{prefix}wh"), &self.wh);
        f(format!("{prefix}b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}wx"), &mut self.wx);
        f(format!("{prefix}wh"), &mut self.wh);
        f(format!("{prefix}b"), &mut self.b);
    }
}

/// One LSTM step for a batch: `x: [B, in]`, `h, c: [B, H]`.
pub fn lstm_step<T: Real>(
    tape: &mut Tape<T>,
    p: LstmVars,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), AdError> {
    let hidden = tape.shape(p.wh)[0];
    let zx = tape.matmul(x, p.wx)?;
    let zh = tape.matmul(h, p.wh)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_row(z, p.b)?;
    let i = tape.slice_cols(z, 0, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(z, hidden, hidden)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(z, 2 * hidden, hidden)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(z, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Gate layout along the 3H axis: reset, update, candidate.
#[derive(Clone, Debug)]
pub struct GruParams<T> {
    pub wx: Tensor<T>,
    pub wh: Tensor<T>,
    pub bx: Tensor<T>,
    pub bh: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    wx: Var,
    wh: Var,
    bx: Var,
    bh: Var,
}

impl<T: Real> GruParams<T> {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            wx: uniform_param(&[input, 3 * hidden], INIT_SCALE, rng),
            wh: uniform_param(&[hidden, 3 * hidden], INIT_SCALE, rng),
            bx: zero_param(&[3 * hidden]),
            bh: zero_param(&[3 * hidden]),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> GruVars {
        GruVars {
            wx: tape.param(&self.wx),
            wh: tape.param(&self.wh),
            bx: tape.param(&self.bx),
            bh: tape.param(&self.bh),
        }
    }
}

impl<T: Real> Parameters<T> for GruParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}wx"), &self.wx);
        f(format!("{prefix}wh"), &self.wh);
        f(format!("{prefix}bx"), &self.bx);
        f(format!("{prefix}bh"), &self.bh);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}wx"), &mut self.wx);
        f(format!("{prefix}wh"), &mut self.wh);
        f(format!("{prefix}bx"), &mut self.bx);
        f(format!("{prefix}bh"), &mut self.bh);
    }
}

/// One GRU step: `h' = (1 - z)·n + z·h`.
pub fn gru_step<T: Real>(tape: &mut Tape<T>, p: GruVars, x: Var, h: Var) -> Result<Var, AdError> {
    let hidden = tape.shape(p.wh)[0];
    let ax = tape.matmul(x, p.wx)?;
    let ax = tape.add_row(ax, p.bx)?;
    let ah = tape.matmul(h, p.wh)?;
    let ah = tape.add_row(ah, p.bh)?;
    let rz_x = tape.slice_cols(ax, 0, 2 * hidden)?;
    let rz_h = tape.slice_cols(ah, 0, 2 * hidden)?;
    let rz = tape.add(rz_x, rz_h)?;
    let rz = tape.sigmoid(rz)?;
    let r = tape.slice_cols(rz, 0, hidden)?;
    let z = tape.slice_cols(rz, hidden, hidden)?;
    let nx = tape.slice_cols(ax, 2 * hidden, hidden)?;
    let nh = tape.slice_cols(ah, 2 * hidden, hidden)?;
    let rn = tape.mul(r, nh)?;
    let n = tape.add(nx, rn)?;
    let n = tape.tanh(n)?;
    let d = tape.sub(h, n)?;
    let zd = tape.mul(z, d)?;
    tape.add(n, zd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_lstm(input: usize, hidden: usize) -> LstmParams<f64> {
        LstmParams {
            wx: zero_param(&[input, 4 * hidden]),
            wh: zero_param(&[hidden, 4 * hidden]),
            b: zero_param(&[4 * hidden]),
        }
    }

    fn run(p: &LstmParams<f64>, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec()).unwrap());
        let hv = tape.constant(Tensor::matrix(1, h.len(), h.to_vec()).unwrap());
        let cv = tape.constant(Tensor::matrix(1, c.len(), c.to_vec()).unwrap());
        let (h2, c2) = lstm_step(&mut tape, vars, xv, hv, cv).unwrap();
        (tape.value(h2).data().to_vec(), tape.value(c2).data().to_vec())
    }

    #[test]
    fn zero_weights_zero_state() {
        let (h, c) = run(&zero_lstm(2, 3), &[0.4, -1.0], &[0.0; 3], &[0.0; 3]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn zero_weights_halve_cell() {
        let c0 = [0.8, -2.0];
        let (h, c) = run(&zero_lstm(1, 2), &[1.0], &[0.3, 0.1], &c0);
        for k in 0..2 {
            assert!((c[k] - 0.5 * c0[k]).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * c0[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_cell_hand_oracle() {
        // 1-dim cell, gates [i, f, g, o]
        let p = LstmParams {
            wx: Tensor::matrix(1, 4, vec![0.5, -0.3, 0.8, 0.2]).unwrap(),
            wh: Tensor::matrix(1, 4, vec![0.1, 0.4, -0.6, 0.7]).unwrap(),
            b: Tensor::vector(vec![0.05, 0.1, -0.1, 0.0]),
        };
        let (x, h0, c0) = (1.5f64, -0.4f64, 0.6f64);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = sig(0.5 * x + 0.1 * h0 + 0.05);
        let f = sig(-0.3 * x + 0.4 * h0 + 0.1);
        let g = (0.8 * x - 0.6 * h0 - 0.1).tanh();
        let o = sig(0.2 * x + 0.7 * h0);
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        let (h, c) = run(&p, &[x], &[h0], &[c0]);
        assert!((h[0] - h1).abs() < 1e-14 && (c[0] - c1).abs() < 1e-14);
    }

    struct Cell {
        lstm: LstmParams<f64>,
        x: Tensor<f64>,
        h: Tensor<f64>,
        c: Tensor<f64>,
    }

    impl Parameters<f64> for Cell {
        fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor<f64>)) {
            self.lstm.visit(p, f);
            f("x".into(), &self.x);
            f("h".into(), &self.h);
            f("c".into(), &self.c);
        }
        fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor<f64>)) {
            self.lstm.visit_mut(p, f);
            f("x".into(), &mut self.x);
            f("h".into(), &mut self.h);
            f("c".into(), &mut self.c);
        }
    }

    #[test]
    fn lstm_step_norm_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lstm = LstmParams::init(4, 4, &mut rng);
        lstm.wx = uniform_param(&[4, 16], 0.8, &mut rng);
        lstm.wh = uniform_param(&[4, 16], 0.8, &mut rng);
        lstm.b = uniform_param(&[16], 0.5, &mut rng);
        let mut cell = Cell {
            lstm,
            x: uniform_param(&[1, 4], 1.0, &mut rng),
            h: uniform_param(&[1, 4], 1.0, &mut rng),
            c: uniform_param(&[1, 4], 1.0, &mut rng),
        };
        let err = finite_diff_check_params(
            &mut cell,
            |tape, m| {
                let v = m.lstm.bind(tape);
                let (x, h, c) = (tape.param(&m.x), tape.param(&m.h), tape.param(&m.c));
                let (h2, c2) = lstm_step(tape, v, x, h, c)?;
                let hh = tape.mul(h2, h2)?;
                let cc = tape.mul(c2, c2)?;
                let s = tape.add(hh, cc)?;
                tape.sum(s)
            },
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gru_matches_scalar_formula() {
        let p = GruParams {
            wx: Tensor::matrix(1, 3, vec![0.3, -0.2, 0.9]).unwrap(),
            wh: Tensor::matrix(1, 3, vec![0.5, 0.1, -0.7]).unwrap(),
            bx: Tensor::vector(vec![0.0, 0.1, 0.2]),
            bh: Tensor::vector(vec![0.05, 0.0, -0.1]),
        };
        let (x, h0) = (0.7f64, -0.5f64);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let r = sig(0.3 * x + 0.5 * h0 + 0.05);
        let z = sig(-0.2 * x + 0.1 + 0.1 * h0);
        let n = (0.9 * x + 0.2 + r * (-0.7 * h0 - 0.1)).tanh();
        let expect = (1.0 - z) * n + z * h0;
        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        let xv = tape.constant(Tensor::matrix(1, 1, vec![x]).unwrap());
        let hv = tape.constant(Tensor::matrix(1, 1, vec![h0]).unwrap());
        let out = gru_step(&mut tape, v, xv, hv).unwrap();
        assert!((tape.value(out).item() - expect).abs() < 1e-14);
    }
}
