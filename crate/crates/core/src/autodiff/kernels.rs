//! Slice-level numeric kernels shared by the tape and the inference paths.

use super::tensor::Real;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// `out[n, m] += a[n, k] · b[k, m]`
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(orow, av, &b[p * m..(p + 1) * m]);
            }
        }
    }
}

/// `out[n, m] += a[n, k] · b[m, k]ᵀ`
pub fn matmul_bt_acc<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k, m] += a[n, k]ᵀ · d[n, m]`
pub fn matmul_at_acc<T: Real>(a: &[T], d: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    for i in 0..n {
        let drow = &d[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(&mut out[p * m..(p + 1) * m], av, drow);
            }
        }
    }
}

pub fn log_softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    row.iter_mut().for_each(|x| *x -= lse);
}
