//! Small numeric kernels shared by the models.

use std::cell::Cell;

use ndarray::{ArrayView1, ArrayViewMut1};

thread_local! {
    static SIGMOID_EVALS: Cell<u64> = const { Cell::new(0) };
    static COLUMN_ADDS: Cell<u64> = const { Cell::new(0) };
}

/// Logistic evaluations performed on this thread since the last reset.
pub fn sigmoid_evaluations() -> u64 {
    SIGMOID_EVALS.with(Cell::get)
}

pub fn reset_sigmoid_evaluations() {
    SIGMOID_EVALS.with(|c| c.set(0));
}

/// Hidden pre-activation column additions performed on this thread.
pub fn column_additions() -> u64 {
    COLUMN_ADDS.with(Cell::get)
}

pub fn reset_column_additions() {
    COLUMN_ADDS.with(|c| c.set(0));
}

pub(crate) fn count_column_add() {
    COLUMN_ADDS.with(|c| c.set(c.get() + 1));
}

#[inline]
pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    SIGMOID_EVALS.with(|c| c.set(c.get() + 1));
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow or cancellation.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    SIGMOID_EVALS.with(|c| c.set(c.get() + 1));
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu_in_place(mut a: ArrayViewMut1<f64>) {
    a.mapv_inplace(relu);
}

/// Overwrites `a` with `log softmax(a)` using max subtraction.
pub fn log_softmax_in_place(a: &mut [f64]) {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return;
    }
    let log_z = a.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    for x in a.iter_mut() {
        *x = (*x - m) - log_z;
    }
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let mut s = a.to_vec();
    log_softmax_in_place(&mut s);
    s.iter_mut().for_each(|x| *x = x.exp());
    s
}
