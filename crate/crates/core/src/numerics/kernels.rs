use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Guard added under the square root of the layer-norm denominator.
pub const LAYER_NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Gelu,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

impl Activation {
    /// GELU uses the tanh approximation.
    pub fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::Relu => x.max(R::zero()),
            Activation::Gelu => {
                let half = R::c(0.5);
                let inner = R::c(GELU_K) * (x + R::c(GELU_C) * x * x * x);
                half * x * (R::one() + inner.tanh())
            }
        }
    }

    pub fn derivative<R: Real>(self, x: R) -> R {
        match self {
            Activation::Relu => {
                if x > R::zero() {
                    R::one()
                } else {
                    R::zero()
                }
            }
            Activation::Gelu => {
                let half = R::c(0.5);
                let x2 = x * x;
                let inner = R::c(GELU_K) * (x + R::c(GELU_C) * x2 * x);
                let t = inner.tanh();
                let dinner = R::c(GELU_K) * (R::one() + R::c(3.0 * GELU_C) * x2);
                half * (R::one() + t) + half * x * (R::one() - t * t) * dinner
            }
        }
    }
}

/// Tempered softmax of `row` in place: `exp(tau * s_j) / Σ exp(tau * s_j')`.
/// Max-subtraction keeps it finite for arbitrary finite scores.
pub fn softmax_in_place<R: Real>(row: &mut [R], tau: R) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().fold(R::neg_infinity(), |m, &x| m.max(x));
    let mut total = R::zero();
    for x in row.iter_mut() {
        *x = (tau * (*x - max)).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

/// Causal tempered softmax of a square score matrix. Row `i` is normalized
/// over keys `j ≤ i`; entries above the diagonal are exactly zero.
pub fn causal_tempered_softmax<R: Real>(scores: &Tensor<R>, tau: R) -> Result<Tensor<R>> {
    if scores.shape().len() != 2 || scores.rows() != scores.cols() {
        return Err(Error::Dimension(format!("expected a square matrix, got {:?}", scores.shape())));
    }
    if !(tau > R::zero()) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    let t = scores.rows();
    let mut out = Tensor::zeros(&[t, t]);
    for i in 0..t {
        let row = &mut out.row_mut(i)[..=i];
        row.copy_from_slice(&scores.row(i)[..=i]);
        softmax_in_place(row, tau);
    }
    Ok(out)
}

/// Zero-mean, root-mean-square normalization: the output has Euclidean
/// length √d unless the input is constant, in which case it is all zeros.
pub fn layer_norm<R: Real>(x: &[R]) -> Vec<R> {
    let (normed, _) = layer_norm_with_scale(x);
    normed
}

/// Layer norm that also returns the inverse RMS used, for backward passes.
pub(crate) fn layer_norm_with_scale<R: Real>(x: &[R]) -> (Vec<R>, R) {
    let d = R::c(x.len() as f64);
    let mean = x.iter().copied().sum::<R>() / d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / d;
    let inv = R::one() / (var + R::c(LAYER_NORM_GUARD)).sqrt();
    (x.iter().map(|&v| (v - mean) * inv).collect(), inv)
}

/// Two-layer perceptron in row-vector form: `act(y·W1 + b1)·W2 + b2`, with
/// `W1: [in, hidden]` and `W2: [hidden, out]`.
pub fn mlp_apply<R: Real>(
    y: &[R],
    w1: &Tensor<R>,
    b1: &[R],
    w2: &Tensor<R>,
    b2: &[R],
    activation: Activation,
) -> Result<Vec<R>> {
    let (din, hidden) = (w1.rows(), w1.cols());
    let (hidden2, dout) = (w2.rows(), w2.cols());
    if y.len() != din || b1.len() != hidden || hidden2 != hidden || b2.len() != dout {
        return Err(Error::Dimension(format!(
            "mlp shapes do not chain: y[{}] W1{:?} b1[{}] W2{:?} b2[{}]",
            y.len(),
            w1.shape(),
            b1.len(),
            w2.shape(),
            b2.len()
        )));
    }
    let mut h = b1.to_vec();
    for (i, &yi) in y.iter().enumerate() {
        for (hj, &w) in h.iter_mut().zip(w1.row(i)) {
            *hj = *hj + yi * w;
        }
    }
    let mut out = b2.to_vec();
    for (j, hj) in h.into_iter().enumerate() {
        let a = activation.apply(hj);
        for (o, &w) in out.iter_mut().zip(w2.row(j)) {
            *o = *o + a * w;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_attends_only_to_itself() {
        let s = Tensor::<f64>::from_rows(&[vec![3.0, 9.0, -1.0], vec![0.5, 0.2, 7.0], vec![1.0, 1.0, 1.0]])
            .unwrap();
        let p = causal_tempered_softmax(&s, 1.7).unwrap();
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(p.at(1, 2), 0.0);
        for &w in p.row(2) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn direct_formula_case() {
        let s = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 2f64.ln()]]).unwrap();
        let p = causal_tempered_softmax(&s, 1.0).unwrap();
        assert!((p.at(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.at(1, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        assert!(matches!(
            causal_tempered_softmax(&Tensor::<f64>::zeros(&[2, 3]), 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            causal_tempered_softmax(&Tensor::<f64>::zeros(&[2, 2]), 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn layer_norm_cases() {
        let out = layer_norm(&[1.0f64, -1.0, 1.0, -1.0]);
        for (o, e) in out.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((o - e).abs() < 1e-9);
        }
        assert_eq!(layer_norm(&[2.5; 4]), vec![0.0; 4]);
        // (2,0,0,0): centered (1.5,-0.5,-0.5,-0.5), rms sqrt(0.75)
        let out = layer_norm(&[2.0, 0.0, 0.0, 0.0]);
        let s = 0.75f64.sqrt();
        for (o, e) in out.iter().zip([1.5 / s, -0.5 / s, -0.5 / s, -0.5 / s]) {
            assert!((o - e).abs() < 1e-9);
        }
        let len: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((len - 2.0).abs() < 1e-9);
    }

    #[test]
    fn mlp_trivial_cases() {
        let w1 = Tensor::zeros(&[2, 3]);
        let w2 = Tensor::zeros(&[3, 2]);
        let out = mlp_apply(&[1.0, 2.0], &w1, &[0.0; 3], &w2, &[0.25, -4.0], Activation::Relu)
            .unwrap();
        assert_eq!(out, vec![0.25, -4.0]);

        let eye = Tensor::identity(3);
        let y = [0.5, 0.0, 2.0];
        let out = mlp_apply(&y, &eye, &[0.0; 3], &eye, &[0.0; 3], Activation::Relu).unwrap();
        assert_eq!(out, y.to_vec());
    }

    #[test]
    fn mlp_two_three_two_by_hand() {
        // W1 rows are inputs, columns hidden units.
        let w1 = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.25, 1.0, -1.0]]).unwrap();
        let b1 = [0.1, 0.2, -0.3];
        let w2 = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 2.0], vec![0.5, 0.5]]).unwrap();
        let b2 = [0.0, 1.0];
        let y = [2.0, 4.0];
        // pre-activation: h0 = 2 + 1 + 0.1 = 3.1; h1 = -4 + 4 + 0.2 = 0.2; h2 = 1 - 4 - 0.3 = -3.3
        // relu -> (3.1, 0.2, 0); out0 = 3.1 - 0.2 = 2.9; out1 = 0.4 + 1 = 1.4
        let out: Vec<f64> = mlp_apply(&y, &w1, &b1, &w2, &b2, Activation::Relu).unwrap();
        assert!((out[0] - 2.9).abs() < 1e-12);
        assert!((out[1] - 1.4).abs() < 1e-12);
        assert!(mlp_apply(&[1.0], &w1, &b1, &w2, &b2, Activation::Relu).is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((num - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
    }
}
