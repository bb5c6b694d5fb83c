use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient passes where the forward output was positive. The subgradient at
/// exactly zero is zero.
pub fn relu_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu grad {:?} vs activation {:?}",
            grad_out.shape(),
            y.shape()
        )));
    }
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(y.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Rng};

    #[test]
    fn definition() {
        let x = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::from_vec(&[2], vec![-3.0f32, -0.5]).unwrap();
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_uses_zero_subgradient() {
        let y = Tensor::from_vec(&[2], vec![0.0f64, 1.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&y, &g).unwrap().data(), &[0.0, 5.0]);
    }

    #[test]
    fn gradients_away_from_kink() {
        let mut rng = Rng::new(4);
        for _ in 0..5 {
            let data: Vec<f64> = (0..20)
                .map(|_| {
                    let v = rng.normal();
                    if v.abs() < 1e-3 { 0.5 } else { v }
                })
                .collect();
            let x = Tensor::from_vec(&[20], data).unwrap();
            let r = Tensor::from_vec(&[20], (0..20).map(|_| rng.normal()).collect()).unwrap();
            let g = relu_backward(&relu_forward(&x), &r).unwrap();
            let f = |x: &Tensor<f64>| -> f64 {
                relu_forward(x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            };
            assert!(grad_check(f, &x, 1e-5, &g).unwrap() < 1e-4);
        }
    }
}
