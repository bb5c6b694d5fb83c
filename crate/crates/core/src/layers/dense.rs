use crate::error::{Error, Result};
use crate::numerics::gemm::{gemm, MatMut, MatRef};
use crate::numerics::{matmul, Real, Rng, Tensor};

use super::conv::he_normal;

/// Fully connected output layer: `logits = f . W + bias`, `W` is `(in, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            ([_, k], [kb]) if k == kb => Ok(Self { weight, bias }),
            (w, b) => Err(Error::Shape(format!(
                "dense weight {w:?} and bias {b:?} disagree"
            ))),
        }
    }

    pub fn he_init(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(he_normal(&[inputs, outputs], inputs, rng)?, Tensor::zeros(&[outputs])?)
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        if f.ndim() != 2 || f.dim(1) != self.inputs() {
            return Err(Error::Shape(format!(
                "dense layer expects (b, {}), got {:?}",
                self.inputs(),
                f.shape()
            )));
        }
        let mut out = matmul(f, &self.weight)?;
        let k = self.outputs();
        for row in out.data_mut().chunks_exact_mut(k) {
            for (o, &b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, f: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (b, k) = match *grad_out.shape() {
            [b, k] if k == self.outputs() && f.shape() == [b, self.inputs()] => (b, k),
            _ => {
                return Err(Error::Shape(format!(
                    "dense grad {:?} does not match input {:?}",
                    grad_out.shape(),
                    f.shape()
                )))
            }
        };
        let n = self.inputs();
        let mut gw = Tensor::zeros_like(&self.weight);
        gemm(
            T::one(),
            f.as_mat().t(),
            grad_out.as_mat(),
            T::zero(),
            MatMut::row_major(gw.data_mut(), 0, n, k),
        );
        let mut gf = Tensor::zeros_like(f);
        gemm(
            T::one(),
            grad_out.as_mat(),
            MatRef::row_major(self.weight.data(), 0, n, k).t(),
            T::zero(),
            MatMut::row_major(gf.data_mut(), 0, b, n),
        );
        let mut gb = Tensor::zeros_like(&self.bias);
        for row in grad_out.data().chunks_exact(k) {
            for (o, &g) in gb.data_mut().iter_mut().zip(row) {
                *o += g;
            }
        }
        Ok((gf, gw, gb))
    }
}
