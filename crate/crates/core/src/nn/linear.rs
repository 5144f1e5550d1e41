use serde::{Deserialize, Serialize};

use super::gemm::matmul;
use super::{Array4, NnError};

/// Affine map `y = W x + b` on rows of an `(n, in, 1, 1)` batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out, in)` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            l.weight[i * n + i] = 1.0;
        }
        l
    }

    fn check_input(&self, x: &Array4) -> Result<(), NnError> {
        if x.item_len() != self.in_features {
            return Err(NnError::Shape(format!(
                "linear expects {} inputs per row, got {}",
                self.in_features,
                x.item_len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array4) -> Result<Array4, NnError> {
        self.check_input(x)?;
        let n = x.batch();
        let mut y: Vec<f64> = (0..n).flat_map(|_| self.bias.iter().copied()).collect();
        matmul(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            false,
            &self.weight,
            true,
            1.0,
            &mut y,
        );
        Array4::from_rows(n, self.out_features, y)
    }

    pub fn backward_with(
        &self,
        x: &Array4,
        grad_out: &Array4,
        want_input: bool,
    ) -> Result<(Option<Array4>, LinearGrads), NnError> {
        self.check_input(x)?;
        let n = x.batch();
        if grad_out.shape() != [n, self.out_features, 1, 1] {
            return Err(NnError::Shape(format!(
                "linear upstream gradient {:?} does not match output [{n}, {}, 1, 1]",
                grad_out.shape(),
                self.out_features
            )));
        }
        let (i, o) = (self.in_features, self.out_features);
        let mut gw = vec![0.0; self.weight.len()];
        matmul(o, n, i, grad_out.data(), true, x.data(), false, 0.0, &mut gw);
        let mut gb = vec![0.0; o];
        for b in 0..n {
            gb.iter_mut().zip(grad_out.item(b)).for_each(|(s, g)| *s += g);
        }
        let gx = if want_input {
            let mut gx = vec![0.0; n * i];
            matmul(n, o, i, grad_out.data(), false, &self.weight, false, 0.0, &mut gx);
            Some(Array4::from_rows(n, i, gx)?)
        } else {
            None
        };
        Ok((gx, LinearGrads { weight: gw, bias: gb }))
    }

    pub fn backward(&self, x: &Array4, grad_out: &Array4) -> Result<(Array4, LinearGrads), NnError> {
        let (gx, g) = self.backward_with(x, grad_out, true)?;
        Ok((gx.expect("input gradient requested"), g))
    }
}

pub fn relu(x: &Array4) -> Array4 {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub fn relu_in_place(x: &mut Array4) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through a ReLU given its output (or input); zero where `y <= 0`.
pub fn relu_backward(y: &Array4, grad_out: &Array4) -> Result<Array4, NnError> {
    if y.shape() != grad_out.shape() {
        return Err(NnError::Shape(format!(
            "relu gradient {:?} does not match activation {:?}",
            grad_out.shape(),
            y.shape()
        )));
    }
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Array4::from_vec(y.shape(), data)
}
