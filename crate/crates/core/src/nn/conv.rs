use serde::{Deserialize, Serialize};

use super::gemm::matmul;
use super::{Array4, NnError};

/// Output length of a valid (unpadded) convolution along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// Valid cross-correlation with stride, no padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    /// `(out_channels, in_channels, kh, kw)` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: [usize; 2], stride: [usize; 2]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![0.0; out_channels * in_channels * kernel[0] * kernel[1]],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel[0] * self.kernel[1]
    }

    /// `(out_h, out_w)` for an `(in_h, in_w)` input.
    pub fn output_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize), NnError> {
        let oh = conv_output_len(in_h, self.kernel[0], self.stride[0]);
        let ow = conv_output_len(in_w, self.kernel[1], self.stride[1]);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(NnError::Shape(format!(
                "kernel {:?} with stride {:?} does not fit a {in_h}x{in_w} input",
                self.kernel, self.stride
            ))),
        }
    }

    fn check_input(&self, x: &Array4) -> Result<(usize, usize), NnError> {
        let [_, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(NnError::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        self.output_dims(h, w)
    }

    /// Patch matrix of one sample: column `p` holds the receptive field of
    /// output position `p`, ordered like a weight row.
    fn im2col(&self, xin: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let k = self.fan_in();
        for oy in 0..oh {
            for ox in 0..ow {
                let col = &mut cols[(oy * ow + ox) * k..][..k];
                let mut i = 0;
                for ic in 0..self.in_channels {
                    for ky in 0..kh {
                        let row = &xin[ic * h * w + (oy * sh + ky) * w + ox * sw..][..kw];
                        col[i..i + kw].copy_from_slice(row);
                        i += kw;
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-matrix gradient back onto one input sample.
    fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize, gxin: &mut [f64]) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let k = self.fan_in();
        for oy in 0..oh {
            for ox in 0..ow {
                let col = &cols[(oy * ow + ox) * k..][..k];
                let mut i = 0;
                for ic in 0..self.in_channels {
                    for ky in 0..kh {
                        let row = &mut gxin[ic * h * w + (oy * sh + ky) * w + ox * sw..][..kw];
                        row.iter_mut().zip(&col[i..i + kw]).for_each(|(g, c)| *g += c);
                        i += kw;
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Array4) -> Result<Array4, NnError> {
        let (oh, ow) = self.check_input(x)?;
        let [n, c, h, w] = x.shape();
        let (k, p, oc) = (self.fan_in(), oh * ow, self.out_channels);
        let mut out = Array4::zeros([n, oc, oh, ow]);
        let mut cols = vec![0.0; k * p];
        for b in 0..n {
            self.im2col(&x.data()[b * c * h * w..][..c * h * w], h, w, oh, ow, &mut cols);
            let y = &mut out.data_mut()[b * oc * p..][..oc * p];
            for (plane, bias) in y.chunks_mut(p).zip(&self.bias) {
                plane.fill(*bias);
            }
            matmul(oc, k, p, &self.weight, false, &cols, true, 1.0, y);
        }
        Ok(out)
    }

    /// Gradients of the forward map. The input gradient is skipped when
    /// `want_input` is false.
    pub fn backward_with(
        &self,
        x: &Array4,
        grad_out: &Array4,
        want_input: bool,
    ) -> Result<(Option<Array4>, ConvGrads), NnError> {
        let (oh, ow) = self.check_input(x)?;
        let [n, c, h, w] = x.shape();
        let (k, p, oc) = (self.fan_in(), oh * ow, self.out_channels);
        if grad_out.shape() != [n, oc, oh, ow] {
            return Err(NnError::Shape(format!(
                "conv upstream gradient {:?} does not match output {:?}",
                grad_out.shape(),
                [n, oc, oh, ow]
            )));
        }
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; oc];
        let mut gx = want_input.then(|| Array4::zeros(x.shape()));
        let mut cols = vec![0.0; k * p];
        let mut gcols = vec![0.0; k * p];
        for b in 0..n {
            let g = &grad_out.data()[b * oc * p..][..oc * p];
            for (s, plane) in gb.iter_mut().zip(g.chunks(p)) {
                *s += plane.iter().sum::<f64>();
            }
            let xin = &x.data()[b * c * h * w..][..c * h * w];
            self.im2col(xin, h, w, oh, ow, &mut cols);
            matmul(oc, p, k, g, false, &cols, false, 1.0, &mut gw);
            if let Some(gx) = gx.as_mut() {
                matmul(p, oc, k, g, true, &self.weight, false, 0.0, &mut gcols);
                self.col2im(&gcols, h, w, oh, ow, &mut gx.data_mut()[b * c * h * w..][..c * h * w]);
            }
        }
        Ok((gx, ConvGrads { weight: gw, bias: gb }))
    }

    pub fn backward(&self, x: &Array4, grad_out: &Array4) -> Result<(Array4, ConvGrads), NnError> {
        let (gx, grads) = self.backward_with(x, grad_out, true)?;
        Ok((gx.expect("input gradient requested"), grads))
    }
}
