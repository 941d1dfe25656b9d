//! Batch/layer normalization tape ops with fused backward passes.

use ndarray::{Array1, ArrayD, IxDyn};

use crate::tape::{Tape, Var};

impl Tape {
    /// Batch norm over `(N,H,W)` per channel using batch statistics.
    /// Returns the node plus the biased batch mean/variance so the caller can
    /// update running statistics.
    pub fn batchnorm2d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Array1<f64>, Array1<f64>) {
        let xsh = self.shape(x).to_vec();
        assert_eq!(xsh.len(), 4, "batchnorm2d input must be NCHW");
        let (n, c, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
        let m = (n * h * w) as f64;
        let xs = self.value(x).as_slice().unwrap();

        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * h * w;
                s += xs[base..base + h * w].iter().sum::<f64>();
            }
            mean[ci] = s / m;
            let mut sv = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * h * w;
                for &v in &xs[base..base + h * w] {
                    let d = v - mean[ci];
                    sv += d * d;
                }
            }
            var[ci] = sv / m;
        }
        let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

        let gs = self.value(gamma).as_slice().unwrap().to_vec();
        let bs = self.value(beta).as_slice().unwrap().to_vec();
        let mut xhat = vec![0.0f64; n * c * h * w];
        let mut out = vec![0.0f64; n * c * h * w];
        let xs = self.value(x).as_slice().unwrap();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for i in base..base + h * w {
                    let xh = (xs[i] - mean[ci]) * invstd[ci];
                    xhat[i] = xh;
                    out[i] = gs[ci] * xh + bs[ci];
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).unwrap();
        let mean_arr = Array1::from_vec(mean);
        let var_arr = Array1::from_vec(var);
        let node = self.push_op(value, vec![x.0, gamma.0, beta.0], move || {
            Box::new(move |_t, g: &ArrayD<f64>| {
                let gsl = g.as_slice().unwrap();
                let mut dbeta = vec![0.0f64; c];
                let mut dgamma = vec![0.0f64; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        for i in base..base + h * w {
                            dbeta[ci] += gsl[i];
                            dgamma[ci] += gsl[i] * xhat[i];
                        }
                    }
                }
                let mut dx = vec![0.0f64; n * c * h * w];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        let k = gs[ci] * invstd[ci];
                        for i in base..base + h * w {
                            dx[i] = k * (gsl[i] - dbeta[ci] / m - xhat[i] * dgamma[ci] / m);
                        }
                    }
                }
                vec![
                    ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), dx).unwrap(),
                    ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap(),
                    ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap(),
                ]
            })
        });
        (node, mean_arr, var_arr)
    }

    /// Batch norm in inference mode: per-channel affine with frozen stats.
    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
        eps: f64,
    ) -> Var {
        let xsh = self.shape(x).to_vec();
        assert_eq!(xsh.len(), 4, "batchnorm2d input must be NCHW");
        let (n, c, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
        let invstd: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let rmean = running_mean.to_vec();
        let gs = self.value(gamma).as_slice().unwrap().to_vec();
        let bs = self.value(beta).as_slice().unwrap().to_vec();
        let xs = self.value(x).as_slice().unwrap();
        let mut out = vec![0.0f64; n * c * h * w];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for i in base..base + h * w {
                    out[i] = gs[ci] * (xs[i] - rmean[ci]) * invstd[ci] + bs[ci];
                }
            }
        }
        let mut xhat = vec![0.0f64; n * c * h * w];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for i in base..base + h * w {
                    xhat[i] = (xs[i] - rmean[ci]) * invstd[ci];
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).unwrap();
        self.push_op(value, vec![x.0, gamma.0, beta.0], move || {
            Box::new(move |_t, g: &ArrayD<f64>| {
                let gsl = g.as_slice().unwrap();
                let mut dbeta = vec![0.0f64; c];
                let mut dgamma = vec![0.0f64; c];
                let mut dx = vec![0.0f64; n * c * h * w];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        let k = gs[ci] * invstd[ci];
                        for i in base..base + h * w {
                            dbeta[ci] += gsl[i];
                            dgamma[ci] += gsl[i] * xhat[i];
                            dx[i] = k * gsl[i];
                        }
                    }
                }
                vec![
                    ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), dx).unwrap(),
                    ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap(),
                    ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap(),
                ]
            })
        })
    }

    /// Layer norm over the last axis with learned per-feature scale/shift.
    pub fn layernorm_last(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xsh = self.shape(x).to_vec();
        let f = *xsh.last().unwrap();
        assert_eq!(self.shape(gamma), &[f], "layernorm gamma shape");
        assert_eq!(self.shape(beta), &[f], "layernorm beta shape");
        let rows = self.value(x).len() / f;
        let xs = self.value(x).as_slice().unwrap();
        let gs = self.value(gamma).as_slice().unwrap().to_vec();
        let bs = self.value(beta).as_slice().unwrap().to_vec();

        let mut xhat = vec![0.0f64; rows * f];
        let mut invstd = vec![0.0f64; rows];
        let mut out = vec![0.0f64; rows * f];
        for r in 0..rows {
            let row = &xs[r * f..(r + 1) * f];
            let mu = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / f as f64;
            let is = 1.0 / (var + eps).sqrt();
            invstd[r] = is;
            for j in 0..f {
                let xh = (row[j] - mu) * is;
                xhat[r * f + j] = xh;
                out[r * f + j] = gs[j] * xh + bs[j];
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&xsh), out).unwrap();
        let xsh_b = xsh.clone();
        self.push_op(value, vec![x.0, gamma.0, beta.0], move || {
            Box::new(move |_t, g: &ArrayD<f64>| {
                let gsl = g.as_slice().unwrap();
                let mut dgamma = vec![0.0f64; f];
                let mut dbeta = vec![0.0f64; f];
                let mut dx = vec![0.0f64; rows * f];
                for r in 0..rows {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..f {
                        let i = r * f + j;
                        dgamma[j] += gsl[i] * xhat[i];
                        dbeta[j] += gsl[i];
                        let dxh = gsl[i] * gs[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[i];
                    }
                    for j in 0..f {
                        let i = r * f + j;
                        let dxh = gsl[i] * gs[j];
                        dx[i] = invstd[r]
                            * (dxh - sum_dxhat / f as f64 - xhat[i] * sum_dxhat_xhat / f as f64);
                    }
                }
                vec![
                    ArrayD::from_shape_vec(IxDyn(&xsh_b), dx).unwrap(),
                    ArrayD::from_shape_vec(IxDyn(&[f]), dgamma).unwrap(),
                    ArrayD::from_shape_vec(IxDyn(&[f]), dbeta).unwrap(),
                ]
            })
        })
    }
}
