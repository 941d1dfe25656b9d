//! 2-D convolution and max-pooling tape ops (NCHW layout).

use ndarray::{Array2, Array3, ArrayD, Ix2, Ix4, IxDyn};

use crate::tape::{Tape, Var};

fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= k, "conv/pool input smaller than kernel");
    (input + 2 * pad - k) / stride + 1
}

/// Unfolds padded input patches into a `(C*kh*kw, OH*OW)` matrix per sample.
fn im2col(
    x: &ArrayD<f64>,
    k: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Array3<f64> {
    let (n, c, h, w) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let (kh, kw) = k;
    let oh = conv_out_len(h, kh, stride.0, pad.0);
    let ow = conv_out_len(w, kw, stride.1, pad.1);
    let mut cols = Array3::<f64>::zeros((n, c * kh * kw, oh * ow));
    let xs = x.as_slice().expect("im2col: standard layout");
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let hi = (oi * stride.0 + ki) as isize - pad.0 as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let wj = (oj * stride.1 + kj) as isize - pad.1 as isize;
                            if wj < 0 || wj >= w as isize {
                                continue;
                            }
                            cols[(ni, row, oi * ow + oj)] = xs[base + hi as usize * w + wj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds column gradients back to input positions.
fn col2im(
    dcols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<f64> {
    let (kh, kw) = k;
    let oh = conv_out_len(h, kh, stride.0, pad.0);
    let ow = conv_out_len(w, kw, stride.1, pad.1);
    let mut dx = vec![0.0f64; c * h * w];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oi in 0..oh {
                    let hi = (oi * stride.0 + ki) as isize - pad.0 as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let wj = (oj * stride.1 + kj) as isize - pad.1 as isize;
                        if wj < 0 || wj >= w as isize {
                            continue;
                        }
                        dx[(ci * h + hi as usize) * w + wj as usize] += dcols[(row, oi * ow + oj)];
                    }
                }
            }
        }
    }
    dx
}

impl Tape {
    /// `x (N,C,H,W) * w (O,C,kh,kw) [+ b (O)] -> (N,O,OH,OW)`, zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Var {
        let xsh = self.shape(x).to_vec();
        let wsh = self.shape(weight).to_vec();
        assert_eq!(xsh.len(), 4, "conv2d input must be NCHW");
        assert_eq!(wsh.len(), 4, "conv2d weight must be OCKK");
        assert_eq!(xsh[1], wsh[1], "conv2d channel mismatch");
        let (n, c, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
        let (o, kh, kw) = (wsh[0], wsh[2], wsh[3]);
        let oh = conv_out_len(h, kh, stride.0, pad.0);
        let ow = conv_out_len(w, kw, stride.1, pad.1);

        let cols = im2col(self.value(x), (kh, kw), stride, pad);
        let w2 = crate::tape::reshape_std(self.value(weight), &[o, c * kh * kw])
            .into_dimensionality::<Ix2>()
            .unwrap();
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, o, oh, ow]));
        {
            let os = out.as_slice_mut().unwrap();
            for ni in 0..n {
                let prod = w2.dot(&cols.index_axis(ndarray::Axis(0), ni));
                let ps = prod.as_slice().unwrap();
                os[ni * o * oh * ow..(ni + 1) * o * oh * ow].copy_from_slice(ps);
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b).clone();
            let bs = bv.as_slice().unwrap();
            let os = out.as_slice_mut().unwrap();
            for ni in 0..n {
                for (oi, &bval) in bs.iter().enumerate().take(o) {
                    let s = (ni * o + oi) * oh * ow;
                    for v in &mut os[s..s + oh * ow] {
                        *v += bval;
                    }
                }
            }
        }

        let mut parents = vec![x.0, weight.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        let has_bias = bias.is_some();
        self.push_op(out, parents, move || {
            Box::new(move |t: &Tape, g: &ArrayD<f64>| {
                let wval = crate::tape::reshape_std(t.value(weight), &[o, c * kh * kw])
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let mut dw = Array2::<f64>::zeros((o, c * kh * kw));
                let mut dx = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                for ni in 0..n {
                    let gn = gv
                        .index_axis(ndarray::Axis(0), ni)
                        .to_owned()
                        .into_shape_with_order((o, oh * ow))
                        .unwrap();
                    let cn = cols.index_axis(ndarray::Axis(0), ni);
                    dw = dw + gn.dot(&cn.t());
                    let dcols = wval.t().dot(&gn);
                    let dxi = col2im(&dcols, c, h, w, (kh, kw), stride, pad);
                    dx.as_slice_mut().unwrap()[ni * c * h * w..(ni + 1) * c * h * w]
                        .iter_mut()
                        .zip(dxi.iter())
                        .for_each(|(a, b)| *a += b);
                }
                let mut grads = vec![
                    dx,
                    crate::tape::reshape_std(&dw.into_dyn(), &[o, c, kh, kw]),
                ];
                if has_bias {
                    let mut db = vec![0.0f64; o];
                    let gs = g.as_slice().unwrap();
                    for ni in 0..n {
                        for (oi, dbo) in db.iter_mut().enumerate() {
                            let s = (ni * o + oi) * oh * ow;
                            *dbo += gs[s..s + oh * ow].iter().sum::<f64>();
                        }
                    }
                    grads.push(ArrayD::from_shape_vec(IxDyn(&[o]), db).unwrap());
                }
                grads
            })
        })
    }

    /// Max pooling over `(kh,kw)` windows; padded cells never win.
    pub fn maxpool2d(
        &mut self,
        x: Var,
        k: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Var {
        let xsh = self.shape(x).to_vec();
        assert_eq!(xsh.len(), 4, "maxpool2d input must be NCHW");
        let (n, c, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
        let oh = conv_out_len(h, k.0, stride.0, pad.0);
        let ow = conv_out_len(w, k.1, stride.1, pad.1);
        let xs = self.value(x).as_slice().unwrap();
        let mut out = vec![f64::NEG_INFINITY; n * c * oh * ow];
        let mut arg = vec![0usize; n * c * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for oi in 0..oh {
                    for oj in 0..ow {
                        let oidx = ((ni * c + ci) * oh + oi) * ow + oj;
                        let mut best = f64::NEG_INFINITY;
                        let mut besti = usize::MAX;
                        for ki in 0..k.0 {
                            let hi = (oi * stride.0 + ki) as isize - pad.0 as isize;
                            if hi < 0 || hi >= h as isize {
                                continue;
                            }
                            for kj in 0..k.1 {
                                let wj = (oj * stride.1 + kj) as isize - pad.1 as isize;
                                if wj < 0 || wj >= w as isize {
                                    continue;
                                }
                                let idx = base + hi as usize * w + wj as usize;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    besti = idx;
                                }
                            }
                        }
                        assert!(besti != usize::MAX, "maxpool window fully outside input");
                        out[oidx] = best;
                        arg[oidx] = besti;
                    }
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).unwrap();
        self.push_op(value, vec![x.0], move || {
            Box::new(move |_t, g: &ArrayD<f64>| {
                let mut dx = vec![0.0f64; n * c * h * w];
                for (gi, &ai) in g.as_slice().unwrap().iter().zip(arg.iter()) {
                    dx[ai] += gi;
                }
                vec![ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), dx).unwrap()]
            })
        })
    }
}
