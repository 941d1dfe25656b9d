//! Network layers: thin, name-carrying wrappers that register parameters in a
//! [`ParamStore`] and build tape ops for the forward pass.

use ndarray::{ArrayD, IxDyn};
use rand::RngCore;

use crate::init;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Per-forward context: the tape being built plus mode flags.
pub struct FwdCtx<'a> {
    pub tape: &'a mut Tape,
    /// Batch statistics + dropout when true; frozen statistics otherwise.
    pub train: bool,
    /// Update batch-norm running statistics (online branch only).
    pub update_stats: bool,
    pub rng: Option<&'a mut dyn RngCore>,
}

impl<'a> FwdCtx<'a> {
    pub fn inference(tape: &'a mut Tape) -> Self {
        FwdCtx { tape, train: false, update_stats: false, rng: None }
    }
}

fn param_from(tape: &mut Tape, store: &ParamStore, name: &str) -> Var {
    tape.param(name, || store.get(name).clone())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { name: name.into(), in_dim, out_dim }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        store.insert_param(
            &format!("{}.weight", self.name),
            init::uniform_symmetric(rng, &[self.in_dim, self.out_dim], bound),
        );
        store.insert_param(
            &format!("{}.bias", self.name),
            init::uniform_symmetric(rng, &[self.out_dim], bound),
        );
    }

    /// Applies to the last axis; leading axes are flattened and restored.
    pub fn forward(&self, ctx: &mut FwdCtx, store: &ParamStore, x: Var) -> Var {
        let w = param_from(ctx.tape, store, &format!("{}.weight", self.name));
        let b = param_from(ctx.tape, store, &format!("{}.bias", self.name));
        let xsh = ctx.tape.shape(x).to_vec();
        assert_eq!(*xsh.last().unwrap(), self.in_dim, "linear {}: bad input dim", self.name);
        let rows: usize = xsh[..xsh.len() - 1].iter().product();
        let flat = ctx.tape.reshape(x, &[rows, self.in_dim]);
        let y = ctx.tape.matmul(flat, w);
        let y = ctx.tape.add(y, b);
        let mut out_shape = xsh;
        *out_shape.last_mut().unwrap() = self.out_dim;
        ctx.tape.reshape(y, &out_shape)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub bias: bool,
    /// Depthwise grouping is only used with groups == in_ch == out_ch.
    pub groups: usize,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        Conv2d { name: name.into(), in_ch, out_ch, kernel, stride, pad, bias: true, groups: 1 }
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn depthwise(name: impl Into<String>, ch: usize, kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Self {
        Conv2d { name: name.into(), in_ch: ch, out_ch: ch, kernel, stride, pad, bias: false, groups: ch }
    }

    fn weight_shape(&self) -> Vec<usize> {
        if self.groups == 1 {
            vec![self.out_ch, self.in_ch, self.kernel.0, self.kernel.1]
        } else {
            assert_eq!(self.groups, self.in_ch);
            assert_eq!(self.in_ch, self.out_ch);
            vec![self.out_ch, 1, self.kernel.0, self.kernel.1]
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        let fan_in = (self.in_ch / self.groups) * self.kernel.0 * self.kernel.1;
        store.insert_param(
            &format!("{}.weight", self.name),
            init::kaiming_normal(rng, &self.weight_shape(), fan_in),
        );
        if self.bias {
            let bound = 1.0 / (fan_in as f64).sqrt();
            store.insert_param(
                &format!("{}.bias", self.name),
                init::uniform_symmetric(rng, &[self.out_ch], bound),
            );
        }
    }

    pub fn forward(&self, ctx: &mut FwdCtx, store: &ParamStore, x: Var) -> Var {
        let w = param_from(ctx.tape, store, &format!("{}.weight", self.name));
        let b = if self.bias {
            Some(param_from(ctx.tape, store, &format!("{}.bias", self.name)))
        } else {
            None
        };
        if self.groups == 1 {
            ctx.tape.conv2d(x, w, b, self.stride, self.pad)
        } else {
            // Depthwise: one single-channel conv per channel, concatenated.
            let mut parts = Vec::with_capacity(self.groups);
            for g in 0..self.groups {
                let xg = ctx.tape.narrow(x, 1, g, 1);
                let wg = ctx.tape.narrow(w, 0, g, 1);
                let bg = b.map(|bv| ctx.tape.narrow(bv, 0, g, 1));
                parts.push(ctx.tape.conv2d(xg, wg, bg, self.stride, self.pad));
            }
            ctx.tape.concat(1, &parts)
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub ch: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, ch: usize) -> Self {
        BatchNorm2d { name: name.into(), ch, eps: 1e-5, momentum: 0.1 }
    }

    pub fn init(&self, store: &mut ParamStore, _rng: &mut impl rand::Rng) {
        store.insert_param(&format!("{}.gamma", self.name), init::ones(&[self.ch]));
        store.insert_param(&format!("{}.beta", self.name), init::zeros(&[self.ch]));
        store.insert_buffer(&format!("{}.running_mean", self.name), init::zeros(&[self.ch]));
        store.insert_buffer(&format!("{}.running_var", self.name), init::ones(&[self.ch]));
    }

    pub fn forward(&self, ctx: &mut FwdCtx, store: &mut ParamStore, x: Var) -> Var {
        let gamma = param_from(ctx.tape, store, &format!("{}.gamma", self.name));
        let beta = param_from(ctx.tape, store, &format!("{}.beta", self.name));
        if ctx.train {
            let nhw: usize = {
                let s = ctx.tape.shape(x);
                s[0] * s[2] * s[3]
            };
            let (y, mean, var) = ctx.tape.batchnorm2d_train(x, gamma, beta, self.eps);
            if ctx.update_stats {
                // PyTorch convention: running variance tracks the unbiased
                // estimate while normalization uses the biased one.
                let unbias = if nhw > 1 { nhw as f64 / (nhw as f64 - 1.0) } else { 1.0 };
                let mom = self.momentum;
                let rm = store.get_mut(&format!("{}.running_mean", self.name));
                rm.zip_mut_with(&mean.clone().into_dyn(), |r, &b| *r = (1.0 - mom) * *r + mom * b);
                let rv = store.get_mut(&format!("{}.running_var", self.name));
                rv.zip_mut_with(&var.mapv(|v| v * unbias).into_dyn(), |r, &b| {
                    *r = (1.0 - mom) * *r + mom * b
                });
            }
            y
        } else {
            let rm = store
                .get(&format!("{}.running_mean", self.name))
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            let rv = store
                .get(&format!("{}.running_var", self.name))
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            ctx.tape.batchnorm2d_eval(x, gamma, beta, &rm, &rv, self.eps)
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm { name: name.into(), dim, eps: 1e-5 }
    }

    pub fn init(&self, store: &mut ParamStore, _rng: &mut impl rand::Rng) {
        store.insert_param(&format!("{}.gamma", self.name), init::ones(&[self.dim]));
        store.insert_param(&format!("{}.beta", self.name), init::zeros(&[self.dim]));
    }

    pub fn forward(&self, ctx: &mut FwdCtx, store: &ParamStore, x: Var) -> Var {
        let gamma = param_from(ctx.tape, store, &format!("{}.gamma", self.name));
        let beta = param_from(ctx.tape, store, &format!("{}.beta", self.name));
        ctx.tape.layernorm_last(x, gamma, beta, self.eps)
    }
}

// ---------------------------------------------------------------------------

/// Single-direction LSTM with gate order (input, forget, cell, output) and a
/// single bias vector.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(name: impl Into<String>, in_dim: usize, hidden: usize) -> Self {
        Lstm { name: name.into(), in_dim, hidden }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        store.insert_param(
            &format!("{}.w_input", self.name),
            init::uniform_symmetric(rng, &[self.in_dim, 4 * self.hidden], bound),
        );
        store.insert_param(
            &format!("{}.w_hidden", self.name),
            init::uniform_symmetric(rng, &[self.hidden, 4 * self.hidden], bound),
        );
        store.insert_param(
            &format!("{}.bias", self.name),
            init::uniform_symmetric(rng, &[4 * self.hidden], bound),
        );
    }

    /// `x (N,T,in) -> (N,T,H)`.
    pub fn forward(&self, ctx: &mut FwdCtx, store: &ParamStore, x: Var) -> Var {
        let w = param_from(ctx.tape, store, &format!("{}.w_input", self.name));
        let u = param_from(ctx.tape, store, &format!("{}.w_hidden", self.name));
        let b = param_from(ctx.tape, store, &format!("{}.bias", self.name));
        let xsh = ctx.tape.shape(x).to_vec();
        let (n, t_len) = (xsh[0], xsh[1]);
        assert_eq!(xsh[2], self.in_dim, "lstm {}: bad input dim", self.name);
        let hdim = self.hidden;

        let mut h = ctx.tape.input(ArrayD::zeros(IxDyn(&[n, hdim])));
        let mut c = ctx.tape.input(ArrayD::zeros(IxDyn(&[n, hdim])));
        let mut outputs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = ctx.tape.narrow(x, 1, t, 1);
            let xt = ctx.tape.reshape(xt, &[n, self.in_dim]);
            let zx = ctx.tape.matmul(xt, w);
            let zh = ctx.tape.matmul(h, u);
            let z = ctx.tape.add(zx, zh);
            let z = ctx.tape.add(z, b);
            let gi = ctx.tape.narrow(z, 1, 0, hdim);
            let gf = ctx.tape.narrow(z, 1, hdim, hdim);
            let gg = ctx.tape.narrow(z, 1, 2 * hdim, hdim);
            let go = ctx.tape.narrow(z, 1, 3 * hdim, hdim);
            let i_gate = ctx.tape.sigmoid(gi);
            let f_gate = ctx.tape.sigmoid(gf);
            let g_cell = ctx.tape.tanh(gg);
            let o_gate = ctx.tape.sigmoid(go);
            let fc = ctx.tape.mul_same(f_gate, c);
            let ig = ctx.tape.mul_same(i_gate, g_cell);
            c = ctx.tape.add(fc, ig);
            let ct = ctx.tape.tanh(c);
            h = ctx.tape.mul_same(o_gate, ct);
            outputs.push(ctx.tape.reshape(h, &[n, 1, hdim]));
        }
        ctx.tape.concat(1, &outputs)
    }
}

/// Bidirectional LSTM: forward and time-reversed passes concatenated on the
/// feature axis, `x (N,T,in) -> (N,T,2H)`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(name: &str, in_dim: usize, hidden: usize) -> Self {
        BiLstm {
            fwd: Lstm::new(format!("{name}.fwd"), in_dim, hidden),
            bwd: Lstm::new(format!("{name}.bwd"), in_dim, hidden),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        self.fwd.init(store, rng);
        self.bwd.init(store, rng);
    }

    pub fn forward(&self, ctx: &mut FwdCtx, store: &ParamStore, x: Var) -> Var {
        let yf = self.fwd.forward(ctx, store, x);
        let xr = ctx.tape.flip(x, 1);
        let yb = self.bwd.forward(ctx, store, xr);
        let yb = ctx.tape.flip(yb, 1);
        ctx.tape.concat(2, &[yf, yb])
    }
}
