//! Convolutional-recurrent encoder: a 9x9 then 4x3 (frequency x time)
//! 256-filter conv front end, one bidirectional LSTM with 512 units per
//! direction, and a 1024-dim linear head (reference widths at multiplier
//! 1.0). Kernel strides are 1 with 2x2 max pooling after each conv.

use resona_nn::{BatchNorm2d, BiLstm, Conv2d, FwdCtx, Linear, ParamStore, Var};

use super::{scaled, temporal_pool_tape, EncoderConfig};

#[derive(Debug, Clone)]
pub struct Clstm {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    lstm: BiLstm,
    fc: Linear,
    ch: usize,
    emb: usize,
}

impl Clstm {
    pub fn new(prefix: &str, cfg: &EncoderConfig) -> Self {
        let wm = cfg.width_multiplier;
        let ch = scaled(256, wm);
        let hidden = scaled(512, wm);
        let emb = scaled(1024, wm);
        let conv1 = Conv2d::new(format!("{prefix}.conv1"), 1, ch, (9, 9), (1, 1), (4, 4));
        let bn1 = BatchNorm2d::new(format!("{prefix}.bn1"), ch);
        // 64 -> pool 32 -> (k4,p2) 33 -> pool 16 frequency bins.
        let conv2 = Conv2d::new(format!("{prefix}.conv2"), ch, ch, (4, 3), (1, 1), (2, 1));
        let bn2 = BatchNorm2d::new(format!("{prefix}.bn2"), ch);
        let lstm = BiLstm::new(&format!("{prefix}.lstm"), 16 * ch, hidden);
        let fc = Linear::new(format!("{prefix}.fc"), 2 * hidden, emb);
        Clstm { conv1, bn1, conv2, bn2, lstm, fc, ch, emb }
    }

    pub fn embedding_dim(&self) -> usize {
        self.emb
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        self.conv1.init(store, rng);
        self.bn1.init(store, rng);
        self.conv2.init(store, rng);
        self.bn2.init(store, rng);
        self.lstm.init(store, rng);
        self.fc.init(store, rng);
    }

    pub fn forward(
        &self,
        ctx: &mut FwdCtx,
        store: &mut ParamStore,
        x: Var,
        taps: &mut Vec<(String, Var)>,
    ) -> Var {
        let mut h = self.conv1.forward(ctx, store, x);
        h = self.bn1.forward(ctx, store, h);
        h = ctx.tape.relu(h);
        h = ctx.tape.maxpool2d(h, (2, 2), (2, 2), (0, 0));
        taps.push(("conv1".into(), h));
        h = self.conv2.forward(ctx, store, h);
        h = self.bn2.forward(ctx, store, h);
        h = ctx.tape.relu(h);
        h = ctx.tape.maxpool2d(h, (2, 2), (2, 2), (0, 0));
        taps.push(("conv2".into(), h));

        let sh = ctx.tape.shape(h).to_vec();
        let (n, c, f, t) = (sh[0], sh[1], sh[2], sh[3]);
        debug_assert_eq!(c, self.ch);
        let h = ctx.tape.permute(h, &[0, 3, 2, 1]);
        let h = ctx.tape.reshape(h, &[n, t, f * c]);
        let h = self.lstm.forward(ctx, store, h);
        taps.push(("lstm".into(), h));
        let h = self.fc.forward(ctx, store, h);
        let pooled = temporal_pool_tape(ctx.tape, h);
        taps.push(("embedding".into(), pooled));
        pooled
    }
}
