//! Default CNN encoder: three Conv-BN-ReLU-MaxPool blocks with 64 3x3
//! filters, then two linear layers onto the 2048-dim embedding (reference
//! widths at multiplier 1.0).

use resona_nn::{BatchNorm2d, Conv2d, FwdCtx, Linear, ParamStore, Var};

use super::{scaled, temporal_pool_tape, EncoderConfig};

#[derive(Debug, Clone)]
pub struct DefaultCnn {
    blocks: Vec<(Conv2d, BatchNorm2d)>,
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
    ch: usize,
    emb: usize,
}

impl DefaultCnn {
    pub fn new(prefix: &str, cfg: &EncoderConfig) -> Self {
        let ch = scaled(64, cfg.width_multiplier);
        let emb = scaled(2048, cfg.width_multiplier);
        let mut blocks = Vec::new();
        for b in 1..=3 {
            let in_ch = if b == 1 { 1 } else { ch };
            blocks.push((
                Conv2d::new(format!("{prefix}.block{b}.conv"), in_ch, ch, (3, 3), (1, 1), (1, 1)),
                BatchNorm2d::new(format!("{prefix}.block{b}.bn"), ch),
            ));
        }
        // Three 2x2 pools: 64 mel bins -> 8, so the flattened width is 8*ch.
        let fc1 = Linear::new(format!("{prefix}.fc1"), 8 * ch, emb);
        let fc2 = Linear::new(format!("{prefix}.fc2"), emb, emb);
        DefaultCnn { blocks, fc1, fc2, dropout: cfg.dropout, ch, emb }
    }

    pub fn embedding_dim(&self) -> usize {
        self.emb
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        for (conv, bn) in &self.blocks {
            conv.init(store, rng);
            bn.init(store, rng);
        }
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
    }

    pub fn forward(
        &self,
        ctx: &mut FwdCtx,
        store: &mut ParamStore,
        x: Var,
        taps: &mut Vec<(String, Var)>,
    ) -> Var {
        let mut h = x;
        for (i, (conv, bn)) in self.blocks.iter().enumerate() {
            h = conv.forward(ctx, store, h);
            h = bn.forward(ctx, store, h);
            h = ctx.tape.relu(h);
            h = ctx.tape.maxpool2d(h, (2, 2), (2, 2), (0, 0));
            taps.push((format!("block{}", i + 1), h));
        }
        // (N, C, F, T') -> (N, T', F*C); frequency-major feature order.
        let sh = ctx.tape.shape(h).to_vec();
        let (n, c, f, t) = (sh[0], sh[1], sh[2], sh[3]);
        debug_assert_eq!(c, self.ch);
        let h = ctx.tape.permute(h, &[0, 3, 2, 1]);
        let mut h = ctx.tape.reshape(h, &[n, t, f * c]);
        h = self.fc1.forward(ctx, store, h);
        h = ctx.tape.relu(h);
        if ctx.train && self.dropout > 0.0 {
            if let Some(rng) = ctx.rng.as_deref_mut() {
                h = ctx.tape.dropout(h, self.dropout, rng);
            }
        }
        taps.push(("fc1".into(), h));
        h = self.fc2.forward(ctx, store, h);
        let pooled = temporal_pool_tape(ctx.tape, h);
        taps.push(("embedding".into(), pooled));
        pooled
    }
}
