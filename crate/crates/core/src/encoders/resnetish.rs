//! 34-layer residual encoder adapted for single-channel spectrograms.
//!
//! Stage layout follows the 34-layer reference: 7x7/2 stem, 3x3/2 max pool,
//! basic blocks [3,4,6,3] at widths 64/128/256/512. Stage strides are pinned
//! to (1,1), (2,2), (2,2), (1,2) so 64 mel bins end at 4 frequency bins and
//! the flattened feature width is 4*512 = 2048 at multiplier 1.0.

use resona_nn::{BatchNorm2d, Conv2d, FwdCtx, ParamStore, Var};

use super::{scaled, temporal_pool_tape, EncoderConfig};

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(name: &str, in_ch: usize, out_ch: usize, stride: (usize, usize)) -> Self {
        let conv1 = Conv2d::new(format!("{name}.conv1"), in_ch, out_ch, (3, 3), stride, (1, 1)).no_bias();
        let bn1 = BatchNorm2d::new(format!("{name}.bn1"), out_ch);
        let conv2 = Conv2d::new(format!("{name}.conv2"), out_ch, out_ch, (3, 3), (1, 1), (1, 1)).no_bias();
        let bn2 = BatchNorm2d::new(format!("{name}.bn2"), out_ch);
        let downsample = if stride != (1, 1) || in_ch != out_ch {
            Some((
                Conv2d::new(format!("{name}.down.conv"), in_ch, out_ch, (1, 1), stride, (0, 0)).no_bias(),
                BatchNorm2d::new(format!("{name}.down.bn"), out_ch),
            ))
        } else {
            None
        };
        BasicBlock { conv1, bn1, conv2, bn2, downsample }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        self.conv1.init(store, rng);
        self.bn1.init(store, rng);
        self.conv2.init(store, rng);
        self.bn2.init(store, rng);
        if let Some((c, b)) = &self.downsample {
            c.init(store, rng);
            b.init(store, rng);
        }
    }

    fn forward(&self, ctx: &mut FwdCtx, store: &mut ParamStore, x: Var) -> Var {
        let mut h = self.conv1.forward(ctx, store, x);
        h = self.bn1.forward(ctx, store, h);
        h = ctx.tape.relu(h);
        h = self.conv2.forward(ctx, store, h);
        h = self.bn2.forward(ctx, store, h);
        let identity = match &self.downsample {
            Some((c, b)) => {
                let d = c.forward(ctx, store, x);
                b.forward(ctx, store, d)
            }
            None => x,
        };
        let sum = ctx.tape.add(h, identity);
        ctx.tape.relu(sum)
    }
}

#[derive(Debug, Clone)]
pub struct Resnetish34 {
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<Vec<BasicBlock>>,
    emb: usize,
}

impl Resnetish34 {
    pub fn new(prefix: &str, cfg: &EncoderConfig) -> Self {
        let wm = cfg.width_multiplier;
        let widths = [scaled(64, wm), scaled(128, wm), scaled(256, wm), scaled(512, wm)];
        let depths = [3usize, 4, 6, 3];
        let strides = [(1, 1), (2, 2), (2, 2), (1, 2)];
        let stem_conv =
            Conv2d::new(format!("{prefix}.stem.conv"), 1, widths[0], (7, 7), (2, 2), (3, 3)).no_bias();
        let stem_bn = BatchNorm2d::new(format!("{prefix}.stem.bn"), widths[0]);
        let mut stages = Vec::new();
        let mut in_ch = widths[0];
        for (s, ((&w, &d), &st)) in widths.iter().zip(depths.iter()).zip(strides.iter()).enumerate() {
            let mut blocks = Vec::new();
            for b in 0..d {
                let stride = if b == 0 { st } else { (1, 1) };
                blocks.push(BasicBlock::new(
                    &format!("{prefix}.layer{}.block{b}", s + 1),
                    if b == 0 { in_ch } else { w },
                    w,
                    stride,
                ));
            }
            in_ch = w;
            stages.push(blocks);
        }
        // 64 mel -> /2 stem -> /2 pool -> /2 -> /2 -> 4 frequency bins.
        let emb = 4 * widths[3];
        Resnetish34 { stem_conv, stem_bn, stages, emb }
    }

    pub fn embedding_dim(&self) -> usize {
        self.emb
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        self.stem_conv.init(store, rng);
        self.stem_bn.init(store, rng);
        for stage in &self.stages {
            for b in stage {
                b.init(store, rng);
            }
        }
    }

    pub fn forward(
        &self,
        ctx: &mut FwdCtx,
        store: &mut ParamStore,
        x: Var,
        taps: &mut Vec<(String, Var)>,
    ) -> Var {
        let mut h = self.stem_conv.forward(ctx, store, x);
        h = self.stem_bn.forward(ctx, store, h);
        h = ctx.tape.relu(h);
        h = ctx.tape.maxpool2d(h, (3, 3), (2, 2), (1, 1));
        taps.push(("stem".into(), h));
        for (s, stage) in self.stages.iter().enumerate() {
            for b in stage {
                h = b.forward(ctx, store, h);
            }
            taps.push((format!("layer{}", s + 1), h));
        }
        let sh = ctx.tape.shape(h).to_vec();
        let (n, c, f, t) = (sh[0], sh[1], sh[2], sh[3]);
        let h = ctx.tape.permute(h, &[0, 3, 2, 1]);
        let h = ctx.tape.reshape(h, &[n, t, f * c]);
        let pooled = temporal_pool_tape(ctx.tape, h);
        taps.push(("embedding".into(), pooled));
        pooled
    }
}
