//! Residual trunks: basic blocks (34-layer) and bottlenecks (50/101),
//! a 7×7 stem, and four stages with taps after stages 4 and 5.

use ndarray::Array4;
use rand::Rng;

use super::layers::{scaled, ConvBnRelu, ConvBnReluCache, Mode, Visitor};
use crate::nn::activation::{relu, relu_backward};
use crate::nn::pool::{maxpool_backward, maxpool_forward, MaxPoolCache};
use crate::nn::Scalar;

/// Per-stage base widths before the width multiplier.
const STAGE_PLANES: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

/// One residual block; `units` is the convolutional path, `proj` the
/// optional 1×1 projection shortcut.
#[derive(Debug, Clone)]
pub struct ResBlock<F: Scalar> {
    units: Vec<ConvBnRelu<F>>,
    proj: Option<ConvBnRelu<F>>,
}

pub struct ResBlockCache<F: Scalar> {
    units: Vec<ConvBnReluCache<F>>,
    proj: Option<ConvBnReluCache<F>>,
    /// Post-addition, post-ReLU output (the ReLU mask).
    out: Array4<F>,
}

impl<F: Scalar> ResBlock<F> {
    pub fn new(
        kind: BlockKind,
        in_c: usize,
        planes: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let out_c = planes * kind.expansion();
        let units = match kind {
            BlockKind::Basic => vec![
                ConvBnRelu::new(in_c, planes, 3, stride, 1, true, rng),
                ConvBnRelu::new(planes, planes, 3, 1, 1, false, rng),
            ],
            BlockKind::Bottleneck => vec![
                ConvBnRelu::new(in_c, planes, 1, 1, 0, true, rng),
                ConvBnRelu::new(planes, planes, 3, stride, 1, true, rng),
                ConvBnRelu::new(planes, out_c, 1, 1, 0, false, rng),
            ],
        };
        let proj = (stride != 1 || in_c != out_c)
            .then(|| ConvBnRelu::new(in_c, out_c, 1, stride, 0, false, rng));
        Self { units, proj }
    }

    pub fn has_projection(&self) -> bool {
        self.proj.is_some()
    }

    pub fn forward(&mut self, x: &Array4<F>, mode: Mode) -> (Array4<F>, ResBlockCache<F>) {
        let mut caches = Vec::with_capacity(self.units.len());
        let mut h = x.clone();
        for unit in self.units.iter_mut() {
            let (y, c) = unit.forward(&h, mode);
            caches.push(c);
            h = y;
        }
        let (skip, proj_cache) = match self.proj.as_mut() {
            Some(p) => {
                let (s, c) = p.forward(x, mode);
                (s, Some(c))
            }
            None => (x.clone(), None),
        };
        let out = relu(&(&h + &skip));
        (
            out.clone(),
            ResBlockCache {
                units: caches,
                proj: proj_cache,
                out,
            },
        )
    }

    pub fn backward(&mut self, cache: &ResBlockCache<F>, dy: &Array4<F>) -> Array4<F> {
        let dsum = relu_backward(&cache.out, dy);
        let mut d = dsum.clone();
        for (unit, c) in self.units.iter_mut().zip(cache.units.iter()).rev() {
            d = unit.backward(c, &d, true).expect("dx requested");
        }
        let dskip = match (self.proj.as_mut(), cache.proj.as_ref()) {
            (Some(p), Some(c)) => p.backward(c, &dsum, true).expect("dx requested"),
            _ => dsum,
        };
        d + dskip
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        for (i, unit) in self.units.iter_mut().enumerate() {
            unit.visit(&format!("{prefix}.unit{}", i + 1), f);
        }
        if let Some(p) = self.proj.as_mut() {
            p.visit(&format!("{prefix}.proj"), f);
        }
    }

    pub fn zero_grads(&mut self) {
        for unit in self.units.iter_mut() {
            unit.zero_grads();
        }
        if let Some(p) = self.proj.as_mut() {
            p.zero_grads();
        }
    }
}

/// Stem plus the four residual stages. Spatial sizes at the taps are
/// input/16 after stage 4 and input/32 after stage 5.
#[derive(Debug, Clone)]
pub struct ResNetTrunk<F: Scalar> {
    pub stem: ConvBnRelu<F>,
    pub stages: Vec<Vec<ResBlock<F>>>,
    kind: BlockKind,
    width: f64,
}

pub struct TrunkCache<F: Scalar> {
    stem: ConvBnReluCache<F>,
    pool: MaxPoolCache,
    blocks: Vec<Vec<ResBlockCache<F>>>,
    /// Stage-4 and stage-5 outputs (the tap activations).
    pub s4: Array4<F>,
    pub s5: Array4<F>,
}

/// Gradients flowing through the tap activations.
pub struct TapGrads<F: Scalar> {
    pub ds4: Array4<F>,
    pub ds5: Array4<F>,
}

impl<F: Scalar> ResNetTrunk<F> {
    pub fn new(kind: BlockKind, block_counts: [usize; 4], width: f64, rng: &mut impl Rng) -> Self {
        let c_stem = scaled(64, width);
        let stem = ConvBnRelu::new(3, c_stem, 7, 2, 3, true, rng);
        let mut stages = Vec::with_capacity(4);
        let mut in_c = c_stem;
        for (si, &count) in block_counts.iter().enumerate() {
            let planes = scaled(STAGE_PLANES[si], width);
            let mut blocks = Vec::with_capacity(count);
            for bi in 0..count {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let block = ResBlock::new(kind, in_c, planes, stride, rng);
                in_c = planes * kind.expansion();
                blocks.push(block);
            }
            stages.push(blocks);
        }
        Self {
            stem,
            stages,
            kind,
            width,
        }
    }

    /// Channels at the stage-4 tap.
    pub fn stage4_channels(&self) -> usize {
        scaled(STAGE_PLANES[2], self.width) * self.kind.expansion()
    }

    /// Channels at the stage-5 tap.
    pub fn stage5_channels(&self) -> usize {
        scaled(STAGE_PLANES[3], self.width) * self.kind.expansion()
    }

    pub fn forward(&mut self, x: &Array4<F>, mode: Mode) -> TrunkCache<F> {
        let (y, stem_cache) = self.stem.forward(x, mode);
        let (mut h, pool_cache) = maxpool_forward(&y, 3, 2, 1);
        let mut blocks = Vec::with_capacity(4);
        let mut s4 = None;
        for (si, stage) in self.stages.iter_mut().enumerate() {
            let mut caches = Vec::with_capacity(stage.len());
            for block in stage.iter_mut() {
                let (y, c) = block.forward(&h, mode);
                caches.push(c);
                h = y;
            }
            blocks.push(caches);
            if si == 2 {
                s4 = Some(h.clone());
            }
        }
        TrunkCache {
            stem: stem_cache,
            pool: pool_cache,
            blocks,
            s4: s4.expect("four stages"),
            s5: h,
        }
    }

    /// Backpropagates from the tap gradients down to the stem. `ds4_extra`
    /// carries gradient entering the stage-4 output from outside the trunk
    /// (the fusion branches); it is summed with the path through stage 5.
    pub fn backward(
        &mut self,
        cache: &TrunkCache<F>,
        ds5: &Array4<F>,
        ds4_extra: Option<&Array4<F>>,
    ) -> TapGrads<F> {
        let mut d = ds5.clone();
        for (block, c) in self.stages[3]
            .iter_mut()
            .zip(cache.blocks[3].iter())
            .rev()
        {
            d = block.backward(c, &d);
        }
        if let Some(extra) = ds4_extra {
            d += extra;
        }
        let ds4 = d.clone();
        for si in (0..3).rev() {
            for (block, c) in self.stages[si]
                .iter_mut()
                .zip(cache.blocks[si].iter())
                .rev()
            {
                d = block.backward(c, &d);
            }
        }
        let dpool = maxpool_backward(&cache.pool, &d);
        self.stem.backward(&cache.stem, &dpool, false);
        TapGrads {
            ds4,
            ds5: ds5.clone(),
        }
    }

    pub fn visit(&mut self, f: &mut Visitor<'_, F>) {
        self.stem.visit("stem", f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                block.visit(&format!("stage{}.block{}", si + 2, bi + 1), f);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.stem.zero_grads();
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                block.zero_grads();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::stream;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn trunk_tap_spatial_sizes_follow_stride_arithmetic() {
        let mut rng = stream(1, "resnet-test", &[]);
        let mut trunk = ResNetTrunk::<f32>::new(BlockKind::Bottleneck, [1, 1, 1, 1], 0.125, &mut rng);
        let x = Array4::<f32>::zeros((1, 3, 64, 64));
        let cache = trunk.forward(&x, Mode::Eval);
        assert_eq!(cache.s4.dim(), (1, trunk.stage4_channels(), 4, 4));
        assert_eq!(cache.s5.dim(), (1, trunk.stage5_channels(), 2, 2));
    }

    #[test]
    fn zeroed_residual_path_acts_as_identity() {
        // no projection: in == out, stride 1
        let mut rng = stream(2, "resnet-test", &[]);
        let mut block = ResBlock::<f64>::new(BlockKind::Bottleneck, 8, 2, 1, &mut rng);
        assert!(!block.has_projection());
        for unit in block.units.iter_mut() {
            unit.conv.w.value.fill(0.0);
        }
        let mut rng2 = stream(3, "resnet-test", &[]);
        let x = Array4::from_shape_simple_fn((2, 8, 4, 4), || rng2.random_range(0.0..1.0));
        let (y, _) = block.forward(&x, Mode::Train);
        // path produces bn(0) = beta = 0, so out = relu(x); x >= 0 here
        assert_eq!(y, x);
    }

    #[test]
    fn block_backward_matches_finite_differences_on_a_weight() {
        let mut rng = stream(4, "resnet-test", &[]);
        let mut block = ResBlock::<f64>::new(BlockKind::Basic, 4, 4, 1, &mut rng);
        let mut rng2 = stream(5, "resnet-test", &[]);
        let x = Array4::from_shape_simple_fn((2, 4, 5, 5), || rng2.random_range(-1.0..1.0));
        let dy = Array4::from_shape_simple_fn((2, 4, 5, 5), || rng2.random_range(-1.0..1.0));

        let (_, cache) = block.forward(&x, Mode::Train);
        block.backward(&cache, &dy);
        let analytic = block.units[0].conv.w.grad[[1, 2, 0, 1]];

        let eps = 1e-6;
        let loss_at = |delta: f64, block: &mut ResBlock<f64>| {
            block.units[0].conv.w.value[[1, 2, 0, 1]] += delta;
            let (y, _) = block.forward(&x, Mode::Train);
            block.units[0].conv.w.value[[1, 2, 0, 1]] -= delta;
            (&y * &dy).sum()
        };
        let up = loss_at(eps, &mut block);
        let dn = loss_at(-eps, &mut block);
        let fd = (up - dn) / (2.0 * eps);
        assert!(
            (fd - analytic).abs() < 1e-5,
            "fd {fd} vs analytic {analytic}"
        );
    }
}
