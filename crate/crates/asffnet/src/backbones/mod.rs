//! Classifier architectures with named tap points.
//!
//! [`build_backbone`] constructs any of the supported models from a
//! [`BackboneSpec`] and an init seed; the result is a [`Model`] exposing
//! forward/backward passes, tap activations and tap gradients (for
//! fusion and attribution), and a name-based parameter visitor used by
//! the optimizer and the checkpoint codec.

pub mod asff;
pub mod layers;
pub mod lenet;
pub mod resnet;
pub mod vgg;

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::WeightGeneratorSpec;
use crate::nn::activation::softmax_rows;
use crate::nn::pool::{global_avg_pool, global_avg_pool_backward};
use crate::nn::rng::stream;
use crate::nn::Scalar;

use asff::{FusionHead, FusionHeadCache};
use layers::{DenseLayer, ParamKind, Visitor};
use lenet::{LeNet5, LeNetCache};
use resnet::{BlockKind, ResNetTrunk, TrunkCache};
use vgg::{Vgg16, VggCache};

pub use layers::{Mode, ParamVisit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Lenet5,
    Vgg16,
    Resnet34,
    Resnet50,
    Resnet101,
    AsffResnet50,
}

impl Arch {
    pub const ALL: [Arch; 6] = [
        Arch::Lenet5,
        Arch::Vgg16,
        Arch::Resnet34,
        Arch::Resnet50,
        Arch::Resnet101,
        Arch::AsffResnet50,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Lenet5 => "lenet5",
            Arch::Vgg16 => "vgg16",
            Arch::Resnet34 => "resnet34",
            Arch::Resnet50 => "resnet50",
            Arch::Resnet101 => "resnet101",
            Arch::AsffResnet50 => "asff_resnet50",
        }
    }

    /// Architectures with the five 2× downsamplings (stage taps at /16, /32).
    pub fn has_stage_taps(self) -> bool {
        !matches!(self, Arch::Lenet5)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown arch '{s}', expected one of: {}",
                    Arch::ALL.map(|a| a.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub arch: Arch,
    /// Square input edge in pixels.
    pub input_size: usize,
    /// Scales every stage's channel count; 1.0 is the full-width network.
    pub width_multiplier: f64,
    pub num_classes: usize,
}

impl BackboneSpec {
    pub fn new(arch: Arch, input_size: usize, width_multiplier: f64, num_classes: usize) -> Self {
        Self {
            arch,
            input_size,
            width_multiplier,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::config(format!(
                "width_multiplier must lie in (0, 1], got {}",
                self.width_multiplier
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.arch.has_stage_taps() {
            if self.input_size % 32 != 0 || self.input_size == 0 {
                return Err(Error::config(format!(
                    "{} needs input_size divisible by 32, got {}",
                    self.arch, self.input_size
                )));
            }
        } else if self.input_size < 16 {
            return Err(Error::config(format!(
                "lenet5 needs input_size >= 16, got {}",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// A named intermediate layer whose activations are exposed for fusion
/// and attribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapPoint {
    pub name: String,
    pub expected_spatial: (usize, usize),
    pub channels: usize,
}

pub enum Net<F: Scalar> {
    LeNet5(LeNet5<F>),
    Vgg16(Vgg16<F>),
    ResNet {
        trunk: ResNetTrunk<F>,
        head: DenseLayer<F>,
    },
    AsffResNet {
        trunk: ResNetTrunk<F>,
        fusion: FusionHead<F>,
    },
}

pub enum NetCache<F: Scalar> {
    LeNet5(LeNetCache<F>),
    Vgg16(VggCache<F>),
    ResNet {
        trunk: TrunkCache<F>,
        pooled: Array2<F>,
    },
    AsffResNet {
        trunk: TrunkCache<F>,
        head: FusionHeadCache<F>,
    },
}

impl<F: Scalar> NetCache<F> {
    /// Tap activations captured during the forward pass.
    pub fn tap_values(&self) -> BTreeMap<String, &Array4<F>> {
        let mut map = BTreeMap::new();
        match self {
            NetCache::LeNet5(c) => {
                map.insert("conv2.out".to_string(), &c.conv2_out);
            }
            NetCache::Vgg16(c) => {
                map.insert("stage4.out".to_string(), &c.s4);
                map.insert("stage5.out".to_string(), &c.s5);
            }
            NetCache::ResNet { trunk, .. } => {
                map.insert("stage4.out".to_string(), &trunk.s4);
                map.insert("stage5.out".to_string(), &trunk.s5);
            }
            NetCache::AsffResNet { trunk, head } => {
                map.insert("stage4.out".to_string(), &trunk.s4);
                map.insert("stage5.out".to_string(), &trunk.s5);
                map.insert("fusion.out".to_string(), &head.fused);
            }
        }
        map
    }

    /// Per-sample gate weights, present only for the fusion model.
    pub fn gate_omegas(&self) -> Option<Vec<F>> {
        match self {
            NetCache::AsffResNet { head, .. } => Some(head.omegas()),
            _ => None,
        }
    }
}

/// A built classifier: architecture, parameters, and tap metadata.
///
/// Forward passes take `&mut self` because batch-norm layers own running
/// statistics (updated in train mode) and gradients accumulate in place;
/// clone the model per thread to evaluate frozen parameters concurrently.
pub struct Model<F: Scalar> {
    pub spec: BackboneSpec,
    pub gate_spec: Option<WeightGeneratorSpec>,
    net: Net<F>,
    taps: Vec<TapPoint>,
    init_seed: u64,
}

impl<F: Scalar> Model<F> {
    pub fn taps(&self) -> &[TapPoint] {
        &self.taps
    }

    pub fn tap(&self, name: &str) -> Option<&TapPoint> {
        self.taps.iter().find(|t| t.name == name)
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    fn check_batch(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let s = self.spec.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::shape(format!(
                "batch is {c}x{h}x{w}, model expects 3x{s}x{s}"
            )));
        }
        Ok(())
    }

    /// Runs the network to pre-softmax logits.
    pub fn forward(&mut self, x: &Array4<F>, mode: Mode) -> Result<(Array2<F>, NetCache<F>)> {
        self.check_batch(x)?;
        Ok(match &mut self.net {
            Net::LeNet5(net) => {
                let (logits, cache) = net.forward(x, mode);
                (logits, NetCache::LeNet5(cache))
            }
            Net::Vgg16(net) => {
                let (logits, cache) = net.forward(x, mode);
                (logits, NetCache::Vgg16(cache))
            }
            Net::ResNet { trunk, head } => {
                let cache = trunk.forward(x, mode);
                let pooled = global_avg_pool(&cache.s5);
                let logits = head.forward(&pooled);
                (
                    logits,
                    NetCache::ResNet {
                        trunk: cache,
                        pooled,
                    },
                )
            }
            Net::AsffResNet { trunk, fusion } => {
                let cache = trunk.forward(x, mode);
                let (logits, head_cache) = fusion.forward(&cache.s4, &cache.s5, mode);
                (
                    logits,
                    NetCache::AsffResNet {
                        trunk: cache,
                        head: head_cache,
                    },
                )
            }
        })
    }

    /// Backpropagates `dlogits`, accumulating parameter gradients, and
    /// returns the gradients at every tap point.
    pub fn backward(
        &mut self,
        cache: &NetCache<F>,
        dlogits: &Array2<F>,
    ) -> BTreeMap<String, Array4<F>> {
        let mut taps = BTreeMap::new();
        match (&mut self.net, cache) {
            (Net::LeNet5(net), NetCache::LeNet5(c)) => {
                let d = net.backward(c, dlogits);
                taps.insert("conv2.out".to_string(), d);
            }
            (Net::Vgg16(net), NetCache::Vgg16(c)) => {
                let (ds4, ds5) = net.backward(c, dlogits);
                taps.insert("stage4.out".to_string(), ds4);
                taps.insert("stage5.out".to_string(), ds5);
            }
            (Net::ResNet { trunk, head }, NetCache::ResNet { trunk: tc, pooled }) => {
                let dpooled = head.backward(pooled, dlogits);
                let ds5 = global_avg_pool_backward(&dpooled, tc.s5.dim());
                let grads = trunk.backward(tc, &ds5, None);
                taps.insert("stage4.out".to_string(), grads.ds4);
                taps.insert("stage5.out".to_string(), grads.ds5);
            }
            (Net::AsffResNet { trunk, fusion }, NetCache::AsffResNet { trunk: tc, head: hc }) => {
                let (df1, df2, dfused) = fusion.backward(hc, dlogits);
                let grads = trunk.backward(tc, &df2, Some(&df1));
                taps.insert("stage4.out".to_string(), grads.ds4);
                taps.insert("stage5.out".to_string(), grads.ds5);
                taps.insert("fusion.out".to_string(), dfused);
            }
            _ => unreachable!("cache built by a different architecture"),
        }
        taps
    }

    /// Class probabilities for a batch (eval mode, rows on the simplex).
    pub fn predict(&mut self, batch: &Array4<F>) -> Result<Array2<F>> {
        let (logits, _) = self.forward(batch, Mode::Eval)?;
        Ok(softmax_rows(&logits))
    }

    pub fn visit_params(&mut self, f: &mut Visitor<'_, F>) {
        match &mut self.net {
            Net::LeNet5(net) => net.visit(f),
            Net::Vgg16(net) => net.visit(f),
            Net::ResNet { trunk, head } => {
                trunk.visit(f);
                head.visit("head", f);
            }
            Net::AsffResNet { trunk, fusion } => {
                trunk.visit(f);
                fusion.visit(f);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        match &mut self.net {
            Net::LeNet5(net) => net.zero_grads(),
            Net::Vgg16(net) => net.zero_grads(),
            Net::ResNet { trunk, head } => {
                trunk.zero_grads();
                head.zero_grads();
            }
            Net::AsffResNet { trunk, fusion } => {
                trunk.zero_grads();
                fusion.zero_grads();
            }
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_param_count(&mut self) -> usize {
        let mut count = 0usize;
        self.visit_params(&mut |p: ParamVisit<'_, F>| {
            if p.kind == ParamKind::Trainable {
                count += p.value.len();
            }
        });
        count
    }
}

fn stage_taps(spec: &BackboneSpec, c4: usize, c5: usize) -> Vec<TapPoint> {
    let s = spec.input_size;
    vec![
        TapPoint {
            name: "stage4.out".into(),
            expected_spatial: (s / 16, s / 16),
            channels: c4,
        },
        TapPoint {
            name: "stage5.out".into(),
            expected_spatial: (s / 32, s / 32),
            channels: c5,
        },
    ]
}

/// Builds any architecture from its spec. Initialization is seeded:
/// the same (spec, seed) always yields identical parameters.
pub fn build_backbone<F: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<Model<F>> {
    if spec.arch == Arch::AsffResnet50 {
        return build_asff_resnet(spec, None, seed);
    }
    spec.validate()?;
    let mut rng = stream(seed, "model-init", &[]);
    let w = spec.width_multiplier;
    let (net, taps) = match spec.arch {
        Arch::Lenet5 => {
            let net = LeNet5::new(spec.input_size, w, spec.num_classes, &mut rng);
            let side = LeNet5::<F>::tap_spatial(spec.input_size);
            let taps = vec![TapPoint {
                name: "conv2.out".into(),
                expected_spatial: (side, side),
                channels: net.conv2_channels(),
            }];
            (Net::LeNet5(net), taps)
        }
        Arch::Vgg16 => {
            let net = Vgg16::new(spec.input_size, w, spec.num_classes, &mut rng);
            let taps = stage_taps(spec, net.stage4_channels(), net.stage5_channels());
            (Net::Vgg16(net), taps)
        }
        Arch::Resnet34 | Arch::Resnet50 | Arch::Resnet101 => {
            let (kind, counts) = match spec.arch {
                Arch::Resnet34 => (BlockKind::Basic, [3, 4, 6, 3]),
                Arch::Resnet50 => (BlockKind::Bottleneck, [3, 4, 6, 3]),
                _ => (BlockKind::Bottleneck, [3, 4, 23, 3]),
            };
            let trunk = ResNetTrunk::new(kind, counts, w, &mut rng);
            let taps = stage_taps(spec, trunk.stage4_channels(), trunk.stage5_channels());
            let head = DenseLayer::new(trunk.stage5_channels(), spec.num_classes, &mut rng);
            (Net::ResNet { trunk, head }, taps)
        }
        Arch::AsffResnet50 => unreachable!("dispatched above"),
    };
    Ok(Model {
        spec: *spec,
        gate_spec: None,
        net,
        taps,
        init_seed: seed,
    })
}

/// Builds the fusion model. When `gen` is `None` the gate width defaults
/// to (concatenated channels)/8, floored at 8.
pub fn build_asff_resnet<F: Scalar>(
    spec: &BackboneSpec,
    gen: Option<WeightGeneratorSpec>,
    seed: u64,
) -> Result<Model<F>> {
    if spec.arch != Arch::AsffResnet50 {
        return Err(Error::config(format!(
            "build_asff_resnet requires arch asff_resnet50, got {}",
            spec.arch
        )));
    }
    spec.validate()?;
    let mut rng = stream(seed, "model-init", &[]);
    let trunk = ResNetTrunk::new(
        BlockKind::Bottleneck,
        [3, 4, 6, 3],
        spec.width_multiplier,
        &mut rng,
    );
    let (c4, c5) = (trunk.stage4_channels(), trunk.stage5_channels());
    let gate_spec = gen.unwrap_or_else(|| WeightGeneratorSpec::for_input_channels(2 * c4));
    let fusion = FusionHead::new(c4, c5, spec.num_classes, gate_spec, &mut rng);
    let mut taps = stage_taps(spec, c4, c5);
    taps.push(TapPoint {
        name: "fusion.out".into(),
        expected_spatial: (spec.input_size / 16, spec.input_size / 16),
        channels: c4,
    });
    Ok(Model {
        spec: *spec,
        gate_spec: Some(gate_spec),
        net: Net::AsffResNet { trunk, fusion },
        taps,
        init_seed: seed,
    })
}
