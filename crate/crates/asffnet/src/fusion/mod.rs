//! Adaptive spatial feature fusion.
//!
//! Two fusion forms share this module:
//!
//! - the three-input per-location form, where every spatial position
//!   blends three same-shape feature maps with simplex coefficients
//!   (α, β, γ ≥ 0 summing to 1), and
//! - the dual-branch per-sample form, where a learned gate produces one
//!   scalar ω per sample and the output is `ω·F1 + (1−ω)·F2`.
//!
//! Feature maps at this API level are single samples in (height, width,
//! channels) layout. The batched NCHW arithmetic lives in [`ops`] and is
//! shared with the backbone fusion head, so the gradient checks here
//! exercise exactly the kernels the network trains with.

pub mod ops;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::he_uniform;
use crate::nn::Scalar;

/// Tolerance for the simplex sum-to-one constraint.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// A single-sample spatial feature tensor in (height, width, channels)
/// layout. All entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F: Scalar> {
    data: Array3<F>,
}

impl<F: Scalar> FeatureMap<F> {
    pub fn new(data: Array3<F>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::validation(format!(
                "feature map dims must be >= 1, got {h}x{w}x{c}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::validation(
                "feature map contains non-finite entries",
            ));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<F> {
        self.data
    }

    /// (height, width, channels)
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Converts to a batch-of-one NCHW tensor.
    pub fn to_nchw(&self) -> Array4<F> {
        let chw = self.data.view().permuted_axes([2, 0, 1]);
        chw.as_standard_layout().to_owned().insert_axis(Axis(0))
    }

    /// Converts a batch-of-one NCHW tensor back to (H, W, C).
    pub fn from_nchw(x: &Array4<F>) -> Result<Self> {
        let hwc = x
            .index_axis(Axis(0), 0)
            .permuted_axes([1, 2, 0])
            .as_standard_layout()
            .to_owned();
        Self::new(hwc)
    }
}

/// Per-location convex coefficients for three-input fusion.
#[derive(Debug, Clone)]
pub struct SimplexWeights<F: Scalar> {
    pub alpha: Array2<F>,
    pub beta: Array2<F>,
    pub gamma: Array2<F>,
}

impl<F: Scalar> SimplexWeights<F> {
    pub fn new(alpha: Array2<F>, beta: Array2<F>, gamma: Array2<F>) -> Result<Self> {
        if alpha.dim() != beta.dim() || alpha.dim() != gamma.dim() {
            return Err(Error::shape(format!(
                "simplex weight maps disagree: alpha {:?}, beta {:?}, gamma {:?}",
                alpha.dim(),
                beta.dim(),
                gamma.dim()
            )));
        }
        let tol = F::from_f64(SIMPLEX_TOL);
        let lo = -tol;
        let hi = F::one() + tol;
        for ((&a, &b), &g) in alpha.iter().zip(beta.iter()).zip(gamma.iter()) {
            if !(a.is_finite() && b.is_finite() && g.is_finite()) {
                return Err(Error::validation("simplex weights must be finite"));
            }
            if a < lo || a > hi || b < lo || b > hi || g < lo || g > hi {
                return Err(Error::validation(format!(
                    "simplex weight out of [0,1]: ({a}, {b}, {g})"
                )));
            }
            let sum = a + b + g;
            if (sum - F::one()).abs() > tol {
                return Err(Error::validation(format!(
                    "simplex weights sum to {sum}, expected 1 within {SIMPLEX_TOL}"
                )));
            }
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Per-location softmax over three logit maps. The result satisfies
    /// the simplex constraints for any finite logits.
    pub fn from_logits(l1: &Array2<F>, l2: &Array2<F>, l3: &Array2<F>) -> Result<Self> {
        if l1.dim() != l2.dim() || l1.dim() != l3.dim() {
            return Err(Error::shape(format!(
                "logit maps disagree: {:?}, {:?}, {:?}",
                l1.dim(),
                l2.dim(),
                l3.dim()
            )));
        }
        let mut alpha = Array2::<F>::zeros(l1.dim());
        let mut beta = Array2::<F>::zeros(l1.dim());
        let mut gamma = Array2::<F>::zeros(l1.dim());
        let cols = l1.dim().1;
        for (idx, ((&a, &b), &g)) in l1.iter().zip(l2.iter()).zip(l3.iter()).enumerate() {
            let m = a.max(b).max(g);
            let (ea, eb, eg) = ((a - m).exp(), (b - m).exp(), (g - m).exp());
            let sum = ea + eb + eg;
            let (i, j) = (idx / cols, idx % cols);
            alpha[[i, j]] = ea / sum;
            beta[[i, j]] = eb / sum;
            gamma[[i, j]] = eg / sum;
        }
        Self::new(alpha, beta, gamma)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.alpha.dim()
    }
}

/// Per-sample gate weight ω ∈ [0, 1] blending the two fusion branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateWeight<F: Scalar> {
    omega: F,
}

impl<F: Scalar> GateWeight<F> {
    pub fn new(omega: F) -> Result<Self> {
        if !omega.is_finite() || omega < F::zero() || omega > F::one() {
            return Err(Error::validation(format!(
                "gate weight must lie in [0, 1], got {omega}"
            )));
        }
        Ok(Self { omega })
    }

    pub fn value(&self) -> F {
        self.omega
    }
}

/// Architecture of the gate generator's two dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightGeneratorSpec {
    /// Width of the first (ReLU) dense layer.
    pub reduction_units: usize,
}

/// The second dense layer always emits two logits (ω, 1−ω after softmax).
pub const GATE_LOGITS: usize = 2;

impl WeightGeneratorSpec {
    pub fn new(reduction_units: usize) -> Result<Self> {
        if reduction_units == 0 {
            return Err(Error::config("reduction_units must be >= 1"));
        }
        Ok(Self { reduction_units })
    }

    /// Default width: input channels / 8, floored at 8.
    pub fn for_input_channels(channels: usize) -> Self {
        Self {
            reduction_units: (channels / 8).max(8),
        }
    }
}

/// Learned 1×1 channel projection applied after spatial resampling.
#[derive(Debug, Clone)]
pub struct ChannelProjection<F: Scalar> {
    /// (out_channels, in_channels)
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> ChannelProjection<F> {
    /// Identity map; requires matching channel counts.
    pub fn identity(channels: usize) -> Self {
        let mut weight = Array2::<F>::zeros((channels, channels));
        for c in 0..channels {
            weight[[c, c]] = F::one();
        }
        Self {
            weight,
            bias: Array1::zeros(channels),
        }
    }

    pub fn with_init(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: he_uniform((out_channels, in_channels), in_channels, rng),
            bias: Array1::zeros(out_channels),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }
}

/// Gate generator parameters: GAP → dense(reduction, ReLU) → dense(2,
/// softmax) over the channel-concatenated branches.
#[derive(Debug, Clone)]
pub struct GateGenerator<F: Scalar> {
    pub spec: WeightGeneratorSpec,
    /// (in_channels, reduction)
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    /// (reduction, 2)
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

impl<F: Scalar> GateGenerator<F> {
    /// All-zero weights: the gate emits exactly ω = 0.5.
    pub fn zeroed(in_channels: usize, spec: WeightGeneratorSpec) -> Self {
        Self {
            spec,
            w1: Array2::zeros((in_channels, spec.reduction_units)),
            b1: Array1::zeros(spec.reduction_units),
            w2: Array2::zeros((spec.reduction_units, GATE_LOGITS)),
            b2: Array1::zeros(GATE_LOGITS),
        }
    }

    pub fn with_init(
        in_channels: usize,
        spec: WeightGeneratorSpec,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            spec,
            w1: he_uniform((in_channels, spec.reduction_units), in_channels, rng),
            b1: Array1::zeros(spec.reduction_units),
            w2: he_uniform((spec.reduction_units, GATE_LOGITS), spec.reduction_units, rng),
            b2: Array1::zeros(GATE_LOGITS),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w1.dim().0
    }
}

fn check_same_shape<F: Scalar>(a: &FeatureMap<F>, b: &FeatureMap<F>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "{what}: shapes disagree, {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Resamples `source` to the target shape: bilinear interpolation in
/// space, then the learned 1×1 projection across channels.
pub fn resample_to<F: Scalar>(
    source: &FeatureMap<F>,
    target_height: usize,
    target_width: usize,
    target_channels: usize,
    projection: &ChannelProjection<F>,
) -> Result<FeatureMap<F>> {
    if target_height == 0 || target_width == 0 || target_channels == 0 {
        return Err(Error::validation("resample targets must be >= 1"));
    }
    let (_, _, c) = source.dim();
    if projection.in_channels() != c {
        return Err(Error::shape(format!(
            "projection expects {} input channels, feature map has {c}",
            projection.in_channels()
        )));
    }
    if projection.out_channels() != target_channels {
        return Err(Error::shape(format!(
            "projection produces {} channels, target wants {target_channels}",
            projection.out_channels()
        )));
    }
    let (y, _) = ops::resample_forward(
        &source.to_nchw(),
        target_height,
        target_width,
        &projection.weight,
        &projection.bias,
    );
    FeatureMap::from_nchw(&y)
}

/// Computes the per-sample gate weight ω for two aligned branches.
pub fn compute_gate<F: Scalar>(
    f1: &FeatureMap<F>,
    f2_aligned: &FeatureMap<F>,
    gen: &GateGenerator<F>,
) -> Result<GateWeight<F>> {
    check_same_shape(f1, f2_aligned, "compute_gate")?;
    let (_, _, c) = f1.dim();
    if gen.in_channels() != 2 * c {
        return Err(Error::shape(format!(
            "gate expects {} concatenated channels, branches provide {}",
            gen.in_channels(),
            2 * c
        )));
    }
    let cache = ops::gate_forward(
        &f1.to_nchw(),
        &f2_aligned.to_nchw(),
        &gen.w1,
        &gen.b1,
        &gen.w2,
        &gen.b2,
    );
    GateWeight::new(cache.probs[[0, 0]])
}

/// Dual-branch fusion: ω·f1 + (1−ω)·f2_aligned.
pub fn fuse_dual<F: Scalar>(
    f1: &FeatureMap<F>,
    f2_aligned: &FeatureMap<F>,
    omega: GateWeight<F>,
) -> Result<FeatureMap<F>> {
    check_same_shape(f1, f2_aligned, "fuse_dual")?;
    let w = omega.value();
    let data = f1.data() * w + f2_aligned.data() * (F::one() - w);
    FeatureMap::new(data)
}

/// Three-input per-location fusion with simplex coefficients:
/// y[i,j,c] = α[i,j]·x1[i,j,c] + β[i,j]·x2[i,j,c] + γ[i,j]·x3[i,j,c].
pub fn fuse_three<F: Scalar>(
    x1: &FeatureMap<F>,
    x2: &FeatureMap<F>,
    x3: &FeatureMap<F>,
    w: &SimplexWeights<F>,
) -> Result<FeatureMap<F>> {
    check_same_shape(x1, x2, "fuse_three")?;
    check_same_shape(x1, x3, "fuse_three")?;
    let (h, wd, _) = x1.dim();
    if w.dim() != (h, wd) {
        return Err(Error::shape(format!(
            "weight maps are {:?}, features are {h}x{wd}",
            w.dim()
        )));
    }
    let a = w.alpha.view().insert_axis(Axis(2));
    let b = w.beta.view().insert_axis(Axis(2));
    let g = w.gamma.view().insert_axis(Axis(2));
    let data = x1.data() * &a + x2.data() * &b + x3.data() * &g;
    FeatureMap::new(data)
}

pub struct FuseThreeGrads<F: Scalar> {
    pub dx1: Array3<F>,
    pub dx2: Array3<F>,
    pub dx3: Array3<F>,
    pub dalpha: Array2<F>,
    pub dbeta: Array2<F>,
    pub dgamma: Array2<F>,
}

/// Exact gradients of [`fuse_three`] w.r.t. all inputs and weights.
pub fn fuse_three_backward<F: Scalar>(
    x1: &FeatureMap<F>,
    x2: &FeatureMap<F>,
    x3: &FeatureMap<F>,
    w: &SimplexWeights<F>,
    dy: &Array3<F>,
) -> FuseThreeGrads<F> {
    let a = w.alpha.view().insert_axis(Axis(2));
    let b = w.beta.view().insert_axis(Axis(2));
    let g = w.gamma.view().insert_axis(Axis(2));
    FuseThreeGrads {
        dx1: dy * &a,
        dx2: dy * &b,
        dx3: dy * &g,
        dalpha: (dy * x1.data()).sum_axis(Axis(2)),
        dbeta: (dy * x2.data()).sum_axis(Axis(2)),
        dgamma: (dy * x3.data()).sum_axis(Axis(2)),
    }
}

/// Backward through the per-location three-way softmax of
/// [`SimplexWeights::from_logits`].
pub fn simplex_logits_backward<F: Scalar>(
    w: &SimplexWeights<F>,
    dalpha: &Array2<F>,
    dbeta: &Array2<F>,
    dgamma: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let dim = w.dim();
    let mut d1 = Array2::<F>::zeros(dim);
    let mut d2 = Array2::<F>::zeros(dim);
    let mut d3 = Array2::<F>::zeros(dim);
    for i in 0..dim.0 {
        for j in 0..dim.1 {
            let p = [w.alpha[[i, j]], w.beta[[i, j]], w.gamma[[i, j]]];
            let d = [dalpha[[i, j]], dbeta[[i, j]], dgamma[[i, j]]];
            let dot = p[0] * d[0] + p[1] * d[1] + p[2] * d[2];
            d1[[i, j]] = p[0] * (d[0] - dot);
            d2[[i, j]] = p[1] * (d[1] - dot);
            d3[[i, j]] = p[2] * (d[2] - dot);
        }
    }
    (d1, d2, d3)
}
