//! Declarative layer tables for the analysis, synthesis and hyper transforms,
//! with a taped forward pass and exact backpropagation.

use std::fmt;

use super::conv::{
    conv3d_backward, conv3d_pre, conv3d_transpose_backward, conv3d_transpose_pre, Activation,
};
use super::weights::{ConvParams, TransformWeights, WeightStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor4D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    /// Strided conv, then two stride-1 convs with a skip from after the first.
    AnalysisBlock,
    /// Mirror of [`LayerKind::AnalysisBlock`] built from transposed convs.
    SynthesisBlock,
}

impl LayerKind {
    pub fn is_transposed(self) -> bool {
        matches!(self, LayerKind::ConvTranspose | LayerKind::SynthesisBlock)
    }

    pub fn is_block(self) -> bool {
        matches!(self, LayerKind::AnalysisBlock | LayerKind::SynthesisBlock)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn new(
        kind: LayerKind,
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind,
            filters,
            kernel,
            stride,
            activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransformName {
    AnalysisV1,
    SynthesisV1,
    AnalysisV2,
    SynthesisV2,
    HyperAnalysis,
    HyperSynthesis,
}

impl TransformName {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformName::AnalysisV1 => "analysis_v1",
            TransformName::SynthesisV1 => "synthesis_v1",
            TransformName::AnalysisV2 => "analysis_v2",
            TransformName::SynthesisV2 => "synthesis_v2",
            TransformName::HyperAnalysis => "hyper_analysis",
            TransformName::HyperSynthesis => "hyper_synthesis",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        use TransformName::*;
        [
            AnalysisV1,
            SynthesisV1,
            AnalysisV2,
            SynthesisV2,
            HyperAnalysis,
            HyperSynthesis,
        ]
        .get(tag as usize)
        .copied()
    }
}

impl fmt::Display for TransformName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub name: TransformName,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

use Activation::{Exp, None as Linear, Relu, Sigmoid};
use LayerKind::{AnalysisBlock, Conv, ConvTranspose, SynthesisBlock};

impl TransformSpec {
    /// Three strided convs (9, 5, 5) from occupancy to `n` latent channels.
    pub fn analysis_v1(n: usize) -> Self {
        TransformSpec {
            name: TransformName::AnalysisV1,
            input_channels: 1,
            layers: vec![
                LayerSpec::new(Conv, n, 9, 2, Relu),
                LayerSpec::new(Conv, n, 5, 2, Relu),
                LayerSpec::new(Conv, n, 5, 2, Linear),
            ],
        }
    }

    /// Three upsampling transposed convs (5, 5, 9) back to one occupancy channel.
    pub fn synthesis_v1(n: usize) -> Self {
        TransformSpec {
            name: TransformName::SynthesisV1,
            input_channels: n,
            layers: vec![
                LayerSpec::new(ConvTranspose, n, 5, 2, Relu),
                LayerSpec::new(ConvTranspose, n, 5, 2, Relu),
                LayerSpec::new(ConvTranspose, 1, 9, 2, Sigmoid),
            ],
        }
    }

    /// Residual analysis with filters `4 n3`, `2 n3`, `n3`, then a 3³ conv.
    pub fn analysis_v2(n3: usize) -> Self {
        TransformSpec {
            name: TransformName::AnalysisV2,
            input_channels: 1,
            layers: vec![
                LayerSpec::new(AnalysisBlock, 4 * n3, 3, 2, Relu),
                LayerSpec::new(AnalysisBlock, 2 * n3, 3, 2, Relu),
                LayerSpec::new(AnalysisBlock, n3, 3, 2, Relu),
                LayerSpec::new(Conv, n3, 3, 1, Linear),
            ],
        }
    }

    /// Residual synthesis with filters `n3`, `2 n3`, `4 n3`, then a 3³ conv to occupancy.
    pub fn synthesis_v2(n3: usize) -> Self {
        TransformSpec {
            name: TransformName::SynthesisV2,
            input_channels: n3,
            layers: vec![
                LayerSpec::new(SynthesisBlock, n3, 3, 2, Relu),
                LayerSpec::new(SynthesisBlock, 2 * n3, 3, 2, Relu),
                LayerSpec::new(SynthesisBlock, 4 * n3, 3, 2, Relu),
                LayerSpec::new(Conv, 1, 3, 1, Sigmoid),
            ],
        }
    }

    pub fn hyper_analysis(n: usize) -> Self {
        TransformSpec {
            name: TransformName::HyperAnalysis,
            input_channels: n,
            layers: vec![
                LayerSpec::new(Conv, n, 3, 1, Relu),
                LayerSpec::new(Conv, n, 3, 2, Relu),
                LayerSpec::new(Conv, n, 3, 1, Linear),
            ],
        }
    }

    /// Predicts positive scales through a final exponential.
    pub fn hyper_synthesis(n: usize) -> Self {
        TransformSpec {
            name: TransformName::HyperSynthesis,
            input_channels: n,
            layers: vec![
                LayerSpec::new(ConvTranspose, n, 3, 1, Relu),
                LayerSpec::new(ConvTranspose, n, 3, 2, Relu),
                LayerSpec::new(ConvTranspose, n, 3, 1, Exp),
            ],
        }
    }

    pub fn output_channels(&self) -> usize {
        self.layers
            .last()
            .map_or(self.input_channels, |l| l.filters)
    }

    /// Product of strides, the per-axis down- or upsampling factor.
    pub fn scale(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn is_upsampling(&self) -> bool {
        self.layers.iter().any(|l| l.kind.is_transposed())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.filters == 0 || l.kernel % 2 == 0 || !(1..=2).contains(&l.stride) {
                return Err(Error::Config(format!(
                    "{} layer {i}: invalid {l:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Output shape for an input of the given spatial size.
    pub fn output_shape(&self, spatial: [usize; 3]) -> Result<[usize; 4]> {
        let s = self.scale();
        let out = if self.is_upsampling() {
            spatial.map(|n| n * s)
        } else {
            if spatial.iter().any(|n| n % s != 0) {
                return Err(Error::Shape(format!(
                    "{}: spatial size {spatial:?} not divisible by {s}",
                    self.name
                )));
            }
            spatial.map(|n| n / s)
        };
        Ok([out[0], out[1], out[2], self.output_channels()])
    }
}

fn conv_pre(transposed: bool, x: &Tensor4D, p: &ConvParams, stride: usize) -> Result<Tensor4D> {
    if transposed {
        conv3d_transpose_pre(x, &p.kernel, &p.bias, stride)
    } else {
        conv3d_pre(x, &p.kernel, &p.bias, stride)
    }
}

fn conv_back(
    transposed: bool,
    x: &Tensor4D,
    p: &ConvParams,
    stride: usize,
    dpre: &Tensor4D,
) -> (Tensor4D, ConvParams) {
    let g = if transposed {
        conv3d_transpose_backward(x, &p.kernel, stride, dpre)
    } else {
        conv3d_backward(x, &p.kernel, stride, dpre)
    };
    (
        g.input,
        ConvParams {
            kernel: g.kernel,
            bias: g.bias,
        },
    )
}

fn activate(pre: &Tensor4D, act: Activation) -> Tensor4D {
    pre.map(|v| act.apply(v))
}

/// Multiplies an upstream gradient by the activation derivative at `pre`.
fn through_activation(grad: &Tensor4D, pre: &Tensor4D, act: Activation) -> Tensor4D {
    let data = grad
        .data()
        .iter()
        .zip(pre.data())
        .map(|(&g, &p)| g * act.derivative(p, act.apply(p)))
        .collect();
    Tensor4D::from_vec(grad.shape(), data).expect("same shape")
}

#[derive(Debug, Clone)]
enum LayerTape {
    Conv {
        input: Tensor4D,
        pre: Tensor4D,
    },
    Block {
        input: Tensor4D,
        pre1: Tensor4D,
        pre2: Tensor4D,
        pre3: Tensor4D,
    },
}

/// Intermediates of one forward pass, consumed by [`backward_transform`].
#[derive(Debug, Clone)]
pub struct Tape {
    spec: TransformSpec,
    weights: TransformWeights,
    layers: Vec<LayerTape>,
    output_shape: [usize; 4],
}

impl Tape {
    pub fn spec(&self) -> &TransformSpec {
        &self.spec
    }
}

fn block_forward(
    x: &Tensor4D,
    convs: &[ConvParams],
    transposed: bool,
    stride: usize,
    act: Activation,
) -> Result<(Tensor4D, [Tensor4D; 3])> {
    let pre1 = conv_pre(transposed, x, &convs[0], stride)?;
    let c1 = activate(&pre1, Relu);
    let pre2 = conv_pre(transposed, &c1, &convs[1], 1)?;
    let h = activate(&pre2, Relu);
    let mut pre3 = conv_pre(transposed, &h, &convs[2], 1)?;
    pre3.add_assign(&c1)?;
    Ok((activate(&pre3, act), [pre1, pre2, pre3]))
}

/// Residual block: `act(conv3(relu(conv2(c1))) + c1)` with `c1 = relu(conv1(x))`.
pub fn residual_block_forward(
    input: &Tensor4D,
    convs: &[ConvParams],
    kind: LayerKind,
) -> Result<Tensor4D> {
    if !kind.is_block() || convs.len() != 3 {
        return Err(Error::Shape(format!(
            "residual block needs a block kind and 3 convs, got {kind:?} with {}",
            convs.len()
        )));
    }
    Ok(block_forward(input, convs, kind.is_transposed(), 2, Relu)?.0)
}

/// Runs a transform, keeping the intermediates needed for backpropagation.
pub fn forward_transform(
    spec: &TransformSpec,
    weights: &WeightStore,
    input: &Tensor4D,
) -> Result<(Tensor4D, Tape)> {
    let tw = weights.get(spec.name)?;
    tw.check(spec)?;
    let expected = spec.output_shape(input.spatial())?;
    if input.channels() != spec.input_channels {
        return Err(Error::Shape(format!(
            "{} expects {} input channels, got {}",
            spec.name,
            spec.input_channels,
            input.channels()
        )));
    }
    let mut x = input.clone();
    let mut tapes = Vec::with_capacity(spec.layers.len());
    for (layer, convs) in spec.layers.iter().zip(&tw.layers) {
        let transposed = layer.kind.is_transposed();
        if layer.kind.is_block() {
            let (out, [pre1, pre2, pre3]) =
                block_forward(&x, convs, transposed, layer.stride, layer.activation)?;
            tapes.push(LayerTape::Block {
                input: x,
                pre1,
                pre2,
                pre3,
            });
            x = out;
        } else {
            let pre = conv_pre(transposed, &x, &convs[0], layer.stride)?;
            let out = activate(&pre, layer.activation);
            tapes.push(LayerTape::Conv { input: x, pre });
            x = out;
        }
    }
    debug_assert_eq!(x.shape(), expected);
    let tape = Tape {
        spec: spec.clone(),
        weights: tw.clone(),
        layers: tapes,
        output_shape: x.shape(),
    };
    Ok((x, tape))
}

/// Runs a transform without recording a tape.
pub fn apply_transform(
    spec: &TransformSpec,
    weights: &WeightStore,
    input: &Tensor4D,
) -> Result<Tensor4D> {
    let tw = weights.get(spec.name)?;
    tw.check(spec)?;
    spec.output_shape(input.spatial())?;
    let mut x = input.clone();
    for (layer, convs) in spec.layers.iter().zip(&tw.layers) {
        let transposed = layer.kind.is_transposed();
        x = if layer.kind.is_block() {
            block_forward(&x, convs, transposed, layer.stride, layer.activation)?.0
        } else {
            activate(
                &conv_pre(transposed, &x, &convs[0], layer.stride)?,
                layer.activation,
            )
        };
    }
    Ok(x)
}

/// Backpropagates an output gradient through a recorded pass.
pub fn backward_transform(
    tape: Tape,
    output_gradient: &Tensor4D,
) -> Result<(Tensor4D, TransformWeights)> {
    if output_gradient.shape() != tape.output_shape {
        return Err(Error::Usage(format!(
            "{} tape produced {:?}, gradient has shape {:?}",
            tape.spec.name,
            tape.output_shape,
            output_gradient.shape()
        )));
    }
    let mut grads = tape.weights.zeros_like();
    let mut g = output_gradient.clone();
    for (i, layer_tape) in tape.layers.iter().enumerate().rev() {
        let layer = &tape.spec.layers[i];
        let convs = &tape.weights.layers[i];
        let transposed = layer.kind.is_transposed();
        match layer_tape {
            LayerTape::Conv { input, pre } => {
                let dpre = through_activation(&g, pre, layer.activation);
                let (dx, dp) = conv_back(transposed, input, &convs[0], layer.stride, &dpre);
                grads.layers[i][0] = dp;
                g = dx;
            }
            LayerTape::Block {
                input,
                pre1,
                pre2,
                pre3,
            } => {
                let c1 = activate(pre1, Relu);
                let h = activate(pre2, Relu);
                let dpre3 = through_activation(&g, pre3, layer.activation);
                let (dh, dp3) = conv_back(transposed, &h, &convs[2], 1, &dpre3);
                let dpre2 = through_activation(&dh, pre2, Relu);
                let (mut dc1, dp2) = conv_back(transposed, &c1, &convs[1], 1, &dpre2);
                dc1.add_assign(&dpre3)?;
                let dpre1 = through_activation(&dc1, pre1, Relu);
                let (dx, dp1) = conv_back(transposed, input, &convs[0], layer.stride, &dpre1);
                grads.layers[i] = vec![dp1, dp2, dp3];
                g = dx;
            }
        }
    }
    Ok((g, grads))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::conv::Kernel;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor4D {
        let n = shape.iter().product();
        Tensor4D::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    fn store_for(spec: &TransformSpec, seed: u64) -> WeightStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::init(std::slice::from_ref(spec), &mut rng);
        // Non-zero biases exercise the bias gradients and shift ReLU kinks.
        let mut flat = store.to_flat();
        for v in flat.iter_mut() {
            if *v == 0.0 {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
        store.load_flat(&flat).unwrap();
        store
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cases = [
            (TransformSpec::analysis_v1(8), [16, 16, 16, 1], [2, 2, 2, 8]),
            (TransformSpec::analysis_v2(2), [16, 16, 16, 1], [2, 2, 2, 2]),
            (
                TransformSpec::synthesis_v1(4),
                [2, 2, 2, 4],
                [16, 16, 16, 1],
            ),
            (
                TransformSpec::synthesis_v2(8),
                [2, 2, 2, 8],
                [16, 16, 16, 1],
            ),
            (TransformSpec::hyper_analysis(8), [8, 8, 8, 8], [4, 4, 4, 8]),
            (
                TransformSpec::hyper_synthesis(8),
                [4, 4, 4, 8],
                [8, 8, 8, 8],
            ),
        ];
        for (spec, input, output) in cases {
            let store = store_for(&spec, 2);
            let x = random_tensor(&mut rng, input, 0.0, 1.0);
            let (y, _) = forward_transform(&spec, &store, &x).unwrap();
            assert_eq!(y.shape(), output, "{}", spec.name);
            assert_eq!(spec.output_shape(x.spatial()).unwrap(), output);
        }
    }

    #[test]
    fn synthesis_output_is_probability() {
        let spec = TransformSpec::synthesis_v2(2);
        let store = store_for(&spec, 3);
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(4), [2, 2, 2, 2], -3.0, 3.0);
        let (y, _) = forward_transform(&spec, &store, &x).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn v2_filter_progression() {
        let spec = TransformSpec::analysis_v2(8);
        let f: Vec<usize> = spec.layers.iter().map(|l| l.filters).collect();
        assert_eq!(f, vec![32, 16, 8, 8]);
        let spec = TransformSpec::synthesis_v2(8);
        let f: Vec<usize> = spec.layers.iter().map(|l| l.filters).collect();
        assert_eq!(f, vec![8, 16, 32, 1]);
    }

    #[test]
    fn indivisible_input_is_shape_error() {
        let spec = TransformSpec::analysis_v1(2);
        let store = store_for(&spec, 5);
        let x = Tensor4D::zeros([12, 12, 12, 1]);
        assert!(matches!(
            forward_transform(&spec, &store, &x),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn missing_weights_is_model_mismatch() {
        let spec = TransformSpec::analysis_v1(2);
        let x = Tensor4D::zeros([8, 8, 8, 1]);
        assert!(matches!(
            forward_transform(&spec, &WeightStore::new(), &x),
            Err(Error::ModelMismatch(_))
        ));
    }

    #[test]
    fn mismatched_gradient_is_usage_error() {
        let spec = TransformSpec::hyper_analysis(2);
        let store = store_for(&spec, 6);
        let (_, tape) = forward_transform(&spec, &store, &Tensor4D::zeros([4, 4, 4, 2])).unwrap();
        let err = backward_transform(tape, &Tensor4D::zeros([4, 4, 4, 2])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn zero_gradient_gives_zero_gradients() {
        let spec = TransformSpec::analysis_v2(1);
        let store = store_for(&spec, 7);
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(8), [8, 8, 8, 1], 0.0, 1.0);
        let (y, tape) = forward_transform(&spec, &store, &x).unwrap();
        let (dx, dw) = backward_transform(tape, &Tensor4D::zeros(y.shape())).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        let mut flat = Vec::new();
        dw.to_flat(&mut flat);
        assert!(flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_spec_input_gradient_is_adjoint() {
        let spec = TransformSpec {
            name: TransformName::HyperAnalysis,
            input_channels: 2,
            layers: vec![
                LayerSpec::new(Conv, 3, 3, 2, Linear),
                LayerSpec::new(Conv, 2, 3, 1, Linear),
            ],
        };
        let mut store = store_for(&spec, 9);
        let zeroed: Vec<f64> = {
            let mut tw = store.get(spec.name).unwrap().clone();
            for c in tw.layers.iter_mut().flatten() {
                c.bias.iter_mut().for_each(|b| *b = 0.0);
            }
            let mut f = Vec::new();
            tw.to_flat(&mut f);
            f
        };
        store.load_flat(&zeroed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&mut rng, [4, 4, 4, 2], -1.0, 1.0);
        let g = random_tensor(&mut rng, [2, 2, 2, 2], -1.0, 1.0);
        let (y, tape) = forward_transform(&spec, &store, &x).unwrap();
        let (dx, _) = backward_transform(tape, &g).unwrap();
        let lhs = y.dot(&g).unwrap();
        let rhs = x.dot(&dx).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn skip_passthrough_with_zero_inner_convs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, [8, 8, 8, 1], -1.0, 1.0);
        let first = ConvParams {
            kernel: Kernel::new(
                3,
                1,
                4,
                (0..108).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            bias: vec![0.1, -0.2, 0.0, 0.3],
        };
        let zero = ConvParams {
            kernel: Kernel::zeros(3, 4, 4),
            bias: vec![0.0; 4],
        };
        let convs = [first.clone(), zero.clone(), zero];
        let out = residual_block_forward(&x, &convs, AnalysisBlock).unwrap();
        assert_eq!(out.shape(), [4, 4, 4, 4]);
        let c1 = conv3d_pre(&x, &first.kernel, &first.bias, 2)
            .unwrap()
            .map(|v| v.max(0.0));
        assert_eq!(out, c1);
    }

    /// Central differences at eps = 1e-4. A ReLU kink inside the stencil makes
    /// that estimate meaningless, so a mismatch is re-checked at 1e-7 and the
    /// number of such re-checks is bounded.
    fn finite_difference_check(spec: &TransformSpec, input_shape: [usize; 4], seed: u64) {
        let store = store_for(spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x = random_tensor(&mut rng, input_shape, -1.0, 1.0);
        let (y, tape) = forward_transform(spec, &store, &x).unwrap();
        let w = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (dx, dw) = backward_transform(tape, &w).unwrap();
        let mut grads = Vec::new();
        dw.to_flat(&mut grads);
        grads.extend_from_slice(dx.data());
        let flat = store.to_flat();
        let n_params = flat.len();
        let loss_at = |i: usize, delta: f64| {
            if i < n_params {
                let mut p = flat.clone();
                p[i] += delta;
                let mut s = store.clone();
                s.load_flat(&p).unwrap();
                apply_transform(spec, &s, &x).unwrap().dot(&w).unwrap()
            } else {
                let mut p = x.clone();
                p.data_mut()[i - n_params] += delta;
                apply_transform(spec, &store, &p).unwrap().dot(&w).unwrap()
            }
        };
        let fd = |i: usize, eps: f64| (loss_at(i, eps) - loss_at(i, -eps)) / (2.0 * eps);
        let close = |fd: f64, g: f64| (fd - g).abs() <= 1e-4f64.max(1e-2 * g.abs());
        let mut rechecked = 0;
        for (i, &g) in grads.iter().enumerate() {
            if close(fd(i, 1e-4), g) {
                continue;
            }
            rechecked += 1;
            let fine = fd(i, 1e-7);
            assert!(close(fine, g), "{} entry {i}: fd {fine} vs {g}", spec.name);
        }
        assert!(
            rechecked * 50 <= grads.len(),
            "{}: {rechecked} of {} entries needed a re-check",
            spec.name,
            grads.len()
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(&TransformSpec::analysis_v1(2), [8, 8, 8, 1], 20);
        finite_difference_check(&TransformSpec::synthesis_v1(2), [1, 1, 1, 2], 21);
        finite_difference_check(&TransformSpec::analysis_v2(1), [8, 8, 8, 1], 22);
        finite_difference_check(&TransformSpec::synthesis_v2(1), [1, 1, 1, 1], 23);
        finite_difference_check(&TransformSpec::hyper_analysis(2), [4, 4, 4, 2], 24);
        finite_difference_check(&TransformSpec::hyper_synthesis(2), [2, 2, 2, 2], 25);
    }
}
