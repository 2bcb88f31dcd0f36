//! Layer specifications and their runtime implementations.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::im2col::{batch_to_channel_major, channel_major_to_batch, col2im, im2col, ConvGeom};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, value: vec![T::zero(); n], grad: vec![T::zero(); n] }
    }

    pub fn from_values(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(NnError::Shape(format!("parameter of shape {shape:?} given {} values", value.len())));
        }
        Ok(Self { name: name.into(), shape, grad: vec![T::zero(); n], value })
    }

    fn uniform(name: String, shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
        Self { name, shape, value, grad: vec![T::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self.grad.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Declarative description of one layer. Shapes exclude the batch dimension;
/// images are `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    ConvTranspose2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    GlobalAvgPool,
    Flatten,
    Reshape(Vec<usize>),
    /// `x + conv1x1(relu(conv3x3(relu(x))))`, the VQ-VAE residual block.
    Residual { channels: usize, hidden: usize },
}

impl LayerSpec {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| NnError::Config(format!("{self:?} cannot follow input {input:?}: {what}"));
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(mismatch("dense input width"));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let [c, h, w] = image_dims(input).ok_or_else(|| mismatch("expected an image"))?;
                if c != *in_channels {
                    return Err(mismatch("channel count"));
                }
                let ho = ConvGeom::out_len(h, *kernel, *stride, *padding).ok_or_else(|| mismatch("kernel larger than input"))?;
                let wo = ConvGeom::out_len(w, *kernel, *stride, *padding).ok_or_else(|| mismatch("kernel larger than input"))?;
                Ok(vec![*out_channels, ho, wo])
            }
            LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel, stride, padding } => {
                let [c, h, w] = image_dims(input).ok_or_else(|| mismatch("expected an image"))?;
                if c != *in_channels || *stride == 0 {
                    return Err(mismatch("channel count"));
                }
                let grow = |len: usize| ((len - 1) * stride + kernel).checked_sub(2 * padding).filter(|&v| v > 0);
                let ho = grow(h).ok_or_else(|| mismatch("padding too large"))?;
                let wo = grow(w).ok_or_else(|| mismatch("padding too large"))?;
                Ok(vec![*out_channels, ho, wo])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = image_dims(input).ok_or_else(|| mismatch("expected an image"))?;
                Ok(vec![c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape(shape) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(mismatch("element count"));
                }
                Ok(shape.clone())
            }
            LayerSpec::Residual { channels, .. } => {
                let [c, _, _] = image_dims(input).ok_or_else(|| mismatch("expected an image"))?;
                if c != *channels {
                    return Err(mismatch("channel count"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

fn image_dims(shape: &[usize]) -> Option<[usize; 3]> {
    match shape {
        [c, h, w] => Some([*c, *h, *w]),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense<T> {
    inputs: usize,
    outputs: usize,
    weight: Param<T>,
    bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    fn compute(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let mut y = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            T::one(),
            MatRef::new(x.data(), n, self.inputs),
            MatRef::new(&self.weight.value, self.outputs, self.inputs).t(),
            T::one(),
            &mut y,
        );
        Tensor::new(vec![n, self.outputs], y).expect("dense output shape")
    }

    fn backward(&mut self, g: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let x = self.input.take().ok_or_else(|| NnError::Usage("backward called before forward".into()))?;
        let n = x.batch();
        let gm = MatRef::new(g.data(), n, self.outputs);
        gemm(T::one(), gm.t(), MatRef::new(x.data(), n, self.inputs), T::one(), &mut self.weight.grad);
        for i in 0..n {
            for (b, &v) in self.bias.grad.iter_mut().zip(g.row(i)) {
                *b += v;
            }
        }
        if !need_input {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); n * self.inputs];
        gemm(T::one(), gm, MatRef::new(&self.weight.value, self.outputs, self.inputs), T::zero(), &mut dx);
        Ok(Some(Tensor::new(vec![n, self.inputs], dx)?))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d<T> {
    geom: ConvGeom,
    out_channels: usize,
    weight: Param<T>,
    bias: Param<T>,
    cols: Option<(usize, Vec<T>)>,
}

impl<T: Real> Conv2d<T> {
    fn compute(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let g = &self.geom;
        let n = x.batch();
        let l = n * g.spatial_out();
        let mut cols = vec![T::zero(); g.rows() * l];
        im2col(g, x.data(), n, &mut cols);
        let mut ym = vec![T::zero(); self.out_channels * l];
        for (co, row) in ym.chunks_mut(l).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias.value[co]);
        }
        gemm(
            T::one(),
            MatRef::new(&self.weight.value, self.out_channels, g.rows()),
            MatRef::new(&cols, g.rows(), l),
            T::one(),
            &mut ym,
        );
        let y = channel_major_to_batch(&ym, n, self.out_channels, g.spatial_out());
        (Tensor::new(vec![n, self.out_channels, g.ho, g.wo], y).expect("conv output shape"), cols)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let (n, cols) = self.cols.take().ok_or_else(|| NnError::Usage("backward called before forward".into()))?;
        let g = self.geom;
        let l = n * g.spatial_out();
        let gm = batch_to_channel_major(grad.data(), n, self.out_channels, g.spatial_out());
        for (co, row) in gm.chunks(l).enumerate() {
            self.bias.grad[co] += row.iter().copied().sum::<T>();
        }
        let gmat = MatRef::new(&gm, self.out_channels, l);
        gemm(T::one(), gmat, MatRef::new(&cols, g.rows(), l).t(), T::one(), &mut self.weight.grad);
        if !need_input {
            return Ok(None);
        }
        let mut dcols = vec![T::zero(); g.rows() * l];
        gemm(T::one(), MatRef::new(&self.weight.value, self.out_channels, g.rows()).t(), gmat, T::zero(), &mut dcols);
        let mut dx = vec![T::zero(); n * g.c * g.h * g.w];
        col2im(&g, &dcols, n, &mut dx);
        Ok(Some(Tensor::new(vec![n, g.c, g.h, g.w], dx)?))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvTranspose2d<T> {
    /// Geometry of the adjoint convolution: output image → input grid.
    geom: ConvGeom,
    in_channels: usize,
    weight: Param<T>,
    bias: Param<T>,
    input: Option<(usize, Vec<T>)>,
}

impl<T: Real> ConvTranspose2d<T> {
    fn compute(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let g = &self.geom;
        let n = x.batch();
        let l = n * g.spatial_out();
        let xm = batch_to_channel_major(x.data(), n, self.in_channels, g.spatial_out());
        let mut cols = vec![T::zero(); g.rows() * l];
        gemm(
            T::one(),
            MatRef::new(&self.weight.value, self.in_channels, g.rows()).t(),
            MatRef::new(&xm, self.in_channels, l),
            T::zero(),
            &mut cols,
        );
        let hw = g.h * g.w;
        let mut y = vec![T::zero(); n * g.c * hw];
        col2im(g, &cols, n, &mut y);
        for (i, chunk) in y.chunks_mut(hw).enumerate() {
            let b = self.bias.value[i % g.c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        (Tensor::new(vec![n, g.c, g.h, g.w], y).expect("transposed conv output shape"), xm)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let (n, xm) = self.input.take().ok_or_else(|| NnError::Usage("backward called before forward".into()))?;
        let g = self.geom;
        let l = n * g.spatial_out();
        let hw = g.h * g.w;
        for (i, chunk) in grad.data().chunks(hw).enumerate() {
            self.bias.grad[i % g.c] += chunk.iter().copied().sum::<T>();
        }
        let mut dcols = vec![T::zero(); g.rows() * l];
        im2col(&g, grad.data(), n, &mut dcols);
        let dc = MatRef::new(&dcols, g.rows(), l);
        gemm(T::one(), MatRef::new(&xm, self.in_channels, l), dc.t(), T::one(), &mut self.weight.grad);
        if !need_input {
            return Ok(None);
        }
        let mut dxm = vec![T::zero(); self.in_channels * l];
        gemm(T::one(), MatRef::new(&self.weight.value, self.in_channels, g.rows()), dc, T::zero(), &mut dxm);
        let dx = channel_major_to_batch(&dxm, n, self.in_channels, g.spatial_out());
        Ok(Some(Tensor::new(vec![n, self.in_channels, g.ho, g.wo], dx)?))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    ConvTranspose2d(ConvTranspose2d<T>),
    Relu { output: Option<Tensor<T>> },
    GlobalAvgPool { input_shape: Option<Vec<usize>> },
    Reshape { input_shape: Vec<usize>, output_shape: Vec<usize> },
    Residual { body: Vec<Layer<T>> },
}

fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

impl<T: Real> Layer<T> {
    /// Builds a layer with He-style uniform weights and zero biases.
    pub(crate) fn build(spec: &LayerSpec, input: &[usize], name: &str, rng: &mut impl Rng) -> Result<Self> {
        let output = spec.output_shape(input)?;
        Ok(match spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense {
                inputs: *inputs,
                outputs: *outputs,
                weight: Param::uniform(format!("{name}.weight"), vec![*outputs, *inputs], fan_in_bound(*inputs), rng),
                bias: Param::zeros(format!("{name}.bias"), vec![*outputs]),
                input: None,
            }),
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let geom = ConvGeom {
                    c: *in_channels,
                    h: input[1],
                    w: input[2],
                    k: *kernel,
                    stride: *stride,
                    pad: *padding,
                    ho: output[1],
                    wo: output[2],
                };
                Layer::Conv2d(Conv2d {
                    geom,
                    out_channels: *out_channels,
                    weight: Param::uniform(
                        format!("{name}.weight"),
                        vec![*out_channels, *in_channels, *kernel, *kernel],
                        fan_in_bound(in_channels * kernel * kernel),
                        rng,
                    ),
                    bias: Param::zeros(format!("{name}.bias"), vec![*out_channels]),
                    cols: None,
                })
            }
            LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel, stride, padding } => {
                let geom = ConvGeom {
                    c: *out_channels,
                    h: output[1],
                    w: output[2],
                    k: *kernel,
                    stride: *stride,
                    pad: *padding,
                    ho: input[1],
                    wo: input[2],
                };
                Layer::ConvTranspose2d(ConvTranspose2d {
                    geom,
                    in_channels: *in_channels,
                    weight: Param::uniform(
                        format!("{name}.weight"),
                        vec![*in_channels, *out_channels, *kernel, *kernel],
                        fan_in_bound(in_channels * kernel * kernel / (stride * stride).max(1)),
                        rng,
                    ),
                    bias: Param::zeros(format!("{name}.bias"), vec![*out_channels]),
                    input: None,
                })
            }
            LayerSpec::Relu => Layer::Relu { output: None },
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool { input_shape: None },
            LayerSpec::Flatten | LayerSpec::Reshape(_) => {
                Layer::Reshape { input_shape: input.to_vec(), output_shape: output }
            }
            LayerSpec::Residual { channels, hidden } => {
                let specs = [
                    LayerSpec::Relu,
                    LayerSpec::Conv2d { in_channels: *channels, out_channels: *hidden, kernel: 3, stride: 1, padding: 1 },
                    LayerSpec::Relu,
                    LayerSpec::Conv2d { in_channels: *hidden, out_channels: *channels, kernel: 1, stride: 1, padding: 0 },
                ];
                let mut body = Vec::with_capacity(specs.len());
                let mut shape = input.to_vec();
                for (i, s) in specs.iter().enumerate() {
                    body.push(Layer::build(s, &shape, &format!("{name}.{i}"), rng)?);
                    shape = s.output_shape(&shape)?;
                }
                Layer::Residual { body }
            }
        })
    }

    pub(crate) fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Dense(d) => {
                let y = d.compute(&x);
                d.input = Some(x);
                y
            }
            Layer::Conv2d(c) => {
                let (y, cols) = c.compute(&x);
                c.cols = Some((x.batch(), cols));
                y
            }
            Layer::ConvTranspose2d(c) => {
                let (y, xm) = c.compute(&x);
                c.input = Some((x.batch(), xm));
                y
            }
            Layer::Relu { output } => {
                let y = relu(x);
                *output = Some(y.clone());
                y
            }
            Layer::GlobalAvgPool { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                avg_pool(&x)
            }
            Layer::Reshape { output_shape, .. } => reshape_batch(x, output_shape),
            Layer::Residual { body } => {
                let mut h = x.clone();
                for layer in body.iter_mut() {
                    h = layer.forward(h);
                }
                let mut y = x;
                y.add_assign(&h).expect("residual shapes");
                y
            }
        }
    }

    pub(crate) fn infer(&self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Dense(d) => d.compute(&x),
            Layer::Conv2d(c) => c.compute(&x).0,
            Layer::ConvTranspose2d(c) => c.compute(&x).0,
            Layer::Relu { .. } => relu(x),
            Layer::GlobalAvgPool { .. } => avg_pool(&x),
            Layer::Reshape { output_shape, .. } => reshape_batch(x, output_shape),
            Layer::Residual { body } => {
                let mut h = x.clone();
                for layer in body {
                    h = layer.infer(h);
                }
                let mut y = x;
                y.add_assign(&h).expect("residual shapes");
                y
            }
        }
    }

    pub(crate) fn backward(&mut self, g: Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let missing = || NnError::Usage("backward called before forward".into());
        match self {
            Layer::Dense(d) => d.backward(&g, need_input),
            Layer::Conv2d(c) => c.backward(&g, need_input),
            Layer::ConvTranspose2d(c) => c.backward(&g, need_input),
            Layer::Relu { output } => {
                let y = output.take().ok_or_else(missing)?;
                let mut g = g;
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    if yv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                Ok(Some(g))
            }
            Layer::GlobalAvgPool { input_shape } => {
                let shape = input_shape.take().ok_or_else(missing)?;
                let hw = shape[2] * shape[3];
                let scale = T::one() / T::lit(hw as f64);
                let mut dx = Vec::with_capacity(g.len() * hw);
                for &v in g.data() {
                    dx.extend(std::iter::repeat_n(v * scale, hw));
                }
                Ok(Some(Tensor::new(shape, dx)?))
            }
            Layer::Reshape { input_shape, .. } => Ok(Some(reshape_batch(g, input_shape))),
            Layer::Residual { body } => {
                let mut h = g.clone();
                for layer in body.iter_mut().rev() {
                    h = layer.backward(h, true)?.expect("input gradient requested");
                }
                let mut dx = g;
                dx.add_assign(&h)?;
                Ok(Some(dx))
            }
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::ConvTranspose2d(c) => vec![&c.weight, &c.bias],
            Layer::Residual { body } => body.iter().flat_map(|l| l.params()).collect(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::ConvTranspose2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Residual { body } => body.iter_mut().flat_map(|l| l.params_mut()).collect(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.input = None,
            Layer::Conv2d(c) => c.cols = None,
            Layer::ConvTranspose2d(c) => c.input = None,
            Layer::Relu { output } => *output = None,
            Layer::GlobalAvgPool { input_shape } => *input_shape = None,
            Layer::Reshape { .. } => {}
            Layer::Residual { body } => body.iter_mut().for_each(Layer::clear_cache),
        }
    }

    pub(crate) fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: d.weight.cast(),
                bias: d.bias.cast(),
                input: None,
            }),
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                geom: c.geom,
                out_channels: c.out_channels,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
                cols: None,
            }),
            Layer::ConvTranspose2d(c) => Layer::ConvTranspose2d(ConvTranspose2d {
                geom: c.geom,
                in_channels: c.in_channels,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
                input: None,
            }),
            Layer::Relu { .. } => Layer::Relu { output: None },
            Layer::GlobalAvgPool { .. } => Layer::GlobalAvgPool { input_shape: None },
            Layer::Reshape { input_shape, output_shape } => {
                Layer::Reshape { input_shape: input_shape.clone(), output_shape: output_shape.clone() }
            }
            Layer::Residual { body } => Layer::Residual { body: body.iter().map(Layer::cast).collect() },
        }
    }
}

fn relu<T: Real>(x: Tensor<T>) -> Tensor<T> {
    let mut x = x;
    x.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
    x
}

fn avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let scale = T::one() / T::lit(hw as f64);
    let data = x.data().chunks(hw).map(|ch| ch.iter().copied().sum::<T>() * scale).collect();
    Tensor::new(vec![n, c], data).expect("pool output shape")
}

fn reshape_batch<T: Real>(x: Tensor<T>, item_shape: &[usize]) -> Tensor<T> {
    let mut shape = Vec::with_capacity(item_shape.len() + 1);
    shape.push(x.batch());
    shape.extend_from_slice(item_shape);
    x.reshape(shape).expect("reshape preserves element count")
}
