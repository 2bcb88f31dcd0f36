use rand::Rng;

use crate::error::{NnError, Result};
use crate::layer::{Layer, LayerSpec, Param};
use crate::optim::ema_update;
use crate::real::Real;
use crate::tensor::Tensor;

/// A feed-forward stack of layers with its parameters and forward caches.
///
/// `forward` records what `backward` needs; `infer` is a pure evaluation that
/// can run on a shared reference.
#[derive(Debug, Clone)]
pub struct Network<T: Real = f32> {
    name: String,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    primed: bool,
}

impl<T: Real> Network<T> {
    /// Builds the stack, type-checking every layer against its predecessor.
    pub fn new(name: &str, input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut impl Rng) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::Config(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            layers.push(Layer::build(spec, &shape, &format!("{name}.{i}"), rng)?);
            shape = spec.output_shape(&shape)?;
        }
        Ok(Self { name: name.to_string(), input_shape: input_shape.to_vec(), output_shape: shape, specs, layers, primed: false })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::Config(format!(
                "network `{}` expects [batch, {:?}], got {:?}",
                self.name,
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass; caches activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in self.layers.iter_mut() {
            h = layer.forward(h);
        }
        self.primed = true;
        Ok(h)
    }

    /// Pure forward pass; never touches parameters or caches.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(h);
        }
        Ok(h)
    }

    /// Accumulates parameter gradients for `grad = ∂loss/∂output` and returns
    /// `∂loss/∂input`.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_impl(grad, true).map(|g| g.expect("input gradient requested"))
    }

    /// Like [`Network::backward`] but skips the input gradient.
    pub fn backward_params(&mut self, grad: &Tensor<T>) -> Result<()> {
        self.backward_impl(grad, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        if !self.primed {
            return Err(NnError::Usage(format!("backward on `{}` before forward", self.name)));
        }
        let mut expected = vec![grad.batch()];
        expected.extend_from_slice(&self.output_shape);
        if grad.shape() != expected.as_slice() {
            self.clear_cache();
            return Err(NnError::Shape(format!("gradient {:?} for output {:?}", grad.shape(), expected)));
        }
        self.primed = false;
        let mut g = grad.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let need = need_input || i > 0;
            match layer.backward(g, need)? {
                Some(next) => g = next,
                None => {
                    debug_assert_eq!(i, 0);
                    for l in self.layers.iter_mut().take(n) {
                        l.clear_cache();
                    }
                    return Ok(None);
                }
            }
        }
        Ok(Some(g))
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
        self.primed = false;
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Copies parameter values (not gradients) from `other`, which must share the topology.
    pub fn copy_from(&mut self, other: &Network<T>) -> Result<()> {
        let src = other.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(NnError::Shape("networks differ in parameter count".into()));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            if d.shape != s.shape {
                return Err(NnError::Shape(format!("`{}` {:?} vs `{}` {:?}", d.name, d.shape, s.name, s.shape)));
            }
            d.value.copy_from_slice(&s.value);
        }
        Ok(())
    }

    /// Moves every parameter toward `online` by `tau` (see [`ema_update`]).
    pub fn ema_from(&mut self, online: &Network<T>, tau: f64) -> Result<()> {
        let src = online.params();
        let mut dst = self.params_mut();
        ema_update(&mut dst, &src, tau)
    }

    /// Same topology and parameter values in another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            output_shape: self.output_shape.clone(),
            specs: self.specs.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            primed: false,
        }
    }
}
