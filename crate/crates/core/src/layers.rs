//! Trainable layer modules and the activation tape used for reverse mode.
//!
//! The architectures are fixed, so reverse mode is a stack: each layer pushes
//! what its backward pass needs during [`Layer::forward_train`] and pops it in
//! [`Layer::backward`], visiting layers in reverse order.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Adam moment estimates for one [`LayerParams`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m_weight: Tensor<T>,
    pub v_weight: Tensor<T>,
    pub m_bias: Tensor<T>,
    pub v_bias: Tensor<T>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(name: impl Into<String>, weight_shape: &[usize], bias_len: usize) -> Self {
        Self::from_tensors(
            name,
            Tensor::zeros(weight_shape),
            Tensor::zeros(&[bias_len]),
        )
    }

    pub fn from_tensors(name: impl Into<String>, weight: Tensor<T>, bias: Tensor<T>) -> Self {
        let ws = weight.shape().to_vec();
        let bs = bias.shape().to_vec();
        Self {
            name: name.into(),
            grad_weight: Tensor::zeros(&ws),
            grad_bias: Tensor::zeros(&bs),
            adam: AdamState {
                m_weight: Tensor::zeros(&ws),
                v_weight: Tensor::zeros(&ws),
                m_bias: Tensor::zeros(&bs),
                v_bias: Tensor::zeros(&bs),
                step: 0,
            },
            weight,
            bias,
        }
    }

    /// Uniform weights in `±sqrt(6 / fan_in)`, zero bias.
    pub fn init_uniform<R: Rng>(
        name: impl Into<String>,
        weight_shape: &[usize],
        bias_len: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Tensor::from_fn(weight_shape, |_| T::from_f64_lossy(dist.sample(rng)));
        Self::from_tensors(name, weight, Tensor::zeros(&[bias_len]))
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }

    pub fn accumulate(&mut self, grad_weight: &Tensor<T>, grad_bias: &Tensor<T>) -> Result<()> {
        self.grad_weight.add_assign(grad_weight)?;
        self.grad_bias.add_assign(grad_bias)
    }

    pub fn num_elements(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams::from_tensors(self.name.clone(), self.weight.cast(), self.bias.cast())
    }
}

#[derive(Debug)]
enum Saved<T> {
    Tensor(Tensor<T>),
    Indices(Vec<usize>),
    Shape(Vec<usize>),
}

/// Stack of activations recorded by a training forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    stack: Vec<Saved<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { stack: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn len(&self) -> usize {
        self.stack.len()
    }

    fn push(&mut self, s: Saved<T>) {
        self.stack.push(s);
    }

    fn pop(&mut self) -> Result<Saved<T>> {
        self.stack.pop().ok_or(Error::BackwardWithoutForward)
    }

    fn pop_tensor(&mut self) -> Result<Tensor<T>> {
        match self.pop()? {
            Saved::Tensor(t) => Ok(t),
            _ => Err(Error::BackwardWithoutForward),
        }
    }

    fn pop_indices(&mut self) -> Result<Vec<usize>> {
        match self.pop()? {
            Saved::Indices(i) => Ok(i),
            _ => Err(Error::BackwardWithoutForward),
        }
    }

    fn pop_shape(&mut self) -> Result<Vec<usize>> {
        match self.pop()? {
            Saved::Shape(s) => Ok(s),
            _ => Err(Error::BackwardWithoutForward),
        }
    }
}

pub trait Layer<T: Scalar>: Send + Sync {
    /// Inference pass, nothing recorded.
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Forward pass that records what [`Layer::backward`] needs on `tape`.
    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&LayerParams<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub params: LayerParams<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(name: impl Into<String>, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            params: LayerParams::init_uniform(name, &[cout, cin, 3, 3], cout, cin * 9, rng),
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.params.weight, &self.params.bias)
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        tape.push(Saved::Tensor(x.clone()));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let x = tape.pop_tensor()?;
        let g = ops::conv2d_backward(&x, &self.params.weight, dy)?;
        self.params.accumulate(&g.kernels, &g.bias)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&LayerParams<T>> {
        vec![&self.params]
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        vec![&mut self.params]
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub params: LayerParams<T>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng>(name: impl Into<String>, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            params: LayerParams::init_uniform(name, &[cin, cout, 3, 3], cout, cin * 9, rng),
        }
    }
}

impl<T: Scalar> Layer<T> for ConvTranspose2d<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv_transpose2d(x, &self.params.weight, &self.params.bias)
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        tape.push(Saved::Tensor(x.clone()));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let x = tape.pop_tensor()?;
        let g = ops::conv_transpose2d_backward(&x, &self.params.weight, dy)?;
        self.params.accumulate(&g.kernels, &g.bias)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&LayerParams<T>> {
        vec![&self.params]
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        vec![&mut self.params]
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub params: LayerParams<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(name: impl Into<String>, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            params: LayerParams::init_uniform(name, &[output, input], output, input, rng),
        }
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(x, &self.params.weight, &self.params.bias)
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        tape.push(Saved::Tensor(x.clone()));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let x = tape.pop_tensor()?;
        let g = ops::linear_backward(&x, &self.params.weight, dy)?;
        self.params.accumulate(&g.kernels, &g.bias)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&LayerParams<T>> {
        vec![&self.params]
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        vec![&mut self.params]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Relu;

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::relu(x))
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let y = ops::relu(x);
        tape.push(Saved::Tensor(y.clone()));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let y = tape.pop_tensor()?;
        ops::relu_backward(&y, dy)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sigmoid;

impl<T: Scalar> Layer<T> for Sigmoid {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::sigmoid(x))
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let y = ops::sigmoid(x);
        tape.push(Saved::Tensor(y.clone()));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let s = tape.pop_tensor()?;
        ops::sigmoid_backward(&s, dy)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPool;

impl<T: Scalar> Layer<T> for MaxPool {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::maxpool3x3s2(x)?.0)
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let (y, arg) = ops::maxpool3x3s2(x)?;
        tape.push(Saved::Shape(x.shape().to_vec()));
        tape.push(Saved::Indices(arg));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let arg = tape.pop_indices()?;
        let shape = tape.pop_shape()?;
        ops::maxpool3x3s2_backward(&shape, &arg, dy)
    }
}

/// Bilinear upsampling to a fixed spatial size.
#[derive(Debug, Clone, Copy)]
pub struct Upsample {
    pub target: (usize, usize),
}

impl<T: Scalar> Layer<T> for Upsample {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::bilinear_resize(x, self.target)
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let y = ops::bilinear_resize(x, self.target)?;
        tape.push(Saved::Shape(x.shape().to_vec()));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let shape = tape.pop_shape()?;
        ops::bilinear_resize_backward(&shape, dy)
    }
}

/// `y = relu(F(x) + x)` with `F` = conv-relu-conv, conv-relu-conv (3×3, pad 1).
///
/// With `output_relu` off the block returns `F(x) + x` unrectified.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub convs: [Conv2d<T>; 4],
    pub output_relu: bool,
}

/// Initial weights of the last conv in `F` are scaled by this, so a block
/// starts close to the identity and activations do not grow with depth.
pub const RESIDUAL_INIT_SCALE: f64 = 0.1;

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng>(prefix: &str, channels: usize, rng: &mut R) -> Self {
        let mut convs: [Conv2d<T>; 4] =
            std::array::from_fn(|i| Conv2d::new(format!("{prefix}.c{i}"), channels, channels, rng));
        convs[3]
            .params
            .weight
            .scale(T::from(RESIDUAL_INIT_SCALE).expect("representable"));
        Self {
            convs,
            output_relu: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.convs[0].params.weight.shape()[1]
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let (c, _, _) = x.dims3("residual_block")?;
        if c != self.channels() {
            return Err(Error::shape("residual_block channels", self.channels(), c));
        }
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut h = self.convs[0].forward(x)?;
        h = ops::relu(&h);
        h = self.convs[1].forward(&h)?;
        h = self.convs[2].forward(&h)?;
        h = ops::relu(&h);
        h = self.convs[3].forward(&h)?;
        h.add_assign(x)?;
        Ok(if self.output_relu { ops::relu(&h) } else { h })
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut h = self.convs[0].forward_train(x, tape)?;
        h = Relu.forward_train(&h, tape)?;
        h = self.convs[1].forward_train(&h, tape)?;
        h = self.convs[2].forward_train(&h, tape)?;
        h = Relu.forward_train(&h, tape)?;
        h = self.convs[3].forward_train(&h, tape)?;
        h.add_assign(x)?;
        if self.output_relu {
            Relu.forward_train(&h, tape)
        } else {
            Ok(h)
        }
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let d = if self.output_relu {
            Relu.backward(dy, tape)?
        } else {
            dy.clone()
        };
        let mut g = self.convs[3].backward(&d, tape)?;
        g = Relu.backward(&g, tape)?;
        g = self.convs[2].backward(&g, tape)?;
        g = self.convs[1].backward(&g, tape)?;
        g = Relu.backward(&g, tape)?;
        g = self.convs[0].backward(&g, tape)?;
        g.add_assign(&d)?;
        Ok(g)
    }

    fn params(&self) -> Vec<&LayerParams<T>> {
        self.convs.iter().map(|c| &c.params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        self.convs.iter_mut().map(|c| &mut c.params).collect()
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) {
        self.layers.push(Box::new(layer));
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    fn forward_train(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward_train(&h, tape)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g, tape)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&LayerParams<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// Zero the gradient accumulators of every parameter reachable from `layer`.
pub fn zero_grads<T: Scalar>(layer: &mut dyn Layer<T>) {
    for p in layer.params_mut() {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_without_forward_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::new("c", 1, 1, &mut rng);
        let mut tape = Tape::new();
        let err = conv
            .backward(&Tensor::zeros(&[1, 2, 2]), &mut tape)
            .unwrap_err();
        assert!(matches!(err, Error::BackwardWithoutForward));
    }

    #[test]
    fn zeroed_residual_block_is_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut block = ResidualBlock::<f64>::new("r", 3, &mut rng);
        for c in &mut block.convs {
            c.params.weight.fill(0.0);
        }
        let x = Tensor::from_fn(&[3, 4, 5], |i| (i as f64 * 0.37).sin());
        assert_eq!(block.forward(&x).unwrap(), ops::relu(&x));
        let y = block.forward(&Tensor::zeros(&[3, 4, 5])).unwrap();
        assert_eq!(y.shape(), &[3, 4, 5]);
        assert!(block.forward(&Tensor::zeros(&[2, 4, 5])).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LayerParams::<f64>::init_uniform("w", &[8, 4, 3, 3], 8, 36, &mut rng);
        let bound = (6.0f64 / 36.0).sqrt();
        assert!(p.weight.data().iter().all(|v| v.abs() <= bound));
        assert!(p.bias.data().iter().all(|&v| v == 0.0));
        assert!(p.weight.max_abs() > 0.5 * bound);
    }

    #[test]
    fn train_and_inference_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seq = Sequential::<f64>::new();
        seq.push(Conv2d::new("a", 2, 3, &mut rng));
        seq.push(Relu);
        seq.push(MaxPool);
        seq.push(ResidualBlock::new("b", 3, &mut rng));
        seq.push(Upsample { target: (5, 6) });
        seq.push(ConvTranspose2d::new("c", 3, 1, &mut rng));
        seq.push(Sigmoid);
        let x = Tensor::from_fn(&[2, 5, 6], |i| (i as f64 * 0.11).cos());
        let mut tape = Tape::new();
        let a = seq.forward(&x).unwrap();
        let b = seq.forward_train(&x, &mut tape).unwrap();
        assert_eq!(a, b);
        let dx = seq
            .backward(&Tensor::full(&[1, 5, 6], 1.0), &mut tape)
            .unwrap();
        assert_eq!(dx.shape(), x.shape());
        assert!(tape.is_empty());
    }
}
