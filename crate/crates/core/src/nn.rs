//! Dense building blocks: linear layers, MLP encoders and the
//! classification loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// Anything that owns trainable tensors in a fixed declaration order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
    /// Which tensors receive weight decay (weights yes, biases no).
    fn decay_mask(&self) -> Vec<bool>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// Affine map `x · W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform fan-in initialization, `W ~ U(-1/√in, 1/√in)`, zero bias.
    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        let bound = fan_in_bound(input);
        let data = (0..input * output)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Tensor::new(vec![input, output], data).expect("sized"),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
        }
    }
}

pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn decay_mask(&self) -> Vec<bool> {
        vec![true, false]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.weight)?;
        g.add_row(h, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Multi-layer perceptron; activation between layers, final layer linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Layer widths of an [`Mlp`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDims {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpDims {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
        }
    }

    pub fn chain(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim];
        v.extend(&self.hidden_dims);
        v.push(self.output_dim);
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.chain().contains(&0) {
            return Err(Error::Config(format!(
                "MLP dimensions must be positive, got {:?}",
                self.chain()
            )));
        }
        Ok(())
    }
}

pub fn init_mlp<R: Rng>(rng: &mut R, dims: &MlpDims) -> Result<Mlp> {
    dims.validate()?;
    let chain = dims.chain();
    let layers = chain
        .windows(2)
        .map(|w| Linear::init(rng, w[0], w[1]))
        .collect();
    Ok(Mlp {
        layers,
        activation: Activation::Relu,
    })
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn dims(&self) -> MlpDims {
        let hidden = self.layers[..self.layers.len() - 1]
            .iter()
            .map(Linear::output_dim)
            .collect::<Vec<_>>();
        MlpDims::new(self.input_dim(), &hidden, self.output_dim())
    }

    pub fn zeros(dims: &MlpDims) -> Result<Self> {
        dims.validate()?;
        let chain = dims.chain();
        Ok(Self {
            layers: chain.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            activation: Activation::Relu,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g)).collect(),
            activation: self.activation,
            input_dim: self.input_dim(),
        }
    }

    /// Forward pass on a fresh graph, values only.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let xv = g.constant(x.clone());
        let out = bound.forward(&mut g, xv)?;
        Ok(g.value(out).clone())
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    fn decay_mask(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|l| l.decay_mask()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
    activation: Activation,
    input_dim: usize,
}

impl BoundMlp {
    /// `x` is `[batch, input_dim]`; returns the embedding `[batch, output_dim]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                left: shape,
                right: vec![self.input_dim],
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last && self.activation == Activation::Relu {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}

/// Mean cross-entropy `−log softmax(logits)[label]` over the rows of
/// `logits` (`[batch, C]`, or `[C]` with a single label).
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let classes = *g.value(logits).shape().last().unwrap_or(&0);
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let ls = g.log_softmax(logits)?;
    let picked = g.gather(ls, labels)?;
    let nll = g.neg(picked);
    Ok(g.mean(nll))
}

/// Row-wise softmax of a `[batch, C]` value tensor.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let cols = *logits.shape().last().unwrap();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}
