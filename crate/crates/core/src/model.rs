//! Architecture description and the single-encoder classification model used
//! by the `cl-*` regimes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{init_mlp, BoundLinear, BoundMlp, Linear, Mlp, MlpDims, Parameters};
use crate::ve::VeModel;

/// Encoder/classifier widths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            hidden_dims: vec![64, 64],
            embed_dim: 64,
            classes: 0,
        }
    }
}

impl ArchConfig {
    pub fn encoder_dims(&self) -> MlpDims {
        MlpDims::new(self.input_dim, &self.hidden_dims, self.embed_dim)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_dims().validate()?;
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// One encoder followed by a linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub encoder: Mlp,
    pub classifier: Linear,
}

pub struct BoundClassifier {
    pub encoder: BoundMlp,
    pub classifier: BoundLinear,
}

impl BoundClassifier {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let e = self.encoder.forward(g, x)?;
        let logits = self.classifier.forward(g, e)?;
        Ok((e, logits))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.classifier.vars());
        v
    }
}

impl ClassifierModel {
    pub fn init<R: Rng>(rng: &mut R, arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let encoder = init_mlp(rng, &arch.encoder_dims())?;
        let classifier = Linear::init(rng, arch.embed_dim, arch.classes);
        Ok(Self {
            encoder,
            classifier,
        })
    }

    pub fn arch(&self) -> ArchConfig {
        let d = self.encoder.dims();
        ArchConfig {
            input_dim: d.input_dim,
            hidden_dims: d.hidden_dims,
            embed_dim: d.output_dim,
            classes: self.classifier.output_dim(),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundClassifier {
        BoundClassifier {
            encoder: self.encoder.bind(g),
            classifier: self.classifier.bind(g),
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let xv = g.constant(x.clone());
        let (_, logits) = b.forward(&mut g, xv)?;
        Ok(g.value(logits).clone())
    }

    pub fn embedding(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.embed(x)
    }
}

impl Parameters for ClassifierModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.classifier.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.classifier.tensors_mut());
        v
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut v = self.encoder.decay_mask();
        v.extend(self.classifier.decay_mask());
        v
    }
}

/// Which encoder path produces logits at inference time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderChoice {
    #[default]
    Source,
    Target,
}

/// Which representation is exported for embedding analysis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingLayer {
    /// Encoder output `e`, before any Gaussian head.
    #[default]
    Pre,
    /// Gaussian-head mean `μ` (falls back to `e` for plain classifiers).
    Mu,
}

/// A trained model of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Classifier(ClassifierModel),
    Ve(VeModel),
}

impl Model {
    pub fn arch(&self) -> ArchConfig {
        match self {
            Model::Classifier(m) => m.arch(),
            Model::Ve(m) => m.arch(),
        }
    }

    /// Deterministic logits `[batch, C]` for a `[batch, input_dim]` input.
    pub fn infer(&self, x: &Tensor, choice: EncoderChoice) -> Result<Tensor> {
        match self {
            Model::Classifier(m) => m.logits(x),
            Model::Ve(m) => m.infer(x, choice),
        }
    }

    pub fn embedding(
        &self,
        x: &Tensor,
        choice: EncoderChoice,
        layer: EmbeddingLayer,
    ) -> Result<Tensor> {
        match self {
            Model::Classifier(m) => m.embedding(x),
            Model::Ve(m) => m.embedding(x, choice, layer),
        }
    }
}
