//! Paired variational encoders for one-shot domain adaptation.
//!
//! Two identically shaped encoders map their inputs to embeddings `e`; each
//! embedding feeds a Gaussian head producing a diagonal distribution
//! `(μ, σ = exp(log σ))`. The shared classifier sees the source embedding
//! directly and a reparameterized sample `z = μ + σ ⊙ ε` from the target
//! distribution. The bridging loss pulls the source embedding toward a
//! *detached* target sample (L1) and compares the two distributions (KL).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, EmbeddingLayer, EncoderChoice};
use crate::nn::{cross_entropy, init_mlp, BoundLinear, BoundMlp, Linear, Mlp, Parameters};

/// Loss weights. `kl_sign = +1` minimizes the KL term, `−1` maximizes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VeHyper {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kl_sign: f64,
    /// Target samples drawn per pair per step.
    pub samples: usize,
}

impl Default for VeHyper {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 1.0,
            kl_sign: 1.0,
            samples: 1,
        }
    }
}

impl VeHyper {
    pub fn validate(&self) -> Result<()> {
        if self.kl_sign != 1.0 && self.kl_sign != -1.0 {
            return Err(Error::Config(format!(
                "kl_sign must be +1 or -1, got {}",
                self.kl_sign
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        if [self.alpha, self.beta, self.gamma]
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::Config("alpha, beta, gamma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Two linear maps from the embedding to `μ` and `log σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHead {
    pub mu: Linear,
    pub log_sigma: Linear,
}

impl GaussianHead {
    pub fn init<R: Rng>(rng: &mut R, embed_dim: usize) -> Self {
        Self {
            mu: Linear::init(rng, embed_dim, embed_dim),
            log_sigma: Linear::init(rng, embed_dim, embed_dim),
        }
    }

    pub fn zeros(embed_dim: usize) -> Self {
        Self {
            mu: Linear::zeros(embed_dim, embed_dim),
            log_sigma: Linear::zeros(embed_dim, embed_dim),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundHead {
        BoundHead {
            mu: self.mu.bind(g),
            log_sigma: self.log_sigma.bind(g),
        }
    }
}

impl Parameters for GaussianHead {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.mu.tensors();
        v.extend(self.log_sigma.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mu.tensors_mut();
        v.extend(self.log_sigma.tensors_mut());
        v
    }

    fn decay_mask(&self) -> Vec<bool> {
        vec![true, false, true, false]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundHead {
    pub mu: BoundLinear,
    pub log_sigma: BoundLinear,
}

impl BoundHead {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.mu.vars().to_vec();
        v.extend(self.log_sigma.vars());
        v
    }
}

/// Diagonal Gaussian recorded on a graph; `σ = exp(log_sigma)` per dimension.
#[derive(Clone, Copy, Debug)]
pub struct DiagonalGaussian {
    pub mu: Var,
    pub log_sigma: Var,
}

pub fn gaussian_head(g: &mut Graph, e: Var, head: &BoundHead) -> Result<DiagonalGaussian> {
    let mu = head.mu.forward(g, e)?;
    let log_sigma = head.log_sigma.forward(g, e)?;
    Ok(DiagonalGaussian { mu, log_sigma })
}

/// `z = μ + σ ⊙ ε`, with `ε` entering as a constant.
pub fn reparameterize(g: &mut Graph, dist: &DiagonalGaussian, epsilon: &Tensor) -> Result<Var> {
    let eps = g.constant(epsilon.clone());
    let sigma = g.exp(dist.log_sigma);
    let spread = g.mul(sigma, eps)?;
    g.add(dist.mu, spread)
}

/// Closed-form `KL(p ‖ q)` summed over dimensions (and averaged over rows
/// for batched distributions):
/// `Σ_d log(σ_q/σ_p) + (σ_p² + (μ_p − μ_q)²) / (2σ_q²) − ½`.
pub fn kl_diag_gaussian(g: &mut Graph, p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<Var> {
    let shape = g.value(p.mu).shape().to_vec();
    if shape != g.value(q.mu).shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_diag_gaussian",
            left: shape,
            right: g.value(q.mu).shape().to_vec(),
        });
    }
    let log_ratio = g.sub(q.log_sigma, p.log_sigma)?;
    let neg2 = g.scale(log_ratio, -2.0);
    let var_ratio = g.exp(neg2);
    let diff = g.sub(p.mu, q.mu)?;
    let diff_sq = g.square(diff);
    let inv_var_q = g.scale(q.log_sigma, -2.0);
    let inv_var_q = g.exp(inv_var_q);
    let mahal = g.mul(diff_sq, inv_var_q)?;
    let quad = g.add(var_ratio, mahal)?;
    let quad = g.scale(quad, 0.5);
    let per_dim = g.add(log_ratio, quad)?;
    let per_dim = g.add_scalar(per_dim, -0.5);
    let last = shape.len().saturating_sub(1);
    let per_row = g.reduce(crate::autodiff::ReduceOp::Sum, per_dim, Some(last))?;
    Ok(g.mean(per_row))
}

/// Terms of the bridging loss, kept separate for reporting.
#[derive(Clone, Copy, Debug)]
pub struct DistTerms {
    pub l1: Var,
    pub kl: Var,
    pub total: Var,
}

/// `mean|e_src − z_tgt| + kl_sign·β·KL(p_src ‖ p_tgt)`.
///
/// `z_tgt` must be the detached sample so that the L1 term only shapes the
/// source encoder.
pub fn dist_loss(
    g: &mut Graph,
    e_src: Var,
    z_tgt: Var,
    p_src: &DiagonalGaussian,
    p_tgt: &DiagonalGaussian,
    beta: f64,
    kl_sign: f64,
) -> Result<DistTerms> {
    if !g.is_barrier(z_tgt) {
        return Err(Error::NotDetached);
    }
    let l1 = l1_mean(g, e_src, z_tgt)?;
    let kl = kl_diag_gaussian(g, p_src, p_tgt)?;
    let weighted = g.scale(kl, kl_sign * beta);
    let total = g.add(l1, weighted)?;
    Ok(DistTerms { l1, kl, total })
}

pub(crate) fn l1_mean(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// `g(e, y) + g(z, y)`: cross-entropy of both paths through the shared
/// classifier with the same labels.
pub fn entropy_loss(
    g: &mut Graph,
    logits_src: Var,
    logits_tgt: Var,
    y_src: &[usize],
    y_tgt: &[usize],
) -> Result<Var> {
    if let Some((a, b)) = y_src.iter().zip(y_tgt).find(|(a, b)| a != b) {
        return Err(Error::LabelMismatch {
            source_label: *a,
            target_label: *b,
        });
    }
    if y_src.len() != y_tgt.len() {
        return Err(Error::ShapeMismatch {
            op: "entropy_loss",
            left: vec![y_src.len()],
            right: vec![y_tgt.len()],
        });
    }
    let a = cross_entropy(g, logits_src, y_src)?;
    let b = cross_entropy(g, logits_tgt, y_tgt)?;
    g.add(a, b)
}

/// Scalar values of every loss component for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub delta_entropy: f64,
    pub delta_dist: f64,
    pub l1_term: f64,
    pub kl_term: f64,
    pub delta_ve: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, w: f64) -> Self {
        Self {
            delta_entropy: self.delta_entropy * w,
            delta_dist: self.delta_dist * w,
            l1_term: self.l1_term * w,
            kl_term: self.kl_term * w,
            delta_ve: self.delta_ve * w,
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.delta_entropy += other.delta_entropy;
        self.delta_dist += other.delta_dist;
        self.l1_term += other.l1_term;
        self.kl_term += other.kl_term;
        self.delta_ve += other.delta_ve;
    }
}

/// Source encoder, target encoder, their Gaussian heads and the shared
/// classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct VeModel {
    pub encoder_source: Mlp,
    pub head_source: GaussianHead,
    pub encoder_target: Mlp,
    pub head_target: GaussianHead,
    pub classifier: Linear,
    pub hyper: VeHyper,
}

pub struct BoundVe {
    pub encoder_source: BoundMlp,
    pub head_source: BoundHead,
    pub encoder_target: BoundMlp,
    pub head_target: BoundHead,
    pub classifier: BoundLinear,
}

impl BoundVe {
    /// Same order as [`VeModel::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder_source.vars();
        v.extend(self.head_source.vars());
        v.extend(self.encoder_target.vars());
        v.extend(self.head_target.vars());
        v.extend(self.classifier.vars());
        v
    }

    /// Target encoder and target head parameters.
    pub fn target_vars(&self) -> Vec<Var> {
        let mut v = self.encoder_target.vars();
        v.extend(self.head_target.vars());
        v
    }
}

/// A recorded forward pass of `Δ_ve` ready for [`Graph::backward`].
pub struct VeStep {
    pub graph: Graph,
    pub bound: BoundVe,
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Values of the detached target samples, one per noise draw.
    pub samples: Vec<Tensor>,
}

impl VeStep {
    pub fn gradients(&mut self) -> Result<Vec<Tensor>> {
        self.graph.backward(self.loss)?;
        Ok(self
            .bound
            .vars()
            .iter()
            .map(|&v| self.graph.grad_or_zeros(v))
            .collect())
    }
}

impl VeModel {
    /// Independent seeded initialization of both encoders and heads.
    pub fn init<R: Rng>(rng: &mut R, arch: &ArchConfig, hyper: VeHyper) -> Result<Self> {
        arch.validate()?;
        hyper.validate()?;
        let dims = arch.encoder_dims();
        let encoder_source = init_mlp(rng, &dims)?;
        let head_source = GaussianHead::init(rng, arch.embed_dim);
        let encoder_target = init_mlp(rng, &dims)?;
        let head_target = GaussianHead::init(rng, arch.embed_dim);
        let classifier = Linear::init(rng, arch.embed_dim, arch.classes);
        Ok(Self {
            encoder_source,
            head_source,
            encoder_target,
            head_target,
            classifier,
            hyper,
        })
    }

    pub fn arch(&self) -> ArchConfig {
        let d = self.encoder_source.dims();
        ArchConfig {
            input_dim: d.input_dim,
            hidden_dims: d.hidden_dims,
            embed_dim: d.output_dim,
            classes: self.classifier.output_dim(),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundVe {
        BoundVe {
            encoder_source: self.encoder_source.bind(g),
            head_source: self.head_source.bind(g),
            encoder_target: self.encoder_target.bind(g),
            head_target: self.head_target.bind(g),
            classifier: self.classifier.bind(g),
        }
    }

    /// Human-readable names aligned with [`Parameters::tensors`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mlp = |prefix: &str, m: &Mlp, names: &mut Vec<String>| {
            for i in 0..m.layers.len() {
                names.push(format!("{prefix}.layers[{i}].weight"));
                names.push(format!("{prefix}.layers[{i}].bias"));
            }
        };
        let head = |prefix: &str, names: &mut Vec<String>| {
            for part in ["mu", "log_sigma"] {
                names.push(format!("{prefix}.{part}.weight"));
                names.push(format!("{prefix}.{part}.bias"));
            }
        };
        mlp("encoder_source", &self.encoder_source, &mut names);
        head("head_source", &mut names);
        mlp("encoder_target", &self.encoder_target, &mut names);
        head("head_target", &mut names);
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names
    }

    /// Draw `samples` standard-normal noise tensors shaped `[batch, embed]`.
    pub fn draw_noise<R: Rng>(&self, rng: &mut R, batch: usize) -> Vec<Tensor> {
        let d = self.classifier.input_dim();
        (0..self.hyper.samples)
            .map(|_| {
                let data = (0..batch * d).map(|_| rng.sample(StandardNormal)).collect();
                Tensor::matrix(batch, d, data).expect("sized")
            })
            .collect()
    }

    /// Records `Δ_ve = α·Δ_entropy + γ·Δ_dist` for a batch of same-class
    /// pairs, using the supplied target noise (one tensor per sample).
    pub fn loss_with_noise(
        &self,
        x_src: &Tensor,
        x_tgt: &Tensor,
        y_src: &[usize],
        y_tgt: &[usize],
        noise: &[Tensor],
    ) -> Result<VeStep> {
        self.record(x_src, x_tgt, y_src, y_tgt, noise, None)
    }

    /// As [`VeModel::loss_with_noise`], but the detached samples entering
    /// the L1 term take the given values instead of the current ones. Holding
    /// them fixed makes `Δ_ve` an ordinary function of the parameters whose
    /// finite differences agree with the stop-gradient backward pass.
    pub fn loss_holding_samples(
        &self,
        x_src: &Tensor,
        x_tgt: &Tensor,
        y_src: &[usize],
        y_tgt: &[usize],
        noise: &[Tensor],
        held: &[Tensor],
    ) -> Result<VeStep> {
        if held.len() != noise.len() {
            return Err(Error::ShapeMismatch {
                op: "loss_holding_samples",
                left: vec![noise.len()],
                right: vec![held.len()],
            });
        }
        self.record(x_src, x_tgt, y_src, y_tgt, noise, Some(held))
    }

    fn record(
        &self,
        x_src: &Tensor,
        x_tgt: &Tensor,
        y_src: &[usize],
        y_tgt: &[usize],
        noise: &[Tensor],
        held: Option<&[Tensor]>,
    ) -> Result<VeStep> {
        if noise.is_empty() {
            return Err(Error::Empty("noise samples"));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let xs = g.constant(x_src.clone());
        let xt = g.constant(x_tgt.clone());

        let e_src = bound.encoder_source.forward(&mut g, xs)?;
        let p_src = gaussian_head(&mut g, e_src, &bound.head_source)?;
        let e_tgt = bound.encoder_target.forward(&mut g, xt)?;
        let p_tgt = gaussian_head(&mut g, e_tgt, &bound.head_target)?;

        let logits_src = bound.classifier.forward(&mut g, e_src)?;
        let inv = 1.0 / noise.len() as f64;
        let mut entropy_acc: Option<Var> = None;
        let mut l1_acc: Option<Var> = None;
        let mut kl = None;
        let mut samples = Vec::with_capacity(noise.len());
        for (k, eps) in noise.iter().enumerate() {
            let z = reparameterize(&mut g, &p_tgt, eps)?;
            let logits_tgt = bound.classifier.forward(&mut g, z)?;
            let ent = entropy_loss(&mut g, logits_src, logits_tgt, y_src, y_tgt)?;
            let z_detached = match held {
                Some(values) => {
                    let c = g.constant(values[k].clone());
                    g.detach(c)
                }
                None => g.detach(z),
            };
            samples.push(g.value(z_detached).clone());
            let terms = dist_loss(
                &mut g,
                e_src,
                z_detached,
                &p_src,
                &p_tgt,
                self.hyper.beta,
                self.hyper.kl_sign,
            )?;
            kl.get_or_insert(terms.kl);
            entropy_acc = Some(match entropy_acc {
                None => ent,
                Some(acc) => g.add(acc, ent)?,
            });
            l1_acc = Some(match l1_acc {
                None => terms.l1,
                Some(acc) => g.add(acc, terms.l1)?,
            });
        }
        let delta_entropy = g.scale(entropy_acc.expect("non-empty"), inv);
        let l1 = g.scale(l1_acc.expect("non-empty"), inv);
        let kl = kl.expect("non-empty");
        let kl_weighted = g.scale(kl, self.hyper.kl_sign * self.hyper.beta);
        let delta_dist = g.add(l1, kl_weighted)?;
        let a = g.scale(delta_entropy, self.hyper.alpha);
        let c = g.scale(delta_dist, self.hyper.gamma);
        let loss = g.add(a, c)?;

        let breakdown = LossBreakdown {
            delta_entropy: g.value(delta_entropy).item(),
            delta_dist: g.value(delta_dist).item(),
            l1_term: g.value(l1).item(),
            kl_term: g.value(kl).item(),
            delta_ve: g.value(loss).item(),
        };
        Ok(VeStep {
            graph: g,
            bound,
            loss,
            breakdown,
            samples,
        })
    }

    pub fn loss<R: Rng>(
        &self,
        x_src: &Tensor,
        x_tgt: &Tensor,
        y_src: &[usize],
        y_tgt: &[usize],
        rng: &mut R,
    ) -> Result<VeStep> {
        let noise = self.draw_noise(rng, x_src.shape()[0]);
        self.loss_with_noise(x_src, x_tgt, y_src, y_tgt, &noise)
    }

    /// Definite-point logits: `classifier(e_src(x))` for the source path,
    /// `classifier(μ_tgt(x))` for the target path. Never samples.
    pub fn infer(&self, x: &Tensor, choice: EncoderChoice) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let point = self.point(&mut g, xv, choice, EmbeddingLayer::Pre, true)?;
        let cls = self.classifier.bind(&mut g);
        let logits = cls.forward(&mut g, point)?;
        Ok(g.value(logits).clone())
    }

    pub fn embedding(
        &self,
        x: &Tensor,
        choice: EncoderChoice,
        layer: EmbeddingLayer,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let point = self.point(&mut g, xv, choice, layer, false)?;
        Ok(g.value(point).clone())
    }

    fn point(
        &self,
        g: &mut Graph,
        x: Var,
        choice: EncoderChoice,
        layer: EmbeddingLayer,
        for_classifier: bool,
    ) -> Result<Var> {
        let (enc, head) = match choice {
            EncoderChoice::Source => (&self.encoder_source, &self.head_source),
            EncoderChoice::Target => (&self.encoder_target, &self.head_target),
        };
        let e = enc.bind(g).forward(g, x)?;
        let use_mu = if for_classifier {
            choice == EncoderChoice::Target
        } else {
            layer == EmbeddingLayer::Mu
        };
        if use_mu {
            head.mu.bind(g).forward(g, e)
        } else {
            Ok(e)
        }
    }
}

impl Parameters for VeModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder_source.tensors();
        v.extend(self.head_source.tensors());
        v.extend(self.encoder_target.tensors());
        v.extend(self.head_target.tensors());
        v.extend(self.classifier.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder_source.tensors_mut();
        v.extend(self.head_source.tensors_mut());
        v.extend(self.encoder_target.tensors_mut());
        v.extend(self.head_target.tensors_mut());
        v.extend(self.classifier.tensors_mut());
        v
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut v = self.encoder_source.decay_mask();
        v.extend(self.head_source.decay_mask());
        v.extend(self.encoder_target.decay_mask());
        v.extend(self.head_target.decay_mask());
        v.extend(self.classifier.decay_mask());
        v
    }
}
