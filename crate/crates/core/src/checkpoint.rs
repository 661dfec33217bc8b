//! Binary model checkpoints.
//!
//! ```text
//! magic "VEADCKPT" | version u32 | kind u8 (0 classifier, 1 ve)
//! input_dim u64 | n_hidden u64 | hidden u64... | embed_dim u64 | classes u64
//! [ve only] alpha f64 | beta f64 | gamma f64 | kl_sign f64 | samples u64
//! tensor_count u64 | per tensor: numel u64, numel × f64
//! ```
//!
//! All integers and reals are little-endian; tensors follow parameter
//! declaration order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, ClassifierModel, Model};
use crate::nn::{Linear, Mlp, Parameters};
use crate::ve::{GaussianHead, VeHyper, VeModel};

const MAGIC: &[u8; 8] = b"VEADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(model: &Model) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(match model {
        Model::Classifier(_) => 0,
        Model::Ve(_) => 1,
    });
    put_u64(&mut out, arch.input_dim as u64);
    put_u64(&mut out, arch.hidden_dims.len() as u64);
    for &h in &arch.hidden_dims {
        put_u64(&mut out, h as u64);
    }
    put_u64(&mut out, arch.embed_dim as u64);
    put_u64(&mut out, arch.classes as u64);
    let tensors = match model {
        Model::Classifier(m) => m.tensors(),
        Model::Ve(m) => {
            let h = &m.hyper;
            for v in [h.alpha, h.beta, h.gamma, h.kl_sign] {
                put_f64(&mut out, v);
            }
            put_u64(&mut out, h.samples as u64);
            m.tensors()
        }
    };
    put_u64(&mut out, tensors.len() as u64);
    for t in tensors {
        put_u64(&mut out, t.numel() as u64);
        for &v in t.data() {
            put_f64(&mut out, v);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: self.pos,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn size(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v < 1 << 32)
            .ok_or_else(|| self.fail(format!("implausible {what} {v}")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            detail: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let kind = r.take(1)?[0];
    let input_dim = r.size("input_dim")?;
    let n_hidden = r.size("hidden layer count")?;
    let hidden_dims = (0..n_hidden)
        .map(|_| r.size("hidden width"))
        .collect::<Result<Vec<_>>>()?;
    let embed_dim = r.size("embed_dim")?;
    let classes = r.size("classes")?;
    let arch = ArchConfig {
        input_dim,
        hidden_dims,
        embed_dim,
        classes,
    };
    arch.validate().map_err(|e| r.fail(e.to_string()))?;
    let dims = arch.encoder_dims();
    let mut model = match kind {
        0 => Model::Classifier(ClassifierModel {
            encoder: Mlp::zeros(&dims)?,
            classifier: Linear::zeros(embed_dim, classes),
        }),
        1 => {
            let hyper = VeHyper {
                alpha: r.f64()?,
                beta: r.f64()?,
                gamma: r.f64()?,
                kl_sign: r.f64()?,
                samples: r.size("samples")?,
            };
            hyper.validate().map_err(|e| r.fail(e.to_string()))?;
            Model::Ve(VeModel {
                encoder_source: Mlp::zeros(&dims)?,
                head_source: GaussianHead::zeros(embed_dim),
                encoder_target: Mlp::zeros(&dims)?,
                head_target: GaussianHead::zeros(embed_dim),
                classifier: Linear::zeros(embed_dim, classes),
                hyper,
            })
        }
        k => return Err(r.fail(format!("unknown model kind {k}"))),
    };
    let count = r.size("tensor count")?;
    let tensors = match &mut model {
        Model::Classifier(m) => m.tensors_mut(),
        Model::Ve(m) => m.tensors_mut(),
    };
    if count != tensors.len() {
        return Err(r.fail(format!(
            "expected {} tensors for this architecture, found {count}",
            tensors.len()
        )));
    }
    for t in tensors {
        let numel = r.size("tensor size")?;
        if numel != t.numel() {
            return Err(r.fail(format!("tensor size {numel}, expected {}", t.numel())));
        }
        for v in t.data_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode(&std::fs::read(path)?)
}
