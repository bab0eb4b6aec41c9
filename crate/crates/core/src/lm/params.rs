use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{LmError, ModelConfig};

pub type Mat = Array2<f64>;

/// How a tensor is treated by weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
    Norm,
    Adapter,
    SoftPrompt,
}

pub(crate) fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Affine map `y = W x + b` with `W` stored as out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Mat,
    pub bias: Mat,
}

impl Linear {
    fn init(out_dim: usize, in_dim: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: normal_matrix(out_dim, in_dim, std, rng),
            bias: Array2::zeros((1, out_dim)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Mat,
    pub bias: Mat,
}

impl LayerNorm {
    fn init(dim: usize) -> Self {
        Self {
            gain: Array2::ones((1, dim)),
            bias: Array2::zeros((1, dim)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            gain: Array2::zeros(self.gain.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }
}

/// One pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    /// Untied output projection (vocab x d_model); `None` means tied to `tok_emb`.
    pub out_proj: Option<Mat>,
}

/// Short names of the linear maps inside each block.
pub const LINEAR_NAMES: [&str; 6] = ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.down"];

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let std = cfg.init_std;
        let tok_emb = normal_matrix(cfg.vocab_size, d, std, rng);
        let pos_emb = normal_matrix(cfg.max_len, d, std, rng);
        let blocks = (0..cfg.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::init(d),
                q: Linear::init(d, d, std, rng),
                k: Linear::init(d, d, std, rng),
                v: Linear::init(d, d, std, rng),
                o: Linear::init(d, d, std, rng),
                ln2: LayerNorm::init(d),
                up: Linear::init(cfg.d_ff, d, std, rng),
                down: Linear::init(d, cfg.d_ff, std, rng),
            })
            .collect();
        let out_proj = (!cfg.tied_output).then(|| normal_matrix(cfg.vocab_size, d, std, rng));
        Self {
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::init(d),
            out_proj,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tok_emb: Array2::zeros(self.tok_emb.raw_dim()),
            pos_emb: Array2::zeros(self.pos_emb.raw_dim()),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: b.ln1.zeros_like(),
                    q: b.q.zeros_like(),
                    k: b.k.zeros_like(),
                    v: b.v.zeros_like(),
                    o: b.o.zeros_like(),
                    ln2: b.ln2.zeros_like(),
                    up: b.up.zeros_like(),
                    down: b.down.zeros_like(),
                })
                .collect(),
            ln_f: self.ln_f.zeros_like(),
            out_proj: self.out_proj.as_ref().map(|m| Array2::zeros(m.raw_dim())),
        }
    }

    /// Every tensor with its canonical name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ParamKind, &Mat)> {
        let mut out = vec![
            ("tok_emb".to_string(), ParamKind::Embedding, &self.tok_emb),
            ("pos_emb".to_string(), ParamKind::Embedding, &self.pos_emb),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{l}.ln1.gain"), ParamKind::Norm, &b.ln1.gain));
            out.push((format!("blocks.{l}.ln1.bias"), ParamKind::Norm, &b.ln1.bias));
            for (name, lin) in LINEAR_NAMES.iter().zip([&b.q, &b.k, &b.v, &b.o, &b.up, &b.down]) {
                out.push((format!("blocks.{l}.{name}.weight"), ParamKind::Weight, &lin.weight));
                out.push((format!("blocks.{l}.{name}.bias"), ParamKind::Bias, &lin.bias));
            }
            out.push((format!("blocks.{l}.ln2.gain"), ParamKind::Norm, &b.ln2.gain));
            out.push((format!("blocks.{l}.ln2.bias"), ParamKind::Norm, &b.ln2.bias));
        }
        out.push(("ln_f.gain".to_string(), ParamKind::Norm, &self.ln_f.gain));
        out.push(("ln_f.bias".to_string(), ParamKind::Norm, &self.ln_f.bias));
        if let Some(w) = &self.out_proj {
            out.push(("out_proj".to_string(), ParamKind::Weight, w));
        }
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ParamKind, &mut Mat)> {
        let Self {
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            out_proj,
        } = self;
        let mut out = vec![
            ("tok_emb".to_string(), ParamKind::Embedding, tok_emb),
            ("pos_emb".to_string(), ParamKind::Embedding, pos_emb),
        ];
        for (l, b) in blocks.iter_mut().enumerate() {
            let Block {
                ln1,
                q,
                k,
                v,
                o,
                ln2,
                up,
                down,
            } = b;
            out.push((format!("blocks.{l}.ln1.gain"), ParamKind::Norm, &mut ln1.gain));
            out.push((format!("blocks.{l}.ln1.bias"), ParamKind::Norm, &mut ln1.bias));
            for (name, lin) in LINEAR_NAMES.iter().zip([q, k, v, o, up, down]) {
                out.push((format!("blocks.{l}.{name}.weight"), ParamKind::Weight, &mut lin.weight));
                out.push((format!("blocks.{l}.{name}.bias"), ParamKind::Bias, &mut lin.bias));
            }
            out.push((format!("blocks.{l}.ln2.gain"), ParamKind::Norm, &mut ln2.gain));
            out.push((format!("blocks.{l}.ln2.bias"), ParamKind::Norm, &mut ln2.bias));
        }
        out.push(("ln_f.gain".to_string(), ParamKind::Norm, &mut ln_f.gain));
        out.push(("ln_f.bias".to_string(), ParamKind::Norm, &mut ln_f.bias));
        if let Some(w) = out_proj {
            out.push(("out_proj".to_string(), ParamKind::Weight, w));
        }
        out
    }

    /// Looks up a block's linear map by target name, e.g. `blocks.0.attn.q`.
    pub fn linear(&self, target: &str) -> Option<&Linear> {
        let (layer, name) = parse_target(target)?;
        let b = self.blocks.get(layer)?;
        Some(match name {
            "attn.q" => &b.q,
            "attn.k" => &b.k,
            "attn.v" => &b.v,
            "attn.o" => &b.o,
            "ffn.up" => &b.up,
            "ffn.down" => &b.down,
            _ => return None,
        })
    }

    pub fn linear_mut(&mut self, target: &str) -> Option<&mut Linear> {
        let (layer, name) = parse_target(target)?;
        let b = self.blocks.get_mut(layer)?;
        Some(match name {
            "attn.q" => &mut b.q,
            "attn.k" => &mut b.k,
            "attn.v" => &mut b.v,
            "attn.o" => &mut b.o,
            "ffn.up" => &mut b.up,
            "ffn.down" => &mut b.down,
            _ => return None,
        })
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, m)| m.len()).sum()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), LmError> {
        let d = cfg.d_model;
        let check = |name: &str, m: &Mat, shape: (usize, usize)| {
            if m.dim() != shape {
                return Err(LmError::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    m.dim()
                )));
            }
            Ok(())
        };
        check("tok_emb", &self.tok_emb, (cfg.vocab_size, d))?;
        check("pos_emb", &self.pos_emb, (cfg.max_len, d))?;
        if self.blocks.len() != cfg.n_layers {
            return Err(LmError::ShapeMismatch(format!(
                "expected {} blocks, found {}",
                cfg.n_layers,
                self.blocks.len()
            )));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, ln) in [("ln1", &b.ln1), ("ln2", &b.ln2)] {
                check(&format!("blocks.{l}.{name}.gain"), &ln.gain, (1, d))?;
                check(&format!("blocks.{l}.{name}.bias"), &ln.bias, (1, d))?;
            }
            let shapes = [(d, d), (d, d), (d, d), (d, d), (cfg.d_ff, d), (d, cfg.d_ff)];
            for ((name, lin), shape) in LINEAR_NAMES
                .iter()
                .zip([&b.q, &b.k, &b.v, &b.o, &b.up, &b.down])
                .zip(shapes)
            {
                check(&format!("blocks.{l}.{name}.weight"), &lin.weight, shape)?;
                check(&format!("blocks.{l}.{name}.bias"), &lin.bias, (1, shape.0))?;
            }
        }
        check("ln_f.gain", &self.ln_f.gain, (1, d))?;
        check("ln_f.bias", &self.ln_f.bias, (1, d))?;
        match (&self.out_proj, cfg.tied_output) {
            (None, true) => {}
            (Some(w), false) => check("out_proj", w, (cfg.vocab_size, d))?,
            _ => return Err(LmError::ShapeMismatch("output projection tying differs from config".into())),
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, m)| m.iter().all(|x| x.is_finite()))
    }
}

pub(crate) fn parse_target(target: &str) -> Option<(usize, &str)> {
    let rest = target.strip_prefix("blocks.")?;
    let (layer, name) = rest.split_once('.')?;
    Some((layer.parse().ok()?, name))
}
