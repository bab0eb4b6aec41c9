//! Forward pass and exact reverse-mode gradients for the micro transformer.
//!
//! Architecture: token + learned position embeddings, `n_layers` pre-norm
//! blocks (multi-head attention, GELU feed-forward), a final LayerNorm and an
//! output projection tied to the token embedding unless configured otherwise.
//! An optional soft prompt occupies the first rows of the embedded sequence.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Block, LayerNorm, Linear, Mat, ParamKind};
use super::{AttentionMode, LmError, ModelConfig, ModelParams};
use crate::adapters::{AdapterSet, LoraAdapter};
use crate::prompting::{prepend_soft_prompt, SoftPrompt};

const LN_EPS: f64 = 1e-5;

/// Base model plus whatever is attached to it for adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adapters: AdapterSet,
    pub soft_prompt: Option<SoftPrompt>,
}

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradMask {
    pub base: bool,
    pub adapters: bool,
    pub soft_prompt: bool,
}

impl GradMask {
    pub const ALL: Self = Self {
        base: true,
        adapters: true,
        soft_prompt: true,
    };
    pub const BASE: Self = Self {
        base: true,
        adapters: false,
        soft_prompt: false,
    };
    pub const ADAPTERS: Self = Self {
        base: false,
        adapters: true,
        soft_prompt: false,
    };
    pub const SOFT_PROMPT: Self = Self {
        base: false,
        adapters: false,
        soft_prompt: true,
    };
}

/// Gradient buffers shaped like the model's parameter groups. Frozen groups
/// stay exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ModelParams,
    pub adapters: AdapterSet,
    pub soft_prompt: Option<Mat>,
}

impl Gradients {
    pub fn zeros_for(lm: &LanguageModel) -> Self {
        Self {
            params: lm.params.zeros_like(),
            adapters: lm.adapters.zeros_like(),
            soft_prompt: lm.soft_prompt.as_ref().map(|sp| Array2::zeros(sp.vectors.raw_dim())),
        }
    }

    /// Tensors of the groups selected by `mask`, in the same order as
    /// [`LanguageModel::tensors_mut`].
    pub fn tensors(&self, mask: GradMask) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        if mask.base {
            out.extend(self.params.tensors().into_iter().map(|(n, _, m)| (n, m)));
        }
        if mask.adapters {
            out.extend(self.adapters.tensors().into_iter().map(|(n, _, m)| (n, m)));
        }
        if mask.soft_prompt {
            if let Some(m) = &self.soft_prompt {
                out.push(("soft_prompt".to_string(), m));
            }
        }
        out
    }

    pub fn all_tensors(&self) -> Vec<(String, &Mat)> {
        self.tensors(GradMask::ALL)
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, _, m) in self.params.tensors_mut() {
            *m *= factor;
        }
        for (_, _, m) in self.adapters.tensors_mut() {
            *m *= factor;
        }
        if let Some(m) = &mut self.soft_prompt {
            *m *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((_, _, a), (_, _, b)) in self.params.tensors_mut().into_iter().zip(other.params.tensors()) {
            *a += b;
        }
        for ((_, _, a), (_, _, b)) in self.adapters.tensors_mut().into_iter().zip(other.adapters.tensors()) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.soft_prompt, &other.soft_prompt) {
            *a += b;
        }
    }
}

/// Logits for every row of the embedded sequence. Rows `0..offset` belong to
/// the soft prompt; token `i` is row `offset + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub values: Mat,
    pub offset: usize,
}

impl Logits {
    pub fn token_row(&self, pos: usize) -> ArrayView1<'_, f64> {
        self.values.row(self.offset + pos)
    }

    /// Row that predicts token `pos` under a causal model, if any.
    pub fn predicting_row(&self, pos: usize) -> Option<ArrayView1<'_, f64>> {
        (self.offset + pos).checked_sub(1).map(|r| self.values.row(r))
    }
}

pub fn log_softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.mapv(|x| x - lse)
}

struct LnCache {
    xhat: Mat,
    inv_std: Array1<f64>,
}

struct BlockCache {
    ln1: LnCache,
    h1: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    qa: Option<Mat>,
    ka: Option<Mat>,
    va: Option<Mat>,
    probs: Vec<Mat>,
    concat: Mat,
    oa: Option<Mat>,
    ln2: LnCache,
    h2: Mat,
    upa: Option<Mat>,
    pre_act: Mat,
    act: Mat,
    downa: Option<Mat>,
}

pub(crate) struct ForwardCache {
    ids: Vec<usize>,
    offset: usize,
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
    hf: Mat,
}

fn layer_norm(x: &Mat, ln: &LayerNorm) -> (Mat, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row *= *s;
    }
    let y = &xhat * &ln.gain + &ln.bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &Mat, cache: &LnCache, ln: &LayerNorm, grad: Option<&mut LayerNorm>) -> Mat {
    if let Some(g) = grad {
        g.gain += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * &ln.gain;
    for ((mut row, xhat), s) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.inv_std.iter()) {
        let mean_d = row.sum() / d;
        let mean_dx = row.dot(&xhat) / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &xh| {
            *g = s * (*g - mean_d - xh * mean_dx);
        });
    }
    dx
}

fn linear(x: &Mat, lin: &Linear, ad: Option<&LoraAdapter>) -> (Mat, Option<Mat>) {
    let mut y = x.dot(&lin.weight.t()) + &lin.bias;
    let xa = ad.map(|ad| {
        let xa = x.dot(&ad.a.t());
        general_mat_mul(ad.scale(), &xa, &ad.b.t(), 1.0, &mut y);
        xa
    });
    (y, xa)
}

fn linear_backward(
    dy: &Mat,
    x: &Mat,
    xa: Option<&Mat>,
    lin: &Linear,
    ad: Option<&LoraAdapter>,
    grad: Option<&mut Linear>,
    ad_grad: Option<&mut LoraAdapter>,
) -> Mat {
    let mut dx = dy.dot(&lin.weight);
    if let Some(g) = grad {
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut g.weight);
        g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if let Some(ad) = ad {
        let s = ad.scale();
        let dyb = dy.dot(&ad.b);
        general_mat_mul(s, &dyb, &ad.a, 1.0, &mut dx);
        if let (Some(g), Some(xa)) = (ad_grad, xa) {
            general_mat_mul(s, &dy.t(), xa, 1.0, &mut g.b);
            general_mat_mul(s, &dyb.t(), x, 1.0, &mut g.a);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

fn softmax_rows_inplace(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl LanguageModel {
    /// Seeded fresh model with no adapters and no soft prompt.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, LmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(Self {
            config,
            params,
            adapters: AdapterSet::default(),
            soft_prompt: None,
        })
    }

    pub fn prefix_len(&self) -> usize {
        self.soft_prompt.as_ref().map_or(0, SoftPrompt::len)
    }

    pub fn validate(&self) -> Result<(), LmError> {
        self.config.validate()?;
        self.params.validate(&self.config)?;
        for ad in self.adapters.iter() {
            let lin = self
                .params
                .linear(&ad.target)
                .ok_or_else(|| LmError::ShapeMismatch(format!("unknown adapter target {}", ad.target)))?;
            if lin.weight.dim() != ad.shape() {
                return Err(LmError::ShapeMismatch(format!("adapter {} shape", ad.target)));
            }
        }
        if let Some(sp) = &self.soft_prompt {
            if sp.vectors.ncols() != self.config.d_model {
                return Err(LmError::ShapeMismatch("soft prompt width differs from d_model".into()));
            }
        }
        Ok(())
    }

    /// Every parameter tensor of the groups in `mask`, names matching
    /// [`Gradients::tensors`].
    pub fn tensors_mut(&mut self, mask: GradMask) -> Vec<(String, ParamKind, &mut Mat)> {
        let mut out = Vec::new();
        if mask.base {
            out.extend(self.params.tensors_mut());
        }
        if mask.adapters {
            out.extend(self.adapters.tensors_mut());
        }
        if mask.soft_prompt {
            if let Some(sp) = &mut self.soft_prompt {
                out.push(("soft_prompt".to_string(), ParamKind::SoftPrompt, &mut sp.vectors));
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<(String, ParamKind, &Mat)> {
        let mut out = self.params.tensors();
        out.extend(self.adapters.tensors());
        if let Some(sp) = &self.soft_prompt {
            out.push(("soft_prompt".to_string(), ParamKind::SoftPrompt, &sp.vectors));
        }
        out
    }

    /// Folds all adapters into the base weights.
    pub fn merge_adapters(&mut self) -> Result<(), LmError> {
        self.adapters
            .merge_into(&mut self.params)
            .map_err(|e| LmError::ShapeMismatch(e.to_string()))
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), LmError> {
        let total = ids.len() + self.prefix_len();
        if total > self.config.max_len {
            return Err(LmError::SequenceTooLong {
                len: total,
                max_len: self.config.max_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(LmError::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn adapter(&self, layer: usize, name: &str) -> Option<&LoraAdapter> {
        if self.adapters.is_empty() {
            return None;
        }
        self.adapters.get(&format!("blocks.{layer}.{name}"))
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Logits, LmError> {
        self.forward_cached(ids).map(|(logits, _)| logits)
    }

    pub(crate) fn forward_cached(&self, ids: &[usize]) -> Result<(Logits, ForwardCache), LmError> {
        self.check_ids(ids)?;
        let cfg = &self.config;
        let p = &self.params;
        let d = cfg.d_model;

        let mut tok = Array2::zeros((ids.len(), d));
        for (mut row, &id) in tok.rows_mut().into_iter().zip(ids) {
            row.assign(&p.tok_emb.row(id));
        }
        let mut x = match &self.soft_prompt {
            Some(sp) => prepend_soft_prompt(&tok, sp, cfg.max_len).map_err(|e| LmError::ShapeMismatch(e.to_string()))?,
            None => tok,
        };
        let total = x.nrows();
        x += &p.pos_emb.slice(s![..total, ..]);

        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for (l, b) in p.blocks.iter().enumerate() {
            let (out, cache) = self.block_forward(l, b, &x);
            x = out;
            blocks.push(cache);
        }
        let (hf, ln_f) = layer_norm(&x, &p.ln_f);
        let out_w = p.out_proj.as_ref().unwrap_or(&p.tok_emb);
        let values = hf.dot(&out_w.t());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LmError::NonFiniteLogits);
        }
        let offset = self.prefix_len();
        Ok((
            Logits { values, offset },
            ForwardCache {
                ids: ids.to_vec(),
                offset,
                blocks,
                ln_f,
                hf,
            },
        ))
    }

    fn block_forward(&self, l: usize, b: &Block, x: &Mat) -> (Mat, BlockCache) {
        let cfg = &self.config;
        let t = x.nrows();
        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        let (h1, ln1) = layer_norm(x, &b.ln1);
        let (q, qa) = linear(&h1, &b.q, self.adapter(l, "attn.q"));
        let (k, ka) = linear(&h1, &b.k, self.adapter(l, "attn.k"));
        let (v, va) = linear(&h1, &b.v, self.adapter(l, "attn.v"));

        let mut concat = Array2::zeros((t, cfg.d_model));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t()) * inv_sqrt;
            if cfg.mode == AttentionMode::Causal {
                for i in 0..t {
                    scores.slice_mut(s![i, i + 1..]).fill(f64::NEG_INFINITY);
                }
            }
            softmax_rows_inplace(&mut scores);
            concat.slice_mut(cols).assign(&scores.dot(&vh));
            probs.push(scores);
        }
        let (attn_out, oa) = linear(&concat, &b.o, self.adapter(l, "attn.o"));
        let x_mid = x + &attn_out;

        let (h2, ln2) = layer_norm(&x_mid, &b.ln2);
        let (pre_act, upa) = linear(&h2, &b.up, self.adapter(l, "ffn.up"));
        let act = pre_act.mapv(gelu);
        let (ffn_out, downa) = linear(&act, &b.down, self.adapter(l, "ffn.down"));
        let out = x_mid + &ffn_out;

        (
            out,
            BlockCache {
                ln1,
                h1,
                q,
                k,
                v,
                qa,
                ka,
                va,
                probs,
                concat,
                oa,
                ln2,
                h2,
                upa,
                pre_act,
                act,
                downa,
            },
        )
    }

    /// Accumulates into `grads` the gradient of `sum(dlogits * logits)`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &Mat, grads: &mut Gradients, mask: GradMask) {
        let p = &self.params;
        let base = mask.base;

        let mut dx = match &p.out_proj {
            Some(w) => {
                if base {
                    let gw = grads.params.out_proj.as_mut().expect("untied gradient buffer");
                    general_mat_mul(1.0, &dlogits.t(), &cache.hf, 1.0, gw);
                }
                dlogits.dot(w)
            }
            None => {
                if base {
                    general_mat_mul(1.0, &dlogits.t(), &cache.hf, 1.0, &mut grads.params.tok_emb);
                }
                dlogits.dot(&p.tok_emb)
            }
        };
        dx = layer_norm_backward(&dx, &cache.ln_f, &p.ln_f, base.then_some(&mut grads.params.ln_f));

        for (l, (b, bc)) in p.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            dx = self.block_backward(l, b, bc, dx, grads, mask);
        }

        if base {
            let total = dx.nrows();
            grads.params.pos_emb.slice_mut(s![..total, ..]).zip_mut_with(&dx, |g, d| *g += d);
            for (i, &id) in cache.ids.iter().enumerate() {
                let mut row = grads.params.tok_emb.row_mut(id);
                row += &dx.row(cache.offset + i);
            }
        }
        if mask.soft_prompt {
            if let Some(g) = &mut grads.soft_prompt {
                *g += &dx.slice(s![..cache.offset, ..]);
            }
        }
    }

    fn block_backward(
        &self,
        l: usize,
        b: &Block,
        c: &BlockCache,
        dx_out: Mat,
        grads: &mut Gradients,
        mask: GradMask,
    ) -> Mat {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let base = mask.base;
        let t = dx_out.nrows();

        macro_rules! lin_bwd {
            ($dy:expr, $x:expr, $xa:expr, $field:ident, $name:literal) => {{
                let ad = self.adapter(l, $name);
                let gb = &mut grads.params.blocks[l];
                let g_lin = if base { Some(&mut gb.$field) } else { None };
                let g_ad = if mask.adapters && ad.is_some() {
                    grads.adapters.get_mut(&format!("blocks.{l}.{}", $name))
                } else {
                    None
                };
                linear_backward($dy, $x, $xa.as_ref(), &b.$field, ad, g_lin, g_ad)
            }};
        }

        // Feed-forward sublayer.
        let d_act = lin_bwd!(&dx_out, &c.act, c.downa, down, "ffn.down");
        let mut d_pre = d_act;
        Zip::from(&mut d_pre).and(&c.pre_act).for_each(|g, &u| *g *= gelu_grad(u));
        let dh2 = lin_bwd!(&d_pre, &c.h2, c.upa, up, "ffn.up");
        let mut dx_mid = layer_norm_backward(&dh2, &c.ln2, &b.ln2, base.then_some(&mut grads.params.blocks[l].ln2));
        dx_mid += &dx_out;

        // Attention sublayer.
        let d_concat = lin_bwd!(&dx_mid, &c.concat, c.oa, o, "attn.o");
        let mut dq = Array2::zeros((t, cfg.d_model));
        let mut dk = Array2::zeros((t, cfg.d_model));
        let mut dv = Array2::zeros((t, cfg.d_model));
        for (h, probs) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let doh = d_concat.slice(cols);
            let dp = doh.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&probs.t().dot(&doh));
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
                let inner = drow.dot(&prow);
                Zip::from(&mut drow).and(&prow).for_each(|g, &pv| *g = pv * (*g - inner) * inv_sqrt);
            }
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let mut dh1 = lin_bwd!(&dq, &c.h1, c.qa, q, "attn.q");
        dh1 += &lin_bwd!(&dk, &c.h1, c.ka, k, "attn.k");
        dh1 += &lin_bwd!(&dv, &c.h1, c.va, v, "attn.v");
        let mut dx_in = layer_norm_backward(&dh1, &c.ln1, &b.ln1, base.then_some(&mut grads.params.blocks[l].ln1));
        dx_in += &dx_mid;
        dx_in
    }
}
