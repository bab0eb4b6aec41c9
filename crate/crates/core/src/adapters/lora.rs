//! Low-rank adaptation of frozen linear maps.
//!
//! An adapter on a weight `W` (n x m) holds `A` (r x m) and `B` (n x r) and
//! contributes `(alpha / r) * B A x` on top of `W x`. `B` starts at zero so
//! a fresh adapter leaves the model unchanged.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::lm::params::{normal_matrix, parse_target, Mat, ParamKind, LINEAR_NAMES};
use crate::lm::{ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub target: String,
    /// r x m
    pub a: Mat,
    /// n x r
    pub b: Mat,
    pub alpha: f64,
}

fn check_rank(rank: usize, n: usize, m: usize) -> Result<(), AdapterError> {
    let max = n.min(m);
    if rank == 0 || rank >= max {
        return Err(AdapterError::RankOutOfRange { rank, max_exclusive: max });
    }
    Ok(())
}

impl LoraAdapter {
    /// Fresh adapter: `A ~ N(0, init_std)`, `B = 0`.
    pub fn new(
        target: impl Into<String>,
        out_dim: usize,
        in_dim: usize,
        rank: usize,
        alpha: f64,
        init_std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, AdapterError> {
        check_rank(rank, out_dim, in_dim)?;
        Ok(Self {
            target: target.into(),
            a: normal_matrix(rank, in_dim, init_std, rng),
            b: Array2::zeros((out_dim, rank)),
            alpha,
        })
    }

    pub fn from_parts(target: impl Into<String>, a: Mat, b: Mat, alpha: f64) -> Result<Self, AdapterError> {
        let (rank, m) = a.dim();
        let (n, rb) = b.dim();
        if rb != rank {
            return Err(AdapterError::ShapeMismatch(format!(
                "A is {rank}x{m} but B is {n}x{rb}"
            )));
        }
        check_rank(rank, n, m)?;
        Ok(Self {
            target: target.into(),
            a,
            b,
            alpha,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    /// (out, in) shape of the adapted weight.
    pub fn shape(&self) -> (usize, usize) {
        (self.b.nrows(), self.a.ncols())
    }

    /// The dense update `(alpha / r) B A`.
    pub fn delta(&self) -> Mat {
        self.b.dot(&self.a) * self.scale()
    }

    fn check_weight(&self, w: &Mat) -> Result<(), AdapterError> {
        if w.dim() != self.shape() {
            return Err(AdapterError::ShapeMismatch(format!(
                "adapter for {} expects a {:?} weight, found {:?}",
                self.target,
                self.shape(),
                w.dim()
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// `W x + (alpha / r) B (A x)`; `W` is not modified.
pub fn apply_lora(w: &Mat, ad: &LoraAdapter, x: &Array1<f64>) -> Result<Array1<f64>, AdapterError> {
    ad.check_weight(w)?;
    if x.len() != w.ncols() {
        return Err(AdapterError::ShapeMismatch(format!(
            "input has length {}, weight expects {}",
            x.len(),
            w.ncols()
        )));
    }
    Ok(w.dot(x) + ad.b.dot(&ad.a.dot(x)) * ad.scale())
}

/// `W + (alpha / r) B A`.
pub fn merge_lora(w: &Mat, ad: &LoraAdapter) -> Result<Mat, AdapterError> {
    ad.check_weight(w)?;
    Ok(w + &ad.delta())
}

/// Inverse of [`merge_lora`].
pub fn unmerge_lora(w: &Mat, ad: &LoraAdapter) -> Result<Mat, AdapterError> {
    ad.check_weight(w)?;
    Ok(w - &ad.delta())
}

/// Adapters keyed by target name (e.g. `blocks.0.attn.q`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterSet {
    adapters: BTreeMap<String, LoraAdapter>,
}

impl AdapterSet {
    pub fn insert(&mut self, ad: LoraAdapter) {
        self.adapters.insert(ad.target.clone(), ad);
    }

    pub fn get(&self, target: &str) -> Option<&LoraAdapter> {
        self.adapters.get(target)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.adapters.values()
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.adapters.values().map(LoraAdapter::num_params).sum()
    }

    /// Same targets and shapes with all entries zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let adapters = self
            .adapters
            .iter()
            .map(|(k, ad)| {
                (
                    k.clone(),
                    LoraAdapter {
                        target: ad.target.clone(),
                        a: Array2::zeros(ad.a.raw_dim()),
                        b: Array2::zeros(ad.b.raw_dim()),
                        alpha: ad.alpha,
                    },
                )
            })
            .collect();
        Self { adapters }
    }

    pub(crate) fn get_mut(&mut self, target: &str) -> Option<&mut LoraAdapter> {
        self.adapters.get_mut(target)
    }

    pub fn tensors(&self) -> Vec<(String, ParamKind, &Mat)> {
        let mut out = Vec::with_capacity(2 * self.len());
        for (k, ad) in &self.adapters {
            out.push((format!("adapter.{k}.A"), ParamKind::Adapter, &ad.a));
            out.push((format!("adapter.{k}.B"), ParamKind::Adapter, &ad.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ParamKind, &mut Mat)> {
        let mut out = Vec::with_capacity(2 * self.len());
        for (k, ad) in self.adapters.iter_mut() {
            out.push((format!("adapter.{k}.A"), ParamKind::Adapter, &mut ad.a));
            out.push((format!("adapter.{k}.B"), ParamKind::Adapter, &mut ad.b));
        }
        out
    }

    /// Folds every adapter into its base weight and empties the set.
    pub fn merge_into(&mut self, params: &mut ModelParams) -> Result<(), AdapterError> {
        for (target, ad) in std::mem::take(&mut self.adapters) {
            let lin = params
                .linear_mut(&target)
                .ok_or_else(|| AdapterError::UnknownTarget(target.clone()))?;
            lin.weight = merge_lora(&lin.weight, &ad)?;
        }
        Ok(())
    }
}

/// One adapted matrix with its rank and scaling numerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraTarget {
    pub target: String,
    pub rank: usize,
    pub alpha: f64,
}

/// Which matrices get adapters and at what rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    /// Scaling numerator; defaults to `2 * rank`.
    pub alpha: Option<f64>,
    /// Short names (`attn.q`) expand to every layer; full names
    /// (`blocks.1.attn.q`) select a single layer.
    pub targets: Vec<String>,
    pub init_std: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: None,
            targets: vec!["attn.q".into(), "attn.v".into()],
            init_std: 0.02,
        }
    }
}

impl LoraConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(2.0 * self.rank as f64)
    }

    pub fn spec(&self, n_layers: usize) -> Vec<LoraTarget> {
        let mut out = Vec::new();
        for t in &self.targets {
            let names: Vec<String> = if t.starts_with("blocks.") {
                vec![t.clone()]
            } else {
                (0..n_layers).map(|l| format!("blocks.{l}.{t}")).collect()
            };
            for target in names {
                out.push(LoraTarget {
                    target,
                    rank: self.rank,
                    alpha: self.alpha(),
                });
            }
        }
        out.sort_by(|a, b| a.target.cmp(&b.target));
        out.dedup_by(|a, b| a.target == b.target);
        out
    }

    /// Creates fresh adapters for every target.
    pub fn attach(&self, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<AdapterSet, AdapterError> {
        let mut set = AdapterSet::default();
        for t in self.spec(cfg.n_layers) {
            let (n, m) = target_shape(cfg, &t.target).ok_or_else(|| AdapterError::UnknownTarget(t.target.clone()))?;
            set.insert(LoraAdapter::new(t.target, n, m, t.rank, t.alpha, self.init_std, rng)?);
        }
        Ok(set)
    }
}

/// (out, in) shape of a named block linear map under `cfg`.
pub fn target_shape(cfg: &ModelConfig, target: &str) -> Option<(usize, usize)> {
    let (layer, name) = parse_target(target)?;
    if layer >= cfg.n_layers || !LINEAR_NAMES.contains(&name) {
        return None;
    }
    let d = cfg.d_model;
    Some(match name {
        "ffn.up" => (cfg.d_ff, d),
        "ffn.down" => (d, cfg.d_ff),
        _ => (d, d),
    })
}

/// Number of trainable adapter entries: sum of `r * (m + n)` over targets.
pub fn trainable_param_count(cfg: &ModelConfig, spec: &[LoraTarget]) -> Result<usize, AdapterError> {
    spec.iter().try_fold(0, |acc, t| {
        let (n, m) = target_shape(cfg, &t.target).ok_or_else(|| AdapterError::UnknownTarget(t.target.clone()))?;
        check_rank(t.rank, n, m)?;
        Ok(acc + t.rank * (m + n))
    })
}
