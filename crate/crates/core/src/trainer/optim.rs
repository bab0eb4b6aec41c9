use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::lm::params::Mat;
use crate::lm::{GradMask, Gradients, LanguageModel, ParamKind};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Which tensors receive decoupled weight decay. Biases never do.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayPolicy {
    /// Embeddings, weights, adapters and soft prompts; LayerNorm excluded.
    #[default]
    Standard,
    /// As `Standard`, plus LayerNorm gains and biases.
    IncludeNorm,
}

impl DecayPolicy {
    pub fn decays(self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::Bias => false,
            ParamKind::Norm => self == Self::IncludeNorm,
            ParamKind::Embedding | ParamKind::Weight | ParamKind::Adapter | ParamKind::SoftPrompt => true,
        }
    }
}

/// AdamW with bias correction and decoupled decay scaled by the step size.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    pub policy: DecayPolicy,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(weight_decay: f64, policy: DecayPolicy) -> Self {
        Self {
            weight_decay,
            policy,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates only the groups in `mask`; everything else is untouched.
    pub fn step(&mut self, lm: &mut LanguageModel, grads: &Gradients, mask: GradMask, lr: f64) {
        let g = grads.tensors(mask);
        let params = lm.tensors_mut(mask);
        assert_eq!(g.len(), params.len(), "gradient layout matches parameters");
        if self.m.is_empty() {
            self.m = g.iter().map(|(_, t)| Mat::zeros(t.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, ((_, kind, w), (_, grad))) in params.into_iter().zip(g).enumerate() {
            let decay = if self.policy.decays(kind) { lr * self.weight_decay } else { 0.0 };
            Zip::from(w)
                .and(grad)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|w, &g, m, v| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + EPSILON);
                    *w -= lr * update + decay * *w;
                });
        }
    }
}
