use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LanguageModel, ModelConfig};
use crate::adapters::{AdapterSet, LoraAdapter, LoraTarget};
use crate::archive::{Archive, ArchiveError};
use crate::prompting::SoftPrompt;

pub const MODEL_KIND: &str = "model";

#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    config: ModelConfig,
    adapters: Vec<LoraTarget>,
    soft_prompt_len: Option<usize>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Packs config, every tensor and a caller-provided JSON record.
pub fn model_to_archive(lm: &LanguageModel, extra: serde_json::Value) -> Archive {
    let record = ModelRecord {
        config: lm.config.clone(),
        adapters: lm
            .adapters
            .iter()
            .map(|ad| LoraTarget {
                target: ad.target.clone(),
                rank: ad.rank(),
                alpha: ad.alpha,
            })
            .collect(),
        soft_prompt_len: lm.soft_prompt.as_ref().map(SoftPrompt::len),
        extra,
    };
    let mut archive = Archive::new(MODEL_KIND, serde_json::to_value(record).expect("serializable record"));
    for (name, _, m) in lm.tensors() {
        archive.push(name, m.clone());
    }
    archive
}

pub fn model_from_archive(archive: &Archive) -> Result<(LanguageModel, serde_json::Value), ArchiveError> {
    archive.expect_kind(MODEL_KIND)?;
    let record: ModelRecord = serde_json::from_value(archive.metadata.clone())?;
    let mut lm = LanguageModel::init(record.config, 0).map_err(|e| ArchiveError::Corrupt(e.to_string()))?;
    for (name, _, m) in lm.params.tensors_mut() {
        let stored = archive.tensor(&name)?;
        if stored.dim() != m.dim() {
            return Err(ArchiveError::Corrupt(format!("tensor {name} has shape {:?}", stored.dim())));
        }
        m.assign(stored);
    }
    let mut adapters = AdapterSet::default();
    for t in record.adapters {
        let a = archive.tensor(&format!("adapter.{}.A", t.target))?.clone();
        let b = archive.tensor(&format!("adapter.{}.B", t.target))?.clone();
        adapters.insert(LoraAdapter::from_parts(t.target, a, b, t.alpha).map_err(|e| ArchiveError::Corrupt(e.to_string()))?);
    }
    lm.adapters = adapters;
    if record.soft_prompt_len.is_some() {
        let vectors = archive.tensor("soft_prompt")?.clone();
        lm.soft_prompt = Some(SoftPrompt::new(vectors).map_err(|e| ArchiveError::Corrupt(e.to_string()))?);
    }
    lm.validate().map_err(|e| ArchiveError::Corrupt(e.to_string()))?;
    Ok((lm, record.extra))
}

pub fn save_model(lm: &LanguageModel, extra: serde_json::Value, path: &Path) -> Result<(), ArchiveError> {
    model_to_archive(lm, extra).save(path)
}

pub fn load_model(path: &Path) -> Result<(LanguageModel, serde_json::Value), ArchiveError> {
    model_from_archive(&Archive::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::LoraConfig;
    use crate::lm::ModelSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reload_gives_identical_logits() {
        let spec = ModelSpec {
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            max_len: 40,
            tied_output: false,
            ..Default::default()
        };
        let mut lm = LanguageModel::init(spec.with_vocab(15), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        lm.adapters = LoraConfig {
            rank: 2,
            ..Default::default()
        }
        .attach(&lm.config, &mut rng)
        .unwrap();
        for (_, _, m) in lm.adapters.tensors_mut() {
            m.mapv_inplace(|x| x + 0.01);
        }
        lm.soft_prompt = Some(SoftPrompt::random(3, 16, &mut rng).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&lm, serde_json::json!({"note": "x"}), &path).unwrap();
        let (back, extra) = load_model(&path).unwrap();
        assert_eq!(extra["note"], "x");
        assert_eq!(back, lm);
        let ids = [5, 6, 7, 8];
        assert_eq!(back.forward(&ids).unwrap(), lm.forward(&ids).unwrap());
    }
}
