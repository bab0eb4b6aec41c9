use std::path::Path;

use super::{AdapterSet, LoraAdapter, LoraTarget};
use crate::archive::{Archive, ArchiveError};

pub const ADAPTER_KIND: &str = "lora-adapters";

/// Adapter-only archive: `(target, r, alpha)` records plus `A`/`B` tensors.
pub fn adapters_to_archive(set: &AdapterSet) -> Archive {
    let records: Vec<LoraTarget> = set
        .iter()
        .map(|ad| LoraTarget {
            target: ad.target.clone(),
            rank: ad.rank(),
            alpha: ad.alpha,
        })
        .collect();
    let mut archive = Archive::new(ADAPTER_KIND, serde_json::json!({ "adapters": records }));
    for (name, _, m) in set.tensors() {
        archive.push(name, m.clone());
    }
    archive
}

pub fn adapters_from_archive(archive: &Archive) -> Result<AdapterSet, ArchiveError> {
    archive.expect_kind(ADAPTER_KIND)?;
    let records: Vec<LoraTarget> = serde_json::from_value(archive.metadata["adapters"].clone())?;
    let mut set = AdapterSet::default();
    for t in records {
        let a = archive.tensor(&format!("adapter.{}.A", t.target))?.clone();
        let b = archive.tensor(&format!("adapter.{}.B", t.target))?.clone();
        if a.nrows() != t.rank {
            return Err(ArchiveError::Corrupt(format!("rank of {} disagrees with its A matrix", t.target)));
        }
        set.insert(LoraAdapter::from_parts(t.target, a, b, t.alpha).map_err(|e| ArchiveError::Corrupt(e.to_string()))?);
    }
    Ok(set)
}

pub fn save_adapters(set: &AdapterSet, path: &Path) -> Result<(), ArchiveError> {
    adapters_to_archive(set).save(path)
}

pub fn load_adapters(path: &Path) -> Result<AdapterSet, ArchiveError> {
    adapters_from_archive(&Archive::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::LoraConfig;
    use crate::lm::ModelSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_without_base_weights() {
        let cfg = ModelSpec::default().with_vocab(30);
        let mut set = LoraConfig::default().attach(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for (_, _, m) in set.tensors_mut() {
            m.mapv_inplace(|x| x - 0.5);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lora.bin");
        save_adapters(&set, &path).unwrap();
        assert_eq!(load_adapters(&path).unwrap(), set);
    }
}
