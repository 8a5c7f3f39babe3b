//! Stage manifest: content hashes of every stage's inputs and outputs, used
//! to detect stale intermediate files before a stage consumes them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn load(workdir: &Path) -> Result<Self, CliError> {
        let path = workdir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("corrupt manifest {}: {e}", path.display())))
    }

    pub fn save(&self, workdir: &Path) -> Result<(), CliError> {
        let path = workdir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }

    /// Records a completed stage, hashing every named file.
    pub fn record(
        &mut self,
        stage: &str,
        workdir: &Path,
        inputs: &[&Path],
        outputs: &[&str],
    ) -> Result<(), CliError> {
        let mut rec = StageRecord::default();
        for p in inputs {
            rec.inputs
                .insert(p.display().to_string(), hash_file(p)?);
        }
        for name in outputs {
            rec.outputs
                .insert(name.to_string(), hash_file(&workdir.join(name))?);
        }
        self.stages.insert(stage.to_string(), rec);
        Ok(())
    }

    /// Verifies that `file` (relative to the workdir) still matches the hash
    /// recorded when `producer` ran.
    pub fn verify_output(
        &self,
        producer: &str,
        workdir: &Path,
        file: &str,
    ) -> Result<(), CliError> {
        let rec = self.stages.get(producer).ok_or_else(|| {
            CliError::Data(format!(
                "stage {producer:?} has not run (missing from manifest); run it first"
            ))
        })?;
        let recorded = rec.outputs.get(file).ok_or_else(|| {
            CliError::Data(format!("stage {producer:?} did not record output {file:?}"))
        })?;
        let current = hash_file(&workdir.join(file))?;
        if &current != recorded {
            return Err(CliError::Data(format!(
                "{file} is stale: changed since stage {producer:?} ran; re-run {producer}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_verify_detects_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let wd = dir.path();
        std::fs::write(wd.join("out.txt"), "payload").unwrap();
        let mut m = Manifest::default();
        m.record("stage_a", wd, &[], &["out.txt"]).unwrap();
        m.save(wd).unwrap();

        let loaded = Manifest::load(wd).unwrap();
        loaded.verify_output("stage_a", wd, "out.txt").unwrap();

        std::fs::write(wd.join("out.txt"), "tampered").unwrap();
        assert!(loaded.verify_output("stage_a", wd, "out.txt").is_err());
        assert!(loaded.verify_output("missing", wd, "out.txt").is_err());
    }
}
