use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{HarnessError, Stage};
use crate::gateway::{CallCounts, TokenCounts};
use crate::io::{read_json, sha256_file, sha256_hex, write_json};

/// Record written next to a stage's artifacts once it completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    pub backend_id: String,
    pub settings: Value,
    pub settings_hash: String,
    /// Input file name → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the run directory) → sha256.
    pub outputs: BTreeMap<String, String>,
    pub calls: CallCounts,
    pub tokens: TokenCounts,
    pub elapsed_ms: u64,
}

/// Gateway usage of one stage, as carried into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageUsage {
    pub stage: String,
    pub calls: CallCounts,
    pub tokens: TokenCounts,
}

pub fn settings_hash(settings: &Value) -> String {
    sha256_hex(&serde_json::to_vec(settings).expect("json values serialize"))
}

pub fn manifest_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("{}.manifest.json", stage.name()))
}

impl Manifest {
    pub fn load(out: &Path, stage: Stage) -> Result<Option<Self>, HarnessError> {
        let path = manifest_path(out, stage);
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(read_json(&path)?))
    }

    pub fn save(&self, out: &Path, stage: Stage) -> Result<(), HarnessError> {
        Ok(write_json(&manifest_path(out, stage), self)?)
    }

    /// `Ok(None)` when every output still has its recorded hash, else the
    /// first offending file.
    pub fn check_outputs(&self, out: &Path) -> Result<Option<String>, HarnessError> {
        for (name, hash) in &self.outputs {
            let path = out.join(name);
            if !path.is_file() || &sha256_file(&path)? != hash {
                return Ok(Some(name.clone()));
            }
        }
        Ok(None)
    }

    pub fn usage(&self) -> StageUsage {
        StageUsage { stage: self.stage.clone(), calls: self.calls, tokens: self.tokens }
    }
}

pub fn calls_since(before: CallCounts, after: CallCounts) -> CallCounts {
    CallCounts {
        generate: after.generate - before.generate,
        score: after.score - before.score,
        embed: after.embed - before.embed,
        backend: after.backend - before.backend,
    }
}

pub fn tokens_since(before: TokenCounts, after: TokenCounts) -> TokenCounts {
    TokenCounts {
        prompt_tokens: after.prompt_tokens - before.prompt_tokens,
        completion_tokens: after.completion_tokens - before.completion_tokens,
        estimated_tokens: after.estimated_tokens - before.estimated_tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn settings_hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"a":1,"b":[1,2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"b":[1,2],"a":1}"#).unwrap();
        assert_eq!(settings_hash(&a), settings_hash(&b));
        assert_ne!(settings_hash(&a), settings_hash(&json!({"a": 2, "b": [1, 2]})));
    }

    #[test]
    fn detects_modified_outputs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.txt"), "one").unwrap();
        let m = Manifest {
            stage: "measure".into(),
            seed: 0,
            backend_id: "b".into(),
            settings: json!({}),
            settings_hash: settings_hash(&json!({})),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::from([("x.txt".to_string(), sha256_hex(b"one"))]),
            calls: CallCounts::default(),
            tokens: TokenCounts::default(),
            elapsed_ms: 0,
        };
        m.save(dir.path(), Stage::Measure).unwrap();
        let loaded = Manifest::load(dir.path(), Stage::Measure).unwrap().unwrap();
        assert_eq!(loaded, m);
        assert_eq!(loaded.check_outputs(dir.path()).unwrap(), None);
        std::fs::write(dir.path().join("x.txt"), "two").unwrap();
        assert_eq!(loaded.check_outputs(dir.path()).unwrap().as_deref(), Some("x.txt"));
    }
}
