//! Full pipeline on the toy dataset: record once, replay twice, compare the
//! report bytes.

use std::path::{Path, PathBuf};

use promptgauge::harness::{Overrides, Pipeline, RunConfig, Stage};

use crate::ensure;

fn toy_config(out: &Path) -> Result<RunConfig, String> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let overrides = Overrides { seed: None, replay_dir: None, out_dir: Some(out.to_path_buf()) };
    RunConfig::load(&root.join("config.toml"), &overrides).map_err(|e| e.to_string())
}

fn run(config: RunConfig) -> Result<PathBuf, String> {
    let pipeline = Pipeline::from_config(config).map_err(|e| e.to_string())?;
    pipeline.run_through(Stage::Report).map_err(|e| e.to_string())?;
    Ok(pipeline.out_dir().join("report.json"))
}

pub fn replay_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("store");

    let mut record = toy_config(&dir.path().join("record"))?;
    record.cache_dir = Some(store.clone());
    run(record)?;

    let mut reports = Vec::new();
    for name in ["replay_a", "replay_b"] {
        let mut config = toy_config(&dir.path().join(name))?;
        config.cache_dir = None;
        config.replay_dir = Some(store.clone());
        let bytes = std::fs::read(run(config)?).map_err(|e| e.to_string())?;
        reports.push(bytes);
    }
    ensure(reports[0] == reports[1], || "replayed reports differ".into())?;
    ensure(!reports[0].is_empty(), || "empty report".into())?;
    Ok(format!("6 stages replayed twice, report.json identical ({} bytes)", reports[0].len()))
}
