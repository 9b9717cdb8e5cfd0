//! Append-only `manifest.jsonl`, one JSON object per command run.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context as _, Result};
use drasic::data::{mnist_checksums, DataSplit};
use serde_json::{json, Map, Value};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub struct RunManifest {
    command: &'static str,
    started: f64,
    fields: Map<String, Value>,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &'static str) -> Self {
        RunManifest {
            command,
            started: unix_now(),
            fields: Map::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.fields.insert(key.to_string(), value.into());
        self
    }

    pub fn datasets(&mut self, splits: &[DataSplit]) -> &mut Self {
        let mut sums = Map::new();
        for &s in splits {
            for (name, sha) in mnist_checksums(s) {
                sums.insert(name.to_string(), Value::from(sha));
            }
        }
        self.set("dataset_sha256", Value::Object(sums))
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    /// Appends the finished record to `dir/manifest.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut record = Map::new();
        record.insert("command".into(), json!(self.command));
        record.insert("argv".into(), json!(std::env::args().collect::<Vec<_>>()));
        record.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        record.insert("started_unix".into(), json!(self.started));
        record.insert("finished_unix".into(), json!(unix_now()));
        record.extend(self.fields.clone());
        record.insert(
            "outputs".into(),
            json!(self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()),
        );
        let path = dir.join(MANIFEST_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        writeln!(f, "{}", Value::Object(record))
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Every record of `dir/manifest.jsonl`; empty if there is none.
pub fn read(dir: &Path) -> Result<Vec<Value>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing {}", path.display())))
        .collect()
}
