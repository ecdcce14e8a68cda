//! Reproducibility records for command-line runs.
//!
//! Every CLI invocation leaves a small JSON document next to its primary
//! output describing exactly what ran: the resolved options (seeds
//! included), the files read and written, per-phase wall-clock timings,
//! and a command-specific result summary. Reading the manifest chain of a
//! pipeline is enough to replay it.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

/// The on-disk record; see the module docs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Resolved options the command actually used, seeds and defaults
    /// included.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Command-specific summary (row counts, risk trace, scores, …).
    pub results: BTreeMap<String, serde_json::Value>,
    pub timings_ms: BTreeMap<String, f64>,
}

/// Accumulates a [`RunManifest`] while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    /// Starts a record for `command` with its full resolved config.
    pub fn new(command: &str, config: &impl Serialize) -> ManifestBuilder {
        ManifestBuilder {
            manifest: RunManifest {
                tool: "hazboost",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config: serde_json::to_value(config)
                    .expect("command configs are plain serializable structs"),
                inputs: Vec::new(),
                outputs: Vec::new(),
                results: BTreeMap::new(),
                timings_ms: BTreeMap::new(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    /// Records a summary value under `key`.
    pub fn result(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let value = serde_json::to_value(value).expect("results are plain serializable values");
        self.manifest.results.insert(key.to_string(), value);
        self
    }

    /// Runs `work`, charging its wall-clock time to `phase`. Repeated
    /// phases accumulate.
    pub fn time<T>(&mut self, phase: &str, work: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = work();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        *self.manifest.timings_ms.entry(phase.to_string()).or_insert(0.0) += ms;
        out
    }

    /// Writes the record as pretty-printed JSON; the manifest itself is
    /// added to `outputs`.
    pub fn write(mut self, path: &Path) -> std::io::Result<()> {
        self.output(path);
        let mut bytes =
            serde_json::to_vec_pretty(&self.manifest).expect("manifest is serializable");
        bytes.push(b'\n');
        std::fs::write(path, bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct FakeConfig {
        seed: u64,
        depth: usize,
    }

    #[test]
    fn manifest_records_everything_it_is_told() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.manifest.json");

        let mut b = ManifestBuilder::new("train", &FakeConfig { seed: 7, depth: 3 });
        b.input(Path::new("in.bin"));
        b.output(Path::new("model.json"));
        b.result("events", 42u64);
        let sum = b.time("fit", || (0..1000).sum::<u64>());
        assert_eq!(sum, 499_500);
        b.time("fit", || ());
        b.write(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["tool"], "hazboost");
        assert_eq!(v["command"], "train");
        assert_eq!(v["config"]["seed"], 7);
        assert_eq!(v["inputs"][0], "in.bin");
        assert_eq!(v["outputs"][0], "model.json");
        assert_eq!(v["outputs"][1], path.display().to_string());
        assert_eq!(v["results"]["events"], 42);
        assert!(v["timings_ms"]["fit"].as_f64().unwrap() >= 0.0);
    }
}
