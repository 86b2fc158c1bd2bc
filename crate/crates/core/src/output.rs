//! Result files: CSV tables and JSON summaries stamped with the resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Derived, ExperimentConfig};
use crate::error::Result;

/// Writes all outputs of one run into a directory.
#[derive(Debug, Clone)]
pub struct ResultSink {
    dir: PathBuf,
    config: ExperimentConfig,
    derived: Derived,
}

/// Top-level layout of every JSON summary.
#[derive(Debug, Serialize)]
pub struct Summary<'a, T: Serialize> {
    pub command: &'a str,
    pub config_hash: String,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub derived: &'a Derived,
    pub result: T,
}

impl ResultSink {
    pub fn create(dir: &Path, config: &ExperimentConfig, derived: Derived) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config: config.clone(),
            derived,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write `rows` as CSV. The first line is a `#` comment carrying the
    /// config hash and the full config as JSON.
    pub fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut buf = format!(
            "# config_hash={} config={}\n",
            self.config.hash(),
            serde_json::to_string(&self.config)?
        )
        .into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        fs::write(&path, buf)?;
        Ok(path)
    }

    pub fn write_summary<T: Serialize>(&self, name: &str, command: &str, result: T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let summary = Summary {
            command,
            config_hash: self.config.hash(),
            seed: self.config.run.seed,
            config: &self.config,
            derived: &self.derived,
            result,
        };
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: u32,
        b: f64,
    }

    #[test]
    fn files_embed_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let derived = cfg.validate().unwrap();
        let sink = ResultSink::create(&dir.path().join("nested"), &cfg, derived).unwrap();
        let csv_path = sink.write_csv("t.csv", &[Row { a: 1, b: 0.5 }]).unwrap();
        let text = fs::read_to_string(csv_path).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with(&format!("# config_hash={}", cfg.hash())));
        assert_eq!(lines.next(), Some("a,b"));
        assert_eq!(lines.next(), Some("1,0.5"));

        let js = sink.write_summary("s.json", "test", 3).unwrap();
        let back = ExperimentConfig::parse(&fs::read_to_string(js).unwrap(), "s.json", true).unwrap();
        assert_eq!(back, cfg);
    }
}
