//! CSV output. Every file opens with a `# config_hash=... seed=...` line,
//! then the header row.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use advaug::trainer::TrainConfig;

use crate::config::config_hash;
use crate::error::{CliError, Result};

pub struct CsvOut {
    writer: csv::Writer<File>,
}

impl CsvOut {
    /// Creates (or truncates) `path`.
    pub fn create(path: &Path, cfg: &TrainConfig, header: &[String]) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
        writeln!(file, "# config_hash={} seed={}", config_hash(cfg), cfg.seed).map_err(|e| CliError::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    /// Appends to `path`, writing the preamble only when the file is new.
    pub fn append(path: &Path, cfg: &TrainConfig, header: &[String]) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if fresh {
            return Self::create(path, cfg, header);
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            writer: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| CliError::Io {
            path: "csv".into(),
            source: e,
        })
    }
}

pub fn strings<I: IntoIterator<Item = S>, S: ToString>(items: I) -> Vec<String> {
    items.into_iter().map(|s| s.to_string()).collect()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
