//! Output files. Every artifact carries the config hash and nothing that
//! varies between runs of the same config.

use anyhow::{Context, Result};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};

/// Round-trip text for a float, `NaN`/`inf` included.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct ArtifactWriter {
    dir: PathBuf,
    hash: String,
    written: Vec<String>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, hash: &str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// File names written so far, in order.
    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// CSV with a `# config_hash=...` first line.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut out = format!("# config_hash={}\n", self.hash).into_bytes();
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        self.put(name, &out)
    }

    /// Pretty JSON with `config_hash` added at the top level.
    pub fn json(&mut self, name: &str, mut value: Value) -> Result<()> {
        if let Value::Object(map) = &mut value {
            map.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    /// Text written as is; the caller embeds the hash.
    pub fn text(&mut self, name: &str, content: &str) -> Result<()> {
        self.put(name, content.as_bytes())
    }
}
