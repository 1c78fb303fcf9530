use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Result;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip representation.
pub(crate) fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Output directory that remembers every file written through it.
pub(crate) struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Path for `name`, recorded as an output.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.file(name);
        fs::write(path, contents)?;
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.file(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `manifest.json` listing every output with its hash.
    pub fn finish(mut self, manifest: Manifest) -> Result<Vec<PathBuf>> {
        let mut outputs = Vec::with_capacity(self.written.len());
        for name in &self.written {
            let bytes = fs::read(self.root.join(name))?;
            outputs.push(OutputEntry { file: name.clone(), sha256: sha256_hex(&bytes) });
        }
        let manifest = ManifestFile { outputs, ..manifest.into() };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.file("manifest.json");
        fs::write(&path, text)?;
        Ok(self.written.iter().map(|n| self.root.join(n)).collect())
    }
}

pub(crate) struct Manifest {
    pub command: &'static str,
    pub seed: u64,
    pub config_toml: String,
    pub input_dim: usize,
    pub log10_unit_ball_volume: f64,
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct ManifestFile {
    command: &'static str,
    version: &'static str,
    seed: u64,
    config_sha256: String,
    input_dim: usize,
    log10_unit_ball_volume: f64,
    config: String,
    outputs: Vec<OutputEntry>,
}

impl From<Manifest> for ManifestFile {
    fn from(m: Manifest) -> Self {
        Self {
            command: m.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: m.seed,
            config_sha256: sha256_hex(m.config_toml.as_bytes()),
            input_dim: m.input_dim,
            log10_unit_ball_volume: m.log10_unit_ball_volume,
            config: m.config_toml,
            outputs: Vec::new(),
        }
    }
}

pub(crate) fn gnuplot_curves(csv: &str, series_column: usize, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set title '{title}'\n\
         set xlabel 'log10 certified volume'\n\
         set ylabel 'certified accuracy'\n\
         plot for [s in system(\"tail -n +2 {csv} | cut -d, -f{series_column} | sort -u\")] \\\n    \
         '{csv}' using (strcol({series_column}) eq s ? $2 : 1/0):3 with steps title s\n"
    )
}
