use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const FILE: &str = "manifest.json";

/// Record of one run: the full parsed command line, its seed and every file
/// it produced, relative to the output directory.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub parallel: bool,
    pub seed: u64,
    pub command: &'a C,
    pub outputs: Vec<String>,
}

/// Collects output paths under one directory and writes the manifest last.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path for `name` inside the output directory, recorded in the manifest.
    pub fn path(&mut self, name: impl Into<String>) -> PathBuf {
        let name = name.into();
        let path = self.dir.join(&name);
        self.files.push(name);
        path
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish<C: Serialize>(self, command: &C, seed: u64) -> Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: elasto::VERSION,
            parallel: elasto::par::is_parallel(),
            seed,
            command,
            outputs: self.files,
        };
        let path = self.dir.join(FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}
