//! Output directory bookkeeping and the run manifest.

use crate::config::RunConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use tdv_core::data::write_pgm16;
use tdv_core::tensor::io::write_tensor;
use tdv_core::{Result, Tensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    config_hash: String,
    seed: u64,
    config: &'a RunConfig,
    artifacts: Vec<ArtifactEntry>,
}

pub struct OutputDir {
    root: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn csv(&self, name: &str, content: &str) -> Result<()> {
        fs::write(self.path(name), content)?;
        Ok(())
    }

    pub fn pgm(&self, name: &str, img: &Tensor) -> Result<()> {
        write_pgm16(self.path(name), img)
    }

    pub fn tensor(&self, name: &str, t: &Tensor) -> Result<()> {
        write_tensor(self.path(name), t)
    }

    /// Write `manifest.json` listing every other file below the root with
    /// its hash. Contains nothing time-dependent, so identical configs give
    /// identical manifests.
    pub fn finish(&self, command: &str, cfg: &RunConfig) -> Result<()> {
        let mut files = Vec::new();
        walk(&self.root, &mut files)?;
        files.sort();
        let mut artifacts = Vec::new();
        for f in files {
            let rel = f.strip_prefix(&self.root).expect("walked below root");
            if rel == Path::new(MANIFEST) {
                continue;
            }
            artifacts.push(ArtifactEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&fs::read(&f)?),
            });
        }
        let manifest = RunManifest {
            tool: "tdv",
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg,
            artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.path(MANIFEST), text)?;
        Ok(())
    }
}

/// Min-max rescale into `[0, 1]` for viewing signed images.
pub fn normalise_for_display(t: &Tensor) -> Tensor {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.zeros_like()
    }
}
