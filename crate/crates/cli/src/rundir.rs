//! Write-once run directories and run_meta.json.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use dualtrain_core::config::RunConfig;
use serde::Serialize;

use crate::commands::Usage;

pub const RUN_META: &str = "run_meta.json";

pub struct RunDir {
    path: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Versions {
    dualtrain: &'static str,
    checkpoint_format: u32,
    plugin_protocol: u32,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    argv: Vec<String>,
    config: &'a RunConfig,
    seed: u64,
    threads: usize,
    versions: Versions,
    wall_time_secs: f64,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    outputs: &'a [String],
}

impl RunDir {
    /// Creates `path`. An existing non-empty directory is only replaced with
    /// `force`, and only when it holds a run_meta.json from an earlier run.
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let empty = path.is_dir()
                && fs::read_dir(path)
                    .with_context(|| format!("reading {}", path.display()))?
                    .next()
                    .is_none();
            if !empty {
                if !force {
                    return Err(Usage(format!(
                        "output directory {} already exists; pass --force to replace it",
                        path.display()
                    ))
                    .into());
                }
                if !path.join(RUN_META).is_file() {
                    return Err(Usage(format!(
                        "refusing to replace {}: it has no {RUN_META}, so it is not a run directory",
                        path.display()
                    ))
                    .into());
                }
                fs::remove_dir_all(path).with_context(|| format!("removing {}", path.display()))?;
            }
        }
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(RunDir {
            path: path.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Path of an output file, recorded in run_meta.json.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.path.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.file(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish(
        mut self,
        command: &str,
        config: &RunConfig,
        error: Option<&anyhow::Error>,
    ) -> Result<()> {
        self.outputs.sort();
        let meta = RunMeta {
            command,
            argv: std::env::args().collect(),
            config,
            seed: config.seed,
            threads: rayon::current_num_threads(),
            versions: Versions {
                dualtrain: env!("CARGO_PKG_VERSION"),
                checkpoint_format: dualtrain_core::models::checkpoint::VERSION,
                plugin_protocol: dualtrain_core::models::plugin::PROTOCOL_VERSION,
            },
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            status: if error.is_some() { "error" } else { "ok" },
            error: error.map(|e| format!("{e:#}")),
            outputs: &self.outputs,
        };
        let path = self.path.join(RUN_META);
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
