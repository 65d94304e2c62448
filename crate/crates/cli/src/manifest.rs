//! Run manifests and replay.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::commands::{run_task, uses_model_params};
use crate::config::Config;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Task {
    Sample,
    Evolve,
    Solve,
    Count,
    Norm,
    Probe { id: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub task: Task,
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub force: bool,
    /// Fully resolved configuration, defaults included.
    pub config: Config,
    pub created_unix: u64,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Runs `task`, writes its outputs and the manifest into `out`, and returns
/// the exit status.
pub fn execute(task: &Task, config: &Config, force: bool, out: &Path) -> Result<u8, CliError> {
    if uses_model_params(task) && !config.params.is_admissible() {
        let p = &config.params;
        eprintln!(
            "warning: (alpha = {}, s = {}) in d = {} lies outside the regime covered by the theory",
            p.alpha, p.s, p.d
        );
        if !force {
            return Err(CliError::Config("inadmissible regime; pass --force to run anyway".into()));
        }
    }
    fs::create_dir_all(out)?;
    let outcome = run_task(task, config, out)?;
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        task: task.clone(),
        config_hash: config.hash(),
        seed: config.run.seed,
        samples: config.run.samples,
        force,
        config: config.clone(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        outputs: outcome.outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join(MANIFEST_FILE), text)?;
    match outcome.failure {
        Some(e) => {
            eprintln!("{e}");
            Ok(e.exit_code())
        }
        None => Ok(0),
    }
}

/// Re-runs the manifest into `out` (default: `replay/` beside it) and
/// compares every recorded output byte for byte.
pub fn replay(path: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let manifest = RunManifest::read(path)?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(CliError::Config(format!(
            "{}: configuration does not match its recorded hash",
            path.display()
        )));
    }
    if manifest.seed != manifest.config.run.seed || manifest.samples != manifest.config.run.samples {
        return Err(CliError::Config(format!(
            "{}: recorded seed range does not match its configuration",
            path.display()
        )));
    }
    manifest.config.validate()?;
    if manifest.artifact_version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, replaying with {}",
            manifest.artifact_version,
            env!("CARGO_PKG_VERSION")
        );
    }
    let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let target = out.map_or_else(|| base.join("replay"), Path::to_path_buf);
    execute(&manifest.task, &manifest.config, manifest.force, &target)?;
    let rerun = RunManifest::read(&target.join(MANIFEST_FILE))?;
    let mut identical = rerun.outputs == manifest.outputs;
    if !identical {
        println!("output lists differ: {:?} vs {:?}", manifest.outputs, rerun.outputs);
    }
    for name in &manifest.outputs {
        let same = match (fs::read(base.join(name)), fs::read(target.join(name))) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        println!("{} {name}", if same { "identical" } else { "differs" });
        identical &= same;
    }
    Ok(if identical { 0 } else { 3 })
}
