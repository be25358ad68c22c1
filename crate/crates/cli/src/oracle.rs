//! `decomp oracle run`: drive the scripted user and write its artefacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use decomp_core::pipeline::Resources;
use decomp_core::scripted_user::{emit_plots, run_protocol, OracleOptions, ProtocolRun};
use decomp_core::session::{write_jsonl, UserModel};
use decomp_core::world::TaskType;

/// Files written by [`write_run`].
#[derive(Debug)]
pub struct OracleOutputs {
    pub transcript: PathBuf,
    pub metrics_json: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

pub fn run(
    model: UserModel,
    res: &Resources,
    task: TaskType,
    episodes: usize,
    seed: u64,
    options: OracleOptions,
) -> Result<ProtocolRun> {
    run_protocol(model, res, task, episodes, seed, options)
        .with_context(|| format!("oracle run for {task}"))
}

/// Writes `transcript.jsonl`, `metrics.json`, `metrics.csv` and `metrics.svg`.
pub fn write_run(run: &ProtocolRun, out: &Path, lexical_variation: bool) -> Result<OracleOutputs> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let transcript = out.join("transcript.jsonl");
    write_jsonl(&transcript, &run.transcript)?;
    let metrics_json = out.join("metrics.json");
    fs::write(&metrics_json, serde_json::to_vec_pretty(&run.metrics)?)?;
    let mut title = format!("{} - scripted user", run.task_type);
    if lexical_variation {
        title.push_str(" (lexical variation)");
    }
    let [csv, svg] = emit_plots(&run.metrics, &title, out)?;
    Ok(OracleOutputs {
        transcript,
        metrics_json,
        csv,
        svg,
    })
}
