//! File formats for every pipeline artifact.
//!
//! Environments, extractions, and synthetic datasets are JSON documents;
//! logged transition datasets are JSON Lines (one metadata header line,
//! then one transition per line) so very large collections stream well;
//! reports are CSV with one leading `#` comment line carrying the resolved
//! configuration. All floating-point values survive a write/read cycle
//! bit-exactly (shortest-round-trip printing).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use bdt_core::dataset::{OfflineDataset, Transition};
use bdt_core::distill::{DistillReport, SyntheticDataset};
use bdt_core::eval::Evaluation;
use bdt_core::extractor::{ExtractionResult, ResolvedExtractionConfig};
use bdt_core::mdp::{TabularMdp, TabularPolicy};

use crate::errors::{file_error, CliError, CliResult};

/// Environment document: the MDP tensors plus provenance metadata.
#[derive(Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

impl MdpFile {
    pub fn from_mdp(mdp: &TabularMdp, meta: Option<Value>) -> Self {
        let (n, a) = (mdp.n_states(), mdp.n_actions());
        let transition = (0..n)
            .map(|s| {
                (0..a)
                    .map(|act| mdp.transition_row(s, act).to_vec())
                    .collect()
            })
            .collect();
        let reward = (0..n)
            .map(|s| (0..a).map(|act| mdp.reward(s, act)).collect())
            .collect();
        MdpFile {
            n_states: n,
            n_actions: a,
            gamma: mdp.gamma(),
            transition,
            reward,
            initial_dist: mdp.initial_dist().to_vec(),
            meta,
        }
    }

    pub fn into_mdp(self) -> CliResult<TabularMdp> {
        let flat_t = flatten3(
            &self.transition,
            self.n_states,
            self.n_actions,
            self.n_states,
            "transition",
        )?;
        let flat_r = flatten2(&self.reward, self.n_states, self.n_actions, "reward")?;
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            flat_t,
            flat_r,
            self.initial_dist,
        )
        .map_err(CliError::from)
    }
}

fn flatten2(rows: &[Vec<f64>], n: usize, m: usize, what: &str) -> CliResult<Vec<f64>> {
    if rows.len() != n {
        return Err(CliError::Validation(format!(
            "{what} has {} rows, expected {n}",
            rows.len()
        )));
    }
    let mut out = Vec::with_capacity(n * m);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(CliError::Validation(format!(
                "{what} row {i} has {} entries, expected {m}",
                row.len()
            )));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

fn flatten3(t: &[Vec<Vec<f64>>], n: usize, a: usize, m: usize, what: &str) -> CliResult<Vec<f64>> {
    if t.len() != n {
        return Err(CliError::Validation(format!(
            "{what} has {} state blocks, expected {n}",
            t.len()
        )));
    }
    let mut out = Vec::with_capacity(n * a * m);
    for (s, block) in t.iter().enumerate() {
        if block.len() != a {
            return Err(CliError::Validation(format!(
                "{what} state {s} has {} action rows, expected {a}",
                block.len()
            )));
        }
        for (act, row) in block.iter().enumerate() {
            if row.len() != m {
                return Err(CliError::Validation(format!(
                    "{what} state {s} action {act} has {} entries, expected {m}",
                    row.len()
                )));
            }
            out.extend_from_slice(row);
        }
    }
    Ok(out)
}

fn chunk2(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| file_error(path, e))?;
    fs::write(path, text + "\n").map_err(|e| file_error(path, e))?;
    Ok(())
}

pub fn read_mdp(path: &Path) -> CliResult<TabularMdp> {
    let file: MdpFile = read_json(path)?;
    file.into_mdp().map_err(|e| match e {
        CliError::Validation(msg) => file_error(path, msg),
        other => other,
    })
}

pub fn write_mdp(path: &Path, mdp: &TabularMdp, meta: Option<Value>) -> CliResult<()> {
    write_json(path, &MdpFile::from_mdp(mdp, meta))
}

/// Header line of a dataset file.
#[derive(Serialize, Deserialize)]
pub struct DatasetMeta {
    pub tier: String,
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_transitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    meta: DatasetMeta,
}

/// One transition line: state, action, reward, next state.
#[derive(Serialize, Deserialize)]
struct TransitionLine {
    s: usize,
    a: usize,
    r: f64,
    sp: usize,
}

pub fn write_dataset(
    path: &Path,
    dataset: &OfflineDataset,
    config: Option<Value>,
) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| file_error(path, e))?;
    let mut w = BufWriter::new(file);
    let header = DatasetHeader {
        meta: DatasetMeta {
            tier: dataset.tier().to_string(),
            seed: dataset.seed(),
            n_states: dataset.n_states(),
            n_actions: dataset.n_actions(),
            n_transitions: dataset.len(),
            config,
        },
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| file_error(path, e))?;
    w.write_all(b"\n").map_err(|e| file_error(path, e))?;
    for tr in dataset.transitions() {
        let line = TransitionLine {
            s: tr.state,
            a: tr.action,
            r: tr.reward,
            sp: tr.next_state,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| file_error(path, e))?;
        w.write_all(b"\n").map_err(|e| file_error(path, e))?;
    }
    w.flush().map_err(|e| file_error(path, e))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> CliResult<OfflineDataset> {
    let file = fs::File::open(path).map_err(|e| file_error(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| file_error(path, "empty dataset file"))?;
    let first = first.map_err(|e| file_error(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first)
        .map_err(|e| file_error(path, format!("line 1 (header): {e}")))?;
    let meta = header.meta;
    let mut transitions = Vec::with_capacity(meta.n_transitions);
    for (idx, line) in lines {
        let line = line.map_err(|e| file_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TransitionLine = serde_json::from_str(&line)
            .map_err(|e| file_error(path, format!("line {}: {e}", idx + 1)))?;
        transitions.push(Transition {
            state: t.s,
            action: t.a,
            reward: t.r,
            next_state: t.sp,
        });
    }
    if transitions.len() != meta.n_transitions {
        return Err(file_error(
            path,
            format!(
                "header declares {} transitions but file contains {}",
                meta.n_transitions,
                transitions.len()
            ),
        ));
    }
    OfflineDataset::new(
        transitions,
        &meta.tier,
        meta.seed,
        meta.n_states,
        meta.n_actions,
    )
    .map_err(|e| file_error(path, e))
}

/// Extraction document: target policy, action values, resolved settings.
#[derive(Serialize, Deserialize)]
pub struct ExtractionFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub pi_star: Vec<Vec<f64>>,
    pub q_star: Vec<Vec<f64>>,
    pub config: ExtractionConfigDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

/// Serialized form of the resolved extraction settings.
#[derive(Serialize, Deserialize, Clone, Copy)]
pub struct ExtractionConfigDoc {
    pub gamma: f64,
    pub pessimism_penalty: f64,
    pub count_threshold: usize,
    pub vi_tol: f64,
    pub vi_max_iter: usize,
    pub softmax_tau: f64,
}

impl From<&ResolvedExtractionConfig> for ExtractionConfigDoc {
    fn from(c: &ResolvedExtractionConfig) -> Self {
        ExtractionConfigDoc {
            gamma: c.gamma,
            pessimism_penalty: c.pessimism_penalty,
            count_threshold: c.count_threshold,
            vi_tol: c.vi_tol,
            vi_max_iter: c.vi_max_iter,
            softmax_tau: c.softmax_tau,
        }
    }
}

impl From<ExtractionConfigDoc> for ResolvedExtractionConfig {
    fn from(d: ExtractionConfigDoc) -> Self {
        ResolvedExtractionConfig {
            gamma: d.gamma,
            pessimism_penalty: d.pessimism_penalty,
            count_threshold: d.count_threshold,
            vi_tol: d.vi_tol,
            vi_max_iter: d.vi_max_iter,
            softmax_tau: d.softmax_tau,
        }
    }
}

pub fn write_extraction(
    path: &Path,
    result: &ExtractionResult,
    meta: Option<Value>,
) -> CliResult<()> {
    let (n, a) = (result.pi_star.n_states(), result.pi_star.n_actions());
    let file = ExtractionFile {
        n_states: n,
        n_actions: a,
        pi_star: chunk2(result.pi_star.probs(), a),
        q_star: chunk2(&result.q_star, a),
        config: (&result.config).into(),
        meta,
    };
    write_json(path, &file)
}

pub fn read_extraction(path: &Path) -> CliResult<ExtractionResult> {
    let file: ExtractionFile = read_json(path)?;
    let pi = flatten2(&file.pi_star, file.n_states, file.n_actions, "pi_star")
        .map_err(|e| rewrap(path, e))?;
    let q = flatten2(&file.q_star, file.n_states, file.n_actions, "q_star")
        .map_err(|e| rewrap(path, e))?;
    let pi_star =
        TabularPolicy::new(file.n_states, file.n_actions, pi).map_err(|e| file_error(path, e))?;
    Ok(ExtractionResult {
        pi_star,
        q_star: q,
        config: file.config.into(),
    })
}

fn rewrap(path: &Path, e: CliError) -> CliError {
    match e {
        CliError::Validation(msg) => file_error(path, msg),
        other => other,
    }
}

/// Synthetic dataset document.
#[derive(Serialize, Deserialize)]
pub struct SyntheticFile {
    pub n_syn: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub state_vectors: Vec<Vec<f64>>,
    pub target_logits: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

pub fn write_synthetic(path: &Path, syn: &SyntheticDataset, meta: Option<Value>) -> CliResult<()> {
    let file = SyntheticFile {
        n_syn: syn.n_syn(),
        state_dim: syn.state_dim(),
        n_actions: syn.n_actions(),
        state_vectors: chunk2(syn.state_vectors(), syn.state_dim()),
        target_logits: chunk2(syn.target_logits(), syn.n_actions()),
        meta,
    };
    write_json(path, &file)
}

pub fn read_synthetic(path: &Path) -> CliResult<SyntheticDataset> {
    let file: SyntheticFile = read_json(path)?;
    let states = flatten2(
        &file.state_vectors,
        file.n_syn,
        file.state_dim,
        "state_vectors",
    )
    .map_err(|e| rewrap(path, e))?;
    let logits = flatten2(
        &file.target_logits,
        file.n_syn,
        file.n_actions,
        "target_logits",
    )
    .map_err(|e| rewrap(path, e))?;
    SyntheticDataset::new(file.n_syn, file.state_dim, file.n_actions, states, logits)
        .map_err(|e| file_error(path, e))
}

/// Distillation learning-curve CSV: a `#` comment line with the resolved
/// configuration, then `step,objective,outer_loss,return_mean,return_std`.
pub fn write_report_csv(path: &Path, report: &DistillReport, config_line: &str) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| file_error(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# {config_line}").map_err(|e| file_error(path, e))?;
    writeln!(w, "step,objective,outer_loss,return_mean,return_std")
        .map_err(|e| file_error(path, e))?;
    for r in &report.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step,
            report.objective.label(),
            r.outer_loss,
            r.return_mean,
            r.return_std
        )
        .map_err(|e| file_error(path, e))?;
    }
    w.flush().map_err(|e| file_error(path, e))?;
    Ok(())
}

/// Per-seed evaluation CSV with the same comment-line convention:
/// `seed,j,normalized_return`.
pub fn write_eval_csv(path: &Path, eval: &Evaluation, config_line: &str) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| file_error(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# {config_line}").map_err(|e| file_error(path, e))?;
    writeln!(w, "seed,j,normalized_return").map_err(|e| file_error(path, e))?;
    for o in &eval.outcomes {
        writeln!(w, "{},{},{}", o.seed, o.j, o.normalized).map_err(|e| file_error(path, e))?;
    }
    w.flush().map_err(|e| file_error(path, e))?;
    Ok(())
}
