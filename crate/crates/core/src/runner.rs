//! Experiment orchestration: drives an agent through the training phase
//! (complete feedback) and the transfer test (no feedback) for batches of
//! independent runs, logging every trial to an append-only JSONL file.
//!
//! The log doubles as the checkpoint: each line is flushed as it is
//! written, so a killed batch resumes by replaying the completed lines and
//! continuing the partial run from its next trial. Per-run seeds derive
//! from the master seed (splitmix64 chain, see [`crate::rng`]), letters are
//! reassigned per run, and all per-trial randomness derives from the trial
//! seed, so a resumed run continues exactly where it stopped.
//!
//! Complete feedback proceeds even on invalid replies: nonconforming
//! responses are excluded from analyses post hoc, but the outcome history
//! still grows by that round's outcomes, keeping the trial structure
//! intact.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{build_agent, AgentConfig, ChoiceAgent, TrialInfo};
use crate::cogmodel::{Phase, ReplayTrial};
use crate::error::{Error, Result};
use crate::promptgen::{
    ChoiceOutcome, HistoryRound, LetterAssignment, OutcomeHistory, PromptRenderer, PromptStyle,
};
use crate::rng;
use crate::taskdef::{
    build_reward_schedule, enumerate_transfer_pairs, find_task, training_sequence, RoundingPolicy,
    TaskSpec,
};

/// Schema version stamped on every log and checkpoint.
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Hex SHA-256 of a byte string (used for prompt and input provenance).
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Configuration of one experiment batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: String,
    pub style: PromptStyle,
    pub agent: AgentConfig,
    pub n_runs: u32,
    pub master_seed: u64,
    /// Store full prompt text and raw replies in the log (hashes are always
    /// stored).
    #[serde(default)]
    pub log_text: bool,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfferedOption {
    pub letter: char,
    pub option: String,
}

/// One choice event. `offered` is in prompt listing order, so index 0 is
/// the first-listed option (the position-bias slot). Training records carry
/// outcomes for every offered option; transfer records carry none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub run: u32,
    pub phase: Phase,
    pub trial: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_id: Option<u32>,
    pub offered: Vec<OfferedOption>,
    pub choice: Option<char>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<f64>>,
    pub prompt_sha256: String,
    pub ts: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub schema_version: u32,
    pub task: String,
    pub style: PromptStyle,
    pub agent: String,
    pub n_runs: u32,
    pub master_seed: u64,
    pub catalog_sha256: String,
    pub created: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run: u32,
    pub run_seed: u64,
    pub letters: BTreeMap<String, char>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Meta(LogMeta),
    Run(RunHeader),
    Trial(TrialRecord),
}

/// A fully parsed log.
#[derive(Debug, Clone)]
pub struct ExperimentLog {
    pub meta: LogMeta,
    pub runs: Vec<RunLog>,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub header: RunHeader,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentLog {
    /// Convert to the representation consumed by the likelihood replay.
    pub fn replay_runs(&self) -> Vec<Vec<ReplayTrial>> {
        self.runs
            .iter()
            .map(|run| {
                run.trials
                    .iter()
                    .map(|t| ReplayTrial {
                        phase: t.phase,
                        listed: t.offered.iter().map(|o| o.letter).collect(),
                        choice: t.choice,
                        outcomes: t.outcomes.clone(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn n_trials(&self) -> usize {
        self.runs.iter().map(|r| r.trials.len()).sum()
    }

    pub fn n_invalid(&self) -> usize {
        self.runs
            .iter()
            .flat_map(|r| &r.trials)
            .filter(|t| t.choice.is_none())
            .count()
    }

    /// Fraction of trials with nonconforming replies (reported per batch).
    pub fn invalid_fraction(&self) -> f64 {
        let n = self.n_trials();
        if n == 0 {
            0.0
        } else {
            self.n_invalid() as f64 / n as f64
        }
    }
}

/// Batch outcome summary.
#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub log_path: PathBuf,
    pub n_runs: u32,
    pub n_trials: usize,
    pub n_invalid: usize,
    pub invalid_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    completed_runs: u32,
    partial_run_trials: u32,
}

trait LogSink {
    fn write_line(&mut self, line: &LogLine) -> Result<()>;
    /// Called after each appended trial with (completed runs, trials in the
    /// current run); file sinks persist this as the checkpoint.
    fn checkpoint(&mut self, _completed_runs: u32, _partial_run_trials: u32) -> Result<()> {
        Ok(())
    }
}

struct MemorySink {
    meta: Option<LogMeta>,
    runs: Vec<RunLog>,
}

impl LogSink for MemorySink {
    fn write_line(&mut self, line: &LogLine) -> Result<()> {
        match line {
            LogLine::Meta(m) => self.meta = Some(m.clone()),
            LogLine::Run(h) => self.runs.push(RunLog {
                header: h.clone(),
                trials: Vec::new(),
            }),
            LogLine::Trial(t) => self
                .runs
                .last_mut()
                .expect("trial before run header")
                .trials
                .push(t.clone()),
        }
        Ok(())
    }
}

struct FileSink {
    writer: BufWriter<File>,
    ckpt_path: PathBuf,
}

impl FileSink {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .truncate(false)
            .open(path)?;
        let _ = append;
        Ok(FileSink {
            writer: BufWriter::new(file),
            ckpt_path: checkpoint_path(path),
        })
    }
}

/// Checkpoint file colocated with the log.
pub fn checkpoint_path(log: &Path) -> PathBuf {
    let mut p = log.as_os_str().to_owned();
    p.push(".ckpt.json");
    PathBuf::from(p)
}

impl LogSink for FileSink {
    fn write_line(&mut self, line: &LogLine) -> Result<()> {
        serde_json::to_writer(&mut self.writer, line)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn checkpoint(&mut self, completed_runs: u32, partial_run_trials: u32) -> Result<()> {
        let ckpt = Checkpoint {
            schema_version: LOG_SCHEMA_VERSION,
            completed_runs,
            partial_run_trials,
        };
        std::fs::write(&self.ckpt_path, serde_json::to_string(&ckpt)?)?;
        Ok(())
    }
}

/// Read and validate a JSONL log.
pub fn read_log(path: &Path) -> Result<ExperimentLog> {
    let file = File::open(path)
        .map_err(|e| Error::LogSchema(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut meta: Option<LogMeta> = None;
    let mut runs: Vec<RunLog> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| {
            Error::LogSchema(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        match parsed {
            LogLine::Meta(m) => {
                if m.schema_version != LOG_SCHEMA_VERSION {
                    return Err(Error::LogSchema(format!(
                        "log schema_version {} unsupported (expected {LOG_SCHEMA_VERSION}); \
                         re-run the producing command with this version or convert the log",
                        m.schema_version
                    )));
                }
                if meta.is_some() {
                    return Err(Error::LogSchema("duplicate meta line".into()));
                }
                meta = Some(m);
            }
            LogLine::Run(h) => runs.push(RunLog {
                header: h,
                trials: Vec::new(),
            }),
            LogLine::Trial(t) => match runs.last_mut() {
                Some(run) => run.trials.push(t),
                None => {
                    return Err(Error::LogSchema(
                        "trial record appears before any run header".into(),
                    ))
                }
            },
        }
    }
    let meta = meta.ok_or_else(|| Error::LogSchema("log is missing its meta line".into()))?;
    Ok(ExperimentLog { meta, runs })
}

fn now_ts() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Per-run derived structure shared by fresh execution and resume replay.
struct RunPlan {
    run_seed: u64,
    letters: LetterAssignment,
    schedule: Vec<Vec<f64>>,
    train_seq: Vec<u32>,
    transfer_pairs: Vec<(String, String)>,
}

fn plan_run(task: &TaskSpec, cfg: &RunConfig, run: u32) -> Result<RunPlan> {
    let run_seed = rng::derive(cfg.master_seed, run as u64);
    let letters = LetterAssignment::assign(task, run_seed);
    let schedule = build_reward_schedule(task, run_seed, RoundingPolicy::RequireExact)?.rewards;
    let train_seq = training_sequence(task, run_seed);
    let mut transfer_pairs = enumerate_transfer_pairs(task);
    let mut order_rng = rng::rng_from(rng::stream(run_seed, rng::STREAM_TRANSFER_ORDER));
    transfer_pairs.shuffle(&mut order_rng);
    Ok(RunPlan {
        run_seed,
        letters,
        schedule,
        train_seq,
        transfer_pairs,
    })
}

struct TrialLoop<'a> {
    task: &'a TaskSpec,
    cfg: &'a RunConfig,
    renderer: PromptRenderer<'a>,
    plan: RunPlan,
    run: u32,
    history: OutcomeHistory,
    presentations: BTreeMap<u32, usize>,
    completed_runs: u32,
}

impl<'a> TrialLoop<'a> {
    fn new(task: &'a TaskSpec, cfg: &'a RunConfig, run: u32, completed_runs: u32) -> Result<Self> {
        Ok(TrialLoop {
            task,
            cfg,
            renderer: PromptRenderer::new(task, cfg.style),
            plan: plan_run(task, cfg, run)?,
            run,
            history: OutcomeHistory::default(),
            presentations: BTreeMap::new(),
            completed_runs,
        })
    }

    fn header(&self) -> RunHeader {
        RunHeader {
            run: self.run,
            run_seed: self.plan.run_seed,
            letters: self.plan.letters.to_map(self.task),
        }
    }

    fn trial_seed(&self, global_index: usize) -> u64 {
        rng::derive(
            rng::stream(self.plan.run_seed, rng::STREAM_TRIAL),
            global_index as u64,
        )
    }

    fn training_outcomes(&mut self, ctx_id: u32, options: &[String]) -> Vec<f64> {
        let k = *self.presentations.get(&ctx_id).unwrap_or(&0);
        self.presentations.insert(ctx_id, k + 1);
        options
            .iter()
            .map(|id| {
                let idx = self.task.option_index(id).expect("option in task");
                self.plan.schedule[idx][k]
            })
            .collect()
    }

    /// Rebuild history, presentation counts, and the agent's learner state
    /// from already-logged trials of a partially completed run.
    fn replay_logged(&mut self, agent: &mut dyn ChoiceAgent, trials: &[TrialRecord]) {
        for rec in trials {
            if rec.phase != Phase::Training {
                continue;
            }
            let ctx_id = rec.context_id.expect("training record has context");
            let outcomes = rec.outcomes.as_ref().expect("training record has outcomes");
            let entries: Vec<(char, f64)> = rec
                .offered
                .iter()
                .map(|o| o.letter)
                .zip(outcomes.iter().copied())
                .collect();
            let k = *self.presentations.get(&ctx_id).unwrap_or(&0);
            self.presentations.insert(ctx_id, k + 1);
            self.history.push(HistoryRound {
                context_id: ctx_id,
                entries: entries.clone(),
            });
            agent.observe(&entries, rec.choice);
        }
    }

    fn run_trial(
        &mut self,
        agent: &mut dyn ChoiceAgent,
        sink: &mut dyn LogSink,
        phase: Phase,
        phase_index: usize,
        global_index: usize,
        history_text: &str,
    ) -> Result<TrialRecord> {
        let (ctx_id, option_ids): (Option<u32>, Vec<String>) = match phase {
            Phase::Training => {
                let ctx_id = self.plan.train_seq[phase_index];
                let ctx = self.task.context(ctx_id).expect("context in task");
                (
                    Some(ctx_id),
                    ctx.members.iter().map(|m| m.option.clone()).collect(),
                )
            }
            Phase::Transfer => {
                let (a, b) = self.plan.transfer_pairs[phase_index].clone();
                (None, vec![a, b])
            }
        };
        let letters: Vec<char> = option_ids
            .iter()
            .map(|id| self.plan.letters.letter_for(self.task, id).unwrap())
            .collect();
        let trial_seed = self.trial_seed(global_index);
        let query = self.renderer.render_choice_query(&letters, trial_seed)?;
        let prompt = self.renderer.assemble(history_text, &query.text);

        // realign options to the listed order committed by the query
        let listed_options: Vec<String> = query
            .listed
            .iter()
            .map(|&l| {
                let idx = self.plan.letters.option_index_of(l).unwrap();
                self.task.options[idx].id.clone()
            })
            .collect();
        let evs: Vec<f64> = listed_options
            .iter()
            .map(|id| self.task.expected_value(id).unwrap())
            .collect();

        let info = TrialInfo {
            phase,
            listed: &query.listed,
            evs: &evs,
            trial_seed,
        };
        let reply = agent.choose(&prompt, &info)?;
        let parsed = crate::promptgen::parse_choice(&reply.raw, &query.listed);
        let choice = match parsed.outcome {
            ChoiceOutcome::Chosen(l) => Some(l),
            ChoiceOutcome::Invalid => None,
        };

        let outcomes = match phase {
            Phase::Training => Some(self.training_outcomes(ctx_id.unwrap(), &listed_options)),
            Phase::Transfer => None,
        };

        let record = TrialRecord {
            run: self.run,
            phase,
            trial: phase_index as u32,
            context_id: ctx_id,
            offered: query
                .listed
                .iter()
                .zip(listed_options.iter())
                .map(|(&letter, option)| OfferedOption {
                    letter,
                    option: option.clone(),
                })
                .collect(),
            choice,
            outcomes: outcomes.clone(),
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            ts: now_ts(),
            prompt: self.cfg.log_text.then(|| prompt.clone()),
            raw_reply: self.cfg.log_text.then(|| reply.raw.clone()),
        };
        sink.write_line(&LogLine::Trial(record.clone()))?;
        sink.checkpoint(self.completed_runs, (global_index + 1) as u32)?;

        if let Some(outcomes) = outcomes {
            let entries: Vec<(char, f64)> = query
                .listed
                .iter()
                .copied()
                .zip(outcomes.iter().copied())
                .collect();
            self.history.push(HistoryRound {
                context_id: ctx_id.unwrap(),
                entries: entries.clone(),
            });
            agent.observe(&entries, choice);
        }
        Ok(record)
    }

    /// Execute the run from `skip` already-logged trials onward.
    fn execute(
        &mut self,
        agent: &mut dyn ChoiceAgent,
        sink: &mut dyn LogSink,
        skip: usize,
    ) -> Result<()> {
        let n_train = self.plan.train_seq.len();
        for t in 0..n_train {
            if t < skip {
                continue;
            }
            let history_text = self.renderer.render_history(&self.history);
            self.run_trial(agent, sink, Phase::Training, t, t, &history_text)?;
        }
        // the transfer test shows the frozen final training history on every
        // trial; render it once and reuse
        let frozen = self.renderer.render_history(&self.history);
        for j in 0..self.plan.transfer_pairs.len() {
            let global = n_train + j;
            if global < skip {
                continue;
            }
            self.run_trial(agent, sink, Phase::Transfer, j, global, &frozen)?;
        }
        Ok(())
    }
}

fn batch_meta(cfg: &RunConfig, catalog_text: &str) -> LogMeta {
    LogMeta {
        schema_version: LOG_SCHEMA_VERSION,
        task: cfg.task.clone(),
        style: cfg.style,
        agent: cfg.agent.label(),
        n_runs: cfg.n_runs,
        master_seed: cfg.master_seed,
        catalog_sha256: sha256_hex(catalog_text.as_bytes()),
        created: now_ts(),
    }
}

fn drive_batch(
    task: &TaskSpec,
    cfg: &RunConfig,
    agent: &mut dyn ChoiceAgent,
    sink: &mut dyn LogSink,
    existing: Option<&ExperimentLog>,
    catalog_text: &str,
    progress: &mut dyn FnMut(u32, u32),
) -> Result<()> {
    let total_trials = task.total_training_trials() + task.total_transfer_trials();
    let mut start_run = 0u32;
    let mut partial: Option<&RunLog> = None;
    if let Some(log) = existing {
        for run in &log.runs {
            if run.trials.len() == total_trials {
                start_run = run.header.run + 1;
            } else {
                partial = Some(run);
                break;
            }
        }
    } else {
        sink.write_line(&LogLine::Meta(batch_meta(cfg, catalog_text)))?;
    }

    for run in start_run..cfg.n_runs {
        let mut trial_loop = TrialLoop::new(task, cfg, run, run)?;
        agent.reset_run(trial_loop.plan.run_seed);
        let skip = match partial.take() {
            Some(existing_run) if existing_run.header.run == run => {
                if existing_run.header.run_seed != trial_loop.plan.run_seed {
                    return Err(Error::Config(format!(
                        "run {run} in the existing log used seed {}, but this config derives {}",
                        existing_run.header.run_seed, trial_loop.plan.run_seed
                    )));
                }
                trial_loop.replay_logged(agent, &existing_run.trials);
                existing_run.trials.len()
            }
            _ => {
                sink.write_line(&LogLine::Run(trial_loop.header()))?;
                0
            }
        };
        trial_loop.execute(agent, sink, skip)?;
        sink.checkpoint(run + 1, 0)?;
        progress(run + 1, cfg.n_runs);
    }
    Ok(())
}

/// Run the configured batch entirely in memory (no files). Used by the
/// fitting and analysis pipelines for simulation-based checks.
pub fn run_batch_in_memory(tasks: &[TaskSpec], cfg: &RunConfig) -> Result<ExperimentLog> {
    let mut agent = build_agent(&cfg.agent)?;
    run_batch_in_memory_with(tasks, cfg, agent.as_mut())
}

/// In-memory batch with a caller-supplied agent.
pub fn run_batch_in_memory_with(
    tasks: &[TaskSpec],
    cfg: &RunConfig,
    agent: &mut dyn ChoiceAgent,
) -> Result<ExperimentLog> {
    cfg.validate()?;
    let task = find_task(tasks, &cfg.task)?;
    let catalog_text = serde_json::to_string(tasks)?;
    let mut sink = MemorySink {
        meta: None,
        runs: Vec::new(),
    };
    drive_batch(task, cfg, agent, &mut sink, None, &catalog_text, &mut |_, _| {})?;
    Ok(ExperimentLog {
        meta: sink.meta.expect("meta written"),
        runs: sink.runs,
    })
}

/// Execute (or resume) a batch against a JSONL log file. A fresh batch
/// refuses to touch an existing log unless `resume` is set; on resume the
/// existing meta must match the config, completed runs are left untouched,
/// and the partial run continues from its last logged trial.
pub fn run_experiment_batch(
    tasks: &[TaskSpec],
    cfg: &RunConfig,
    out: &Path,
    resume: bool,
) -> Result<BatchSummary> {
    run_experiment_batch_with_progress(tasks, cfg, out, resume, &mut |_, _| {})
}

/// Like [`run_experiment_batch`] but invoking `progress(completed, total)`
/// after each run finishes.
pub fn run_experiment_batch_with_progress(
    tasks: &[TaskSpec],
    cfg: &RunConfig,
    out: &Path,
    resume: bool,
    progress: &mut dyn FnMut(u32, u32),
) -> Result<BatchSummary> {
    cfg.validate()?;
    let task = find_task(tasks, &cfg.task)?;
    let catalog_text = serde_json::to_string(tasks)?;
    let mut agent = build_agent(&cfg.agent)?;

    let existing = if out.exists() {
        if !resume {
            return Err(Error::Config(format!(
                "{} already exists; pass --resume to continue it or --force to overwrite",
                out.display()
            )));
        }
        let log = read_log(out)?;
        let expect = batch_meta(cfg, &catalog_text);
        let m = &log.meta;
        if (m.task.as_str(), m.n_runs, m.master_seed, &m.agent, m.style)
            != (
                expect.task.as_str(),
                expect.n_runs,
                expect.master_seed,
                &expect.agent,
                expect.style,
            )
        {
            return Err(Error::Config(
                "existing log was produced by a different configuration".into(),
            ));
        }
        Some(log)
    } else {
        None
    };

    let mut sink = FileSink::open(out, existing.is_some())?;
    drive_batch(
        task,
        cfg,
        agent.as_mut(),
        &mut sink,
        existing.as_ref(),
        &catalog_text,
        progress,
    )?;

    let log = read_log(out)?;
    Ok(BatchSummary {
        log_path: out.to_path_buf(),
        n_runs: log.runs.len() as u32,
        n_trials: log.n_trials(),
        n_invalid: log.n_invalid(),
        invalid_fraction: log.invalid_fraction(),
    })
}
