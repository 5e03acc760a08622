use std::path::{Path, PathBuf};

use relval_core::agents::{AgentConfig, AgentSpec};
use relval_core::analysis;
use relval_core::cogmodel::{ModelParams, ModelVariant, ReplayOptions};
use relval_core::fitting::{
    self, compare_models, comparison_table, FitFile, OptimizerConfig, FIT_SCHEMA_VERSION,
};
use relval_core::probe as probe_mod;
use relval_core::promptgen::{PromptMode, PromptStyle, StyleVariant};
use relval_core::runner::{self, read_log, sha256_hex, RunConfig};
use relval_core::taskdef::{builtin_catalog_text, parse_task_catalog, TaskSpec};
use relval_core::{Error, Result};

use crate::config::RepoConfig;
use crate::{AnalyzeArgs, CompareArgs, FitArgs, ProbeArgs, RunArgs, TasksArgs};

/// Load the catalog from a flag or fall back to the built-in copy.
/// Returns the raw text too, for provenance hashing.
fn load_tasks(flag: Option<&Path>) -> Result<(Vec<TaskSpec>, String)> {
    let text = match flag {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Catalog(format!("cannot read {}: {e}", path.display())))?,
        None => builtin_catalog_text().to_string(),
    };
    let tasks = parse_task_catalog(&text)?;
    Ok((tasks, text))
}

fn parse_style(style: &str, mode: &str) -> Result<PromptStyle> {
    let variant: StyleVariant = style.parse()?;
    let mode = match mode.to_ascii_lowercase().as_str() {
        "chat" => PromptMode::Chat,
        "completion" => PromptMode::Completion,
        other => return Err(Error::Config(format!("unknown prompt mode {other}"))),
    };
    Ok(PromptStyle { variant, mode })
}

fn default_sim_params() -> ModelParams {
    ModelParams {
        omega: 0.5,
        alpha_con: 0.5,
        alpha_dis: 0.2,
        beta_train: 8.0,
        beta_transfer: 8.0,
        bias: 0.5,
    }
}

fn parse_sim_params(text: &str) -> Result<ModelParams> {
    let mut p = default_sim_params();
    for part in text.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| {
            Error::Config(format!("sim params expect key=value entries, got {part:?}"))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("sim param {key}: {e}")))?;
        match key.trim() {
            "omega" => p.omega = value,
            "alpha_con" => p.alpha_con = value,
            "alpha_dis" => p.alpha_dis = value,
            "beta_train" => p.beta_train = value,
            "beta_transfer" => p.beta_transfer = value,
            "beta" => {
                p.beta_train = value;
                p.beta_transfer = value;
            }
            "bias" => p.bias = value,
            other => return Err(Error::Config(format!("unknown sim param {other}"))),
        }
    }
    Ok(p)
}

fn parse_agent(
    spec: &str,
    sim_params: Option<&str>,
    seed: u64,
    repo: &RepoConfig,
) -> Result<AgentConfig> {
    let spec = match spec {
        "ideal" => AgentSpec::Ideal,
        "uniform" => AgentSpec::UniformRandom,
        other => {
            if let Some(variant) = other.strip_prefix("sim:") {
                let variant = ModelVariant::from_label(variant)
                    .map_err(|e| Error::Config(e.to_string()))?;
                let params = match sim_params {
                    Some(text) => parse_sim_params(text)?,
                    None => default_sim_params(),
                };
                AgentSpec::RlSimulated { variant, params }
            } else if let Some(profile) = other.strip_prefix("llm:") {
                AgentSpec::LlmEndpoint(repo.endpoint(profile)?.clone())
            } else {
                return Err(Error::Config(format!(
                    "unknown agent {other}; expected ideal | uniform | sim:<variant> | llm:<profile>"
                )));
            }
        }
    };
    Ok(AgentConfig { spec, seed })
}

fn configure_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // a second invocation in-process is fine to ignore
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Refuse to clobber an existing output unless `--force`.
fn guard_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        if force {
            std::fs::remove_file(path)?;
        } else {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            )));
        }
    }
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Record the full provenance of a command next to its output.
fn write_manifest(
    out: &Path,
    command: &str,
    flags: &impl serde::Serialize,
    input_hashes: &[(&str, String)],
) -> Result<()> {
    let manifest = serde_json::json!({
        "schema_version": 1,
        "command": command,
        "flags": flags,
        "input_sha256": input_hashes
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "created": chrono::Utc::now().to_rfc3339(),
    });
    std::fs::write(manifest_path(out), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn run(args: RunArgs) -> Result<()> {
    configure_jobs(args.jobs);
    let repo = RepoConfig::resolve(args.config.as_deref())?;
    let (tasks, catalog_text) = load_tasks(args.tasks.as_deref())?;
    let style = parse_style(&args.style, &args.mode)?;
    let agent = parse_agent(&args.agent, args.sim_params.as_deref(), args.seed, &repo)?;
    let cfg = RunConfig {
        task: args.task.clone(),
        style,
        agent,
        n_runs: args.runs,
        master_seed: args.seed,
        log_text: args.log_text,
    };
    if args.force && args.out.exists() {
        std::fs::remove_file(&args.out)?;
        let ckpt = runner::checkpoint_path(&args.out);
        if ckpt.exists() {
            std::fs::remove_file(ckpt)?;
        }
    }
    eprintln!(
        "running {} x {} ({} / {}) -> {}",
        args.runs,
        args.task,
        args.style,
        cfg.agent.label(),
        args.out.display()
    );
    let summary = runner::run_experiment_batch_with_progress(
        &tasks,
        &cfg,
        &args.out,
        args.resume,
        &mut |done, total| eprintln!("  run {done}/{total} complete"),
    )?;
    write_manifest(
        &args.out,
        "run",
        &args,
        &[("tasks", sha256_hex(catalog_text.as_bytes()))],
    )?;
    println!(
        "{}: {} runs, {} trials, {} invalid replies ({:.2}%)",
        summary.log_path.display(),
        summary.n_runs,
        summary.n_trials,
        summary.n_invalid,
        100.0 * summary.invalid_fraction
    );
    Ok(())
}

pub fn fit(args: FitArgs) -> Result<()> {
    configure_jobs(args.jobs);
    guard_output(&args.out, args.force)?;
    let log = read_log(&args.log)?;
    let runs = log.replay_runs();
    let replay = ReplayOptions::default();
    let cfg = OptimizerConfig {
        n_starts: args.starts,
        seed: args.seed,
        ..Default::default()
    };
    let fits = if args.all {
        fitting::fit_all_variants(&runs, &replay, &cfg)?
    } else {
        let label = args.variant.as_deref().ok_or_else(|| {
            Error::Config("pass --variant <label> or --all".into())
        })?;
        let variant = ModelVariant::from_label(label).map_err(|e| Error::Config(e.to_string()))?;
        vec![fitting::fit_model(variant, &runs, &replay, &cfg)?]
    };
    for f in &fits {
        println!(
            "{:<9} k={} nll={:.4} bic={:.4} (best start {}/{})",
            f.variant, f.k, f.nll, f.bic, f.best_start, f.n_starts
        );
    }
    let file = FitFile {
        schema_version: FIT_SCHEMA_VERSION,
        log_sha256: hash_file(&args.log)?,
        fits,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&file)?)?;
    write_manifest(&args.out, "fit", &args, &[("log", file.log_sha256.clone())])?;
    Ok(())
}

fn read_fit_file(path: &Path) -> Result<FitFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: FitFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if file.schema_version != FIT_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "fit file schema_version {} unsupported (expected {FIT_SCHEMA_VERSION}); re-run `fit`",
            file.schema_version
        )));
    }
    Ok(file)
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let file = read_fit_file(&args.fits)?;
    let cmp = compare_models(&file.fits)?;
    print!("{}", comparison_table(&file.fits, &cmp));
    if let Some(out) = args.out.clone() {
        let mut csv = String::from("rank,variant,k,nll,bic,delta_bic,best\n");
        for (rank, &i) in cmp.order.iter().enumerate() {
            let f = &file.fits[i];
            csv.push_str(&format!(
                "{rank},{},{},{:.6},{:.6},{:.6},{}\n",
                f.variant,
                f.k,
                f.nll,
                f.bic,
                cmp.delta_bic[rank],
                if rank == 0 { "yes" } else { "no" }
            ));
        }
        std::fs::write(&out, csv)?;
        write_manifest(&out, "compare", &args, &[("fits", hash_file(&args.fits)?)])?;
    }
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    guard_output(&args.out, args.force)?;
    let (tasks, _) = load_tasks(args.tasks.as_deref())?;
    let mut hashes: Vec<(&str, String)> = Vec::new();
    let mut csv = String::new();
    match args.metric.as_str() {
        "accuracy" => {
            for (i, log_path) in args.log.iter().enumerate() {
                let log = read_log(log_path)?;
                let task = relval_core::taskdef::find_task(&tasks, &log.meta.task)?;
                let table = analysis::accuracy_csv(&log, task);
                if i == 0 {
                    csv.push_str(&table);
                } else {
                    // drop the repeated header
                    csv.push_str(table.split_once('\n').map(|x| x.1).unwrap_or(""));
                }
            }
        }
        "bias" => {
            let mut rows = Vec::new();
            for log_path in &args.log {
                let log = read_log(log_path)?;
                let task = relval_core::taskdef::find_task(&tasks, &log.meta.task)?;
                rows.push(analysis::bias_summary(&log, task)?);
            }
            for r in &rows {
                println!(
                    "{:<12} {:<8} ideal={:.3} mean={:.3} ci=[{:.3},{:.3}] bias={}",
                    r.style,
                    r.task,
                    r.ideal,
                    r.mean,
                    r.ci95.0,
                    r.ci95.1,
                    if r.bias { "yes" } else { "no" }
                );
            }
            csv = analysis::bias_csv(&rows);
        }
        "predictive" => {
            let fit_path = args.fit.as_deref().ok_or_else(|| {
                Error::Config("--metric predictive needs --fit <fits.json>".into())
            })?;
            let file = read_fit_file(fit_path)?;
            hashes.push(("fits", hash_file(fit_path)?));
            let chosen = match &args.variant {
                Some(label) => file
                    .fits
                    .iter()
                    .find(|f| f.variant.eq_ignore_ascii_case(label))
                    .ok_or_else(|| {
                        Error::Config(format!("variant {label} not present in the fit file"))
                    })?,
                None => {
                    let cmp = compare_models(&file.fits)?;
                    &file.fits[cmp.order[0]]
                }
            };
            let log_path = args.log.first().expect("clap requires at least one log");
            let log = read_log(log_path)?;
            let task = relval_core::taskdef::find_task(&tasks, &log.meta.task)?;
            let observed = analysis::choice_patterns(&log, task);
            let simulated = analysis::posterior_predictive(
                &tasks,
                &log.meta.task,
                log.meta.style,
                chosen.model_variant(),
                chosen.params,
                args.sims,
                args.seed,
            )?;
            println!(
                "predictive check from {} ({} simulated runs)",
                chosen.variant, args.sims
            );
            csv = analysis::predictive_csv(&observed, &simulated);
        }
        other => {
            return Err(Error::Config(format!(
                "unknown metric {other}; expected accuracy | bias | predictive"
            )))
        }
    }
    for log_path in &args.log {
        hashes.push(("log", hash_file(log_path)?));
    }
    std::fs::write(&args.out, csv)?;
    write_manifest(&args.out, "analyze", &args, &hashes)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn probe(args: ProbeArgs) -> Result<()> {
    configure_jobs(args.jobs);
    guard_output(&args.out, args.force)?;
    let (tasks, _) = load_tasks(args.tasks.as_deref())?;
    let task = relval_core::taskdef::find_task(&tasks, &args.task)?;
    let acts = probe_mod::ActivationMatrix::read(&args.acts)?;
    let pairs = probe_mod::read_trial_pairs(&args.trials)?;
    let predictors = probe_mod::value_difference_predictors(&pairs, task)?;
    let results = probe_mod::unit_regressions(&acts, &predictors)?;
    println!(
        "{} units at p < {:.3e}:",
        results.len(),
        probe_mod::critical_p(acts.cols)
    );
    print!("{}", probe_mod::counts_csv(&results));
    let sizes = probe_mod::effect_size_summary(&results)?;
    println!(
        "mean |slope|: abs={:.4} rel={:.4} (paired diff {:.4})",
        sizes.mean_abs_slope_abs, sizes.mean_abs_slope_rel, sizes.paired_diff
    );
    std::fs::write(&args.out, probe_mod::units_csv(&results))?;
    let counts_out = {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".counts.csv");
        PathBuf::from(p)
    };
    std::fs::write(&counts_out, probe_mod::counts_csv(&results))?;
    write_manifest(
        &args.out,
        "probe",
        &args,
        &[
            ("acts", hash_file(&args.acts)?),
            ("trials", hash_file(&args.trials)?),
        ],
    )?;
    Ok(())
}

pub fn tasks(args: TasksArgs) -> Result<()> {
    let (tasks, _) = load_tasks(args.tasks.as_deref())?;
    match args.action.as_str() {
        "list" => {
            for t in &tasks {
                let sizes: Vec<usize> = t.contexts.iter().map(|c| c.members.len()).collect();
                println!(
                    "{:<9} {} options, contexts {:?}, {} training reps, {} transfer trials, {:?}",
                    t.name,
                    t.n_options(),
                    sizes,
                    t.training_reps,
                    t.total_transfer_trials(),
                    t.currency
                );
            }
        }
        "validate" => {
            println!("{} tasks validated", tasks.len());
        }
        other => {
            return Err(Error::Config(format!(
                "unknown action {other}; expected list | validate"
            )))
        }
    }
    Ok(())
}
