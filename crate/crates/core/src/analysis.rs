//! Behavioral metrics over experiment logs: choice accuracy, the
//! higher-relative-value choice rate and its exact ideal-agent baseline,
//! descriptive statistics (means, SEs, normal-approximation CIs, paired
//! contrasts), and posterior predictive simulation from fitted parameters.
//!
//! Exclusion rules mirror the experiment conventions: invalid replies are
//! removed from every metric, transfer pairs with equal expected values are
//! removed from accuracy, and transfer pairs with tied relative values are
//! removed from the bias metric. Equal-EV pairs credit the ideal agent 0.5
//! toward the higher-relative option — the unique symmetric rule.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::agents::{AgentConfig, AgentSpec};
use crate::cogmodel::{ModelParams, ModelVariant, Phase};
use crate::error::{Error, Result};
use crate::promptgen::PromptStyle;
use crate::runner::{run_batch_in_memory, ExperimentLog, RunConfig, TrialRecord};
use crate::taskdef::{
    enumerate_transfer_pairs, relative_value_labels, TaskSpec, REL_TIE_TOL,
};

/// Descriptive summary of one group of per-run values. The CI is the
/// normal approximation `mean ± 1.96 * SE`; both are absent for singleton
/// groups, where they are undefined.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub se: Option<f64>,
    pub ci95: Option<(f64, f64)>,
}

/// Mean, SE, and CI95 of a slice of values.
pub fn summarize(group: &str, values: &[f64]) -> Result<GroupSummary> {
    if values.is_empty() {
        return Err(Error::Analysis(format!("group {group} is empty")));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(GroupSummary {
            group: group.to_string(),
            n,
            mean,
            se: None,
            ci95: None,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();
    Ok(GroupSummary {
        group: group.to_string(),
        n,
        mean,
        se: Some(se),
        ci95: Some((mean - 1.96 * se, mean + 1.96 * se)),
    })
}

/// Paired mean difference (a - b) with CI95 over pairs.
#[derive(Debug, Clone, Serialize)]
pub struct PairedContrast {
    pub n: usize,
    pub mean_diff: f64,
    pub se: Option<f64>,
    pub ci95: Option<(f64, f64)>,
}

pub fn paired_contrast(a: &[f64], b: &[f64]) -> Result<PairedContrast> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Analysis(format!(
            "paired contrast needs equal non-empty groups, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize("diff", &diffs)?;
    Ok(PairedContrast {
        n: s.n,
        mean_diff: s.mean,
        se: s.se,
        ci95: s.ci95,
    })
}

fn option_evs(task: &TaskSpec, rec: &TrialRecord) -> Vec<f64> {
    rec.offered
        .iter()
        .map(|o| task.expected_value(&o.option).expect("option in task"))
        .collect()
}

fn chosen_index(rec: &TrialRecord) -> Option<usize> {
    rec.choice
        .and_then(|c| rec.offered.iter().position(|o| o.letter == c))
}

/// Proportion of reward-maximizing choices per run. Invalid trials are
/// removed; transfer pairs with equal expected values are removed. Runs
/// with no includable trials report `None`.
pub fn choice_accuracy(log: &ExperimentLog, task: &TaskSpec, phase: Phase) -> Vec<Option<f64>> {
    log.runs
        .iter()
        .map(|run| {
            let mut correct = 0usize;
            let mut total = 0usize;
            for rec in run.trials.iter().filter(|t| t.phase == phase) {
                let Some(chosen) = chosen_index(rec) else {
                    continue;
                };
                let evs = option_evs(task, rec);
                let best = evs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let n_best = evs.iter().filter(|&&e| e == best).count();
                if phase == Phase::Transfer && n_best > 1 {
                    continue; // equal expected values: excluded
                }
                total += 1;
                if evs[chosen] == best && n_best == 1 {
                    correct += 1;
                }
            }
            (total > 0).then(|| correct as f64 / total as f64)
        })
        .collect()
}

/// Per-run rate of choosing the option with higher relative value over
/// transfer trials, excluding invalid replies and tied-relative pairs.
/// Runs where every trial is excluded report `None` (missing).
pub fn higher_relative_choice_rate(
    log: &ExperimentLog,
    labels: &BTreeMap<String, f64>,
) -> Vec<Option<f64>> {
    log.runs
        .iter()
        .map(|run| {
            let mut hits = 0usize;
            let mut total = 0usize;
            for rec in run.trials.iter().filter(|t| t.phase == Phase::Transfer) {
                let Some(chosen) = chosen_index(rec) else {
                    continue;
                };
                let ls: Vec<f64> = rec
                    .offered
                    .iter()
                    .map(|o| labels[&o.option])
                    .collect();
                if (ls[0] - ls[1]).abs() <= REL_TIE_TOL {
                    continue; // tied relative values: excluded
                }
                let higher = if ls[0] > ls[1] { 0 } else { 1 };
                total += 1;
                if chosen == higher {
                    hits += 1;
                }
            }
            (total > 0).then(|| hits as f64 / total as f64)
        })
        .collect()
}

/// The rate at which an ideal, reward-maximizing agent chooses the option
/// with higher relative value over the transfer test, by exact enumeration:
/// tied-relative pairs are excluded, equal-EV pairs credit 0.5, and the
/// result is schedule-independent.
pub fn ideal_choice_rate(task: &TaskSpec) -> f64 {
    let labels = relative_value_labels(task);
    let mut credits = 0.0;
    let mut included = 0usize;
    for (a, b) in enumerate_transfer_pairs(task) {
        let (la, lb) = (labels[&a], labels[&b]);
        if (la - lb).abs() <= REL_TIE_TOL {
            continue;
        }
        included += 1;
        let (ea, eb) = (
            task.expected_value(&a).unwrap(),
            task.expected_value(&b).unwrap(),
        );
        if ea == eb {
            credits += 0.5;
        } else {
            let ideal_pick_a = ea > eb;
            let higher_rel_a = la > lb;
            if ideal_pick_a == higher_rel_a {
                credits += 1.0;
            }
        }
    }
    credits / included as f64
}

/// True when the empirical CI sits strictly above the ideal baseline.
pub fn bias_flag(ci95: (f64, f64), ideal: f64) -> bool {
    ci95.0 > ideal
}

/// One row of the bias table (one log = one task x style cell).
#[derive(Debug, Clone, Serialize)]
pub struct BiasRow {
    pub style: String,
    pub task: String,
    pub ideal: f64,
    pub n_runs: usize,
    pub mean: f64,
    pub ci95: (f64, f64),
    pub bias: bool,
}

/// Summarize one log into a bias-table row.
pub fn bias_summary(log: &ExperimentLog, task: &TaskSpec) -> Result<BiasRow> {
    let labels = relative_value_labels(task);
    let rates: Vec<f64> = higher_relative_choice_rate(log, &labels)
        .into_iter()
        .flatten()
        .collect();
    let s = summarize(&task.name, &rates)?;
    let ci95 = s.ci95.ok_or_else(|| {
        Error::Analysis("bias flag needs a CI computed from >= 2 runs".into())
    })?;
    let ideal = ideal_choice_rate(task);
    Ok(BiasRow {
        style: format!("{:?}", log.meta.style.variant).to_lowercase(),
        task: task.name.clone(),
        ideal,
        n_runs: s.n,
        mean: s.mean,
        ci95,
        bias: bias_flag(ci95, ideal),
    })
}

/// Trial-wise correct-choice proportions per training context (index =
/// presentation number within the context) and per-option transfer choice
/// rates (times chosen / times available, invalid trials removed).
#[derive(Debug, Clone, Serialize)]
pub struct ChoicePatterns {
    pub learning_curves: BTreeMap<u32, Vec<f64>>,
    pub transfer_rates: BTreeMap<String, f64>,
}

pub fn choice_patterns(log: &ExperimentLog, task: &TaskSpec) -> ChoicePatterns {
    let reps = task.training_reps as usize;
    // curves[ctx][presentation] = (correct, total)
    let mut curves: BTreeMap<u32, Vec<(usize, usize)>> = task
        .contexts
        .iter()
        .map(|c| (c.id, vec![(0usize, 0usize); reps]))
        .collect();
    let mut chosen: BTreeMap<String, usize> =
        task.options.iter().map(|o| (o.id.clone(), 0)).collect();
    let mut available: BTreeMap<String, usize> =
        task.options.iter().map(|o| (o.id.clone(), 0)).collect();

    for run in &log.runs {
        let mut presentation: BTreeMap<u32, usize> = BTreeMap::new();
        for rec in &run.trials {
            match rec.phase {
                Phase::Training => {
                    let ctx = rec.context_id.expect("training record has context");
                    let k = *presentation.get(&ctx).unwrap_or(&0);
                    presentation.insert(ctx, k + 1);
                    if let Some(idx) = chosen_index(rec) {
                        let evs = option_evs(task, rec);
                        let best = evs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let cell = &mut curves.get_mut(&ctx).unwrap()[k];
                        cell.1 += 1;
                        if evs[idx] == best {
                            cell.0 += 1;
                        }
                    }
                }
                Phase::Transfer => {
                    if let Some(idx) = chosen_index(rec) {
                        for o in &rec.offered {
                            *available.get_mut(&o.option).unwrap() += 1;
                        }
                        let picked = &rec.offered[idx].option;
                        *chosen.get_mut(picked).unwrap() += 1;
                    }
                }
            }
        }
    }

    ChoicePatterns {
        learning_curves: curves
            .into_iter()
            .map(|(ctx, cells)| {
                (
                    ctx,
                    cells
                        .into_iter()
                        .map(|(c, t)| if t == 0 { f64::NAN } else { c as f64 / t as f64 })
                        .collect(),
                )
            })
            .collect(),
        transfer_rates: chosen
            .into_iter()
            .map(|(id, c)| {
                let avail = available[&id];
                (id, if avail == 0 { f64::NAN } else { c as f64 / avail as f64 })
            })
            .collect(),
    }
}

/// Simulate `n_sims` runs from fitted parameters through the identical
/// experiment pipeline and emit the resulting choice patterns.
pub fn posterior_predictive(
    tasks: &[TaskSpec],
    task_name: &str,
    style: PromptStyle,
    variant: ModelVariant,
    params: ModelParams,
    n_sims: u32,
    seed: u64,
) -> Result<ChoicePatterns> {
    let cfg = RunConfig {
        task: task_name.to_string(),
        style,
        agent: AgentConfig {
            spec: AgentSpec::RlSimulated { variant, params },
            seed: 0,
        },
        n_runs: n_sims,
        master_seed: seed,
        log_text: false,
    };
    let log = run_batch_in_memory(tasks, &cfg)?;
    let task = crate::taskdef::find_task(tasks, task_name)?;
    Ok(choice_patterns(&log, task))
}

// ---------------------------------------------------------------------------
// CSV emission

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Per-run accuracy table: one row per (run, phase).
pub fn accuracy_csv(log: &ExperimentLog, task: &TaskSpec) -> String {
    let mut out = String::from("task,style,run,phase,accuracy\n");
    for (phase, name) in [(Phase::Training, "training"), (Phase::Transfer, "transfer")] {
        for (run, acc) in choice_accuracy(log, task, phase).iter().enumerate() {
            out.push_str(&format!(
                "{},{:?},{run},{name},{}\n",
                task.name,
                log.meta.style.variant,
                fmt_opt(*acc)
            ));
        }
    }
    out
}

/// Bias table in the published layout: style, task, ideal, mean, CI, flag.
pub fn bias_csv(rows: &[BiasRow]) -> String {
    let mut out = String::from("style,task,ideal,n_runs,mean,ci_low,ci_high,bias\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.3},{},{:.3},{:.3},{:.3},{}\n",
            r.style,
            r.task,
            r.ideal,
            r.n_runs,
            r.mean,
            r.ci95.0,
            r.ci95.1,
            if r.bias { "yes" } else { "no" }
        ));
    }
    out
}

/// Predictive-fit table: learning curves then transfer rates.
pub fn predictive_csv(observed: &ChoicePatterns, simulated: &ChoicePatterns) -> String {
    let mut out = String::from("section,key,index,observed,simulated\n");
    for (ctx, obs) in &observed.learning_curves {
        let sim = &simulated.learning_curves[ctx];
        for (i, (o, s)) in obs.iter().zip(sim).enumerate() {
            out.push_str(&format!("learning_curve,{ctx},{i},{o:.6},{s:.6}\n"));
        }
    }
    for (opt, o) in &observed.transfer_rates {
        let s = simulated.transfer_rates[opt];
        out.push_str(&format!("transfer_rate,{opt},,{o:.6},{s:.6}\n"));
    }
    out
}
