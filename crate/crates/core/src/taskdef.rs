//! Bandit task definitions: option reward distributions grouped into fixed
//! training contexts, exact-frequency reward schedules, phase enumeration,
//! and analytic relative-value scores.
//!
//! Task parameters live in a checked data file (`data/tasks.json`), not in
//! code, so the engine stays task-agnostic and the shipped catalog is
//! auditable. All outputs are pure functions of `(task, seed)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::rng;

/// Schema version accepted by the catalog loader.
pub const TASK_SCHEMA_VERSION: u32 = 1;

/// Two relative-value scores within this tolerance are declared tied and
/// the pair is excluded from bias analyses downstream.
pub const REL_TIE_TOL: f64 = 1e-9;

/// Value role of an option inside its training context (by expected value).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    L,
    M,
    H,
}

/// Reward distribution of a single option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RewardDist {
    /// Two-point distribution: `high` with probability `p`, else `low`.
    Bernoulli { high: f64, p: f64, low: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl RewardDist {
    pub fn expected_value(&self) -> f64 {
        match *self {
            RewardDist::Bernoulli { high, p, low } => p * high + (1.0 - p) * low,
            RewardDist::Gaussian { mean, .. } => mean,
        }
    }

    /// True when every outcome this distribution can produce is integral.
    fn integral_support(&self) -> bool {
        match *self {
            RewardDist::Bernoulli { high, low, .. } => {
                high.fract() == 0.0 && low.fract() == 0.0
            }
            RewardDist::Gaussian { .. } => false,
        }
    }
}

/// P(X > Y) for independent outcomes of two options, computed analytically.
pub fn prob_exceeds(x: &RewardDist, y: &RewardDist) -> f64 {
    fn std_normal_cdf(z: f64) -> f64 {
        statrs::distribution::Normal::standard().cdf(z)
    }
    match (x, y) {
        (
            RewardDist::Bernoulli {
                high: xh,
                p: xp,
                low: xl,
            },
            RewardDist::Bernoulli {
                high: yh,
                p: yp,
                low: yl,
            },
        ) => {
            let mut total = 0.0;
            for (xv, xw) in [(xh, *xp), (xl, 1.0 - *xp)] {
                for (yv, yw) in [(yh, *yp), (yl, 1.0 - *yp)] {
                    if xv > yv {
                        total += xw * yw;
                    }
                }
            }
            total
        }
        (
            RewardDist::Gaussian { mean: mx, sd: sx },
            RewardDist::Gaussian { mean: my, sd: sy },
        ) => std_normal_cdf((mx - my) / (sx * sx + sy * sy).sqrt()),
        (RewardDist::Bernoulli { high, p, low }, RewardDist::Gaussian { mean, sd }) => {
            p * std_normal_cdf((high - mean) / sd) + (1.0 - p) * std_normal_cdf((low - mean) / sd)
        }
        (RewardDist::Gaussian { .. }, RewardDist::Bernoulli { .. }) => {
            // P(X > Y) = 1 - P(Y > X) for a continuous X (no tie mass).
            1.0 - prob_exceeds(y, x)
        }
    }
}

/// Currency in which a task's rewards are denominated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Currency {
    Euros,
    Dollars,
    Points,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptionDef {
    pub id: String,
    pub dist: RewardDist,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextMember {
    pub option: String,
    pub role: Role,
}

/// A fixed training context: the 2 (binary) or 3 (ternary) options that are
/// always presented together during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingContext {
    pub id: u32,
    pub members: Vec<ContextMember>,
}

/// One bandit task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub currency: Currency,
    pub training_reps: u32,
    pub transfer_reps: u32,
    pub options: Vec<OptionDef>,
    pub contexts: Vec<TrainingContext>,
    /// Instruction block shown verbatim at the top of every prompt.
    pub instructions: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskCatalog {
    pub schema_version: u32,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSpec {
    pub fn n_options(&self) -> usize {
        self.options.len()
    }

    pub fn option_index(&self, id: &str) -> Option<usize> {
        self.options.iter().position(|o| o.id == id)
    }

    pub fn dist(&self, id: &str) -> Option<&RewardDist> {
        self.options
            .iter()
            .find(|o| o.id == id)
            .map(|o| &o.dist)
    }

    pub fn expected_value(&self, id: &str) -> Option<f64> {
        self.dist(id).map(RewardDist::expected_value)
    }

    pub fn context(&self, id: u32) -> Option<&TrainingContext> {
        self.contexts.iter().find(|c| c.id == id)
    }

    pub fn context_of_option(&self, option: &str) -> Option<&TrainingContext> {
        self.contexts
            .iter()
            .find(|c| c.members.iter().any(|m| m.option == option))
    }

    pub fn total_training_trials(&self) -> usize {
        self.contexts.len() * self.training_reps as usize
    }

    pub fn total_transfer_trials(&self) -> usize {
        let n = self.n_options();
        n * (n - 1) / 2 * self.transfer_reps as usize
    }

    /// Whether reward amounts should render as integers (point tasks and
    /// tasks whose outcome supports are all whole numbers).
    pub fn amounts_integral(&self) -> bool {
        self.options.iter().all(|o| o.dist.integral_support())
    }

    /// Minimum and maximum expected value over the task's options.
    pub fn ev_range(&self) -> (f64, f64) {
        let evs = self.options.iter().map(|o| o.dist.expected_value());
        let min = evs.clone().fold(f64::INFINITY, f64::min);
        let max = evs.fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }

    fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Catalog(format!("task {}: {msg}", self.name)));
        if self.training_reps == 0 {
            return err("training_reps must be >= 1".into());
        }
        if self.transfer_reps == 0 {
            return err("transfer_reps must be >= 1".into());
        }
        let mut ids = HashSet::new();
        for opt in &self.options {
            if !ids.insert(opt.id.as_str()) {
                return err(format!("options: duplicate id {}", opt.id));
            }
            match opt.dist {
                RewardDist::Bernoulli { high, p, low } => {
                    if !(0.0..=1.0).contains(&p) {
                        return err(format!("options.{}.dist.p: {p} not in [0, 1]", opt.id));
                    }
                    if high <= low {
                        return err(format!(
                            "options.{}.dist: bernoulli needs two support points with high > low",
                            opt.id
                        ));
                    }
                }
                RewardDist::Gaussian { sd, .. } => {
                    if sd <= 0.0 {
                        return err(format!("options.{}.dist.sd: {sd} must be > 0", opt.id));
                    }
                }
            }
        }
        let mut ctx_ids = HashSet::new();
        let mut assigned: HashMap<&str, u32> = HashMap::new();
        for ctx in &self.contexts {
            if !ctx_ids.insert(ctx.id) {
                return err(format!("contexts: duplicate id {}", ctx.id));
            }
            if !(2..=3).contains(&ctx.members.len()) {
                return err(format!(
                    "contexts.{}.members: size {} not in {{2, 3}}",
                    ctx.id,
                    ctx.members.len()
                ));
            }
            let mut roles = HashSet::new();
            for m in &ctx.members {
                if !ids.contains(m.option.as_str()) {
                    return err(format!(
                        "contexts.{}.members: unknown option {}",
                        ctx.id, m.option
                    ));
                }
                if let Some(other) = assigned.insert(m.option.as_str(), ctx.id) {
                    return err(format!(
                        "contexts: option {} assigned to both context {other} and context {}",
                        m.option, ctx.id
                    ));
                }
                if !roles.insert(m.role) {
                    return err(format!("contexts.{}.members: duplicate role {:?}", ctx.id, m.role));
                }
            }
            // expected values must respect role order L < M < H
            let mut by_role: Vec<(Role, f64)> = ctx
                .members
                .iter()
                .map(|m| {
                    let ev = self.expected_value(&m.option).unwrap();
                    (m.role, ev)
                })
                .collect();
            by_role.sort_by_key(|(r, _)| *r);
            for pair in by_role.windows(2) {
                if pair[0].1 >= pair[1].1 {
                    return err(format!(
                        "contexts.{}: role order violated ({:?} ev {} >= {:?} ev {})",
                        ctx.id, pair[0].0, pair[0].1, pair[1].0, pair[1].1
                    ));
                }
            }
        }
        for opt in &self.options {
            if !assigned.contains_key(opt.id.as_str()) {
                return err(format!(
                    "options.{}: not a member of any context",
                    opt.id
                ));
            }
        }
        Ok(())
    }
}

/// Parse and validate a task catalog document.
pub fn parse_task_catalog(text: &str) -> Result<Vec<TaskSpec>> {
    let catalog: TaskCatalog = serde_json::from_str(text)
        .map_err(|e| Error::Catalog(format!("parse failure: {e}")))?;
    if catalog.schema_version != TASK_SCHEMA_VERSION {
        return Err(Error::Catalog(format!(
            "schema_version {} unsupported (expected {TASK_SCHEMA_VERSION}); \
             re-export the catalog against the current schema",
            catalog.schema_version
        )));
    }
    let mut names = HashSet::new();
    for task in &catalog.tasks {
        if !names.insert(task.name.as_str()) {
            return Err(Error::Catalog(format!("duplicate task name {}", task.name)));
        }
        task.validate()?;
    }
    Ok(catalog.tasks)
}

/// Load a task catalog from a file.
pub fn load_task_catalog(path: &Path) -> Result<Vec<TaskSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Catalog(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_task_catalog(&text)
}

/// The catalog shipped with this crate (`data/tasks.json`), embedded at
/// compile time.
pub fn builtin_catalog_text() -> &'static str {
    include_str!("../data/tasks.json")
}

/// Parsed and validated copy of the shipped catalog.
pub fn builtin_catalog() -> Vec<TaskSpec> {
    parse_task_catalog(builtin_catalog_text()).expect("shipped catalog is valid")
}

/// Find a task by name.
pub fn find_task<'a>(tasks: &'a [TaskSpec], name: &str) -> Result<&'a TaskSpec> {
    tasks
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Catalog(format!("unknown task {name}")))
}

/// How to handle `p * training_reps` that is not an integer when building
/// exact-frequency Bernoulli schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingPolicy {
    /// Error out unless every Bernoulli count is integral.
    #[default]
    RequireExact,
    /// Round the high-outcome count to the nearest integer.
    Nearest,
}

/// Realized per-option reward sequences for one run's training phase.
#[derive(Debug, Clone)]
pub struct RewardSchedule {
    pub seed: u64,
    /// Aligned with `TaskSpec::options`; each inner vec has `training_reps`
    /// entries. The t-th entries of a context's members are revealed
    /// together on that context's t-th presentation.
    pub rewards: Vec<Vec<f64>>,
}

impl RewardSchedule {
    pub fn for_option(&self, task: &TaskSpec, id: &str) -> Option<&[f64]> {
        task.option_index(id).map(|i| self.rewards[i].as_slice())
    }
}

/// Build the training-phase reward schedule. Bernoulli options receive an
/// exact-frequency multiset (count of high outcomes = p * reps) in seeded
/// shuffled order; Gaussian options receive seeded i.i.d. draws.
pub fn build_reward_schedule(
    task: &TaskSpec,
    seed: u64,
    rounding: RoundingPolicy,
) -> Result<RewardSchedule> {
    let reps = task.training_reps as usize;
    let schedule_seed = rng::stream(seed, rng::STREAM_SCHEDULE);
    let mut rewards = Vec::with_capacity(task.options.len());
    for (idx, opt) in task.options.iter().enumerate() {
        let mut rng = rng::rng_from(rng::derive(schedule_seed, idx as u64));
        let seq = match opt.dist {
            RewardDist::Bernoulli { high, p, low } => {
                let exact = p * reps as f64;
                let n_high = if (exact - exact.round()).abs() < 1e-6 {
                    exact.round() as usize
                } else {
                    match rounding {
                        RoundingPolicy::RequireExact => {
                            return Err(Error::Schedule(format!(
                                "option {}: p * training_reps = {exact} is not an integer; \
                                 pass an explicit rounding policy to proceed",
                                opt.id
                            )))
                        }
                        RoundingPolicy::Nearest => exact.round() as usize,
                    }
                };
                let mut seq = vec![high; n_high];
                seq.extend(std::iter::repeat(low).take(reps - n_high));
                seq.shuffle(&mut rng);
                seq
            }
            RewardDist::Gaussian { mean, sd } => {
                let normal = Normal::new(mean, sd)
                    .map_err(|e| Error::Schedule(format!("option {}: {e}", opt.id)))?;
                (0..reps).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        rewards.push(seq);
    }
    Ok(RewardSchedule { seed, rewards })
}

/// Seeded interleaving of the training phase: each context id appears
/// exactly `training_reps` times in uniformly shuffled order.
pub fn training_sequence(task: &TaskSpec, seed: u64) -> Vec<u32> {
    let mut seq: Vec<u32> = task
        .contexts
        .iter()
        .flat_map(|c| std::iter::repeat(c.id).take(task.training_reps as usize))
        .collect();
    let mut rng = rng::rng_from(rng::stream(seed, rng::STREAM_TRAIN_ORDER));
    seq.shuffle(&mut rng);
    seq
}

/// All C(n, 2) unordered option pairs, each repeated `transfer_reps` times,
/// in enumeration order. Callers shuffle with their own seed.
pub fn enumerate_transfer_pairs(task: &TaskSpec) -> Vec<(String, String)> {
    let mut pairs = Vec::with_capacity(task.total_transfer_trials());
    for i in 0..task.options.len() {
        for j in (i + 1)..task.options.len() {
            for _ in 0..task.transfer_reps {
                pairs.push((task.options[i].id.clone(), task.options[j].id.clone()));
            }
        }
    }
    pairs
}

/// Relative-value score per option: the probability that its outcome
/// strictly exceeds a same-context partner's outcome, averaged over
/// partners. Computed from the generative distributions, so scores are
/// schedule-independent.
pub fn relative_value_labels(task: &TaskSpec) -> BTreeMap<String, f64> {
    let mut labels = BTreeMap::new();
    for ctx in &task.contexts {
        for m in &ctx.members {
            let dist = task.dist(&m.option).unwrap();
            let partners: Vec<&RewardDist> = ctx
                .members
                .iter()
                .filter(|o| o.option != m.option)
                .map(|o| task.dist(&o.option).unwrap())
                .collect();
            let score = partners
                .iter()
                .map(|p| prob_exceeds(dist, p))
                .sum::<f64>()
                / partners.len() as f64;
            labels.insert(m.option.clone(), score);
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Vec<TaskSpec> {
        builtin_catalog()
    }

    #[test]
    fn shipped_catalog_matches_published_structure() {
        let tasks = catalog();
        assert_eq!(tasks.len(), 5);
        let t = |n: &str| find_task(&tasks, n).unwrap();

        let hw = t("HW2023a");
        assert_eq!(hw.n_options(), 8);
        assert_eq!(hw.contexts.len(), 4);
        assert!(hw.contexts.iter().all(|c| c.members.len() == 2));
        assert_eq!(hw.training_reps, 15);
        assert_eq!(hw.currency, Currency::Dollars);
        assert!(hw
            .options
            .iter()
            .all(|o| matches!(o.dist, RewardDist::Gaussian { .. })));

        let bp = t("BP2023");
        assert_eq!(bp.n_options(), 10);
        let sizes: Vec<usize> = bp.contexts.iter().map(|c| c.members.len()).collect();
        assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 2);
        assert_eq!(sizes.iter().filter(|&&s| s == 3).count(), 2);
        assert_eq!(bp.total_transfer_trials(), 45);

        assert_eq!(t("B2018").total_training_trials(), 48);
        assert_eq!(t("V2023").total_training_trials(), 60);
        assert_eq!(t("V2023").total_transfer_trials(), 12);
        assert_eq!(t("HW2023b").total_transfer_trials(), 28);
    }

    #[test]
    fn option_in_two_contexts_is_rejected() {
        let mut text: serde_json::Value =
            serde_json::from_str(builtin_catalog_text()).unwrap();
        // point HW2023a context 2's low slot at option 1L, which already
        // belongs to context 1 (role order stays valid: 15 < 24)
        text["tasks"][2]["contexts"][1]["members"][0]["option"] = "1L".into();
        let err = parse_task_catalog(&text.to_string()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("assigned to both"), "{msg}");
        assert!(msg.contains("1L"), "{msg}");
    }

    #[test]
    fn role_order_violation_is_rejected() {
        let mut text: serde_json::Value =
            serde_json::from_str(builtin_catalog_text()).unwrap();
        // swap the roles of V2023 context 1 so L has the higher EV
        text["tasks"][1]["contexts"][0]["members"][0]["role"] = "H".into();
        text["tasks"][1]["contexts"][0]["members"][1]["role"] = "L".into();
        let err = parse_task_catalog(&text.to_string()).unwrap_err();
        assert!(err.to_string().contains("role order"), "{err}");
    }

    #[test]
    fn unsupported_schema_version_is_rejected() {
        let mut text: serde_json::Value =
            serde_json::from_str(builtin_catalog_text()).unwrap();
        text["schema_version"] = 99.into();
        let err = parse_task_catalog(&text.to_string()).unwrap_err();
        assert!(err.to_string().contains("schema_version 99"), "{err}");
    }

    #[test]
    fn bernoulli_schedule_has_exact_frequencies() {
        // a p = 0.5 option over 30 reps must produce exactly 15 of each
        let task = TaskSpec {
            name: "synthetic".into(),
            currency: Currency::Points,
            training_reps: 30,
            transfer_reps: 1,
            options: vec![
                OptionDef {
                    id: "a".into(),
                    dist: RewardDist::Bernoulli {
                        high: 1.0,
                        p: 0.5,
                        low: 0.0,
                    },
                },
                OptionDef {
                    id: "b".into(),
                    dist: RewardDist::Bernoulli {
                        high: 1.0,
                        p: 0.9,
                        low: 0.0,
                    },
                },
            ],
            contexts: vec![TrainingContext {
                id: 1,
                members: vec![
                    ContextMember {
                        option: "a".into(),
                        role: Role::L,
                    },
                    ContextMember {
                        option: "b".into(),
                        role: Role::H,
                    },
                ],
            }],
            instructions: vec![],
        };
        for seed in 0..20 {
            let s = build_reward_schedule(&task, seed, RoundingPolicy::default()).unwrap();
            let ones = s.rewards[0].iter().filter(|&&r| r == 1.0).count();
            assert_eq!(ones, 15);
            let ones_b = s.rewards[1].iter().filter(|&&r| r == 1.0).count();
            assert_eq!(ones_b, 27);
        }
    }

    #[test]
    fn shipped_bernoulli_tasks_have_integral_counts() {
        for task in catalog() {
            build_reward_schedule(&task, 1234, RoundingPolicy::RequireExact).unwrap();
        }
    }

    #[test]
    fn non_integral_count_demands_rounding_policy() {
        let tasks = catalog();
        let mut task = find_task(&tasks, "V2023").unwrap().clone();
        task.training_reps = 7; // 0.9 * 7 = 6.3
        let err = build_reward_schedule(&task, 0, RoundingPolicy::RequireExact).unwrap_err();
        assert!(err.to_string().contains("rounding policy"), "{err}");
        let s = build_reward_schedule(&task, 0, RoundingPolicy::Nearest).unwrap();
        assert_eq!(s.rewards[1].iter().filter(|&&r| r == 1.0).count(), 6);
    }

    #[test]
    fn schedules_are_deterministic_in_task_and_seed() {
        let tasks = catalog();
        let task = find_task(&tasks, "HW2023a").unwrap();
        let a = build_reward_schedule(task, 99, RoundingPolicy::default()).unwrap();
        let b = build_reward_schedule(task, 99, RoundingPolicy::default()).unwrap();
        assert_eq!(a.rewards, b.rewards);
        let c = build_reward_schedule(task, 100, RoundingPolicy::default()).unwrap();
        assert_ne!(a.rewards, c.rewards);
    }

    #[test]
    fn gaussian_sample_means_concentrate_around_mu() {
        // Monte Carlo over 1000 seeds: a N(mu, 1) option's 15-draw sample
        // mean should land within mu +/- 1.0 nearly always (4 SEs).
        let tasks = catalog();
        let task = find_task(&tasks, "HW2023a").unwrap();
        let mu = task.expected_value("3H").unwrap();
        let idx = task.option_index("3H").unwrap();
        let mut within = 0;
        for seed in 0..1000u64 {
            let s = build_reward_schedule(task, seed, RoundingPolicy::default()).unwrap();
            let mean = s.rewards[idx].iter().sum::<f64>() / s.rewards[idx].len() as f64;
            if (mean - mu).abs() <= 1.0 {
                within += 1;
            }
        }
        assert!(within >= 990, "only {within}/1000 seeds within +/- 1.0");
    }

    #[test]
    fn training_sequences_have_exact_context_counts() {
        let tasks = catalog();
        for (name, total) in [("B2018", 48), ("V2023", 60), ("HW2023a", 60)] {
            let task = find_task(&tasks, name).unwrap();
            let seq = training_sequence(task, 7);
            assert_eq!(seq.len(), total);
            for ctx in &task.contexts {
                let n = seq.iter().filter(|&&c| c == ctx.id).count();
                assert_eq!(n, task.training_reps as usize);
            }
        }
    }

    #[test]
    fn transfer_pair_counts_match_structure() {
        let tasks = catalog();
        for (name, count) in [("B2018", 28), ("V2023", 12), ("HW2023a", 28), ("BP2023", 45)] {
            let task = find_task(&tasks, name).unwrap();
            assert_eq!(enumerate_transfer_pairs(task).len(), count);
        }
        // V2023: each of the 6 pairs appears exactly twice
        let v = find_task(&tasks, "V2023").unwrap();
        let pairs = enumerate_transfer_pairs(v);
        let mut counts: HashMap<(String, String), usize> = HashMap::new();
        for p in pairs {
            *counts.entry(p).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn binary_gaussian_scores_are_complementary() {
        let tasks = catalog();
        let task = find_task(&tasks, "HW2023a").unwrap();
        let labels = relative_value_labels(task);
        for ctx in &task.contexts {
            let h = labels[&ctx.members[1].option];
            let l = labels[&ctx.members[0].option];
            assert!(h > 0.5 && l < 0.5);
            // continuous distributions: no tie mass, scores sum to 1
            assert!((h + l - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_distributions_tie() {
        let d = RewardDist::Gaussian { mean: 5.0, sd: 2.0 };
        let p = prob_exceeds(&d, &d);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn frequent_winner_scores_above_higher_ev_partner() {
        // HW2023b incongruent contexts: the lower-EV option wins most rounds.
        let tasks = catalog();
        let task = find_task(&tasks, "HW2023b").unwrap();
        let labels = relative_value_labels(task);
        for (lo, hi) in [("2L", "2H"), ("4L", "4H")] {
            assert!(task.expected_value(lo).unwrap() < task.expected_value(hi).unwrap());
            assert!(labels[lo] > labels[hi], "{lo} should out-win {hi}");
        }
        // exhaustive enumeration oracle for context 2: W=(16,.8;10), S=(44,.4;10)
        // W wins iff W=16 and S=10: 0.8 * 0.6 = 0.48; S wins iff S=44: 0.4
        assert!((labels["2L"] - 0.48).abs() < 1e-12);
        assert!((labels["2H"] - 0.40).abs() < 1e-12);
    }

    #[test]
    fn relative_scores_are_affine_invariant() {
        let tasks = catalog();
        for name in ["B2018", "HW2023a", "HW2023b"] {
            let task = find_task(&tasks, name).unwrap();
            let base = relative_value_labels(task);
            let mut scaled = task.clone();
            for opt in &mut scaled.options {
                opt.dist = match opt.dist {
                    RewardDist::Bernoulli { high, p, low } => RewardDist::Bernoulli {
                        high: 3.5 * high + 11.0,
                        p,
                        low: 3.5 * low + 11.0,
                    },
                    RewardDist::Gaussian { mean, sd } => RewardDist::Gaussian {
                        mean: 3.5 * mean + 11.0,
                        sd: 3.5 * sd,
                    },
                };
            }
            let transformed = relative_value_labels(&scaled);
            for (k, v) in &base {
                assert!((transformed[k] - v).abs() < 1e-9, "{name}/{k}");
            }
        }
    }
}
