//! Maximum-likelihood estimation for the model family.
//!
//! The likelihood surface is cheap but multimodal, so each variant is fit
//! with multi-start bounded derivative-free search: Latin-hypercube starts
//! over the natural parameter ranges, Nelder-Mead simplex minimization in
//! an unconstrained internal space (logit transform for [0,1] parameters,
//! softplus for the inverse temperatures, identity for the position bias),
//! and the best start wins. All starts are recorded for diagnosis.
//!
//! Model comparison uses BIC = k*ln(n) + 2*NLL with n = the number of valid
//! choices entering the likelihood; exact ties break toward the model with
//! fewer parameters.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AgentSpec};
use crate::cogmodel::{
    count_valid_choices, negative_log_likelihood, Encoding, Learning, ModelParams, ModelVariant,
    ReplayOptions, ReplayTrial, Response,
};
use crate::error::{Error, Result};
use crate::promptgen::PromptStyle;
use crate::rng;
use crate::runner::run_batch_in_memory;
use crate::taskdef::TaskSpec;

// ---------------------------------------------------------------------------
// parameter space

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DimKind {
    /// Bounded to [0, 1]; logit-transformed internally.
    Unit,
    /// Bounded to [0, inf); softplus-transformed internally.
    Positive,
    /// Unbounded.
    Free,
}

#[derive(Debug, Clone, Copy)]
struct Dim {
    name: &'static str,
    kind: DimKind,
}

/// Free dimensions of one variant, with natural<->internal transforms.
#[derive(Debug, Clone)]
pub struct ParamSpace {
    variant: ModelVariant,
    dims: Vec<Dim>,
}

const UNIT_EPS: f64 = 1e-9;

fn logit(x: f64) -> f64 {
    let x = x.clamp(UNIT_EPS, 1.0 - UNIT_EPS);
    (x / (1.0 - x)).ln()
}

fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

fn softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp().ln_1p()
    }
}

fn softplus_inv(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(1e-12).exp_m1().max(1e-300).ln()
    }
}

impl ParamSpace {
    pub fn new(variant: ModelVariant) -> Self {
        let mut dims = Vec::with_capacity(6);
        if variant.encoding == Encoding::Rel {
            dims.push(Dim {
                name: "omega",
                kind: DimKind::Unit,
            });
        }
        dims.push(Dim {
            name: "alpha_con",
            kind: DimKind::Unit,
        });
        if variant.learning == Learning::TwoAlpha {
            dims.push(Dim {
                name: "alpha_dis",
                kind: DimKind::Unit,
            });
        }
        dims.push(Dim {
            name: "beta_train",
            kind: DimKind::Positive,
        });
        if variant.response == Response::TwoBeta {
            dims.push(Dim {
                name: "beta_transfer",
                kind: DimKind::Positive,
            });
        }
        dims.push(Dim {
            name: "bias",
            kind: DimKind::Free,
        });
        ParamSpace { variant, dims }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.dims.iter().map(|d| d.name).collect()
    }

    /// Natural-space vector of the variant's free parameters.
    pub fn pack(&self, p: &ModelParams) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| match d.name {
                "omega" => p.omega,
                "alpha_con" => p.alpha_con,
                "alpha_dis" => p.alpha_dis,
                "beta_train" => p.beta_train,
                "beta_transfer" => p.beta_transfer,
                "bias" => p.bias,
                _ => unreachable!(),
            })
            .collect()
    }

    /// Rebuild canonical parameters from a natural-space vector.
    pub fn unpack(&self, natural: &[f64]) -> ModelParams {
        let mut p = ModelParams {
            omega: 0.0,
            alpha_con: 0.0,
            alpha_dis: 0.0,
            beta_train: 0.0,
            beta_transfer: 0.0,
            bias: 0.0,
        };
        for (dim, &v) in self.dims.iter().zip(natural) {
            match dim.name {
                "omega" => p.omega = v,
                "alpha_con" => p.alpha_con = v,
                "alpha_dis" => p.alpha_dis = v,
                "beta_train" => p.beta_train = v,
                "beta_transfer" => p.beta_transfer = v,
                "bias" => p.bias = v,
                _ => unreachable!(),
            }
        }
        p.canonical(&self.variant)
    }

    fn to_internal(&self, natural: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(natural)
            .map(|(d, &v)| match d.kind {
                DimKind::Unit => logit(v),
                DimKind::Positive => softplus_inv(v),
                DimKind::Free => v,
            })
            .collect()
    }

    fn to_natural(&self, internal: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(internal)
            .map(|(d, &v)| match d.kind {
                DimKind::Unit => sigmoid(v),
                DimKind::Positive => softplus(v),
                DimKind::Free => v,
            })
            .collect()
    }

    /// Latin-hypercube sample of start points in natural space: unit
    /// parameters over [0.05, 0.95], inverse temperatures log-uniform over
    /// [0.25, 25], position bias over [-3, 3].
    fn lhs_starts(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::seq::SliceRandom;
        let mut rng = rng::rng_from(seed);
        let d = self.len();
        let mut strata: Vec<Vec<usize>> = (0..d)
            .map(|_| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                idx
            })
            .collect();
        let mut starts = vec![vec![0.0; d]; n];
        for (j, dim) in self.dims.iter().enumerate() {
            for i in 0..n {
                let u: f64 = rng.gen();
                let frac = (strata[j][i] as f64 + u) / n as f64;
                starts[i][j] = match dim.kind {
                    DimKind::Unit => 0.05 + 0.90 * frac,
                    DimKind::Positive => {
                        let (lo, hi) = (0.25f64.ln(), 25.0f64.ln());
                        (lo + (hi - lo) * frac).exp()
                    }
                    DimKind::Free => -3.0 + 6.0 * frac,
                };
            }
        }
        strata.clear();
        starts
    }
}

// ---------------------------------------------------------------------------
// Nelder-Mead

#[derive(Debug, Clone)]
struct NmResult {
    x: Vec<f64>,
    fx: f64,
    iters: usize,
    converged: bool,
}

/// Standard Nelder-Mead simplex minimization (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5) over an unconstrained space.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iters: usize,
    f_tol: f64,
    x_tol: f64,
) -> NmResult {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        iters += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let spread = (worst - best).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= f_tol * (best.abs() + f_tol) && diameter <= x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let reflect: Vec<f64> = (0..d)
            .map(|j| centroid[j] + (centroid[j] - simplex[d].0[j]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = (0..d)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - simplex[d].0[j]))
                .collect();
            let f_expand = f(&expand);
            simplex[d] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[d - 1].1 {
            simplex[d] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = (0..d)
                .map(|j| centroid[j] + 0.5 * (simplex[d].0[j] - centroid[j]))
                .collect();
            let f_contract = f(&contract);
            if f_contract < simplex[d].1 {
                simplex[d] = (contract, f_contract);
            } else {
                let best_x = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = item
                        .0
                        .iter()
                        .zip(&best_x)
                        .map(|(xi, bi)| bi + 0.5 * (xi - bi))
                        .collect();
                    let fx = f(&x);
                    *item = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    NmResult {
        x: simplex[0].0.clone(),
        fx: simplex[0].1,
        iters,
        converged,
    }
}

// ---------------------------------------------------------------------------
// fitting

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub seed: u64,
    /// Additional warm starts in natural parameter space (used to seed
    /// nested variants from their simpler counterparts' solutions).
    pub extra_starts: Vec<ModelParams>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_starts: 20,
            max_iters: 600,
            f_tol: 1e-10,
            x_tol: 1e-7,
            seed: 0,
            extra_starts: Vec::new(),
        }
    }
}

/// Outcome of one optimizer start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: usize,
    pub nll: f64,
    pub iters: usize,
    pub converged: bool,
}

/// A fitted variant with its likelihood, BIC, and per-start diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: String,
    pub params: ModelParams,
    pub nll: f64,
    pub n_choices: usize,
    pub k: usize,
    pub bic: f64,
    pub n_starts: usize,
    pub best_start: usize,
    pub starts: Vec<StartOutcome>,
}

impl FitResult {
    pub fn model_variant(&self) -> ModelVariant {
        ModelVariant::from_label(&self.variant).expect("stored label is valid")
    }
}

/// BIC = k*ln(n) + 2*nll.
pub fn compute_bic(nll: f64, k: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Fit("BIC needs n >= 1 choices".into()));
    }
    if k == 0 {
        return Err(Error::Fit("BIC needs k >= 1 parameters".into()));
    }
    Ok(k as f64 * (n as f64).ln() + 2.0 * nll)
}

/// Fit one variant to pooled runs by multi-start Nelder-Mead.
pub fn fit_model(
    variant: ModelVariant,
    runs: &[Vec<ReplayTrial>],
    replay: &ReplayOptions,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let n_choices = count_valid_choices(runs);
    if n_choices == 0 {
        return Err(Error::Fit("cannot fit an empty or all-invalid log".into()));
    }
    let space = ParamSpace::new(variant);
    let objective = |internal: &[f64]| -> f64 {
        let params = space.unpack(&space.to_natural(internal));
        match negative_log_likelihood(&params, &variant, runs, replay) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };

    let mut starts = space.lhs_starts(cfg.n_starts, rng::stream(cfg.seed, 0x4649_5453));
    for extra in &cfg.extra_starts {
        starts.push(space.pack(&extra.canonical(&variant)));
    }

    let results: Vec<NmResult> = starts
        .par_iter()
        .map(|natural| {
            nelder_mead(
                &objective,
                &space.to_internal(natural),
                0.5,
                cfg.max_iters,
                cfg.f_tol,
                cfg.x_tol,
            )
        })
        .collect();

    let outcomes: Vec<StartOutcome> = results
        .iter()
        .enumerate()
        .map(|(i, r)| StartOutcome {
            start: i,
            nll: r.fx,
            iters: r.iters,
            converged: r.converged,
        })
        .collect();
    let best = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.fx.is_finite())
        .min_by(|a, b| a.1.fx.partial_cmp(&b.1.fx).unwrap());
    let (best_start, best_result) = best.ok_or_else(|| {
        Error::Fit(format!(
            "no start converged to a finite likelihood; start traces: {outcomes:?}"
        ))
    })?;

    let params = space.unpack(&space.to_natural(&best_result.x));
    let k = variant.param_count();
    let bic = compute_bic(best_result.fx, k, n_choices)?;
    Ok(FitResult {
        variant: variant.label(),
        params,
        nll: best_result.fx,
        n_choices,
        k,
        bic,
        n_starts: starts.len(),
        best_start,
        starts: outcomes,
    })
}

/// Fit all eight variants. Each REL variant receives its ABS counterpart's
/// solution as a warm start (the ABS model is the omega = 0 slice), which
/// enforces nested-model dominance up to optimizer tolerance.
pub fn fit_all_variants(
    runs: &[Vec<ReplayTrial>],
    replay: &ReplayOptions,
    cfg: &OptimizerConfig,
) -> Result<Vec<FitResult>> {
    let mut fits: Vec<FitResult> = Vec::with_capacity(8);
    let abs_first = {
        let mut v = ModelVariant::ALL.to_vec();
        v.sort_by_key(|v| v.encoding == Encoding::Rel);
        v
    };
    for variant in abs_first {
        let mut vcfg = cfg.clone();
        vcfg.seed = rng::stream(cfg.seed, variant.param_count() as u64);
        if variant.encoding == Encoding::Rel {
            let abs_label = ModelVariant {
                encoding: Encoding::Abs,
                ..variant
            }
            .label();
            if let Some(abs_fit) = fits.iter().find(|f| f.variant == abs_label) {
                vcfg.extra_starts.push(abs_fit.params);
            }
        }
        fits.push(fit_model(variant, runs, replay, &vcfg)?);
    }
    Ok(fits)
}

/// Ranking of fitted variants by BIC.
#[derive(Debug, Clone, Serialize)]
pub struct ModelComparison {
    /// Indices into the input fits, best first.
    pub order: Vec<usize>,
    /// BIC difference to the winner, aligned with `order`.
    pub delta_bic: Vec<f64>,
    pub best: String,
}

/// Sort fits ascending by BIC; ties within 1e-6 break toward fewer
/// parameters. All fits must come from the same log (equal n_choices).
pub fn compare_models(fits: &[FitResult]) -> Result<ModelComparison> {
    if fits.is_empty() {
        return Err(Error::Fit("nothing to compare".into()));
    }
    let n0 = fits[0].n_choices;
    if fits.iter().any(|f| f.n_choices != n0) {
        return Err(Error::Fit(
            "fits were computed on different logs (n_choices differ)".into(),
        ));
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (&fits[a], &fits[b]);
        if (fa.bic - fb.bic).abs() < 1e-6 {
            fa.k.cmp(&fb.k)
        } else {
            fa.bic.partial_cmp(&fb.bic).unwrap()
        }
    });
    let best_bic = fits[order[0]].bic;
    let delta_bic = order.iter().map(|&i| fits[i].bic - best_bic).collect();
    Ok(ModelComparison {
        best: fits[order[0]].variant.clone(),
        order,
        delta_bic,
    })
}

/// Human-readable comparison table; the winner is starred.
pub fn comparison_table(fits: &[FitResult], cmp: &ModelComparison) -> String {
    let mut out = String::from("variant     k   nll          bic          dBIC\n");
    for (rank, &i) in cmp.order.iter().enumerate() {
        let f = &fits[i];
        let star = if rank == 0 { "*" } else { " " };
        out.push_str(&format!(
            "{star}{:<10} {:<3} {:<12.4} {:<12.4} {:.4}\n",
            f.variant, f.k, f.nll, f.bic, cmp.delta_bic[rank]
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// parameter recovery

/// Recovery quality of one parameter across replications.
#[derive(Debug, Clone, Serialize)]
pub struct ParamRecovery {
    pub name: String,
    pub truth: f64,
    pub mean_error: f64,
    pub rmse: f64,
    /// True when the generating process makes this parameter unidentifiable
    /// (a zero inverse temperature flattens the likelihood in everything
    /// but the position bias).
    pub unidentifiable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub variant: String,
    pub n_reps: usize,
    pub params: Vec<ParamRecovery>,
    /// Fitted parameter vectors per replication.
    pub estimates: Vec<ModelParams>,
}

/// Simulate -> fit -> aggregate: per-parameter mean error and RMSE across
/// `n_reps` independent synthetic datasets of `n_runs` runs each.
#[allow(clippy::too_many_arguments)]
pub fn recovery_report(
    tasks: &[TaskSpec],
    task: &str,
    style: PromptStyle,
    variant: ModelVariant,
    truth: ModelParams,
    n_reps: usize,
    n_runs: u32,
    cfg: &OptimizerConfig,
) -> Result<RecoveryReport> {
    if n_reps < 2 {
        return Err(Error::Fit("recovery needs n_reps >= 2".into()));
    }
    let truth = truth.canonical(&variant);
    let estimates: Vec<ModelParams> = (0..n_reps)
        .into_par_iter()
        .map(|rep| -> Result<ModelParams> {
            let sim_cfg = crate::runner::RunConfig {
                task: task.to_string(),
                style,
                agent: AgentConfig {
                    spec: AgentSpec::RlSimulated {
                        variant,
                        params: truth,
                    },
                    seed: 0,
                },
                n_runs,
                master_seed: rng::derive(cfg.seed, rep as u64),
                log_text: false,
            };
            let log = run_batch_in_memory(tasks, &sim_cfg)?;
            let mut fit_cfg = cfg.clone();
            fit_cfg.seed = rng::derive(cfg.seed ^ 0x5245_434F, rep as u64);
            let fit = fit_model(variant, &log.replay_runs(), &ReplayOptions::default(), &fit_cfg)?;
            Ok(fit.params)
        })
        .collect::<Result<Vec<_>>>()?;

    let space = ParamSpace::new(variant);
    let truth_vec = space.pack(&truth);
    let beta_zero = truth.beta_train < 1e-9 && truth.beta_transfer < 1e-9;
    let params = space
        .names()
        .iter()
        .zip(&truth_vec)
        .map(|(&name, &t)| {
            let errs: Vec<f64> = estimates
                .iter()
                .map(|e| {
                    let v = space.pack(e);
                    v[space.names().iter().position(|&n| n == name).unwrap()] - t
                })
                .collect();
            let mean_error = errs.iter().sum::<f64>() / errs.len() as f64;
            let rmse =
                (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
            ParamRecovery {
                name: name.to_string(),
                truth: t,
                mean_error,
                rmse,
                unidentifiable: beta_zero && name != "bias",
            }
        })
        .collect();

    Ok(RecoveryReport {
        variant: variant.label(),
        n_reps,
        params,
        estimates,
    })
}

/// Schema-versioned container for persisted fit results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub schema_version: u32,
    pub log_sha256: String,
    pub fits: Vec<FitResult>,
}

pub const FIT_SCHEMA_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cogmodel::Phase;
    use crate::promptgen::StyleVariant;
    use crate::taskdef::builtin_catalog;

    fn rel_full() -> ModelVariant {
        ModelVariant::from_label("REL-full").unwrap()
    }

    #[test]
    fn bic_hand_values() {
        let b = compute_bic(50.0, 2, 100).unwrap();
        assert!((b - (2.0 * 100.0f64.ln() + 100.0)).abs() < 1e-9);
        assert!((b - 109.2103).abs() < 1e-4);
        assert!(compute_bic(1.0, 0, 10).is_err());
        assert!(compute_bic(1.0, 2, 0).is_err());
        // doubling nll at fixed k, n raises BIC by exactly 2*nll
        let b2 = compute_bic(100.0, 2, 100).unwrap();
        assert!((b2 - b - 100.0).abs() < 1e-9);
    }

    fn fake_fit(variant: &str, k: usize, bic: f64) -> FitResult {
        FitResult {
            variant: variant.into(),
            params: ModelParams {
                omega: 0.0,
                alpha_con: 0.5,
                alpha_dis: 0.5,
                beta_train: 1.0,
                beta_transfer: 1.0,
                bias: 0.0,
            },
            nll: 0.0,
            n_choices: 100,
            k,
            bic,
            n_starts: 1,
            best_start: 0,
            starts: vec![],
        }
    }

    #[test]
    fn comparison_ranks_by_bic_and_breaks_ties_toward_fewer_params() {
        let fits = vec![
            fake_fit("ABS-full", 5, 100.0),
            fake_fit("REL-2a", 5, 90.0),
            fake_fit("ABS-2a", 4, 90.0),
        ];
        let cmp = compare_models(&fits).unwrap();
        assert_eq!(cmp.best, "ABS-2a"); // tie at 90 goes to k = 4
        assert_eq!(cmp.order, vec![2, 1, 0]);
        assert!((cmp.delta_bic[2] - 10.0).abs() < 1e-12);
        let table = comparison_table(&fits, &cmp);
        assert!(table.starts_with("variant"));
        assert!(table.contains("*ABS-2a"));

        let mut mismatched = fits;
        mismatched[0].n_choices = 99;
        assert!(compare_models(&mismatched).is_err());
    }

    #[test]
    fn transforms_round_trip_for_every_variant() {
        for variant in ModelVariant::ALL {
            let space = ParamSpace::new(variant);
            let p = ModelParams {
                omega: 0.37,
                alpha_con: 0.81,
                alpha_dis: 0.12,
                beta_train: 7.3,
                beta_transfer: 0.04,
                bias: -1.9,
            }
            .canonical(&variant);
            let natural = space.pack(&p);
            let internal = space.to_internal(&natural);
            let back = space.to_natural(&internal);
            for (a, b) in natural.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{variant:?}: {a} vs {b}");
            }
            assert_eq!(space.len(), variant.param_count());
        }
    }

    #[test]
    fn nelder_mead_minimizes_a_shifted_quadratic() {
        let target = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let r = nelder_mead(f, &[0.0, 0.0, 0.0], 0.5, 500, 1e-12, 1e-9);
        assert!(r.converged);
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{:?}", r.x);
        }
    }

    fn synthetic_runs(seed: u64, n_runs: u32) -> Vec<Vec<ReplayTrial>> {
        let tasks = builtin_catalog();
        let cfg = crate::runner::RunConfig {
            task: "V2023".into(),
            style: PromptStyle {
                variant: StyleVariant::Standard,
                mode: Default::default(),
            },
            agent: AgentConfig {
                spec: AgentSpec::RlSimulated {
                    variant: rel_full(),
                    params: ModelParams {
                        omega: 0.3,
                        alpha_con: 0.6,
                        alpha_dis: 0.2,
                        beta_train: 8.0,
                        beta_transfer: 4.0,
                        bias: 0.8,
                    },
                },
                seed: 0,
            },
            n_runs,
            master_seed: seed,
            log_text: false,
        };
        run_batch_in_memory(&tasks, &cfg).unwrap().replay_runs()
    }

    #[test]
    fn fitted_nll_beats_every_start() {
        let runs = synthetic_runs(3, 6);
        let cfg = OptimizerConfig {
            n_starts: 6,
            max_iters: 300,
            ..Default::default()
        };
        let fit = fit_model(rel_full(), &runs, &ReplayOptions::default(), &cfg).unwrap();
        assert_eq!(fit.k, 6);
        assert!(fit.nll.is_finite());
        for start in &fit.starts {
            assert!(fit.nll <= start.nll + 1e-9);
        }
        let expected_bic =
            compute_bic(fit.nll, fit.k, fit.n_choices).unwrap();
        assert!((fit.bic - expected_bic).abs() < 1e-12);
    }

    #[test]
    fn nested_rel_full_dominates_abs_full() {
        let runs = synthetic_runs(11, 6);
        let cfg = OptimizerConfig {
            n_starts: 6,
            max_iters: 400,
            ..Default::default()
        };
        let fits = fit_all_variants(&runs, &ReplayOptions::default(), &cfg).unwrap();
        let nll_of = |label: &str| fits.iter().find(|f| f.variant == label).unwrap().nll;
        assert!(nll_of("REL-full") <= nll_of("ABS-full") + 1e-6);
        assert!(nll_of("REL-2a") <= nll_of("ABS-2a") + 1e-6);
        assert_eq!(fits.len(), 8);
    }

    #[test]
    fn empty_log_is_a_fit_error() {
        let runs: Vec<Vec<ReplayTrial>> = vec![vec![ReplayTrial {
            phase: Phase::Training,
            listed: vec!['A', 'B'],
            choice: None,
            outcomes: Some(vec![1.0, 0.0]),
        }]];
        let err = fit_model(
            rel_full(),
            &runs,
            &ReplayOptions::default(),
            &OptimizerConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("empty or all-invalid"));
    }

    #[test]
    fn recovery_report_covers_all_free_parameters() {
        let tasks = builtin_catalog();
        let truth = ModelParams {
            omega: 0.6,
            alpha_con: 0.5,
            alpha_dis: 0.17,
            beta_train: 10.0,
            beta_transfer: 10.0,
            bias: 1.2,
        };
        let cfg = OptimizerConfig {
            n_starts: 4,
            max_iters: 200,
            seed: 5,
            ..Default::default()
        };
        let report = recovery_report(
            &tasks,
            "V2023",
            PromptStyle {
                variant: StyleVariant::Standard,
                mode: Default::default(),
            },
            rel_full(),
            truth,
            2,
            4,
            &cfg,
        )
        .unwrap();
        assert_eq!(report.params.len(), 6);
        assert_eq!(report.estimates.len(), 2);
        assert!(report.params.iter().all(|p| !p.unidentifiable));
        assert!(recovery_report(
            &tasks,
            "V2023",
            PromptStyle {
                variant: StyleVariant::Standard,
                mode: Default::default(),
            },
            rel_full(),
            truth,
            1,
            2,
            &cfg,
        )
        .is_err());
    }

    #[test]
    fn zero_beta_truth_flags_unidentifiable_parameters() {
        let tasks = builtin_catalog();
        let truth = ModelParams {
            omega: 0.5,
            alpha_con: 0.5,
            alpha_dis: 0.5,
            beta_train: 0.0,
            beta_transfer: 0.0,
            bias: 0.0,
        };
        let cfg = OptimizerConfig {
            n_starts: 3,
            max_iters: 120,
            seed: 9,
            ..Default::default()
        };
        let report = recovery_report(
            &tasks,
            "V2023",
            PromptStyle {
                variant: StyleVariant::Standard,
                mode: Default::default(),
            },
            rel_full(),
            truth,
            2,
            3,
            &cfg,
        )
        .unwrap();
        for p in &report.params {
            assert_eq!(p.unidentifiable, p.name != "bias", "{}", p.name);
        }
    }
}
