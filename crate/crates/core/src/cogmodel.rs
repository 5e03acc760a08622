//! The RL cognitive model family and its likelihood.
//!
//! A model is three stacked components:
//!
//! 1. **Outcome encoding** — each observed reward is mapped to a subjective
//!    value `v = (1 - omega) * x_abs + omega * x_rel`, where `x_abs` is the
//!    reward range-normalized by the running min/max of all outcomes
//!    observed so far and `x_rel` is range-normalized within the current
//!    trial's outcomes only. `omega = 0` is the purely absolute (ABS)
//!    encoder; `omega` free is the hybrid (REL) encoder.
//! 2. **Learning** — expectancies update by prediction error,
//!    `Q' = Q + alpha * (v - Q)`, with optionally separate rates for
//!    confirmatory updates (chosen option better than expected, or unchosen
//!    option worse than expected) and disconfirmatory updates (the reverse;
//!    zero prediction errors count as disconfirmatory).
//! 3. **Response** — choice probabilities are a softmax over
//!    `beta * Q + b * [first listed]`, with optionally separate inverse
//!    temperatures for the training and transfer phases. The position bias
//!    `b` is phase-constant.
//!
//! The factorial combination (2 encoders x 1-2 learning rates x 1-2
//! temperatures) yields the eight candidate variants. Likelihoods replay
//! each logged run forward from `Q = 0.5`; complete feedback updates all
//! offered options every training trial, transfer trials update nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experiment phase a trial belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Abs,
    Rel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learning {
    OneAlpha,
    TwoAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    OneBeta,
    TwoBeta,
}

/// One member of the eight-model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub encoding: Encoding,
    pub learning: Learning,
    pub response: Response,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 8] = {
        let mut all = [ModelVariant {
            encoding: Encoding::Abs,
            learning: Learning::OneAlpha,
            response: Response::OneBeta,
        }; 8];
        let encodings = [Encoding::Abs, Encoding::Rel];
        let learnings = [Learning::OneAlpha, Learning::TwoAlpha];
        let responses = [Response::OneBeta, Response::TwoBeta];
        let mut i = 0;
        while i < 8 {
            all[i] = ModelVariant {
                encoding: encodings[i / 4],
                learning: learnings[(i / 2) % 2],
                response: responses[i % 2],
            };
            i += 1;
        }
        all
    };

    /// Short label, e.g. `ABS`, `REL-2a`, `REL-full`.
    pub fn label(&self) -> String {
        let base = match self.encoding {
            Encoding::Abs => "ABS",
            Encoding::Rel => "REL",
        };
        match (self.learning, self.response) {
            (Learning::OneAlpha, Response::OneBeta) => base.to_string(),
            (Learning::TwoAlpha, Response::OneBeta) => format!("{base}-2a"),
            (Learning::OneAlpha, Response::TwoBeta) => format!("{base}-2b"),
            (Learning::TwoAlpha, Response::TwoBeta) => format!("{base}-full"),
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        let norm = label.trim().to_ascii_uppercase();
        let (enc, rest) = if let Some(rest) = norm.strip_prefix("ABS") {
            (Encoding::Abs, rest)
        } else if let Some(rest) = norm.strip_prefix("REL") {
            (Encoding::Rel, rest)
        } else {
            return Err(Error::Fit(format!("unknown model variant {label}")));
        };
        let (learning, response) = match rest {
            "" => (Learning::OneAlpha, Response::OneBeta),
            "-2A" => (Learning::TwoAlpha, Response::OneBeta),
            "-2B" => (Learning::OneAlpha, Response::TwoBeta),
            "-FULL" => (Learning::TwoAlpha, Response::TwoBeta),
            _ => return Err(Error::Fit(format!("unknown model variant {label}"))),
        };
        Ok(ModelVariant {
            encoding: enc,
            learning,
            response,
        })
    }

    /// Number of free parameters: alpha, beta, b, plus one per enabled
    /// component (omega, second alpha, second beta).
    pub fn param_count(&self) -> usize {
        let mut k = 3;
        if self.encoding == Encoding::Rel {
            k += 1;
        }
        if self.learning == Learning::TwoAlpha {
            k += 1;
        }
        if self.response == Response::TwoBeta {
            k += 1;
        }
        k
    }
}

/// Full parameter vector. Variants with tied components ignore the tied
/// slots; `canonical` makes the ties explicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub omega: f64,
    pub alpha_con: f64,
    pub alpha_dis: f64,
    pub beta_train: f64,
    pub beta_transfer: f64,
    pub bias: f64,
}

impl ModelParams {
    /// Apply the variant's ties: ABS pins omega to 0, one-alpha ties
    /// `alpha_dis` to `alpha_con`, one-beta ties `beta_transfer` to
    /// `beta_train`.
    pub fn canonical(mut self, variant: &ModelVariant) -> Self {
        if variant.encoding == Encoding::Abs {
            self.omega = 0.0;
        }
        if variant.learning == Learning::OneAlpha {
            self.alpha_dis = self.alpha_con;
        }
        if variant.response == Response::OneBeta {
            self.beta_transfer = self.beta_train;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Fit(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("omega", self.omega)?;
        unit("alpha_con", self.alpha_con)?;
        unit("alpha_dis", self.alpha_dis)?;
        for (name, v) in [
            ("beta_train", self.beta_train),
            ("beta_transfer", self.beta_transfer),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Fit(format!("{name} = {v} must be >= 0")));
            }
        }
        if !self.bias.is_finite() {
            return Err(Error::Fit(format!("bias = {} must be finite", self.bias)));
        }
        Ok(())
    }
}

/// Initial expectancy for every option.
pub const Q_INIT: f64 = 0.5;

/// Options are addressed by the letters A-J.
pub const MAX_OPTIONS: usize = 10;

fn letter_index(letter: char) -> usize {
    let idx = (letter as u8).wrapping_sub(b'A') as usize;
    assert!(idx < MAX_OPTIONS, "letter {letter} outside A-J");
    idx
}

/// Mutable encoding/learning state carried through one run.
#[derive(Debug, Clone)]
pub struct EncodingState {
    range: Option<(f64, f64)>,
    q: [f64; MAX_OPTIONS],
}

impl Default for EncodingState {
    fn default() -> Self {
        Self::new()
    }
}

impl EncodingState {
    pub fn new() -> Self {
        EncodingState {
            range: None,
            q: [Q_INIT; MAX_OPTIONS],
        }
    }

    pub fn q(&self, letter: char) -> f64 {
        self.q[letter_index(letter)]
    }

    pub fn set_q(&mut self, letter: char, value: f64) {
        self.q[letter_index(letter)] = value;
    }

    /// Running min/max over all outcomes observed so far, if any.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    /// Extend the running outcome range with a trial's outcomes.
    pub fn observe_range(&mut self, outcomes: &[f64]) {
        for &x in outcomes {
            self.range = Some(match self.range {
                None => (x, x),
                Some((lo, hi)) => (lo.min(x), hi.max(x)),
            });
        }
    }
}

fn range_normalize(x: f64, lo: f64, hi: f64) -> f64 {
    if hi - lo <= 0.0 {
        0.5
    } else {
        (x - lo) / (hi - lo)
    }
}

/// Subjective value of reward `x` observed alongside `trial_outcomes`.
/// The state's running range must already include the current trial when
/// the default replay policy is in effect.
pub fn subjective_value(
    x: f64,
    trial_outcomes: &[f64],
    state: &EncodingState,
    omega: f64,
) -> f64 {
    let x_abs = match state.range {
        Some((lo, hi)) => range_normalize(x, lo, hi),
        None => 0.5,
    };
    let (tlo, thi) = trial_outcomes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let x_rel = if trial_outcomes.is_empty() {
        0.5
    } else {
        range_normalize(x, tlo, thi)
    };
    (1.0 - omega) * x_abs + omega * x_rel
}

/// Prediction-error update for every offered option under complete
/// feedback. `chosen` is `None` for invalid trials, in which case every
/// option takes the unchosen branch of the confirmatory rule.
pub fn update_expectancies(
    state: &mut EncodingState,
    chosen: Option<char>,
    values: &[(char, f64)],
    alpha_con: f64,
    alpha_dis: f64,
) {
    for &(letter, v) in values {
        let idx = letter_index(letter);
        let pe = v - state.q[idx];
        let confirmatory = if chosen == Some(letter) {
            pe > 0.0
        } else {
            pe < 0.0
        };
        let alpha = if confirmatory { alpha_con } else { alpha_dis };
        state.q[idx] += alpha * pe;
    }
}

/// Softmax choice probabilities over the listed options; the first listed
/// option receives the additive position bias `b`.
pub fn choice_probabilities(
    state: &EncodingState,
    listed: &[char],
    beta: f64,
    bias: f64,
) -> Vec<f64> {
    let mut z: Vec<f64> = listed
        .iter()
        .enumerate()
        .map(|(i, &l)| beta * state.q(l) + if i == 0 { bias } else { 0.0 })
        .collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    z
}

/// One logged trial as consumed by the likelihood replay. `listed` is the
/// prompt's listing order (index 0 = first listed); `outcomes` align with
/// `listed` and are present on training trials only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayTrial {
    pub phase: Phase,
    pub listed: Vec<char>,
    pub choice: Option<char>,
    pub outcomes: Option<Vec<f64>>,
}

/// Replay policy toggles for sensitivity analysis.
#[derive(Debug, Clone, Copy)]
pub struct ReplayOptions {
    /// Update the running range with the current trial's outcomes before
    /// encoding them (the first trial is then non-degenerate whenever its
    /// outcomes differ).
    pub range_includes_current_trial: bool,
    /// Apply feedback from invalid trials to the learner state even though
    /// those trials contribute no likelihood.
    pub invalid_feedback_observed: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            range_includes_current_trial: true,
            invalid_feedback_observed: true,
        }
    }
}

/// Number of trials that enter the likelihood product.
pub fn count_valid_choices(runs: &[Vec<ReplayTrial>]) -> usize {
    runs.iter()
        .flatten()
        .filter(|t| t.choice.is_some())
        .count()
}

/// Pooled negative log-likelihood of the logged choices under the given
/// parameters. Each run replays forward independently (Q and ranges reset),
/// using `beta_train` during training and `beta_transfer` during transfer;
/// transfer trials update no state.
pub fn negative_log_likelihood(
    params: &ModelParams,
    variant: &ModelVariant,
    runs: &[Vec<ReplayTrial>],
    opts: &ReplayOptions,
) -> Result<f64> {
    let p = params.canonical(variant);
    p.validate()?;
    if count_valid_choices(runs) == 0 {
        return Err(Error::Fit("log contains no valid choices".into()));
    }
    let mut nll = 0.0;
    for run in runs {
        nll += replay_run_nll(&p, run, opts)?;
    }
    Ok(nll)
}

fn replay_run_nll(p: &ModelParams, run: &[ReplayTrial], opts: &ReplayOptions) -> Result<f64> {
    let mut state = EncodingState::new();
    let mut nll = 0.0;
    for trial in run {
        let n = trial.listed.len();
        if n == 0 || n > 3 {
            return Err(Error::Fit(format!("trial offers {n} options")));
        }
        let beta = match trial.phase {
            Phase::Training => p.beta_train,
            Phase::Transfer => p.beta_transfer,
        };
        if let Some(choice) = trial.choice {
            // stable log-softmax over beta*Q + bias on the first listed
            let mut z = [0.0f64; 3];
            let mut chosen_idx = None;
            for (i, &l) in trial.listed.iter().enumerate() {
                z[i] = beta * state.q(l) + if i == 0 { p.bias } else { 0.0 };
                if l == choice {
                    chosen_idx = Some(i);
                }
            }
            let chosen_idx = chosen_idx.ok_or_else(|| {
                Error::Fit(format!("chosen letter {choice} was not offered"))
            })?;
            let m = z[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = z[..n].iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            nll -= z[chosen_idx] - m - log_sum;
        }
        if trial.phase == Phase::Training {
            let outcomes = trial.outcomes.as_ref().ok_or_else(|| {
                Error::Fit("training trial is missing outcomes".into())
            })?;
            if outcomes.len() != n {
                return Err(Error::Fit(format!(
                    "trial offers {n} options but records {} outcomes",
                    outcomes.len()
                )));
            }
            if trial.choice.is_none() && !opts.invalid_feedback_observed {
                continue;
            }
            if opts.range_includes_current_trial {
                state.observe_range(outcomes);
            }
            let mut values = [('A', 0.0); 3];
            for (i, (&l, &x)) in trial.listed.iter().zip(outcomes.iter()).enumerate() {
                values[i] = (l, subjective_value(x, outcomes, &state, p.omega));
            }
            if !opts.range_includes_current_trial {
                state.observe_range(outcomes);
            }
            update_expectancies(
                &mut state,
                trial.choice,
                &values[..n],
                p.alpha_con,
                p.alpha_dis,
            );
        }
    }
    Ok(nll)
}
