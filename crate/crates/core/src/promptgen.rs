//! Natural-language prompt construction and reply parsing.
//!
//! Prompts have three parts: the task's fixed instruction block, the
//! outcome history of previous rounds, and the current choice query ending
//! in the fixed response-format sentence. The standard style lists each
//! round's outcomes neutrally; the comparisons style appends one explicit
//! relational sentence per round. Exact wording is pinned by golden files —
//! the standard style must never embed comparative language, since that is
//! the experimental manipulation.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::taskdef::{Currency, TaskSpec};

/// Outcome-history phrasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleVariant {
    Standard,
    Comparisons,
}

impl std::str::FromStr for StyleVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(StyleVariant::Standard),
            "comparisons" => Ok(StyleVariant::Comparisons),
            _ => Err(Error::Config(format!("unknown prompt style {s}"))),
        }
    }
}

/// How the prompt ends: a chat-style instruction or a completion-style
/// fill-in scaffold (used by external probe workflows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Chat,
    Completion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStyle {
    pub variant: StyleVariant,
    #[serde(default)]
    pub mode: PromptMode,
}

impl PromptStyle {
    pub fn standard() -> Self {
        PromptStyle {
            variant: StyleVariant::Standard,
            mode: PromptMode::Chat,
        }
    }

    pub fn comparisons() -> Self {
        PromptStyle {
            variant: StyleVariant::Comparisons,
            mode: PromptMode::Chat,
        }
    }
}

/// Option-to-letter mapping for one run. Letters A.. are a seeded
/// permutation over the task's options, fixed within a run and reassigned
/// across runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetterAssignment {
    /// `letters[i]` is the letter of `task.options[i]`.
    letters: Vec<char>,
}

pub const LETTER_POOL: [char; 10] = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J'];

impl LetterAssignment {
    pub fn assign(task: &TaskSpec, seed: u64) -> Self {
        let n = task.n_options();
        assert!(n <= LETTER_POOL.len(), "more options than letters A-J");
        let mut letters: Vec<char> = LETTER_POOL[..n].to_vec();
        let mut rng = rng::rng_from(rng::stream(seed, rng::STREAM_LETTERS));
        letters.shuffle(&mut rng);
        LetterAssignment { letters }
    }

    pub fn from_map(task: &TaskSpec, map: &BTreeMap<String, char>) -> Result<Self> {
        let mut letters = Vec::with_capacity(task.n_options());
        for opt in &task.options {
            let l = map.get(&opt.id).ok_or_else(|| {
                Error::LogSchema(format!("letter map is missing option {}", opt.id))
            })?;
            letters.push(*l);
        }
        let unique: std::collections::HashSet<char> = letters.iter().copied().collect();
        if unique.len() != letters.len() {
            return Err(Error::LogSchema("letter map assigns a letter twice".into()));
        }
        Ok(LetterAssignment { letters })
    }

    pub fn letter_at(&self, option_index: usize) -> char {
        self.letters[option_index]
    }

    pub fn letter_for(&self, task: &TaskSpec, option: &str) -> Option<char> {
        task.option_index(option).map(|i| self.letters[i])
    }

    pub fn option_index_of(&self, letter: char) -> Option<usize> {
        self.letters.iter().position(|&l| l == letter)
    }

    pub fn to_map(&self, task: &TaskSpec) -> BTreeMap<String, char> {
        task.options
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id.clone(), self.letters[i]))
            .collect()
    }
}

/// One rendered round of feedback: the outcomes shown for a training
/// context's options, in the order they were listed.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRound {
    pub context_id: u32,
    pub entries: Vec<(char, f64)>,
}

/// Accumulated feedback over a run's training phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeHistory {
    pub rounds: Vec<HistoryRound>,
}

impl OutcomeHistory {
    pub fn push(&mut self, round: HistoryRound) {
        self.rounds.push(round);
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }
}

/// A rendered choice query plus the listing order it committed to; the
/// first listed letter carries the position bias downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceQuery {
    pub text: String,
    pub listed: Vec<char>,
}

/// Format a reward amount for a task. Gaussian-valued currencies render
/// with symbol and two decimals, integer-valued money tasks render whole
/// amounts, and point tasks render counts; losses carry a leading minus.
pub fn format_amount(currency: Currency, integral: bool, value: f64) -> String {
    match currency {
        Currency::Points => {
            let n = value.round() as i64;
            if n == 1 {
                "1 point".to_string()
            } else {
                format!("{n} points")
            }
        }
        Currency::Euros | Currency::Dollars => {
            let symbol = if currency == Currency::Euros { "€" } else { "$" };
            let sign = if value < 0.0 { "-" } else { "" };
            let mag = value.abs();
            if integral {
                format!("{sign}{symbol}{}", mag.round() as i64)
            } else {
                format!("{sign}{symbol}{mag:.2}")
            }
        }
    }
}

/// Return the verbatim instruction block for a named task.
pub fn render_instructions<'a>(tasks: &'a [TaskSpec], name: &str) -> Result<String> {
    let task = tasks
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Prompt(format!("unknown task {name}")))?;
    Ok(task.instructions.join("\n"))
}

/// Renders every prompt component for one task under one style.
#[derive(Debug, Clone)]
pub struct PromptRenderer<'a> {
    task: &'a TaskSpec,
    style: PromptStyle,
}

impl<'a> PromptRenderer<'a> {
    pub fn new(task: &'a TaskSpec, style: PromptStyle) -> Self {
        PromptRenderer { task, style }
    }

    pub fn style(&self) -> PromptStyle {
        self.style
    }

    pub fn instructions(&self) -> String {
        self.task.instructions.join("\n")
    }

    fn amount(&self, value: f64) -> String {
        format_amount(self.task.currency, self.task.amounts_integral(), value)
    }

    fn round_line(&self, index: usize, round: &HistoryRound) -> String {
        let parts: Vec<String> = round
            .entries
            .iter()
            .map(|(letter, value)| {
                format!("slot machine {} delivered {}", letter, self.amount(*value))
            })
            .collect();
        let listing = match parts.len() {
            2 => format!("{} and {}", parts[0], parts[1]),
            3 => format!("{}, {}, and {}", parts[0], parts[1], parts[2]),
            n => panic!("round with {n} entries"),
        };
        let mut line = format!("In round {}, {listing}.", index + 1);
        if self.style.variant == StyleVariant::Comparisons {
            line.push(' ');
            line.push_str(&self.comparison_sentence(round));
        }
        line
    }

    /// The explicit relational sentence appended per round in the
    /// comparisons style. Ternary rounds state the full ordering.
    fn comparison_sentence(&self, round: &HistoryRound) -> String {
        let mut ranked: Vec<(char, f64)> = round.entries.clone();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        match ranked.len() {
            2 => {
                if ranked[0].1 == ranked[1].1 {
                    "Both slot machines delivered the same outcome.".to_string()
                } else {
                    format!(
                        "Slot machine {}'s outcome was higher than slot machine {}'s outcome.",
                        ranked[0].0, ranked[1].0
                    )
                }
            }
            3 => {
                let (a, b, c) = (ranked[0], ranked[1], ranked[2]);
                if a.1 == b.1 && b.1 == c.1 {
                    "All three slot machines delivered the same outcome.".to_string()
                } else if a.1 == b.1 {
                    format!(
                        "Slot machines {} and {} delivered the same outcome, which was higher than slot machine {}'s outcome.",
                        a.0, b.0, c.0
                    )
                } else if b.1 == c.1 {
                    format!(
                        "Slot machine {}'s outcome was higher than slot machines {} and {}, which delivered the same outcome.",
                        a.0, b.0, c.0
                    )
                } else {
                    format!(
                        "Slot machine {}'s outcome was higher than slot machine {}'s outcome, which was higher than slot machine {}'s outcome.",
                        a.0, b.0, c.0
                    )
                }
            }
            n => panic!("round with {n} entries"),
        }
    }

    /// Render the outcome-history section. Empty history renders empty.
    pub fn render_history(&self, history: &OutcomeHistory) -> String {
        if history.is_empty() {
            return String::new();
        }
        let mut out = String::from("Here are the outcomes of previous rounds:\n");
        for (i, round) in history.rounds.iter().enumerate() {
            out.push_str(&self.round_line(i, round));
            out.push('\n');
        }
        out.pop();
        out
    }

    /// Render the closing choice query. The listing order is randomized per
    /// trial by `order_seed`; the returned query records it (the first
    /// listed letter feeds the position-bias indicator downstream).
    pub fn render_choice_query(&self, letters: &[char], order_seed: u64) -> Result<ChoiceQuery> {
        if !(2..=3).contains(&letters.len()) {
            return Err(Error::Prompt(format!(
                "choice query needs 2-3 letters, got {}",
                letters.len()
            )));
        }
        let unique: std::collections::HashSet<char> = letters.iter().copied().collect();
        if unique.len() != letters.len() {
            return Err(Error::Prompt("duplicate letters in choice query".into()));
        }
        let mut listed = letters.to_vec();
        let mut rng = rng::rng_from(rng::stream(order_seed, rng::STREAM_QUERY_ORDER));
        listed.shuffle(&mut rng);

        let options = match listed.len() {
            2 => format!("slot machine {} and slot machine {}", listed[0], listed[1]),
            _ => format!(
                "slot machine {}, slot machine {}, and slot machine {}",
                listed[0], listed[1], listed[2]
            ),
        };
        let mut text = format!("You now face a choice between {options}.\n");
        text.push_str("Your goal is to maximize your total payoff.\n");
        match self.style.mode {
            PromptMode::Chat => text.push_str(
                "Which slot machine do you choose? Give your answer like this: I would choose slot machine _. Do not explain why.",
            ),
            PromptMode::Completion => {
                text.push_str("Q: Which slot machine do you choose?\nA: I would choose slot machine")
            }
        }
        Ok(ChoiceQuery { text, listed })
    }

    /// Assemble the full prompt: instructions, history (when non-empty),
    /// and the choice query, separated by blank lines.
    pub fn full_prompt(&self, history: &OutcomeHistory, query: &ChoiceQuery) -> String {
        self.assemble(&self.render_history(history), &query.text)
    }

    /// Assemble from an already-rendered history section (the transfer test
    /// reuses one frozen rendering across trials).
    pub fn assemble(&self, history_text: &str, query_text: &str) -> String {
        let mut out = self.instructions();
        if !history_text.is_empty() {
            out.push_str("\n\n");
            out.push_str(history_text);
        }
        out.push_str("\n\n");
        out.push_str(query_text);
        out
    }
}

/// Parse outcome of one model reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChoiceOutcome {
    Chosen(char),
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedChoice {
    pub raw: String,
    pub outcome: ChoiceOutcome,
}

fn choice_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bi\s+would\s+choose\s+slot\s+machine\s*[:\-]?\s*([a-j])\b")
            .expect("valid regex")
    })
}

/// Match the fixed response format case-insensitively with tolerant
/// whitespace and punctuation. The extracted letter must be one of the
/// offered letters; anything else is invalid — no repair and no retry,
/// mirroring post-hoc removal of nonconforming replies.
pub fn parse_choice(raw: &str, offered: &[char]) -> ParsedChoice {
    let outcome = match choice_pattern().captures(raw) {
        Some(caps) => {
            let letter = caps[1].chars().next().unwrap().to_ascii_uppercase();
            if offered.contains(&letter) {
                ChoiceOutcome::Chosen(letter)
            } else {
                ChoiceOutcome::Invalid
            }
        }
        None => ChoiceOutcome::Invalid,
    };
    ParsedChoice {
        raw: raw.to_string(),
        outcome,
    }
}

/// The canonical well-formed reply for a letter (used by synthetic agents
/// so every agent kind traverses the same parse path).
pub fn format_reply(letter: char) -> String {
    format!("I would choose slot machine {letter}.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskdef::{builtin_catalog, find_task};

    fn style(variant: StyleVariant) -> PromptStyle {
        PromptStyle {
            variant,
            mode: PromptMode::Chat,
        }
    }

    #[test]
    fn instructions_match_task_boxes() {
        let tasks = builtin_catalog();
        let b = render_instructions(&tasks, "B2018").unwrap();
        assert!(b.contains(
            "Seeking monetary rewards and avoiding monetary losses are equally important."
        ));
        let v = render_instructions(&tasks, "V2023").unwrap();
        assert!(v.contains("Each slot machine gives 1 point with a particular probability"));
        assert!(render_instructions(&tasks, "XX9999").is_err());
    }

    #[test]
    fn empty_history_renders_empty() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "HW2023a").unwrap();
        let r = PromptRenderer::new(task, style(StyleVariant::Standard));
        assert_eq!(r.render_history(&OutcomeHistory::default()), "");
    }

    #[test]
    fn standard_round_is_neutral_and_comparisons_adds_one_sentence() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "HW2023a").unwrap();
        let mut history = OutcomeHistory::default();
        history.push(HistoryRound {
            context_id: 3,
            entries: vec![('A', 27.0), ('B', 18.0)],
        });
        let std_text =
            PromptRenderer::new(task, style(StyleVariant::Standard)).render_history(&history);
        let cmp_text =
            PromptRenderer::new(task, style(StyleVariant::Comparisons)).render_history(&history);
        assert!(std_text.contains("slot machine A delivered $27.00"));
        assert!(std_text.contains("slot machine B delivered $18.00"));
        for term in ["higher", "lower", "better", "worse", "same"] {
            assert!(!std_text.contains(term), "standard text contains {term:?}");
        }
        // renderings differ only by the appended comparison clause
        assert!(cmp_text.starts_with(std_text.trim_end_matches('.')));
        assert!(cmp_text
            .contains("Slot machine A's outcome was higher than slot machine B's outcome."));
    }

    #[test]
    fn tie_rounds_get_the_tie_sentence() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "V2023").unwrap();
        let mut history = OutcomeHistory::default();
        history.push(HistoryRound {
            context_id: 1,
            entries: vec![('C', 1.0), ('D', 1.0)],
        });
        let text =
            PromptRenderer::new(task, style(StyleVariant::Comparisons)).render_history(&history);
        assert!(text.contains("slot machine C delivered 1 point"));
        assert!(text.contains("Both slot machines delivered the same outcome."));
    }

    #[test]
    fn ternary_round_lists_and_orders_all_three() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "BP2023").unwrap();
        let mut history = OutcomeHistory::default();
        history.push(HistoryRound {
            context_id: 3,
            entries: vec![('A', 14.2), ('B', 86.7), ('C', 49.9)],
        });
        let text =
            PromptRenderer::new(task, style(StyleVariant::Comparisons)).render_history(&history);
        assert!(text.contains(
            "slot machine A delivered $14.20, slot machine B delivered $86.70, and slot machine C delivered $49.90."
        ));
        assert!(text.contains(
            "Slot machine B's outcome was higher than slot machine C's outcome, which was higher than slot machine A's outcome."
        ));
    }

    #[test]
    fn loss_amounts_render_with_minus_sign() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "B2018").unwrap();
        let mut history = OutcomeHistory::default();
        history.push(HistoryRound {
            context_id: 4,
            entries: vec![('E', -1.0), ('F', 0.0)],
        });
        let text =
            PromptRenderer::new(task, style(StyleVariant::Standard)).render_history(&history);
        assert!(text.contains("slot machine E delivered -€1.00"), "{text}");
        assert!(text.contains("slot machine F delivered €0.00"));
    }

    #[test]
    fn choice_query_randomizes_order_and_records_first() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "HW2023a").unwrap();
        let r = PromptRenderer::new(task, style(StyleVariant::Standard));
        let mut firsts = std::collections::HashSet::new();
        for seed in 0..16 {
            let q = r.render_choice_query(&['A', 'B'], seed).unwrap();
            assert!(q.text.starts_with(&format!(
                "You now face a choice between slot machine {} and slot machine {}.",
                q.listed[0], q.listed[1]
            )));
            assert!(q.text.ends_with("Do not explain why."));
            firsts.insert(q.listed[0]);
        }
        assert_eq!(firsts.len(), 2, "order never flipped across 16 seeds");

        let q3 = r.render_choice_query(&['A', 'B', 'C'], 5).unwrap();
        assert!(q3.text.contains(&format!(
            "between slot machine {}, slot machine {}, and slot machine {}",
            q3.listed[0], q3.listed[1], q3.listed[2]
        )));
        assert!(r.render_choice_query(&['A', 'A'], 0).is_err());
        assert!(r.render_choice_query(&['A'], 0).is_err());
    }

    #[test]
    fn completion_mode_swaps_the_closing_scaffold() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "HW2023a").unwrap();
        let r = PromptRenderer::new(
            task,
            PromptStyle {
                variant: StyleVariant::Standard,
                mode: PromptMode::Completion,
            },
        );
        let q = r.render_choice_query(&['A', 'B'], 1).unwrap();
        assert!(q.text.ends_with("A: I would choose slot machine"));
        assert!(!q.text.contains("Do not explain why."));
    }

    #[test]
    fn parse_accepts_the_fixed_format_and_rejects_everything_else() {
        let offered = ['A', 'B'];
        let ok = parse_choice("I would choose slot machine B.", &offered);
        assert_eq!(ok.outcome, ChoiceOutcome::Chosen('B'));
        let lax = parse_choice("  i  would   choose slot machine: a", &offered);
        assert_eq!(lax.outcome, ChoiceOutcome::Chosen('A'));
        let chatty = parse_choice("Machine A seems better so that is my pick.", &offered);
        assert_eq!(chatty.outcome, ChoiceOutcome::Invalid);
        let unoffered = parse_choice("I would choose slot machine C", &offered);
        assert_eq!(unoffered.outcome, ChoiceOutcome::Invalid);
        let blank = parse_choice("I would choose slot machine _.", &offered);
        assert_eq!(blank.outcome, ChoiceOutcome::Invalid);
    }

    #[test]
    fn parse_round_trips_every_letter() {
        for &letter in &LETTER_POOL {
            let parsed = parse_choice(&format_reply(letter), &LETTER_POOL);
            assert_eq!(parsed.outcome, ChoiceOutcome::Chosen(letter));
        }
    }

    #[test]
    fn letter_assignment_is_a_seeded_bijection() {
        let tasks = builtin_catalog();
        let task = find_task(&tasks, "BP2023").unwrap();
        let a = LetterAssignment::assign(task, 7);
        let b = LetterAssignment::assign(task, 7);
        assert_eq!(a, b);
        let map = a.to_map(task);
        assert_eq!(map.len(), 10);
        let distinct: std::collections::HashSet<char> = map.values().copied().collect();
        assert_eq!(distinct.len(), 10);
        let rebuilt = LetterAssignment::from_map(task, &map).unwrap();
        assert_eq!(rebuilt, a);
        // different seeds eventually differ
        assert!((0..10).any(|s| LetterAssignment::assign(task, s) != a));
    }
}
