//! Golden-file tests pinning prompt wording byte-for-byte.
//!
//! Regenerate fixtures after an intentional wording change with:
//! `RELVAL_UPDATE_GOLDENS=1 cargo test -p relval-core --test golden_prompts`

use std::path::PathBuf;

use relval_core::promptgen::{
    parse_choice, ChoiceOutcome, HistoryRound, OutcomeHistory, PromptRenderer, PromptStyle,
    LETTER_POOL,
};
use relval_core::taskdef::{builtin_catalog, find_task, TaskSpec};

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/golden")
        .join(name)
}

fn check_golden(name: &str, rendered: &str) {
    let path = fixture_path(name);
    if std::env::var("RELVAL_UPDATE_GOLDENS").is_ok() {
        std::fs::write(&path, rendered).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing fixture {}: {e}", path.display()));
    assert_eq!(
        rendered,
        expected,
        "rendering drifted from {}",
        path.display()
    );
}

fn task(name: &str) -> TaskSpec {
    find_task(&builtin_catalog(), name).unwrap().clone()
}

fn hw2023a_history() -> OutcomeHistory {
    let mut history = OutcomeHistory::default();
    history.push(HistoryRound {
        context_id: 3,
        entries: vec![('D', 27.43), ('B', 18.2)],
    });
    history.push(HistoryRound {
        context_id: 1,
        entries: vec![('A', 15.91), ('C', 17.05)],
    });
    history.push(HistoryRound {
        context_id: 3,
        entries: vec![('B', 30.0), ('D', 29.31)],
    });
    history
}

#[test]
fn hw2023a_standard_prompt_matches_fixture() {
    let task = task("HW2023a");
    let renderer = PromptRenderer::new(&task, PromptStyle::standard());
    let query = renderer.render_choice_query(&['D', 'B'], 41).unwrap();
    let prompt = renderer.full_prompt(&hw2023a_history(), &query);
    check_golden("hw2023a_standard.txt", &prompt);
}

#[test]
fn hw2023a_comparisons_prompt_matches_fixture() {
    let task = task("HW2023a");
    let renderer = PromptRenderer::new(&task, PromptStyle::comparisons());
    let query = renderer.render_choice_query(&['D', 'B'], 41).unwrap();
    let prompt = renderer.full_prompt(&hw2023a_history(), &query);
    check_golden("hw2023a_comparisons.txt", &prompt);
}

#[test]
fn v2023_comparisons_prompt_with_tie_matches_fixture() {
    let task = task("V2023");
    let renderer = PromptRenderer::new(&task, PromptStyle::comparisons());
    let mut history = OutcomeHistory::default();
    history.push(HistoryRound {
        context_id: 1,
        entries: vec![('C', 1.0), ('A', 0.0)],
    });
    history.push(HistoryRound {
        context_id: 2,
        entries: vec![('B', 0.0), ('D', 0.0)],
    });
    let query = renderer.render_choice_query(&['C', 'A'], 7).unwrap();
    let prompt = renderer.full_prompt(&history, &query);
    check_golden("v2023_comparisons.txt", &prompt);
}

#[test]
fn bp2023_ternary_comparisons_prompt_matches_fixture() {
    let task = task("BP2023");
    let renderer = PromptRenderer::new(&task, PromptStyle::comparisons());
    let mut history = OutcomeHistory::default();
    history.push(HistoryRound {
        context_id: 3,
        entries: vec![('F', 13.55), ('A', 86.02), ('H', 50.4)],
    });
    let query = renderer.render_choice_query(&['F', 'A', 'H'], 3).unwrap();
    let prompt = renderer.full_prompt(&history, &query);
    check_golden("bp2023_ternary_comparisons.txt", &prompt);
}

#[test]
fn b2018_standard_prompt_with_losses_matches_fixture() {
    let task = task("B2018");
    let renderer = PromptRenderer::new(&task, PromptStyle::standard());
    let mut history = OutcomeHistory::default();
    history.push(HistoryRound {
        context_id: 4,
        entries: vec![('E', -1.0), ('G', 0.0)],
    });
    history.push(HistoryRound {
        context_id: 2,
        entries: vec![('H', 0.1), ('B', 0.0)],
    });
    let query = renderer.render_choice_query(&['E', 'G'], 11).unwrap();
    let prompt = renderer.full_prompt(&history, &query);
    check_golden("b2018_standard.txt", &prompt);
}

#[test]
fn hw2023b_integer_dollar_prompt_matches_fixture() {
    let task = task("HW2023b");
    let renderer = PromptRenderer::new(&task, PromptStyle::comparisons());
    let mut history = OutcomeHistory::default();
    history.push(HistoryRound {
        context_id: 2,
        entries: vec![('A', 44.0), ('F', 16.0)],
    });
    history.push(HistoryRound {
        context_id: 2,
        entries: vec![('F', 16.0), ('A', 10.0)],
    });
    let query = renderer.render_choice_query(&['A', 'F'], 17).unwrap();
    let prompt = renderer.full_prompt(&history, &query);
    check_golden("hw2023b_comparisons.txt", &prompt);
}

#[test]
fn empty_history_prompt_matches_fixture() {
    let task = task("HW2023a");
    let renderer = PromptRenderer::new(&task, PromptStyle::standard());
    let query = renderer.render_choice_query(&['A', 'B'], 2).unwrap();
    let prompt = renderer.full_prompt(&OutcomeHistory::default(), &query);
    check_golden("hw2023a_first_trial.txt", &prompt);
}

#[test]
fn standard_and_comparisons_differ_only_by_comparison_sentences() {
    let task = task("HW2023a");
    let std_r = PromptRenderer::new(&task, PromptStyle::standard());
    let cmp_r = PromptRenderer::new(&task, PromptStyle::comparisons());
    let history = hw2023a_history();
    let std_lines: Vec<String> = std_r
        .render_history(&history)
        .lines()
        .map(String::from)
        .collect();
    let cmp_lines: Vec<String> = cmp_r
        .render_history(&history)
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(std_lines.len(), cmp_lines.len());
    for (s, c) in std_lines.iter().zip(&cmp_lines).skip(1) {
        assert!(c.starts_with(s), "{c:?} does not extend {s:?}");
        let extra = &c[s.len()..];
        assert!(
            extra.is_empty()
                || extra.contains("outcome was higher than")
                || extra.contains("delivered the same outcome"),
            "unexpected added clause {extra:?}"
        );
    }
}

#[test]
fn parse_choice_round_trips_every_letter() {
    for &letter in &LETTER_POOL {
        let reply = format!("I would choose slot machine {letter}.");
        let parsed = parse_choice(&reply, &LETTER_POOL);
        assert_eq!(parsed.outcome, ChoiceOutcome::Chosen(letter));
    }
}
