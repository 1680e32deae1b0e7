//! User-text perturbations. Gold fields stay as generated, so a perturbed
//! turn measures how far the pipeline drifts from the clean reading.
//!
//! | kind         | effect                                                      |
//! |--------------|-------------------------------------------------------------|
//! | lead_synonym | first verb replaced by a synonym the grammar does not know  |
//! | drop_phrase  | last comma-separated phrase removed                         |
//! | also_prefix  | "Also, " in front of a later turn that needs no context     |
//! | bare_and     | " and then " between clauses shortened to " and "           |
//! | pronoun      | "Move it to X" for a context-only reschedule                |

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DialogueSample, SampleTurn, JOINER};
use crate::grammar::{self, RawValue};

/// Mixed into the run seed so noise draws never shift the clean ones.
pub const NOISE_SALT: u64 = 0x6e6f_6973_6521;

const SYNONYMS: [(&str, &str); 12] = [
    ("Search", "Look up"),
    ("Summarize", "Sum up"),
    ("Send", "Shoot"),
    ("Create", "Make"),
    ("Update", "Modify"),
    ("Delete", "Erase"),
    ("Check", "Peek at"),
    ("Find", "Locate"),
    ("Set", "Arrange"),
    ("Withdraw", "Pull back"),
    ("Show", "List"),
    ("Forward", "Pass on"),
];

fn lead_synonym(text: &str) -> Option<String> {
    let (first, rest) = text.split_once(' ')?;
    let (_, syn) = SYNONYMS.iter().find(|(w, _)| w.eq_ignore_ascii_case(first))?;
    Some(format!("{syn} {rest}"))
}

fn drop_phrase(text: &str) -> Option<String> {
    let (masked, quotes) = grammar::mask_quotes(text);
    let cut = masked.rfind(", ")?;
    Some(grammar::unmask(&masked[..cut], &quotes))
}

fn bare_and(text: &str) -> Option<String> {
    let (masked, quotes) = grammar::mask_quotes(text);
    masked.contains(JOINER).then(|| grammar::unmask(&masked.replace(JOINER, " and "), &quotes))
}

/// "Move it to X" when the turn only reschedules the entry in context.
fn pronoun(turn: &SampleTurn) -> Option<String> {
    let parsed = grammar::parse_clause(&turn.user_text)?;
    let only_start = parsed.args.len() == 1 && parsed.args.contains_key("start_time");
    if parsed.api != "update_schedule" || parsed.context_slot("schedule_id").is_none() || !only_start {
        return None;
    }
    match &parsed.args["start_time"] {
        RawValue::Text(t) => Some(format!("Move it to {t}")),
        _ => None,
    }
}

fn candidates(turn: &SampleTurn, index: usize) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let text = &turn.user_text;
    if turn.gold_plan.is_some() {
        if let Some(t) = lead_synonym(text) {
            out.push(("lead_synonym", t));
        }
        if let Some(t) = drop_phrase(text) {
            out.push(("drop_phrase", t));
        }
    }
    if index > 0 && !turn.gold_related {
        out.push(("also_prefix", format!("Also, {text}")));
    }
    if let Some(t) = bare_and(text) {
        out.push(("bare_and", t));
    }
    if let Some(t) = pronoun(turn) {
        out.push(("pronoun", t));
    }
    out
}

/// Perturbs each turn with probability `rate`, recording what was done.
pub fn perturb(sample: &mut DialogueSample, rate: f64, rng: &mut ChaCha8Rng) {
    for (i, turn) in sample.turns.iter_mut().enumerate() {
        if !rng.random_bool(rate) {
            continue;
        }
        let options = candidates(turn, i);
        // The deictic form wins whenever the turn allows it.
        let pick = options.iter().find(|(k, _)| *k == "pronoun").or_else(|| options.choose(rng));
        if let Some((kind, text)) = pick {
            turn.user_text = text.clone();
            sample.noise.push(format!("turn{}:{kind}", i + 1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbations() {
        assert_eq!(lead_synonym("Find the todos").unwrap(), "Locate the todos");
        assert!(!grammar::recognizes("Locate the todos"));
        assert_eq!(drop_phrase("Create a todo titled \"a, b\", due 3 PM").unwrap(), "Create a todo titled \"a, b\"");
        assert_eq!(drop_phrase("Find the todos"), None);
        assert_eq!(bare_and("Find the todos and then delete those todos").unwrap(), "Find the todos and delete those todos");
        assert_eq!(bare_and("Create a todo titled \"x and then y\""), None);
    }
}
