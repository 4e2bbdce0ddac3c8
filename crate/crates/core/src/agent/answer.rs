//! Answer extraction and scoring conventions.
//!
//! Multiple-choice items yield a choice label, numeric items a normalized
//! number (commas and units stripped), free-form items the trimmed answer
//! text. An empty prediction is always scored incorrect.

use std::sync::LazyLock;

use regex::Regex;

use super::action::FINAL_PREFIX;
use super::types::BenchmarkItem;

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)").unwrap());
static WHOLE_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)\s*$").unwrap());

fn answer_part(final_text: &str) -> &str {
    let upper = final_text.to_ascii_uppercase();
    match upper.find(FINAL_PREFIX) {
        Some(pos) => &final_text[pos + FINAL_PREFIX.len()..],
        None => final_text,
    }
}

pub fn normalize_number(raw: &str) -> String {
    let mut s: String = raw.trim().chars().filter(|&c| c != ',').collect();
    if let Some(stripped) = s.strip_prefix('+') {
        s = stripped.to_string();
    }
    if s.starts_with('.') {
        s.insert(0, '0');
    } else if s.starts_with("-.") {
        s.insert(1, '0');
    }
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn is_numeric_answer(gold: &str) -> bool {
    WHOLE_NUMBER.is_match(gold)
}

fn extract_choice(answer: &str, item: &BenchmarkItem) -> String {
    let choices = item.choices.as_deref().unwrap_or_default();
    for (i, token) in answer.split_whitespace().enumerate() {
        let bare = token.trim_matches(|c: char| !c.is_alphanumeric());
        let Some((label, _)) = choices.iter().find(|(l, _)| l.eq_ignore_ascii_case(bare)) else {
            continue;
        };
        // Lowercase single letters mid-sentence are usually words ("a"),
        // so they only count when bracketed or leading.
        let bracketed = token.contains(['(', '[']) || token.ends_with(')');
        if i == 0 || bracketed || bare == label.as_str() {
            return label.to_ascii_uppercase();
        }
    }
    let text = answer.trim().trim_end_matches('.').trim();
    choices
        .iter()
        .find(|(_, t)| t.trim().eq_ignore_ascii_case(text))
        .map(|(l, _)| l.to_ascii_uppercase())
        .unwrap_or_default()
}

/// Pulls the scored answer out of a final-answer step.
pub fn extract_answer(final_text: &str, item: &BenchmarkItem) -> String {
    let answer = answer_part(final_text);
    if item.is_multiple_choice() {
        extract_choice(answer, item)
    } else if is_numeric_answer(&item.gold_answer) {
        NUMBER.find(answer).map(|m| normalize_number(m.as_str())).unwrap_or_default()
    } else {
        answer.trim().trim_end_matches('.').trim().to_string()
    }
}

fn fold_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Whether an extracted prediction matches the item's gold answer.
pub fn answer_matches(predicted: &str, item: &BenchmarkItem) -> bool {
    if predicted.is_empty() {
        return false;
    }
    if item.is_multiple_choice() {
        return predicted.eq_ignore_ascii_case(item.gold_answer.trim());
    }
    if is_numeric_answer(&item.gold_answer) {
        let gold = normalize_number(&item.gold_answer);
        return match (predicted.parse::<f64>(), gold.parse::<f64>()) {
            (Ok(p), Ok(g)) => (p - g).abs() <= 1e-6 * g.abs().max(1.0),
            _ => predicted == gold,
        };
    }
    fold_text(predicted) == fold_text(&item.gold_answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::types::Difficulty;

    fn item(choices: bool, gold: &str) -> BenchmarkItem {
        BenchmarkItem {
            id: "x".into(),
            dataset: "MathVista".into(),
            question: "?".into(),
            image_ref: "x.png".into(),
            choices: choices.then(|| {
                ["A", "B", "C", "D"].iter().map(|l| (l.to_string(), format!("option {l}"))).collect()
            }),
            gold_answer: gold.into(),
            difficulty: Difficulty::Unknown,
        }
    }

    #[test]
    fn choice_label_normalization() {
        assert_eq!(extract_answer("FINAL ANSWER: (c) because the bar is tallest", &item(true, "C")), "C");
        assert_eq!(extract_answer("FINAL ANSWER: B", &item(true, "C")), "B");
        assert_eq!(extract_answer("FINAL ANSWER: the answer is D.", &item(true, "C")), "D");
        assert_eq!(extract_answer("FINAL ANSWER: option b", &item(true, "B")), "B");
    }

    #[test]
    fn lowercase_article_is_not_a_label() {
        assert_eq!(extract_answer("FINAL ANSWER: it is a cat, so (b)", &item(true, "B")), "B");
    }

    #[test]
    fn numeric_normalization() {
        assert_eq!(extract_answer("FINAL ANSWER: 1,250 vehicles", &item(false, "1250")), "1250");
        assert_eq!(extract_answer("FINAL ANSWER: about 3.50 m/s", &item(false, "3.5")), "3.5");
        assert_eq!(extract_answer("FINAL ANSWER: -.25", &item(false, "-0.25")), "-0.25");
        assert_eq!(normalize_number("+12.000"), "12");
    }

    #[test]
    fn no_answer() {
        assert_eq!(extract_answer("I cannot determine the answer.", &item(true, "A")), "");
        assert_eq!(extract_answer("I cannot determine the answer.", &item(false, "7")), "");
    }

    #[test]
    fn matching() {
        assert!(answer_matches("C", &item(true, "c")));
        assert!(!answer_matches("", &item(true, "A")));
        assert!(answer_matches("1250", &item(false, "1,250")));
        assert!(answer_matches("0.1", &item(false, "0.10")));
        assert!(!answer_matches("12", &item(false, "13")));
        assert!(answer_matches("Blue  Circle", &item(false, "blue circle")));
    }
}
