//! Extraction of `[Qi]` / `[Ai]` / `[Aij]` blocks from generator output.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Which markers a reply is expected to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Markers {
    /// `[Qi]` followed by `[Ai]`, or by `[Ai1]` and `[Ai2]`.
    QuestionsAndAnswers,
    /// `[Qi]` or a single `[Q]`.
    Questions,
    /// `[Ai]`, possibly preceded by `[thinking procedure]` blocks.
    Answers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedItem {
    pub index: u32,
    pub question: Option<String>,
    pub answers: Vec<String>,
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)\[\s*(thinking procedure|q|a)\s*(\d*)\s*\]\s*:?").expect("valid regex"))
}

fn is_quit(raw: &str) -> bool {
    let t = raw.trim().trim_matches(|c: char| c == '\'' || c == '"' || c == '`' || c == '.' || c.is_whitespace());
    t.eq_ignore_ascii_case("quit")
}

enum Block<'a> {
    Q(u32),
    A(&'a str),
    Thinking,
}

/// Splits a generator reply into items. `[thinking procedure]` blocks are
/// dropped; a bare `quit` reply becomes [`DatasetError::SkipDocument`].
pub fn parse_generation(raw: &str, expected: Markers) -> Result<Vec<GeneratedItem>, DatasetError> {
    if is_quit(raw) {
        return Err(DatasetError::SkipDocument);
    }
    let re = marker_regex();
    let marks: Vec<_> = re.captures_iter(raw).collect();
    let mut blocks: Vec<(Block<'_>, String)> = Vec::with_capacity(marks.len());
    for (n, cap) in marks.iter().enumerate() {
        let whole = cap.get(0).expect("match");
        let end = marks.get(n + 1).map_or(raw.len(), |c| c.get(0).expect("match").start());
        let body = raw[whole.end()..end].trim().to_string();
        let kind = cap[1].to_ascii_lowercase();
        let digits = cap.get(2).map_or("", |m| m.as_str());
        let block = match kind.as_str() {
            "q" => Block::Q(digits.parse().unwrap_or(1)),
            "a" => Block::A(digits),
            _ => Block::Thinking,
        };
        blocks.push((block, body));
    }

    let mut items: BTreeMap<u32, GeneratedItem> = BTreeMap::new();
    let mut last_q: Option<u32> = None;
    for (block, body) in blocks {
        match block {
            Block::Thinking => {}
            Block::Q(i) => {
                if expected == Markers::Answers || body.is_empty() {
                    continue;
                }
                entry(&mut items, i).question = Some(body);
                last_q = Some(i);
            }
            Block::A(digits) => {
                if expected == Markers::Questions || body.is_empty() {
                    continue;
                }
                let index = answer_index(digits, &items, last_q);
                entry(&mut items, index).answers.push(body);
            }
        }
    }

    let out: Vec<GeneratedItem> = items
        .into_values()
        .filter(|it| match expected {
            Markers::QuestionsAndAnswers => it.question.is_some() && !it.answers.is_empty(),
            Markers::Questions => it.question.is_some(),
            Markers::Answers => !it.answers.is_empty(),
        })
        .collect();
    if out.is_empty() {
        return Err(DatasetError::GenerationParse(format!(
            "no {expected:?} blocks found in {} bytes of output",
            raw.len()
        )));
    }
    Ok(out)
}

fn entry(items: &mut BTreeMap<u32, GeneratedItem>, index: u32) -> &mut GeneratedItem {
    items.entry(index).or_insert_with(|| GeneratedItem {
        index,
        question: None,
        answers: Vec::new(),
    })
}

/// `[A12]` is the second answer of question 1 when question 12 does not
/// exist but question 1 does; otherwise the digits name the question.
fn answer_index(digits: &str, items: &BTreeMap<u32, GeneratedItem>, last_q: Option<u32>) -> u32 {
    if digits.is_empty() {
        return last_q.unwrap_or(1);
    }
    let whole: u32 = digits.parse().unwrap_or(1);
    let has_q = |i: u32| items.get(&i).is_some_and(|it| it.question.is_some());
    if digits.len() >= 2 && !has_q(whole) {
        let (head, tail) = digits.split_at(digits.len() - 1);
        if let (Ok(q), true) = (head.parse::<u32>(), matches!(tail, "1" | "2")) {
            if has_q(q) {
                return q;
            }
        }
    }
    whole
}
