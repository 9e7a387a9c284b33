//! Rule-based rejection of generated QA pairs.

use serde::{Deserialize, Serialize};

use super::{FilterStatus, QAPair};

/// Runs of letters or digits. Punctuation does not count.
pub fn word_count(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        let w = c.is_alphanumeric();
        if w && !in_word {
            n += 1;
        }
        in_word = w;
    }
    n
}

pub trait FilterRule: Send + Sync {
    fn id(&self) -> &str;
    fn describe(&self) -> String;
    fn passes(&self, pair: &QAPair) -> bool;
}

pub struct NonEnglish {
    pub min_ascii_ratio: f64,
}

impl FilterRule for NonEnglish {
    fn id(&self) -> &str {
        "non_english"
    }

    fn describe(&self) -> String {
        format!("at least {:.0}% of non-space characters are ASCII", self.min_ascii_ratio * 100.0)
    }

    fn passes(&self, pair: &QAPair) -> bool {
        let (mut ascii, mut total) = (0usize, 0usize);
        for text in std::iter::once(&pair.question).chain(&pair.answers) {
            for c in text.chars().filter(|c| !c.is_whitespace()) {
                total += 1;
                ascii += usize::from(c.is_ascii());
            }
        }
        total == 0 || ascii as f64 / total as f64 >= self.min_ascii_ratio
    }
}

pub struct TooShortQuestion {
    pub min_tokens: usize,
}

impl FilterRule for TooShortQuestion {
    fn id(&self) -> &str {
        "too_short_question"
    }

    fn describe(&self) -> String {
        format!("question has at least {} words", self.min_tokens)
    }

    fn passes(&self, pair: &QAPair) -> bool {
        word_count(&pair.question) >= self.min_tokens
    }
}

/// With two answers the first is the concise variant and the second the
/// detailed one; a lone answer is held to the detailed limit.
pub struct TooLongAnswer {
    pub max_concise: usize,
    pub max_detailed: usize,
}

impl FilterRule for TooLongAnswer {
    fn id(&self) -> &str {
        "too_long_answer"
    }

    fn describe(&self) -> String {
        format!(
            "concise answer at most {} words, detailed answer at most {}",
            self.max_concise, self.max_detailed
        )
    }

    fn passes(&self, pair: &QAPair) -> bool {
        match pair.answers.as_slice() {
            [only] => word_count(only) <= self.max_detailed,
            [concise, detailed, ..] => word_count(concise) <= self.max_concise && word_count(detailed) <= self.max_detailed,
            [] => false,
        }
    }
}

pub struct MissingQuestionMark;

impl FilterRule for MissingQuestionMark {
    fn id(&self) -> &str {
        "missing_question_mark"
    }

    fn describe(&self) -> String {
        "question ends with '?'".into()
    }

    fn passes(&self, pair: &QAPair) -> bool {
        let q = pair.question.trim_end();
        q.ends_with('?') || q.ends_with('？')
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub min_question_tokens: usize,
    pub max_concise_answer_tokens: usize,
    pub max_detailed_answer_tokens: usize,
    pub min_ascii_ratio: f64,
    pub require_question_mark: bool,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_question_tokens: 6,
            max_concise_answer_tokens: 30,
            max_detailed_answer_tokens: 120,
            min_ascii_ratio: 0.9,
            require_question_mark: true,
        }
    }
}

/// Ordered rule list; the first failing rule names the rejection.
pub struct FilterRules {
    rules: Vec<Box<dyn FilterRule>>,
}

impl FilterRules {
    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn from_thresholds(t: &FilterThresholds) -> Self {
        let mut rules = Self::empty();
        rules.push(Box::new(NonEnglish {
            min_ascii_ratio: t.min_ascii_ratio,
        }));
        rules.push(Box::new(TooShortQuestion {
            min_tokens: t.min_question_tokens,
        }));
        rules.push(Box::new(TooLongAnswer {
            max_concise: t.max_concise_answer_tokens,
            max_detailed: t.max_detailed_answer_tokens,
        }));
        if t.require_question_mark {
            rules.push(Box::new(MissingQuestionMark));
        }
        rules
    }

    pub fn push(&mut self, rule: Box<dyn FilterRule>) {
        self.rules.push(rule);
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rules.iter().map(|r| r.id()).collect()
    }

    pub fn check(&self, pair: &QAPair) -> FilterStatus {
        match self.rules.iter().find(|r| !r.passes(pair)) {
            Some(rule) => FilterStatus::Rejected(rule.id().to_string()),
            None => FilterStatus::Kept,
        }
    }
}

impl Default for FilterRules {
    fn default() -> Self {
        Self::from_thresholds(&FilterThresholds::default())
    }
}

/// Sets every pair's status and splits them into kept and rejected.
pub fn filter_qa(pairs: Vec<QAPair>, rules: &FilterRules) -> (Vec<QAPair>, Vec<QAPair>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for mut pair in pairs {
        pair.filter_status = rules.check(&pair);
        if pair.filter_status == FilterStatus::Kept {
            kept.push(pair);
        } else {
            rejected.push(pair);
        }
    }
    (kept, rejected)
}
