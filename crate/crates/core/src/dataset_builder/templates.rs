//! Generation prompt templates keyed by strategy, split and phase.
//!
//! Placeholders: `{material}` (the selected chunks), `{question}` (one
//! question, for two-phase training prompts) and `{questions}` (numbered
//! questions, for test answer prompts).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Split, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Questions and answers in one call.
    Generate,
    Question,
    Answer,
    AnswerConcise,
    AnswerKeywords,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Generate => "generate",
            Phase::Question => "question",
            Phase::Answer => "answer",
            Phase::AnswerConcise => "answer_concise",
            Phase::AnswerKeywords => "answer_keywords",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemplateKey {
    pub strategy: StrategyKind,
    pub split: Split,
    pub phase: Phase,
}

impl TemplateKey {
    pub fn new(strategy: StrategyKind, split: Split, phase: Phase) -> Self {
        Self { strategy, split, phase }
    }

    pub fn id(&self) -> String {
        format!("dataset/{}/{}/{}", self.strategy, self.split, self.phase.as_str())
    }
}

/// The phases a strategy runs through for a split, in call order.
pub fn phases(strategy: StrategyKind, split: Split) -> &'static [Phase] {
    match (strategy, split) {
        (StrategyKind::CrossParagraph, Split::Train) => &[Phase::Question, Phase::Answer],
        (_, Split::Train) => &[Phase::Generate],
        (_, Split::Test) => &[Phase::Question, Phase::AnswerConcise, Phase::AnswerKeywords],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateLibrary {
    templates: BTreeMap<TemplateKey, String>,
}

const TRAIN_TEXT: &str = "\
You write study questions about one paragraph of a research paper.
Write 3 questions that take careful reasoning over the paragraph, each with a detailed answer drawn only from it.
Ask about this paragraph, not about the document as a whole or its main idea. No multiple choice. Write in English.
Reply in exactly this layout:
[Q1]: ...
[A1]: ...
[Q2]: ...
[A2]: ...
[Q3]: ...
[A3]: ...

Paragraph:
{material}
";

const TRAIN_FIGURE: &str = "\
You write study questions about one figure or table of a research paper.
Write 2 questions whose answers can be read off the attached image alone; any text below is context for you only.
Do not name the figure or table and do not use the words \"figure\" or \"table\" in a question.
Each answer should be detailed and say which figure or table it comes from.
Reply in exactly this layout:
[Q1]: ...
[A1]: ...
[Q2]: ...
[A2]: ...

Material:
{material}
";

const TRAIN_SECTION: &str = "\
You write study questions about one section of a research paper, including its figures and tables.
Write 3 questions answerable directly from the section, one sub-question each. Write in English.
Give every question two answers: a short one of at most 20 words, then a detailed one that walks through the reasoning.
Do not name figures or tables in the questions.
Reply in exactly this layout:
[Q1]: ...
[A11]: short answer
[A12]: detailed answer
[Q2]: ...
[A21]: ...
[A22]: ...
[Q3]: ...
[A31]: ...
[A32]: ...

Section:
{material}
";

const TRAIN_CROSS_QUESTION: &str = "\
The paragraphs below come from different places in one research paper and share a theme.
Write one open-ended question that ties them together. Do not mention the paragraph idx values.
Reply as:
[Q]: ...

Paragraphs:
{material}
";

const TRAIN_CROSS_ANSWER: &str = "\
Answer the question using only the paragraphs below.
Give a short answer of at most 20 words, then a detailed answer that walks through the reasoning.
Reply as:
[A1]: short answer
[A2]: detailed answer

Paragraphs:
{material}

Question: {question}
";

const TEST_QUESTION: &str = "\
Write 2 questions of at most 30 words about the material below, in English.
Each question must be answerable from the material alone and call for a written answer, not a choice.
Do not refer to a figure or table by its label and do not use phrases such as \"from the figure/table\".
If the material has nothing worth asking about, reply with the single word quit.
Reply as:
[Q1]: ...
[Q2]: ...

Material:
{material}
";

const TEST_ANSWER_CONCISE: &str = "\
Answer both questions from the material below, each in one sentence of fewer than 20 words.
Think it through first, then give the answer, in this layout:
[thinking procedure]: ...
[A1]: ...
[thinking procedure]: ...
[A2]: ...

Material:
{material}

Questions:
{questions}
";

const TEST_ANSWER_KEYWORDS: &str = "\
Answer both questions from the material below with a few keywords each, fewer than 20 words.
Think it through first, then give the answer, in this layout:
[thinking procedure]: ...
[A1]: ...
[thinking procedure]: ...
[A2]: ...

Material:
{material}

Questions:
{questions}
";

impl TemplateLibrary {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        use StrategyKind::*;
        let mut lib = Self::empty();
        lib.insert(TemplateKey::new(TextOnly, Split::Train, Phase::Generate), TRAIN_TEXT);
        lib.insert(TemplateKey::new(ImageOnly, Split::Train, Phase::Generate), TRAIN_FIGURE);
        lib.insert(TemplateKey::new(ImageText, Split::Train, Phase::Generate), TRAIN_FIGURE);
        lib.insert(TemplateKey::new(Section, Split::Train, Phase::Generate), TRAIN_SECTION);
        lib.insert(TemplateKey::new(CrossParagraph, Split::Train, Phase::Question), TRAIN_CROSS_QUESTION);
        lib.insert(TemplateKey::new(CrossParagraph, Split::Train, Phase::Answer), TRAIN_CROSS_ANSWER);
        for s in [TextOnly, ImageOnly, ImageText, Section] {
            lib.insert(TemplateKey::new(s, Split::Test, Phase::Question), TEST_QUESTION);
            lib.insert(TemplateKey::new(s, Split::Test, Phase::AnswerConcise), TEST_ANSWER_CONCISE);
            lib.insert(TemplateKey::new(s, Split::Test, Phase::AnswerKeywords), TEST_ANSWER_KEYWORDS);
        }
        lib
    }

    pub fn insert(&mut self, key: TemplateKey, text: impl Into<String>) {
        self.templates.insert(key, text.into());
    }

    pub fn get(&self, key: &TemplateKey) -> Result<&str, DatasetError> {
        self.templates
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| DatasetError::Template(format!("no template for {}", key.id())))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Overrides from TOML: one table per strategy, one per split below it,
    /// and the phase name as key, e.g. `[text_only.train] generate = "..."`.
    pub fn with_overrides_toml(mut self, text: &str) -> Result<Self, DatasetError> {
        type Overrides = BTreeMap<StrategyKind, BTreeMap<Split, BTreeMap<Phase, String>>>;
        let parsed: Overrides = toml::from_str(text).map_err(|e| DatasetError::Template(format!("bad template file: {e}")))?;
        for (strategy, splits) in parsed {
            for (split, phases) in splits {
                for (phase, body) in phases {
                    self.insert(TemplateKey::new(strategy, split, phase), body);
                }
            }
        }
        Ok(self)
    }
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Substitutes placeholders in one pass, so substituted text is never
/// scanned for further placeholders.
pub fn render(template: &str, material: &str, question: &str, questions: &str) -> String {
    let mut out = String::with_capacity(template.len() + material.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = [("{material}", material), ("{questions}", questions), ("{question}", question)]
            .into_iter()
            .find(|(name, _)| tail.starts_with(name));
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
