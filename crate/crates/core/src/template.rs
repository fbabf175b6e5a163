//! Manual templates with sentence and mask slots, and verbalizers mapping
//! labels to single vocabulary words.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Metric;
use crate::vocab::{self, Vocab, CLS_ID, MASK_ID, SEP_ID};

const S1_MARK: &str = "<S1>";
const S2_MARK: &str = "<S2>";
const MASK_MARK: &str = "[MASK]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Literal(Vec<String>),
    S1,
    S2,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

/// Parses a pattern such as `"<S1> it was [MASK] ."`.
pub fn parse_template(pattern: &str) -> Result<Template> {
    if pattern.trim().is_empty() {
        return Err(Error::Template("empty pattern".into()));
    }
    let mut segments = Vec::new();
    let mut rest = pattern;
    loop {
        let next = [S1_MARK, S2_MARK, MASK_MARK]
            .iter()
            .filter_map(|m| rest.find(m).map(|at| (at, *m)))
            .min_by_key(|(at, _)| *at);
        let (literal, marker) = match next {
            Some((at, m)) => (&rest[..at], Some(m)),
            None => (rest, None),
        };
        let words = vocab::normalize(literal);
        if !words.is_empty() {
            segments.push(Segment::Literal(words));
        }
        match marker {
            Some(m) => {
                segments.push(match m {
                    S1_MARK => Segment::S1,
                    S2_MARK => Segment::S2,
                    _ => Segment::Mask,
                });
                rest = &rest[literal.len() + m.len()..];
            }
            None => break,
        }
    }
    Template::new(segments)
}

impl Template {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let count = |s: &Segment| segments.iter().filter(|x| *x == s).count();
        match count(&Segment::Mask) {
            1 => {}
            n => return Err(Error::Template(format!("expected exactly one [MASK], found {n}"))),
        }
        if count(&Segment::S1) > 1 || count(&Segment::S2) > 1 {
            return Err(Error::Template("sentence slots may appear at most once".into()));
        }
        let pos = |s: &Segment| segments.iter().position(|x| x == s);
        if let Some(s2) = pos(&Segment::S2) {
            match pos(&Segment::S1) {
                Some(s1) if s1 < s2 => {}
                _ => return Err(Error::Template("<S2> must come after <S1>".into())),
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn has_s1(&self) -> bool {
        self.segments.contains(&Segment::S1)
    }

    pub fn has_s2(&self) -> bool {
        self.segments.contains(&Segment::S2)
    }

    pub fn arity(&self) -> usize {
        if self.has_s2() {
            2
        } else {
            1
        }
    }

    /// Pattern string with single spaces between segments.
    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(words) => words.join(" "),
                Segment::S1 => S1_MARK.to_string(),
                Segment::S2 => S2_MARK.to_string(),
                Segment::Mask => MASK_MARK.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn instantiate(&self, s1: &str, s2: Option<&str>, vocab: &Vocab) -> Result<PromptedInput> {
        self.instantiate_within(s1, s2, vocab, usize::MAX)
    }

    /// Builds `[CLS] ... [SEP]` from the template, truncating the right end of
    /// S1 (then S2) so the result has at most `max_len` tokens. Template
    /// literals and the mask are never dropped.
    pub fn instantiate_within(
        &self,
        s1: &str,
        s2: Option<&str>,
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<PromptedInput> {
        match (self.has_s2(), s2.is_some()) {
            (true, false) => return Err(Error::Arity("template needs a second sentence".into())),
            (false, true) => return Err(Error::Arity("template takes a single sentence".into())),
            _ => {}
        }
        if !self.has_s1() && !s1.trim().is_empty() {
            return Err(Error::Arity("template has no <S1> slot".into()));
        }
        let mut ids1 = vocab::encode(s1, vocab);
        let mut ids2 = s2.map(|s| vocab::encode(s, vocab)).unwrap_or_default();
        let literals: Vec<Vec<usize>> = self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Literal(words) => words.iter().map(|w| vocab.id(w).unwrap_or(vocab::UNK_ID)).collect(),
                _ => Vec::new(),
            })
            .collect();
        let fixed = 3 + literals.iter().map(Vec::len).sum::<usize>();
        if fixed > max_len {
            return Err(Error::Template(format!(
                "template needs {fixed} positions but only {max_len} are available"
            )));
        }
        let budget = max_len - fixed;
        let mut excess = (ids1.len() + ids2.len()).saturating_sub(budget);
        let cut = excess.min(ids1.len());
        ids1.truncate(ids1.len() - cut);
        excess -= cut;
        ids2.truncate(ids2.len() - excess);

        let mut ids = vec![CLS_ID];
        let mut mask_index = 0;
        for (seg, lit) in self.segments.iter().zip(literals) {
            match seg {
                Segment::Literal(_) => ids.extend(lit),
                Segment::S1 => ids.extend(&ids1),
                Segment::S2 => ids.extend(&ids2),
                Segment::Mask => {
                    mask_index = ids.len();
                    ids.push(MASK_ID);
                }
            }
        }
        ids.push(SEP_ID);
        Ok(PromptedInput { ids, mask_index })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Token ids of a templated example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptedInput {
    pub ids: Vec<usize>,
    pub mask_index: usize,
}

impl PromptedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of positions attention may look at (the whole unpadded input).
    pub fn attention_len(&self) -> usize {
        self.ids.len()
    }
}

/// Ordered map from label name to a single label word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verbalizer {
    entries: Vec<(String, String)>,
}

impl Verbalizer {
    pub fn new<L: Into<String>, W: AsRef<str>>(pairs: impl IntoIterator<Item = (L, W)>) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (label, word) in pairs {
            let label = label.into();
            let tokens = vocab::normalize(word.as_ref());
            let [token] = tokens.as_slice() else {
                return Err(Error::Verbalizer(format!(
                    "label word `{}` for `{label}` must be exactly one token",
                    word.as_ref()
                )));
            };
            if entries.iter().any(|(l, _)| *l == label) {
                return Err(Error::Verbalizer(format!("duplicate label `{label}`")));
            }
            if entries.iter().any(|(_, w)| w == token) {
                return Err(Error::Verbalizer(format!("duplicate label word `{token}`")));
            }
            entries.push((label, token.clone()));
        }
        if entries.is_empty() {
            return Err(Error::Verbalizer("no labels".into()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, w)| w.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn class_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|(l, _)| l == label)
    }

    /// Vocabulary ids of the label words, in label order.
    pub fn label_word_ids(&self, vocab: &Vocab) -> Result<Vec<usize>> {
        self.entries
            .iter()
            .map(|(label, word)| {
                vocab.id(word).ok_or_else(|| {
                    Error::Verbalizer(format!("label word `{word}` for `{label}` is not in the vocabulary"))
                })
            })
            .collect()
    }
}

pub fn label_word_ids(v: &Verbalizer, vocab: &Vocab) -> Result<Vec<usize>> {
    v.label_word_ids(vocab)
}

/// One task entry of the task config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub name: String,
    pub template: String,
    pub labels: Vec<(String, String)>,
    pub metric: Metric,
    pub arity: usize,
}

/// A parsed, validated task.
#[derive(Clone, Debug)]
pub struct Task {
    pub name: String,
    pub template: Template,
    pub verbalizer: Verbalizer,
    pub metric: Metric,
    pub arity: usize,
}

impl TaskConfig {
    pub fn build(&self) -> Result<Task> {
        let template = parse_template(&self.template)?;
        let verbalizer = Verbalizer::new(self.labels.iter().map(|(l, w)| (l.clone(), w.as_str())))?;
        if !(1..=2).contains(&self.arity) || template.arity() != self.arity {
            return Err(Error::Config(format!(
                "task `{}` declares arity {} but its template has arity {}",
                self.name,
                self.arity,
                template.arity()
            )));
        }
        if self.metric == Metric::F1 && verbalizer.len() != 2 {
            return Err(Error::Config(format!(
                "task `{}` uses f1 with {} classes; f1 needs exactly 2",
                self.name,
                verbalizer.len()
            )));
        }
        Ok(Task {
            name: self.name.clone(),
            template,
            verbalizer,
            metric: self.metric,
            arity: self.arity,
        })
    }
}

pub const TASK_FILE_VERSION: u32 = 1;

/// Contents of a task config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub version: u32,
    #[serde(rename = "task")]
    pub tasks: Vec<TaskConfig>,
}

const BUNDLED_TASKS: &str = include_str!("../../../configs/tasks.toml");

impl TaskSet {
    /// The nine bundled tasks with their manual templates and label words.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TASKS).expect("bundled task file is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let set: TaskSet = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        if set.version != TASK_FILE_VERSION {
            return Err(Error::Config(format!("unsupported task file version {}", set.version)));
        }
        for t in &set.tasks {
            t.build()?;
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("task set serializes")
    }

    pub fn get(&self, name: &str) -> Result<Task> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("no task named `{name}`")))?
            .build()
    }
}
