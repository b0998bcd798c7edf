use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ANSWER_PREFIX: &str = "answer:";
pub const PASSAGE_PREFIX: &str = "passage:";
pub const DISTRACTOR_PREFIX: &str = "distractor:";

/// Input format of a QG dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Answer is a span of the passage.
    Extractive,
    /// Free-form answer.
    Abstractive,
    /// Answer plus distractor options.
    Multichoice,
    /// Answer is "yes" or "no".
    Boolean,
}

impl Format {
    pub const ALL: [Format; 4] = [
        Format::Extractive,
        Format::Abstractive,
        Format::Multichoice,
        Format::Boolean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Extractive => "extractive",
            Format::Abstractive => "abstractive",
            Format::Multichoice => "multichoice",
            Format::Boolean => "boolean",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Format::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::validation("format", format!("unknown format {s:?}")))
    }
}

/// One raw question-generation record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QgInstance {
    pub format: Format,
    pub context: String,
    pub answer: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distractors: Vec<String>,
}

impl QgInstance {
    /// Checks the per-format rules.
    pub fn validate(&self) -> Result<()> {
        match self.format {
            Format::Extractive if !self.context.contains(self.answer.as_str()) => {
                return Err(Error::validation(
                    "extractive-answer-subspan",
                    format!("answer {:?} does not occur in the context", self.answer),
                ));
            }
            Format::Boolean if self.answer != "yes" && self.answer != "no" => {
                return Err(Error::validation(
                    "boolean-answer-yes-no",
                    format!("boolean answer must be \"yes\" or \"no\", got {:?}", self.answer),
                ));
            }
            _ => {}
        }
        match (self.format, self.distractors.is_empty()) {
            (Format::Multichoice, true) => Err(Error::validation(
                "multichoice-needs-distractors",
                "multichoice instance without distractors",
            )),
            (Format::Multichoice, false) | (_, true) => Ok(()),
            (f, false) => Err(Error::validation(
                "distractors-only-for-multichoice",
                format!("{f} instance carries distractors"),
            )),
        }
    }

    /// Unified single-string encoding: answer first, then passage, then each
    /// distractor, every component behind its prefix.
    pub fn unify(&self) -> Result<String> {
        self.validate()?;
        let mut out = format!(
            "{ANSWER_PREFIX} {} {PASSAGE_PREFIX} {}",
            self.answer, self.context
        );
        for d in &self.distractors {
            out.push(' ');
            out.push_str(DISTRACTOR_PREFIX);
            out.push(' ');
            out.push_str(d);
        }
        Ok(out)
    }
}
