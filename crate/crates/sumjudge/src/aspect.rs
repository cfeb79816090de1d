//! Quality aspects a summary can be scored on.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A quality dimension scored independently of the others.
///
/// The first four form the development aspect set; `factuality` and
/// `readability` appear in the test aspect set and are only usable where the
/// template set carries criteria text for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Relevance,
    Consistency,
    Coherence,
    Fluency,
    Factuality,
    Readability,
}

impl Aspect {
    /// Aspect set used for the development (SummEval-style) configuration.
    pub const DEV_SET: [Aspect; 4] = [
        Aspect::Relevance,
        Aspect::Consistency,
        Aspect::Coherence,
        Aspect::Fluency,
    ];

    /// Aspect set used for the test configuration.
    pub const TEST_SET: [Aspect; 3] = [Aspect::Relevance, Aspect::Factuality, Aspect::Fluency];

    /// Lowercase name as used in file schemas and prompt text.
    pub fn name(self) -> &'static str {
        match self {
            Aspect::Relevance => "relevance",
            Aspect::Consistency => "consistency",
            Aspect::Coherence => "coherence",
            Aspect::Fluency => "fluency",
            Aspect::Factuality => "factuality",
            Aspect::Readability => "readability",
        }
    }

    /// Capitalized form for prompt headings ("- Relevance:").
    pub fn title(self) -> &'static str {
        match self {
            Aspect::Relevance => "Relevance",
            Aspect::Consistency => "Consistency",
            Aspect::Coherence => "Coherence",
            Aspect::Fluency => "Fluency",
            Aspect::Factuality => "Factuality",
            Aspect::Readability => "Readability",
        }
    }

    /// Adjective form used by rationale prompts ("not relevant with the source").
    pub fn adjective(self) -> &'static str {
        match self {
            Aspect::Relevance => "relevant",
            Aspect::Consistency => "consistent",
            Aspect::Coherence => "coherent",
            Aspect::Fluency => "fluent",
            Aspect::Factuality => "factual",
            Aspect::Readability => "readable",
        }
    }

    pub fn all() -> [Aspect; 6] {
        [
            Aspect::Relevance,
            Aspect::Consistency,
            Aspect::Coherence,
            Aspect::Fluency,
            Aspect::Factuality,
            Aspect::Readability,
        ]
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aspect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relevance" => Ok(Aspect::Relevance),
            "consistency" => Ok(Aspect::Consistency),
            "coherence" => Ok(Aspect::Coherence),
            "fluency" => Ok(Aspect::Fluency),
            "factuality" => Ok(Aspect::Factuality),
            "readability" => Ok(Aspect::Readability),
            other => Err(format!("unknown aspect: {other:?}")),
        }
    }
}
