//! Template storage and slot substitution.

use std::collections::BTreeMap;
use std::path::Path;

use super::PromptError;
use crate::stable_hash::{fnv1a64, to_hex};

macro_rules! builtin {
    ($($key:literal),* $(,)?) => {
        &[$(($key, include_str!(concat!("../../templates/", $key)))),*]
    };
}

/// Shipped template files, embedded at compile time from `templates/`.
const BUILTIN: &[(&str, &str)] = builtin![
    "baseline/frame.txt",
    "criteria/ad/coherence.txt",
    "criteria/ad/consistency.txt",
    "criteria/ad/factuality.txt",
    "criteria/ad/fluency.txt",
    "criteria/ad/overall.txt",
    "criteria/ad/relevance.txt",
    "criteria/ad_gpt/relevance.txt",
    "criteria/ht/coherence.txt",
    "criteria/ht/consistency.txt",
    "criteria/ht/factuality.txt",
    "criteria/ht/fluency.txt",
    "criteria/ht/overall.txt",
    "criteria/ht/relevance.txt",
    "criteria/ht_gpt/relevance.txt",
    "criteria/mt/coherence.txt",
    "criteria/mt/consistency.txt",
    "criteria/mt/fluency.txt",
    "criteria/mt/overall.txt",
    "criteria/mt/relevance.txt",
    "criteria/mt_gpt/relevance.txt",
    "criteria/rg/coherence.txt",
    "criteria/rg/consistency.txt",
    "criteria/rg/factuality.txt",
    "criteria/rg/fluency.txt",
    "criteria/rg/overall.txt",
    "criteria/rg/relevance.txt",
    "demonstration/base.txt",
    "demonstration/reason.txt",
    "filtering/frame.txt",
    "human_guideline/frame.txt",
    "human_guideline/steps/base.txt",
    "human_guideline/steps/complex.txt",
    "human_guideline/task_description/base.txt",
    "human_guideline/task_description/expert.txt",
    "human_guideline/task_description/long.txt",
    "human_guideline/task_description/short.txt",
    "model_guideline/frame.txt",
    "model_guideline/steps/base.txt",
    "model_guideline/steps/complex.txt",
    "model_guideline/task_description/base.txt",
    "model_guideline/task_description/expert.txt",
    "model_guideline/task_description/long.txt",
    "model_guideline/task_description/short.txt",
    "rationale_generation/frame.txt",
];

/// Read-only set of template files, keyed by path relative to the template
/// root ("human_guideline/frame.txt").
#[derive(Debug, Clone)]
pub struct TemplateSet {
    files: BTreeMap<String, String>,
    origin: String,
}

impl TemplateSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        TemplateSet {
            files: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            origin: "builtin".to_string(),
        }
    }

    /// Load every `*.txt` under `dir` (recursively), keyed by relative path.
    /// Used by `--template-dir` overrides; missing files surface only when a
    /// render actually needs them.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut files = BTreeMap::new();
        collect_txt(dir, dir, &mut files)?;
        Ok(TemplateSet {
            files,
            origin: dir.display().to_string(),
        })
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn get(&self, key: &str) -> Result<&str, PromptError> {
        self.files
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| PromptError::TemplateMissing {
                key: key.to_string(),
                origin: self.origin.clone(),
            })
    }

    /// Stable per-file content hashes, recorded in run manifests.
    pub fn fingerprints(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(k, v)| (k.clone(), to_hex(fnv1a64(v.as_bytes()))))
            .collect()
    }
}

fn collect_txt(
    root: &Path,
    dir: &Path,
    files: &mut BTreeMap<String, String>,
) -> Result<(), PromptError> {
    let read_err = |source: std::io::Error| PromptError::TemplateDir {
        path: dir.display().to_string(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(read_err)? {
        let entry = entry.map_err(read_err)?;
        let path = entry.path();
        if path.is_dir() {
            collect_txt(root, &path, files)?;
        } else if path.extension().is_some_and(|ext| ext == "txt") {
            let content = std::fs::read_to_string(&path).map_err(|source| {
                PromptError::TemplateDir {
                    path: path.display().to_string(),
                    source,
                }
            })?;
            let key = path
                .strip_prefix(root)
                .expect("path is under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            files.insert(key, content);
        }
    }
    Ok(())
}

/// Substitute `{slot}` placeholders in a single left-to-right pass.
///
/// Inserted values are never rescanned, so sample text containing
/// slot-shaped substrings passes through verbatim. Unknown placeholders are
/// left untouched.
pub fn substitute(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(close) = template[i + 1..].find('}') {
                let name = &template[i + 1..i + 1 + close];
                if let Some((_, value)) = slots.iter().find(|(k, _)| *k == name) {
                    out.push_str(value);
                    i += close + 2;
                    continue;
                }
            }
        }
        // Advance one UTF-8 character.
        let ch_len = template[i..].chars().next().map_or(1, char::len_utf8);
        out.push_str(&template[i..i + ch_len]);
        i += ch_len;
    }
    out
}
