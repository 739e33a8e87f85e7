//! `{{placeholder}}` templates grouped into named sections.
//!
//! A template file is a sequence of sections, each introduced by a header
//! line `--- <name> ---`. The section body runs to the next header; its final
//! newline is dropped. Placeholders are `{{name}}`; substituted values are
//! inserted verbatim and never re-scanned, so braces inside user text survive.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("{file}: unknown placeholder `{{{{{name}}}}}` in section `{section}`")]
    UnknownPlaceholder {
        file: String,
        section: String,
        name: String,
    },
    #[error("{file}: missing section `{section}`")]
    MissingSection { file: String, section: String },
    #[error("{file}: unknown section `{section}`")]
    UnknownSection { file: String, section: String },
    #[error("{file}:{line}: text before first section header")]
    TextBeforeHeader { file: String, line: usize },
    #[error("{file}: unterminated placeholder in section `{section}`")]
    Unterminated { file: String, section: String },
    #[error("cannot read template {file}: {reason}")]
    Io { file: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPurpose {
    Detect,
    Recommend,
    UpdateAck,
    BaselineRecommend,
    BaselineUpdate,
}

impl PromptPurpose {
    pub const ALL: [PromptPurpose; 5] = [
        PromptPurpose::Detect,
        PromptPurpose::Recommend,
        PromptPurpose::UpdateAck,
        PromptPurpose::BaselineRecommend,
        PromptPurpose::BaselineUpdate,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            PromptPurpose::Detect => "detect",
            PromptPurpose::Recommend => "recommend",
            PromptPurpose::UpdateAck => "update_ack",
            PromptPurpose::BaselineRecommend => "baseline_recommend",
            PromptPurpose::BaselineUpdate => "baseline_update",
        }
    }

    /// Sections each template must define, with the placeholders each may use.
    pub fn schema(self) -> &'static [(&'static str, &'static [&'static str])] {
        const ITEM: &[&str] = &["title", "genres", "rating"];
        match self {
            PromptPurpose::Detect => &[("system", &[]), ("user", &["query"])],
            PromptPurpose::Recommend => &[
                ("system", &["domain"]),
                ("history", &["lines"]),
                ("memory_line", &["title", "genres", "rating", "domain"]),
                ("user", &["history", "title", "genres", "domain"]),
            ],
            PromptPurpose::UpdateAck => &[("system", &[]), ("user", ITEM)],
            PromptPurpose::BaselineRecommend => &[
                ("single_system", &[]),
                ("single_query", &["title", "genres"]),
                ("cross_system", &["domain", "history_domain"]),
                ("cross_history", &["title", "genres", "rating", "history_domain"]),
                ("cross_query", &["title", "genres", "domain"]),
            ],
            PromptPurpose::BaselineUpdate => &[("update", ITEM)],
        }
    }

    fn builtin_source(self) -> &'static str {
        match self {
            PromptPurpose::Detect => include_str!("../../templates/detect.tmpl"),
            PromptPurpose::Recommend => include_str!("../../templates/recommend.tmpl"),
            PromptPurpose::UpdateAck => include_str!("../../templates/update_ack.tmpl"),
            PromptPurpose::BaselineRecommend => {
                include_str!("../../templates/baseline_recommend.tmpl")
            }
            PromptPurpose::BaselineUpdate => include_str!("../../templates/baseline_update.tmpl"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Template {
    sections: HashMap<String, String>,
    hash: String,
}

fn placeholders(body: &str) -> Result<Vec<&str>, ()> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(())?;
        out.push(after[..end].trim());
        rest = &after[end + 2..];
    }
    Ok(out)
}

impl Template {
    pub fn parse(purpose: PromptPurpose, file: &str, source: &str) -> Result<Self, TemplateError> {
        let mut sections: HashMap<String, String> = HashMap::new();
        let mut current: Option<(String, String)> = None;
        for (i, line) in source.split_inclusive('\n').enumerate() {
            let trimmed = line.trim_end_matches(['\n', '\r']);
            let header = trimmed
                .strip_prefix("--- ")
                .and_then(|s| s.strip_suffix(" ---"));
            if let Some(name) = header {
                if let Some((n, b)) = current.take() {
                    sections.insert(n, b);
                }
                current = Some((name.trim().to_string(), String::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push_str(line);
            } else if !trimmed.trim().is_empty() {
                return Err(TemplateError::TextBeforeHeader {
                    file: file.to_string(),
                    line: i + 1,
                });
            }
        }
        if let Some((n, b)) = current.take() {
            sections.insert(n, b);
        }
        for body in sections.values_mut() {
            if body.ends_with('\n') {
                body.pop();
                if body.ends_with('\r') {
                    body.pop();
                }
            }
        }

        let schema = purpose.schema();
        for name in sections.keys() {
            if !schema.iter().any(|(s, _)| s == name) {
                return Err(TemplateError::UnknownSection {
                    file: file.to_string(),
                    section: name.clone(),
                });
            }
        }
        for (section, allowed) in schema {
            let body = sections
                .get(*section)
                .ok_or_else(|| TemplateError::MissingSection {
                    file: file.to_string(),
                    section: section.to_string(),
                })?;
            let names = placeholders(body).map_err(|_| TemplateError::Unterminated {
                file: file.to_string(),
                section: section.to_string(),
            })?;
            if let Some(bad) = names.iter().find(|n| !allowed.contains(n)) {
                return Err(TemplateError::UnknownPlaceholder {
                    file: file.to_string(),
                    section: section.to_string(),
                    name: bad.to_string(),
                });
            }
        }
        let hash = hex::encode(Sha256::digest(source.as_bytes()));
        Ok(Self { sections, hash })
    }

    /// SHA-256 of the template source, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Renders `section`, substituting from `vars`. Placeholders absent from
    /// `vars` render as empty text.
    pub fn render(&self, section: &str, vars: &[(&str, &str)]) -> String {
        let body = self
            .sections
            .get(section)
            .unwrap_or_else(|| panic!("section `{section}` validated at load"));
        let mut out = String::with_capacity(body.len() + 64);
        let mut rest = body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").expect("validated at load");
            let name = after[..end].trim();
            if let Some((_, v)) = vars.iter().find(|(k, _)| *k == name) {
                out.push_str(v);
            }
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        out
    }
}

/// One template per purpose.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<PromptPurpose, Template>,
}

impl TemplateSet {
    /// The templates compiled into the binary.
    pub fn builtin() -> Self {
        let templates = PromptPurpose::ALL
            .iter()
            .map(|&p| {
                let file = format!("{}.tmpl", p.file_stem());
                let t = Template::parse(p, &file, p.builtin_source())
                    .expect("builtin templates are valid");
                (p, t)
            })
            .collect();
        Self { templates }
    }

    /// Loads `<dir>/<purpose>.tmpl` for every purpose, falling back to the
    /// builtin template when a file is absent.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut templates = BTreeMap::new();
        for p in PromptPurpose::ALL {
            let path = dir.join(format!("{}.tmpl", p.file_stem()));
            let file = path.display().to_string();
            let source = match fs::read_to_string(&path) {
                Ok(s) => s,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    p.builtin_source().to_string()
                }
                Err(e) => {
                    return Err(TemplateError::Io {
                        file,
                        reason: e.to_string(),
                    })
                }
            };
            templates.insert(p, Template::parse(p, &file, &source)?);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, purpose: PromptPurpose) -> &Template {
        &self.templates[&purpose]
    }

    /// Template hash per purpose, keyed by file stem.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(p, t)| (p.file_stem().to_string(), t.hash().to_string()))
            .collect()
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_set_loads() {
        let set = TemplateSet::builtin();
        assert_eq!(set.hashes().len(), 5);
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        let src = "--- update ---\nThe rating for {{titel}} was {{rating}}.\n";
        let err = Template::parse(PromptPurpose::BaselineUpdate, "x.tmpl", src).unwrap_err();
        assert_eq!(
            err,
            TemplateError::UnknownPlaceholder {
                file: "x.tmpl".into(),
                section: "update".into(),
                name: "titel".into()
            }
        );
    }

    #[test]
    fn missing_section_is_rejected() {
        let err = Template::parse(PromptPurpose::Detect, "d.tmpl", "--- system ---\nhi\n").unwrap_err();
        assert!(matches!(err, TemplateError::MissingSection { .. }));
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = Template::parse(
            PromptPurpose::Detect,
            "d",
            "--- system ---\nsys {literal}\n--- user ---\n<{{query}}>\n",
        )
        .unwrap();
        assert_eq!(t.render("user", &[("query", "a {{query}} {b}")]), "<a {{query}} {b}>");
        assert_eq!(t.render("system", &[]), "sys {literal}");
    }

    #[test]
    fn load_dir_overrides_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("baseline_update.tmpl"),
            "--- update ---\nTruth: {{rating}}\n",
        )
        .unwrap();
        let set = TemplateSet::load_dir(dir.path()).unwrap();
        let t = set.get(PromptPurpose::BaselineUpdate);
        assert_eq!(t.render("update", &[("rating", "4")]), "Truth: 4");
        assert_eq!(
            set.get(PromptPurpose::Detect).hash(),
            TemplateSet::builtin().get(PromptPurpose::Detect).hash()
        );

        fs::write(dir.path().join("detect.tmpl"), "--- system ---\n{{nope}}\n--- user ---\n{{query}}\n").unwrap();
        assert!(TemplateSet::load_dir(dir.path()).is_err());
    }
}
