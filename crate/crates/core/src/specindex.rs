//! Searchable index over a plain-text dump of a language specification.
//!
//! The dump is a sequence of sections, each introduced by a header line of
//! the form `# 20.2.3.5 Function.prototype.toString ( )`. Everything up to
//! the next header is the section body. Sections are ranked against a query
//! by TF-IDF cosine similarity over title and body.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectorizer::{cosine_similarity, tokenize, FeatureVector, FitOptions, Vocabulary};

/// Characters of body text returned per search hit.
pub const EXCERPT_CHARS: usize = 1000;

static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^#\s*(?<id>[0-9.]+)\s+(?<title>.*)$").expect("valid regex"));

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecIndexError {
    #[error("specification contains no sections")]
    NoSections,

    #[error("line {0}: text before the first section header")]
    Preamble(usize),

    #[error("section {0} has an empty body")]
    EmptyBody(String),

    #[error("section {0} appears more than once")]
    DuplicateSection(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecSection {
    pub section_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecExcerpt {
    pub section_id: String,
    pub title: String,
    pub excerpt: String,
    pub similarity: f64,
}

/// Splits a dump into sections.
pub fn parse_sections(document: &str) -> Result<Vec<SpecSection>, SpecIndexError> {
    let mut sections: Vec<SpecSection> = Vec::new();
    let mut body: Vec<&str> = Vec::new();
    let finish = |sections: &mut Vec<SpecSection>, body: &mut Vec<&str>| {
        if let Some(last) = sections.last_mut() {
            last.body = body.join("\n").trim().to_string();
        }
        body.clear();
    };
    for (idx, line) in document.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(caps) = HEADER.captures(line) {
            finish(&mut sections, &mut body);
            sections.push(SpecSection {
                section_id: caps["id"].to_string(),
                title: caps["title"].trim().to_string(),
                body: String::new(),
            });
        } else if sections.is_empty() {
            if !line.trim().is_empty() {
                return Err(SpecIndexError::Preamble(idx + 1));
            }
        } else {
            body.push(line);
        }
    }
    finish(&mut sections, &mut body);
    if sections.is_empty() {
        return Err(SpecIndexError::NoSections);
    }
    for s in &sections {
        if s.body.is_empty() {
            return Err(SpecIndexError::EmptyBody(s.section_id.clone()));
        }
    }
    Ok(sections)
}

#[derive(Debug, Clone)]
pub struct SpecIndex {
    sections: Vec<SpecSection>,
    by_id: HashMap<String, usize>,
    vocab: Vocabulary,
    vectors: Vec<FeatureVector>,
}

impl SpecIndex {
    pub fn build(document: &str) -> Result<Self, SpecIndexError> {
        let sections = parse_sections(document)?;
        let mut by_id = HashMap::new();
        for (i, s) in sections.iter().enumerate() {
            if by_id.insert(s.section_id.clone(), i).is_some() {
                return Err(SpecIndexError::DuplicateSection(s.section_id.clone()));
            }
        }
        let docs: Vec<String> = sections.iter().map(|s| format!("{}\n{}", s.title, s.body)).collect();
        let vocab = Vocabulary::fit_with(&docs, FitOptions::smoothed())
            .expect("at least one section was parsed");
        let vectors = docs.iter().map(|d| vocab.transform(d)).collect();
        Ok(Self {
            sections,
            by_id,
            vocab,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn sections(&self) -> &[SpecSection] {
        &self.sections
    }

    pub fn get(&self, section_id: &str) -> Option<&SpecSection> {
        self.by_id.get(section_id.trim()).map(|&i| &self.sections[i])
    }

    /// Up to `limit` sections with positive similarity to `query`, most similar
    /// first (document order on ties).
    pub fn query(&self, query: &str, limit: usize) -> Vec<SpecExcerpt> {
        if tokenize(query).is_empty() {
            return Vec::new();
        }
        let q = self.vocab.transform(query);
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine_similarity(&q, v)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(limit)
            .map(|(i, similarity)| excerpt(&self.sections[i], similarity))
            .collect()
    }
}

fn excerpt(section: &SpecSection, similarity: f64) -> SpecExcerpt {
    SpecExcerpt {
        section_id: section.section_id.clone(),
        title: section.title.clone(),
        excerpt: section.body.chars().take(EXCERPT_CHARS).collect(),
        similarity,
    }
}

/// Free-function form of [`SpecIndex::query`].
pub fn spec_query(index: &SpecIndex, query: &str, limit: usize) -> Vec<SpecExcerpt> {
    index.query(query, limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
# 20.2.3.5 Function.prototype.toString ( )
When the toString method is called, the following steps are taken.
If func is a built-in function object, return an implementation-defined
String source code representation of func.

# 22.1.3.22 String.prototype.search ( regexp )
If regexp is neither undefined nor null, let searcher be GetMethod(regexp, @@search).
If searcher is not undefined and IsCallable(searcher) is false, throw a TypeError.

# B.3.1 ignored because the id is not numeric
# 10.4.7.1 Object.prototype.__proto__ setter
Set the prototype of the receiver. Throw a TypeError if the value is not an Object or null.
";

    #[test]
    fn parses_sections_and_bodies() {
        let sections = parse_sections(FIXTURE).unwrap();
        assert_eq!(sections.len(), 3);
        assert_eq!(sections[0].section_id, "20.2.3.5");
        assert_eq!(sections[0].title, "Function.prototype.toString ( )");
        assert!(sections[1].body.contains("# B.3.1 ignored"));
    }

    #[test]
    fn single_section_index() {
        let index = SpecIndex::build("# 1 Scope\nThis standard defines the language.\n").unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.get("1").unwrap().title, "Scope");
    }

    #[test]
    fn malformed_documents() {
        assert_eq!(SpecIndex::build("").unwrap_err(), SpecIndexError::NoSections);
        assert_eq!(
            SpecIndex::build("intro\n# 1 A\nbody").unwrap_err(),
            SpecIndexError::Preamble(1)
        );
        assert_eq!(
            SpecIndex::build("# 1 A\n\n# 2 B\nbody").unwrap_err(),
            SpecIndexError::EmptyBody("1".into())
        );
        assert_eq!(
            SpecIndex::build("# 1 A\nx y\n# 1 B\nbody").unwrap_err(),
            SpecIndexError::DuplicateSection("1".into())
        );
    }

    #[test]
    fn lookup_by_id_is_exact() {
        let index = SpecIndex::build(FIXTURE).unwrap();
        assert_eq!(index.get("20.2.3.5").unwrap().section_id, "20.2.3.5");
        assert!(index.get("20.2.3").is_none());
        for s in index.sections() {
            assert_eq!(index.get(&s.section_id), Some(s));
        }
    }

    #[test]
    fn planted_phrase_ranks_first() {
        let index = SpecIndex::build(FIXTURE).unwrap();
        let hits = index.query("implementation-defined source representation", 3);
        assert_eq!(hits[0].section_id, "20.2.3.5");
        assert!(hits[0].excerpt.contains("implementation-defined"));
    }

    #[test]
    fn title_query_ranks_its_section_first() {
        let index = SpecIndex::build(FIXTURE).unwrap();
        let hits = index.query("String.prototype.search ( regexp )", 3);
        assert_eq!(hits[0].section_id, "22.1.3.22");
        assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn empty_query_and_limit() {
        let index = SpecIndex::build(FIXTURE).unwrap();
        assert!(index.query("", 5).is_empty());
        assert!(index.query("  ..  ", 5).is_empty());
        assert_eq!(index.query("TypeError prototype", 1).len(), 1);
        assert!(index.query("zzzunmatched", 5).is_empty());
    }

    #[test]
    fn excerpts_are_capped() {
        let body = "word ".repeat(500);
        let index = SpecIndex::build(&format!("# 1 Long\n{body}")).unwrap();
        let hit = &index.query("word", 1)[0];
        assert_eq!(hit.excerpt.chars().count(), EXCERPT_CHARS);
    }
}
