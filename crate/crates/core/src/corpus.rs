//! Document ingestion, sentence splitting and unit chunking.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// Default sublist size used to seed one dialog.
pub const DEFAULT_SUBLIST_SIZE: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub domain: String,
    pub text: String,
    #[serde(default)]
    pub source_path: String,
}

/// Documents with unique ids, kept sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentSet {
    docs: Vec<Document>,
}

impl DocumentSet {
    pub fn new(mut docs: Vec<Document>) -> Result<Self> {
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in docs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Validation(format!(
                    "duplicate document id `{}` ({} and {})",
                    pair[0].id, pair[0].source_path, pair[1].source_path
                )));
            }
        }
        for doc in &docs {
            if doc.text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "document `{}` ({}) has empty text",
                    doc.id, doc.source_path
                )));
            }
        }
        Ok(Self { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.docs[i])
    }

    pub fn as_slice(&self) -> &[Document] {
        &self.docs
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.docs)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::new(read_document_jsonl(path)?)
    }
}

impl<'a> IntoIterator for &'a DocumentSet {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposition {
    pub id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
}

impl Proposition {
    pub fn new(doc_id: &str, ordinal: usize, text: impl Into<String>) -> Self {
        Self {
            id: proposition_id(doc_id, ordinal),
            doc_id: doc_id.to_string(),
            ordinal,
            text: text.into(),
        }
    }
}

pub fn proposition_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal}")
}

/// The proposition repository: every unit in global order, i.e. sorted by
/// `(doc_id, ordinal)` so that units of one document stay adjacent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PropositionSet {
    props: Vec<Proposition>,
    by_id: BTreeMap<String, usize>,
}

impl PropositionSet {
    pub fn new(mut props: Vec<Proposition>) -> Result<Self> {
        props.sort_by(|a, b| (&a.doc_id, a.ordinal).cmp(&(&b.doc_id, b.ordinal)));
        let mut by_id = BTreeMap::new();
        for (i, p) in props.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(Error::Validation(format!("proposition `{}` is empty", p.id)));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate proposition id `{}`", p.id)));
            }
        }
        for pair in props.windows(2) {
            if pair[0].doc_id == pair[1].doc_id && pair[0].ordinal == pair[1].ordinal {
                return Err(Error::Validation(format!(
                    "document `{}` has two propositions with ordinal {}",
                    pair[0].doc_id, pair[0].ordinal
                )));
            }
        }
        Ok(Self { props, by_id })
    }

    /// Checks that every proposition refers to a document in `docs`.
    pub fn validate_against(&self, docs: &DocumentSet) -> Result<()> {
        for p in &self.props {
            if docs.get(&p.doc_id).is_none() {
                return Err(Error::Validation(format!(
                    "proposition `{}` refers to unknown document `{}`",
                    p.id, p.doc_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Proposition> {
        self.props.iter()
    }

    pub fn as_slice(&self) -> &[Proposition] {
        &self.props
    }

    pub fn get(&self, id: &str) -> Option<&Proposition> {
        self.by_id.get(id).map(|&i| &self.props[i])
    }

    pub fn ids(&self) -> Vec<String> {
        self.props.iter().map(|p| p.id.clone()).collect()
    }

    /// All propositions of the given documents, in global order.
    pub fn of_documents<'a>(
        &'a self,
        doc_ids: &'a [String],
    ) -> impl Iterator<Item = &'a Proposition> + 'a {
        self.props
            .iter()
            .filter(move |p| doc_ids.iter().any(|d| d == &p.doc_id))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.props)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::new(jsonl::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSublist {
    pub index: usize,
    pub unit_ids: Vec<String>,
    pub size_target: usize,
}

#[derive(Deserialize)]
struct DocumentRecord {
    id: String,
    #[serde(default)]
    domain: String,
    text: String,
}

fn read_document_jsonl(path: &Path) -> Result<Vec<Document>> {
    let records: Vec<DocumentRecord> = jsonl::read(path)?;
    Ok(records
        .into_iter()
        .map(|r| Document {
            id: r.id,
            domain: r.domain,
            text: r.text,
            source_path: path.display().to_string(),
        })
        .collect())
}

fn read_text_document(path: &Path) -> Result<Document> {
    let text = fs::read_to_string(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Ingestion {
            path: path.to_path_buf(),
            message: "file name is not valid UTF-8".into(),
        })?
        .to_string();
    let domain = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Ok(Document {
        id,
        domain,
        text,
        source_path: path.display().to_string(),
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Ingestion {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn read_any(path: &Path) -> Result<Vec<Document>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_document_jsonl(path),
        Some("txt") => Ok(vec![read_text_document(path)?]),
        _ => Ok(Vec::new()),
    }
}

/// Loads documents from a `.jsonl` file, a `.txt` file, or a directory tree
/// of either. Plain-text files take their stem as id and their parent
/// directory name as domain. Other file extensions are ignored.
pub fn load_documents(path: &Path, domain_filter: Option<&str>) -> Result<DocumentSet> {
    if !path.exists() {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            message: "path does not exist".into(),
        });
    }
    let mut docs = Vec::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for file in files {
            docs.extend(read_any(&file)?);
        }
    } else {
        docs.extend(read_any(path)?);
    }
    if let Some(domain) = domain_filter {
        docs.retain(|d| d.domain == domain);
    }
    DocumentSet::new(docs)
}

/// Abbreviations that end in a period without ending the sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "etc.", "e.g.", "i.e.",
    "u.s.", "u.k.", "no.", "inc.", "ltd.", "co.", "corp.", "dept.", "approx.", "a.m.", "p.m.",
    "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.",
    "dec.",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Splits text into sentences at `.`, `?` or `!` (optionally followed by
/// closing quotes/brackets) when the next non-space character is uppercase
/// or a digit and the word before a period is not a known abbreviation.
/// Text without any boundary comes back as a single sentence.
pub fn split_sentences(doc: &Document) -> Vec<String> {
    split_text(&doc.text)
}

pub fn split_text(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let term_pos = i;
        let mut end = i + 1;
        while end < chars.len() && (is_terminator(chars[end].1) || is_closer(chars[end].1)) {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].1.is_whitespace() {
            next += 1;
        }
        let has_gap = next > end;
        let starts_new = next < chars.len()
            && (chars[next].1.is_uppercase() || chars[next].1.is_ascii_digit());
        if has_gap && starts_new && !(c == '.' && ends_with_abbreviation(text, &chars, term_pos)) {
            let byte_end = chars.get(end).map_or(text.len(), |&(b, _)| b);
            push_trimmed(&mut sentences, &text[start..byte_end]);
            start = chars[next].0;
            i = next;
        } else {
            i = end;
        }
    }
    push_trimmed(&mut sentences, &text[start..]);
    if sentences.is_empty() && !text.trim().is_empty() {
        sentences.push(text.trim().to_string());
    }
    sentences
}

fn ends_with_abbreviation(text: &str, chars: &[(usize, char)], period: usize) -> bool {
    let mut word_start = period;
    while word_start > 0 && !chars[word_start - 1].1.is_whitespace() {
        word_start -= 1;
    }
    let from = chars[word_start].0;
    let to = chars[period].0 + 1;
    let word = text[from..to]
        .trim_start_matches(|c: char| matches!(c, '(' | '"' | '\'' | '[' | '\u{201c}'))
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Turns every document into sentence units, ids `doc#ordinal`.
pub fn sentence_units(docs: &DocumentSet) -> Result<PropositionSet> {
    let mut units = Vec::new();
    for doc in docs {
        for (ordinal, sentence) in split_sentences(doc).into_iter().enumerate() {
            units.push(Proposition::new(&doc.id, ordinal, sentence));
        }
    }
    PropositionSet::new(units)
}

/// Partitions `units` into consecutive, non-overlapping sublists of `n`.
/// The last sublist keeps the remainder.
pub fn chunk_units(units: &[String], n: usize) -> Result<Vec<UnitSublist>> {
    if n < 1 {
        return Err(Error::Argument("sublist size n must be at least 1".into()));
    }
    Ok(units
        .chunks(n)
        .enumerate()
        .map(|(index, chunk)| UnitSublist {
            index,
            unit_ids: chunk.to_vec(),
            size_target: n,
        })
        .collect())
}

/// Order in which sublists are consumed. Without a seed this is index order.
pub fn sublist_use_order(count: usize, seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}
