//! Annotated procedural documents: ingestion, sentence splitting, relevance
//! filtering, dataset splits and corpus statistics.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Edge;

/// Role of a sentence within a procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SentenceType {
    #[serde(rename = "A")]
    Action,
    #[serde(rename = "I")]
    Information,
    #[serde(rename = "A/I")]
    Both,
    #[serde(rename = "C")]
    Code,
    #[serde(rename = "NONE")]
    None,
}

impl SentenceType {
    pub const ALL: [SentenceType; 5] = [
        SentenceType::Action,
        SentenceType::Information,
        SentenceType::Both,
        SentenceType::Code,
        SentenceType::None,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SentenceType::Action => "A",
            SentenceType::Information => "I",
            SentenceType::Both => "A/I",
            SentenceType::Code => "C",
            SentenceType::None => "NONE",
        }
    }

    /// Class index used by the sentence-type classifier.
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }
}

impl fmt::Display for SentenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SentenceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(SentenceType::Action),
            "I" => Ok(SentenceType::Information),
            "A/I" | "A-I" => Ok(SentenceType::Both),
            "C" => Ok(SentenceType::Code),
            "NONE" => Ok(SentenceType::None),
            other => Err(Error::validation(format!("unknown sentence type '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceRecord {
    pub index: usize,
    pub text: String,
    pub stype: SentenceType,
}

impl SentenceRecord {
    pub fn new(index: usize, text: impl Into<String>, stype: SentenceType) -> Self {
        SentenceRecord {
            index,
            text: text.into(),
            stype,
        }
    }
}

/// One procedure: ordered sentences plus forward-directed gold flow edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    id: String,
    sentences: Vec<SentenceRecord>,
    gold_edges: BTreeSet<Edge>,
}

impl Document {
    /// Validates contiguous indices, non-blank text and forward in-range
    /// edges. Duplicate edges collapse.
    pub fn new(
        id: impl Into<String>,
        sentences: Vec<SentenceRecord>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self> {
        let id = id.into();
        for (k, s) in sentences.iter().enumerate() {
            if s.index != k {
                return Err(Error::validation(format!(
                    "document '{id}': sentence ids must be contiguous from 0, found {} at position {k}",
                    s.index
                )));
            }
            if s.text.trim().is_empty() {
                return Err(Error::validation(format!(
                    "document '{id}': sentence {k} has empty text"
                )));
            }
        }
        let n = sentences.len();
        let mut gold_edges = BTreeSet::new();
        for (i, j) in edges {
            if j <= i {
                return Err(Error::validation(format!(
                    "document '{id}': backward edge ({i}, {j})"
                )));
            }
            if j >= n {
                return Err(Error::validation(format!(
                    "document '{id}': edge ({i}, {j}) out of range for {n} sentences"
                )));
            }
            gold_edges.insert((i, j));
        }
        Ok(Document {
            id,
            sentences,
            gold_edges,
        })
    }

    /// A document whose sentences all share `stype` and which has no gold
    /// edges, e.g. raw text awaiting prediction.
    pub fn unannotated(id: impl Into<String>, texts: Vec<String>) -> Result<Self> {
        let sentences = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| SentenceRecord::new(i, t, SentenceType::Action))
            .collect();
        Document::new(id, sentences, [])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.text.as_str()).collect()
    }

    pub fn gold_edges(&self) -> &BTreeSet<Edge> {
        &self.gold_edges
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PreparedDocument::from(self))?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: PreparedDocument = serde_json::from_str(json)?;
        raw.try_into()
    }
}

/// Canonical on-disk form of a prepared document.
#[derive(Serialize, Deserialize)]
struct PreparedDocument {
    id: String,
    sentences: Vec<String>,
    stypes: Vec<SentenceType>,
    edges: Vec<Edge>,
}

impl From<&Document> for PreparedDocument {
    fn from(doc: &Document) -> Self {
        PreparedDocument {
            id: doc.id.clone(),
            sentences: doc.sentences.iter().map(|s| s.text.clone()).collect(),
            stypes: doc.sentences.iter().map(|s| s.stype).collect(),
            edges: doc.gold_edges.iter().copied().collect(),
        }
    }
}

impl TryFrom<PreparedDocument> for Document {
    type Error = Error;

    fn try_from(raw: PreparedDocument) -> Result<Self> {
        if raw.sentences.len() != raw.stypes.len() {
            return Err(Error::validation(format!(
                "document '{}': {} sentences but {} stypes",
                raw.id,
                raw.sentences.len(),
                raw.stypes.len()
            )));
        }
        let sentences = raw
            .sentences
            .into_iter()
            .zip(raw.stypes)
            .enumerate()
            .map(|(i, (text, stype))| SentenceRecord::new(i, text, stype))
            .collect();
        Document::new(raw.id, sentences, raw.edges)
    }
}

/// Splits raw text into sentences.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace, unless the
/// mark sits inside a ``` fenced block or inside parentheses. Segments are
/// trimmed and empty ones dropped.
pub fn split_sentences(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_fence = false;
    let mut depth = 0usize;
    let bytes = raw.as_bytes();
    let mut k = 0;
    while k < bytes.len() {
        if raw[k..].starts_with("```") {
            in_fence = !in_fence;
            k += 3;
            continue;
        }
        let b = bytes[k];
        if !in_fence {
            match b {
                b'(' => depth += 1,
                b')' => depth = depth.saturating_sub(1),
                b'.' | b'!' | b'?' if depth == 0 => {
                    let next = raw[k + 1..].chars().next();
                    if next.is_some_and(char::is_whitespace) {
                        push_segment(&mut out, &raw[start..=k]);
                        start = k + 1;
                    }
                }
                _ => {}
            }
        }
        k += 1;
    }
    push_segment(&mut out, &raw[start..]);
    out
}

fn push_segment(out: &mut Vec<String>, segment: &str) {
    let trimmed = segment.trim();
    if !trimmed.is_empty() {
        out.push(trimmed.to_string());
    }
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    sent_id: String,
    text: String,
    stype: String,
    #[serde(default)]
    next_ids: String,
}

/// Parses one annotation CSV (`sent_id,text,stype,next_ids`) into a
/// document. Rows may appear in any order.
pub fn parse_annotations<R: Read>(id: &str, payload: R) -> Result<Document> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(payload);
    let mut rows: Vec<(usize, String, SentenceType, Vec<usize>, u64)> = Vec::new();
    for record in reader.deserialize::<AnnotationRow>() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rows.len() as u64 + 2;
        let parse_err = |message: String| Error::Parse { line, message };
        let sent_id = record
            .sent_id
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(format!("bad sent_id '{}'", record.sent_id)))?;
        let stype = record
            .stype
            .parse::<SentenceType>()
            .map_err(|e| parse_err(e.to_string()))?;
        let next = record
            .next_ids
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| parse_err(format!("bad next id '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((sent_id, record.text, stype, next, line));
    }
    rows.sort_by_key(|r| r.0);
    let n = rows.len();
    let mut edges = Vec::new();
    for (sent_id, _, _, next, line) in &rows {
        for &j in next {
            if j <= *sent_id {
                return Err(Error::validation(format!(
                    "document '{id}' line {line}: backward edge ({sent_id}, {j})"
                )));
            }
            if j >= n {
                return Err(Error::validation(format!(
                    "document '{id}' line {line}: next id {j} out of range for {n} sentences"
                )));
            }
            edges.push((*sent_id, j));
        }
    }
    let sentences = rows
        .into_iter()
        .map(|(i, text, stype, _, _)| SentenceRecord::new(i, text, stype))
        .collect();
    Document::new(id, sentences, edges)
}

/// Writes a document in the annotation CSV format.
pub fn write_annotations<W: Write>(doc: &Document, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    writer
        .write_record(["sent_id", "text", "stype", "next_ids"])
        .map_err(csv_err)?;
    for s in &doc.sentences {
        let next: Vec<String> = doc
            .gold_edges
            .range((s.index, 0)..(s.index + 1, 0))
            .map(|&(_, j)| j.to_string())
            .collect();
        writer
            .write_record([
                s.index.to_string().as_str(),
                s.text.as_str(),
                s.stype.label(),
                next.join(";").as_str(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOptions {
    /// Also drop code sentences.
    pub drop_code: bool,
}

/// Drops sentences typed `None`, renumbers the rest and remaps gold edges.
/// Edges touching a dropped sentence disappear.
pub fn filter_relevant(doc: &Document) -> Document {
    filter_with(doc, FilterOptions::default())
}

pub fn filter_with(doc: &Document, opts: FilterOptions) -> Document {
    let keep = |t: SentenceType| match t {
        SentenceType::None => false,
        SentenceType::Code => !opts.drop_code,
        _ => true,
    };
    let mut remap = vec![None; doc.len()];
    let mut sentences = Vec::new();
    for s in &doc.sentences {
        if keep(s.stype) {
            remap[s.index] = Some(sentences.len());
            sentences.push(SentenceRecord::new(sentences.len(), s.text.clone(), s.stype));
        }
    }
    let gold_edges = doc
        .gold_edges
        .iter()
        .filter_map(|&(i, j)| Some((remap[i]?, remap[j]?)))
        .collect();
    Document {
        id: doc.id.clone(),
        sentences,
        gold_edges,
    }
}

/// Filters a document and rejects it if fewer than two sentences remain.
pub fn prepare_document(doc: &Document, opts: FilterOptions) -> Result<Document> {
    let filtered = filter_with(doc, opts);
    if filtered.len() < 2 {
        return Err(Error::validation(format!(
            "document '{}' has {} relevant sentence(s); single sentence processes are rejected",
            doc.id,
            filtered.len()
        )));
    }
    Ok(filtered)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn part(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "validation" | "valid" | "val" => Some(&self.validation),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Shuffles ids with `seed` and cuts them 70:10:20. Train and validation
/// sizes are floored and the test split takes the remainder; train always
/// receives at least one document.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    let n = ids.len();
    if n == 0 {
        return Err(Error::Empty("corpus"));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.dedup();
    if shuffled.len() != n {
        return Err(Error::validation("duplicate document ids in corpus"));
    }
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * 7 / 10).max(1);
    let n_val = (n / 10).min(n - n_train);
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    /// Sentences per document.
    pub avg_doc_size: f64,
    /// Characters per sentence.
    pub avg_sentence_len: f64,
    pub edge_count: usize,
    /// Gold edges over all forward pairs.
    pub edge_ratio: f64,
    /// Mean of in-degree plus out-degree.
    pub avg_node_degree: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocStats {
    pub id: String,
    pub sentences: usize,
    pub edges: usize,
    pub edge_ratio: f64,
    pub avg_node_degree: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    #[serde(flatten)]
    pub stats: CorpusStats,
    pub per_document: Vec<DocStats>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn compute_stats(docs: &[Document]) -> CorpusStats {
    let sentences: usize = docs.iter().map(Document::len).sum();
    let chars: usize = docs
        .iter()
        .flat_map(|d| &d.sentences)
        .map(|s| s.text.chars().count())
        .sum();
    let edges: usize = docs.iter().map(|d| d.gold_edges.len()).sum();
    let pairs: usize = docs.iter().map(|d| d.len() * d.len().saturating_sub(1) / 2).sum();
    CorpusStats {
        doc_count: docs.len(),
        avg_doc_size: ratio(sentences as f64, docs.len() as f64),
        avg_sentence_len: ratio(chars as f64, sentences as f64),
        edge_count: edges,
        edge_ratio: ratio(edges as f64, pairs as f64),
        avg_node_degree: ratio(2.0 * edges as f64, sentences as f64),
    }
}

pub fn stats_report(docs: &[Document]) -> StatsReport {
    let per_document = docs
        .iter()
        .map(|d| {
            let s = compute_stats(std::slice::from_ref(d));
            DocStats {
                id: d.id.clone(),
                sentences: d.len(),
                edges: d.gold_edges.len(),
                edge_ratio: s.edge_ratio,
                avg_node_degree: s.avg_node_degree,
            }
        })
        .collect();
    StatsReport {
        stats: compute_stats(docs),
        per_document,
    }
}

/// Entry of a corpus manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    Ok(entries
        .into_iter()
        .map(|e| ManifestEntry {
            path: if e.path.is_absolute() {
                e.path
            } else {
                base.join(e.path)
            },
            id: e.id,
        })
        .collect())
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Loads a document by extension: `.csv` annotation files, `.json`
/// prepared documents, or `.txt` raw text (split into sentences, no gold).
pub fn load_document(id: &str, path: &Path) -> Result<Document> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            parse_annotations(id, file)
        }
        "json" => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let doc = Document::from_json(&text)?;
            if doc.id != id {
                return Err(Error::validation(format!(
                    "manifest id '{id}' does not match document id '{}'",
                    doc.id
                )));
            }
            Ok(doc)
        }
        "txt" => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Document::unannotated(id, split_sentences(&text))
        }
        other => Err(Error::Format(format!(
            "{}: unsupported document extension '{other}'",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use SentenceType::*;

    fn doc(types: &[SentenceType], edges: &[Edge]) -> Document {
        let sentences = types
            .iter()
            .enumerate()
            .map(|(i, &t)| SentenceRecord::new(i, format!("sentence {i}"), t))
            .collect();
        Document::new("d", sentences, edges.iter().copied()).unwrap()
    }

    fn edges(d: &Document) -> Vec<Edge> {
        d.gold_edges().iter().copied().collect()
    }

    #[test]
    fn splitting_examples() {
        assert_eq!(
            split_sentences("Run the script. It prints the flag."),
            vec!["Run the script.", "It prints the flag."]
        );
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
        assert_eq!(
            split_sentences("We dumped the binary with strings"),
            vec!["We dumped the binary with strings"]
        );
    }

    #[test]
    fn splitting_respects_parentheses_and_fences() {
        assert_eq!(
            split_sentences("Open it (see the docs. Really!) and go. Done?  Yes!"),
            vec!["Open it (see the docs. Really!) and go.", "Done?", "Yes!"]
        );
        let text = "Run this:\n```\nx = 1. y = 2.\nprint(x)\n```\nThen wait. Ok.";
        assert_eq!(
            split_sentences(text),
            vec!["Run this:\n```\nx = 1. y = 2.\nprint(x)\n```\nThen wait.", "Ok."]
        );
        // No whitespace after the period: not a boundary.
        assert_eq!(split_sentences("open flag.txt now."), vec!["open flag.txt now."]);
    }

    #[test]
    fn parse_simple_csv() {
        let csv = "sent_id,text,stype,next_ids\n0,\"Open the page.\",A,1\n1,\"It has a form.\",I,2\n2,\"Submit it.\",A,\n";
        let d = parse_annotations("doc", csv.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(edges(&d), vec![(0, 1), (1, 2)]);
        assert_eq!(d.sentences()[1].stype, Information);
    }

    #[test]
    fn parse_rejects_backward_and_out_of_range() {
        let own = "sent_id,text,stype,next_ids\n0,a,A,0\n";
        let err = parse_annotations("d", own.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("backward edge"), "{err}");
        let far = "sent_id,text,stype,next_ids\n0,a,A,5\n1,b,A,\n";
        assert!(matches!(parse_annotations("d", far.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn parse_reports_line_numbers() {
        let bad = "sent_id,text,stype,next_ids\n0,a,A,1\n1,b,Q,\n";
        match parse_annotations("d", bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let ragged = "sent_id,text,stype,next_ids\n0,a,A,1,extra\n";
        assert!(matches!(
            parse_annotations("d", ragged.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    /// Nine sentences shaped like the CTF write-up flow example: S0 and S2
    /// are irrelevant, S1 branches to S3 and S4, and code sentence S8 ends
    /// the flow.
    fn write_up_example() -> &'static str {
        "sent_id,text,stype,next_ids\n\
         0,\"This was a fun challenge.\",NONE,\n\
         1,\"The shop lets us buy items with coupons.\",I,3;4\n\
         2,\"I spent hours on it.\",NONE,\n\
         3,\"Coupons are validated on the client.\",I,5\n\
         4,\"Prices are sent in the request.\",I,5\n\
         5,\"We can tamper with the request.\",A,6;7\n\
         6,\"Change the price to a negative value.\",A,8\n\
         7,\"Or reuse the coupon many times.\",A,\n\
         8,\"requests.post(url, data={'price': -1})\",C,\n"
    }

    #[test]
    fn write_up_branching_edges() {
        let d = parse_annotations("ctf", write_up_example().as_bytes()).unwrap();
        assert!(d.gold_edges().contains(&(1, 3)));
        assert!(d.gold_edges().contains(&(1, 4)));
    }

    #[test]
    fn write_up_filtering() {
        let d = parse_annotations("ctf", write_up_example().as_bytes()).unwrap();
        let f = filter_relevant(&d);
        assert_eq!(f.len(), 7);
        assert_eq!(f.sentences()[0].text, "The shop lets us buy items with coupons.");
        assert_eq!(f.sentences()[6].stype, Code);
        assert_eq!(
            edges(&f),
            vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (3, 5), (4, 6)]
        );
        let no_code = filter_with(&d, FilterOptions { drop_code: true });
        assert_eq!(no_code.len(), 6);
        assert!(!no_code.gold_edges().iter().any(|&(_, j)| j >= 6));
    }

    #[test]
    fn filter_examples() {
        let f = filter_relevant(&doc(&[Action, None, Information], &[(0, 2)]));
        assert_eq!(f.len(), 2);
        assert_eq!(edges(&f), vec![(0, 1)]);
        let f = filter_relevant(&doc(&[None, None], &[(0, 1)]));
        assert!(f.is_empty());
        assert!(f.gold_edges().is_empty());
    }

    #[test]
    fn prepare_rejects_single_sentence() {
        assert!(prepare_document(&doc(&[Action, None], &[]), FilterOptions::default()).is_err());
        assert!(prepare_document(&doc(&[Action, Code], &[(0, 1)]), FilterOptions::default()).is_ok());
    }

    #[test]
    fn split_examples() {
        let ids = |n: usize| (0..n).map(|i| format!("d{i:03}")).collect::<Vec<_>>();
        let sizes = |s: &DatasetSplit| (s.train.len(), s.validation.len(), s.test.len());
        assert_eq!(sizes(&split_dataset(&ids(100), 1).unwrap()), (70, 10, 20));
        assert_eq!(sizes(&split_dataset(&ids(10), 1).unwrap()), (7, 1, 2));
        assert_eq!(sizes(&split_dataset(&ids(1), 1).unwrap()), (1, 0, 0));
        assert!(split_dataset(&[], 1).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = compute_stats(&[doc(&[Action; 3], &[(0, 1), (1, 2)])]);
        assert!((s.avg_node_degree - 4.0 / 3.0).abs() < 1e-12);
        assert!((s.edge_ratio - 2.0 / 3.0).abs() < 1e-12);
        let s = compute_stats(&[doc(&[Action; 2], &[(0, 1)])]);
        assert_eq!(s.avg_node_degree, 1.0);
        assert_eq!(s.edge_ratio, 1.0);
        assert_eq!(s.avg_sentence_len, "sentence 0".len() as f64);
    }

    #[test]
    fn json_roundtrip() {
        let d = parse_annotations("ctf", write_up_example().as_bytes()).unwrap();
        assert_eq!(Document::from_json(&d.to_json().unwrap()).unwrap(), d);
        let mut csv = Vec::new();
        write_annotations(&d, &mut csv).unwrap();
        assert_eq!(parse_annotations("ctf", csv.as_slice()).unwrap(), d);
    }

    fn arb_doc() -> impl Strategy<Value = Document> {
        (2usize..20)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0usize..5, n),
                    proptest::collection::vec((0..n, 0..n), 0..30),
                )
            })
            .prop_map(|(types, raw)| {
                let types: Vec<_> = types.into_iter().map(|k| SentenceType::ALL[k]).collect();
                let edges: Vec<Edge> = raw.into_iter().filter(|(i, j)| i < j).collect();
                doc(&types, &edges)
            })
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent_and_forward(d in arb_doc()) {
            let once = filter_relevant(&d);
            prop_assert_eq!(filter_relevant(&once), once.clone());
            prop_assert!(once.gold_edges().iter().all(|&(i, j)| i < j && j < once.len()));
        }

        #[test]
        fn split_partitions_deterministically(n in 1usize..300, seed in any::<u64>()) {
            let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let a = split_dataset(&ids, seed).unwrap();
            prop_assert_eq!(&a, &split_dataset(&ids, seed).unwrap());
            prop_assert_eq!(a.len(), n);
            let mut all: Vec<_> = a.train.iter().chain(&a.validation).chain(&a.test).cloned().collect();
            all.sort();
            let mut expected = ids.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
            prop_assert!(!a.train.is_empty());
        }

        #[test]
        fn chain_degree(n in 2usize..40, docs in 1usize..5) {
            let chain: Vec<Edge> = (1..n).map(|j| (j - 1, j)).collect();
            let corpus: Vec<_> = (0..docs).map(|_| doc(&vec![Action; n], &chain)).collect();
            let s = compute_stats(&corpus);
            prop_assert!((s.avg_node_degree - 2.0 * (n - 1) as f64 / n as f64).abs() < 1e-12);
        }

        #[test]
        fn resplitting_joined_segments_is_stable(words in proptest::collection::vec("[a-z()`]{1,6}[.!?]?", 0..30)) {
            let text = words.join(" ");
            let once = split_sentences(&text);
            let twice = split_sentences(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
