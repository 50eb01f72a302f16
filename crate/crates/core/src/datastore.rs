//! Dataset files, merge, CSV export and the on-disk store.
//!
//! A dataset is newline-delimited JSON: a header line carrying the format
//! version, the specification and generation metadata, then one
//! [`TestSentence`] per line. Loading re-checks every record, so a store
//! never hands out a sentence that fails the containment rules.
//!
//! Store layout under its root:
//!
//! ```text
//! specs/<name>.json
//! datasets/<name>/<run_id>.jsonl
//! results/<id>.json
//! exports/<id>.csv
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::genpipeline::{SentenceSource, TestSentence};
use crate::metrics::{BiasTestResult, ResultRow, RESULT_CSV_COLUMNS};
use crate::specs::{self, AttributeGroupIndex, BiasSpecification, GroupIndex, ValidatedSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// `line` is 1-based; `record` is the 0-based sentence index when the
    /// problem is in a sentence line.
    #[error("schema violation at line {line}{}: {reason}", record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    SchemaViolation {
        line: usize,
        record: Option<usize>,
        reason: String,
    },
    #[error("cannot merge datasets of {left:?} and {right:?}")]
    SpecMismatch { left: String, right: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
}

impl From<csv::Error> for DatastoreError {
    fn from(e: csv::Error) -> Self {
        DatastoreError::Csv(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatastoreError + '_ {
    move |source| DatastoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: BiasSpecification,
    created_at: DateTime<Utc>,
    #[serde(default)]
    generator_metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub format_version: u32,
    pub spec: BiasSpecification,
    pub sentences: Vec<TestSentence>,
    pub created_at: DateTime<Utc>,
    /// Free-form provenance, e.g. the generation config and report.
    pub generator_metadata: BTreeMap<String, serde_json::Value>,
}

impl DatasetFile {
    pub fn new(spec: BiasSpecification, sentences: Vec<TestSentence>, created_at: DateTime<Utc>) -> Self {
        DatasetFile {
            format_version: FORMAT_VERSION,
            spec,
            sentences,
            created_at,
            generator_metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Serialized JSONL form; stable for a given value.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format_version: self.format_version,
            spec: self.spec.clone(),
            created_at: self.created_at,
            generator_metadata: self.generator_metadata.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses and checks a JSONL dataset.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, DatastoreError> {
        let mut lines = reader.lines().enumerate();
        let violation = |line: usize, record: Option<usize>, reason: String| DatastoreError::SchemaViolation {
            line,
            record,
            reason,
        };
        let header_text = match lines.next() {
            Some((_, Ok(l))) => l,
            Some((_, Err(e))) => return Err(violation(1, None, e.to_string())),
            None => return Err(violation(1, None, "empty file".into())),
        };
        let raw: serde_json::Value =
            serde_json::from_str(&header_text).map_err(|e| violation(1, None, format!("header: {e}")))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(violation(1, None, format!("unsupported format_version {v}"))),
            None => return Err(violation(1, None, "missing format_version".into())),
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| violation(1, None, format!("header: {e}")))?;
        let spec = specs::validate_spec(header.spec.clone()).map_err(|e| violation(1, None, e.to_string()))?;

        let mut sentences = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let text = line.map_err(|e| violation(line_no, Some(sentences.len()), e.to_string()))?;
            if text.trim().is_empty() {
                continue;
            }
            let record = sentences.len();
            let s: TestSentence =
                serde_json::from_str(&text).map_err(|e| violation(line_no, Some(record), e.to_string()))?;
            check_record(&s, &spec).map_err(|reason| violation(line_no, Some(record), reason))?;
            sentences.push(s);
        }
        Ok(DatasetFile {
            format_version: header.format_version,
            spec: header.spec,
            sentences,
            created_at: header.created_at,
            generator_metadata: header.generator_metadata,
        })
    }
}

fn check_record(s: &TestSentence, spec: &ValidatedSpec) -> Result<(), String> {
    if s.spec_name != spec.name() {
        return Err(format!("sentence belongs to {:?}, file to {:?}", s.spec_name, spec.name()));
    }
    match spec.group_role(&s.group_term) {
        Ok((g, _)) if g == s.group_index => {}
        _ => return Err(format!("{:?} is not a {:?} term", s.group_term, s.group_index)),
    }
    match spec.counterpart(&s.group_term) {
        Ok(c) if c.eq_ignore_ascii_case(&s.counterpart_term) => {}
        _ => return Err(format!("{:?} is not the counterpart of {:?}", s.counterpart_term, s.group_term)),
    }
    match spec.attribute_role(&s.attribute_term) {
        Ok((a, _)) if a == s.attribute_group_index => {}
        _ => return Err(format!("{:?} is not a {:?} term", s.attribute_term, s.attribute_group_index)),
    }
    s.check().map_err(|e| e.to_string())
}

/// Writes `dataset` to `path` atomically.
pub fn save(dataset: &DatasetFile, path: &Path) -> Result<(), DatastoreError> {
    write_atomic(path, dataset.to_jsonl().as_bytes())
}

pub fn load(path: &Path) -> Result<DatasetFile, DatastoreError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    DatasetFile::from_reader(BufReader::new(f))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatastoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Union of two datasets of the same specification. Records are kept in
/// order of first appearance and deduplicated on
/// (text, paired_text, group_term, attribute_term). Header fields come from
/// `a`.
pub fn merge(a: &DatasetFile, b: &DatasetFile) -> Result<DatasetFile, DatastoreError> {
    if a.spec.name != b.spec.name {
        return Err(DatastoreError::SpecMismatch {
            left: a.spec.name.clone(),
            right: b.spec.name.clone(),
        });
    }
    let mut seen = HashSet::new();
    let sentences = a
        .sentences
        .iter()
        .chain(&b.sentences)
        .filter(|s| seen.insert(s.dedup_key()))
        .cloned()
        .collect();
    Ok(DatasetFile {
        sentences,
        ..a.clone()
    })
}

pub const DATASET_CSV_COLUMNS: [&str; 9] = [
    "spec_name",
    "group_term",
    "group_index",
    "counterpart_term",
    "attribute_term",
    "attribute_group_index",
    "text",
    "paired_text",
    "source",
];

/// Flat CSV form of a [`TestSentence`] (generation metadata is dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub spec_name: String,
    pub group_term: String,
    pub group_index: GroupIndex,
    pub counterpart_term: String,
    pub attribute_term: String,
    pub attribute_group_index: AttributeGroupIndex,
    pub text: String,
    pub paired_text: String,
    pub source: SentenceSource,
}

impl From<&TestSentence> for DatasetRow {
    fn from(s: &TestSentence) -> Self {
        DatasetRow {
            spec_name: s.spec_name.clone(),
            group_term: s.group_term.clone(),
            group_index: s.group_index,
            counterpart_term: s.counterpart_term.clone(),
            attribute_term: s.attribute_term.clone(),
            attribute_group_index: s.attribute_group_index,
            text: s.text.clone(),
            paired_text: s.paired_text.clone(),
            source: s.source,
        }
    }
}

fn write_csv<T: Serialize, W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), DatastoreError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| DatastoreError::Csv(e.to_string()))
}

/// RFC 4180 CSV of a dataset, header row always present.
pub fn dataset_csv<W: Write>(dataset: &DatasetFile, out: W) -> Result<(), DatastoreError> {
    write_csv(out, &DATASET_CSV_COLUMNS, dataset.sentences.iter().map(DatasetRow::from))
}

/// RFC 4180 CSV of a test result; see [`RESULT_CSV_COLUMNS`].
pub fn result_csv<W: Write>(result: &BiasTestResult, include_replicates: bool, out: W) -> Result<(), DatastoreError> {
    write_csv(out, &RESULT_CSV_COLUMNS, result.rows(include_replicates))
}

pub fn export_dataset_csv(dataset: &DatasetFile, path: &Path) -> Result<(), DatastoreError> {
    let mut buf = Vec::new();
    dataset_csv(dataset, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn export_result_csv(result: &BiasTestResult, include_replicates: bool, path: &Path) -> Result<(), DatastoreError> {
    let mut buf = Vec::new();
    result_csv(result, include_replicates, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn read_dataset_csv<R: io::Read>(input: R) -> Result<Vec<DatasetRow>, DatastoreError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(Into::into)
}

pub fn read_result_csv<R: io::Read>(input: R) -> Result<Vec<ResultRow>, DatastoreError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(Into::into)
}

fn check_id(id: &str) -> Result<(), DatastoreError> {
    if specs::valid_name(id) {
        Ok(())
    } else {
        Err(DatastoreError::InvalidId(id.to_string()))
    }
}

/// Directory-backed store of specifications, datasets and results.
///
/// Writes go through a temporary file and a rename. Callers serialize
/// writers per specification; readers may run concurrently.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatastoreError> {
        let root = root.into();
        for dir in ["specs", "datasets", "results", "exports"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn spec_path(&self, name: &str) -> PathBuf {
        self.root.join("specs").join(format!("{name}.json"))
    }

    pub fn save_spec(&self, spec: &ValidatedSpec) -> Result<PathBuf, DatastoreError> {
        let path = self.spec_path(spec.name());
        let json = serde_json::to_string_pretty(spec.spec()).expect("spec serializes");
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }

    /// A stored specification, falling back to the bundled ones.
    pub fn load_spec(&self, name: &str) -> Result<ValidatedSpec, DatastoreError> {
        check_id(name)?;
        let path = self.spec_path(name);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let raw = BiasSpecification::from_json(&text).map_err(|e| DatastoreError::SchemaViolation {
                    line: e.line(),
                    record: None,
                    reason: e.to_string(),
                })?;
                specs::validate_spec(raw).map_err(|e| DatastoreError::SchemaViolation {
                    line: 1,
                    record: None,
                    reason: e.to_string(),
                })
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                specs::predefined_by_name(name).ok_or_else(|| DatastoreError::NotFound(format!("spec {name}")))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Bundled specifications followed by stored ones; a stored spec with a
    /// bundled name replaces it.
    pub fn list_specs(&self) -> Result<Vec<ValidatedSpec>, DatastoreError> {
        let mut names: Vec<String> = specs::predefined().iter().map(|s| s.name().to_string()).collect();
        let mut stored = self.list_dir("specs", "json")?;
        stored.sort();
        for n in stored {
            if !names.contains(&n) {
                names.push(n);
            }
        }
        names.iter().map(|n| self.load_spec(n)).collect()
    }

    fn list_dir(&self, sub: &str, ext: &str) -> Result<Vec<String>, DatastoreError> {
        let dir = self.root.join(sub);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let p = entry.map_err(io_err(&dir))?.path();
            if p.extension().and_then(|e| e.to_str()) == Some(ext) {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    out.push(stem.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn dataset_path(&self, spec_name: &str, run_id: &str) -> PathBuf {
        self.root.join("datasets").join(spec_name).join(format!("{run_id}.jsonl"))
    }

    /// Stores a dataset under a run id derived from its creation time and
    /// content, and returns the id.
    pub fn save_dataset(&self, dataset: &DatasetFile) -> Result<String, DatastoreError> {
        check_id(&dataset.spec.name)?;
        let body = dataset.to_jsonl();
        let digest = Sha256::digest(body.as_bytes());
        let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        let run_id = format!("{}-{hex}", dataset.created_at.format("%Y%m%dT%H%M%SZ"));
        write_atomic(&self.dataset_path(&dataset.spec.name, &run_id), body.as_bytes())?;
        Ok(run_id)
    }

    /// Stores (or overwrites) a dataset under a caller-chosen run id, e.g.
    /// to checkpoint a generation run as it progresses.
    pub fn save_dataset_as(&self, dataset: &DatasetFile, run_id: &str) -> Result<(), DatastoreError> {
        check_id(&dataset.spec.name)?;
        check_id(run_id)?;
        write_atomic(&self.dataset_path(&dataset.spec.name, run_id), dataset.to_jsonl().as_bytes())
    }

    pub fn list_runs(&self, spec_name: &str) -> Result<Vec<String>, DatastoreError> {
        check_id(spec_name)?;
        self.list_dir(&format!("datasets/{spec_name}"), "jsonl")
    }

    pub fn load_dataset(&self, spec_name: &str, run_id: &str) -> Result<DatasetFile, DatastoreError> {
        check_id(spec_name)?;
        check_id(run_id)?;
        let path = self.dataset_path(spec_name, run_id);
        if !path.exists() {
            return Err(DatastoreError::NotFound(format!("dataset {spec_name}/{run_id}")));
        }
        load(&path)
    }

    /// Every stored run of a specification merged in run order, or `None`
    /// when nothing is stored.
    pub fn merged_dataset(&self, spec_name: &str) -> Result<Option<DatasetFile>, DatastoreError> {
        let mut merged: Option<DatasetFile> = None;
        for run in self.list_runs(spec_name)? {
            let d = self.load_dataset(spec_name, &run)?;
            merged = Some(match merged {
                None => d,
                Some(m) => merge(&m, &d)?,
            });
        }
        Ok(merged)
    }

    fn result_path(&self, id: &str) -> PathBuf {
        self.root.join("results").join(format!("{id}.json"))
    }

    pub fn save_result(&self, id: &str, result: &BiasTestResult) -> Result<PathBuf, DatastoreError> {
        check_id(id)?;
        let path = self.result_path(id);
        let json = serde_json::to_string_pretty(result).expect("result serializes");
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn load_result(&self, id: &str) -> Result<BiasTestResult, DatastoreError> {
        check_id(id)?;
        let path = self.result_path(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(DatastoreError::NotFound(format!("result {id}")))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_str(&text).map_err(|e| DatastoreError::SchemaViolation {
            line: e.line(),
            record: None,
            reason: e.to_string(),
        })
    }

    pub fn list_results(&self) -> Result<Vec<String>, DatastoreError> {
        self.list_dir("results", "json")
    }

    /// Writes `exports/<id>.csv` for a stored result.
    pub fn export_result(&self, id: &str, include_replicates: bool) -> Result<PathBuf, DatastoreError> {
        let result = self.load_result(id)?;
        let path = self.root.join("exports").join(format!("{id}.csv"));
        export_result_csv(&result, include_replicates, &path)?;
        Ok(path)
    }
}
