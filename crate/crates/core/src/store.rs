//! Append-only store of paired training data and human corrections.
//!
//! Two JSON Lines files back a store: one for paired records (source
//! transcript with its translated and summarized rendering) and one for
//! correction events. Nothing is ever rewritten; a correction is a new event
//! that references a paired record, and exports resolve the latest one.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAIRED_FILE: &str = "paired.jsonl";
pub const CORRECTIONS_FILE: &str = "corrections.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("correction references unknown record {0}")]
    DanglingRecord(u64),
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One (transcript, summarized translation) training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub record_id: u64,
    pub session_id: String,
    /// Unix time in milliseconds.
    pub created_at: u64,
    pub source_lang: String,
    pub source_text: String,
    pub target_lang: String,
    /// Empty for records imported from an export, which does not carry it.
    pub translated_text: String,
    pub summarized_text: String,
    /// Unknown for imported records.
    pub sigma_measured: Option<f64>,
}

/// A paired record before the store assigns its id and timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDraft {
    pub session_id: String,
    pub source_lang: String,
    pub source_text: String,
    pub target_lang: String,
    pub translated_text: String,
    pub summarized_text: String,
    pub sigma_measured: Option<f64>,
}

impl PairedDraft {
    fn validate(&self) -> Result<(), StoreError> {
        if self.source_text.trim().is_empty() {
            return Err(StoreError::Invalid("source_text is empty".into()));
        }
        if self.summarized_text.trim().is_empty() {
            return Err(StoreError::Invalid("summarized_text is empty".into()));
        }
        if let Some(sigma) = self.sigma_measured {
            if !(sigma > 0.0 && sigma <= 1.0) {
                return Err(StoreError::Invalid(format!("sigma_measured {sigma} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub correction_id: u64,
    pub record_id: u64,
    pub corrected_summary: String,
    pub author_label: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDraft {
    pub record_id: u64,
    pub corrected_summary: String,
    pub author_label: String,
}

/// Export line. Field names and order are part of the file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRow {
    pub source_text: String,
    pub summarized_text: String,
    pub source_lang: String,
    pub target_lang: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub session_id: Option<String>,
    pub source_lang: Option<String>,
    pub target_lang: Option<String>,
}

impl ExportFilter {
    fn matches(&self, r: &PairedRecord) -> bool {
        self.session_id.as_ref().is_none_or(|s| *s == r.session_id)
            && self.source_lang.as_ref().is_none_or(|l| *l == r.source_lang)
            && self.target_lang.as_ref().is_none_or(|l| *l == r.target_lang)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub records: usize,
    pub corrections: usize,
    pub corrected_records: usize,
    /// Mean over records with a known ratio; `None` when there are none.
    pub mean_sigma: Option<f64>,
    /// Record counts keyed by `source->target`.
    pub per_language_pair: BTreeMap<String, usize>,
}

struct Inner {
    paired: File,
    corrections: File,
    records: Vec<PairedRecord>,
    correction_log: Vec<CorrectionRecord>,
}

/// Single-writer handle on a store directory. Appends are serialized through
/// an internal mutex; readers get cloned snapshots.
pub struct DataStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for DataStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DataStore")
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn append_line<T: Serialize>(file: &mut File, value: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(())
}

impl DataStore {
    /// Opens (creating if needed) the store in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let paired_path = dir.join(PAIRED_FILE);
        let corrections_path = dir.join(CORRECTIONS_FILE);
        let records = read_lines(&paired_path)?;
        let correction_log = read_lines(&corrections_path)?;
        let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p);
        Ok(Self {
            inner: Mutex::new(Inner {
                paired: open(&paired_path)?,
                corrections: open(&corrections_path)?,
                records,
                correction_log,
            }),
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn paired_path(&self) -> PathBuf {
        self.dir.join(PAIRED_FILE)
    }

    pub fn corrections_path(&self) -> PathBuf {
        self.dir.join(CORRECTIONS_FILE)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("data store mutex poisoned")
    }

    /// Appends a paired record and returns its id. Ids increase strictly.
    pub fn append(&self, draft: PairedDraft) -> Result<u64, StoreError> {
        draft.validate()?;
        let mut inner = self.lock();
        let record_id = inner.records.last().map_or(1, |r| r.record_id + 1);
        let record = PairedRecord {
            record_id,
            session_id: draft.session_id,
            created_at: now_ms(),
            source_lang: draft.source_lang,
            source_text: draft.source_text,
            target_lang: draft.target_lang,
            translated_text: draft.translated_text,
            summarized_text: draft.summarized_text,
            sigma_measured: draft.sigma_measured,
        };
        append_line(&mut inner.paired, &record)?;
        inner.records.push(record);
        Ok(record_id)
    }

    /// Records a human correction of a paired record's summary.
    pub fn apply_correction(&self, draft: CorrectionDraft) -> Result<u64, StoreError> {
        if draft.corrected_summary.trim().is_empty() {
            return Err(StoreError::Invalid("corrected_summary is empty".into()));
        }
        let mut inner = self.lock();
        if !inner.records.iter().any(|r| r.record_id == draft.record_id) {
            return Err(StoreError::DanglingRecord(draft.record_id));
        }
        let correction_id = inner.correction_log.last().map_or(1, |c| c.correction_id + 1);
        let correction = CorrectionRecord {
            correction_id,
            record_id: draft.record_id,
            corrected_summary: draft.corrected_summary,
            author_label: draft.author_label,
            created_at: now_ms(),
        };
        append_line(&mut inner.corrections, &correction)?;
        inner.correction_log.push(correction);
        Ok(correction_id)
    }

    pub fn records(&self) -> Vec<PairedRecord> {
        self.lock().records.clone()
    }

    pub fn corrections(&self) -> Vec<CorrectionRecord> {
        self.lock().correction_log.clone()
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Latest correction per record, ordered by creation time then id.
    fn latest_corrections(log: &[CorrectionRecord]) -> BTreeMap<u64, &CorrectionRecord> {
        let mut latest: BTreeMap<u64, &CorrectionRecord> = BTreeMap::new();
        for c in log {
            let newer = latest
                .get(&c.record_id)
                .is_none_or(|prev| (c.created_at, c.correction_id) > (prev.created_at, prev.correction_id));
            if newer {
                latest.insert(c.record_id, c);
            }
        }
        latest
    }

    pub fn export_rows(&self, filter: &ExportFilter, prefer_corrections: bool) -> Vec<ExportRow> {
        let inner = self.lock();
        let latest = if prefer_corrections {
            Self::latest_corrections(&inner.correction_log)
        } else {
            BTreeMap::new()
        };
        inner
            .records
            .iter()
            .filter(|r| filter.matches(r))
            .map(|r| ExportRow {
                source_text: r.source_text.clone(),
                summarized_text: latest
                    .get(&r.record_id)
                    .map_or_else(|| r.summarized_text.clone(), |c| c.corrected_summary.clone()),
                source_lang: r.source_lang.clone(),
                target_lang: r.target_lang.clone(),
            })
            .collect()
    }

    /// Writes one export row per line; returns the number of rows written.
    pub fn export_jsonl<W: Write>(
        &self,
        out: W,
        filter: &ExportFilter,
        prefer_corrections: bool,
    ) -> Result<usize, StoreError> {
        let rows = self.export_rows(filter, prefer_corrections);
        let mut out = BufWriter::new(out);
        for row in &rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(rows.len())
    }

    /// Appends exported rows as new paired records under `session_id`.
    pub fn import_rows(&self, rows: Vec<ExportRow>, session_id: &str) -> Result<Vec<u64>, StoreError> {
        rows.into_iter()
            .map(|row| {
                self.append(PairedDraft {
                    session_id: session_id.to_owned(),
                    source_lang: row.source_lang,
                    source_text: row.source_text,
                    target_lang: row.target_lang,
                    translated_text: String::new(),
                    summarized_text: row.summarized_text,
                    sigma_measured: None,
                })
            })
            .collect()
    }

    pub fn stats(&self) -> StoreStats {
        let inner = self.lock();
        let sigmas: Vec<f64> = inner.records.iter().filter_map(|r| r.sigma_measured).collect();
        let mut per_language_pair = BTreeMap::new();
        for r in &inner.records {
            *per_language_pair
                .entry(format!("{}->{}", r.source_lang, r.target_lang))
                .or_insert(0) += 1;
        }
        StoreStats {
            records: inner.records.len(),
            corrections: inner.correction_log.len(),
            corrected_records: Self::latest_corrections(&inner.correction_log).len(),
            mean_sigma: (!sigmas.is_empty()).then(|| sigmas.iter().sum::<f64>() / sigmas.len() as f64),
            per_language_pair,
        }
    }
}

/// Reads an export file. Malformed lines fail with their 1-based line number.
pub fn import_jsonl(path: &Path) -> Result<Vec<ExportRow>, StoreError> {
    if !path.exists() {
        return Err(StoreError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found", path.display()),
        )));
    }
    read_lines(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(session: &str, n: usize) -> PairedDraft {
        PairedDraft {
            session_id: session.into(),
            source_lang: "en".into(),
            source_text: format!("hello world number {n}"),
            target_lang: "ja".into(),
            translated_text: format!("ja:hello ja:world ja:number ja:{n}"),
            summarized_text: "ja:hello ja:world".into(),
            sigma_measured: Some(0.5),
        }
    }

    #[test]
    fn append_assigns_increasing_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        let a = store.append(draft("s", 1)).unwrap();
        let b = store.append(draft("s", 2)).unwrap();
        assert!(b > a);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn append_rejects_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        let mut d = draft("s", 1);
        d.summarized_text = " ".into();
        assert!(matches!(store.append(d), Err(StoreError::Invalid(_))));
        let mut d = draft("s", 1);
        d.sigma_measured = Some(0.0);
        assert!(matches!(store.append(d), Err(StoreError::Invalid(_))));
        assert!(store.is_empty());
    }

    #[test]
    fn reopen_continues_ids() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = DataStore::open(dir.path()).unwrap();
            store.append(draft("s", 1)).unwrap();
            store.append(draft("s", 2)).unwrap();
        }
        let store = DataStore::open(dir.path()).unwrap();
        assert_eq!(store.append(draft("s", 3)).unwrap(), 3);
    }

    #[test]
    fn corrections_are_events() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        let id = store.append(draft("s", 1)).unwrap();
        let before = std::fs::metadata(store.paired_path()).unwrap().len();
        store
            .apply_correction(CorrectionDraft {
                record_id: id,
                corrected_summary: "ja:hi".into(),
                author_label: "viewer".into(),
            })
            .unwrap();
        assert_eq!(std::fs::metadata(store.paired_path()).unwrap().len(), before);
        assert_eq!(store.records()[0].summarized_text, "ja:hello ja:world");

        let plain = store.export_rows(&ExportFilter::default(), false);
        assert_eq!(plain[0].summarized_text, "ja:hello ja:world");
        let preferred = store.export_rows(&ExportFilter::default(), true);
        assert_eq!(preferred[0].summarized_text, "ja:hi");
    }

    #[test]
    fn dangling_correction_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        let err = store
            .apply_correction(CorrectionDraft {
                record_id: 7,
                corrected_summary: "x".into(),
                author_label: "a".into(),
            })
            .unwrap_err();
        assert!(matches!(err, StoreError::DanglingRecord(7)));
        assert!(store.corrections().is_empty());
    }

    #[test]
    fn latest_correction_wins() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        let id = store.append(draft("s", 1)).unwrap();
        for text in ["first", "second"] {
            store
                .apply_correction(CorrectionDraft {
                    record_id: id,
                    corrected_summary: text.into(),
                    author_label: "a".into(),
                })
                .unwrap();
        }
        // Oracle: sort the raw log by (timestamp, id) and take the last entry.
        let mut log = store.corrections();
        log.sort_by_key(|c| (c.created_at, c.correction_id));
        let expected = log.last().unwrap().corrected_summary.clone();
        assert_eq!(expected, "second");
        assert_eq!(
            store.export_rows(&ExportFilter::default(), true)[0].summarized_text,
            expected
        );
    }

    #[test]
    fn export_filters_and_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        let mut buf = Vec::new();
        assert_eq!(
            store.export_jsonl(&mut buf, &ExportFilter::default(), false).unwrap(),
            0
        );
        assert!(buf.is_empty());

        store.append(draft("a", 1)).unwrap();
        store.append(draft("b", 2)).unwrap();
        store.append(draft("a", 3)).unwrap();
        let filter = ExportFilter {
            session_id: Some("a".into()),
            ..Default::default()
        };
        let rows = store.export_rows(&filter, false);
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.source_text.ends_with('1') || r.source_text.ends_with('3')));
    }

    #[test]
    fn export_line_has_exact_fields() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        store.append(draft("a", 1)).unwrap();
        let mut buf = Vec::new();
        store.export_jsonl(&mut buf, &ExportFilter::default(), false).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line,
            "{\"source_text\":\"hello world number 1\",\"summarized_text\":\"ja:hello ja:world\",\"source_lang\":\"en\",\"target_lang\":\"ja\"}\n"
        );
    }

    #[test]
    fn round_trip_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path().join("src")).unwrap();
        for n in 0..3 {
            store.append(draft("s", n)).unwrap();
        }
        let export = dir.path().join("export.jsonl");
        store
            .export_jsonl(File::create(&export).unwrap(), &ExportFilter::default(), false)
            .unwrap();
        let rows = import_jsonl(&export).unwrap();
        let copy = DataStore::open(dir.path().join("dst")).unwrap();
        copy.import_rows(rows, "imported").unwrap();
        assert_eq!(
            copy.export_rows(&ExportFilter::default(), false),
            store.export_rows(&ExportFilter::default(), false)
        );
    }

    #[test]
    fn malformed_import_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"source_text\":\"a\",\"summarized_text\":\"b\",\"source_lang\":\"en\",\"target_lang\":\"ja\"}\nnot json\n",
        )
        .unwrap();
        match import_jsonl(&path) {
            Err(StoreError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn stats_summarize_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        store.append(draft("a", 1)).unwrap();
        let mut d = draft("a", 2);
        d.target_lang = "de".into();
        d.sigma_measured = Some(1.0);
        store.append(d).unwrap();
        let stats = store.stats();
        assert_eq!(stats.records, 2);
        assert_eq!(stats.mean_sigma, Some(0.75));
        assert_eq!(stats.per_language_pair["en->ja"], 1);
        assert_eq!(stats.per_language_pair["en->de"], 1);
    }
}
