//! Review state: the screens under review (read-only) plus an append-only
//! verdict log. The effective decision per element is the latest logged
//! verdict; replaying the log reproduces the state exactly.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use groundkit_core::records::{read_jsonl, SCHEMA_VERSION};
use groundkit_core::{ElementKind, NormBox, PixelDims, ScreenRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown screen `{0}`")]
    UnknownScreen(String),
    #[error("unknown element `{element}` on screen `{screen}`")]
    UnknownElement { screen: String, element: String },
    #[error("malformed verdict: {0}")]
    Malformed(String),
    #[error("duplicate screen id `{0}` in store")]
    DuplicateScreen(String),
    #[error("verdict log line {line} is corrupt: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub schema_version: u32,
    /// Position in the log; later verdicts win.
    pub seq: u64,
    pub screen_id: String,
    pub element_id: String,
    pub decision: Decision,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSummary {
    pub screen_id: String,
    pub image_ref: String,
    pub dims: PixelDims,
    pub element_count: usize,
    pub decided: usize,
    pub removed: usize,
    /// Every element has a decision.
    pub reviewed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenPage {
    pub total: usize,
    pub reviewed: usize,
    pub offset: usize,
    pub limit: usize,
    pub screens: Vec<ScreenSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementView {
    pub element_id: String,
    #[serde(rename = "box")]
    pub bbox: NormBox,
    pub kind: ElementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenView {
    pub screen_id: String,
    pub image_ref: String,
    pub image_url: String,
    pub dims: PixelDims,
    pub elements: Vec<ElementView>,
    pub reviewed: bool,
}

/// Log size (in lines) below which compaction never triggers.
const COMPACT_MIN_LINES: usize = 1024;

type Key = (String, String);

#[derive(Debug)]
pub struct ReviewStore {
    screens: Vec<ScreenRecord>,
    index: HashMap<String, usize>,
    verdicts: BTreeMap<Key, Verdict>,
    log_path: PathBuf,
    writer: Option<File>,
    log_lines: usize,
    next_seq: u64,
    image_root: Option<PathBuf>,
    failed: bool,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Replays a log. A final line without its newline is a torn write from a
/// crash; it is ignored and its byte offset returned so it can be cut off.
fn replay(path: &Path) -> Result<(Vec<Verdict>, Option<u64>), StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            return Ok((out, None));
        }
        number += 1;
        if !line.ends_with('\n') {
            return Ok((out, Some(offset)));
        }
        offset += n as u64;
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict = serde_json::from_str(&line).map_err(|e| StoreError::CorruptLog {
            line: number,
            message: e.to_string(),
        })?;
        out.push(v);
    }
}

impl ReviewStore {
    /// Loads screens and replays the verdict log, opening it for appends.
    pub fn open(
        screens: &Path,
        log: &Path,
        image_root: Option<PathBuf>,
    ) -> Result<Self, StoreError> {
        let mut store = Self::load(screens, log, image_root)?;
        if let Some(parent) = log.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let (_, torn) = replay(log)?;
        let file = OpenOptions::new().create(true).append(true).open(log)?;
        if let Some(len) = torn {
            file.set_len(len)?;
            file.sync_all()?;
        }
        store.writer = Some(file);
        Ok(store)
    }

    /// Loads screens and replays the verdict log without writing anything.
    pub fn load(
        screens: &Path,
        log: &Path,
        image_root: Option<PathBuf>,
    ) -> Result<Self, StoreError> {
        let records: Vec<ScreenRecord> = read_jsonl(screens)?;
        let mut index = HashMap::with_capacity(records.len());
        for (i, s) in records.iter().enumerate() {
            if index.insert(s.screen_id.clone(), i).is_some() {
                return Err(StoreError::DuplicateScreen(s.screen_id.clone()));
            }
        }
        let (log_verdicts, _) = replay(log)?;
        let mut store = Self {
            screens: records,
            index,
            verdicts: BTreeMap::new(),
            log_path: log.to_path_buf(),
            writer: None,
            log_lines: log_verdicts.len(),
            next_seq: 0,
            image_root,
            failed: false,
        };
        for v in log_verdicts {
            store.next_seq = store.next_seq.max(v.seq + 1);
            store
                .verdicts
                .insert((v.screen_id.clone(), v.element_id.clone()), v);
        }
        Ok(store)
    }

    pub fn screen_count(&self) -> usize {
        self.screens.len()
    }

    pub fn verdict_count(&self) -> usize {
        self.verdicts.len()
    }

    pub fn log_lines(&self) -> usize {
        self.log_lines
    }

    pub fn removed_count(&self) -> usize {
        self.verdicts
            .values()
            .filter(|v| v.decision == Decision::Remove)
            .count()
    }

    pub fn effective(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.values()
    }

    fn verdict(&self, screen: &str, element: &str) -> Option<&Verdict> {
        self.verdicts
            .get(&(screen.to_string(), element.to_string()))
    }

    fn summary(&self, s: &ScreenRecord) -> ScreenSummary {
        let decided: Vec<&Verdict> = s
            .elements
            .iter()
            .filter_map(|e| self.verdict(&s.screen_id, &e.element_id))
            .collect();
        ScreenSummary {
            screen_id: s.screen_id.clone(),
            image_ref: s.image_ref.clone(),
            dims: s.dims,
            element_count: s.elements.len(),
            decided: decided.len(),
            removed: decided
                .iter()
                .filter(|v| v.decision == Decision::Remove)
                .count(),
            reviewed: decided.len() == s.elements.len(),
        }
    }

    pub fn page(&self, offset: usize, limit: usize) -> ScreenPage {
        let reviewed = self
            .screens
            .iter()
            .filter(|s| self.summary(s).reviewed)
            .count();
        ScreenPage {
            total: self.screens.len(),
            reviewed,
            offset,
            limit,
            screens: self
                .screens
                .iter()
                .skip(offset)
                .take(limit)
                .map(|s| self.summary(s))
                .collect(),
        }
    }

    fn screen_record(&self, id: &str) -> Result<&ScreenRecord, StoreError> {
        self.index
            .get(id)
            .map(|&i| &self.screens[i])
            .ok_or_else(|| StoreError::UnknownScreen(id.to_string()))
    }

    pub fn screen(&self, id: &str) -> Result<ScreenView, StoreError> {
        let s = self.screen_record(id)?;
        let elements = s
            .elements
            .iter()
            .map(|e| ElementView {
                element_id: e.element_id.clone(),
                bbox: e.bbox,
                kind: e.kind,
                verdict: self.verdict(id, &e.element_id).cloned(),
            })
            .collect();
        Ok(ScreenView {
            screen_id: s.screen_id.clone(),
            image_ref: s.image_ref.clone(),
            image_url: format!("/screens/{}/image", s.screen_id),
            dims: s.dims,
            elements,
            reviewed: self.summary(s).reviewed,
        })
    }

    /// Resolved screenshot path, if an image root is configured.
    pub fn image_path(&self, id: &str) -> Result<Option<PathBuf>, StoreError> {
        let s = self.screen_record(id)?;
        Ok(self.image_root.as_ref().map(|root| {
            let p = Path::new(&s.image_ref);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        }))
    }

    /// Validates, durably appends and applies one verdict.
    pub fn record(
        &mut self,
        screen_id: &str,
        element_id: &str,
        decision: Decision,
        reviewer: &str,
    ) -> Result<Verdict, StoreError> {
        let s = self.screen_record(screen_id)?;
        if !s.elements.iter().any(|e| e.element_id == element_id) {
            return Err(StoreError::UnknownElement {
                screen: screen_id.into(),
                element: element_id.into(),
            });
        }
        if reviewer.trim().is_empty() {
            return Err(StoreError::Malformed("reviewer is empty".into()));
        }
        if self.failed {
            return Err(StoreError::Unavailable(
                "an earlier log write failed; restart the service".into(),
            ));
        }
        let verdict = Verdict {
            schema_version: SCHEMA_VERSION,
            seq: self.next_seq,
            screen_id: screen_id.into(),
            element_id: element_id.into(),
            decision,
            reviewer: reviewer.trim().into(),
            timestamp_ms: now_ms(),
        };
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| StoreError::Unavailable("store opened read-only".into()))?;
        let mut line = serde_json::to_vec(&verdict).map_err(io::Error::from)?;
        line.push(b'\n');
        if let Err(e) = writer.write_all(&line).and_then(|_| writer.sync_data()) {
            self.failed = true;
            return Err(StoreError::Unavailable(e.to_string()));
        }
        self.next_seq += 1;
        self.log_lines += 1;
        self.verdicts.insert(
            (verdict.screen_id.clone(), verdict.element_id.clone()),
            verdict.clone(),
        );
        if self.log_lines >= COMPACT_MIN_LINES && self.log_lines > 2 * self.verdicts.len() {
            self.compact()?;
        }
        Ok(verdict)
    }

    /// Rewrites the log to one line per element (its effective verdict),
    /// atomically via a temporary file and rename.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let mut effective: Vec<&Verdict> = self.verdicts.values().collect();
        effective.sort_by_key(|v| v.seq);
        let tmp = self.log_path.with_extension("compact.tmp");
        {
            let mut f = File::create(&tmp)?;
            for v in &effective {
                let mut line = serde_json::to_vec(v).map_err(io::Error::from)?;
                line.push(b'\n');
                f.write_all(&line)?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.log_path)?;
        if let Some(dir) = self.log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            // Persist the rename itself; not every platform supports this.
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        self.log_lines = effective.len();
        if self.writer.is_some() {
            let mut f = OpenOptions::new().append(true).open(&self.log_path)?;
            f.seek(SeekFrom::End(0))?;
            self.writer = Some(f);
        }
        Ok(())
    }

    /// Screens in input order with removed elements dropped.
    pub fn export(&self) -> Vec<ScreenRecord> {
        self.screens
            .iter()
            .map(|s| {
                let mut out = s.clone();
                out.elements.retain(|e| {
                    self.verdict(&s.screen_id, &e.element_id)
                        .is_none_or(|v| v.decision != Decision::Remove)
                });
                out
            })
            .collect()
    }
}
