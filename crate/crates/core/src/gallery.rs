//! Durable enrollment store with 1:1 verification and 1:N identification.
//!
//! On disk a gallery is a directory holding `manifest.json` and one `.mbt`
//! file per (subject, finger) under `templates/`. Every file is written to a
//! temporary name, synced and renamed into place, and the manifest is
//! replaced last, so an interrupted write leaves the previous store intact.
//!
//! Writers are serialized; readers work on an immutable snapshot that is
//! swapped in only after the new state is on disk.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{match_templates, MatcherConfig};
use crate::spoofdet::extended_float;
use crate::{MatchResult, Template};

pub const MANIFEST: &str = "manifest.json";
const TEMPLATE_DIR: &str = "templates";
const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_CAPACITY: usize = 10_000;
/// ISO/IEC finger position codes run from 0 (unknown) to 10.
pub const MAX_FINGER_CODE: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub verify: f64,
    pub identify: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { verify: 12.0, identify: 12.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GalleryOptions {
    /// Soft limit on the number of subjects; exceeding it only logs.
    pub capacity: usize,
    /// Search threads; 0 uses the available parallelism.
    pub workers: usize,
    /// Thresholds written into a newly created gallery.
    pub thresholds: Thresholds,
    pub matcher: MatcherConfig,
    /// fsync files and the directory after each write.
    pub sync: bool,
}

impl Default for GalleryOptions {
    fn default() -> Self {
        GalleryOptions {
            capacity: DEFAULT_CAPACITY,
            workers: 0,
            thresholds: Thresholds::default(),
            matcher: MatcherConfig::default(),
            sync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub subject_id: String,
    pub fingers: BTreeMap<u8, Template>,
    pub metadata: serde_json::Value,
    pub enrolled_at: DateTime<Utc>,
}

impl GalleryRecord {
    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            subject_id: self.subject_id.clone(),
            enrolled_at: self.enrolled_at,
            metadata: self.metadata.clone(),
            fingers: self
                .fingers
                .iter()
                .map(|(&finger, t)| FingerSummary {
                    finger,
                    minutiae: t.len(),
                    quality: f64::from(t.quality_summary()),
                    source_ppi: t.source_ppi(),
                })
                .collect(),
        }
    }
}

/// Public view of a record: metadata and template statistics, never
/// descriptor values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSummary {
    pub subject_id: String,
    pub enrolled_at: DateTime<Utc>,
    pub metadata: serde_json::Value,
    pub fingers: Vec<FingerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerSummary {
    pub finger: u8,
    pub minutiae: usize,
    pub quality: f64,
    pub source_ppi: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub subject_id: String,
    pub finger: u8,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryStats {
    pub subjects: usize,
    pub templates: usize,
    pub index_version: u64,
    pub capacity: usize,
    pub over_capacity: bool,
    pub thresholds: Thresholds,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    index_version: u64,
    thresholds: Thresholds,
    records: Vec<ManifestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    subject_id: String,
    enrolled_at: DateTime<Utc>,
    metadata: serde_json::Value,
    fingers: BTreeMap<u8, String>,
}

#[derive(Debug, Default)]
struct Snapshot {
    records: BTreeMap<String, Arc<GalleryRecord>>,
    index_version: u64,
    thresholds: Thresholds,
}

pub struct GalleryStore {
    dir: PathBuf,
    options: GalleryOptions,
    state: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
    pool: RwLock<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for GalleryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GalleryStore").field("dir", &self.dir).finish_non_exhaustive()
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("gallery-search-{i}"))
        .build()
        .map_err(|e| Error::Storage(format!("cannot start search threads: {e}")))
}

fn storage(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Storage(format!("{}: {e}", path.display()))
}

/// File name for a template: hex of the subject id keeps arbitrary ids safe.
fn template_file(subject_id: &str, finger: u8) -> String {
    let hex: String = subject_id.bytes().map(|b| format!("{b:02x}")).collect();
    format!("{TEMPLATE_DIR}/{hex}_{finger}.mbt")
}

impl GalleryStore {
    /// Opens the gallery in `dir`, creating an empty one if no manifest exists.
    pub fn open(dir: impl AsRef<Path>, options: GalleryOptions) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(TEMPLATE_DIR)).map_err(|e| storage(&dir, e))?;
        let manifest_path = dir.join(MANIFEST);
        let snapshot = if manifest_path.exists() {
            Self::load(&dir)?
        } else {
            let s = Snapshot { thresholds: options.thresholds, ..Snapshot::default() };
            write_manifest(&dir, &s, options.sync)?;
            s
        };
        if snapshot.records.len() > options.capacity {
            log::warn!("gallery holds {} subjects, above the capacity of {}", snapshot.records.len(), options.capacity);
        }
        let pool = build_pool(options.workers)?;
        Ok(GalleryStore {
            dir,
            options,
            state: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
            pool: RwLock::new(Arc::new(pool)),
        })
    }

    fn load(dir: &Path) -> Result<Snapshot> {
        let path = dir.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| storage(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| storage(&path, e))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(storage(&path, format!("unsupported manifest version {}", manifest.version)));
        }
        let mut records = BTreeMap::new();
        for r in manifest.records {
            let mut fingers = BTreeMap::new();
            for (finger, file) in r.fingers {
                let p = dir.join(&file);
                let t = Template::read(&p).map_err(|e| match e {
                    Error::TemplateFormat(m) => Error::TemplateFormat(format!("{}: {m}", p.display())),
                    other => storage(&p, other),
                })?;
                fingers.insert(finger, t);
            }
            let rec = GalleryRecord { subject_id: r.subject_id.clone(), fingers, metadata: r.metadata, enrolled_at: r.enrolled_at };
            if records.insert(r.subject_id.clone(), Arc::new(rec)).is_some() {
                return Err(storage(&path, format!("duplicate subject `{}`", r.subject_id)));
            }
        }
        Ok(Snapshot { records, index_version: manifest.index_version, thresholds: manifest.thresholds })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn options(&self) -> &GalleryOptions {
        &self.options
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.state.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.snapshot().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_version(&self) -> u64 {
        self.snapshot().index_version
    }

    pub fn thresholds(&self) -> Thresholds {
        self.snapshot().thresholds
    }

    pub fn stats(&self) -> GalleryStats {
        let s = self.snapshot();
        GalleryStats {
            subjects: s.records.len(),
            templates: s.records.values().map(|r| r.fingers.len()).sum(),
            index_version: s.index_version,
            capacity: self.options.capacity,
            over_capacity: s.records.len() > self.options.capacity,
            thresholds: s.thresholds,
        }
    }

    pub fn get(&self, subject_id: &str) -> Option<Arc<GalleryRecord>> {
        self.snapshot().records.get(subject_id).cloned()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.snapshot().records.keys().cloned().collect()
    }

    /// Changes the number of search threads.
    pub fn set_workers(&self, workers: usize) -> Result<()> {
        let pool = build_pool(workers)?;
        *self.pool.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(pool);
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.pool.read().unwrap_or_else(|e| e.into_inner()).current_num_threads()
    }

    /// Persists new thresholds.
    pub fn set_thresholds(&self, thresholds: Thresholds) -> Result<()> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let cur = self.snapshot();
        let next = Snapshot { records: cur.records.clone(), index_version: cur.index_version, thresholds };
        write_manifest(&self.dir, &next, self.options.sync)?;
        *self.state.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(())
    }

    /// Enrolls one subject. The record is on disk before this returns.
    pub fn enroll(
        &self,
        subject_id: &str,
        fingers: BTreeMap<u8, Template>,
        metadata: serde_json::Value,
    ) -> Result<Arc<GalleryRecord>> {
        let mut out = self.enroll_many(vec![(subject_id.to_string(), fingers, metadata)])?;
        Ok(out.remove(0))
    }

    /// Enrolls several subjects with a single manifest rewrite. Either all
    /// of them are stored or none.
    pub fn enroll_many(
        &self,
        subjects: Vec<(String, BTreeMap<u8, Template>, serde_json::Value)>,
    ) -> Result<Vec<Arc<GalleryRecord>>> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let cur = self.snapshot();
        let mut records = cur.records.clone();
        let mut added = Vec::with_capacity(subjects.len());
        for (id, fingers, metadata) in subjects {
            if id.is_empty() {
                return Err(Error::invalid("subject id must not be empty"));
            }
            if fingers.is_empty() {
                return Err(Error::invalid(format!("subject `{id}` has no finger templates")));
            }
            if let Some(f) = fingers.keys().find(|&&f| f > MAX_FINGER_CODE) {
                return Err(Error::invalid(format!("finger code {f} outside 0..=10")));
            }
            if fingers.values().any(Template::is_empty) {
                return Err(Error::invalid(format!("subject `{id}` has an empty template")));
            }
            if records.contains_key(&id) {
                return Err(Error::Conflict(id));
            }
            let rec = Arc::new(GalleryRecord { subject_id: id.clone(), fingers, metadata, enrolled_at: Utc::now() });
            records.insert(id, rec.clone());
            added.push(rec);
        }
        for rec in &added {
            for (&finger, t) in &rec.fingers {
                write_atomic(&self.dir.join(template_file(&rec.subject_id, finger)), &t.to_mbt(), self.options.sync)?;
            }
        }
        let next = Snapshot { records, index_version: cur.index_version + added.len() as u64, thresholds: cur.thresholds };
        write_manifest(&self.dir, &next, self.options.sync)?;
        if next.records.len() > self.options.capacity {
            log::warn!("gallery holds {} subjects, above the capacity of {}", next.records.len(), self.options.capacity);
        }
        *self.state.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(added)
    }

    /// 1:1 comparison against one enrolled finger with the verify threshold.
    pub fn verify(&self, subject_id: &str, finger: u8, probe: &Template) -> Result<MatchResult> {
        let snap = self.snapshot();
        let rec = snap.records.get(subject_id).ok_or_else(|| Error::NotFound(format!("subject `{subject_id}`")))?;
        let t = rec
            .fingers
            .get(&finger)
            .ok_or_else(|| Error::NotFound(format!("finger {finger} of subject `{subject_id}`")))?;
        match_templates(probe, t, snap.thresholds.verify as f32, &self.options.matcher)
    }

    /// Exhaustive 1:N search. A subject scores the max over its fingers;
    /// hits are ordered by score descending, then subject id.
    pub fn identify(&self, probe: &Template, top_n: usize) -> Result<Vec<SearchHit>> {
        if top_n == 0 {
            return Err(Error::invalid("top_n must be at least 1"));
        }
        let snap = self.snapshot();
        if snap.records.is_empty() {
            return Ok(Vec::new());
        }
        let pool = self.pool.read().unwrap_or_else(|e| e.into_inner()).clone();
        let cfg = &self.options.matcher;
        let records: Vec<&Arc<GalleryRecord>> = snap.records.values().collect();
        let scored: Result<Vec<(f32, u8, &str)>> = pool.install(|| {
            records
                .par_iter()
                .map(|rec| {
                    let mut best: Option<(f32, u8)> = None;
                    for (&finger, t) in &rec.fingers {
                        let s = match_templates(probe, t, f32::INFINITY, cfg)?.score;
                        if best.is_none_or(|(b, _)| s > b) {
                            best = Some((s, finger));
                        }
                    }
                    let (s, f) = best.expect("records have at least one finger");
                    Ok((s, f, rec.subject_id.as_str()))
                })
                .collect()
        });
        let mut scored = scored?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.2.cmp(b.2)));
        Ok(scored
            .into_iter()
            .take(top_n)
            .enumerate()
            .map(|(k, (score, finger, id))| SearchHit { subject_id: id.to_string(), finger, score: f64::from(score), rank: k + 1 })
            .collect())
    }
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(|e| storage(dir, e))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
fn write_atomic(path: &Path, bytes: &[u8], sync: bool) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| storage(&tmp, e))?;
    f.write_all(bytes).map_err(|e| storage(&tmp, e))?;
    if sync {
        f.sync_all().map_err(|e| storage(&tmp, e))?;
    }
    drop(f);
    fs::rename(&tmp, path).map_err(|e| storage(path, e))?;
    if sync {
        if let Some(parent) = path.parent() {
            sync_dir(parent)?;
        }
    }
    Ok(())
}

fn write_manifest(dir: &Path, s: &Snapshot, sync: bool) -> Result<()> {
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        index_version: s.index_version,
        thresholds: s.thresholds,
        records: s
            .records
            .values()
            .map(|r| ManifestRecord {
                subject_id: r.subject_id.clone(),
                enrolled_at: r.enrolled_at,
                metadata: r.metadata.clone(),
                fingers: r.fingers.keys().map(|&f| (f, template_file(&r.subject_id, f))).collect(),
            })
            .collect(),
    };
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST), &bytes, sync)
}

/// Match threshold chosen by [`calibrate_match_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholdReport {
    #[serde(with = "extended_float")]
    pub threshold: f64,
    pub target_far: f64,
    /// Fraction of imposter scores at or above the threshold.
    pub achieved_far: f64,
    /// Fraction of genuine scores at or above the threshold.
    pub genuine_accept_rate: f64,
    /// Set when the target admits every imposter and the threshold is -inf.
    pub accept_all: bool,
}

/// Smallest threshold `t` (accept iff `score >= t`) whose imposter accept
/// fraction stays within `target_far`.
///
/// With `k = floor(target_far * n)` tolerated accepts, `t` is the next float
/// above the `(k+1)`-th largest imposter score.
pub fn calibrate_match_threshold(genuine: &[f64], imposter: &[f64], target_far: f64) -> Result<MatchThresholdReport> {
    if genuine.is_empty() || imposter.is_empty() {
        return Err(Error::InsufficientData("genuine and imposter score sets must be non-empty".into()));
    }
    if !(target_far >= 0.0) {
        return Err(Error::invalid(format!("target FAR {target_far} must be non-negative")));
    }
    if genuine.iter().chain(imposter).any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut sorted = imposter.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let k = (target_far * n as f64).floor();
    let (threshold, accept_all) =
        if k >= n as f64 { (f64::NEG_INFINITY, true) } else { (sorted[k as usize].next_up(), false) };
    let accepted = |xs: &[f64]| xs.iter().filter(|&&v| v >= threshold).count() as f64 / xs.len() as f64;
    Ok(MatchThresholdReport {
        threshold,
        target_far,
        achieved_far: accepted(imposter),
        genuine_accept_rate: accepted(genuine),
        accept_all,
    })
}
