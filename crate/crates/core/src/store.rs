//! Embedded store of (post, geolocation) pairs.
//!
//! Every write is appended to a newline-delimited log and synced before it
//! is acknowledged. Opening a store replays the log, last record per post id
//! winning. An incomplete trailing record is cut off with a warning; damage
//! anywhere else is an error.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rstar::primitives::GeomWithData;
use rstar::{RTree, AABB};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::gazetteer::PlaceClass;
use crate::geo::{BBox, GeoError};
use crate::geocode::{Geolocation, Method};
use crate::ingest::Post;

pub const LOG_FILE: &str = "posts.log";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("store directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("{path}: corrupt record at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("geolocation for post {geo} stored with post {post}")]
    Mismatch { post: u64, geo: u64 },
    #[error("invalid post {0}: {1}")]
    InvalidPost(u64, String),
    #[error("invalid geolocation for post {0}: {1}")]
    InvalidGeolocation(u64, String),
    #[error("invalid filter: {0}")]
    Filter(String),
}

impl From<GeoError> for StoreError {
    fn from(e: GeoError) -> Self {
        StoreError::Filter(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredItem {
    pub post: Post,
    pub geo: Geolocation,
    pub inserted_at: i64,
}

impl StoredItem {
    pub fn new(post: Post, geo: Geolocation, inserted_at: i64) -> Self {
        Self { post, geo, inserted_at }
    }

    fn check(&self) -> Result<(), StoreError> {
        if self.post.post_id != self.geo.post_id {
            return Err(StoreError::Mismatch {
                post: self.post.post_id,
                geo: self.geo.post_id,
            });
        }
        self.post
            .validate()
            .map_err(|e| StoreError::InvalidPost(self.post.post_id, e))?;
        self.geo
            .check()
            .map_err(|e| StoreError::InvalidGeolocation(self.geo.post_id, e))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Native,
    Cime,
    #[default]
    All,
}

impl Layer {
    pub fn admits(self, method: Method) -> bool {
        match self {
            Layer::Native => method == Method::Native,
            Layer::Cime => method.is_inferred(),
            Layer::All => true,
        }
    }
}

impl std::str::FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(Layer::Native),
            "cime" => Ok(Layer::Cime),
            "all" => Ok(Layer::All),
            other => Err(format!("unknown layer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFilter {
    pub bbox: Option<BBox>,
    /// Inclusive bounds on `created_at`.
    pub time_from: Option<i64>,
    pub time_to: Option<i64>,
    pub layer: Layer,
    /// Keep only classes at least this fine.
    pub min_precision: Option<PlaceClass>,
    pub only_with_media: bool,
    pub limit: Option<usize>,
}

impl QueryFilter {
    pub fn validate(&self) -> Result<(), StoreError> {
        if let Some(b) = &self.bbox {
            b.validate()?;
        }
        if let (Some(f), Some(t)) = (self.time_from, self.time_to) {
            if f > t {
                return Err(StoreError::Filter(format!("time window inverted: {f} > {t}")));
            }
        }
        Ok(())
    }

    pub fn matches(&self, item: &StoredItem) -> bool {
        let geo = &item.geo;
        if let Some(b) = &self.bbox {
            match geo.point {
                Some(p) if b.contains(p) => {}
                _ => return false,
            }
        }
        let t = item.post.created_at;
        if self.time_from.is_some_and(|f| t < f) || self.time_to.is_some_and(|to| t > to) {
            return false;
        }
        if !self.layer.admits(geo.method) {
            return false;
        }
        if let Some(min) = self.min_precision {
            match geo.precision_class {
                Some(c) if c.at_least_as_fine_as(min) => {}
                _ => return false,
            }
        }
        !(self.only_with_media && !item.post.has_media())
    }
}

/// Outcome of replaying a log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: usize,
    pub items: usize,
    pub warnings: Vec<String>,
}

type Point = GeomWithData<[f64; 2], u64>;

#[derive(Default)]
struct Index {
    items: BTreeMap<u64, Arc<StoredItem>>,
    spatial: RTree<Point>,
    by_time: BTreeSet<(i64, u64)>,
}

impl Index {
    fn upsert(&mut self, item: StoredItem) {
        let id = item.post.post_id;
        if let Some(old) = self.items.remove(&id) {
            self.by_time.remove(&(old.post.created_at, id));
            if let Some(p) = old.geo.point {
                self.spatial.remove(&GeomWithData::new([p.lon, p.lat], id));
            }
        }
        self.by_time.insert((item.post.created_at, id));
        if let Some(p) = item.geo.point {
            self.spatial.insert(GeomWithData::new([p.lon, p.lat], id));
        }
        self.items.insert(id, Arc::new(item));
    }

    fn query(&self, filter: &QueryFilter) -> Vec<Arc<StoredItem>> {
        let candidates: Vec<&Arc<StoredItem>> = if let Some(b) = &filter.bbox {
            let env = AABB::from_corners([b.min_lon, b.min_lat], [b.max_lon, b.max_lat]);
            self.spatial
                .locate_in_envelope(&env)
                .filter_map(|p| self.items.get(&p.data))
                .collect()
        } else if filter.time_from.is_some() || filter.time_to.is_some() {
            let lo = filter.time_from.map_or(Bound::Unbounded, |f| Bound::Included((f, 0)));
            let hi = filter.time_to.map_or(Bound::Unbounded, |t| Bound::Included((t, u64::MAX)));
            self.by_time
                .range((lo, hi))
                .filter_map(|(_, id)| self.items.get(id))
                .collect()
        } else {
            self.items.values().collect()
        };
        let mut out: Vec<Arc<StoredItem>> = candidates
            .into_iter()
            .filter(|i| filter.matches(i))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            b.post
                .created_at
                .cmp(&a.post.created_at)
                .then(a.post.post_id.cmp(&b.post.post_id))
        });
        if let Some(limit) = filter.limit {
            out.truncate(limit);
        }
        out
    }
}

struct Writer {
    file: File,
    /// Length of the log covering every acknowledged record.
    committed: u64,
}

/// Readers see whole upserts only; writes are serialized through one writer.
pub struct Store {
    log_path: PathBuf,
    writer: Mutex<Writer>,
    index: RwLock<Index>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    /// Opens the log inside an existing directory, creating an empty log if needed.
    pub fn open(dir: impl AsRef<Path>) -> Result<(Self, LoadReport), StoreError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(StoreError::MissingDir(dir.to_path_buf()));
        }
        Self::load(dir.join(LOG_FILE))
    }

    /// Creates the directory when missing, then opens it.
    pub fn create(dir: impl AsRef<Path>) -> Result<(Self, LoadReport), StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Self::open(dir)
    }

    /// Replays a log file (or compacted snapshot) and keeps appending to it.
    pub fn load(log_path: impl Into<PathBuf>) -> Result<(Self, LoadReport), StoreError> {
        let log_path = log_path.into();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(&log_path))?;

        let mut index = Index::default();
        let mut report = LoadReport::default();
        let mut offset = 0usize;
        let mut line_no = 0usize;
        let mut committed = 0u64;
        let mut needs_newline = false;
        while offset < bytes.len() {
            line_no += 1;
            let (end, terminated) = match bytes[offset..].iter().position(|&b| b == b'\n') {
                Some(p) => (offset + p, true),
                None => (bytes.len(), false),
            };
            let line = &bytes[offset..end];
            let next = if terminated { end + 1 } else { end };
            let is_last = bytes[next..].iter().all(|b| b.is_ascii_whitespace());
            if line.iter().all(|b| b.is_ascii_whitespace()) {
                offset = next;
                committed = next as u64;
                continue;
            }
            let parsed = serde_json::from_slice::<StoredItem>(line)
                .map_err(|e| e.to_string())
                .and_then(|item| item.check().map(|_| item).map_err(|e| e.to_string()));
            match parsed {
                Ok(item) => {
                    index.upsert(item);
                    report.records += 1;
                    committed = next as u64;
                    needs_newline = !terminated;
                }
                Err(message) if is_last => {
                    let w = format!(
                        "{}: dropping incomplete trailing record at line {line_no} ({message})",
                        log_path.display()
                    );
                    warn!("{w}");
                    report.warnings.push(w);
                    break;
                }
                Err(message) => {
                    return Err(StoreError::Corrupt {
                        path: log_path,
                        line: line_no,
                        message,
                    })
                }
            }
            offset = next;
        }
        if committed < bytes.len() as u64 {
            file.set_len(committed).map_err(io_err(&log_path))?;
        }
        if needs_newline {
            file.write_all(b"\n").map_err(io_err(&log_path))?;
            committed += 1;
        }
        file.sync_all().map_err(io_err(&log_path))?;
        report.items = index.items.len();
        Ok((
            Self {
                log_path,
                writer: Mutex::new(Writer { file, committed }),
                index: RwLock::new(index),
            },
            report,
        ))
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    fn append(&self, w: &mut Writer, items: &[StoredItem]) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item).expect("stored items serialize");
            buf.push(b'\n');
        }
        let result = w.file.write_all(&buf).and_then(|_| w.file.sync_data());
        if let Err(e) = result {
            // drop whatever part of the batch reached the file
            let _ = w.file.set_len(w.committed);
            return Err(io_err(&self.log_path)(e));
        }
        w.committed += buf.len() as u64;
        Ok(())
    }

    /// Durably inserts or replaces the item for its post id.
    pub fn insert(&self, item: StoredItem) -> Result<(), StoreError> {
        self.insert_batch(vec![item])
    }

    /// Appends all items with a single sync; nothing is applied on failure.
    pub fn insert_batch(&self, items: Vec<StoredItem>) -> Result<(), StoreError> {
        for item in &items {
            item.check()?;
        }
        let mut w = self.writer.lock();
        self.append(&mut w, &items)?;
        let mut index = self.index.write();
        for item in items {
            index.upsert(item);
        }
        Ok(())
    }

    /// Read-modify-write of one item under the writer lock.
    pub fn update<F>(&self, id: u64, f: F) -> Result<Option<Arc<StoredItem>>, StoreError>
    where
        F: FnOnce(&mut StoredItem),
    {
        let mut w = self.writer.lock();
        let Some(current) = self.index.read().items.get(&id).cloned() else {
            return Ok(None);
        };
        let mut next = (*current).clone();
        f(&mut next);
        next.check()?;
        self.append(&mut w, std::slice::from_ref(&next))?;
        let mut index = self.index.write();
        index.upsert(next);
        Ok(index.items.get(&id).cloned())
    }

    pub fn set_validated(&self, id: u64, validated: bool) -> Result<Option<Arc<StoredItem>>, StoreError> {
        self.update(id, |item| item.geo.crowd_validated = validated)
    }

    pub fn get(&self, id: u64) -> Option<Arc<StoredItem>> {
        self.index.read().items.get(&id).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every item, ascending post id.
    pub fn all(&self) -> Vec<Arc<StoredItem>> {
        self.index.read().items.values().cloned().collect()
    }

    /// Items passing every predicate of `filter`, newest first (ties by id),
    /// truncated to `filter.limit`.
    pub fn query(&self, filter: &QueryFilter) -> Result<Vec<Arc<StoredItem>>, StoreError> {
        filter.validate()?;
        Ok(self.index.read().query(filter))
    }

    /// Writes a compacted log (one record per post, ascending id) to `path`.
    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let _w = self.writer.lock();
        let items = self.all();
        let tmp = path.with_extension("tmp");
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            let mut buf = Vec::new();
            for item in &items {
                serde_json::to_writer(&mut buf, item.as_ref())?;
                buf.push(b'\n');
            }
            f.write_all(&buf)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LatLon;
    use crate::ingest::Source;

    fn item(id: u64, t: i64, method: Method, point: Option<(f64, f64)>) -> StoredItem {
        let post = Post {
            post_id: id,
            source: Source::Twitter,
            author_id: "a".into(),
            created_at: t,
            text: format!("post {id}"),
            hashtags: vec![],
            mentions: vec![],
            retweet_of: None,
            reply_to: None,
            native_geotag: None,
            links: vec![],
            media: vec![],
        };
        let geo = match method {
            Method::Unresolved => Geolocation::unresolved(id, vec![], vec![]),
            m => Geolocation {
                post_id: id,
                method: m,
                place_id: (m != Method::Native).then_some(1),
                point: point.map(|(lat, lon)| LatLon::new(lat, lon)),
                precision_class: Some(PlaceClass::Locality),
                radius_m: Some(5000.0),
                confidence: if m == Method::Native { 1.0 } else { 0.5 },
                evidence: vec![],
                crowd_validated: false,
                image_tags: vec![],
            },
        };
        StoredItem::new(post, geo, 0)
    }

    #[test]
    fn insert_query_upsert() {
        let dir = tempfile::tempdir().unwrap();
        let (store, report) = Store::create(dir.path().join("s")).unwrap();
        assert_eq!(report, LoadReport::default());
        store.insert(item(1, 10, Method::CimeLocal, Some((50.0, -3.0)))).unwrap();
        store.insert(item(2, 20, Method::Unresolved, None)).unwrap();
        let all = store.query(&QueryFilter::default()).unwrap();
        assert_eq!(all.iter().map(|i| i.post.post_id).collect::<Vec<_>>(), vec![2, 1]);

        let world = QueryFilter {
            bbox: Some(BBox::WORLD),
            ..QueryFilter::default()
        };
        assert_eq!(store.query(&world).unwrap().len(), 1);
        let window = QueryFilter {
            time_from: Some(15),
            time_to: Some(25),
            ..QueryFilter::default()
        };
        assert_eq!(store.query(&window).unwrap()[0].post.post_id, 2);

        store.set_validated(1, true).unwrap().unwrap();
        assert_eq!(store.len(), 2);
        assert!(store.get(1).unwrap().geo.crowd_validated);
        assert!(store.set_validated(99, true).unwrap().is_none());

        drop(store);
        let (store, report) = Store::open(dir.path().join("s")).unwrap();
        assert_eq!(report.records, 3);
        assert_eq!(store.len(), 2);
        assert!(store.get(1).unwrap().geo.crowd_validated);
    }

    #[test]
    fn filter_errors_and_missing_dir() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open(dir.path()).unwrap();
        let inverted = QueryFilter {
            time_from: Some(5),
            time_to: Some(4),
            ..QueryFilter::default()
        };
        assert!(matches!(store.query(&inverted), Err(StoreError::Filter(_))));
        let bad_box = QueryFilter {
            bbox: Some(BBox {
                min_lon: 1.0,
                min_lat: 0.0,
                max_lon: 0.0,
                max_lat: 1.0,
            }),
            ..QueryFilter::default()
        };
        assert!(store.query(&bad_box).is_err());
        assert!(matches!(Store::open(dir.path().join("nope")), Err(StoreError::MissingDir(_))));
        let mut bad = item(3, 1, Method::CimeLocal, Some((0.0, 0.0)));
        bad.geo.post_id = 4;
        assert!(matches!(store.insert(bad), Err(StoreError::Mismatch { .. })));
        assert!(store.is_empty());
    }

    #[test]
    fn torn_tail_truncated_and_mid_corruption_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open(dir.path()).unwrap();
        for i in 1..=5 {
            store.insert(item(i, i as i64, Method::CimeGlobal, Some((1.0, 1.0)))).unwrap();
        }
        drop(store);
        let log = dir.path().join(LOG_FILE);
        let mut bytes = fs::read(&log).unwrap();
        let full = bytes.len();
        bytes.truncate(full - 20);
        fs::write(&log, &bytes).unwrap();
        let (store, report) = Store::open(dir.path()).unwrap();
        assert_eq!(store.len(), 4);
        assert_eq!(report.warnings.len(), 1);
        store.insert(item(6, 6, Method::Native, Some((2.0, 2.0)))).unwrap();
        drop(store);
        let (store, report) = Store::open(dir.path()).unwrap();
        assert_eq!(store.len(), 5);
        assert!(report.warnings.is_empty());
        drop(store);

        let text = fs::read_to_string(&log).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{garbage";
        fs::write(&log, lines.join("\n") + "\n").unwrap();
        assert!(matches!(Store::open(dir.path()), Err(StoreError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn unterminated_but_complete_record_is_kept() {
        let dir = tempfile::tempdir().unwrap();
        let rec = serde_json::to_string(&item(1, 1, Method::Native, Some((0.0, 0.0)))).unwrap();
        fs::write(dir.path().join(LOG_FILE), rec).unwrap();
        let (store, report) = Store::open(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        store.insert(item(2, 2, Method::Native, Some((0.0, 0.0)))).unwrap();
        drop(store);
        let (store, _) = Store::open(dir.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open(dir.path()).unwrap();
        for i in 0..20u64 {
            store.insert(item(i, 100 - i as i64, Method::CimeLocal, Some((i as f64, 0.0)))).unwrap();
        }
        store.set_validated(3, true).unwrap();
        let snap = dir.path().join("snap.log");
        store.snapshot(&snap).unwrap();
        let (copy, report) = Store::load(&snap).unwrap();
        assert_eq!(report.records, 20);
        let f = QueryFilter {
            bbox: Some(BBox::new(-1.0, 2.0, 1.0, 9.0).unwrap()),
            limit: Some(4),
            ..QueryFilter::default()
        };
        assert_eq!(store.query(&f).unwrap(), copy.query(&f).unwrap());
        assert_eq!(store.all(), copy.all());
    }
}
