//! Place directory loaded from a flat extract, with a normalized name index
//! and a centroid R-tree.
//!
//! The extract is a tab-separated file with a header row:
//!
//! ```text
//! place_id  canonical_name  alt_names  class  lat  lon  min_lon  min_lat  max_lon  max_lat  admin_parents  importance
//! ```
//!
//! `alt_names` and `admin_parents` are `;`-separated and may be empty; an
//! empty `importance` defaults to 0.5.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rstar::primitives::GeomWithData;
use rstar::{RTree, AABB};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub use crate::geo::{haversine_m, BBox, GeoError, LatLon};

pub const DEFAULT_IMPORTANCE: f64 = 0.5;

const TSV_FIELDS: [&str; 12] = [
    "place_id",
    "canonical_name",
    "alt_names",
    "class",
    "lat",
    "lon",
    "min_lon",
    "min_lat",
    "max_lon",
    "max_lat",
    "admin_parents",
    "importance",
];

const INDEX_FORMAT: &str = "rapidmap-gazetteer";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: duplicate place_id {id}")]
    DuplicateId { line: usize, id: u64 },
    #[error("place {0}: admin_parents form a cycle")]
    Cycle(u64),
    #[error("place {id}: {message}")]
    InvalidPlace { id: u64, message: String },
    #[error("index file: {0}")]
    Index(String),
}

/// Granularity of a location, finest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceClass {
    Poi,
    Street,
    Locality,
    Region,
}

impl PlaceClass {
    pub const ALL: [PlaceClass; 4] = [Self::Poi, Self::Street, Self::Locality, Self::Region];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Poi => "poi",
            Self::Street => "street",
            Self::Locality => "locality",
            Self::Region => "region",
        }
    }

    /// True when `self` is at least as fine as `other`.
    pub fn at_least_as_fine_as(self, other: PlaceClass) -> bool {
        self <= other
    }
}

impl fmt::Display for PlaceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlaceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poi" => Ok(Self::Poi),
            "street" => Ok(Self::Street),
            "locality" => Ok(Self::Locality),
            "region" => Ok(Self::Region),
            other => Err(format!("unknown place class `{other}`")),
        }
    }
}

/// Representative radius per precision class, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRadii {
    pub poi: f64,
    pub street: f64,
    pub locality: f64,
    pub region: f64,
}

impl Default for PrecisionRadii {
    fn default() -> Self {
        Self {
            poi: 100.0,
            street: 500.0,
            locality: 5_000.0,
            region: 50_000.0,
        }
    }
}

impl PrecisionRadii {
    pub fn radius_m(&self, class: PlaceClass) -> f64 {
        match class {
            PlaceClass::Poi => self.poi,
            PlaceClass::Street => self.street,
            PlaceClass::Locality => self.locality,
            PlaceClass::Region => self.region,
        }
    }

    /// Radii must strictly increase from poi to region.
    pub fn validate(&self) -> Result<(), String> {
        let r = [self.poi, self.street, self.locality, self.region];
        if r[0] <= 0.0 || !r.windows(2).all(|w| w[0] < w[1]) {
            return Err(format!("precision radii must be positive and strictly increasing, got {r:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub place_id: u64,
    pub canonical_name: String,
    #[serde(default)]
    pub alt_names: Vec<String>,
    pub place_class: PlaceClass,
    pub centroid: LatLon,
    pub bbox: BBox,
    /// Innermost first.
    #[serde(default)]
    pub admin_parents: Vec<u64>,
    pub importance: f64,
}

impl Place {
    fn check(&self) -> Result<(), String> {
        if !self.centroid.is_valid() {
            return Err(format!(
                "centroid ({}, {}) out of range",
                self.centroid.lat, self.centroid.lon
            ));
        }
        let b = &self.bbox;
        for (lat, lon) in [(b.min_lat, b.min_lon), (b.max_lat, b.max_lon)] {
            LatLon::checked(lat, lon).map_err(|e| format!("bbox corner: {e}"))?;
        }
        b.validate().map_err(|e| e.to_string())?;
        if !b.contains(self.centroid) {
            return Err("bbox does not contain centroid".into());
        }
        if !(0.0..=1.0).contains(&self.importance) {
            return Err(format!("importance {} outside [0, 1]", self.importance));
        }
        if self.admin_parents.contains(&self.place_id) {
            return Err("admin_parents contains the place itself".into());
        }
        if normalize_name(&self.canonical_name).is_empty() {
            return Err("canonical_name is empty after normalization".into());
        }
        Ok(())
    }

    /// Canonical and alternative names, normalized and deduplicated.
    pub fn normalized_names(&self) -> Vec<String> {
        let mut out: Vec<String> = std::iter::once(&self.canonical_name)
            .chain(self.alt_names.iter())
            .map(|n| normalize_name(n))
            .filter(|n| !n.is_empty())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Lowercases, folds accents to base letters, turns punctuation into spaces
/// and collapses whitespace.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.nfkd().filter(|c| !is_combining_mark(*c)) {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

type IndexedPoint = GeomWithData<[f64; 2], u64>;

/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    places: BTreeMap<u64, Place>,
    name_index: BTreeMap<String, Vec<u64>>,
    spatial: RTree<IndexedPoint>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    places: Vec<Place>,
}

impl Gazetteer {
    pub fn empty() -> Self {
        Self {
            places: BTreeMap::new(),
            name_index: BTreeMap::new(),
            spatial: RTree::new(),
        }
    }

    /// Builds the indexes over an already-parsed place list.
    pub fn from_places(places: impl IntoIterator<Item = Place>) -> Result<Self, GazetteerError> {
        let mut by_id = BTreeMap::new();
        for (i, p) in places.into_iter().enumerate() {
            p.check().map_err(|message| GazetteerError::InvalidPlace {
                id: p.place_id,
                message,
            })?;
            let id = p.place_id;
            if by_id.insert(id, p).is_some() {
                return Err(GazetteerError::DuplicateId { line: i + 1, id });
            }
        }
        Self::build(by_id)
    }

    fn build(places: BTreeMap<u64, Place>) -> Result<Self, GazetteerError> {
        check_acyclic(&places)?;
        let mut name_index: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for p in places.values() {
            for n in p.normalized_names() {
                name_index.entry(n).or_default().push(p.place_id);
            }
        }
        // places iterate in id order, so every posting list is already sorted
        let points = places
            .values()
            .map(|p| GeomWithData::new([p.centroid.lon, p.centroid.lat], p.place_id))
            .collect();
        Ok(Self {
            places,
            name_index,
            spatial: RTree::bulk_load(points),
        })
    }

    /// Loads the tab-separated extract.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self, GazetteerError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| GazetteerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_tsv(BufReader::new(file)).map_err(|e| match e {
            GazetteerError::Io { source, .. } => GazetteerError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn read_tsv(reader: impl BufRead) -> Result<Self, GazetteerError> {
        let mut places = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| GazetteerError::Io {
                path: PathBuf::new(),
                source,
            })?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line_no == 1 {
                if !line.starts_with("place_id") {
                    return Err(GazetteerError::Malformed {
                        line: 1,
                        field: "header",
                        message: "expected header row starting with `place_id`".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let place = parse_row(line, line_no)?;
            if places.contains_key(&place.place_id) {
                return Err(GazetteerError::DuplicateId {
                    line: line_no,
                    id: place.place_id,
                });
            }
            places.insert(place.place_id, place);
        }
        Self::build(places)
    }

    /// Reads either a compiled index (JSON) or a raw TSV extract.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GazetteerError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| GazetteerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
        if first == Some(&b'{') {
            let idx: IndexFile =
                serde_json::from_slice(&bytes).map_err(|e| GazetteerError::Index(e.to_string()))?;
            if idx.format != INDEX_FORMAT || idx.version != INDEX_VERSION {
                return Err(GazetteerError::Index(format!(
                    "unsupported index {} v{}",
                    idx.format, idx.version
                )));
            }
            Self::from_places(idx.places)
        } else {
            Self::read_tsv(io::Cursor::new(bytes)).map_err(|e| match e {
                GazetteerError::Io { source, .. } => GazetteerError::Io {
                    path: path.to_path_buf(),
                    source,
                },
                other => other,
            })
        }
    }

    /// Writes the compiled index. Output is deterministic for a given gazetteer.
    pub fn write_index(&self, mut w: impl Write) -> io::Result<()> {
        let idx = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            places: self.places.values().cloned().collect(),
        };
        serde_json::to_writer(&mut w, &idx)?;
        w.write_all(b"\n")
    }

    pub fn len(&self) -> usize {
        self.places.len()
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Place> {
        self.places.get(&id)
    }

    /// Places in ascending id order.
    pub fn places(&self) -> impl Iterator<Item = &Place> {
        self.places.values()
    }

    /// Ids registered under an already-normalized name, ascending.
    pub fn ids_for_normalized(&self, normalized: &str) -> &[u64] {
        self.name_index.get(normalized).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains_name(&self, normalized: &str) -> bool {
        self.name_index.contains_key(normalized)
    }

    pub fn name_index(&self) -> &BTreeMap<String, Vec<u64>> {
        &self.name_index
    }

    /// All places whose canonical or alternative name normalizes to the same
    /// string as `name`, ordered by importance (descending) then id.
    pub fn lookup_name(&self, name: &str) -> Vec<&Place> {
        let mut out: Vec<&Place> = self
            .ids_for_normalized(&normalize_name(name))
            .iter()
            .filter_map(|id| self.places.get(id))
            .collect();
        out.sort_by(|a, b| {
            b.importance
                .total_cmp(&a.importance)
                .then(a.place_id.cmp(&b.place_id))
        });
        out
    }

    /// Places whose centroid lies inside `bbox`, edges inclusive, ascending id.
    pub fn places_in_bbox(&self, bbox: &BBox) -> Result<Vec<&Place>, GeoError> {
        bbox.validate()?;
        let env = AABB::from_corners([bbox.min_lon, bbox.min_lat], [bbox.max_lon, bbox.max_lat]);
        let mut ids: Vec<u64> = self
            .spatial
            .locate_in_envelope(&env)
            .map(|g| g.data)
            .collect();
        ids.sort_unstable();
        Ok(ids.iter().filter_map(|id| self.places.get(id)).collect())
    }

    /// Places within `radius_m` of `center`, nearest first (ties by id).
    pub fn places_within(&self, center: LatLon, radius_m: f64) -> Vec<(&Place, f64)> {
        let dlat = (radius_m / crate::geo::EARTH_RADIUS_M).to_degrees();
        let min_lat = (center.lat - dlat).max(-90.0);
        let max_lat = (center.lat + dlat).min(90.0);
        let cos = min_lat.to_radians().cos().min(max_lat.to_radians().cos());
        let (min_lon, max_lon) = if cos <= 1e-9 || dlat / cos >= 180.0 {
            (-180.0, 180.0)
        } else {
            let dlon = dlat / cos;
            if center.lon - dlon < -180.0 || center.lon + dlon > 180.0 {
                (-180.0, 180.0)
            } else {
                (center.lon - dlon, center.lon + dlon)
            }
        };
        let env = AABB::from_corners([min_lon, min_lat], [max_lon, max_lat]);
        let mut out: Vec<(&Place, f64)> = self
            .spatial
            .locate_in_envelope(&env)
            .filter_map(|g| self.places.get(&g.data))
            .map(|p| (p, haversine_m(center, p.centroid)))
            .filter(|(_, d)| *d <= radius_m)
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.place_id.cmp(&b.0.place_id)));
        out
    }

    /// Nearest place by great-circle distance to its centroid.
    pub fn nearest(&self, point: LatLon) -> Option<(&Place, f64)> {
        let mut radius = 1_000.0;
        loop {
            if let Some(hit) = self.places_within(point, radius).into_iter().next() {
                return Some(hit);
            }
            if radius > 2.1e7 {
                return None;
            }
            radius *= 4.0;
        }
    }
}

fn parse_row(line: &str, line_no: usize) -> Result<Place, GazetteerError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != TSV_FIELDS.len() {
        return Err(GazetteerError::Malformed {
            line: line_no,
            field: "row",
            message: format!("expected {} tab-separated fields, found {}", TSV_FIELDS.len(), cols.len()),
        });
    }
    let bad = |idx: usize, message: String| GazetteerError::Malformed {
        line: line_no,
        field: TSV_FIELDS[idx],
        message,
    };
    let num = |idx: usize| -> Result<f64, GazetteerError> {
        let v: f64 = cols[idx]
            .trim()
            .parse()
            .map_err(|_| bad(idx, format!("not a number: `{}`", cols[idx])))?;
        if !v.is_finite() {
            return Err(bad(idx, format!("not finite: `{}`", cols[idx])));
        }
        Ok(v)
    };
    let lat_range = |idx: usize, v: f64| {
        if (-90.0..=90.0).contains(&v) {
            Ok(v)
        } else {
            Err(bad(idx, format!("latitude {v} outside [-90, 90]")))
        }
    };
    let lon_range = |idx: usize, v: f64| {
        if (-180.0..=180.0).contains(&v) {
            Ok(v)
        } else {
            Err(bad(idx, format!("longitude {v} outside [-180, 180]")))
        }
    };

    let place_id: u64 = cols[0]
        .trim()
        .parse()
        .map_err(|_| bad(0, format!("not an unsigned integer: `{}`", cols[0])))?;
    let canonical_name = cols[1].trim().to_string();
    if normalize_name(&canonical_name).is_empty() {
        return Err(bad(1, "empty name".into()));
    }
    let alt_names = split_list(cols[2]).map(str::to_string).collect();
    let place_class = cols[3].parse().map_err(|e| bad(3, e))?;
    let lat = lat_range(4, num(4)?)?;
    let lon = lon_range(5, num(5)?)?;
    let min_lon = lon_range(6, num(6)?)?;
    let min_lat = lat_range(7, num(7)?)?;
    let max_lon = lon_range(8, num(8)?)?;
    let max_lat = lat_range(9, num(9)?)?;
    if min_lon > max_lon {
        return Err(bad(6, format!("min_lon {min_lon} > max_lon {max_lon}")));
    }
    if min_lat > max_lat {
        return Err(bad(7, format!("min_lat {min_lat} > max_lat {max_lat}")));
    }
    let bbox = BBox {
        min_lon,
        min_lat,
        max_lon,
        max_lat,
    };
    let centroid = LatLon::new(lat, lon);
    if !bbox.contains(centroid) {
        return Err(bad(4, "bbox does not contain centroid".into()));
    }
    let admin_parents = split_list(cols[10])
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| bad(10, format!("not an unsigned integer: `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if admin_parents.contains(&place_id) {
        return Err(bad(10, "place lists itself as a parent".into()));
    }
    let importance = if cols[11].trim().is_empty() {
        DEFAULT_IMPORTANCE
    } else {
        let v = num(11)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(bad(11, format!("importance {v} outside [0, 1]")));
        }
        v
    };
    Ok(Place {
        place_id,
        canonical_name,
        alt_names,
        place_class,
        centroid,
        bbox,
        admin_parents,
        importance,
    })
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(';').map(str::trim).filter(|s| !s.is_empty())
}

fn check_acyclic(places: &BTreeMap<u64, Place>) -> Result<(), GazetteerError> {
    // iterative three-colour DFS over parent links; unknown parents are leaves
    let mut done: HashSet<u64> = HashSet::new();
    for &root in places.keys() {
        if done.contains(&root) {
            continue;
        }
        let mut on_path: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(u64, usize)> = vec![(root, 0)];
        on_path.insert(root);
        while let Some((node, next)) = stack.pop() {
            let parents = places.get(&node).map(|p| p.admin_parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                stack.push((node, next + 1));
                let parent = parents[next];
                if on_path.contains(&parent) {
                    return Err(GazetteerError::Cycle(parent));
                }
                if !done.contains(&parent) {
                    on_path.insert(parent);
                    stack.push((parent, 0));
                }
            } else {
                on_path.remove(&node);
                done.insert(node);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "place_id\tcanonical_name\talt_names\tclass\tlat\tlon\tmin_lon\tmin_lat\tmax_lon\tmax_lat\tadmin_parents\timportance\n";

    fn toy() -> String {
        format!(
            "{HEADER}\
1\tDawlish\tDevon seaside town\tlocality\t50.5833\t-3.4656\t-3.50\t50.56\t-3.44\t50.60\t\t0.4\n\
2\tExeter\t\tlocality\t50.7236\t-3.5275\t-3.58\t50.68\t-3.47\t50.76\t\t0.7\n\
3\tExeter\t\tlocality\t42.9814\t-70.9478\t-71.00\t42.94\t-70.90\t43.02\t\t0.3\n"
        )
    }

    fn load(s: &str) -> Result<Gazetteer, GazetteerError> {
        Gazetteer::read_tsv(io::Cursor::new(s.as_bytes().to_vec()))
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_name("São Paulo"), "sao paulo");
        assert_eq!(normalize_name(""), "");
        assert_eq!(normalize_name("Dawlish,  Devon."), "dawlish devon");
        assert_eq!(normalize_name("  Newton-Abbot  "), "newton abbot");
        assert_eq!(normalize_name("MÜNCHEN"), "munchen");
    }

    #[test]
    fn toy_index_matches_hand_built() {
        let g = load(&toy()).unwrap();
        let mut expected: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        expected.insert("dawlish".into(), vec![1]);
        expected.insert("devon seaside town".into(), vec![1]);
        expected.insert("exeter".into(), vec![2, 3]);
        assert_eq!(g.name_index(), &expected);
        let ids: Vec<u64> = g.lookup_name("EXETER").iter().map(|p| p.place_id).collect();
        assert_eq!(ids, vec![2, 3]);
        let ids: Vec<u64> = g.lookup_name("Devon seaside town").iter().map(|p| p.place_id).collect();
        assert_eq!(ids, vec![1]);
        assert!(g.lookup_name("zzzz").is_empty());
    }

    #[test]
    fn lookup_ties_break_on_id() {
        let s = format!(
            "{HEADER}9\tA\t\tpoi\t0\t0\t0\t0\t0\t0\t\t\n4\tA\t\tpoi\t1\t1\t1\t1\t1\t1\t\t\n"
        );
        let g = load(&s).unwrap();
        let ids: Vec<u64> = g.lookup_name("a").iter().map(|p| p.place_id).collect();
        assert_eq!(ids, vec![4, 9]);
        assert_eq!(g.get(9).unwrap().importance, DEFAULT_IMPORTANCE);
    }

    #[test]
    fn header_only_is_empty() {
        let g = load(HEADER).unwrap();
        assert!(g.is_empty());
        assert!(g.lookup_name("exeter").is_empty());
        assert!(g.places_in_bbox(&BBox::WORLD).unwrap().is_empty());
    }

    #[test]
    fn latitude_out_of_range_names_row_and_field() {
        let s = format!("{HEADER}1\tX\t\tpoi\t91\t0\t0\t0\t0\t0\t\t\n");
        match load(&s) {
            Err(GazetteerError::Malformed { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "lat");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_rejected() {
        let dup = format!("{HEADER}1\tA\t\tpoi\t0\t0\t0\t0\t0\t0\t\t\n1\tB\t\tpoi\t0\t0\t0\t0\t0\t0\t\t\n");
        assert!(matches!(load(&dup), Err(GazetteerError::DuplicateId { line: 3, id: 1 })));
        let short = format!("{HEADER}1\tA\tpoi\n");
        assert!(matches!(load(&short), Err(GazetteerError::Malformed { field: "row", .. })));
        let class = format!("{HEADER}1\tA\t\tcity\t0\t0\t0\t0\t0\t0\t\t\n");
        assert!(matches!(load(&class), Err(GazetteerError::Malformed { field: "class", .. })));
        let outside = format!("{HEADER}1\tA\t\tpoi\t5\t5\t0\t0\t1\t1\t\t\n");
        assert!(matches!(load(&outside), Err(GazetteerError::Malformed { .. })));
        let imp = format!("{HEADER}1\tA\t\tpoi\t0\t0\t0\t0\t0\t0\t\t1.5\n");
        assert!(matches!(load(&imp), Err(GazetteerError::Malformed { field: "importance", .. })));
        let own = format!("{HEADER}1\tA\t\tpoi\t0\t0\t0\t0\t0\t0\t1\t\n");
        assert!(matches!(load(&own), Err(GazetteerError::Malformed { field: "admin_parents", .. })));
    }

    #[test]
    fn parent_cycle_rejected() {
        let s = format!(
            "{HEADER}1\tA\t\tpoi\t0\t0\t0\t0\t0\t0\t2\t\n2\tB\t\tregion\t0\t0\t0\t0\t0\t0\t3\t\n3\tC\t\tregion\t0\t0\t0\t0\t0\t0\t1\t\n"
        );
        assert!(matches!(load(&s), Err(GazetteerError::Cycle(_))));
        let ok = format!(
            "{HEADER}1\tA\t\tpoi\t0\t0\t0\t0\t0\t0\t2;3\t\n2\tB\t\tlocality\t0\t0\t0\t0\t0\t0\t3\t\n3\tC\t\tregion\t0\t0\t0\t0\t0\t0\t99\t\n"
        );
        assert!(load(&ok).is_ok());
    }

    #[test]
    fn bbox_queries() {
        let g = load(&toy()).unwrap();
        assert_eq!(g.places_in_bbox(&BBox::WORLD).unwrap().len(), 3);
        let p = g.get(1).unwrap().centroid;
        let point = BBox {
            min_lon: p.lon,
            min_lat: p.lat,
            max_lon: p.lon,
            max_lat: p.lat,
        };
        let hits: Vec<u64> = g.places_in_bbox(&point).unwrap().iter().map(|p| p.place_id).collect();
        assert_eq!(hits, vec![1]);
        let inverted = BBox {
            min_lon: 1.0,
            min_lat: 0.0,
            max_lon: 0.0,
            max_lat: 1.0,
        };
        assert!(g.places_in_bbox(&inverted).is_err());
    }

    #[test]
    fn proximity_queries() {
        let g = load(&toy()).unwrap();
        let near = g.places_within(LatLon::new(50.6, -3.5), 30_000.0);
        let ids: Vec<u64> = near.iter().map(|(p, _)| p.place_id).collect();
        assert_eq!(ids, vec![1, 2]);
        let (p, _) = g.nearest(LatLon::new(43.0, -71.0)).unwrap();
        assert_eq!(p.place_id, 3);
        assert!(Gazetteer::empty().nearest(LatLon::new(0.0, 0.0)).is_none());
    }

    #[test]
    fn index_file_round_trip() {
        let g = load(&toy()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        g.write_index(fs::File::create(&path).unwrap()).unwrap();
        let h = Gazetteer::open(&path).unwrap();
        assert_eq!(g.name_index(), h.name_index());
        assert_eq!(g.places().collect::<Vec<_>>(), h.places().collect::<Vec<_>>());
        let mut a = Vec::new();
        let mut b = Vec::new();
        g.write_index(&mut a).unwrap();
        h.write_index(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
