//! Seeded synthetic event streams with ground truth.
//!
//! Each post names the place it is about. Truth points scatter around the
//! place centroid, a fixed share of posts carries a platform geotag, and
//! relations preferentially join posts whose truths are close together.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gazetteer::{normalize_name, Gazetteer, PlaceClass, PrecisionRadii};
use crate::geo::{destination, LatLon};
use crate::geocode::ToponymExtractor;
use crate::ingest::{parse_timestamp, MediaItem, MediaKind, Post, Source};
use crate::kv::{KvError, KvMap};

/// Largest distance between a geotag and the truth it was drawn from.
pub const GEOTAG_NOISE_M: f64 = 30.0;
/// Truth points fall within this share of the place's class radius.
pub const TRUTH_SPREAD: f64 = 0.3;
/// Share of relations drawn by distance rather than uniformly.
const LOCAL_LINK_SHARE: f64 = 0.8;
/// Mean link reach as a share of the event radius.
const LINK_SCALE_SHARE: f64 = 0.25;
const FIRST_POST_ID: u64 = 100_001;

const TEXTS: &[&str] = &[
    "Water rising fast in {}",
    "{} is completely cut off right now",
    "Roads closed around {} tonight, avoid the area",
    "Anyone have news from {}? Family there not answering",
    "Emergency crews arriving in {} now",
    "Power out across {} since this morning",
    "Huge damage in {}, stay safe everyone",
    "Volunteers needed in {} to help clear debris",
    "Just got out of {}, it is bad",
    "Shelter open for people from {}",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] KvError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("no usable {0} place names within the event radius")]
    NoPlaces(&'static str),
    #[error("truth file: {0}")]
    Truth(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    Flood,
    Earthquake,
    Storm,
}

impl Template {
    pub const ALL: [Template; 3] = [Self::Flood, Self::Earthquake, Self::Storm];

    pub fn preset(self) -> ScenarioConfig {
        let base = ScenarioConfig {
            seed: 0,
            n_posts: 1000,
            event_center: LatLon::new(0.0, 0.0),
            event_radius_m: 40_000.0,
            geotag_rate: 0.03,
            ambiguity_rate: 0.3,
            relation_density: 2.0,
            time_span_s: 172_800,
            start: 0,
            media_rate: 0.15,
        };
        match self {
            // south Devon coast, February 2014
            Template::Flood => ScenarioConfig {
                seed: 2014,
                event_center: LatLon::new(50.62, -3.47),
                start: 1_391_558_400,
                ..base
            },
            // Amatrice, August 2016
            Template::Earthquake => ScenarioConfig {
                seed: 2016,
                event_center: LatLon::new(42.6286, 13.292),
                time_span_s: 86_400,
                start: 1_472_002_592,
                ..base
            },
            // Texas Gulf coast, August 2017
            Template::Storm => ScenarioConfig {
                seed: 2017,
                event_center: LatLon::new(29.0, -96.3),
                event_radius_m: 250_000.0,
                time_span_s: 345_600,
                start: 1_503_619_200,
                ..base
            },
        }
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flood" => Ok(Template::Flood),
            "earthquake" => Ok(Template::Earthquake),
            "storm" => Ok(Template::Storm),
            other => Err(format!("unknown template `{other}` (flood, earthquake, storm)")),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Flood => "flood",
            Template::Earthquake => "earthquake",
            Template::Storm => "storm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_posts: usize,
    pub event_center: LatLon,
    pub event_radius_m: f64,
    /// Share of posts with a platform geotag.
    pub geotag_rate: f64,
    /// Chance that a post names a place sharing its name with other places.
    pub ambiguity_rate: f64,
    /// Relations generated per post; each joins two posts.
    pub relation_density: f64,
    pub time_span_s: i64,
    /// Epoch seconds of the first possible post.
    pub start: i64,
    pub media_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Template::Flood.preset()
    }
}

const KEYS: &[&str] = &[
    "template",
    "seed",
    "n_posts",
    "event_center",
    "event_radius_m",
    "geotag_rate",
    "ambiguity_rate",
    "relation_density",
    "time_span_s",
    "start",
    "media_rate",
];

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_posts == 0 {
            return Err("n_posts must be at least 1".into());
        }
        for (name, v) in [
            ("geotag_rate", self.geotag_rate),
            ("ambiguity_rate", self.ambiguity_rate),
            ("media_rate", self.media_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.relation_density.is_finite() && self.relation_density >= 0.0) {
            return Err("relation_density must be non-negative".into());
        }
        if !(self.event_radius_m.is_finite() && self.event_radius_m > 0.0) {
            return Err("event_radius_m must be positive".into());
        }
        if !self.event_center.is_valid() {
            return Err("event_center out of range".into());
        }
        if self.time_span_s < 0 {
            return Err("time_span_s must be non-negative".into());
        }
        if self.start <= 0 {
            return Err("start must be a positive epoch".into());
        }
        Ok(())
    }

    /// `template` (default flood) picks the preset; other keys override it.
    pub fn from_kv(kv: &KvMap) -> Result<Self, ScenarioError> {
        kv.restrict(KEYS)?;
        let template: Template = kv.with("template", |v| v.parse())?.unwrap_or(Template::Flood);
        let mut c = template.preset();
        kv.set("seed", &mut c.seed)?;
        kv.set("n_posts", &mut c.n_posts)?;
        if let Some(center) = kv.with("event_center", parse_center)? {
            c.event_center = center;
        }
        kv.set("event_radius_m", &mut c.event_radius_m)?;
        kv.set("geotag_rate", &mut c.geotag_rate)?;
        kv.set("ambiguity_rate", &mut c.ambiguity_rate)?;
        kv.set("relation_density", &mut c.relation_density)?;
        kv.set("time_span_s", &mut c.time_span_s)?;
        if let Some(start) = kv.with("start", parse_timestamp)? {
            c.start = start;
        }
        kv.set("media_rate", &mut c.media_rate)?;
        c.validate().map_err(ScenarioError::Invalid)?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_kv(&KvMap::read(path)?)
    }
}

fn parse_center(v: &str) -> Result<LatLon, String> {
    let (lat, lon) = v.split_once(',').ok_or("expected `lat,lon`")?;
    let lat: f64 = lat.trim().parse().map_err(|_| format!("bad latitude `{lat}`"))?;
    let lon: f64 = lon.trim().parse().map_err(|_| format!("bad longitude `{lon}`"))?;
    LatLon::checked(lat, lon).map_err(|e| e.to_string())
}

/// Ground truth for one generated post.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub post_id: u64,
    pub lat: f64,
    pub lon: f64,
    pub place_id: Option<u64>,
}

impl TruthRecord {
    pub fn point(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

pub fn write_truth(w: impl Write, truth: &[TruthRecord]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for t in truth {
        out.serialize(t)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_truth(r: impl Read) -> Result<Vec<TruthRecord>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub posts: Vec<Post>,
    pub truth: Vec<TruthRecord>,
    /// Posts whose named place shares its name with other places.
    pub ambiguous: BTreeSet<u64>,
}

impl Scenario {
    pub fn write_posts(&self, w: impl Write) -> io::Result<()> {
        crate::ingest::write_posts(w, &self.posts)
    }

    pub fn write_truth(&self, w: impl Write) -> Result<(), csv::Error> {
        write_truth(w, &self.truth)
    }
}

struct PoolEntry {
    place_id: u64,
    name: String,
    centroid: LatLon,
    class: PlaceClass,
}

/// Splits the non-region places inside the event radius by whether their
/// canonical name resolves to one place or several. A place is only kept if
/// every text template yields exactly one mention of it.
fn build_pools(g: &Gazetteer, cfg: &ScenarioConfig) -> (Vec<PoolEntry>, Vec<PoolEntry>) {
    let extractor = ToponymExtractor::new(g);
    let mut unique = Vec::new();
    let mut ambiguous = Vec::new();
    let mut places: Vec<_> = g
        .places_within(cfg.event_center, cfg.event_radius_m)
        .into_iter()
        .map(|(p, _)| p)
        .filter(|p| p.place_class != PlaceClass::Region)
        .collect();
    places.sort_by_key(|p| p.place_id);
    for p in places {
        let mut ids = g.ids_for_normalized(&normalize_name(&p.canonical_name)).to_vec();
        ids.sort_unstable();
        let clean = TEXTS.iter().all(|t| {
            let probe = probe_post(&t.replace("{}", &p.canonical_name));
            let found = extractor.extract(&probe);
            found.len() == 1 && {
                let mut c = found[0].candidates.clone();
                c.sort_unstable();
                c == ids
            }
        });
        if !clean {
            continue;
        }
        let entry = PoolEntry {
            place_id: p.place_id,
            name: p.canonical_name.clone(),
            centroid: p.centroid,
            class: p.place_class,
        };
        if ids.len() == 1 {
            unique.push(entry);
        } else {
            ambiguous.push(entry);
        }
    }
    (unique, ambiguous)
}

fn probe_post(text: &str) -> Post {
    Post {
        post_id: 0,
        source: Source::Twitter,
        author_id: String::new(),
        created_at: 1,
        text: text.to_string(),
        hashtags: vec![],
        mentions: vec![],
        retweet_of: None,
        reply_to: None,
        native_geotag: None,
        links: vec![],
        media: vec![],
    }
}

fn scatter(rng: &mut ChaCha8Rng, center: LatLon, max_m: f64) -> LatLon {
    let bearing = rng.gen_range(0.0..TAU);
    let dist = max_m * rng.gen::<f64>().sqrt();
    destination(center, bearing, dist)
}

fn pick_source(rng: &mut ChaCha8Rng) -> Source {
    match rng.gen_range(0..10) {
        0..=6 => Source::Twitter,
        7 => Source::Instagram,
        8 => Source::Flickr,
        _ => Source::Youtube,
    }
}

/// Generates a scenario; identical config and gazetteer give identical output.
pub fn simulate(cfg: &ScenarioConfig, g: &Gazetteer) -> Result<Scenario, ScenarioError> {
    cfg.validate().map_err(ScenarioError::Invalid)?;
    let (unique, ambiguous) = build_pools(g, cfg);
    if unique.is_empty() {
        return Err(ScenarioError::NoPlaces("unambiguous"));
    }
    if ambiguous.is_empty() && cfg.ambiguity_rate > 0.0 {
        return Err(ScenarioError::NoPlaces("ambiguous"));
    }
    let radii = PrecisionRadii::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_posts;

    let mut times: Vec<i64> = (0..n).map(|_| cfg.start + rng.gen_range(0..=cfg.time_span_s)).collect();
    times.sort_unstable();

    let mut posts = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut ambiguous_ids = BTreeSet::new();
    for (i, &created_at) in times.iter().enumerate() {
        let id = FIRST_POST_ID + i as u64;
        let is_ambiguous = rng.gen_bool(cfg.ambiguity_rate);
        let pool = if is_ambiguous { &ambiguous } else { &unique };
        let place = &pool[rng.gen_range(0..pool.len())];
        let point = scatter(&mut rng, place.centroid, TRUTH_SPREAD * radii.radius_m(place.class));
        let text = TEXTS[rng.gen_range(0..TEXTS.len())].replace("{}", &place.name);
        let source = pick_source(&mut rng);
        let media = if rng.gen_bool(cfg.media_rate) {
            let kind = if source == Source::Youtube {
                MediaKind::Video
            } else {
                MediaKind::Image
            };
            let ext = if kind == MediaKind::Video { "mp4" } else { "jpg" };
            vec![MediaItem::embedded(
                format!("https://media.example.org/{}/{id}.{ext}", source.as_str()),
                kind,
            )]
        } else {
            vec![]
        };
        if is_ambiguous {
            ambiguous_ids.insert(id);
        }
        truth.push(TruthRecord {
            post_id: id,
            lat: point.lat,
            lon: point.lon,
            place_id: Some(place.place_id),
        });
        posts.push(Post {
            post_id: id,
            source,
            author_id: format!("u{id}"),
            created_at,
            text,
            hashtags: vec![],
            mentions: vec![],
            retweet_of: None,
            reply_to: None,
            native_geotag: None,
            links: vec![],
            media,
        });
    }

    let n_geotagged = (cfg.geotag_rate * n as f64).round() as usize;
    let mut tagged = index::sample(&mut rng, n, n_geotagged).into_vec();
    tagged.sort_unstable();
    for i in tagged {
        posts[i].native_geotag = Some(scatter(&mut rng, truth[i].point(), GEOTAG_NOISE_M));
    }

    add_relations(&mut rng, cfg, &mut posts, &truth);
    Ok(Scenario {
        posts,
        truth,
        ambiguous: ambiguous_ids,
    })
}

fn add_relations(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, posts: &mut [Post], truth: &[TruthRecord]) {
    let n = posts.len();
    if n < 2 {
        return;
    }
    let tree = RTree::bulk_load(
        truth
            .iter()
            .enumerate()
            .map(|(i, t)| GeomWithData::new([t.lon, t.lat], i))
            .collect(),
    );
    let link_scale_m = LINK_SCALE_SHARE * cfg.event_radius_m;
    let n_edges = (cfg.relation_density * n as f64).round() as usize;
    for e in 0..n_edges {
        let a = rng.gen_range(0..n);
        let b = if rng.gen_bool(LOCAL_LINK_SHARE) {
            // the post nearest to a point an exponential distance away
            let reach = -link_scale_m * (1.0 - rng.gen::<f64>()).ln();
            let aim = destination(truth[a].point(), rng.gen_range(0.0..TAU), reach);
            tree.nearest_neighbor_iter(&[aim.lon, aim.lat])
                .map(|g| g.data)
                .find(|&j| j != a)
                .expect("at least two posts")
        } else {
            let j = rng.gen_range(0..n - 1);
            if j >= a {
                j + 1
            } else {
                j
            }
        };
        // later post points at the earlier one
        let (early, late) = (a.min(b), a.max(b));
        let early_id = posts[early].post_id;
        let roll: f64 = rng.gen();
        if roll < 0.3 && posts[late].retweet_of.is_none() {
            posts[late].retweet_of = Some(early_id);
        } else if roll < 0.5 && posts[late].reply_to.is_none() {
            posts[late].reply_to = Some(early_id);
        } else if roll < 0.7 {
            let author = posts[early].author_id.clone();
            let p = &mut posts[late];
            p.text.push_str(&format!(" @{author}"));
            if !p.mentions.contains(&author) {
                p.mentions.push(author);
            }
        } else {
            let tag = format!("thread{e}");
            for i in [a, b] {
                posts[i].text.push_str(&format!(" #{tag}"));
                posts[i].hashtags.push(tag.clone());
            }
        }
    }
}
