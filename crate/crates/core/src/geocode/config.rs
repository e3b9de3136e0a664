use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gazetteer::PrecisionRadii;
use crate::geo::BBox;
use crate::kv::{KvError, KvMap};

/// Tuning for local scoring, context propagation and acceptance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocodeConfig {
    /// Distance scale of the coherence term, meters.
    pub lambda_local_m: f64,
    /// Distance scale of neighbor support, meters.
    pub lambda_global_m: f64,
    /// Share of the combined score taken by neighbor support, in [0, 1).
    pub damping: f64,
    pub iterations: usize,
    pub epsilon: f64,
    /// Minimum combined score for a post to be resolved.
    pub threshold: f64,
    pub w_coherence: f64,
    pub w_area: f64,
    pub w_importance: f64,
    pub w_precision: f64,
    pub event_area: Option<BBox>,
    pub edge_retweet: f64,
    pub edge_reply: f64,
    pub edge_mention: f64,
    /// Per shared hashtag; the summed weight is capped at 1.
    pub edge_hashtag_per_tag: f64,
    pub radii: PrecisionRadii,
}

impl Default for GeocodeConfig {
    fn default() -> Self {
        Self {
            lambda_local_m: 30_000.0,
            lambda_global_m: 50_000.0,
            damping: 0.4,
            iterations: 5,
            epsilon: 1e-6,
            threshold: 0.2,
            w_coherence: 0.4,
            w_area: 0.25,
            w_importance: 0.2,
            w_precision: 0.15,
            event_area: None,
            edge_retweet: 1.0,
            edge_reply: 0.8,
            edge_mention: 0.5,
            edge_hashtag_per_tag: 0.3,
            radii: PrecisionRadii::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "lambda_local_m",
    "lambda_global_m",
    "damping",
    "iterations",
    "epsilon",
    "threshold",
    "w_coherence",
    "w_area",
    "w_importance",
    "w_precision",
    "event_area",
    "edge_retweet",
    "edge_reply",
    "edge_mention",
    "edge_hashtag_per_tag",
    "radius_poi",
    "radius_street",
    "radius_locality",
    "radius_region",
];

impl GeocodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        let weights = [self.w_coherence, self.w_area, self.w_importance, self.w_precision];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("score weights must be non-negative".into());
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("score weights must sum to 1, got {sum}"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(format!("damping must be in [0, 1), got {}", self.damping));
        }
        if self.iterations < 1 {
            return Err("iterations must be at least 1".into());
        }
        if !(self.lambda_local_m > 0.0 && self.lambda_global_m > 0.0) {
            return Err("distance scales must be positive".into());
        }
        if !(self.epsilon >= 0.0) {
            return Err("epsilon must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err("threshold must be in [0, 1]".into());
        }
        for (name, w) in [
            ("edge_retweet", self.edge_retweet),
            ("edge_reply", self.edge_reply),
            ("edge_mention", self.edge_mention),
            ("edge_hashtag_per_tag", self.edge_hashtag_per_tag),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(format!("{name} must be in [0, 1], got {w}"));
            }
        }
        if let Some(b) = &self.event_area {
            b.validate().map_err(|e| e.to_string())?;
        }
        self.radii.validate()
    }

    /// Reads a key=value file; absent keys keep their defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self, KvError> {
        kv.restrict(KEYS)?;
        let mut c = Self::default();
        kv.set("lambda_local_m", &mut c.lambda_local_m)?;
        kv.set("lambda_global_m", &mut c.lambda_global_m)?;
        kv.set("damping", &mut c.damping)?;
        kv.set("iterations", &mut c.iterations)?;
        kv.set("epsilon", &mut c.epsilon)?;
        kv.set("threshold", &mut c.threshold)?;
        kv.set("w_coherence", &mut c.w_coherence)?;
        kv.set("w_area", &mut c.w_area)?;
        kv.set("w_importance", &mut c.w_importance)?;
        kv.set("w_precision", &mut c.w_precision)?;
        c.event_area = kv.with("event_area", |v| {
            if v.is_empty() || v == "none" {
                Ok(None)
            } else {
                BBox::parse(v).map(Some).map_err(|e| e.to_string())
            }
        })?
        .flatten();
        kv.set("edge_retweet", &mut c.edge_retweet)?;
        kv.set("edge_reply", &mut c.edge_reply)?;
        kv.set("edge_mention", &mut c.edge_mention)?;
        kv.set("edge_hashtag_per_tag", &mut c.edge_hashtag_per_tag)?;
        kv.set("radius_poi", &mut c.radii.poi)?;
        kv.set("radius_street", &mut c.radii.street)?;
        kv.set("radius_locality", &mut c.radii.locality)?;
        kv.set("radius_region", &mut c.radii.region)?;
        c.validate().map_err(KvError::Invalid)?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        Self::from_kv(&KvMap::read(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        let area = self
            .event_area
            .map(|b| format!("{},{},{},{}", b.min_lon, b.min_lat, b.max_lon, b.max_lat))
            .unwrap_or_else(|| "none".into());
        format!(
            "lambda_local_m = {}\nlambda_global_m = {}\ndamping = {}\niterations = {}\nepsilon = {}\n\
threshold = {}\nw_coherence = {}\nw_area = {}\nw_importance = {}\nw_precision = {}\nevent_area = {}\n\
edge_retweet = {}\nedge_reply = {}\nedge_mention = {}\nedge_hashtag_per_tag = {}\nradius_poi = {}\n\
radius_street = {}\nradius_locality = {}\nradius_region = {}\n",
            self.lambda_local_m,
            self.lambda_global_m,
            self.damping,
            self.iterations,
            self.epsilon,
            self.threshold,
            self.w_coherence,
            self.w_area,
            self.w_importance,
            self.w_precision,
            area,
            self.edge_retweet,
            self.edge_reply,
            self.edge_mention,
            self.edge_hashtag_per_tag,
            self.radii.poi,
            self.radii.street,
            self.radii.locality,
            self.radii.region,
        )
    }
}
