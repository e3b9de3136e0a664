//! Operator-tunable ordering of geolocated posts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gazetteer::PlaceClass;
use crate::geocode::{Geolocation, Method};
use crate::ingest::Post;

#[derive(Debug, Error, PartialEq)]
#[error("invalid ranking parameters: {0}")]
pub struct RankingError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingParams {
    pub w_precision: f64,
    pub w_confidence: f64,
    pub w_recency: f64,
    pub w_validated: f64,
    pub recency_halflife_s: f64,
}

impl Default for RankingParams {
    fn default() -> Self {
        Self {
            w_precision: 0.4,
            w_confidence: 0.3,
            w_recency: 0.2,
            w_validated: 0.1,
            recency_halflife_s: 21_600.0,
        }
    }
}

impl RankingParams {
    pub fn validate(&self) -> Result<(), RankingError> {
        let w = [self.w_precision, self.w_confidence, self.w_recency, self.w_validated];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RankingError("weights must be finite and non-negative".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(RankingError("at least one weight must be positive".into()));
        }
        if !(self.recency_halflife_s.is_finite() && self.recency_halflife_s > 0.0) {
            return Err(RankingError("recency_halflife_s must be positive".into()));
        }
        Ok(())
    }

    /// Same parameters with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w_precision: self.w_precision * factor,
            w_confidence: self.w_confidence * factor,
            w_recency: self.w_recency * factor,
            w_validated: self.w_validated * factor,
            recency_halflife_s: self.recency_halflife_s,
        }
    }
}

/// Precision term: 1 for native geotags, 0 for unresolved posts, otherwise
/// by precision class.
pub fn precision_value(geo: &Geolocation) -> f64 {
    match geo.method {
        Method::Native => 1.0,
        Method::Unresolved => 0.0,
        Method::CimeLocal | Method::CimeGlobal => match geo.precision_class {
            Some(PlaceClass::Poi) => 1.0,
            Some(PlaceClass::Street) => 0.8,
            Some(PlaceClass::Locality) => 0.5,
            Some(PlaceClass::Region) => 0.2,
            None => 0.0,
        },
    }
}

/// Linear blend of precision, confidence, exponential recency and the crowd
/// validation flag. Posts dated after `now` count as brand new.
pub fn rank_score(geo: &Geolocation, post: &Post, params: &RankingParams, now: i64) -> f64 {
    let age = (now - post.created_at).max(0) as f64;
    let recency = 0.5f64.powf(age / params.recency_halflife_s);
    params.w_precision * precision_value(geo)
        + params.w_confidence * geo.confidence
        + params.w_recency * recency
        + params.w_validated * if geo.crowd_validated { 1.0 } else { 0.0 }
}

/// Sorts by score descending, ties by ascending post id, then truncates to `k`.
pub fn rank_posts<P, G>(items: Vec<(P, G)>, params: &RankingParams, now: i64, k: Option<usize>) -> Vec<(P, G)>
where
    P: AsRef<Post>,
    G: AsRef<Geolocation>,
{
    let mut scored: Vec<(f64, (P, G))> = items
        .into_iter()
        .map(|(p, g)| (rank_score(g.as_ref(), p.as_ref(), params, now), (p, g)))
        .collect();
    scored.sort_by(|(sa, (pa, _)), (sb, (pb, _))| {
        sb.total_cmp(sa).then(pa.as_ref().post_id.cmp(&pb.as_ref().post_id))
    });
    if let Some(k) = k {
        scored.truncate(k);
    }
    scored.into_iter().map(|(_, item)| item).collect()
}

impl AsRef<Post> for Post {
    fn as_ref(&self) -> &Post {
        self
    }
}

impl AsRef<Geolocation> for Geolocation {
    fn as_ref(&self) -> &Geolocation {
        self
    }
}
