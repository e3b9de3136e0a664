//! Scoring geolocations against ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine_m;
use crate::geocode::{Geolocation, Method};
use crate::ingest::Post;
use crate::ranking::{rank_score, RankingParams};
use crate::scenario::TruthRecord;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("post ids do not line up across inputs: {}", describe(.0))]
    Mismatch(Vec<(u64, &'static str)>),
    #[error("k must be at least 1")]
    ZeroK,
}

fn describe(offenders: &[(u64, &'static str)]) -> String {
    const SHOWN: usize = 20;
    let mut s: Vec<String> = offenders.iter().take(SHOWN).map(|(id, why)| format!("{id} ({why})")).collect();
    if offenders.len() > SHOWN {
        s.push(format!("... {} more", offenders.len() - SHOWN));
    }
    s.join(", ")
}

/// Rates are fractions in [0, 1]. Fields other than `resolution_rate` are
/// absent when no post was resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub resolution_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_radius_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_error_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_at_k: Option<BTreeMap<String, f64>>,
}

/// Every post id must appear exactly once in each input.
fn align<'a>(
    geos: &'a [Geolocation],
    truth: &'a [TruthRecord],
    posts: &'a [Post],
) -> Result<Vec<(&'a Post, &'a Geolocation, &'a TruthRecord)>, EvalError> {
    let mut offenders = Vec::new();
    let mut by_geo: HashMap<u64, &Geolocation> = HashMap::new();
    for g in geos {
        if by_geo.insert(g.post_id, g).is_some() {
            offenders.push((g.post_id, "duplicate geolocation"));
        }
    }
    let mut by_truth: HashMap<u64, &TruthRecord> = HashMap::new();
    for t in truth {
        if by_truth.insert(t.post_id, t).is_some() {
            offenders.push((t.post_id, "duplicate truth"));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(posts.len());
    for p in posts {
        if !seen.insert(p.post_id) {
            offenders.push((p.post_id, "duplicate post"));
            continue;
        }
        match (by_geo.get(&p.post_id), by_truth.get(&p.post_id)) {
            (Some(g), Some(t)) => out.push((p, *g, *t)),
            (None, Some(_)) => offenders.push((p.post_id, "no geolocation")),
            (Some(_), None) => offenders.push((p.post_id, "no truth")),
            (None, None) => offenders.push((p.post_id, "no geolocation or truth")),
        }
    }
    for id in by_geo.keys().filter(|id| !seen.contains(id)) {
        offenders.push((*id, "geolocation without post"));
    }
    for id in by_truth.keys().filter(|id| !seen.contains(id)) {
        offenders.push((*id, "truth without post"));
    }
    if offenders.is_empty() {
        Ok(out)
    } else {
        offenders.sort();
        Err(EvalError::Mismatch(offenders))
    }
}

/// Scores every post.
pub fn evaluate(
    geos: &[Geolocation],
    truth: &[TruthRecord],
    posts: &[Post],
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    evaluate_where(geos, truth, posts, ks, |_| true)
}

/// Scores the posts whose id is in `subset`; ids outside the corpus are ignored.
pub fn evaluate_subset(
    geos: &[Geolocation],
    truth: &[TruthRecord],
    posts: &[Post],
    ks: &[usize],
    subset: &BTreeSet<u64>,
) -> Result<EvalReport, EvalError> {
    evaluate_where(geos, truth, posts, ks, |id| subset.contains(&id))
}

/// Resolution counts posts without a platform geotag. Accuracy and
/// precision@k consider those of them that were resolved; ranking uses the
/// default parameters with the newest post's time as the clock.
fn evaluate_where(
    geos: &[Geolocation],
    truth: &[TruthRecord],
    posts: &[Post],
    ks: &[usize],
    keep: impl Fn(u64) -> bool,
) -> Result<EvalReport, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let rows = align(geos, truth, posts)?;
    let now = posts.iter().map(|p| p.created_at).max().unwrap_or(0);
    let targets: Vec<_> = rows
        .into_iter()
        .filter(|(p, _, _)| p.native_geotag.is_none() && keep(p.post_id))
        .collect();
    let resolved: Vec<_> = targets
        .iter()
        .filter_map(|&(p, g, t)| match (g.method, g.point) {
            (Method::Unresolved, _) | (_, None) => None,
            (_, Some(pt)) => {
                let err = haversine_m(pt, t.point());
                Some((p, g, err, err <= g.radius_m.unwrap_or(0.0)))
            }
        })
        .collect();
    let resolution_rate = if targets.is_empty() {
        0.0
    } else {
        resolved.len() as f64 / targets.len() as f64
    };
    if resolved.is_empty() {
        return Ok(EvalReport {
            resolution_rate,
            within_radius_rate: None,
            median_error_m: None,
            precision_at_k: None,
        });
    }
    let hits = resolved.iter().filter(|r| r.3).count();
    let mut errors: Vec<f64> = resolved.iter().map(|r| r.2).collect();
    errors.sort_by(f64::total_cmp);
    let mid = errors.len() / 2;
    let median = if errors.len() % 2 == 1 {
        errors[mid]
    } else {
        (errors[mid - 1] + errors[mid]) / 2.0
    };

    let params = RankingParams::default();
    let mut ranked: Vec<(f64, u64, bool)> = resolved
        .iter()
        .map(|&(p, g, _, hit)| (rank_score(g, p, &params, now), p.post_id, hit))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let precision_at_k = ks
        .iter()
        .map(|&k| {
            let top = &ranked[..k.min(ranked.len())];
            (k.to_string(), top.iter().filter(|r| r.2).count() as f64 / top.len() as f64)
        })
        .collect();

    Ok(EvalReport {
        resolution_rate,
        within_radius_rate: Some(hits as f64 / resolved.len() as f64),
        median_error_m: Some(median),
        precision_at_k: Some(precision_at_k),
    })
}
