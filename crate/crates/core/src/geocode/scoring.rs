//! Local candidate scoring and damped max-support propagation over the
//! context graph.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{ContextGraph, GeocodeConfig, ToponymMention};
use crate::gazetteer::{Gazetteer, Place, PlaceClass};
use crate::geo::{haversine_m, LatLon};

/// Per-class precision prior used by local scoring.
pub fn precision_prior(class: PlaceClass) -> f64 {
    match class {
        PlaceClass::Poi => 1.0,
        PlaceClass::Street => 0.85,
        PlaceClass::Locality => 0.6,
        PlaceClass::Region => 0.3,
    }
}

/// The four local terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalScore {
    pub coherence: f64,
    pub area: f64,
    pub importance: f64,
    pub precision: f64,
    pub value: f64,
}

/// Scores `candidate` for `mentions[index]` from evidence inside the post.
///
/// Coherence averages `exp(-d / lambda_local)` to the other mentions of the
/// post that have a single candidate (0.5 when there are none). The area
/// term is 1 inside the configured event area, 0 outside and 0.5 when no
/// area is configured.
pub fn score_local(
    mentions: &[ToponymMention],
    index: usize,
    candidate: &Place,
    gazetteer: &Gazetteer,
    cfg: &GeocodeConfig,
) -> LocalScore {
    let anchors: Vec<&Place> = mentions
        .iter()
        .enumerate()
        .filter(|(i, m)| *i != index && m.candidates.len() == 1)
        .filter_map(|(_, m)| gazetteer.get(m.candidates[0]))
        .collect();
    let coherence = if anchors.is_empty() {
        0.5
    } else {
        anchors
            .iter()
            .map(|a| (-haversine_m(candidate.centroid, a.centroid) / cfg.lambda_local_m).exp())
            .sum::<f64>()
            / anchors.len() as f64
    };
    let area = match &cfg.event_area {
        Some(b) if b.contains(candidate.centroid) => 1.0,
        Some(_) => 0.0,
        None => 0.5,
    };
    let importance = candidate.importance;
    let precision = precision_prior(candidate.place_class);
    let value = cfg.w_coherence * coherence
        + cfg.w_area * area
        + cfg.w_importance * importance
        + cfg.w_precision * precision;
    LocalScore {
        coherence,
        area,
        importance,
        precision,
        value: value.clamp(0.0, 1.0),
    }
}

/// One candidate as seen by the propagation phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateState {
    pub place_id: u64,
    pub point: LatLon,
    pub importance: f64,
    pub local: f64,
}

/// Candidates of one post, grouped by mention. A post with a native geotag
/// acts towards its neighbors as a single candidate at the geotag with a
/// fixed score of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PostState {
    pub post_id: u64,
    pub geotag: Option<LatLon>,
    pub mentions: Vec<Vec<CandidateState>>,
}

/// Scores indexed `[post][mention][candidate]`, parallel to the input states.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub combined: Vec<Vec<Vec<f64>>>,
    pub support: Vec<Vec<Vec<f64>>>,
    pub iterations: usize,
    /// Largest absolute score change of each iteration run.
    pub max_changes: Vec<f64>,
}

/// Index of the best candidate: higher score, then higher importance, then smaller id.
pub(crate) fn best_index(cands: &[CandidateState], scores: &[f64]) -> Option<usize> {
    (0..cands.len()).min_by(|&i, &j| {
        scores[j]
            .total_cmp(&scores[i])
            .then(cands[j].importance.total_cmp(&cands[i].importance))
            .then(cands[i].place_id.cmp(&cands[j].place_id))
    })
}

/// Iterates `combined = (1 - damping) * local + damping * support`.
///
/// Support for candidate `c` of post `p` is the maximum, over neighbors `q`,
/// of the edge weight times the best value of
/// `combined(c*) * exp(-d(c, c*) / lambda_global)` where `c*` ranges over the
/// current best candidate of each of `q`'s mentions. Each round reads only the
/// previous round's scores. Stops after `cfg.iterations` rounds or once the
/// largest change falls below `cfg.epsilon`.
pub fn propagate_global(graph: &ContextGraph, posts: &[PostState], cfg: &GeocodeConfig) -> Propagation {
    let position: HashMap<u64, usize> = posts.iter().enumerate().map(|(i, p)| (p.post_id, i)).collect();
    let delta = cfg.damping;
    let local: Vec<Vec<Vec<f64>>> = posts
        .iter()
        .map(|p| p.mentions.iter().map(|m| m.iter().map(|c| c.local).collect()).collect())
        .collect();
    let mut combined = local.clone();
    let mut support: Vec<Vec<Vec<f64>>> = local
        .iter()
        .map(|p| p.iter().map(|m| vec![0.0; m.len()]).collect())
        .collect();
    let neighbors: Vec<Vec<(usize, f64)>> = posts
        .iter()
        .map(|p| {
            graph
                .neighbors(p.post_id)
                .iter()
                .filter_map(|&(q, w)| position.get(&q).map(|&i| (i, w)))
                .collect()
        })
        .collect();

    let mut max_changes = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.iterations {
        iterations += 1;
        // what each post offers to its neighbors this round
        let offers: Vec<Vec<(LatLon, f64)>> = posts
            .iter()
            .zip(&combined)
            .map(|(p, scores)| match p.geotag {
                Some(g) => vec![(g, 1.0)],
                None => p
                    .mentions
                    .iter()
                    .zip(scores)
                    .filter_map(|(cands, s)| best_index(cands, s).map(|i| (cands[i].point, s[i])))
                    .collect(),
            })
            .collect();

        let next_support: Vec<Vec<Vec<f64>>> = posts
            .par_iter()
            .enumerate()
            .map(|(pi, p)| {
                p.mentions
                    .iter()
                    .map(|cands| {
                        cands
                            .iter()
                            .map(|c| {
                                neighbors[pi]
                                    .iter()
                                    .map(|&(qi, w)| {
                                        offers[qi]
                                            .iter()
                                            .map(|&(pt, s)| {
                                                s * (-haversine_m(c.point, pt) / cfg.lambda_global_m).exp()
                                            })
                                            .fold(0.0, f64::max)
                                            * w
                                    })
                                    .fold(0.0, f64::max)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let mut change: f64 = 0.0;
        for (pi, post_support) in next_support.iter().enumerate() {
            for (mi, ms) in post_support.iter().enumerate() {
                for (ci, &s) in ms.iter().enumerate() {
                    let v = ((1.0 - delta) * local[pi][mi][ci] + delta * s).clamp(0.0, 1.0);
                    change = change.max((v - combined[pi][mi][ci]).abs());
                    combined[pi][mi][ci] = v;
                }
            }
        }
        support = next_support;
        max_changes.push(change);
        if change < cfg.epsilon {
            break;
        }
    }

    Propagation {
        combined,
        support,
        iterations,
        max_changes,
    }
}
