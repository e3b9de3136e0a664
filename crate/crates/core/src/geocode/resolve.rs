use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scoring::{propagate_global, score_local, CandidateState, LocalScore, PostState};
use super::{build_context_graph, ContextGraph, GeocodeConfig, ToponymExtractor, ToponymMention};
use crate::gazetteer::{Gazetteer, PlaceClass};
use crate::geo::LatLon;
use crate::ingest::Post;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Native,
    CimeLocal,
    CimeGlobal,
    Unresolved,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::Native, Self::CimeLocal, Self::CimeGlobal, Self::Unresolved];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Native => "native",
            Self::CimeLocal => "cime_local",
            Self::CimeGlobal => "cime_global",
            Self::Unresolved => "unresolved",
        }
    }

    pub fn is_inferred(self) -> bool {
        matches!(self, Self::CimeLocal | Self::CimeGlobal)
    }
}

/// Where a post is believed to be, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geolocation {
    pub post_id: u64,
    pub method: Method,
    #[serde(default)]
    pub place_id: Option<u64>,
    #[serde(default)]
    pub point: Option<LatLon>,
    #[serde(default)]
    pub precision_class: Option<PlaceClass>,
    #[serde(default)]
    pub radius_m: Option<f64>,
    pub confidence: f64,
    #[serde(default)]
    pub evidence: Vec<String>,
    #[serde(default)]
    pub crowd_validated: bool,
    #[serde(default)]
    pub image_tags: Vec<String>,
}

impl Geolocation {
    pub fn unresolved(post_id: u64, evidence: Vec<String>, image_tags: Vec<String>) -> Self {
        Self {
            post_id,
            method: Method::Unresolved,
            place_id: None,
            point: None,
            precision_class: None,
            radius_m: None,
            confidence: 0.0,
            evidence,
            crowd_validated: false,
            image_tags,
        }
    }

    /// Checks the per-method field requirements.
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if let Some(p) = self.point {
            if !p.is_valid() {
                return Err("point out of range".into());
            }
        }
        match self.method {
            Method::Native => {
                if self.point.is_none() || self.confidence != 1.0 {
                    return Err("native geolocation needs a point and confidence 1".into());
                }
            }
            Method::CimeLocal | Method::CimeGlobal => {
                if self.place_id.is_none()
                    || self.point.is_none()
                    || self.precision_class.is_none()
                    || self.radius_m.is_none()
                {
                    return Err("inferred geolocation needs place, point, class and radius".into());
                }
            }
            Method::Unresolved => {
                if self.point.is_some() || self.confidence != 0.0 {
                    return Err("unresolved geolocation has a point or non-zero confidence".into());
                }
            }
        }
        Ok(())
    }
}

/// Scores of one candidate of one mention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub place_id: u64,
    pub local: LocalScore,
    pub support: f64,
    pub combined: f64,
}

/// `[mention][candidate]` scores of one post.
pub type PostScores = Vec<Vec<ScoredCandidate>>;

fn collect_image_tags(post: &Post) -> Vec<String> {
    let mut seen = HashSet::new();
    post.media
        .iter()
        .flat_map(|m| m.image_tags.iter())
        .filter(|t| seen.insert(t.as_str()))
        .cloned()
        .collect()
}

/// Ordering key shared by winner selection: score desc, importance desc, id asc.
fn better(gazetteer: &Gazetteer, a: (f64, u64), b: (f64, u64)) -> bool {
    let imp = |id| gazetteer.get(id).map(|p| p.importance).unwrap_or(0.0);
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => match imp(a.1).total_cmp(&imp(b.1)) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => a.1 < b.1,
        },
    }
}

fn argmax(gazetteer: &Gazetteer, scores: &PostScores, key: impl Fn(&ScoredCandidate) -> f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64, u64)> = None;
    for (mi, cands) in scores.iter().enumerate() {
        for (ci, c) in cands.iter().enumerate() {
            let v = key(c);
            if best.is_none_or(|(_, _, bv, bid)| better(gazetteer, (v, c.place_id), (bv, bid))) {
                best = Some((mi, ci, v, c.place_id));
            }
        }
    }
    best.map(|(m, c, _, _)| (m, c))
}

/// Picks the location of a single post from its scored candidates.
pub fn geolocate_post(
    post: &Post,
    mentions: &[ToponymMention],
    scores: &PostScores,
    gazetteer: &Gazetteer,
    cfg: &GeocodeConfig,
) -> Geolocation {
    let image_tags = collect_image_tags(post);
    if let Some(tag) = post.native_geotag {
        return Geolocation {
            post_id: post.post_id,
            method: Method::Native,
            place_id: None,
            point: Some(tag),
            precision_class: Some(PlaceClass::Poi),
            radius_m: Some(cfg.radii.poi),
            confidence: 1.0,
            evidence: vec![format!("native geotag ({}, {})", tag.lat, tag.lon)],
            crowd_validated: false,
            image_tags,
        };
    }
    let Some((wm, wc)) = argmax(gazetteer, scores, |c| c.combined) else {
        return Geolocation::unresolved(post.post_id, vec!["no toponym mentions".into()], image_tags);
    };
    let winner = scores[wm][wc];
    if winner.combined < cfg.threshold {
        return Geolocation::unresolved(
            post.post_id,
            vec![format!(
                "best combined score {:.4} (place {}) below threshold {}",
                winner.combined, winner.place_id, cfg.threshold
            )],
            image_tags,
        );
    }
    let Some(place) = gazetteer.get(winner.place_id) else {
        return Geolocation::unresolved(
            post.post_id,
            vec![format!("place {} missing from gazetteer", winner.place_id)],
            image_tags,
        );
    };

    let local_winner = argmax(gazetteer, scores, |c| c.local.value);
    let argmax_changed = local_winner != Some((wm, wc));
    let global_part = cfg.damping * winner.support;
    let method = if argmax_changed || global_part > 0.0 {
        Method::CimeGlobal
    } else {
        Method::CimeLocal
    };

    let s1 = winner.combined;
    let mut rivals: Vec<&ScoredCandidate> = scores[wm]
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != wc)
        .map(|(_, c)| c)
        .collect();
    rivals.sort_by(|a, b| b.combined.total_cmp(&a.combined).then(a.place_id.cmp(&b.place_id)));
    let confidence = match rivals.first() {
        Some(second) if s1 > 0.0 => s1 * (1.0 - second.combined / (2.0 * s1)),
        _ => s1,
    }
    .clamp(0.0, 1.0);

    let m = &mentions[wm];
    let mut evidence = vec![
        format!(
            "mention '{}' ({}, tokens {}..{}): {} candidate(s)",
            m.surface,
            if m.from_hashtag { "hashtag" } else { "text" },
            m.token_span.0,
            m.token_span.1,
            m.candidates.len()
        ),
        format!(
            "winner place {} '{}' {}: coherence={:.4} area={:.4} importance={:.4} precision={:.4} local={:.4} support={:.4} combined={:.4}",
            place.place_id,
            place.canonical_name,
            place.place_class,
            winner.local.coherence,
            winner.local.area,
            winner.local.importance,
            winner.local.precision,
            winner.local.value,
            winner.support,
            winner.combined
        ),
    ];
    for other in rivals.iter().take(3) {
        evidence.push(format!(
            "rival place {}: local={:.4} support={:.4} combined={:.4}",
            other.place_id, other.local.value, other.support, other.combined
        ));
    }
    evidence.push(format!(
        "method {}: context changed argmax={}, context share of winner={:.4}",
        method.as_str(),
        argmax_changed,
        global_part
    ));

    Geolocation {
        post_id: post.post_id,
        method,
        place_id: Some(place.place_id),
        point: Some(place.centroid),
        precision_class: Some(place.place_class),
        radius_m: Some(cfg.radii.radius_m(place.place_class)),
        confidence,
        evidence,
        crowd_validated: false,
        image_tags,
    }
}

/// Everything computed for a corpus, in input order.
#[derive(Debug, Clone)]
pub struct CorpusRun {
    pub mentions: Vec<Vec<ToponymMention>>,
    pub graph: ContextGraph,
    pub scores: Vec<PostScores>,
    pub iterations: usize,
    pub max_changes: Vec<f64>,
    pub geolocations: Vec<Geolocation>,
}

/// Extraction, graph construction, local scoring, propagation and resolution.
pub struct Geocoder<'g> {
    extractor: ToponymExtractor<'g>,
    cfg: GeocodeConfig,
}

impl<'g> Geocoder<'g> {
    pub fn new(gazetteer: &'g Gazetteer, cfg: GeocodeConfig) -> Self {
        Self {
            extractor: ToponymExtractor::new(gazetteer),
            cfg,
        }
    }

    pub fn with_extractor(extractor: ToponymExtractor<'g>, cfg: GeocodeConfig) -> Self {
        Self { extractor, cfg }
    }

    pub fn config(&self) -> &GeocodeConfig {
        &self.cfg
    }

    pub fn extractor(&self) -> &ToponymExtractor<'g> {
        &self.extractor
    }

    pub fn run(&self, posts: &[Post]) -> CorpusRun {
        let gazetteer = self.extractor.gazetteer();
        let cfg = &self.cfg;
        let mentions: Vec<Vec<ToponymMention>> = posts.par_iter().map(|p| self.extractor.extract(p)).collect();
        let graph = build_context_graph(posts, cfg);

        let locals: Vec<Vec<Vec<(u64, LocalScore)>>> = mentions
            .par_iter()
            .map(|ms| {
                ms.iter()
                    .enumerate()
                    .map(|(mi, m)| {
                        m.candidates
                            .iter()
                            .filter_map(|id| gazetteer.get(*id))
                            .map(|place| (place.place_id, score_local(ms, mi, place, gazetteer, cfg)))
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let states: Vec<PostState> = posts
            .iter()
            .zip(&locals)
            .map(|(p, ms)| PostState {
                post_id: p.post_id,
                geotag: p.native_geotag,
                mentions: ms
                    .iter()
                    .map(|cands| {
                        cands
                            .iter()
                            .map(|&(id, l)| {
                                let place = gazetteer.get(id).expect("candidate in gazetteer");
                                CandidateState {
                                    place_id: id,
                                    point: place.centroid,
                                    importance: place.importance,
                                    local: l.value,
                                }
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let prop = propagate_global(&graph, &states, cfg);

        let scores: Vec<PostScores> = locals
            .iter()
            .enumerate()
            .map(|(pi, ms)| {
                ms.iter()
                    .enumerate()
                    .map(|(mi, cands)| {
                        cands
                            .iter()
                            .enumerate()
                            .map(|(ci, &(place_id, local))| ScoredCandidate {
                                place_id,
                                local,
                                support: prop.support[pi][mi][ci],
                                combined: prop.combined[pi][mi][ci],
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let geolocations = posts
            .par_iter()
            .enumerate()
            .map(|(i, p)| geolocate_post(p, &mentions[i], &scores[i], gazetteer, cfg))
            .collect();

        CorpusRun {
            mentions,
            graph,
            scores,
            iterations: prop.iterations,
            max_changes: prop.max_changes,
            geolocations,
        }
    }
}

/// Geolocates every post with the default stopword list. Output order
/// matches input order.
pub fn geolocate_corpus(posts: &[Post], gazetteer: &Gazetteer, cfg: &GeocodeConfig) -> Vec<Geolocation> {
    Geocoder::new(gazetteer, cfg.clone()).run(posts).geolocations
}

pub fn write_geolocations<'a>(mut w: impl Write, geos: impl IntoIterator<Item = &'a Geolocation>) -> io::Result<()> {
    for g in geos {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads newline-delimited geolocations, validating each record.
pub fn read_geolocations(r: impl BufRead) -> Result<Vec<Geolocation>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let g: Geolocation = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        g.check().map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(g);
    }
    Ok(out)
}
