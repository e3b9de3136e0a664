//! Brute-force reference for disambiguation.
//!
//! Written from the scoring rules alone: pairwise relation scan, local score
//! per (mention, candidate), plain nested-loop propagation and exhaustive
//! winner enumeration. Shares nothing with the library beyond its data types.

use std::collections::{BTreeMap, BTreeSet};

use rapidmap_core::gazetteer::{Gazetteer, PlaceClass};
use rapidmap_core::geocode::GeocodeConfig;
use rapidmap_core::ingest::Post;

const R: f64 = 6_371_000.0;

/// atan2 form of the great-circle distance.
pub fn distance_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R * h.sqrt().atan2((1.0 - h).sqrt())
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    id: u64,
    at: (f64, f64),
    importance: f64,
    class: PlaceClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub post_id: u64,
    /// "native", "cime_local", "cime_global" or "unresolved".
    pub method: &'static str,
    pub place_id: Option<u64>,
    pub point: Option<(f64, f64)>,
    pub confidence: f64,
}

fn prior(class: PlaceClass) -> f64 {
    match class {
        PlaceClass::Poi => 1.0,
        PlaceClass::Street => 0.85,
        PlaceClass::Locality => 0.6,
        PlaceClass::Region => 0.3,
    }
}

/// Heaviest relation between every related pair of posts, found by checking all pairs.
fn relations(posts: &[Post], cfg: &GeocodeConfig) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for i in 0..posts.len() {
        for j in i + 1..posts.len() {
            let (a, b) = (&posts[i], &posts[j]);
            let mut w: f64 = 0.0;
            if a.retweet_of == Some(b.post_id) || b.retweet_of == Some(a.post_id) {
                w = w.max(cfg.edge_retweet);
            }
            if a.reply_to == Some(b.post_id) || b.reply_to == Some(a.post_id) {
                w = w.max(cfg.edge_reply);
            }
            let names = |p: &Post, author: &str| p.mentions.iter().any(|m| m.eq_ignore_ascii_case(author));
            if names(a, &b.author_id) || names(b, &a.author_id) {
                w = w.max(cfg.edge_mention);
            }
            let ta: BTreeSet<&String> = a.hashtags.iter().collect();
            let tb: BTreeSet<&String> = b.hashtags.iter().collect();
            let shared = ta.intersection(&tb).count();
            if shared > 0 {
                w = w.max((cfg.edge_hashtag_per_tag * shared as f64).min(1.0));
            }
            if w > 0.0 {
                out.insert((i, j), w);
            }
        }
    }
    out
}

/// True when `a` ranks above `b`: higher score, then higher importance, then lower id.
fn beats(a: (f64, &Cand), b: (f64, &Cand)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1.importance != b.1.importance {
        return a.1.importance > b.1.importance;
    }
    a.1.id < b.1.id
}

/// Resolves every post of the corpus. `mentions[p][m]` lists the candidate
/// place ids of mention `m` of post `p`.
pub fn resolve(posts: &[Post], mentions: &[Vec<Vec<u64>>], g: &Gazetteer, cfg: &GeocodeConfig) -> Vec<Verdict> {
    let cands: Vec<Vec<Vec<Cand>>> = mentions
        .iter()
        .map(|ms| {
            ms.iter()
                .map(|ids| {
                    ids.iter()
                        .map(|id| {
                            let p = g.get(*id).expect("candidate exists");
                            Cand {
                                id: *id,
                                at: (p.centroid.lat, p.centroid.lon),
                                importance: p.importance,
                                class: p.place_class,
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    // local scores
    let mut local: Vec<Vec<Vec<f64>>> = Vec::new();
    for ms in &cands {
        let mut per_post = Vec::new();
        for (mi, m) in ms.iter().enumerate() {
            let anchors: Vec<&Cand> = ms
                .iter()
                .enumerate()
                .filter(|(k, other)| *k != mi && other.len() == 1)
                .map(|(_, other)| &other[0])
                .collect();
            let mut row = Vec::new();
            for c in m {
                let coherence = if anchors.is_empty() {
                    0.5
                } else {
                    let mut total = 0.0;
                    for a in &anchors {
                        total += (-distance_m(c.at, a.at) / cfg.lambda_local_m).exp();
                    }
                    total / anchors.len() as f64
                };
                let area = match &cfg.event_area {
                    None => 0.5,
                    Some(b) => {
                        let inside =
                            c.at.1 >= b.min_lon && c.at.1 <= b.max_lon && c.at.0 >= b.min_lat && c.at.0 <= b.max_lat;
                        if inside {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                row.push(
                    cfg.w_coherence * coherence
                        + cfg.w_area * area
                        + cfg.w_importance * c.importance
                        + cfg.w_precision * prior(c.class),
                );
            }
            per_post.push(row);
        }
        local.push(per_post);
    }

    let rel = relations(posts, cfg);
    let mut adjacent: Vec<Vec<(usize, f64)>> = vec![Vec::new(); posts.len()];
    for (&(i, j), &w) in &rel {
        adjacent[i].push((j, w));
        adjacent[j].push((i, w));
    }

    let mut combined = local.clone();
    let mut support: Vec<Vec<Vec<f64>>> = local.iter().map(|ms| ms.iter().map(|r| vec![0.0; r.len()]).collect()).collect();
    for _round in 0..cfg.iterations {
        let previous = combined.clone();
        let mut biggest: f64 = 0.0;
        for p in 0..posts.len() {
            for mi in 0..cands[p].len() {
                for ci in 0..cands[p][mi].len() {
                    let c = &cands[p][mi][ci];
                    let mut s: f64 = 0.0;
                    for &(q, w) in &adjacent[p] {
                        let mut offered: Vec<((f64, f64), f64)> = Vec::new();
                        if let Some(tag) = posts[q].native_geotag {
                            offered.push(((tag.lat, tag.lon), 1.0));
                        } else {
                            for (qm, qc) in cands[q].iter().enumerate() {
                                let mut best: Option<usize> = None;
                                for k in 0..qc.len() {
                                    let take = match best {
                                        None => true,
                                        Some(b) => beats((previous[q][qm][k], &qc[k]), (previous[q][qm][b], &qc[b])),
                                    };
                                    if take {
                                        best = Some(k);
                                    }
                                }
                                if let Some(b) = best {
                                    offered.push((qc[b].at, previous[q][qm][b]));
                                }
                            }
                        }
                        for (at, score) in offered {
                            let v = w * score * (-distance_m(c.at, at) / cfg.lambda_global_m).exp();
                            if v > s {
                                s = v;
                            }
                        }
                    }
                    let v = (1.0 - cfg.damping) * local[p][mi][ci] + cfg.damping * s;
                    biggest = biggest.max((v - previous[p][mi][ci]).abs());
                    combined[p][mi][ci] = v;
                    support[p][mi][ci] = s;
                }
            }
        }
        if biggest < cfg.epsilon {
            break;
        }
    }

    let mut out = Vec::with_capacity(posts.len());
    for (p, post) in posts.iter().enumerate() {
        if let Some(tag) = post.native_geotag {
            out.push(Verdict {
                post_id: post.post_id,
                method: "native",
                place_id: None,
                point: Some((tag.lat, tag.lon)),
                confidence: 1.0,
            });
            continue;
        }
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (mi, m) in cands[p].iter().enumerate() {
            for ci in 0..m.len() {
                pairs.push((mi, ci));
            }
        }
        let top = |scores: &Vec<Vec<f64>>| {
            let mut best: Option<(usize, usize)> = None;
            for &(mi, ci) in &pairs {
                let take = match best {
                    None => true,
                    Some((bm, bc)) => beats(
                        (scores[mi][ci], &cands[p][mi][ci]),
                        (scores[bm][bc], &cands[p][bm][bc]),
                    ),
                };
                if take {
                    best = Some((mi, ci));
                }
            }
            best
        };
        let Some((wm, wc)) = top(&combined[p]) else {
            out.push(unresolved(post.post_id));
            continue;
        };
        let s1 = combined[p][wm][wc];
        if s1 < cfg.threshold {
            out.push(unresolved(post.post_id));
            continue;
        }
        let changed = top(&local[p]) != Some((wm, wc));
        let method = if changed || cfg.damping * support[p][wm][wc] > 0.0 {
            "cime_global"
        } else {
            "cime_local"
        };
        let second = (0..cands[p][wm].len())
            .filter(|&k| k != wc)
            .map(|k| combined[p][wm][k])
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        let confidence = match second {
            Some(s2) if s1 > 0.0 => s1 * (1.0 - s2 / (2.0 * s1)),
            _ => s1,
        };
        let w = &cands[p][wm][wc];
        out.push(Verdict {
            post_id: post.post_id,
            method,
            place_id: Some(w.id),
            point: Some(w.at),
            confidence,
        });
    }
    out
}

fn unresolved(post_id: u64) -> Verdict {
    Verdict {
        post_id,
        method: "unresolved",
        place_id: None,
        point: None,
        confidence: 0.0,
    }
}
