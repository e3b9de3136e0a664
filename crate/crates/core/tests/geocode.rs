use std::path::Path;

use proptest::prelude::*;
use rapidmap_core::gazetteer::{Gazetteer, Place, PlaceClass};
use rapidmap_core::geo::{BBox, LatLon};
use rapidmap_core::geocode::{
    geolocate_corpus, geolocate_post, propagate_global, write_geolocations, CandidateState, ContextGraph, Edge,
    EdgeKind, GeocodeConfig, Geocoder, LocalScore, Method, PostState, ScoredCandidate, ToponymExtractor,
    ToponymMention,
};
use rapidmap_core::ingest::{Post, Source};
use rapidmap_core::scenario::{simulate, Template};

const DAWLISH: (f64, f64) = (50.5833, -3.4656);
const EXETER_UK: (f64, f64) = (50.7236, -3.5275);
const EXETER_US: (f64, f64) = (42.9814, -70.9478);

fn toy() -> Gazetteer {
    Gazetteer::load_tsv(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy/gazetteer.tsv")).unwrap()
}

fn world() -> Gazetteer {
    Gazetteer::load_tsv(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/gazetteer/world.tsv")).unwrap()
}

fn post(id: u64, text: &str) -> Post {
    Post {
        post_id: id,
        source: Source::Twitter,
        author_id: format!("user{id}"),
        created_at: 1_391_558_400 + id as i64,
        text: text.into(),
        hashtags: rapidmap_core::ingest::extract_entities(text).hashtags,
        mentions: vec![],
        retweet_of: None,
        reply_to: None,
        native_geotag: None,
        links: vec![],
        media: vec![],
    }
}

/// Great-circle distance, written out here rather than borrowed.
fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let h = ((p2 - p1) / 2.0).sin().powi(2) + p1.cos() * p2.cos() * ((b.1 - a.1).to_radians() / 2.0).sin().powi(2);
    2.0 * 6_371_000.0 * h.sqrt().asin()
}

#[test]
fn extraction_examples() {
    let g = toy();
    let x = ToponymExtractor::new(&g);
    let ms = x.extract(&post(1, "Flooding in Dawlish near Exeter"));
    let got: Vec<(&str, usize)> = ms.iter().map(|m| (m.surface.as_str(), m.candidates.len())).collect();
    assert_eq!(got, [("Dawlish", 1), ("Exeter", 2)]);
    assert_eq!(ms[1].candidates, [2, 3]);
    assert!(x.extract(&post(2, "")).is_empty());
    let ms = x.extract(&post(3, "#DawlishFloods"));
    assert_eq!(ms.len(), 1);
    assert!(ms[0].from_hashtag);
    assert_eq!(ms[0].candidates, [1]);
    // longest match wins over its prefix
    let ms = x.extract(&post(4, "the devon seaside town again"));
    assert_eq!(ms.len(), 1);
    assert_eq!(ms[0].token_span.1 - ms[0].token_span.0, 3);
}

#[test]
fn running_example_by_formula() {
    let g = toy();
    let cfg = GeocodeConfig::default();
    let run = Geocoder::new(&g, cfg.clone()).run(&[post(1, "Flooding in Dawlish near Exeter")]);
    let geo = &run.geolocations[0];

    let coh_uk = (-dist(DAWLISH, EXETER_UK) / 30_000.0).exp();
    let coh_us = (-dist(DAWLISH, EXETER_US) / 30_000.0).exp();
    let local_uk = 0.4 * coh_uk + 0.25 * 0.5 + 0.2 * 0.7 + 0.15 * 0.6;
    let local_us = 0.4 * coh_us + 0.25 * 0.5 + 0.2 * 0.3 + 0.15 * 0.6;
    // Dawlish has no anchor: Exeter is ambiguous
    let local_dawlish = 0.4 * 0.5 + 0.25 * 0.5 + 0.2 * 0.4 + 0.15 * 0.6;
    assert!(local_uk > local_dawlish && local_uk > local_us);

    let s1 = 0.6 * local_uk;
    let s2 = 0.6 * local_us;
    assert_eq!(geo.place_id, Some(2));
    assert_eq!(geo.method, Method::CimeLocal);
    assert!((geo.confidence - s1 * (1.0 - s2 / (2.0 * s1))).abs() < 1e-12, "{}", geo.confidence);
    let scores = &run.scores[0];
    assert!((scores[1][0].local.value - local_uk).abs() < 1e-12);
    assert!((scores[1][1].local.value - local_us).abs() < 1e-12);
    assert!((scores[0][0].local.value - local_dawlish).abs() < 1e-12);
}

#[test]
fn one_propagation_step_from_a_geotagged_neighbor() {
    let g = toy();
    let cfg = GeocodeConfig {
        iterations: 1,
        ..GeocodeConfig::default()
    };
    let mut anchor = post(1, "Waves over the wall");
    anchor.native_geotag = Some(LatLon::new(DAWLISH.0, DAWLISH.1));
    let mut p = post(2, "#Exeter");
    p.retweet_of = Some(1);
    let run = Geocoder::new(&g, cfg).run(&[anchor, p]);
    let s = &run.scores[1][0];
    let support_uk = (-dist(EXETER_UK, DAWLISH) / 50_000.0).exp();
    assert!((s[0].support - support_uk).abs() < 1e-9, "{}", s[0].support);
    assert!(s[1].support < 1e-30);
    assert!(s[0].combined > s[1].combined);
    assert_eq!(run.geolocations[1].place_id, Some(2));
    assert_eq!(run.geolocations[1].method, Method::CimeGlobal);
    assert_eq!(run.iterations, 1);
}

#[test]
fn corpus_edge_cases() {
    let g = toy();
    let cfg = GeocodeConfig::default();
    let tagged: Vec<Post> = (1..=5)
        .map(|i| {
            let mut p = post(i, "Exeter");
            p.native_geotag = Some(LatLon::new(50.0 + i as f64 * 0.123456789, -3.0 - i as f64 / 7.0));
            p
        })
        .collect();
    for (p, geo) in tagged.iter().zip(geolocate_corpus(&tagged, &g, &cfg)) {
        assert_eq!(geo.method, Method::Native);
        assert_eq!(geo.point, p.native_geotag);
        assert_eq!(geo.confidence, 1.0);
    }

    let geo = &geolocate_corpus(&[post(9, "Snow in Dawlish")], &g, &cfg)[0];
    assert_eq!(geo.method, Method::CimeLocal);
    assert_eq!(geo.place_id, Some(1));
    assert_eq!(geo.point, Some(LatLon::new(DAWLISH.0, DAWLISH.1)));

    let strict = GeocodeConfig {
        threshold: 0.99,
        ..cfg.clone()
    };
    let geo = &geolocate_corpus(&[post(9, "Snow in Dawlish")], &g, &strict)[0];
    assert_eq!(geo.method, Method::Unresolved);
    assert_eq!(geo.confidence, 0.0);
    assert!(geo.point.is_none());

    let geo = &geolocate_corpus(&[post(9, "no places here")], &g, &cfg)[0];
    assert_eq!(geo.method, Method::Unresolved);
}

#[test]
fn event_area_moves_score_by_its_weight() {
    let g = toy();
    let inside = GeocodeConfig {
        event_area: Some(BBox::new(-4.0, 50.0, -3.0, 51.0).unwrap()),
        ..GeocodeConfig::default()
    };
    let outside = GeocodeConfig {
        event_area: Some(BBox::new(10.0, 10.0, 11.0, 11.0).unwrap()),
        ..GeocodeConfig::default()
    };
    let p = [post(1, "Dawlish")];
    let a = Geocoder::new(&g, inside).run(&p).scores[0][0][0].local.value;
    let b = Geocoder::new(&g, outside).run(&p).scores[0][0][0].local.value;
    assert!((a - b - 0.25).abs() < 1e-12);
}

fn serialized(posts: &[Post], g: &Gazetteer) -> Vec<u8> {
    let mut out = Vec::new();
    write_geolocations(&mut out, &geolocate_corpus(posts, g, &GeocodeConfig::default())).unwrap();
    out
}

#[test]
fn output_is_deterministic_across_thread_counts() {
    let g = world();
    let sc = simulate(&Template::Earthquake.preset(), &g).unwrap();
    let a = serialized(&sc.posts, &g);
    let b = serialized(&sc.posts, &g);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = single.install(|| serialized(&sc.posts, &g));
    assert_eq!(a, b);
    assert_eq!(a, c);
}

// ---------------------------------------------------------------- properties

/// A random corpus described as propagation input: every post has up to
/// three mentions of up to three candidates drawn from a small pool of points.
#[derive(Debug, Clone)]
struct Corpus {
    places: Vec<(f64, f64, f64)>,
    states: Vec<PostState>,
    edges: Vec<Edge>,
}

fn corpus() -> impl Strategy<Value = Corpus> {
    let places = prop::collection::vec((50.0f64..51.0, -4.0f64..-3.0, 0.0f64..1.0), 6..12);
    places
        .prop_flat_map(|places| {
            let n = places.len();
            let mention = prop::collection::btree_set(0..n, 1..=3);
            let post = (
                prop::collection::vec(mention, 0..=3),
                prop::option::weighted(0.15, (50.0f64..51.0, -4.0f64..-3.0)),
                prop::collection::vec(0.0f64..1.0, 9),
            );
            let posts = prop::collection::vec(post, 2..12);
            (Just(places), posts)
        })
        .prop_flat_map(|(places, posts)| {
            let m = posts.len();
            let edge = (0..m, 0..m, 0usize..4, 0.05f64..=1.0);
            (Just(places), Just(posts), prop::collection::vec(edge, 0..(3 * m)))
        })
        .prop_map(|(places, posts, raw_edges)| {
            let states = posts
                .iter()
                .enumerate()
                .map(|(i, (mentions, geotag, locals))| PostState {
                    post_id: 100 + i as u64,
                    geotag: geotag.map(|(lat, lon)| LatLon::new(lat, lon)),
                    mentions: mentions
                        .iter()
                        .enumerate()
                        .map(|(mi, ids)| {
                            ids.iter()
                                .enumerate()
                                .map(|(ci, &pi)| CandidateState {
                                    place_id: pi as u64 + 1,
                                    point: LatLon::new(places[pi].0, places[pi].1),
                                    importance: places[pi].2,
                                    local: locals[(mi * 3 + ci) % 9],
                                })
                                .collect()
                        })
                        .collect(),
                })
                .collect();
            let kinds = [EdgeKind::Retweet, EdgeKind::Reply, EdgeKind::Mention, EdgeKind::SharedHashtag];
            let edges = raw_edges
                .into_iter()
                .filter(|(a, b, _, _)| a != b)
                .map(|(a, b, k, w)| Edge {
                    a: 100 + a.min(b) as u64,
                    b: 100 + a.max(b) as u64,
                    kind: kinds[k],
                    weight: w,
                })
                .collect();
            Corpus { places, states, edges }
        })
}

fn graph(c: &Corpus) -> ContextGraph {
    ContextGraph::from_edges(c.states.iter().map(|s| s.post_id), c.edges.iter().copied())
}

fn gazetteer_for(c: &Corpus) -> Gazetteer {
    Gazetteer::from_places(c.places.iter().enumerate().map(|(i, &(lat, lon, importance))| Place {
        place_id: i as u64 + 1,
        canonical_name: format!("place {i}"),
        alt_names: vec![],
        place_class: PlaceClass::Locality,
        centroid: LatLon::new(lat, lon),
        bbox: BBox {
            min_lon: lon - 0.01,
            min_lat: lat - 0.01,
            max_lon: lon + 0.01,
            max_lat: lat + 0.01,
        },
        admin_parents: vec![],
        importance,
    }))
    .unwrap()
}

/// Winner place of every post without a geotag, read through `geolocate_post`.
fn winners(c: &Corpus, combined: &[Vec<Vec<f64>>], cfg: &GeocodeConfig) -> Vec<Option<u64>> {
    let g = gazetteer_for(c);
    c.states
        .iter()
        .zip(combined)
        .filter(|(s, _)| s.geotag.is_none())
        .map(|(s, comb)| {
            let mentions: Vec<ToponymMention> = s
                .mentions
                .iter()
                .map(|cands| ToponymMention {
                    surface: "x".into(),
                    token_span: (0, 1),
                    from_hashtag: false,
                    candidates: cands.iter().map(|c| c.place_id).collect(),
                })
                .collect();
            let scores: Vec<Vec<ScoredCandidate>> = s
                .mentions
                .iter()
                .zip(comb)
                .map(|(cands, sc)| {
                    cands
                        .iter()
                        .zip(sc)
                        .map(|(cand, &v)| ScoredCandidate {
                            place_id: cand.place_id,
                            local: LocalScore {
                                coherence: 0.0,
                                area: 0.0,
                                importance: cand.importance,
                                precision: 0.0,
                                value: cand.local,
                            },
                            support: 0.0,
                            combined: v,
                        })
                        .collect()
                })
                .collect();
            let p = post(s.post_id, "");
            geolocate_post(&p, &mentions, &scores, &g, cfg).place_id
        })
        .collect()
}

/// Gives every mention a leading candidate whose local score beats the rest
/// by more than damping can make up, so no post's best candidate ever
/// switches between rounds. Graphs where it can switch may settle into a
/// two-round cycle instead of a fixed point.
fn settled(mut c: Corpus) -> Corpus {
    for s in &mut c.states {
        for cands in &mut s.mentions {
            for (i, cand) in cands.iter_mut().enumerate() {
                cand.local = if i == 0 { 0.9 + 0.1 * cand.local } else { 0.15 * cand.local };
            }
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn zero_damping_keeps_local_and_scaling_keeps_argmax(c in corpus(), factor in 0.01f64..1.0) {
        let cfg = GeocodeConfig { damping: 0.0, threshold: 0.0, ..GeocodeConfig::default() };
        let out = propagate_global(&graph(&c), &c.states, &cfg);
        for (s, comb) in c.states.iter().zip(&out.combined) {
            for (cands, sc) in s.mentions.iter().zip(comb) {
                for (cand, v) in cands.iter().zip(sc) {
                    prop_assert_eq!(*v, cand.local);
                }
            }
        }
        let mut scaled = c.clone();
        for s in &mut scaled.states {
            for cands in &mut s.mentions {
                for cand in cands.iter_mut() {
                    cand.local *= factor;
                }
            }
        }
        let out_scaled = propagate_global(&graph(&scaled), &scaled.states, &cfg);
        prop_assert_eq!(winners(&c, &out.combined, &cfg), winners(&scaled, &out_scaled.combined, &cfg));
    }

    #[test]
    fn isolated_posts_are_damped_local(c in corpus()) {
        let cfg = GeocodeConfig::default();
        let lonely = ContextGraph::from_edges(c.states.iter().map(|s| s.post_id), []);
        let out = propagate_global(&lonely, &c.states, &cfg);
        for (s, comb) in c.states.iter().zip(&out.combined) {
            for (cands, sc) in s.mentions.iter().zip(comb) {
                for (cand, v) in cands.iter().zip(sc) {
                    prop_assert!((v - 0.6 * cand.local).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn bounded_rounds_and_scores(c in corpus(), rounds in 1usize..8) {
        let cfg = GeocodeConfig { iterations: rounds, ..GeocodeConfig::default() };
        let out = propagate_global(&graph(&c), &c.states, &cfg);
        prop_assert!(out.iterations >= 1 && out.iterations <= rounds);
        prop_assert_eq!(out.max_changes.len(), out.iterations);
        if out.iterations < rounds {
            prop_assert!(*out.max_changes.last().unwrap() < cfg.epsilon);
        }
        for v in out.combined.iter().flatten().flatten() {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn max_change_does_not_grow_after_round_two(c in corpus().prop_map(settled)) {
        let cfg = GeocodeConfig { iterations: 8, epsilon: 0.0, ..GeocodeConfig::default() };
        let out = propagate_global(&graph(&c), &c.states, &cfg);
        prop_assert!(out.iterations <= cfg.iterations);
        for k in 2..out.max_changes.len() {
            prop_assert!(
                out.max_changes[k] <= out.max_changes[k - 1] + 1e-12,
                "changes {:?}", out.max_changes
            );
        }
    }

    #[test]
    fn nearby_resolved_neighbor_never_lowers_a_candidate(
        c in corpus(),
        pick in any::<prop::sample::Index>(),
        offset in (-0.2f64..0.2, -0.2f64..0.2),
        weight in 0.05f64..=1.0,
    ) {
        let cfg = GeocodeConfig::default();
        let targets: Vec<(usize, usize, usize)> = c.states.iter().enumerate()
            .filter(|(_, s)| s.geotag.is_none())
            .flat_map(|(pi, s)| s.mentions.iter().enumerate().flat_map(move |(mi, m)| (0..m.len()).map(move |ci| (pi, mi, ci))))
            .collect();
        prop_assume!(!targets.is_empty());
        let (pi, mi, ci) = targets[pick.index(targets.len())];
        let at = c.states[pi].mentions[mi][ci].point;
        let spot = LatLon::new(at.lat + offset.0, at.lon + offset.1);
        prop_assume!(dist((spot.lat, spot.lon), (at.lat, at.lon)) <= cfg.lambda_global_m);

        let before = propagate_global(&graph(&c), &c.states, &cfg).combined[pi][mi][ci];
        let mut more = c.clone();
        let anchor = 10_000;
        more.states.push(PostState { post_id: anchor, geotag: Some(spot), mentions: vec![] });
        more.edges.push(Edge { a: c.states[pi].post_id, b: anchor, kind: EdgeKind::Reply, weight });
        let after = propagate_global(&graph(&more), &more.states, &cfg).combined[pi][mi][ci];
        prop_assert!(after >= before, "{} -> {}", before, after);
    }
}
