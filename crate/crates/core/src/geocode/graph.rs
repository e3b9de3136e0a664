//! Post-to-post relation graph built from retweets, replies, mentions and
//! shared hashtags.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::GeocodeConfig;
use crate::ingest::Post;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Retweet,
    Reply,
    Mention,
    SharedHashtag,
}

/// Undirected edge; `a < b` always.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: u64,
    pub b: u64,
    pub kind: EdgeKind,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ContextGraph {
    nodes: BTreeSet<u64>,
    edges: Vec<Edge>,
    /// Strongest edge weight to each neighbor, neighbors ascending.
    adjacency: BTreeMap<u64, Vec<(u64, f64)>>,
}

impl ContextGraph {
    pub fn nodes(&self) -> &BTreeSet<u64> {
        &self.nodes
    }

    /// Sorted by (min id, max id, kind).
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of `id` with the heaviest edge weight between the pair.
    pub fn neighbors(&self, id: u64) -> &[(u64, f64)] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Builds a graph from an explicit edge list. Self-edges, zero weights and
    /// edges touching unknown nodes are dropped; duplicates keep the heavier weight.
    pub fn from_edges(nodes: impl IntoIterator<Item = u64>, edges: impl IntoIterator<Item = Edge>) -> Self {
        let nodes: BTreeSet<u64> = nodes.into_iter().collect();
        let mut keyed: BTreeMap<(u64, u64, EdgeKind), f64> = BTreeMap::new();
        for e in edges {
            let (a, b) = (e.a.min(e.b), e.a.max(e.b));
            if a == b || !(e.weight > 0.0) || !nodes.contains(&a) || !nodes.contains(&b) {
                continue;
            }
            let w = keyed.entry((a, b, e.kind)).or_insert(0.0);
            *w = w.max(e.weight.min(1.0));
        }
        let edges: Vec<Edge> = keyed
            .into_iter()
            .map(|((a, b, kind), weight)| Edge { a, b, kind, weight })
            .collect();
        let mut strongest: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for e in &edges {
            for key in [(e.a, e.b), (e.b, e.a)] {
                let w = strongest.entry(key).or_insert(0.0);
                *w = w.max(e.weight);
            }
        }
        let mut adjacency: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
        for ((p, q), w) in strongest {
            adjacency.entry(p).or_default().push((q, w));
        }
        Self {
            nodes,
            edges,
            adjacency,
        }
    }
}

/// Relations between posts of one corpus. References to posts outside the
/// corpus create no edges.
pub fn build_context_graph(posts: &[Post], cfg: &GeocodeConfig) -> ContextGraph {
    let ids: BTreeSet<u64> = posts.iter().map(|p| p.post_id).collect();
    let mut edges = Vec::new();
    let mut push = |a: u64, b: u64, kind: EdgeKind, weight: f64| {
        if ids.contains(&a) && ids.contains(&b) {
            edges.push(Edge { a, b, kind, weight });
        }
    };

    let mut by_author: HashMap<String, Vec<u64>> = HashMap::new();
    for p in posts {
        by_author.entry(p.author_id.to_lowercase()).or_default().push(p.post_id);
    }
    let mut by_tag: BTreeMap<&str, Vec<u64>> = BTreeMap::new();

    for p in posts {
        if let Some(t) = p.retweet_of {
            push(p.post_id, t, EdgeKind::Retweet, cfg.edge_retweet);
        }
        if let Some(t) = p.reply_to {
            push(p.post_id, t, EdgeKind::Reply, cfg.edge_reply);
        }
        for m in &p.mentions {
            for &other in by_author.get(&m.to_lowercase()).into_iter().flatten() {
                push(p.post_id, other, EdgeKind::Mention, cfg.edge_mention);
            }
        }
        let mut tags: Vec<&str> = p.hashtags.iter().map(String::as_str).collect();
        tags.sort_unstable();
        tags.dedup();
        for t in tags {
            by_tag.entry(t).or_default().push(p.post_id);
        }
    }

    let mut shared: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for members in by_tag.values_mut() {
        members.sort_unstable();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                *shared.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    for ((a, b), n) in shared {
        push(a, b, EdgeKind::SharedHashtag, (cfg.edge_hashtag_per_tag * n as f64).min(1.0));
    }

    ContextGraph::from_edges(ids.iter().copied(), edges)
}
