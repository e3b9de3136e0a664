//! Toponym extraction and context-aware disambiguation.
//!
//! Each post's mentions are scored from evidence inside the post (other
//! unambiguous mentions, the event area, place importance and granularity),
//! then refined by propagating support from related posts over a
//! [`ContextGraph`]. Posts with native geotags pass through untouched and act
//! as fixed anchors for their neighbors.

mod config;
mod graph;
mod resolve;
mod scoring;
mod toponyms;

pub use config::GeocodeConfig;
pub use graph::{build_context_graph, ContextGraph, Edge, EdgeKind};
pub use resolve::{
    geolocate_corpus, geolocate_post, read_geolocations, write_geolocations, CorpusRun, Geocoder, Geolocation,
    Method, PostScores, ScoredCandidate,
};
pub use scoring::{precision_prior, propagate_global, score_local, CandidateState, LocalScore, PostState, Propagation};
pub use toponyms::{split_hashtag, ToponymExtractor, ToponymMention, DEFAULT_STOPWORDS, MAX_NGRAM};
