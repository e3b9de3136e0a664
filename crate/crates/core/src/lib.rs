//! Core pipeline for geolocating social-media posts during emergencies.

pub mod eval;
pub mod gazetteer;
pub mod geo;
pub mod geocode;
pub mod ingest;
pub mod kv;
pub mod ranking;
pub mod scenario;
pub mod store;
