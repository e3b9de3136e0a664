//! HTTP service exposing a store of geolocated posts as GeoJSON.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/posts` | ranked FeatureCollection filtered by bbox, time, layer, precision, media |
//! | GET | `/api/posts/{id}` | one Feature with the scoring evidence |
//! | POST | `/api/posts/{id}/validate` | set the crowd-validation flag |
//! | GET, PUT | `/api/ranking` | live ranking parameters |
//! | GET | `/api/stats` | counts by method, precision, source and validation |
//!
//! Errors are `{"error": code, "message": text}`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method as HttpMethod, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use rapidmap_core::gazetteer::PlaceClass;
use rapidmap_core::geo::BBox;
use rapidmap_core::geocode::{Geolocation, Method};
use rapidmap_core::ingest::{format_timestamp, parse_timestamp, MediaKind, MediaOrigin, Post, Source};
use rapidmap_core::ranking::{rank_posts, rank_score, RankingParams};
use rapidmap_core::store::{Layer, QueryFilter, Store, StoredItem};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

pub const GEO_JSON: &str = "application/geo+json";

/// Source of "now" for recency scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(i64),
}

impl Clock {
    pub fn now(self) -> i64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs() as i64)
                .unwrap_or(0),
            Clock::Fixed(t) => t,
        }
    }
}

pub struct AppState {
    store: Arc<Store>,
    params: RwLock<RankingParams>,
    clock: Clock,
}

impl AppState {
    pub fn new(store: Arc<Store>, params: RankingParams, clock: Clock) -> Self {
        Self {
            store,
            params: RwLock::new(params),
            clock,
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn params(&self) -> RankingParams {
        *self.params.read()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: u64) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: format!("no post with id {id}"),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_vec(&ErrorBody {
            error: self.code,
            message: &self.message,
        })
        .unwrap_or_default();
        (self.status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
    }
}

fn json_bytes<T: Serialize>(content_type: &'static str, value: &T) -> Response {
    match serde_json::to_vec(value) {
        Ok(body) => ([(header::CONTENT_TYPE, content_type)], body).into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointGeometry {
    #[serde(rename = "type")]
    kind: &'static str,
    /// `[lon, lat]`
    pub coordinates: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediaOut {
    pub url: String,
    pub kind: MediaKind,
    pub origin: MediaOrigin,
    pub image_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Properties {
    pub post_id: u64,
    pub source: Source,
    pub created_at: String,
    pub text: String,
    pub method: Method,
    pub precision_class: Option<PlaceClass>,
    pub radius_m: Option<f64>,
    pub confidence: f64,
    pub crowd_validated: bool,
    pub rank_score: f64,
    pub media: Vec<MediaOut>,
    pub original_post_url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub streetview_url: Option<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Detail>,
}

/// Extra fields of the single-post view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detail {
    pub place_id: Option<u64>,
    pub evidence: Vec<String>,
    pub image_tags: Vec<String>,
    pub author_id: String,
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub links: Vec<String>,
    pub retweet_of: Option<u64>,
    pub reply_to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feature {
    #[serde(rename = "type")]
    kind: &'static str,
    pub geometry: Option<PointGeometry>,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureCollection {
    #[serde(rename = "type")]
    kind: &'static str,
    pub features: Vec<Feature>,
}

pub fn original_post_url(source: Source, post_id: u64) -> String {
    match source {
        Source::Twitter => format!("https://twitter.com/i/web/status/{post_id}"),
        Source::Flickr => format!("https://www.flickr.com/photo.gne?id={post_id}"),
        Source::Youtube => format!("https://www.youtube.com/watch?v={post_id}"),
        Source::Instagram => format!("https://www.instagram.com/p/{post_id}/"),
    }
}

pub fn streetview_url(lat: f64, lon: f64) -> String {
    format!("https://www.google.com/maps?layer=c&cbll={lat},{lon}")
}

pub fn feature(post: &Post, geo: &Geolocation, score: f64, detailed: bool) -> Feature {
    let geometry = geo.point.map(|p| PointGeometry {
        kind: "Point",
        coordinates: [p.lon, p.lat],
    });
    let detail = detailed.then(|| Detail {
        place_id: geo.place_id,
        evidence: geo.evidence.clone(),
        image_tags: geo.image_tags.clone(),
        author_id: post.author_id.clone(),
        hashtags: post.hashtags.clone(),
        mentions: post.mentions.clone(),
        links: post.links.clone(),
        retweet_of: post.retweet_of,
        reply_to: post.reply_to,
    });
    Feature {
        kind: "Feature",
        geometry,
        properties: Properties {
            post_id: post.post_id,
            source: post.source,
            created_at: format_timestamp(post.created_at),
            text: post.text.clone(),
            method: geo.method,
            precision_class: geo.precision_class,
            radius_m: geo.radius_m,
            confidence: geo.confidence,
            crowd_validated: geo.crowd_validated,
            rank_score: score,
            media: post
                .media
                .iter()
                .map(|m| MediaOut {
                    url: m.url.clone(),
                    kind: m.kind,
                    origin: m.origin,
                    image_tags: m.image_tags.clone(),
                })
                .collect(),
            original_post_url: original_post_url(post.source, post.post_id),
            streetview_url: geo.point.map(|p| streetview_url(p.lat, p.lon)),
            detail,
        },
    }
}

/// Raw query string values; parsed by hand so each failure gets its own code.
#[derive(Debug, Default, Deserialize)]
pub struct PostsQuery {
    bbox: Option<String>,
    from: Option<String>,
    to: Option<String>,
    layer: Option<String>,
    min_precision: Option<String>,
    limit: Option<String>,
    media_only: Option<String>,
}

impl PostsQuery {
    fn filter(&self) -> Result<QueryFilter, ApiError> {
        let present = |v: &Option<String>| v.as_deref().filter(|s| !s.is_empty()).map(str::to_string);
        let bbox = present(&self.bbox)
            .map(|s| BBox::parse(&s).map_err(|e| ApiError::bad("invalid_bbox", e.to_string())))
            .transpose()?;
        let time = |v: &Option<String>, name: &str| {
            present(v)
                .map(|s| parse_timestamp(&s).map_err(|e| ApiError::bad("invalid_time", format!("{name}: {e}"))))
                .transpose()
        };
        let time_from = time(&self.from, "from")?;
        let time_to = time(&self.to, "to")?;
        if let (Some(f), Some(t)) = (time_from, time_to) {
            if f > t {
                return Err(ApiError::bad("invalid_time_window", "`from` is after `to`"));
            }
        }
        let layer = present(&self.layer)
            .map(|s| s.parse::<Layer>().map_err(|e| ApiError::bad("invalid_layer", e)))
            .transpose()?
            .unwrap_or_default();
        let min_precision = present(&self.min_precision)
            .map(|s| s.parse::<PlaceClass>().map_err(|e| ApiError::bad("invalid_precision", e)))
            .transpose()?;
        let limit = present(&self.limit)
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| ApiError::bad("invalid_limit", format!("limit must be a non-negative integer, got `{s}`")))
            })
            .transpose()?;
        let only_with_media = match present(&self.media_only).as_deref() {
            None | Some("false") | Some("0") => false,
            Some("true") | Some("1") => true,
            Some(other) => {
                return Err(ApiError::bad(
                    "invalid_media_only",
                    format!("media_only must be true or false, got `{other}`"),
                ))
            }
        };
        Ok(QueryFilter {
            bbox,
            time_from,
            time_to,
            layer,
            min_precision,
            only_with_media,
            limit,
        })
    }
}

/// Ranked features for a filter. Only located items are map features, so
/// unresolved posts never appear here.
pub fn ranked_features(
    store: &Store,
    filter: &QueryFilter,
    params: &RankingParams,
    now: i64,
) -> Result<FeatureCollection, ApiError> {
    let unlimited = QueryFilter {
        limit: None,
        ..filter.clone()
    };
    let items = store
        .query(&unlimited)
        .map_err(|e| ApiError::bad("invalid_filter", e.to_string()))?;
    let pairs: Vec<(&Post, &Geolocation)> = items
        .iter()
        .filter(|i| i.geo.point.is_some())
        .map(|i| (&i.post, &i.geo))
        .collect();
    let features = rank_posts(pairs, params, now, filter.limit)
        .into_iter()
        .map(|(p, g)| feature(p, g, rank_score(g, p, params, now), false))
        .collect();
    Ok(FeatureCollection {
        kind: "FeatureCollection",
        features,
    })
}

async fn list_posts(
    State(state): State<Arc<AppState>>,
    query: Result<Query<PostsQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad("invalid_query", e.body_text()))?;
    let filter = q.filter()?;
    let params = state.params();
    let fc = ranked_features(&state.store, &filter, &params, state.clock.now())?;
    Ok(json_bytes(GEO_JSON, &fc))
}

fn parse_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::bad("invalid_id", format!("post id must be numeric, got `{raw}`")))
}

fn detail_response(state: &AppState, item: &StoredItem) -> Response {
    let params = state.params();
    let score = rank_score(&item.geo, &item.post, &params, state.clock.now());
    json_bytes(GEO_JSON, &feature(&item.post, &item.geo, score, true))
}

async fn get_post(State(state): State<Arc<AppState>>, Path(raw): Path<String>) -> Result<Response, ApiError> {
    let id = parse_id(&raw)?;
    let item = state.store.get(id).ok_or(ApiError::not_found(id))?;
    Ok(detail_response(&state, &item))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateBody {
    validated: bool,
}

async fn validate_post(
    State(state): State<Arc<AppState>>,
    Path(raw): Path<String>,
    body: Result<Json<ValidateBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let id = parse_id(&raw)?;
    let Json(body) = body.map_err(|e| ApiError::bad("invalid_body", e.body_text()))?;
    let store = Arc::clone(&state.store);
    let updated = tokio::task::spawn_blocking(move || match store.get(id) {
        Some(item) if item.geo.crowd_validated == body.validated => Ok(Some(item)),
        Some(_) => store.set_validated(id, body.validated),
        None => Ok(None),
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(e.to_string()))?
    .ok_or(ApiError::not_found(id))?;
    Ok(detail_response(&state, &updated))
}

async fn get_ranking(State(state): State<Arc<AppState>>) -> Response {
    json_bytes("application/json", &state.params())
}

async fn put_ranking(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RankingParams>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(params) = body.map_err(|e| ApiError::bad("invalid_body", e.body_text()))?;
    params
        .validate()
        .map_err(|e| ApiError::bad("invalid_ranking", e.to_string()))?;
    *state.params.write() = params;
    Ok(json_bytes("application/json", &params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub by_method: BTreeMap<String, usize>,
    /// Unlocated items count under `none`.
    pub by_precision: BTreeMap<String, usize>,
    pub by_source: BTreeMap<String, usize>,
    pub validated: usize,
    pub time_range: Option<TimeRange>,
}

pub fn stats(store: &Store) -> Stats {
    let items = store.all();
    let mut by_method: BTreeMap<String, usize> = Method::ALL.iter().map(|m| (m.as_str().to_string(), 0)).collect();
    let mut by_precision: BTreeMap<String, usize> = ["poi", "street", "locality", "region", "none"]
        .iter()
        .map(|c| (c.to_string(), 0))
        .collect();
    let mut by_source: BTreeMap<String, usize> = Source::ALL.iter().map(|s| (s.as_str().to_string(), 0)).collect();
    let mut validated = 0;
    for i in &items {
        *by_method.entry(i.geo.method.as_str().to_string()).or_default() += 1;
        let class = i.geo.precision_class.map_or("none".to_string(), |c| c.to_string());
        *by_precision.entry(class).or_default() += 1;
        *by_source.entry(i.post.source.as_str().to_string()).or_default() += 1;
        validated += usize::from(i.geo.crowd_validated);
    }
    let times = items.iter().map(|i| i.post.created_at);
    let time_range = times.clone().min().zip(times.max()).map(|(lo, hi)| TimeRange {
        from: format_timestamp(lo),
        to: format_timestamp(hi),
    });
    Stats {
        total: items.len(),
        by_method,
        by_precision,
        by_source,
        validated,
        time_range,
    }
}

async fn get_stats(State(state): State<Arc<AppState>>) -> Response {
    json_bytes("application/json", &stats(&state.store))
}

async fn fallback() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".into(),
    }
}

/// Routes, with CORS for `cors_origin` when given.
pub fn router(state: Arc<AppState>, cors_origin: Option<HeaderValue>) -> Router {
    let app = Router::new()
        .route("/api/posts", get(list_posts))
        .route("/api/posts/{id}", get(get_post))
        .route("/api/posts/{id}/validate", post(validate_post))
        .route("/api/ranking", get(get_ranking).put(put_ranking))
        .route("/api/stats", get(get_stats))
        .fallback(fallback)
        .with_state(state);
    match cors_origin {
        Some(origin) => app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([HttpMethod::GET, HttpMethod::POST, HttpMethod::PUT])
                .allow_headers([header::CONTENT_TYPE]),
        ),
        None => app,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
