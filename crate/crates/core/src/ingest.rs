//! Post records: parsing, entity extraction and linked-media resolution.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::DateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::LatLon;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("all {} records malformed (first: {})", .0.len(), .0.first().map(|e| e.to_string()).unwrap_or_default())]
    AllMalformed(Vec<RecordError>),
}

/// A skipped input record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Twitter,
    Flickr,
    Youtube,
    Instagram,
}

impl Source {
    pub const ALL: [Source; 4] = [Self::Twitter, Self::Flickr, Self::Youtube, Self::Instagram];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Twitter => "twitter",
            Self::Flickr => "flickr",
            Self::Youtube => "youtube",
            Self::Instagram => "instagram",
        }
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "twitter" => Ok(Self::Twitter),
            "flickr" => Ok(Self::Flickr),
            "youtube" => Ok(Self::Youtube),
            "instagram" => Ok(Self::Instagram),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaOrigin {
    Embedded,
    LinkedPlatform,
}

/// External platform a link can point to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Flickr,
    Youtube,
    Instagram,
}

impl Platform {
    /// Classifies a URL by host.
    pub fn for_url(raw: &str) -> Option<Platform> {
        let parsed = url::Url::parse(raw).ok()?;
        let host = parsed.host_str()?.to_ascii_lowercase();
        let host = host
            .strip_prefix("www.")
            .or_else(|| host.strip_prefix("m."))
            .unwrap_or(&host);
        let is = |domain: &str| host == domain || host.ends_with(&format!(".{domain}"));
        if is("flickr.com") || is("flic.kr") {
            Some(Self::Flickr)
        } else if is("youtube.com") || is("youtu.be") {
            Some(Self::Youtube)
        } else if is("instagram.com") || is("instagr.am") {
            Some(Self::Instagram)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MediaRecord", into = "MediaRecord")]
pub struct MediaItem {
    pub url: String,
    pub kind: MediaKind,
    pub origin: MediaOrigin,
    /// Present exactly when `origin` is `LinkedPlatform`.
    pub platform: Option<Platform>,
    pub image_tags: Vec<String>,
}

impl MediaItem {
    pub fn embedded(url: impl Into<String>, kind: MediaKind) -> Self {
        Self {
            url: url.into(),
            kind,
            origin: MediaOrigin::Embedded,
            platform: None,
            image_tags: Vec::new(),
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.url.trim().is_empty() {
            return Err("media url is empty".into());
        }
        match (self.origin, self.platform) {
            (MediaOrigin::LinkedPlatform, None) => Err("linked media without platform".into()),
            (MediaOrigin::Embedded, Some(_)) => Err("embedded media with platform".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MediaRecord {
    url: String,
    kind: MediaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<MediaOrigin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    platform: Option<Platform>,
    #[serde(default)]
    image_tags: Vec<String>,
}

impl TryFrom<MediaRecord> for MediaItem {
    type Error = String;

    fn try_from(r: MediaRecord) -> Result<Self, Self::Error> {
        let origin = r.origin.unwrap_or(if r.platform.is_some() {
            MediaOrigin::LinkedPlatform
        } else {
            MediaOrigin::Embedded
        });
        let item = MediaItem {
            url: r.url,
            kind: r.kind,
            origin,
            platform: r.platform,
            image_tags: r.image_tags,
        };
        item.check()?;
        Ok(item)
    }
}

impl From<MediaItem> for MediaRecord {
    fn from(m: MediaItem) -> Self {
        Self {
            url: m.url,
            kind: m.kind,
            origin: Some(m.origin),
            platform: m.platform,
            image_tags: m.image_tags,
        }
    }
}

/// A normalized post. Serializes to the same line format it is parsed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PostRecord", into = "PostRecord")]
pub struct Post {
    pub post_id: u64,
    pub source: Source,
    pub author_id: String,
    /// UTC epoch seconds, always positive.
    pub created_at: i64,
    pub text: String,
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub retweet_of: Option<u64>,
    pub reply_to: Option<u64>,
    pub native_geotag: Option<LatLon>,
    pub links: Vec<String>,
    pub media: Vec<MediaItem>,
}

impl Post {
    pub fn has_media(&self) -> bool {
        !self.media.is_empty()
    }

    /// Checks the record invariants by pushing the post through its wire
    /// form; a post that would not read back identically is rejected.
    pub fn validate(&self) -> Result<(), String> {
        let back = Post::try_from(PostRecord::from(self.clone()))?;
        if back != *self {
            return Err("post is not in normalized form".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Timestamp {
    Epoch(i64),
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PostRecord {
    id: u64,
    source: Source,
    author: String,
    created_at: Timestamp,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hashtags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mentions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    links: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geo: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    retweet_of: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reply_to: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    media: Option<Vec<MediaItem>>,
}

/// Parses ISO-8601/RFC 3339 text (offset required, `Z` accepted) into epoch seconds.
pub fn parse_timestamp(s: &str) -> Result<i64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp())
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

pub fn format_timestamp(epoch: i64) -> String {
    DateTime::from_timestamp(epoch, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| epoch.to_string())
}

fn clean_tag(raw: &str, prefix: char, lowercase: bool, what: &str) -> Result<String, String> {
    let t = raw.trim();
    let t = t.strip_prefix(prefix).unwrap_or(t);
    if t.is_empty() {
        return Err(format!("empty {what}"));
    }
    if t.chars().any(|c| c.is_whitespace() || c == prefix) {
        return Err(format!("{what} `{raw}` contains whitespace or `{prefix}`"));
    }
    Ok(if lowercase { t.to_lowercase() } else { t.to_string() })
}

fn dedup_in_order(items: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

impl TryFrom<PostRecord> for Post {
    type Error = String;

    fn try_from(r: PostRecord) -> Result<Self, Self::Error> {
        let created_at = match r.created_at {
            Timestamp::Epoch(v) => v,
            Timestamp::Text(s) => parse_timestamp(&s)?,
        };
        if created_at <= 0 {
            return Err(format!("created_at must be positive, got {created_at}"));
        }
        let native_geotag = r
            .geo
            .map(|[lat, lon]| LatLon::checked(lat, lon).map_err(|e| format!("geo: {e}")))
            .transpose()?;
        let needs_extraction = r.hashtags.is_none() || r.mentions.is_none() || r.links.is_none();
        let extracted = if needs_extraction {
            extract_entities(&r.text)
        } else {
            Entities::default()
        };
        let hashtags = match r.hashtags {
            Some(v) => dedup_in_order(
                v.iter()
                    .map(|h| clean_tag(h, '#', true, "hashtag"))
                    .collect::<Result<_, _>>()?,
            ),
            None => extracted.hashtags,
        };
        let mentions = match r.mentions {
            Some(v) => dedup_in_order(
                v.iter()
                    .map(|m| clean_tag(m, '@', false, "mention"))
                    .collect::<Result<_, _>>()?,
            ),
            None => extracted.mentions,
        };
        let links = match r.links {
            Some(v) => {
                if v.iter().any(|l| l.trim().is_empty() || l.contains(char::is_whitespace)) {
                    return Err("links must be non-empty and contain no whitespace".into());
                }
                dedup_in_order(v)
            }
            None => extracted.links,
        };
        if r.author.trim().is_empty() {
            return Err("author is empty".into());
        }
        if r.retweet_of == Some(r.id) || r.reply_to == Some(r.id) {
            return Err("post references itself".into());
        }
        Ok(Post {
            post_id: r.id,
            source: r.source,
            author_id: r.author,
            created_at,
            text: r.text,
            hashtags,
            mentions,
            retweet_of: r.retweet_of,
            reply_to: r.reply_to,
            native_geotag,
            links,
            media: r.media.unwrap_or_default(),
        })
    }
}

impl From<Post> for PostRecord {
    fn from(p: Post) -> Self {
        Self {
            id: p.post_id,
            source: p.source,
            author: p.author_id,
            created_at: Timestamp::Epoch(p.created_at),
            text: p.text,
            hashtags: Some(p.hashtags),
            mentions: Some(p.mentions),
            links: Some(p.links),
            geo: p.native_geotag.map(|g| [g.lat, g.lon]),
            retweet_of: p.retweet_of,
            reply_to: p.reply_to,
            media: Some(p.media),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Entities {
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub links: Vec<String>,
}

const LINK_TRAILING: &[char] = &['.', ',', ';', '!', '?', ')'];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte ranges of `http://`/`https://` links, trailing `.,;!?)` excluded.
pub(crate) fn link_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut from = 0;
    while from < text.len() {
        let rest = &text[from..];
        let Some(rel) = rest.find("http") else { break };
        let start = from + rel;
        let tail = &text[start..];
        if tail.starts_with("http://") || tail.starts_with("https://") {
            let end = start + tail.find(char::is_whitespace).unwrap_or(tail.len());
            let trimmed = text[start..end].trim_end_matches(LINK_TRAILING);
            let scheme_len = if tail.starts_with("https://") { 8 } else { 7 };
            if trimmed.len() > scheme_len {
                spans.push((start, start + trimmed.len()));
            }
            from = end.max(start + 1);
        } else {
            from = start + 4;
        }
    }
    spans
}

/// Byte ranges of `#tag` / `@name` tokens outside links. The marker must not
/// follow a word character, so `a@b.com` is not a mention.
pub(crate) fn marker_spans(text: &str, marker: char, links: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut prev: Option<char> = None;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        let inside_link = links.iter().any(|&(s, e)| i >= s && i < e);
        if c == marker && !inside_link && !prev.is_some_and(is_word_char) {
            let start = i + c.len_utf8();
            let mut end = start;
            while let Some(&(j, d)) = iter.peek() {
                if is_word_char(d) {
                    end = j + d.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            if end > start {
                out.push((i, end));
            }
            prev = text[..end].chars().next_back();
            continue;
        }
        prev = Some(c);
    }
    out
}

/// Pulls hashtags (lowercased), mentions (case kept) and links out of free
/// text. Each list is deduplicated in order of first appearance.
pub fn extract_entities(text: &str) -> Entities {
    let links = link_spans(text);
    let hashtags = marker_spans(text, '#', &links)
        .into_iter()
        .map(|(s, e)| text[s + 1..e].to_lowercase())
        .collect();
    let mentions = marker_spans(text, '@', &links)
        .into_iter()
        .map(|(s, e)| text[s + 1..e].to_string())
        .collect();
    Entities {
        hashtags: dedup_in_order(hashtags),
        mentions: dedup_in_order(mentions),
        links: dedup_in_order(links.iter().map(|&(s, e)| text[s..e].to_string()).collect()),
    }
}

/// Result of parsing a batch: good posts in input order plus skipped lines.
#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub posts: Vec<Post>,
    pub errors: Vec<RecordError>,
}

/// Parses newline-delimited post records. Malformed records are skipped and
/// reported; the call fails only when every record is malformed.
pub fn parse_posts_str(input: &str) -> Result<ParseOutcome, IngestError> {
    let lines: Vec<(usize, &str)> = input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let parsed: Vec<(usize, Result<Post, String>)> = lines
        .par_iter()
        .map(|&(n, l)| (n, serde_json::from_str::<Post>(l).map_err(|e| e.to_string())))
        .collect();
    let mut out = ParseOutcome::default();
    let mut seen = HashSet::new();
    for (line, result) in parsed {
        match result {
            Ok(post) if !seen.insert(post.post_id) => out.errors.push(RecordError {
                line,
                message: format!("duplicate post id {}", post.post_id),
            }),
            Ok(post) => out.posts.push(post),
            Err(message) => out.errors.push(RecordError { line, message }),
        }
    }
    if out.posts.is_empty() && !out.errors.is_empty() {
        return Err(IngestError::AllMalformed(out.errors));
    }
    Ok(out)
}

pub fn parse_posts(path: impl AsRef<Path>) -> Result<ParseOutcome, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_posts_str(&text)
}

pub fn write_posts<'a>(mut w: impl Write, posts: impl IntoIterator<Item = &'a Post>) -> io::Result<()> {
    for p in posts {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ClientError(pub String);

/// Looks up media behind an external platform link.
///
/// `Ok(None)` means the link cannot be resolved; `Err` is a transport
/// failure. Answers must be stable for a given URL within a run.
pub trait PlatformClient: Send + Sync {
    fn fetch(&self, platform: Platform, url: &str) -> Result<Option<Vec<MediaItem>>, ClientError>;
}

/// Serves media from a directory of JSON files named `<sha256(url)>.json`.
/// Each file holds one media object or an array of them.
#[derive(Debug, Clone)]
pub struct FixtureClient {
    dir: PathBuf,
}

impl FixtureClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn file_name(url: &str) -> String {
        let digest = Sha256::digest(url.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("{hex}.json")
    }

    pub fn path_for(&self, url: &str) -> PathBuf {
        self.dir.join(Self::file_name(url))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureBody {
    Many(Vec<FixtureMedia>),
    One(FixtureMedia),
}

#[derive(Deserialize)]
struct FixtureMedia {
    url: String,
    kind: MediaKind,
    #[serde(default)]
    image_tags: Vec<String>,
}

impl PlatformClient for FixtureClient {
    fn fetch(&self, platform: Platform, url: &str) -> Result<Option<Vec<MediaItem>>, ClientError> {
        let path = self.path_for(url);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ClientError(format!("{}: {e}", path.display()))),
        };
        let body: FixtureBody = serde_json::from_slice(&bytes)
            .map_err(|e| ClientError(format!("{}: {e}", path.display())))?;
        let items = match body {
            FixtureBody::Many(v) => v,
            FixtureBody::One(m) => vec![m],
        };
        Ok(Some(
            items
                .into_iter()
                .map(|m| MediaItem {
                    url: m.url,
                    kind: m.kind,
                    origin: MediaOrigin::LinkedPlatform,
                    platform: Some(platform),
                    image_tags: m.image_tags,
                })
                .collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolveFailure {
    pub post_id: u64,
    pub url: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResolveReport {
    pub platform_links: usize,
    pub unresolvable: usize,
    pub media_added: usize,
    pub failures: Vec<ResolveFailure>,
}

impl ResolveReport {
    fn merge(&mut self, other: ResolveReport) {
        self.platform_links += other.platform_links;
        self.unresolvable += other.unresolvable;
        self.media_added += other.media_added;
        self.failures.extend(other.failures);
    }
}

/// Appends media found behind platform links. Existing media are kept as is
/// and URLs already present are not added again. A transport failure on any
/// link leaves the post untouched and is recorded in the report.
pub fn resolve_linked_media(post: &Post, client: &dyn PlatformClient) -> (Post, ResolveReport) {
    let mut report = ResolveReport::default();
    let mut known: HashSet<String> = post.media.iter().map(|m| m.url.clone()).collect();
    let mut added = Vec::new();
    for link in &post.links {
        let Some(platform) = Platform::for_url(link) else { continue };
        report.platform_links += 1;
        match client.fetch(platform, link) {
            Ok(None) => report.unresolvable += 1,
            Ok(Some(items)) => {
                for item in items {
                    if item.check().is_ok() && known.insert(item.url.clone()) {
                        added.push(item);
                    }
                }
            }
            Err(e) => report.failures.push(ResolveFailure {
                post_id: post.post_id,
                url: link.clone(),
                message: e.0,
            }),
        }
    }
    let mut out = post.clone();
    if report.failures.is_empty() {
        report.media_added = added.len();
        out.media.extend(added);
    }
    (out, report)
}

/// Resolves every post in parallel; output order equals input order.
pub fn resolve_corpus(posts: Vec<Post>, client: &dyn PlatformClient) -> (Vec<Post>, ResolveReport) {
    let results: Vec<(Post, ResolveReport)> = posts
        .par_iter()
        .map(|p| resolve_linked_media(p, client))
        .collect();
    let mut report = ResolveReport::default();
    let posts = results
        .into_iter()
        .map(|(p, r)| {
            report.merge(r);
            p
        })
        .collect();
    (posts, report)
}
