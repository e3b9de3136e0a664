//! Gazetteer-driven toponym spotting over post text and hashtags.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;

use crate::gazetteer::{normalize_name, Gazetteer};
use crate::ingest::{link_spans, marker_spans, Post};

/// Longest name, in tokens, that is looked up.
pub const MAX_NGRAM: usize = 4;

/// Single-token matches on these words are ignored.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "alert", "an", "and", "are", "as", "at", "be", "before", "by",
    "down", "flood", "flooding", "floods", "for", "from", "help", "here", "i", "in", "is", "it",
    "just", "live", "my", "near", "new", "news", "no", "not", "now", "of", "on", "or", "our",
    "out", "over", "rain", "rt", "so", "storm", "the", "there", "this", "to", "up", "update",
    "via", "was", "water", "we", "with", "you",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToponymMention {
    pub surface: String,
    /// Token range, end exclusive, over the post's token stream (text tokens
    /// followed by tokens of hashtags not present in the text).
    pub token_span: (usize, usize),
    pub from_hashtag: bool,
    /// Ordered by importance then id; never empty.
    pub candidates: Vec<u64>,
}

struct Token {
    start: usize,
    end: usize,
    norm: String,
}

struct Segment<'a> {
    source: &'a str,
    tokens: Vec<Token>,
    from_hashtag: bool,
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

const SEGMENT_BREAKS: &[char] = &[',', ';', ':', '!', '?', '(', ')', '"', '\n'];

/// Splits free text into word tokens, starting a new segment at clause punctuation.
fn text_segments<'a>(source: &'a str, offset: usize, out: &mut Vec<Segment<'a>>) {
    let mut current = Vec::new();
    let mut start: Option<usize> = None;
    let flush = |start: &mut Option<usize>, end: usize, current: &mut Vec<Token>| {
        if let Some(s) = start.take() {
            let norm = normalize_name(&source[s..end]);
            if !norm.is_empty() {
                current.push(Token {
                    start: s,
                    end,
                    norm,
                });
            }
        }
    };
    for (i, c) in source.char_indices().skip_while(|(i, _)| *i < offset) {
        if is_token_char(c) {
            start.get_or_insert(i);
            continue;
        }
        flush(&mut start, i, &mut current);
        if SEGMENT_BREAKS.contains(&c) && !current.is_empty() {
            out.push(Segment {
                source,
                tokens: std::mem::take(&mut current),
                from_hashtag: false,
            });
        }
    }
    flush(&mut start, source.len(), &mut current);
    if !current.is_empty() {
        out.push(Segment {
            source,
            tokens: current,
            from_hashtag: false,
        });
    }
}

#[derive(Clone, Copy, PartialEq)]
enum CharKind {
    Upper,
    Lower,
    Digit,
    Other,
}

fn kind(c: char) -> CharKind {
    if c.is_numeric() {
        CharKind::Digit
    } else if c.is_uppercase() {
        CharKind::Upper
    } else if c.is_alphabetic() || is_combining_mark(c) {
        CharKind::Lower
    } else {
        CharKind::Other
    }
}

/// Byte ranges of the words inside a hashtag body.
///
/// Splits at underscores, letter/digit changes and case changes. An uppercase
/// run of three or more followed by lowercase gives its last capital to the
/// next word (`UKFloods` -> `UK Floods`); a two-letter run stays whole
/// (`UKfloods` -> `UK floods`).
pub fn split_hashtag(tag: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = tag.char_indices().collect();
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let k = kind(c);
        if k == CharKind::Other {
            if let Some(s) = start.take() {
                words.push((s, pos));
            }
            i += 1;
            continue;
        }
        match start {
            None => start = Some(pos),
            Some(s) => {
                let prev = kind(chars[i - 1].1);
                let boundary = match (prev, k) {
                    (CharKind::Digit, CharKind::Digit) => false,
                    (CharKind::Digit, _) | (_, CharKind::Digit) => true,
                    (CharKind::Lower, CharKind::Upper) => true,
                    (CharKind::Upper, CharKind::Lower) => {
                        let run = chars[..i]
                            .iter()
                            .rev()
                            .take_while(|(p, c)| *p >= s && kind(*c) == CharKind::Upper)
                            .count();
                        if run >= 3 {
                            // the last capital opens the next word
                            let cut = chars[i - 1].0;
                            words.push((s, cut));
                            start = Some(cut);
                            false
                        } else {
                            run == 2
                        }
                    }
                    _ => false,
                };
                if boundary {
                    words.push((s, pos));
                    start = Some(pos);
                }
            }
        }
        i += 1;
    }
    if let Some(s) = start {
        words.push((s, tag.len()));
    }
    words
}

fn hashtag_segment(source: &str, body_start: usize, body_end: usize) -> Segment<'_> {
    let body = &source[body_start..body_end];
    let tokens = split_hashtag(body)
        .into_iter()
        .filter_map(|(s, e)| {
            let norm = normalize_name(&body[s..e]);
            (!norm.is_empty()).then(|| Token {
                start: body_start + s,
                end: body_start + e,
                norm,
            })
        })
        .collect();
    Segment {
        source,
        tokens,
        from_hashtag: true,
    }
}

/// Spots gazetteer names in posts.
pub struct ToponymExtractor<'g> {
    gazetteer: &'g Gazetteer,
    stopwords: HashSet<String>,
}

impl<'g> ToponymExtractor<'g> {
    pub fn new(gazetteer: &'g Gazetteer) -> Self {
        Self::with_stopwords(gazetteer, DEFAULT_STOPWORDS.iter().copied())
    }

    pub fn with_stopwords<'s>(gazetteer: &'g Gazetteer, words: impl IntoIterator<Item = &'s str>) -> Self {
        Self {
            gazetteer,
            stopwords: words.into_iter().map(normalize_name).collect(),
        }
    }

    pub fn gazetteer(&self) -> &'g Gazetteer {
        self.gazetteer
    }

    /// Greedy left-to-right longest match over text tokens and split
    /// hashtags. Mentions and links are never matched.
    pub fn extract(&self, post: &Post) -> Vec<ToponymMention> {
        let text = post.text.as_str();
        let links = link_spans(text);
        let mut skip: Vec<(usize, usize, bool)> = links.iter().map(|&(s, e)| (s, e, false)).collect();
        skip.extend(marker_spans(text, '@', &links).into_iter().map(|(s, e)| (s, e, false)));
        let tags = marker_spans(text, '#', &links);
        skip.extend(tags.iter().map(|&(s, e)| (s, e, true)));
        skip.sort_unstable();

        let mut segments = Vec::new();
        let mut cursor = 0;
        for &(s, e, is_tag) in &skip {
            if s > cursor {
                text_segments(&text[..s], cursor, &mut segments);
            }
            if is_tag {
                segments.push(hashtag_segment(text, s + 1, e));
            }
            cursor = e;
        }
        text_segments(text, cursor, &mut segments);

        let in_text: HashSet<String> = tags.iter().map(|&(s, e)| text[s + 1..e].to_lowercase()).collect();
        for tag in post.hashtags.iter().filter(|t| !in_text.contains(*t)) {
            segments.push(hashtag_segment(tag, 0, tag.len()));
        }

        let mut mentions = Vec::new();
        let mut base = 0;
        for seg in &segments {
            self.match_segment(seg, base, &mut mentions);
            base += seg.tokens.len();
        }
        mentions
    }

    fn match_segment(&self, seg: &Segment<'_>, base: usize, out: &mut Vec<ToponymMention>) {
        let toks = &seg.tokens;
        let mut i = 0;
        while i < toks.len() {
            let longest = MAX_NGRAM.min(toks.len() - i);
            let mut matched = 0;
            for n in (1..=longest).rev() {
                let key = toks[i..i + n].iter().map(|t| t.norm.as_str()).collect::<Vec<_>>().join(" ");
                if !self.gazetteer.contains_name(&key) {
                    continue;
                }
                if n == 1 && self.stopwords.contains(&key) {
                    break;
                }
                let candidates: Vec<u64> = self.gazetteer.lookup_name(&key).iter().map(|p| p.place_id).collect();
                out.push(ToponymMention {
                    surface: seg.source[toks[i].start..toks[i + n - 1].end].to_string(),
                    token_span: (base + i, base + i + n),
                    from_hashtag: seg.from_hashtag,
                    candidates,
                });
                matched = n;
                break;
            }
            i += matched.max(1);
        }
    }
}
