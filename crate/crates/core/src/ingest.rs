//! Tweet stream parsing and sampling-rate estimation.
//!
//! Input is the filtered-stream rendering of tweets: one JSON object per
//! line, interleaved with rate-limit notices (`{"limit": {...}}`). Every line
//! yields exactly one [`Parsed`] value, so a dirty stream never aborts a run.
//!
//! Limit notices only carry the cumulative number of undelivered tweets since
//! the connection was opened. Reconnects reset that counter, so the input
//! marks them with an explicit sentinel line:
//!
//! ```json
//! {"connection_boundary": {"timestamp_ms": "1583020800000"}}
//! ```

use std::borrow::Cow;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use chrono::DateTime;
use flate2::read::MultiGzDecoder;
use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One parsed tweet, reduced to what interaction extraction needs.
///
/// Account handles are stored lowercase without a leading `@`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub author_id: String,
    pub author_handle: String,
    /// Free-text location field of the author's profile.
    pub author_description: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: i64,
    pub is_retweet: bool,
    pub is_quote: bool,
    pub reply_target: Option<String>,
    pub reply_target_handle: Option<String>,
    /// Source order, duplicates kept.
    pub mentioned_accounts: Vec<String>,
    pub retweeted_account: Option<String>,
    pub quoted_account: Option<String>,
    pub shared_urls: Vec<String>,
}

impl TweetRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tweet records always serialize")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    pub fn is_reply(&self) -> bool {
        self.reply_target.is_some()
    }
}

/// A rate-limit notice: cumulative undelivered count since connection start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitNotice {
    pub timestamp_ms: i64,
    pub cumulative_undelivered: u64,
}

/// Why a line did not produce a [`TweetRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Skip {
    Malformed(String),
    Limit(LimitNotice),
    ConnectionBoundary {
        timestamp_ms: i64,
    },
    /// Valid JSON that is not a tweet (deletions, withheld notices, ...).
    NotATweet,
}

impl Skip {
    pub fn reason_code(&self) -> &'static str {
        match self {
            Skip::Malformed(_) => "malformed",
            Skip::Limit(_) => "limit_notice",
            Skip::ConnectionBoundary { .. } => "connection_boundary",
            Skip::NotATweet => "not_a_tweet",
        }
    }

    /// The marker this skip contributes to sampling estimation, if any.
    pub fn marker(&self) -> Option<StreamMarker> {
        match *self {
            Skip::Limit(n) => Some(StreamMarker::Limit(n)),
            Skip::ConnectionBoundary { timestamp_ms } => {
                Some(StreamMarker::ConnectionBoundary { timestamp_ms })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Tweet(TweetRecord),
    Skipped(Skip),
}

#[derive(Deserialize)]
struct RawLine<'a> {
    #[serde(borrow)]
    id_str: Option<Cow<'a, str>>,
    id: Option<u64>,
    #[serde(borrow)]
    created_at: Option<Cow<'a, str>>,
    #[serde(borrow)]
    timestamp_ms: Option<Cow<'a, str>>,
    #[serde(borrow)]
    user: Option<RawUser<'a>>,
    #[serde(borrow)]
    retweeted_status: Option<RawStatusRef<'a>>,
    #[serde(borrow)]
    quoted_status: Option<RawStatusRef<'a>>,
    #[serde(borrow)]
    in_reply_to_user_id_str: Option<Cow<'a, str>>,
    #[serde(borrow)]
    in_reply_to_screen_name: Option<Cow<'a, str>>,
    #[serde(borrow)]
    entities: Option<RawEntities<'a>>,
    limit: Option<RawLimit<'a>>,
    #[serde(borrow)]
    connection_boundary: Option<RawBoundary<'a>>,
    delete: Option<IgnoredAny>,
    status_withheld: Option<IgnoredAny>,
    user_withheld: Option<IgnoredAny>,
}

#[derive(Deserialize)]
struct RawUser<'a> {
    #[serde(borrow)]
    id_str: Option<Cow<'a, str>>,
    id: Option<u64>,
    #[serde(borrow)]
    screen_name: Option<Cow<'a, str>>,
    #[serde(borrow)]
    location: Option<Cow<'a, str>>,
}

#[derive(Deserialize)]
struct RawStatusRef<'a> {
    #[serde(borrow)]
    user: Option<RawUser<'a>>,
}

#[derive(Deserialize, Default)]
struct RawEntities<'a> {
    #[serde(borrow, default)]
    user_mentions: Vec<RawMention<'a>>,
    #[serde(borrow, default)]
    urls: Vec<RawUrl<'a>>,
}

#[derive(Deserialize)]
struct RawMention<'a> {
    #[serde(borrow)]
    screen_name: Option<Cow<'a, str>>,
}

#[derive(Deserialize)]
struct RawUrl<'a> {
    #[serde(borrow)]
    expanded_url: Option<Cow<'a, str>>,
    #[serde(borrow)]
    url: Option<Cow<'a, str>>,
}

#[derive(Deserialize)]
struct RawLimit<'a> {
    track: Option<u64>,
    #[serde(borrow)]
    timestamp_ms: Option<Cow<'a, str>>,
}

#[derive(Deserialize)]
struct RawBoundary<'a> {
    #[serde(borrow)]
    timestamp_ms: Option<Cow<'a, str>>,
}

fn handle(name: &str) -> String {
    name.trim_start_matches('@').to_ascii_lowercase()
}

fn parse_millis(raw: Option<&str>) -> Option<i64> {
    raw.and_then(|s| s.trim().parse().ok())
}

fn parse_created_at(raw: &str) -> Option<i64> {
    DateTime::parse_from_str(raw, "%a %b %d %H:%M:%S %z %Y")
        .ok()
        .map(|t| t.timestamp_millis())
}

fn malformed(msg: impl Into<String>) -> Parsed {
    Parsed::Skipped(Skip::Malformed(msg.into()))
}

/// Parse one line of the stream. Total: never fails, never panics.
pub fn parse_tweet(line: &str) -> Parsed {
    let line = line.trim();
    if line.is_empty() {
        return malformed("empty line");
    }
    let raw: RawLine<'_> = match serde_json::from_str(line) {
        Ok(raw) => raw,
        Err(e) => return malformed(e.to_string()),
    };

    if let Some(limit) = raw.limit {
        let Some(count) = limit.track else {
            return malformed("limit notice without a count");
        };
        let timestamp_ms = parse_millis(limit.timestamp_ms.as_deref()).unwrap_or_default();
        return Parsed::Skipped(Skip::Limit(LimitNotice {
            timestamp_ms,
            cumulative_undelivered: count,
        }));
    }
    if let Some(boundary) = raw.connection_boundary {
        let timestamp_ms = parse_millis(boundary.timestamp_ms.as_deref()).unwrap_or_default();
        return Parsed::Skipped(Skip::ConnectionBoundary { timestamp_ms });
    }
    if raw.delete.is_some() || raw.status_withheld.is_some() || raw.user_withheld.is_some() {
        return Parsed::Skipped(Skip::NotATweet);
    }

    let tweet_id = match (raw.id_str, raw.id) {
        (Some(s), _) => s.into_owned(),
        (None, Some(n)) => n.to_string(),
        (None, None) => return malformed("missing tweet id"),
    };
    let Some(user) = raw.user else {
        return malformed("missing user object");
    };
    let author_id = match (user.id_str, user.id) {
        (Some(s), _) => s.into_owned(),
        (None, Some(n)) => n.to_string(),
        (None, None) => return malformed("missing author id"),
    };
    let Some(author_handle) = user.screen_name.as_deref().map(handle) else {
        return malformed("missing author screen name");
    };
    let created_at = match parse_millis(raw.timestamp_ms.as_deref())
        .or_else(|| raw.created_at.as_deref().and_then(parse_created_at))
    {
        Some(t) => t,
        None => return malformed("missing or unparsable timestamp"),
    };

    let referenced = |status: &Option<RawStatusRef<'_>>| {
        status
            .as_ref()
            .and_then(|s| s.user.as_ref())
            .and_then(|u| u.screen_name.as_deref())
            .map(handle)
    };
    let entities = raw.entities.unwrap_or_default();

    Parsed::Tweet(TweetRecord {
        tweet_id,
        author_id,
        author_handle,
        author_description: user.location.map(Cow::into_owned).unwrap_or_default(),
        created_at,
        is_retweet: raw.retweeted_status.is_some(),
        is_quote: raw.quoted_status.is_some(),
        reply_target: raw.in_reply_to_user_id_str.map(Cow::into_owned),
        reply_target_handle: raw.in_reply_to_screen_name.as_deref().map(handle),
        mentioned_accounts: entities
            .user_mentions
            .iter()
            .filter_map(|m| m.screen_name.as_deref().map(handle))
            .collect(),
        retweeted_account: referenced(&raw.retweeted_status),
        quoted_account: referenced(&raw.quoted_status),
        shared_urls: entities
            .urls
            .into_iter()
            .filter_map(|u| u.expanded_url.or(u.url).map(Cow::into_owned))
            .collect(),
    })
}

/// Open a tweet stream, transparently decompressing gzip input.
pub fn open_stream(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = read_up_to(&mut file, &mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Anything in the stream that affects the undelivered-tweet accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMarker {
    Limit(LimitNotice),
    ConnectionBoundary { timestamp_ms: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSegment {
    pub connection: usize,
    pub timestamp_ms: i64,
    pub cumulative_undelivered: u64,
    /// Tweets lost since the previous notice of the same connection.
    pub undelivered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub delivered: u64,
    pub undelivered: u64,
    pub rate: f64,
    pub segments: Vec<SamplingSegment>,
}

fn rate(delivered: u64, undelivered: u64) -> f64 {
    let total = delivered + undelivered;
    if total == 0 {
        1.0
    } else {
        delivered as f64 / total as f64
    }
}

impl SamplingReport {
    /// Combine reports of disjoint shards. Connection indices of `other` are
    /// shifted past those of `self`.
    pub fn merge(mut self, other: SamplingReport) -> SamplingReport {
        let offset = self
            .segments
            .iter()
            .map(|s| s.connection + 1)
            .max()
            .unwrap_or(0);
        self.delivered += other.delivered;
        self.undelivered += other.undelivered;
        self.segments
            .extend(other.segments.into_iter().map(|mut s| {
                s.connection += offset;
                s
            }));
        self.rate = rate(self.delivered, self.undelivered);
        self
    }
}

/// Estimate the fraction of matching tweets the stream actually delivered.
///
/// Within a connection, each notice contributes the difference to the
/// previous notice's cumulative count (the first contributes all of it).
pub fn estimate_sampling_rate(delivered: u64, markers: &[StreamMarker]) -> Result<SamplingReport> {
    let mut segments = Vec::new();
    let mut connection = 0usize;
    let mut previous: Option<u64> = None;
    let mut undelivered = 0u64;
    for marker in markers {
        match *marker {
            StreamMarker::ConnectionBoundary { .. } => {
                if previous.is_some() {
                    connection += 1;
                }
                previous = None;
            }
            StreamMarker::Limit(notice) => {
                let base = previous.unwrap_or(0);
                if notice.cumulative_undelivered < base {
                    return Err(Error::UndeclaredConnectionBoundary {
                        previous: base,
                        current: notice.cumulative_undelivered,
                        timestamp_ms: notice.timestamp_ms,
                    });
                }
                let delta = notice.cumulative_undelivered - base;
                undelivered += delta;
                segments.push(SamplingSegment {
                    connection,
                    timestamp_ms: notice.timestamp_ms,
                    cumulative_undelivered: notice.cumulative_undelivered,
                    undelivered: delta,
                });
                previous = Some(notice.cumulative_undelivered);
            }
        }
    }
    Ok(SamplingReport {
        delivered,
        undelivered,
        rate: rate(delivered, undelivered),
        segments,
    })
}
