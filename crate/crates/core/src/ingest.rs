//! Archived post streams: parsing, domain normalization and filtering.
//!
//! The wire format is one JSON object per line with the fields `id`,
//! `user_id`, `ts` (ISO-8601), `text`, `rt_user_id`, `urls`, `hashtags`,
//! `mentions` and `loc`. Lines starting with `#` are treated as comments so
//! that files written by the pipeline (which carry a provenance header) can be
//! read back.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One interaction record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub text: String,
    pub retweeted_author_id: Option<String>,
    pub urls: Vec<String>,
    /// Lowercase, without the leading `#`.
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub location: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WirePost {
    id: String,
    user_id: String,
    ts: String,
    text: String,
    rt_user_id: Option<String>,
    urls: Vec<String>,
    hashtags: Vec<String>,
    mentions: Vec<String>,
    loc: Option<String>,
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    // Offset-less timestamps are taken as UTC.
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .map(|n| n.and_utc().timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    match Utc.timestamp_opt(ts, 0).single() {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => ts.to_string(),
    }
}

fn normalize_hashtag(tag: &str) -> String {
    tag.trim().trim_start_matches('#').to_lowercase()
}

impl Post {
    fn from_wire(wire: WirePost) -> Option<Post> {
        let timestamp = parse_timestamp(&wire.ts)?;
        if wire.id.is_empty() || wire.user_id.is_empty() {
            return None;
        }
        let retweeted_author_id = match wire.rt_user_id {
            Some(rt) if rt == wire.user_id || rt.is_empty() => return None,
            other => other,
        };
        Some(Post {
            post_id: wire.id,
            author_id: wire.user_id,
            timestamp,
            text: wire.text,
            retweeted_author_id,
            urls: wire.urls,
            hashtags: wire.hashtags.iter().map(|h| normalize_hashtag(h)).collect(),
            mentions: wire.mentions,
            location: wire.loc,
        })
    }

    fn to_wire(&self) -> WirePost {
        WirePost {
            id: self.post_id.clone(),
            user_id: self.author_id.clone(),
            ts: format_timestamp(self.timestamp),
            text: self.text.clone(),
            rt_user_id: self.retweeted_author_id.clone(),
            urls: self.urls.clone(),
            hashtags: self.hashtags.clone(),
            mentions: self.mentions.clone(),
            loc: self.location.clone(),
        }
    }

    /// Serializes the post as one JSONL record (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("post serializes")
    }
}

/// Result of parsing a post stream.
#[derive(Debug, Default, Clone)]
pub struct ParsedPosts {
    pub posts: Vec<Post>,
    /// Malformed or duplicate records that were skipped.
    pub skipped: usize,
}

/// Parses a newline-delimited JSON post stream.
///
/// Malformed lines (bad JSON, missing fields, unparsable timestamp, self
/// retweets, duplicate ids) are skipped and counted. Blank lines and `#`
/// comment lines are ignored. Only an unreadable stream is fatal.
pub fn parse_posts<R: BufRead>(reader: R) -> Result<ParsedPosts> {
    let mut out = ParsedPosts::default();
    let mut seen = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let post = serde_json::from_str::<WirePost>(trimmed)
            .ok()
            .and_then(Post::from_wire);
        match post {
            Some(p) if seen.insert(p.post_id.clone()) => out.posts.push(p),
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Parses several JSONL files in order, as one corpus.
pub fn read_post_files<P: AsRef<Path>>(paths: &[P]) -> Result<ParsedPosts> {
    let mut all = ParsedPosts::default();
    let mut seen = HashSet::new();
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parsed = parse_posts(BufReader::new(file)).map_err(|e| match e {
            Error::Stream(source) => Error::io(path, source),
            other => other,
        })?;
        all.skipped += parsed.skipped;
        for p in parsed.posts {
            if seen.insert(p.post_id.clone()) {
                all.posts.push(p);
            } else {
                all.skipped += 1;
            }
        }
    }
    Ok(all)
}

pub fn write_posts<W: Write>(mut w: W, posts: &[Post]) -> std::io::Result<()> {
    for p in posts {
        writeln!(w, "{}", p.to_json_line())?;
    }
    Ok(())
}

/// Lowercased host of an absolute URL with a leading `www.` removed.
///
/// Bare hosts (`thehill.com`) are accepted too, which makes the function
/// idempotent on its own output.
pub fn extract_domain(raw: &str) -> Result<String> {
    let invalid = |reason: &str| Error::InvalidUrl {
        url: raw.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed.chars().any(char::is_whitespace) {
        return Err(invalid("empty or contains whitespace"));
    }
    let parsed = match url::Url::parse(trimmed) {
        Ok(u) => u,
        Err(url::ParseError::RelativeUrlWithoutBase) => url::Url::parse(&format!("http://{trimmed}"))
            .map_err(|e| invalid(&e.to_string()))?,
        Err(e) => return Err(invalid(&e.to_string())),
    };
    let host = parsed.host_str().ok_or_else(|| invalid("no host"))?;
    let host = host.trim_end_matches('.').to_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host).to_string();
    if !host.contains('.') || host.starts_with('.') {
        return Err(invalid("host is not a domain name"));
    }
    Ok(host)
}

/// Canonical article identity: domain plus path, query and fragment dropped.
pub fn article_key(raw: &str) -> Result<String> {
    let domain = extract_domain(raw)?;
    let path = url::Url::parse(raw.trim())
        .map(|u| u.path().trim_end_matches('/').to_string())
        .unwrap_or_default();
    Ok(format!("{domain}{path}"))
}

/// Domains excluded from influencer statistics (URL shorteners are never
/// resolved).
#[derive(Debug, Clone)]
pub struct Denylist {
    domains: BTreeSet<String>,
}

pub const DEFAULT_SHORTENERS: &[&str] = &[
    "t.co", "bit.ly", "ow.ly", "buff.ly", "tinyurl.com", "goo.gl", "dlvr.it", "ift.tt", "fb.me",
    "trib.al", "j.mp", "is.gd", "lnkd.in",
];

impl Default for Denylist {
    fn default() -> Self {
        Self::new(DEFAULT_SHORTENERS.iter().copied())
    }
}

impl Denylist {
    pub fn new<I, S>(domains: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            domains: domains
                .into_iter()
                .map(|d| d.as_ref().to_lowercase())
                .collect(),
        }
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.domains.iter().any(|d| {
            domain == d
                || (domain.len() > d.len()
                    && domain.ends_with(d.as_str())
                    && domain.as_bytes()[domain.len() - d.len() - 1] == b'.')
        })
    }
}

/// A keyword from a topic definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Keyword {
    /// `#tag`: case-insensitive substring match against hashtags.
    Hashtag(String),
    /// Bare word: case-insensitive whole-word match against text.
    Word(String),
}

impl Keyword {
    pub fn parse(raw: &str) -> Keyword {
        let raw = raw.trim();
        match raw.strip_prefix('#') {
            Some(tag) => Keyword::Hashtag(tag.to_lowercase()),
            None => Keyword::Word(raw.to_lowercase()),
        }
    }

    /// `lower_text` must already be lowercased.
    fn matches(&self, lower_text: &str, hashtags: &[String]) -> bool {
        match self {
            Keyword::Hashtag(tag) => {
                hashtags.iter().any(|h| h.contains(tag.as_str()))
                    || lower_text.contains(&format!("#{tag}"))
            }
            Keyword::Word(word) => contains_whole_word(lower_text, word),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Whole-word occurrence of `word` in `text` (both already lowercased).
pub fn contains_whole_word(text: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    let mut start = 0;
    while let Some(pos) = text[start..].find(word) {
        let begin = start + pos;
        let end = begin + word.len();
        let before_ok = text[..begin].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = text[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            return true;
        }
        start = begin + text[begin..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Reads a calendar date from either a string or a native TOML date.
pub(crate) fn de_date<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<NaiveDate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Toml(toml::value::Datetime),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(s) => s,
        Raw::Toml(dt) => match (dt.date, dt.time) {
            (Some(date), None) => date.to_string(),
            _ => return Err(serde::de::Error::custom(format!("{dt} is not a plain date"))),
        },
    };
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d").map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicConfig {
    pub name: String,
    pub keywords: Vec<String>,
    #[serde(deserialize_with = "de_date")]
    pub date_start: NaiveDate,
    #[serde(deserialize_with = "de_date")]
    pub date_end: NaiveDate,
    /// Apply the location gazetteer to this topic.
    #[serde(default)]
    pub us_only: bool,
}

impl TopicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("topic name is empty".into()));
        }
        if self.keywords.iter().all(|k| k.trim().trim_start_matches('#').is_empty()) {
            return Err(Error::Config(format!("topic {:?} has no keywords", self.name)));
        }
        if self.date_start > self.date_end {
            return Err(Error::Config(format!(
                "topic {:?}: date_start {} is after date_end {}",
                self.name, self.date_start, self.date_end
            )));
        }
        Ok(())
    }

    pub fn parsed_keywords(&self) -> Vec<Keyword> {
        self.keywords
            .iter()
            .filter(|k| !k.trim().trim_start_matches('#').is_empty())
            .map(|k| Keyword::parse(k))
            .collect()
    }

    /// Inclusive start and exclusive end, in UTC seconds.
    pub fn time_window(&self) -> (i64, i64) {
        let start = self.date_start.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp();
        let end = self.date_end.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() + 86_400;
        (start, end)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TopicConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Keeps posts inside the topic's date window that match at least one
/// keyword. Order is preserved.
pub fn filter_topic(posts: &[Post], topic: &TopicConfig) -> Vec<Post> {
    let keywords = topic.parsed_keywords();
    let (start, end) = topic.time_window();
    posts
        .iter()
        .filter(|p| p.timestamp >= start && p.timestamp < end)
        .filter(|p| {
            let lower = p.text.to_lowercase();
            keywords.iter().any(|k| k.matches(&lower, &p.hashtags))
        })
        .cloned()
        .collect()
}

/// Location terms indicating the United States.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    /// Each term as a normalized token sequence.
    terms: Vec<Vec<String>>,
    /// Single-token terms that only count when written in uppercase.
    ambiguous: HashSet<String>,
}

#[derive(Debug, Deserialize)]
struct GazetteerFile {
    terms: Vec<String>,
    ambiguous: Option<Vec<String>>,
}

pub const DEFAULT_AMBIGUOUS: &[&str] = &[
    "in", "or", "me", "ok", "hi", "oh", "id", "us", "al", "la", "ma", "pa",
];

const US_STATES: &[(&str, &str)] = &[
    ("Alabama", "AL"), ("Alaska", "AK"), ("Arizona", "AZ"), ("Arkansas", "AR"),
    ("California", "CA"), ("Colorado", "CO"), ("Connecticut", "CT"), ("Delaware", "DE"),
    ("Florida", "FL"), ("Georgia", "GA"), ("Hawaii", "HI"), ("Idaho", "ID"),
    ("Illinois", "IL"), ("Indiana", "IN"), ("Iowa", "IA"), ("Kansas", "KS"),
    ("Kentucky", "KY"), ("Louisiana", "LA"), ("Maine", "ME"), ("Maryland", "MD"),
    ("Massachusetts", "MA"), ("Michigan", "MI"), ("Minnesota", "MN"), ("Mississippi", "MS"),
    ("Missouri", "MO"), ("Montana", "MT"), ("Nebraska", "NE"), ("Nevada", "NV"),
    ("New Hampshire", "NH"), ("New Jersey", "NJ"), ("New Mexico", "NM"), ("New York", "NY"),
    ("North Carolina", "NC"), ("North Dakota", "ND"), ("Ohio", "OH"), ("Oklahoma", "OK"),
    ("Oregon", "OR"), ("Pennsylvania", "PA"), ("Rhode Island", "RI"), ("South Carolina", "SC"),
    ("South Dakota", "SD"), ("Tennessee", "TN"), ("Texas", "TX"), ("Utah", "UT"),
    ("Vermont", "VT"), ("Virginia", "VA"), ("Washington", "WA"), ("West Virginia", "WV"),
    ("Wisconsin", "WI"), ("Wyoming", "WY"), ("District of Columbia", "DC"),
];

/// Splits on commas and whitespace; dots are removed and other punctuation
/// is trimmed from token ends, so "U.S.A." becomes "USA".
fn location_tokens(raw: &str) -> Vec<String> {
    raw.split(|c: char| c == ',' || c.is_whitespace())
        .map(|t| {
            t.chars()
                .filter(|&c| c != '.')
                .collect::<String>()
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

impl Gazetteer {
    pub fn new<I, S>(terms: I, ambiguous: &[&str]) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms: Vec<Vec<String>> = terms
            .into_iter()
            .map(|t| {
                location_tokens(t.as_ref())
                    .into_iter()
                    .map(|s| s.to_lowercase())
                    .collect::<Vec<_>>()
            })
            .filter(|t| !t.is_empty())
            .collect();
        if terms.is_empty() {
            return Err(Error::Config("gazetteer has no terms".into()));
        }
        Ok(Self {
            terms,
            ambiguous: ambiguous.iter().map(|s| s.to_lowercase()).collect(),
        })
    }

    /// Country names plus all state names and postal abbreviations.
    pub fn us_default() -> Self {
        let mut terms: Vec<String> = ["USA", "US", "United States", "United States of America", "America"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (name, abbr) in US_STATES {
            terms.push(name.to_string());
            terms.push(abbr.to_string());
        }
        Self::new(terms, DEFAULT_AMBIGUOUS).expect("non-empty")
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GazetteerFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let ambiguous: Vec<&str> = match &file.ambiguous {
            Some(list) => list.iter().map(String::as_str).collect(),
            None => DEFAULT_AMBIGUOUS.to_vec(),
        };
        Self::new(&file.terms, &ambiguous)
    }

    pub fn matches(&self, location: &str) -> bool {
        let raw = location_tokens(location);
        let lower: Vec<String> = raw.iter().map(|t| t.to_lowercase()).collect();
        self.terms.iter().any(|term| {
            if term.len() > lower.len() {
                return false;
            }
            (0..=lower.len() - term.len()).any(|i| {
                if lower[i..i + term.len()] != term[..] {
                    return false;
                }
                if term.len() == 1 && self.ambiguous.contains(&term[0]) {
                    let tok = &raw[i];
                    return tok.chars().all(|c| !c.is_lowercase());
                }
                true
            })
        })
    }
}

/// Keeps posts whose stated location names a gazetteer term.
pub fn filter_us_users(posts: &[Post], gazetteer: &Gazetteer) -> Vec<Post> {
    posts
        .iter()
        .filter(|p| p.location.as_deref().is_some_and(|loc| gazetteer.matches(loc)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(id: &str, user: &str, ts: &str, text: &str, rt: Option<&str>, loc: Option<&str>) -> String {
        serde_json::json!({
            "id": id, "user_id": user, "ts": ts, "text": text, "rt_user_id": rt,
            "urls": [], "hashtags": [], "mentions": [], "loc": loc,
        })
        .to_string()
    }

    fn post(id: &str, text: &str, ts: &str, hashtags: &[&str], loc: Option<&str>) -> Post {
        Post {
            post_id: id.into(),
            author_id: format!("u{id}"),
            timestamp: parse_timestamp(ts).unwrap(),
            text: text.into(),
            retweeted_author_id: None,
            urls: vec![],
            hashtags: hashtags.iter().map(|h| h.to_string()).collect(),
            mentions: vec![],
            location: loc.map(String::from),
        }
    }

    fn topic(keywords: &[&str]) -> TopicConfig {
        TopicConfig {
            name: "t".into(),
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            date_start: NaiveDate::from_ymd_opt(2019, 2, 25).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2019, 3, 4).unwrap(),
            us_only: false,
        }
    }

    #[test]
    fn empty_stream() {
        let parsed = parse_posts("".as_bytes()).unwrap();
        assert!(parsed.posts.is_empty());
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn three_lines_in_order() {
        let input = [
            line("1", "a", "2019-02-26T10:00:00Z", "x", None, None),
            line("2", "b", "2019-02-26T11:00:00Z", "y", Some("a"), None),
            line("3", "c", "2019-02-26T12:00:00+01:00", "z", None, Some("MD")),
        ]
        .join("\n");
        let parsed = parse_posts(input.as_bytes()).unwrap();
        assert_eq!(parsed.skipped, 0);
        let ids: Vec<_> = parsed.posts.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3"]);
        assert_eq!(parsed.posts[1].retweeted_author_id.as_deref(), Some("a"));
        assert_eq!(parsed.posts[2].timestamp, parse_timestamp("2019-02-26T11:00:00Z").unwrap());
    }

    #[test]
    fn truncated_line_is_skipped() {
        let good1 = line("1", "a", "2019-02-26T10:00:00Z", "x", None, None);
        let good2 = line("2", "b", "2019-02-26T10:00:00Z", "x", None, None);
        let truncated = &line("3", "c", "2019-02-26T10:00:00Z", "x", None, None)[..20];
        let input = format!("{good1}\n{truncated}\n{good2}\n");
        let parsed = parse_posts(input.as_bytes()).unwrap();
        assert_eq!(parsed.posts.len(), 2);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn invalid_records_are_counted() {
        let self_rt = line("1", "a", "2019-02-26T10:00:00Z", "x", Some("a"), None);
        let bad_ts = line("2", "a", "yesterday", "x", None, None);
        let empty_id = line("", "a", "2019-02-26T10:00:00Z", "x", None, None);
        let dup1 = line("4", "a", "2019-02-26T10:00:00Z", "x", None, None);
        let input = [self_rt, bad_ts, empty_id, dup1.clone(), dup1].join("\n");
        let parsed = parse_posts(input.as_bytes()).unwrap();
        assert_eq!(parsed.posts.len(), 1);
        assert_eq!(parsed.skipped, 4);
    }

    #[test]
    fn hashtags_are_normalized() {
        let raw = r##"{"id":"1","user_id":"a","ts":"2019-02-26T10:00:00Z","text":"","rt_user_id":null,"urls":[],"hashtags":["#ClimateChange","GUNS"],"mentions":[],"loc":null}"##;
        let parsed = parse_posts(raw.as_bytes()).unwrap();
        assert_eq!(parsed.posts[0].hashtags, ["climatechange", "guns"]);
    }

    #[test]
    fn wire_round_trip() {
        let p = post("9", "hello", "2019-03-01T00:00:05Z", &["a"], Some("Austin, TX"));
        let parsed = parse_posts(p.to_json_line().as_bytes()).unwrap();
        assert_eq!(parsed.posts, vec![p]);
    }

    #[test]
    fn domains() {
        assert_eq!(
            extract_domain("https://www.washingtonpost.com/politics/x?y=1").unwrap(),
            "washingtonpost.com"
        );
        assert_eq!(extract_domain("http://thehill.com").unwrap(), "thehill.com");
        assert_eq!(extract_domain("HTTPS://WWW.FoxNews.com/").unwrap(), "foxnews.com");
        assert!(extract_domain("not a url").is_err());
        assert!(extract_domain("").is_err());
        assert!(extract_domain("mailto:someone").is_err());
    }

    #[test]
    fn article_keys_drop_query() {
        assert_eq!(
            article_key("https://www.nytimes.com/a/b/?utm=1#frag").unwrap(),
            "nytimes.com/a/b"
        );
    }

    #[test]
    fn denylist_matches_subdomains() {
        let deny = Denylist::default();
        assert!(deny.contains("t.co"));
        assert!(deny.contains("amp.bit.ly"));
        assert!(!deny.contains("nyt.co"));
        assert!(!deny.contains("cnn.com"));
    }

    #[test]
    fn gazetteer_whole_tokens() {
        let g = Gazetteer::us_default();
        assert!(g.matches("Baltimore, MD"));
        assert!(g.matches("new york city"));
        assert!(g.matches("U.S.A."));
        assert!(!g.matches("Madrid"));
        assert!(!g.matches("Paris, France"));
        // ambiguous abbreviations count only in uppercase
        assert!(g.matches("Portland, OR"));
        assert!(!g.matches("here or there"));
        assert!(!g.matches("living in paris"));
    }

    #[test]
    fn us_filter() {
        let g = Gazetteer::us_default();
        let posts = vec![
            post("1", "", "2019-03-01T00:00:00Z", &[], Some("Baltimore, MD")),
            post("2", "", "2019-03-01T00:00:00Z", &[], None),
            post("3", "", "2019-03-01T00:00:00Z", &[], Some("Madrid")),
        ];
        let kept = filter_us_users(&posts, &g);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].post_id, "1");
    }

    #[test]
    fn topic_filter_semantics() {
        let t = topic(&["#climatechange", "midterm"]);
        let posts = vec![
            post("1", "So hot #ClimateChange", "2019-02-26T00:00:00Z", &["climatechange"], None),
            post("2", "nothing here", "2019-02-26T00:00:00Z", &[], None),
            post("3", "Midterm elections loom", "2019-02-26T00:00:00Z", &[], None),
            post("4", "midtermish vibes", "2019-02-26T00:00:00Z", &[], None),
            post("5", "#climatechange too late", "2019-03-05T00:00:00Z", &["climatechange"], None),
            post("6", "last day", "2019-03-04T23:59:59Z", &["climatechangenow"], None),
        ];
        let kept: Vec<_> = filter_topic(&posts, &t).into_iter().map(|p| p.post_id).collect();
        assert_eq!(kept, ["1", "3", "6"]);
    }

    #[test]
    fn whole_word_matcher() {
        assert!(contains_whole_word("midterm elections loom", "midterm"));
        assert!(contains_whole_word("the #midterm!", "midterm"));
        assert!(!contains_whole_word("midtermish", "midterm"));
        assert!(!contains_whole_word("premidterm", "midterm"));
        assert!(contains_whole_word("premidterm, midterm", "midterm"));
    }

    #[test]
    fn topic_validation() {
        let mut t = topic(&["x"]);
        assert!(t.validate().is_ok());
        t.keywords = vec!["#".into()];
        assert!(t.validate().is_err());
        let mut t = topic(&["x"]);
        t.date_end = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        assert!(t.validate().is_err());
    }

    fn arb_post() -> impl Strategy<Value = Post> {
        let locs = prop_oneof![
            Just(None),
            Just(Some("Baltimore, MD".to_string())),
            Just(Some("Madrid".to_string())),
            Just(Some("portland or".to_string())),
            Just(Some("Texas".to_string())),
        ];
        let texts = prop_oneof![
            Just("midterm now"),
            Just("midtermish"),
            Just("#ClimateChange"),
            Just("plain"),
        ];
        (0u32..10_000, texts, 0i64..20, locs, proptest::bool::ANY).prop_map(|(id, text, day, loc, tag)| Post {
            post_id: id.to_string(),
            author_id: "a".into(),
            timestamp: parse_timestamp("2019-02-20T12:00:00Z").unwrap() + day * 86_400,
            text: text.into(),
            retweeted_author_id: None,
            urls: vec![],
            hashtags: if tag { vec!["climatechange".into()] } else { vec![] },
            mentions: vec![],
            location: loc,
        })
    }

    proptest! {
        #[test]
        fn filters_idempotent_and_commute(posts in proptest::collection::vec(arb_post(), 0..40)) {
            let g = Gazetteer::us_default();
            let t = topic(&["#climatechange", "midterm"]);
            let once = filter_topic(&posts, &t);
            prop_assert_eq!(filter_topic(&once, &t), once.clone());
            let us = filter_us_users(&posts, &g);
            prop_assert_eq!(filter_us_users(&us, &g), us.clone());
            let a = filter_us_users(&once, &g);
            let b = filter_topic(&us, &t);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn extract_domain_idempotent(host in "[a-v]{1,10}(\\.[a-z]{2,5}){1,2}", path in "(/[a-z0-9]{0,6}){0,3}", www in proptest::bool::ANY) {
            let url = format!("https://{}{}{}", if www { "www." } else { "" }, host, path);
            let d = extract_domain(&url).unwrap();
            prop_assert_eq!(extract_domain(&d).unwrap(), d);
        }
    }
}
