//! Valence of influencers with respect to the two stance clusters.
//!
//! Positive scores mean an influencer is cited disproportionately by
//! cluster C0 before sign alignment, and by the anchors' "+" side after.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{Stance, StanceLabel};
use crate::error::{Error, Result};
use crate::ingest::{article_key, extract_domain, Denylist, Post};
use crate::tsv::{fmt_f64, Table};

/// Five equal bands of [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    NegNeg,
    Neg,
    Zero,
    Pos,
    PosPos,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::NegNeg, Category::Neg, Category::Zero, Category::Pos, Category::PosPos];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::NegNeg => "--",
            Category::Neg => "-",
            Category::Zero => "0",
            Category::Pos => "+",
            Category::PosPos => "++",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn mirror(self) -> Self {
        match self {
            Category::NegNeg => Category::PosPos,
            Category::Neg => Category::Pos,
            Category::Zero => Category::Zero,
            Category::Pos => Category::Neg,
            Category::PosPos => Category::NegNeg,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bands `[-1,-0.6) [-0.6,-0.2) [-0.2,0.2) [0.2,0.6) [0.6,1]`.
pub fn bin(score: f64) -> Result<Category> {
    if !(-1.0..=1.0).contains(&score) {
        return Err(Error::ScoreOutOfRange(score));
    }
    Ok(if score < -0.6 {
        Category::NegNeg
    } else if score < -0.2 {
        Category::Neg
    } else if score < 0.2 {
        Category::Zero
    } else if score < 0.6 {
        Category::Pos
    } else {
        Category::PosPos
    })
}

/// `2 * p0 / (p0 + p1) - 1` with `p_i = tf_i / total_i`, evaluated as
/// `(p0 - p1) / (p0 + p1)` so that swapping the clusters negates the
/// result exactly. `None` when neither cluster cites the item.
pub fn valence_account(tf0: f64, total0: f64, tf1: f64, total1: f64) -> Result<Option<f64>> {
    if !(total0 > 0.0 && total1 > 0.0) {
        return Err(Error::ZeroTotals);
    }
    if !(tf0 >= 0.0 && tf1 >= 0.0) || tf0 > total0 || tf1 > total1 {
        return Err(Error::InvalidInput(format!(
            "term frequencies ({tf0}, {tf1}) must lie within [0, total] ({total0}, {total1})"
        )));
    }
    if tf0 == 0.0 && tf1 == 0.0 {
        return Ok(None);
    }
    let p0 = tf0 / total0;
    let p1 = tf1 / total1;
    Ok(Some((p0 - p1) / (p0 + p1)))
}

/// Per-article citation counts of one influencer, `[C0, C1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CitationCounts {
    pub influencer_id: String,
    pub articles: BTreeMap<String, [u64; 2]>,
}

/// `ln(n) + 1` for a positive count, 0 otherwise.
pub fn damped(n: u64) -> f64 {
    if n == 0 { 0.0 } else { (n as f64).ln() + 1.0 }
}

impl CitationCounts {
    pub fn new(influencer_id: impl Into<String>) -> Self {
        Self {
            influencer_id: influencer_id.into(),
            articles: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, article: &str, stance: Stance, n: u64) {
        self.articles.entry(article.to_string()).or_default()[stance.index()] += n;
    }

    /// Log-dampened term frequency per cluster.
    pub fn damped_tf(&self) -> [f64; 2] {
        let mut tf = [0.0; 2];
        for c in self.articles.values() {
            tf[0] += damped(c[0]);
            tf[1] += damped(c[1]);
        }
        tf
    }

    pub fn raw_tf(&self) -> [u64; 2] {
        self.articles.values().fold([0, 0], |acc, c| [acc[0] + c[0], acc[1] + c[1]])
    }

    pub fn n_citations(&self) -> u64 {
        let [a, b] = self.raw_tf();
        a + b
    }

    pub fn swapped(&self) -> Self {
        Self {
            influencer_id: self.influencer_id.clone(),
            articles: self.articles.iter().map(|(k, c)| (k.clone(), [c[1], c[0]])).collect(),
        }
    }
}

/// Sum of damped term frequencies over every influencer, per cluster.
pub fn damped_totals<'a>(all: impl IntoIterator<Item = &'a CitationCounts>) -> [f64; 2] {
    all.into_iter().fold([0.0, 0.0], |acc, c| {
        let tf = c.damped_tf();
        [acc[0] + tf[0], acc[1] + tf[1]]
    })
}

/// Valence with log-dampened article frequencies; `totals` are the
/// damped totals over all influencers of the topic.
pub fn valence_influencer(citations: &CitationCounts, totals: [f64; 2]) -> Result<Option<f64>> {
    let tf = citations.damped_tf();
    valence_account(tf[0], totals[0], tf[1], totals[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluencerKind {
    Media,
    Account,
}

impl InfluencerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InfluencerKind::Media => "media",
            InfluencerKind::Account => "account",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValenceRecord {
    pub influencer_id: String,
    pub topic: String,
    pub score: f64,
    pub category: Category,
    pub n_citations: u64,
}

impl ValenceRecord {
    pub fn new(influencer_id: &str, topic: &str, score: f64, n_citations: u64) -> Result<Self> {
        Ok(Self {
            influencer_id: influencer_id.to_string(),
            topic: topic.to_string(),
            score,
            category: bin(score)?,
            n_citations,
        })
    }

    pub fn flipped(&self) -> Self {
        let score = -self.score;
        Self {
            score,
            category: bin(score).expect("negation stays in range"),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ValenceParams {
    /// Influencers cited fewer times than this in total get no record.
    pub min_citations: u64,
    /// Extra shortener domains on top of the built-in list.
    pub denylist: Vec<String>,
}

impl Default for ValenceParams {
    fn default() -> Self {
        Self {
            min_citations: 10,
            denylist: Vec::new(),
        }
    }
}

/// Everything labeled users cited in one topic.
#[derive(Debug, Clone, Default)]
pub struct TopicCitations {
    pub media: BTreeMap<String, CitationCounts>,
    /// Retweet counts per account, `[C0, C1]`.
    pub accounts: BTreeMap<String, [u64; 2]>,
    /// Citations per (domain, user), used for medium embeddings.
    pub media_users: BTreeMap<String, BTreeMap<String, u64>>,
}

/// Counts citations by users holding a stance label. Each distinct article
/// counts once per post; shortener domains are skipped.
pub fn collect_citations(posts: &[Post], stances: &BTreeMap<String, StanceLabel>, denylist: &Denylist) -> TopicCitations {
    let mut out = TopicCitations::default();
    for post in posts {
        let Some(label) = stances.get(&post.author_id) else { continue };
        let stance = label.stance;
        if let Some(rt) = &post.retweeted_author_id {
            out.accounts.entry(rt.clone()).or_default()[stance.index()] += 1;
        }
        let mut seen = BTreeSet::new();
        for url in &post.urls {
            let (Ok(domain), Ok(key)) = (extract_domain(url), article_key(url)) else { continue };
            if denylist.contains(&domain) || !seen.insert(key.clone()) {
                continue;
            }
            out.media
                .entry(domain.clone())
                .or_insert_with(|| CitationCounts::new(&domain))
                .add(&key, stance, 1);
            *out.media_users.entry(domain).or_default().entry(post.author_id.clone()).or_default() += 1;
        }
    }
    out
}

/// Media valence records (dampened) above the citation floor.
pub fn score_media(topic: &str, cites: &TopicCitations, params: &ValenceParams) -> Result<Vec<ValenceRecord>> {
    if cites.media.is_empty() {
        return Ok(Vec::new());
    }
    let totals = damped_totals(cites.media.values());
    let mut out = Vec::new();
    for c in cites.media.values() {
        let n = c.n_citations();
        if n < params.min_citations {
            continue;
        }
        if let Some(score) = valence_influencer(c, totals)? {
            out.push(ValenceRecord::new(&c.influencer_id, topic, score, n)?);
        }
    }
    Ok(out)
}

/// Account valence records (raw retweet frequencies) above the floor.
pub fn score_accounts(topic: &str, cites: &TopicCitations, params: &ValenceParams) -> Result<Vec<ValenceRecord>> {
    if cites.accounts.is_empty() {
        return Ok(Vec::new());
    }
    let totals = cites.accounts.values().fold([0u64; 2], |a, c| [a[0] + c[0], a[1] + c[1]]);
    let mut out = Vec::new();
    for (acc, c) in &cites.accounts {
        let n = c[0] + c[1];
        if n < params.min_citations {
            continue;
        }
        if let Some(score) = valence_account(c[0] as f64, totals[0] as f64, c[1] as f64, totals[1] as f64)? {
            out.push(ValenceRecord::new(acc, topic, score, n)?);
        }
    }
    Ok(out)
}

/// Declared polarity of anchor influencers: +1 for the "+" (left) side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Anchors(pub BTreeMap<String, i8>);

impl Anchors {
    pub fn parse_polarity(s: &str) -> Option<i8> {
        match s.trim().to_ascii_lowercase().as_str() {
            "+" | "+1" | "1" | "left" => Some(1),
            "-" | "-1" | "right" => Some(-1),
            _ => None,
        }
    }

    /// TSV with columns `influencer` and `polarity`.
    pub fn from_table(t: &Table) -> Result<Self> {
        let (Some(i), Some(p)) = (t.column("influencer"), t.column("polarity")) else {
            return Err(Error::Config("anchor file needs influencer and polarity columns".into()));
        };
        let mut map = BTreeMap::new();
        for row in &t.rows {
            let pol = row
                .get(p)
                .and_then(|s| Self::parse_polarity(s))
                .ok_or_else(|| Error::Config(format!("bad anchor polarity in row {row:?}")))?;
            let id = row.get(i).map(|s| s.as_str()).unwrap_or("");
            let id = extract_domain(id).unwrap_or_else(|_| id.to_string());
            map.insert(id, pol);
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_table(&Table::read(path)?)
    }
}

/// `Some(+1)` or `Some(-1)` from the citation-weighted mean of
/// `score * polarity` over the anchors scored in `records`; `None` when no
/// anchor is scored. A mean of exactly zero keeps the orientation.
pub fn alignment_sign(records: &[ValenceRecord], anchors: &Anchors) -> Option<i8> {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records {
        if let Some(&pol) = anchors.0.get(&r.influencer_id) {
            num += r.n_citations as f64 * r.score * pol as f64;
            den += r.n_citations as f64;
        }
    }
    if den == 0.0 {
        return None;
    }
    Some(if num < 0.0 { -1 } else { 1 })
}

pub fn apply_sign(records: &[ValenceRecord], sign: i8) -> Vec<ValenceRecord> {
    if sign < 0 {
        records.iter().map(ValenceRecord::flipped).collect()
    } else {
        records.to_vec()
    }
}

/// Aligns every topic; topics without a scored anchor map to `None` and
/// keep no records in the result.
pub fn align_signs(
    per_topic: &BTreeMap<String, Vec<ValenceRecord>>,
    anchors: &Anchors,
) -> (BTreeMap<String, Vec<ValenceRecord>>, BTreeMap<String, Option<i8>>) {
    let mut aligned = BTreeMap::new();
    let mut signs = BTreeMap::new();
    for (topic, recs) in per_topic {
        let sign = alignment_sign(recs, anchors);
        signs.insert(topic.clone(), sign);
        if let Some(s) = sign {
            aligned.insert(topic.clone(), apply_sign(recs, s));
        }
    }
    (aligned, signs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageValence {
    pub influencer_id: String,
    pub score: f64,
    pub category: Category,
    pub n_topics: usize,
}

/// Unweighted mean over the topics where each influencer has a score.
pub fn average_valence<'a>(records: impl IntoIterator<Item = &'a ValenceRecord>) -> BTreeMap<String, AverageValence> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(&r.influencer_id).or_default();
        e.0 += r.score;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (sum, n))| {
            let score = (sum / n as f64).clamp(-1.0, 1.0);
            let avg = AverageValence {
                influencer_id: id.to_string(),
                score,
                category: bin(score).expect("mean of in-range scores"),
                n_topics: n,
            };
            (id.to_string(), avg)
        })
        .collect()
}

pub const RECORD_COLUMNS: [&str; 5] = ["influencer", "topic", "score", "category", "n_citations"];

pub fn records_table(records: &[ValenceRecord]) -> Table {
    let mut t = Table::new(&RECORD_COLUMNS);
    for r in records {
        t.push([
            r.influencer_id.clone(),
            r.topic.clone(),
            fmt_f64(r.score),
            r.category.to_string(),
            r.n_citations.to_string(),
        ]);
    }
    t
}

pub fn records_from_table(t: &Table) -> Result<Vec<ValenceRecord>> {
    let cols: Vec<usize> = RECORD_COLUMNS
        .iter()
        .map(|c| t.column(c).ok_or_else(|| Error::InvalidInput(format!("valence table lacks column {c}"))))
        .collect::<Result<_>>()?;
    t.rows
        .iter()
        .map(|row| {
            let bad = || Error::InvalidInput(format!("bad valence row {row:?}"));
            let get = |i: usize| row.get(cols[i]).ok_or_else(bad);
            let score: f64 = get(2)?.parse().map_err(|_| bad())?;
            let n: u64 = get(4)?.parse().map_err(|_| bad())?;
            ValenceRecord::new(get(0)?, get(1)?, score, n)
        })
        .collect()
}

pub fn averages_table(avgs: &BTreeMap<String, AverageValence>) -> Table {
    let mut t = Table::new(&["influencer", "score", "category", "n_topics"]);
    for a in avgs.values() {
        t.push([a.influencer_id.clone(), fmt_f64(a.score), a.category.to_string(), a.n_topics.to_string()]);
    }
    t
}
