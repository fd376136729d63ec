//! Polarized corpora with planted communities and media leanings.
//!
//! Two communities of ordinary users retweet elite accounts with a planted
//! block structure, cite media from leaning pools, and use
//! community-specific hashtags and mentions. Community 0 leans left and
//! community 1 leans right.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias_predictor::{BiasLabel, Leaning};
use crate::error::{Error, Result};
use crate::ingest::Post;
use crate::seeds::{derive_seed, named_seed};
use crate::tsv::Table;
use crate::valence::Anchors;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Ordinary users per community.
    pub n_users: usize,
    /// Elite accounts per community.
    pub n_elites: usize,
    /// Chance a user retweets a given elite of their own community.
    pub p_in: f64,
    /// Chance a user retweets a given elite of the other community.
    pub p_out: f64,
    /// Retweets per linked elite are uniform in `1..=max_retweets`.
    pub max_retweets: u32,
    /// Share of users who retweet only one to four elites.
    pub casual_fraction: f64,
    /// Media per leaning (left, center, right).
    pub n_media: usize,
    pub articles_per_medium: usize,
    /// Chance a citation goes to the author's own-leaning pool; otherwise
    /// any medium is picked uniformly.
    pub citation_skew: f64,
    /// Original posts (each citing one article) per user and topic.
    pub posts_per_user: usize,
    pub hashtag_pool: usize,
    pub mention_pool: usize,
    /// Chance a hashtag or mention comes from the author's own pool.
    pub pool_affinity: f64,
    pub topics: Vec<String>,
    #[serde(deserialize_with = "crate::ingest::de_date")]
    pub start_date: NaiveDate,
    pub days: u32,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_elites: 20,
            p_in: 0.9,
            p_out: 0.1,
            max_retweets: 3,
            casual_fraction: 0.2,
            n_media: 10,
            articles_per_medium: 20,
            citation_skew: 0.8,
            posts_per_user: 4,
            hashtag_pool: 10,
            mention_pool: 10,
            pool_affinity: 0.9,
            topics: vec!["alpha".into(), "beta".into(), "gamma".into()],
            start_date: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            days: 30,
            seed: 1,
        }
    }
}

impl SynthParams {
    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_in", self.p_in),
            ("p_out", self.p_out),
            ("casual_fraction", self.casual_fraction),
            ("citation_skew", self.citation_skew),
            ("pool_affinity", self.pool_affinity),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_users == 0 || self.n_elites == 0 || self.n_media == 0 || self.articles_per_medium == 0 {
            return Err(Error::Config("user, elite, media and article counts must be positive".into()));
        }
        if self.max_retweets == 0 || self.hashtag_pool == 0 || self.mention_pool == 0 || self.days == 0 {
            return Err(Error::Config("retweet, pool and day counts must be positive".into()));
        }
        if self.topics.is_empty() || self.topics.iter().any(|t| t.is_empty() || !t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')) {
            return Err(Error::Config("topics must be non-empty alphanumeric names".into()));
        }
        Ok(())
    }
}

pub fn user_id(community: usize, i: usize) -> String {
    format!("c{community}u{i:04}")
}

pub fn elite_id(community: usize, i: usize) -> String {
    format!("c{community}elite{i:02}")
}

fn leaning_domain(leaning: Leaning, i: usize) -> String {
    format!("{}{i:02}-news.com", leaning.as_str())
}

const LOCATIONS: [&str; 8] = [
    "Austin, TX",
    "Columbus, Ohio",
    "New York, NY",
    "California",
    "Denver, CO",
    "Atlanta, Georgia",
    "Seattle, WA",
    "Florida, USA",
];

#[derive(Debug, Clone)]
pub struct SynthMedium {
    pub domain: String,
    pub leaning: Leaning,
    pub bias: BiasLabel,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    /// Ground-truth community per ordinary user.
    pub communities: BTreeMap<String, usize>,
    pub media: Vec<SynthMedium>,
    pub anchors: Anchors,
}

fn media_list(n: usize) -> Vec<SynthMedium> {
    let mut out = Vec::new();
    for leaning in Leaning::ALL {
        for i in 0..n {
            let bias = match (leaning, i % 2) {
                (Leaning::Left, 0) => BiasLabel::Left,
                (Leaning::Left, _) => BiasLabel::ExtremeLeft,
                (Leaning::Center, _) => BiasLabel::Center,
                (Leaning::Right, 0) => BiasLabel::Right,
                (Leaning::Right, _) => BiasLabel::ExtremeRight,
            };
            out.push(SynthMedium {
                domain: leaning_domain(leaning, i),
                leaning,
                bias,
            });
        }
    }
    out
}

/// Draws from the author's own pool with probability `affinity`.
fn pool_item(rng: &mut ChaCha8Rng, community: usize, affinity: f64, size: usize, kind: &str) -> String {
    let c = if rng.random::<f64>() < affinity { community } else { 1 - community };
    format!("c{c}{kind}{}", rng.random_range(0..size))
}

/// Posts of one user on one topic.
fn user_posts(p: &SynthParams, media: &[SynthMedium], topic: &str, community: usize, idx: usize, seed: u64) -> Vec<Post> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let author = user_id(community, idx);
    let start = p.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
    let span = p.days as i64 * 86_400;
    let loc = LOCATIONS[rng.random_range(0..LOCATIONS.len())].to_string();
    let mut posts = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, rt: Option<String>, url: Option<String>| {
        let k = posts.len();
        let tag = pool_item(rng, community, p.pool_affinity, p.hashtag_pool, "tag");
        let mention = pool_item(rng, community, p.pool_affinity, p.mention_pool, "voice");
        let text = match &rt {
            Some(e) => format!("RT @{e}: thoughts on #{topic} #{tag}"),
            None => format!("reading about #{topic} with @{mention} #{tag}"),
        };
        posts.push(Post {
            post_id: format!("{topic}-{author}-{k}"),
            author_id: author.clone(),
            timestamp: start + rng.random_range(0..span),
            text,
            retweeted_author_id: rt,
            urls: url.into_iter().collect(),
            hashtags: vec![topic.to_string(), tag],
            mentions: vec![mention],
            location: Some(loc.clone()),
        });
    };

    let casual = rng.random::<f64>() < p.casual_fraction;
    let mut links: Vec<String> = Vec::new();
    if casual {
        let k = rng.random_range(1..=4usize.min(2 * p.n_elites));
        let own = p.p_in / (p.p_in + p.p_out).max(f64::MIN_POSITIVE);
        let mut pool: Vec<String> = Vec::new();
        while pool.len() < k {
            let c = if rng.random::<f64>() < own { community } else { 1 - community };
            let e = elite_id(c, rng.random_range(0..p.n_elites));
            if !pool.contains(&e) {
                pool.push(e);
            }
        }
        links = pool;
    } else {
        for c in [community, 1 - community] {
            let prob = if c == community { p.p_in } else { p.p_out };
            for e in 0..p.n_elites {
                if rng.random::<f64>() < prob {
                    links.push(elite_id(c, e));
                }
            }
        }
    }
    for e in links {
        for _ in 0..rng.random_range(1..=p.max_retweets) {
            push(&mut rng, Some(e.clone()), None);
        }
    }
    let own_leaning = if community == 0 { Leaning::Left } else { Leaning::Right };
    let own: Vec<&SynthMedium> = media.iter().filter(|m| m.leaning == own_leaning).collect();
    for _ in 0..p.posts_per_user {
        let m = if rng.random::<f64>() < p.citation_skew {
            *own.choose(&mut rng).expect("non-empty pool")
        } else {
            media.choose(&mut rng).expect("non-empty media")
        };
        let url = format!("https://www.{}/story/{}", m.domain, rng.random_range(0..p.articles_per_medium));
        push(&mut rng, None, Some(url));
    }
    posts
}

/// Deterministic under `params.seed`; each (topic, user) pair has its own
/// derived seed so generation parallelizes without changing the output.
pub fn generate(params: &SynthParams) -> Result<SynthCorpus> {
    params.validate()?;
    let media = media_list(params.n_media);
    let mut jobs = Vec::new();
    for topic in &params.topics {
        for community in 0..2 {
            for i in 0..params.n_users {
                jobs.push((topic.as_str(), community, i));
            }
        }
    }
    let chunks: Vec<Vec<Post>> = jobs
        .par_iter()
        .map(|&(topic, c, i)| {
            let seed = derive_seed(named_seed(params.seed, topic), c as u64, i as u64);
            user_posts(params, &media, topic, c, i, seed)
        })
        .collect();
    let posts = chunks.into_iter().flatten().collect();
    let communities = (0..2).flat_map(|c| (0..params.n_users).map(move |i| (user_id(c, i), c))).collect();
    let mut anchors = Anchors::default();
    anchors.0.insert(leaning_domain(Leaning::Left, 0), 1);
    anchors.0.insert(leaning_domain(Leaning::Right, 0), -1);
    Ok(SynthCorpus {
        posts,
        communities,
        media,
        anchors,
    })
}

impl SynthCorpus {
    pub fn users_table(&self) -> Table {
        let mut t = Table::new(&["user_id", "community"]);
        for (u, c) in &self.communities {
            t.push([u.clone(), c.to_string()]);
        }
        t
    }

    /// Gold labels in the format the pipeline reads.
    pub fn gold_table(&self) -> Table {
        let mut t = Table::new(&["domain", "bias", "factuality"]);
        for m in &self.media {
            t.push([m.domain.as_str(), m.bias.as_str(), "mixed"]);
        }
        t
    }

    pub fn anchors_table(&self) -> Table {
        let mut t = Table::new(&["influencer", "polarity"]);
        for (id, p) in &self.anchors.0 {
            t.push([id.clone(), if *p > 0 { "left".into() } else { "right".into() }]);
        }
        t
    }

    /// Community as a string, the form `clustering::purity` expects.
    pub fn truth(&self) -> std::collections::HashMap<String, String> {
        self.communities.iter().map(|(u, c)| (u.clone(), c.to_string())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_posts, write_posts};

    fn small() -> SynthParams {
        SynthParams {
            n_users: 30,
            n_elites: 6,
            n_media: 3,
            topics: vec!["alpha".into()],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.posts, b.posts);
        let c = generate(&SynthParams { seed: 2, ..small() }).unwrap();
        assert_ne!(a.posts, c.posts);
    }

    #[test]
    fn retweets_target_elites_and_urls_use_generated_domains() {
        let corpus = generate(&small()).unwrap();
        let domains: Vec<&str> = corpus.media.iter().map(|m| m.domain.as_str()).collect();
        for p in &corpus.posts {
            if let Some(rt) = &p.retweeted_author_id {
                assert!(rt.contains("elite"));
                assert!(!corpus.communities.contains_key(rt));
            }
            for u in &p.urls {
                assert!(domains.iter().any(|d| u.contains(d)));
            }
            assert!(!p.author_id.contains("elite"));
        }
    }

    #[test]
    fn no_cross_retweets_when_p_out_is_zero() {
        let corpus = generate(&SynthParams { p_out: 0.0, ..small() }).unwrap();
        for p in &corpus.posts {
            if let Some(rt) = &p.retweeted_author_id {
                assert_eq!(&rt[..2], &p.author_id[..2]);
            }
        }
    }

    #[test]
    fn round_trips_through_parser() {
        let corpus = generate(&small()).unwrap();
        let mut buf = Vec::new();
        write_posts(&mut buf, &corpus.posts).unwrap();
        let parsed = parse_posts(buf.as_slice()).unwrap();
        assert_eq!(parsed.skipped, 0);
        assert_eq!(parsed.posts, corpus.posts);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(generate(&SynthParams { p_in: 1.5, ..small() }).is_err());
        assert!(generate(&SynthParams { topics: vec!["a b".into()], ..small() }).is_err());
    }
}
