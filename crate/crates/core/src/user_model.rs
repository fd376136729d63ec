//! Per-user retweeted-account count vectors and cosine similarity.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Post;
use crate::tsv::Table;

/// Sparse count vector of the accounts a user retweeted.
///
/// Accounts never retweeted are absent; every stored count is at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserVector {
    pub user_id: String,
    pub counts: BTreeMap<String, u32>,
}

impl UserVector {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            counts: BTreeMap::new(),
        }
    }

    pub fn from_counts<S: Into<String>>(user_id: &str, counts: impl IntoIterator<Item = (S, u32)>) -> Self {
        Self {
            user_id: user_id.to_string(),
            counts: counts
                .into_iter()
                .filter(|(_, c)| *c > 0)
                .map(|(k, c)| (k.into(), c))
                .collect(),
        }
    }

    pub fn distinct_accounts(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }

    fn squared_norm(&self) -> f64 {
        self.counts.values().map(|&c| (c as f64) * (c as f64)).sum()
    }
}

pub type UserVectors = BTreeMap<String, UserVector>;

/// Counts, per user, how often each account was retweeted. Users without a
/// single retweet get no vector.
pub fn build_vectors(posts: &[Post]) -> UserVectors {
    let mut out: UserVectors = BTreeMap::new();
    for p in posts {
        if let Some(rt) = &p.retweeted_author_id {
            *out.entry(p.author_id.clone())
                .or_insert_with(|| UserVector::new(p.author_id.clone()))
                .counts
                .entry(rt.clone())
                .or_insert(0) += 1;
        }
    }
    out
}

/// What "most active" counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    /// Topic posts of any kind.
    #[default]
    Posts,
    Retweets,
}

pub fn activity_counts(posts: &[Post], measure: Activity) -> HashMap<String, usize> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for p in posts {
        if measure == Activity::Retweets && p.retweeted_author_id.is_none() {
            continue;
        }
        *counts.entry(p.author_id.clone()).or_insert(0) += 1;
    }
    counts
}

/// The `n` most active users, ties broken by user id.
pub fn top_active(posts: &[Post], n: usize, measure: Activity) -> Vec<(String, usize)> {
    let mut ranked: Vec<(String, usize)> = activity_counts(posts, measure).into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(n);
    ranked
}

/// Cosine similarity of two count vectors; 0 when either is empty.
pub fn cosine(u: &UserVector, v: &UserVector) -> f64 {
    let (small, large) = if u.counts.len() <= v.counts.len() { (u, v) } else { (v, u) };
    let dot: f64 = small
        .counts
        .iter()
        .filter_map(|(k, &a)| large.counts.get(k).map(|&b| a as f64 * b as f64))
        .sum();
    let denom = (u.squared_norm() * v.squared_norm()).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (dot / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub user_ids: Vec<String>,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }
}

pub const DEFAULT_DENSE_CAP: usize = 2000;

/// Pairwise cosine similarity over `subset`, in the given order.
pub fn similarity_matrix(vectors: &UserVectors, subset: &[String], dense_cap: usize) -> Result<SimilarityMatrix> {
    if subset.len() > dense_cap {
        return Err(Error::InvalidInput(format!(
            "{} users exceed the dense similarity cap of {dense_cap}",
            subset.len()
        )));
    }
    let rows: Vec<&UserVector> = subset
        .iter()
        .map(|id| {
            vectors
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("user {id:?} has no retweet vector")))
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = cosine(rows[i], rows[j]);
        }
    });
    Ok(SimilarityMatrix {
        user_ids: subset.to_vec(),
        values,
    })
}

pub fn vectors_table(vectors: &UserVectors) -> Table {
    let mut t = Table::new(&["user_id", "account_id", "count"]);
    for v in vectors.values() {
        for (account, count) in &v.counts {
            t.push([v.user_id.as_str(), account.as_str(), &count.to_string()]);
        }
    }
    t
}

pub fn vectors_from_table(table: &Table) -> Result<UserVectors> {
    let bad = || Error::InvalidInput("malformed vector table".into());
    let mut out: UserVectors = BTreeMap::new();
    for row in &table.rows {
        let [user, account, count] = row.as_slice() else {
            return Err(bad());
        };
        let count: u32 = count.parse().map_err(|_| bad())?;
        out.entry(user.clone())
            .or_insert_with(|| UserVector::new(user.clone()))
            .counts
            .insert(account.clone(), count);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rt(id: usize, user: &str, target: Option<&str>) -> Post {
        Post {
            post_id: id.to_string(),
            author_id: user.into(),
            timestamp: 0,
            text: String::new(),
            retweeted_author_id: target.map(String::from),
            urls: vec![],
            hashtags: vec![],
            mentions: vec![],
            location: None,
        }
    }

    fn uv(pairs: &[(&str, u32)]) -> UserVector {
        UserVector::from_counts("x", pairs.iter().map(|&(k, c)| (k, c)))
    }

    #[test]
    fn counts_retweets_per_account() {
        let mut posts = Vec::new();
        for (target, n) in [("B", 3), ("C", 5), ("E", 8)] {
            for _ in 0..n {
                posts.push(rt(posts.len(), "A", Some(target)));
            }
        }
        let v = build_vectors(&posts);
        let a = &v["A"];
        assert_eq!(a.counts, BTreeMap::from([("B".into(), 3), ("C".into(), 5), ("E".into(), 8)]));
    }

    #[test]
    fn no_retweets_no_vectors() {
        let posts = vec![rt(0, "A", None), rt(1, "B", None)];
        assert!(build_vectors(&posts).is_empty());
    }

    #[test]
    fn disjoint_users() {
        let posts = vec![
            rt(0, "u1", Some("a")),
            rt(1, "u1", Some("a")),
            rt(2, "u1", Some("b")),
            rt(3, "u2", Some("c")),
            rt(4, "u2", None),
            rt(5, "u2", Some("d")),
        ];
        let v = build_vectors(&posts);
        assert_eq!(v.len(), 2);
        assert_eq!(v["u1"].counts, BTreeMap::from([("a".into(), 2), ("b".into(), 1)]));
        assert_eq!(v["u2"].counts, BTreeMap::from([("c".into(), 1), ("d".into(), 1)]));
    }

    fn activity_fixture(counts: &[(&str, usize)]) -> Vec<Post> {
        let mut posts = Vec::new();
        for &(u, n) in counts {
            for _ in 0..n {
                posts.push(rt(posts.len(), u, None));
            }
        }
        posts
    }

    #[test]
    fn most_active() {
        let posts = activity_fixture(&[("u3", 1), ("u1", 5), ("u2", 3)]);
        let top: Vec<_> = top_active(&posts, 2, Activity::Posts).into_iter().map(|x| x.0).collect();
        assert_eq!(top, ["u1", "u2"]);
        let posts = activity_fixture(&[("u2", 5), ("u1", 5)]);
        let top: Vec<_> = top_active(&posts, 1, Activity::Posts).into_iter().map(|x| x.0).collect();
        assert_eq!(top, ["u1"]);
    }

    #[test]
    fn most_active_clamps() {
        let counts: Vec<(String, usize)> = (0..400).map(|i| (format!("u{i:03}"), 1 + i % 7)).collect();
        let refs: Vec<(&str, usize)> = counts.iter().map(|(u, n)| (u.as_str(), *n)).collect();
        let top = top_active(&activity_fixture(&refs), 1000, Activity::Posts);
        assert_eq!(top.len(), 400);
        assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn retweet_activity() {
        let posts = vec![rt(0, "a", None), rt(1, "a", None), rt(2, "b", Some("x"))];
        let top = top_active(&posts, 1, Activity::Retweets);
        assert_eq!(top, vec![("b".to_string(), 1)]);
    }

    #[test]
    fn cosine_examples() {
        let u = uv(&[("a", 1), ("b", 2)]);
        assert_eq!(cosine(&u, &u), 1.0);
        assert_eq!(cosine(&u, &uv(&[("c", 4)])), 0.0);
        let v = uv(&[("a", 2), ("b", 1)]);
        // 4 / (sqrt 5 * sqrt 5)
        assert!((cosine(&u, &v) - 0.8).abs() < 1e-15);
        assert_eq!(cosine(&u, &uv(&[])), 0.0);
    }

    /// Independent dense oracle over a fixed account universe.
    fn dense_cosine(u: &UserVector, v: &UserVector) -> f64 {
        let keys: std::collections::BTreeSet<&String> = u.counts.keys().chain(v.counts.keys()).collect();
        let a: Vec<f64> = keys.iter().map(|k| *u.counts.get(*k).unwrap_or(&0) as f64).collect();
        let b: Vec<f64> = keys.iter().map(|k| *v.counts.get(*k).unwrap_or(&0) as f64).collect();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
    }

    #[test]
    fn matrix_matches_elementwise_oracle() {
        let mut vectors = UserVectors::new();
        for (id, pairs) in [
            ("p", vec![("a", 1), ("b", 2)]),
            ("q", vec![("a", 2), ("b", 1)]),
            ("r", vec![("c", 3)]),
        ] {
            vectors.insert(id.into(), UserVector::from_counts(id, pairs));
        }
        let two = similarity_matrix(&vectors, &["p".into(), "q".into()], 10).unwrap();
        assert_eq!(two.values.len(), 4);
        assert!((two.get(0, 1) - 0.8).abs() < 1e-15);
        let ids: Vec<String> = vec!["r".into(), "p".into(), "q".into()];
        let m = similarity_matrix(&vectors, &ids, 10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = dense_cosine(&vectors[&ids[i]], &vectors[&ids[j]]);
                assert!((m.get(i, j) - expect).abs() < 1e-12);
            }
            assert_eq!(m.get(i, i), 1.0);
        }
        assert!(similarity_matrix(&vectors, &ids, 2).is_err());
        assert!(similarity_matrix(&vectors, &["zz".into()], 10).is_err());
    }

    #[test]
    fn table_round_trip() {
        let posts = vec![rt(0, "u1", Some("a")), rt(1, "u1", Some("a")), rt(2, "u2", Some("b"))];
        let v = build_vectors(&posts);
        let t = Table::parse(&vectors_table(&v).render(None)).unwrap();
        assert_eq!(vectors_from_table(&t).unwrap(), v);
    }

    fn arb_vector() -> impl Strategy<Value = UserVector> {
        proptest::collection::btree_map("[a-f]", 1u32..20, 0..6)
            .prop_map(|m| UserVector { user_id: "x".into(), counts: m })
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(u in arb_vector(), v in arb_vector(), alpha in 1u32..50) {
            let c = cosine(&u, &v);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(c, cosine(&v, &u));
            let scaled = UserVector {
                user_id: "y".into(),
                counts: u.counts.iter().map(|(k, &x)| (k.clone(), x * alpha)).collect(),
            };
            prop_assert!((cosine(&scaled, &v) - c).abs() < 1e-12);
            prop_assert!((c - dense_cosine(&u, &v)).abs() < 1e-12);
        }

        #[test]
        fn matrix_symmetric(vs in proptest::collection::vec(arb_vector(), 1..8)) {
            let mut vectors = UserVectors::new();
            let mut ids = Vec::new();
            for (i, mut v) in vs.into_iter().enumerate() {
                v.user_id = format!("u{i}");
                ids.push(v.user_id.clone());
                vectors.insert(v.user_id.clone(), v);
            }
            let m = similarity_matrix(&vectors, &ids, 100).unwrap();
            for i in 0..ids.len() {
                for j in 0..ids.len() {
                    prop_assert!((m.get(i, j) - m.get(j, i)).abs() <= 1e-12);
                    prop_assert!((0.0..=1.0).contains(&m.get(i, j)));
                }
            }
        }
    }
}
