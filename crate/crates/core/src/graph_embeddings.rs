//! node2vec embeddings of the user-to-hashtag and user-to-mention graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Post;
use crate::seeds::derive_seed;
use crate::tsv::{fmt_f64, write_file, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    Hashtag,
    Mention,
}

impl GraphMode {
    pub fn prefix(self) -> &'static str {
        match self {
            GraphMode::Hashtag => "h:",
            GraphMode::Mention => "m:",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            GraphMode::Hashtag => "u2h",
            GraphMode::Mention => "u2m",
        }
    }
}

/// Node id of a user in every graph.
pub fn user_node(user_id: &str) -> String {
    format!("u:{user_id}")
}

/// Undirected weighted graph with sorted adjacency lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedGraph {
    pub nodes: Vec<String>,
    pub adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Builds from `(a, b, weight)` triples; repeated pairs add up.
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S, f64)]) -> Result<Self> {
        let mut names = BTreeSet::new();
        for (a, b, w) in edges {
            if a.as_ref() == b.as_ref() {
                return Err(Error::InvalidInput(format!("self loop on {}", a.as_ref())));
            }
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("edge weight {w} must be positive")));
            }
            names.insert(a.as_ref().to_string());
            names.insert(b.as_ref().to_string());
        }
        let nodes: Vec<String> = names.into_iter().collect();
        let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nodes.len()];
        for (a, b, w) in edges {
            let (i, j) = (index[a.as_ref()], index[b.as_ref()]);
            *acc[i].entry(j).or_default() += w;
            *acc[j].entry(i).or_default() += w;
        }
        let adj = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        Ok(Self { nodes, adj })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let list = &self.adj[a];
        list.binary_search_by(|e| e.0.cmp(&b)).ok().map(|k| list[k].1)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Bipartite user-to-item graph: edge weight is the number of posts by the
/// user containing the item. Items are lowercased; ids containing
/// whitespace are skipped.
pub fn build_graph(posts: &[Post], mode: GraphMode) -> WeightedGraph {
    let mut counts: BTreeMap<(String, String), f64> = BTreeMap::new();
    for p in posts {
        let items = match mode {
            GraphMode::Hashtag => &p.hashtags,
            GraphMode::Mention => &p.mentions,
        };
        let distinct: BTreeSet<String> = items
            .iter()
            .map(|i| i.trim_start_matches(['#', '@']).to_lowercase())
            .filter(|i| !i.is_empty() && !i.contains(char::is_whitespace))
            .collect();
        if p.author_id.contains(char::is_whitespace) {
            continue;
        }
        for item in distinct {
            *counts.entry((user_node(&p.author_id), format!("{}{item}", mode.prefix()))).or_default() += 1.0;
        }
    }
    let edges: Vec<(String, String, f64)> = counts.into_iter().map(|((u, i), w)| (u, i, w)).collect();
    WeightedGraph::from_edges(&edges).expect("bipartite edges are valid")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingParams {
    pub dim: usize,
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    /// Single-threaded skip-gram training when set.
    pub deterministic: bool,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self {
            dim: 100,
            p: 1.0,
            q: 1.0,
            walk_length: 80,
            walks_per_node: 10,
            window: 5,
            negatives: 5,
            epochs: 1,
            learning_rate: 0.025,
            deterministic: true,
        }
    }
}

impl EmbeddingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::Config("node2vec p and q must be positive".into()));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be at least 2".into()));
        }
        if self.dim == 0 || self.window == 0 {
            return Err(Error::Config("dim and window must be positive".into()));
        }
        Ok(())
    }
}

/// Unnormalized node2vec weights of the next step from `cur`, having
/// arrived from `prev`.
fn step_weights(g: &WeightedGraph, prev: Option<usize>, cur: usize, p: f64, q: f64) -> Vec<f64> {
    g.adj[cur]
        .iter()
        .map(|&(x, w)| match prev {
            None => w,
            Some(t) if x == t => w / p,
            Some(t) if g.weight(t, x).is_some() => w,
            Some(_) => w / q,
        })
        .collect()
}

/// Normalized transition distribution over the neighbors of `cur`.
pub fn transition_probabilities(g: &WeightedGraph, prev: Option<usize>, cur: usize, p: f64, q: f64) -> Vec<(usize, f64)> {
    let w = step_weights(g, prev, cur, p, q);
    let total: f64 = w.iter().sum();
    g.adj[cur].iter().zip(w).map(|(&(x, _), wi)| (x, wi / total)).collect()
}

fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

/// Second-order biased walks, `walks_per_node` rounds over every node.
/// Each walk has its own derived seed, so the corpus does not depend on
/// the thread count. Isolated nodes yield singleton walks.
pub fn random_walks(g: &WeightedGraph, params: &EmbeddingParams, seed: u64) -> Result<Vec<Vec<usize>>> {
    params.validate()?;
    let first_order = params.p == 1.0 && params.q == 1.0;
    let cumulative: Vec<Vec<f64>> = g
        .adj
        .iter()
        .map(|a| {
            a.iter()
                .scan(0.0, |s, e| {
                    *s += e.1;
                    Some(*s)
                })
                .collect()
        })
        .collect();
    let n = g.len();
    let walks = (0..params.walks_per_node * n)
        .into_par_iter()
        .map(|k| {
            let (round, start) = (k / n.max(1), k % n.max(1));
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, round as u64, start as u64));
            let mut walk = vec![start];
            if g.adj[start].is_empty() {
                return walk;
            }
            while walk.len() < params.walk_length {
                let cur = *walk.last().unwrap();
                let prev = walk.len().checked_sub(2).map(|i| walk[i]);
                let next = if first_order || prev.is_none() {
                    let cum = &cumulative[cur];
                    let r = rng.random::<f64>() * cum[cum.len() - 1];
                    let i = cum.partition_point(|&c| c <= r).min(cum.len() - 1);
                    g.adj[cur][i].0
                } else {
                    let w = step_weights(g, prev, cur, params.p, params.q);
                    g.adj[cur][sample_index(&w, &mut rng)].0
                };
                walk.push(next);
            }
            walk
        })
        .collect();
    Ok(walks)
}

/// Learned vectors keyed by node name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeEmbeddings {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl NodeEmbeddings {
    pub fn get(&self, node: &str) -> Option<&[f64]> {
        self.vectors.get(node).map(Vec::as_slice)
    }

    /// `count d` header, then one `node v1 .. vd` line per node.
    pub fn render(&self, provenance: Option<&Provenance>) -> String {
        let mut out = String::new();
        if let Some(p) = provenance {
            out.push_str(&p.header_line());
            out.push('\n');
        }
        out.push_str(&format!("{} {}\n", self.vectors.len(), self.dim));
        for (node, v) in &self.vectors {
            out.push_str(node);
            for x in v {
                out.push(' ');
                out.push_str(&fmt_f64(*x));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
        write_file(path, &self.render(provenance))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("embedding file: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(count)), Some(Ok(dim)), None) = (h.next(), h.next(), h.next()) else {
            return Err(bad(format!("bad header {header:?}")));
        };
        let mut vectors = BTreeMap::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let node = parts.next().unwrap_or_default().to_string();
            let v: Vec<f64> = parts
                .map(|x| x.parse::<f64>().map_err(|_| bad(format!("bad number in {node}"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(bad(format!("{node} has {} values, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("{node} has a non-finite value")));
            }
            vectors.insert(node, v);
        }
        if vectors.len() != count {
            return Err(bad(format!("header says {count} vectors, found {}", vectors.len())));
        }
        Ok(Self { dim, vectors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn load(v: &AtomicU32) -> f32 {
    f32::from_bits(v.load(Ordering::Relaxed))
}

fn store(v: &AtomicU32, x: f32) {
    v.store(x.to_bits(), Ordering::Relaxed)
}

fn sigmoid(x: f32) -> f32 {
    if x > 6.0 {
        1.0
    } else if x < -6.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

struct SkipGram<'a> {
    dim: usize,
    input: &'a [AtomicU32],
    output: &'a [AtomicU32],
    noise: &'a WeightedAliasIndex<f64>,
    params: &'a EmbeddingParams,
}

impl SkipGram<'_> {
    /// One positive pair plus negatives; updates `center` input row.
    fn pair(&self, center: usize, context: usize, lr: f32, rng: &mut ChaCha8Rng, grad: &mut [f32]) {
        let d = self.dim;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let row_in = &self.input[center * d..(center + 1) * d];
        for k in 0..=self.params.negatives {
            let (target, label) = if k == 0 {
                (context, 1.0)
            } else {
                let t = self.noise.sample(rng);
                if t == context {
                    continue;
                }
                (t, 0.0)
            };
            let row_out = &self.output[target * d..(target + 1) * d];
            let dot: f32 = row_in.iter().zip(row_out).map(|(a, b)| load(a) * load(b)).sum();
            let g = (label - sigmoid(dot)) * lr;
            for (j, (a, b)) in row_in.iter().zip(row_out).enumerate() {
                let (va, vb) = (load(a), load(b));
                grad[j] += g * vb;
                store(b, vb + g * va);
            }
        }
        for (a, g) in row_in.iter().zip(grad.iter()) {
            store(a, load(a) + g);
        }
    }

    fn walks(&self, walks: &[Vec<usize>], progress: (usize, usize), seed: u64) {
        let (mut done, total) = progress;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grad = vec![0.0f32; self.dim];
        let floor = self.params.learning_rate * 1e-4;
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                let lr = (self.params.learning_rate * (1.0 - done as f32 / total as f32)).max(floor);
                done += 1;
                let b = rng.random_range(1..=self.params.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(walk.len() - 1);
                for (j, &ctx) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if j != i {
                        self.pair(center, ctx, lr, &mut rng, &mut grad);
                    }
                }
            }
        }
    }
}

/// Skip-gram with negative sampling (unigram^0.75 noise) over walk
/// windows. Returns a vector for every node index visited by some walk.
pub fn train_skipgram(walks: &[Vec<usize>], n_nodes: usize, params: &EmbeddingParams, seed: u64) -> Result<Vec<Option<Vec<f64>>>> {
    params.validate()?;
    let tokens: usize = walks.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Err(Error::InvalidInput("empty walk corpus".into()));
    }
    let mut freq = vec![0u64; n_nodes];
    for &t in walks.iter().flatten() {
        if t >= n_nodes {
            return Err(Error::InvalidInput(format!("walk visits node {t} outside 0..{n_nodes}")));
        }
        freq[t] += 1;
    }
    let noise_weights: Vec<f64> = freq.iter().map(|&f| (f as f64).powf(0.75)).collect();
    let noise = WeightedAliasIndex::new(noise_weights).map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;

    let d = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
    let half = 0.5 / d as f32;
    let input: Vec<AtomicU32> = (0..n_nodes * d).map(|_| AtomicU32::new(rng.random_range(-half..half).to_bits())).collect();
    let output: Vec<AtomicU32> = (0..n_nodes * d).map(|_| AtomicU32::new(0f32.to_bits())).collect();
    let sg = SkipGram {
        dim: d,
        input: &input,
        output: &output,
        noise: &noise,
        params,
    };
    let total = (tokens * params.epochs).max(1);
    for epoch in 0..params.epochs {
        let base = epoch * tokens;
        if params.deterministic {
            sg.walks(walks, (base, total), derive_seed(seed, 1, epoch as u64));
        } else {
            let chunks = rayon::current_num_threads().max(1);
            let size = walks.len().div_ceil(chunks).max(1);
            walks.par_chunks(size).enumerate().for_each(|(c, chunk)| {
                let done = base + walks[..c * size].iter().map(Vec::len).sum::<usize>();
                sg.walks(chunk, (done, total), derive_seed(seed, 2 + epoch as u64, c as u64));
            });
        }
    }
    Ok((0..n_nodes)
        .map(|i| (freq[i] > 0).then(|| input[i * d..(i + 1) * d].iter().map(|a| load(a) as f64).collect()))
        .collect())
}

/// Walks plus skip-gram over a whole graph; empty graphs give empty
/// embeddings.
pub fn embed_graph(g: &WeightedGraph, params: &EmbeddingParams, seed: u64) -> Result<NodeEmbeddings> {
    if g.is_empty() {
        params.validate()?;
        return Ok(NodeEmbeddings {
            dim: params.dim,
            vectors: BTreeMap::new(),
        });
    }
    let walks = random_walks(g, params, derive_seed(seed, 10, 0))?;
    let vecs = train_skipgram(&walks, g.len(), params, derive_seed(seed, 11, 0))?;
    let vectors = g.nodes.iter().zip(vecs).filter_map(|(n, v)| v.map(|v| (n.clone(), v))).collect();
    Ok(NodeEmbeddings { dim: params.dim, vectors })
}

/// Citation-weighted mean of the citing users' vectors; `None` when no
/// citing user has one.
pub fn medium_embedding(citing_users: &BTreeMap<String, u64>, users: &NodeEmbeddings) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; users.dim];
    let mut total = 0.0;
    for (u, &n) in citing_users {
        if n == 0 {
            continue;
        }
        if let Some(v) = users.get(&user_node(u)) {
            acc.iter_mut().zip(v).for_each(|(a, x)| *a += n as f64 * x);
            total += n as f64;
        }
    }
    (total > 0.0).then(|| acc.into_iter().map(|a| a / total).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(author: &str, hashtags: &[&str], mentions: &[&str]) -> Post {
        Post {
            post_id: format!("{author}{hashtags:?}"),
            author_id: author.into(),
            timestamp: 0,
            text: String::new(),
            retweeted_author_id: None,
            urls: vec![],
            hashtags: hashtags.iter().map(|s| s.to_string()).collect(),
            mentions: mentions.iter().map(|s| s.to_string()).collect(),
            location: None,
        }
    }

    #[test]
    fn graph_weights() {
        let g = build_graph(&[post("a", &["x", "y"], &[])], GraphMode::Hashtag);
        assert_eq!(g.edge_count(), 2);
        let (a, x) = (g.index_of("u:a").unwrap(), g.index_of("h:x").unwrap());
        assert_eq!(g.weight(a, x), Some(1.0));

        let posts: Vec<Post> = (0..3).map(|_| post("a", &["x"], &["bob"])).collect();
        let g = build_graph(&posts, GraphMode::Hashtag);
        assert_eq!(g.weight(0, 1), Some(3.0));
        let m = build_graph(&posts, GraphMode::Mention);
        assert!(m.index_of("m:bob").is_some());

        let empty = build_graph(&[post("a", &[], &[])], GraphMode::Hashtag);
        assert!(empty.is_empty());
        let e = embed_graph(&empty, &EmbeddingParams::default(), 1).unwrap();
        assert!(e.vectors.is_empty());
    }

    #[test]
    fn no_edges_within_a_side() {
        let posts = vec![post("a", &["x", "y"], &[]), post("b", &["y", "z"], &[])];
        let g = build_graph(&posts, GraphMode::Hashtag);
        for (i, list) in g.adj.iter().enumerate() {
            for &(j, w) in list {
                assert_ne!(&g.nodes[i][..2], &g.nodes[j][..2]);
                assert!(w >= 1.0);
            }
        }
    }

    fn path_abc() -> WeightedGraph {
        WeightedGraph::from_edges(&[("a", "b", 2.0), ("b", "c", 3.0)]).unwrap()
    }

    #[test]
    fn path_transitions() {
        let g = path_abc();
        let (a, b, c) = (0, 1, 2);
        let first = transition_probabilities(&g, None, b, 1.0, 1.0);
        assert_eq!(first, vec![(a, 0.4), (c, 0.6)]);
        // arrived from a: a weighs 2/p, c weighs 3/q
        let biased = transition_probabilities(&g, Some(a), b, 0.5, 2.0);
        let (wa, wc) = (2.0 / 0.5, 3.0 / 2.0);
        assert!((biased[0].1 - wa / (wa + wc)).abs() < 1e-15);
        let far = transition_probabilities(&g, Some(a), b, 1.0, 1e12);
        assert!((far[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn walks_follow_edges() {
        let g = WeightedGraph::from_edges(&[("a", "b", 1.0), ("b", "c", 2.0), ("c", "a", 1.0), ("c", "d", 5.0)]).unwrap();
        for (p, q) in [(1.0, 1.0), (0.25, 4.0)] {
            let params = EmbeddingParams { p, q, walk_length: 12, walks_per_node: 3, ..Default::default() };
            let walks = random_walks(&g, &params, 3).unwrap();
            assert_eq!(walks.len(), 12);
            for w in &walks {
                assert_eq!(w.len(), 12);
                for pair in w.windows(2) {
                    assert!(g.weight(pair[0], pair[1]).is_some());
                }
            }
            assert_eq!(walks, random_walks(&g, &params, 3).unwrap());
        }
        let two = EmbeddingParams { walk_length: 2, ..Default::default() };
        assert!(random_walks(&g, &two, 1).unwrap().iter().all(|w| w.len() == 2));
        assert!(random_walks(&g, &EmbeddingParams { walk_length: 1, ..Default::default() }, 1).is_err());
    }

    #[test]
    fn isolated_node_walk() {
        let mut g = path_abc();
        g.nodes.push("z".into());
        g.adj.push(vec![]);
        let walks = random_walks(&g, &EmbeddingParams { walks_per_node: 1, walk_length: 5, ..Default::default() }, 1).unwrap();
        assert_eq!(walks[3], vec![3]);
    }

    fn small() -> EmbeddingParams {
        EmbeddingParams { dim: 8, walk_length: 20, walks_per_node: 10, epochs: 3, ..Default::default() }
    }

    #[test]
    fn skipgram_shapes() {
        let g = path_abc();
        let e = embed_graph(&g, &small(), 1).unwrap();
        assert_eq!(e.vectors.len(), 3);
        assert!(e.vectors.values().all(|v| v.len() == 8 && v.iter().all(|x| x.is_finite())));
        assert_eq!(e, embed_graph(&g, &small(), 1).unwrap());
        assert!(train_skipgram(&[], 3, &small(), 1).is_err());
    }

    #[test]
    fn repeated_pair_is_similar() {
        // node 0 and 1 always co-occur; 2..6 form a separate chain
        let mut walks = vec![vec![0, 1, 0, 1, 0, 1]; 30];
        for s in 0..30 {
            walks.push((0..6).map(|k| 2 + (s + k) % 4).collect());
        }
        let v = train_skipgram(&walks, 6, &small(), 4).unwrap();
        let v: Vec<Vec<f64>> = v.into_iter().map(Option::unwrap).collect();
        let mut sum = 0.0;
        let mut n = 0.0;
        for i in 0..6 {
            for j in i + 1..6 {
                sum += cosine(&v[i], &v[j]);
                n += 1.0;
            }
        }
        assert!(cosine(&v[0], &v[1]) > sum / n);
    }

    #[test]
    fn parallel_training_is_finite() {
        let g = WeightedGraph::from_edges(&[("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)]).unwrap();
        let params = EmbeddingParams { deterministic: false, ..small() };
        let e = embed_graph(&g, &params, 2).unwrap();
        assert!(e.vectors.values().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn medium_embedding_means() {
        let mut users = NodeEmbeddings { dim: 2, vectors: BTreeMap::new() };
        users.vectors.insert("u:a".into(), vec![0.0, 4.0]);
        users.vectors.insert("u:b".into(), vec![4.0, 0.0]);
        let one: BTreeMap<String, u64> = [("a".to_string(), 5)].into();
        assert_eq!(medium_embedding(&one, &users).unwrap(), vec![0.0, 4.0]);
        let eq: BTreeMap<String, u64> = [("a".to_string(), 2), ("b".to_string(), 2)].into();
        assert_eq!(medium_embedding(&eq, &users).unwrap(), vec![2.0, 2.0]);
        let skew: BTreeMap<String, u64> = [("a".to_string(), 3), ("b".to_string(), 1), ("ghost".to_string(), 9)].into();
        assert_eq!(medium_embedding(&skew, &users).unwrap(), vec![1.0, 3.0]);
        let none: BTreeMap<String, u64> = [("ghost".to_string(), 1)].into();
        assert_eq!(medium_embedding(&none, &users), None);
    }

    #[test]
    fn text_format_round_trip() {
        let e = embed_graph(&path_abc(), &small(), 1).unwrap();
        let text = e.render(Some(&Provenance::new("h", 1)));
        assert!(text.lines().nth(1).unwrap() == "3 8");
        let back = NodeEmbeddings::parse(&text).unwrap();
        assert_eq!(back.vectors.len(), 3);
        for (k, v) in &e.vectors {
            for (a, b) in v.iter().zip(&back.vectors[k]) {
                assert!((a - b).abs() <= 5e-7);
            }
        }
        assert!(NodeEmbeddings::parse("2 2\na 1 2\n").is_err());
        assert!(NodeEmbeddings::parse("1 2\na 1\n").is_err());
    }
}
