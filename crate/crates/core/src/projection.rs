//! Two-dimensional projection of user vectors by fuzzy k-NN graph layout.
//!
//! Three stages: an exact k-nearest-neighbour graph under cosine distance,
//! per-point smoothed exponential memberships combined with the
//! probabilistic t-conorm, and stochastic-gradient layout optimization with
//! negative sampling.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::tsv::{fmt_f64, Table};
use crate::user_model::{cosine, SimilarityMatrix, UserVector};

/// Directed k-nearest-neighbour graph. Row `i` lists its `k` neighbours in
/// ascending distance, ties broken by index.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub k: usize,
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn nearest_from_row(i: usize, row: impl Iterator<Item = f64>, k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut cand: Vec<(f64, usize)> = row
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, d)| (d, j))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.truncate(k);
    cand.into_iter().map(|(d, j)| (j, d)).unzip()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 || n <= k {
        return Err(Error::TooFewPoints { n, k });
    }
    Ok(())
}

/// Exact k-NN graph under cosine distance `1 - cosine`.
pub fn knn_graph(vectors: &[&UserVector], k: usize) -> Result<KnnGraph> {
    let n = vectors.len();
    check_k(n, k)?;
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| nearest_from_row(i, vectors.iter().map(|v| 1.0 - cosine(vectors[i], v)), k))
        .collect();
    let (indices, distances) = rows.into_iter().unzip();
    Ok(KnnGraph { k, indices, distances })
}

/// Same as [`knn_graph`], reading distances off a precomputed matrix.
pub fn knn_from_similarity(sim: &SimilarityMatrix, k: usize) -> Result<KnnGraph> {
    let n = sim.len();
    check_k(n, k)?;
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| nearest_from_row(i, (0..n).map(|j| 1.0 - sim.get(i, j)), k))
        .collect();
    let (indices, distances) = rows.into_iter().unzip();
    Ok(KnnGraph { k, indices, distances })
}

const SMOOTH_K_TOLERANCE: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;

/// Distance to the nearest neighbour at non-zero distance, and the
/// bandwidth that makes the memberships sum to `log2(k)`.
fn smooth_knn_dist(distances: &[f64], mean_all: f64) -> (f64, f64) {
    let target = (distances.len() as f64).log2();
    let rho = distances.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let (mut lo, mut hi, mut mid) = (0.0_f64, f64::INFINITY, 1.0_f64);
    for _ in 0..64 {
        let psum: f64 = distances
            .iter()
            .map(|&d| {
                let gap = d - rho;
                if gap > 0.0 { (-gap / mid).exp() } else { 1.0 }
            })
            .sum();
        if (psum - target).abs() < SMOOTH_K_TOLERANCE {
            break;
        }
        if psum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    let mean_row = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
    let floor = if rho > 0.0 { mean_row } else { mean_all } * MIN_K_DIST_SCALE;
    (rho, mid.max(floor))
}

/// Per-point membership strengths before symmetrization; row `i` aligns
/// with `knn.indices[i]`.
pub fn directed_memberships(knn: &KnnGraph) -> Vec<Vec<f64>> {
    let count: usize = knn.distances.iter().map(Vec::len).sum();
    let mean_all = knn.distances.iter().flatten().sum::<f64>() / count.max(1) as f64;
    knn.distances
        .iter()
        .map(|row| {
            let (rho, sigma) = smooth_knn_dist(row, mean_all);
            row.iter()
                .map(|&d| {
                    let gap = d - rho;
                    if gap <= 0.0 || sigma == 0.0 { 1.0 } else { (-gap / sigma).exp() }
                })
                .collect()
        })
        .collect()
}

/// Probabilistic t-conorm.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    a + b - a * b
}

/// Undirected weighted graph; every edge is stored once with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl FuzzyGraph {
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, w) in &self.edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }
}

/// Fuzzy simplicial set of the k-NN graph.
pub fn fuzzy_weights(knn: &KnnGraph) -> FuzzyGraph {
    let memberships = directed_memberships(knn);
    let mut directed = std::collections::BTreeMap::new();
    for (i, (row, ws)) in knn.indices.iter().zip(&memberships).enumerate() {
        for (&j, &w) in row.iter().zip(ws) {
            directed.insert((i, j), w);
        }
    }
    let mut edges = Vec::new();
    for (&(i, j), &w) in &directed {
        let back = directed.get(&(j, i)).copied();
        if back.is_some() && j < i {
            continue;
        }
        let w = fuzzy_union(w, back.unwrap_or(0.0));
        if w > 0.0 {
            edges.push(if i < j { (i, j, w) } else { (j, i, w) });
        }
    }
    edges.sort_by_key(|e| (e.0, e.1));
    FuzzyGraph { n: knn.len(), edges }
}

/// Fits `1 / (1 + a x^(2b))` to the offset exponential target curve by
/// Levenberg-Marquardt.
pub fn fit_curve(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b) = (1.0_f64, 1.0_f64);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = if x > 0.0 { x.powf(2.0 * b) } else { 0.0 };
            let denom = 1.0 + a * p;
            let r = 1.0 / denom - y;
            let da = -p / (denom * denom);
            let db = if x > 0.0 { -a * p * 2.0 * x.ln() / (denom * denom) } else { 0.0 };
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let m00 = jaa * (1.0 + lambda);
            let m11 = jbb * (1.0 + lambda);
            let det = m00 * m11 - jab * jab;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m11 * ga - jab * gb) / det;
            let step_b = -(m00 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            if na > 0.0 && nb > 0.0 {
                let c = sse(na, nb);
                if c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    a = na;
                    b = nb;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Spectral,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionParams {
    pub n_neighbors: usize,
    pub dims: usize,
    pub epochs: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub repulsion_strength: f64,
    pub init: Init,
    /// Single-threaded, bit-reproducible optimization.
    pub deterministic: bool,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            dims: 2,
            epochs: 200,
            min_dist: 0.1,
            spread: 1.0,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            repulsion_strength: 1.0,
            init: Init::Spectral,
            deterministic: true,
        }
    }
}

/// Point coordinates, row-major `n x dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub user_ids: Vec<String>,
    pub dims: usize,
    pub coords: Vec<f64>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.coords.chunks(self.dims).map(<[f64]>::to_vec).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut cols = vec!["user_id".to_string()];
        cols.extend(["x", "y", "z"].iter().take(self.dims).map(|s| s.to_string()));
        let mut t = Table::new(&cols);
        for (i, id) in self.user_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.point(i).iter().map(|&v| fmt_f64(v)));
            t.push(row);
        }
        t
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let dims = table.columns.len().saturating_sub(1);
        let bad = || Error::InvalidInput("malformed embedding table".into());
        if dims == 0 {
            return Err(bad());
        }
        let mut user_ids = Vec::new();
        let mut coords = Vec::new();
        for row in &table.rows {
            if row.len() != dims + 1 {
                return Err(bad());
            }
            user_ids.push(row[0].clone());
            for v in &row[1..] {
                coords.push(v.parse::<f64>().map_err(|_| bad())?);
            }
        }
        Ok(Self { user_ids, dims, coords })
    }
}

fn random_init(n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * dims).map(|_| rng.random_range(-10.0..10.0)).collect()
}

/// Eigenvectors of the normalized adjacency `D^-1/2 W D^-1/2` for the
/// largest eigenvalues below the trivial one, via Lanczos with full
/// reorthogonalization. `None` when the graph has isolated vertices or the
/// Ritz vectors do not converge.
pub fn spectral_init(graph: &FuzzyGraph, dims: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let n = graph.n;
    if n <= dims + 1 {
        return None;
    }
    let adj = graph.adjacency();
    let deg: Vec<f64> = adj.iter().map(|row| row.iter().map(|e| e.1).sum()).collect();
    if deg.iter().any(|&d| d <= 0.0) {
        return None;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    // shifted operator (I + N) / 2 has spectrum in [0, 1]
    let apply = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            let s: f64 = adj[i].iter().map(|&(j, w)| w * inv_sqrt[j] * x[j]).sum();
            y[i] = 0.5 * (x[i] + inv_sqrt[i] * s);
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut trivial: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
    let tn = dot(&trivial, &trivial).sqrt();
    trivial.iter_mut().for_each(|v| *v /= tn);

    let m = (n - 1).min(120.max(4 * dims));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alphas = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);
    let orthogonalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for _ in 0..2 {
            let c = dot(v, &trivial);
            v.iter_mut().zip(&trivial).for_each(|(x, t)| *x -= c * t);
            for b in basis {
                let c = dot(v, b);
                v.iter_mut().zip(b).for_each(|(x, t)| *x -= c * t);
            }
        }
    };
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, &basis);
    let norm = dot(&v, &v).sqrt();
    if norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    let mut w = vec![0.0; n];
    for step in 0..m {
        apply(&v, &mut w);
        let alpha = dot(&w, &v);
        alphas.push(alpha);
        basis.push(v.clone());
        if step + 1 == m {
            break;
        }
        let mut next = w.clone();
        orthogonalize(&mut next, &basis);
        let beta = dot(&next, &next).sqrt();
        if beta < 1e-10 {
            break;
        }
        betas.push(beta);
        next.iter_mut().for_each(|x| *x /= beta);
        v = next;
    }
    let k = basis.len();
    if k < dims {
        return None;
    }
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = t.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n * dims];
    let mut y = vec![0.0; n];
    let mut ay = vec![0.0; n];
    for (d, &idx) in order.iter().take(dims).enumerate() {
        let theta = eig.eigenvalues[idx];
        y.iter_mut().for_each(|x| *x = 0.0);
        for (c, b) in basis.iter().enumerate() {
            let coef = eig.eigenvectors[(c, idx)];
            y.iter_mut().zip(b).for_each(|(x, bv)| *x += coef * bv);
        }
        apply(&y, &mut ay);
        let resid = ay.iter().zip(&y).map(|(a, b)| (a - theta * b).powi(2)).sum::<f64>().sqrt();
        if !resid.is_finite() || resid > 1e-3 {
            return None;
        }
        for i in 0..n {
            out[i * dims + d] = y[i];
        }
    }
    Some(out)
}

/// Starting coordinates: spectral (falling back to uniform random when the
/// eigensolver fails), expanded to a 10-unit box with a little noise and
/// min-max rescaled to `[0, 10]` per axis.
pub fn initialize(graph: &FuzzyGraph, params: &ProjectionParams, seed: u64) -> Vec<f64> {
    let n = graph.n;
    let dims = params.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectral = match params.init {
        Init::Spectral => spectral_init(graph, dims, &mut rng),
        Init::Random => None,
    };
    let mut coords = match spectral {
        Some(mut c) => {
            let max = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let noise = Normal::new(0.0, 1e-4).unwrap();
            let expansion = if max > 0.0 { 10.0 / max } else { 1.0 };
            c.iter_mut().for_each(|v| *v = *v * expansion + noise.sample(&mut rng));
            c
        }
        None => {
            if params.init == Init::Spectral && n > dims + 1 {
                log::debug!("spectral initialization failed; using random initialization");
            }
            random_init(n, dims, &mut rng)
        }
    };
    if n > 1 {
        for d in 0..dims {
            let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = coords[i * dims + d];
                (lo.min(v), hi.max(v))
            });
            if hi > lo {
                for i in 0..n {
                    coords[i * dims + d] = 10.0 * (coords[i * dims + d] - lo) / (hi - lo);
                }
            }
        }
    }
    coords
}

/// Coordinate storage shared by the serial and the lock-free kernels.
trait Coords {
    fn read(&self, idx: usize) -> f64;
    fn bump(&self, idx: usize, delta: f64);
}

impl Coords for [Cell<f64>] {
    fn read(&self, idx: usize) -> f64 {
        self[idx].get()
    }
    fn bump(&self, idx: usize, delta: f64) {
        self[idx].set(self[idx].get() + delta);
    }
}

// Racy read-modify-write is intended here (Hogwild-style updates).
impl Coords for [AtomicU64] {
    fn read(&self, idx: usize) -> f64 {
        f64::from_bits(self[idx].load(Ordering::Relaxed))
    }
    fn bump(&self, idx: usize, delta: f64) {
        let v = self.read(idx) + delta;
        self[idx].store(v.to_bits(), Ordering::Relaxed);
    }
}

struct Sampled {
    head: usize,
    tail: usize,
    per_sample: f64,
    next: f64,
    per_negative: f64,
    next_negative: f64,
}

struct Kernel {
    n: usize,
    dims: usize,
    a: f64,
    b: f64,
    gamma: f64,
}

fn clip(v: f64) -> f64 {
    v.clamp(-4.0, 4.0)
}

impl Kernel {
    fn squared_distance<C: Coords + ?Sized>(&self, c: &C, i: usize, j: usize) -> f64 {
        (0..self.dims)
            .map(|d| {
                let diff = c.read(i * self.dims + d) - c.read(j * self.dims + d);
                diff * diff
            })
            .sum()
    }

    fn edge_step<C: Coords + ?Sized>(&self, c: &C, e: &mut Sampled, epoch: f64, alpha: f64, rng: &mut ChaCha8Rng) {
        if e.next > epoch {
            return;
        }
        let (i, j, dims) = (e.head, e.tail, self.dims);
        let dist_sq = self.squared_distance(c, i, j);
        let coeff = if dist_sq > 0.0 {
            -2.0 * self.a * self.b * dist_sq.powf(self.b - 1.0) / (self.a * dist_sq.powf(self.b) + 1.0)
        } else {
            0.0
        };
        for d in 0..dims {
            let g = clip(coeff * (c.read(i * dims + d) - c.read(j * dims + d)));
            c.bump(i * dims + d, g * alpha);
            c.bump(j * dims + d, -g * alpha);
        }
        e.next += e.per_sample;

        let n_neg = ((epoch - e.next_negative) / e.per_negative).floor().max(0.0) as usize;
        for _ in 0..n_neg {
            let k = rng.random_range(0..self.n);
            if k == i {
                continue;
            }
            let dist_sq = self.squared_distance(c, i, k);
            let coeff = if dist_sq > 0.0 {
                2.0 * self.gamma * self.b / ((0.001 + dist_sq) * (self.a * dist_sq.powf(self.b) + 1.0))
            } else {
                0.0
            };
            if coeff > 0.0 {
                for d in 0..dims {
                    let g = clip(coeff * (c.read(i * dims + d) - c.read(k * dims + d)));
                    c.bump(i * dims + d, g * alpha);
                }
            }
        }
        e.next_negative += n_neg as f64 * e.per_negative;
    }
}

fn schedule(graph: &FuzzyGraph, epochs: usize, negative_rate: usize) -> Vec<Sampled> {
    let max_w = graph.edges.iter().fold(0.0_f64, |m, e| m.max(e.2));
    let mut out = Vec::with_capacity(graph.edges.len() * 2);
    for &(i, j, w) in &graph.edges {
        // edges too weak to be sampled even once are dropped
        if w <= 0.0 || w < max_w / epochs as f64 {
            continue;
        }
        let per_sample = max_w / w;
        let per_negative = per_sample / negative_rate.max(1) as f64;
        for (head, tail) in [(i, j), (j, i)] {
            out.push(Sampled {
                head,
                tail,
                per_sample,
                next: per_sample,
                per_negative,
                next_negative: per_negative,
            });
        }
    }
    out
}

/// Optimizes the layout, calling `observe(epoch, coords)` after every epoch.
pub fn optimize_layout_with<F>(graph: &FuzzyGraph, params: &ProjectionParams, seed: u64, mut observe: F) -> Vec<f64>
where
    F: FnMut(usize, &[f64]),
{
    let n = graph.n;
    let dims = params.dims;
    let mut coords = initialize(graph, params, seed);
    if n <= 1 || graph.edges.is_empty() || params.epochs == 0 {
        return coords;
    }
    let (a, b) = fit_curve(params.spread, params.min_dist);
    let kernel = Kernel {
        n,
        dims,
        a,
        b,
        gamma: params.repulsion_strength,
    };
    let mut edges = schedule(graph, params.epochs, params.negative_sample_rate);
    let epochs = params.epochs;
    if params.deterministic {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
        for epoch in 0..epochs {
            let alpha = params.learning_rate * (1.0 - epoch as f64 / epochs as f64);
            {
                let cells = Cell::from_mut(coords.as_mut_slice()).as_slice_of_cells();
                for e in edges.iter_mut() {
                    kernel.edge_step(cells, e, epoch as f64, alpha, &mut rng);
                }
            }
            observe(epoch, &coords);
        }
    } else {
        let shared: Vec<AtomicU64> = coords.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
        let chunk = edges.len().div_ceil(rayon::current_num_threads().max(1) * 4).max(64);
        for epoch in 0..epochs {
            let alpha = params.learning_rate * (1.0 - epoch as f64 / epochs as f64);
            edges.par_chunks_mut(chunk).enumerate().for_each(|(ci, part)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64 + 2, ci as u64));
                for e in part.iter_mut() {
                    kernel.edge_step(shared.as_slice(), e, epoch as f64, alpha, &mut rng);
                }
            });
            let snapshot: Vec<f64> = shared.iter().map(|v| f64::from_bits(v.load(Ordering::Relaxed))).collect();
            observe(epoch, &snapshot);
        }
        coords = shared.iter().map(|v| f64::from_bits(v.load(Ordering::Relaxed))).collect();
    }
    coords
}

pub fn optimize_layout(graph: &FuzzyGraph, params: &ProjectionParams, seed: u64) -> Vec<f64> {
    optimize_layout_with(graph, params, seed, |_, _| {})
}

/// Full projection of the given users' retweet vectors.
pub fn project(vectors: &[&UserVector], params: &ProjectionParams, seed: u64) -> Result<Embedding> {
    let knn = knn_graph(vectors, params.n_neighbors)?;
    let graph = fuzzy_weights(&knn);
    let coords = optimize_layout(&graph, params, seed);
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("layout produced non-finite coordinates".into()));
    }
    Ok(Embedding {
        user_ids: vectors.iter().map(|v| v.user_id.clone()).collect(),
        dims: params.dims,
        coords,
    })
}

/// Mean silhouette coefficient of a labeled point set under Euclidean
/// distance. Points in singleton groups contribute 0. Needs two or more
/// groups.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::InvalidInput("one label per point".into()));
    }
    let groups: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if groups.len() < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two groups".into()));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let total: f64 = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
            for j in 0..points.len() {
                if i != j {
                    let e = sums.entry(labels[j]).or_insert((0.0, 0));
                    e.0 += dist(&points[i], &points[j]);
                    e.1 += 1;
                }
            }
            let own = match sums.get(&labels[i]) {
                Some(&(s, n)) if n > 0 => s / n as f64,
                _ => return 0.0,
            };
            let other = sums
                .iter()
                .filter(|(g, _)| **g != labels[i])
                .map(|(_, &(s, n))| s / n as f64)
                .fold(f64::INFINITY, f64::min);
            let m = own.max(other);
            if m == 0.0 {
                0.0
            } else {
                (other - own) / m
            }
        })
        .sum();
    Ok(total / points.len() as f64)
}
