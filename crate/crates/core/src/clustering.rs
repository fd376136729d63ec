//! Flat-kernel mean shift over the 2D embedding and selection of the two
//! opposing stance groups.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsv::{fmt_f64, Table};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance from each point to its `ceil(quantile * n)`-th nearest
/// neighbour, the point itself counting as the first.
pub fn estimate_bandwidth(points: &[Vec<f64>], quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidInput(format!("quantile {quantile} outside (0, 1]")));
    }
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidInput("bandwidth estimation needs at least two points".into()));
    }
    let k = ((quantile * n as f64).ceil() as usize).clamp(1, n);
    let total: f64 = points
        .par_iter()
        .map(|p| {
            let mut d: Vec<f64> = points.iter().map(|q| distance(p, q)).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1]
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let bw = total / n as f64;
    if bw <= 0.0 || !bw.is_finite() {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(bw)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanShiftParams {
    /// Explicit kernel radius; estimated from `quantile` when absent.
    pub bandwidth: Option<f64>,
    pub quantile: f64,
    pub max_iter: usize,
    /// Convergence threshold as a fraction of the bandwidth.
    pub tolerance: f64,
}

impl Default for MeanShiftParams {
    fn default() -> Self {
        Self {
            bandwidth: None,
            quantile: 0.3,
            max_iter: 300,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeanShiftResult {
    /// Cluster per input point; clusters are numbered by decreasing mode
    /// density.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub bandwidth: f64,
}

fn shift_to_mode(seed: &[f64], points: &[Vec<f64>], bandwidth: f64, params: &MeanShiftParams) -> (Vec<f64>, usize) {
    let stop = params.tolerance * bandwidth;
    let mut center = seed.to_vec();
    let mut support = 0;
    for _ in 0..params.max_iter {
        let mut mean = vec![0.0; center.len()];
        let mut count = 0usize;
        for p in points {
            if distance(p, &center) <= bandwidth {
                mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
                count += 1;
            }
        }
        if count == 0 {
            break;
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let shift = distance(&mean, &center);
        center = mean;
        support = count;
        if shift < stop {
            break;
        }
    }
    (center, support)
}

/// Flat-kernel mean shift seeded at every point.
pub fn mean_shift(points: &[Vec<f64>], bandwidth: f64, params: &MeanShiftParams) -> Result<MeanShiftResult> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if points.is_empty() {
        return Ok(MeanShiftResult {
            labels: vec![],
            centers: vec![],
            bandwidth,
        });
    }
    let mut modes: Vec<(usize, Vec<f64>, usize)> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (mode, support) = shift_to_mode(p, points, bandwidth, params);
            (i, mode, support)
        })
        .collect();
    modes.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for (_, mode, _) in modes {
        if centers.iter().all(|c| distance(c, &mode) >= bandwidth) {
            centers.push(mode);
        }
    }
    let labels = points
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = distance(p, center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect();
    Ok(MeanShiftResult {
        labels,
        centers,
        bandwidth,
    })
}

/// The two most populous clusters, larger first, ties to the smaller index.
pub fn top_two(labels: &[usize]) -> Result<(usize, usize)> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_insert(0) += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::NotPolarized);
    }
    let mut ranked: Vec<(usize, usize)> = sizes.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok((ranked[0].0, ranked[1].0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    C0,
    C1,
}

impl Stance {
    pub fn index(self) -> usize {
        match self {
            Stance::C0 => 0,
            Stance::C1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 { Stance::C0 } else { Stance::C1 }
    }

    pub fn other(self) -> Self {
        match self {
            Stance::C0 => Stance::C1,
            Stance::C1 => Stance::C0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::C0 => "C0",
            Stance::C1 => "C1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "C0" => Some(Stance::C0),
            "C1" => Some(Stance::C1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Clustered,
    Expanded,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Clustered => "clustered",
            LabelSource::Expanded => "expanded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceLabel {
    pub stance: Stance,
    pub source: LabelSource,
    /// Classifier confidence for expanded users; 1 for clustered ones.
    pub confidence: f64,
}

/// Per-topic stance groups.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub topic: String,
    /// Mean-shift cluster of every clustered user.
    pub clusters: BTreeMap<String, usize>,
    /// Largest retained cluster.
    pub c0: usize,
    pub c1: usize,
    /// +1 or -1; set by cross-topic sign alignment.
    pub sign: i8,
    /// C0/C1 label of every assigned user. Users outside the two retained
    /// clusters are absent (unassigned).
    pub stances: BTreeMap<String, StanceLabel>,
}

impl ClusterAssignment {
    pub fn from_clusters(topic: &str, user_ids: &[String], labels: &[usize]) -> Result<Self> {
        let (c0, c1) = top_two(labels)?;
        let clusters: BTreeMap<String, usize> = user_ids.iter().cloned().zip(labels.iter().copied()).collect();
        let stances = clusters
            .iter()
            .filter_map(|(u, &c)| {
                let stance = if c == c0 {
                    Stance::C0
                } else if c == c1 {
                    Stance::C1
                } else {
                    return None;
                };
                Some((
                    u.clone(),
                    StanceLabel {
                        stance,
                        source: LabelSource::Clustered,
                        confidence: 1.0,
                    },
                ))
            })
            .collect();
        Ok(Self {
            topic: topic.to_string(),
            clusters,
            c0,
            c1,
            sign: 1,
            stances,
        })
    }

    pub fn cluster_size(&self, cluster: usize) -> usize {
        self.clusters.values().filter(|&&c| c == cluster).count()
    }

    pub fn members(&self, stance: Stance) -> impl Iterator<Item = &String> {
        self.stances.iter().filter(move |(_, l)| l.stance == stance).map(|(u, _)| u)
    }

    pub fn count(&self, stance: Stance, source: Option<LabelSource>) -> usize {
        self.stances
            .values()
            .filter(|l| l.stance == stance && source.is_none_or(|s| l.source == s))
            .count()
    }

    /// `user_id, cluster, retained` rows.
    pub fn clusters_table(&self) -> Table {
        let mut t = Table::new(&["user_id", "cluster", "retained"]);
        for (u, &c) in &self.clusters {
            let retained = c == self.c0 || c == self.c1;
            t.push([u.as_str(), &c.to_string(), if retained { "1" } else { "0" }]);
        }
        t
    }

    pub fn from_clusters_table(topic: &str, table: &Table) -> Result<Self> {
        let bad = || Error::InvalidInput("malformed cluster table".into());
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for row in &table.rows {
            let [u, c, _] = row.as_slice() else { return Err(bad()) };
            ids.push(u.clone());
            labels.push(c.parse::<usize>().map_err(|_| bad())?);
        }
        Self::from_clusters(topic, &ids, &labels)
    }

    /// `user_id, stance, source, confidence` rows.
    pub fn labels_table(&self) -> Table {
        let mut t = Table::new(&["user_id", "stance", "source", "confidence"]);
        for (u, l) in &self.stances {
            t.push([u.as_str(), l.stance.as_str(), l.source.as_str(), &fmt_f64(l.confidence)]);
        }
        t
    }

    /// Restores expanded labels from a labels table onto a clustered
    /// assignment.
    pub fn apply_labels_table(&mut self, table: &Table) -> Result<()> {
        let bad = || Error::InvalidInput("malformed label table".into());
        for row in &table.rows {
            let [u, s, src, conf] = row.as_slice() else { return Err(bad()) };
            let source = match src.as_str() {
                "clustered" => LabelSource::Clustered,
                "expanded" => LabelSource::Expanded,
                _ => return Err(bad()),
            };
            self.stances.insert(
                u.clone(),
                StanceLabel {
                    stance: Stance::parse(s).ok_or_else(bad)?,
                    source,
                    confidence: conf.parse().map_err(|_| bad())?,
                },
            );
        }
        Ok(())
    }
}

/// Fraction of labeled users whose ground-truth group is the majority group
/// of their stance label.
pub fn purity<'a, I>(labels: I, truth: &HashMap<String, String>) -> f64
where
    I: IntoIterator<Item = (&'a String, Stance)>,
{
    let mut tally: BTreeMap<(Stance, &str), usize> = BTreeMap::new();
    let mut total = 0usize;
    for (user, stance) in labels {
        if let Some(t) = truth.get(user) {
            *tally.entry((stance, t.as_str())).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let majority: usize = [Stance::C0, Stance::C1]
        .iter()
        .map(|&s| tally.iter().filter(|((st, _), _)| *st == s).map(|(_, &n)| n).max().unwrap_or(0))
        .sum();
    majority as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[(f64, f64)], per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, &(x, y)) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    /// Same partition up to renaming of labels.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let mut map = HashMap::new();
        let mut back = HashMap::new();
        a.iter().zip(b).all(|(x, y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
    }

    #[test]
    fn bandwidth_of_two_points() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert!((estimate_bandwidth(&pts, 1.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_of_unit_square() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        // every corner: self 0, two sides at 1, diagonal sqrt 2; 2nd entry = 1
        assert!((estimate_bandwidth(&pts, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_errors() {
        let same = vec![vec![1.0, 1.0]; 5];
        assert!(matches!(estimate_bandwidth(&same, 0.3), Err(Error::DegenerateBandwidth)));
        assert!(estimate_bandwidth(&[vec![0.0]], 0.3).is_err());
        assert!(estimate_bandwidth(&[vec![0.0], vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn three_blobs() {
        let (pts, truth) = blobs(&[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], 40, 0.05, 3);
        let r = mean_shift(&pts, 1.0, &MeanShiftParams::default()).unwrap();
        assert_eq!(r.centers.len(), 3);
        assert!(same_partition(&r.labels, &truth));
    }

    #[test]
    fn single_point() {
        let r = mean_shift(&[vec![2.0, 3.0]], 0.5, &MeanShiftParams::default()).unwrap();
        assert_eq!(r.labels, vec![0]);
        assert_eq!(r.centers.len(), 1);
    }

    #[test]
    fn far_points_split() {
        let r = mean_shift(&[vec![0.0, 0.0], vec![10.0, 0.0]], 1.0, &MeanShiftParams::default()).unwrap();
        assert_eq!(r.centers.len(), 2);
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn translation_invariance() {
        let (pts, _) = blobs(&[(0.0, 0.0), (4.0, 1.0), (1.0, 6.0)], 30, 0.3, 9);
        let base = mean_shift(&pts, 1.5, &MeanShiftParams::default()).unwrap();
        for (dx, dy) in [(10.0, -3.0), (-250.5, 77.25), (0.125, 0.5)] {
            let moved: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + dx, p[1] + dy]).collect();
            let r = mean_shift(&moved, 1.5, &MeanShiftParams::default()).unwrap();
            assert!(same_partition(&base.labels, &r.labels));
        }
    }

    #[test]
    fn every_point_labeled() {
        let (pts, _) = blobs(&[(0.0, 0.0), (3.0, 0.0)], 25, 0.8, 4);
        let r = mean_shift(&pts, 1.0, &MeanShiftParams::default()).unwrap();
        assert_eq!(r.labels.len(), pts.len());
        for c in 0..r.centers.len() {
            assert!(r.labels.contains(&c), "empty cluster {c}");
        }
    }

    #[test]
    fn top_two_selection() {
        let mut labels = vec![0; 430];
        labels.extend(vec![1; 380]);
        labels.extend(vec![2; 50]);
        assert_eq!(top_two(&labels).unwrap(), (0, 1));
        let mut labels = vec![2; 50];
        labels.extend(vec![1; 380]);
        labels.extend(vec![0; 30]);
        assert_eq!(top_two(&labels).unwrap(), (1, 2));
        assert_eq!(top_two(&[1, 0, 1, 0, 0, 1, 1, 0, 0, 1]).unwrap(), (0, 1));
        assert!(matches!(top_two(&[3, 3, 3]), Err(Error::NotPolarized)));
    }

    #[test]
    fn assignment_marks_rest_unassigned() {
        let ids: Vec<String> = (0..6).map(|i| format!("u{i}")).collect();
        let a = ClusterAssignment::from_clusters("t", &ids, &[1, 1, 1, 0, 0, 2]).unwrap();
        assert_eq!((a.c0, a.c1), (1, 0));
        assert_eq!(a.stances["u0"].stance, Stance::C0);
        assert_eq!(a.stances["u3"].stance, Stance::C1);
        assert!(!a.stances.contains_key("u5"));
        assert!(a.cluster_size(a.c0) >= a.cluster_size(a.c1));
        let t = Table::parse(&a.clusters_table().render(None)).unwrap();
        let back = ClusterAssignment::from_clusters_table("t", &t).unwrap();
        assert_eq!(back.stances, a.stances);
    }

    #[test]
    fn purity_counts_majorities() {
        let truth: HashMap<String, String> =
            [("a", "L"), ("b", "L"), ("c", "R"), ("d", "R"), ("e", "L")].iter().map(|(u, g)| (u.to_string(), g.to_string())).collect();
        let ids: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let labels = [Stance::C0, Stance::C0, Stance::C1, Stance::C1, Stance::C1];
        let p = purity(ids.iter().zip(labels), &truth);
        assert!((p - 0.8).abs() < 1e-12);
    }
}
