//! Media bias classification from valence and embedding features.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::extract_domain;
use crate::optim::{minimize, LbfgsParams};
use crate::tsv::{fmt_f64, Table};
use crate::valence::Category;

/// Gold bias labels on the seven-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BiasLabel {
    ExtremeLeft,
    Left,
    LeftCenter,
    Center,
    RightCenter,
    Right,
    ExtremeRight,
}

impl BiasLabel {
    pub const ALL: [BiasLabel; 7] = [
        BiasLabel::ExtremeLeft,
        BiasLabel::Left,
        BiasLabel::LeftCenter,
        BiasLabel::Center,
        BiasLabel::RightCenter,
        BiasLabel::Right,
        BiasLabel::ExtremeRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasLabel::ExtremeLeft => "extreme-left",
            BiasLabel::Left => "left",
            BiasLabel::LeftCenter => "left-center",
            BiasLabel::Center => "center",
            BiasLabel::RightCenter => "right-center",
            BiasLabel::Right => "right",
            BiasLabel::ExtremeRight => "extreme-right",
        }
    }

    /// Accepts spaces or underscores for hyphens and a few common aliases.
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Ok(match norm.as_str() {
            "extreme-left" | "far-left" => BiasLabel::ExtremeLeft,
            "left" => BiasLabel::Left,
            "left-center" | "center-left" | "left-centre" => BiasLabel::LeftCenter,
            "center" | "centre" | "least-biased" => BiasLabel::Center,
            "right-center" | "center-right" | "right-centre" => BiasLabel::RightCenter,
            "right" => BiasLabel::Right,
            "extreme-right" | "far-right" => BiasLabel::ExtremeRight,
            _ => return Err(Error::UnknownBiasLabel(s.to_string())),
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BiasLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Three-way leaning, ordered left < center < right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leaning {
    Left,
    Center,
    Right,
}

impl Leaning {
    pub const ALL: [Leaning; 3] = [Leaning::Left, Leaning::Center, Leaning::Right];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Leaning::Left => "left",
            Leaning::Center => "center",
            Leaning::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s.trim().to_ascii_lowercase())
    }
}

impl fmt::Display for Leaning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Folds extremes into their side and drops the *-center labels.
pub fn merge_labels(label: BiasLabel) -> Option<Leaning> {
    match label {
        BiasLabel::ExtremeLeft | BiasLabel::Left => Some(Leaning::Left),
        BiasLabel::Center => Some(Leaning::Center),
        BiasLabel::Right | BiasLabel::ExtremeRight => Some(Leaning::Right),
        BiasLabel::LeftCenter | BiasLabel::RightCenter => None,
    }
}

pub fn merge_label_str(s: &str) -> Result<Option<Leaning>> {
    BiasLabel::parse(s).map(merge_labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaRecord {
    pub domain: String,
    pub bias: BiasLabel,
    pub factuality: Option<String>,
}

/// Gold labels: TSV with `domain`, `bias` and optional `factuality`.
pub fn gold_from_table(t: &Table) -> Result<Vec<MediaRecord>> {
    let (Some(d), Some(b)) = (t.column("domain"), t.column("bias")) else {
        return Err(Error::Config("gold label file needs domain and bias columns".into()));
    };
    let f = t.column("factuality");
    t.rows
        .iter()
        .map(|row| {
            let raw = row.get(d).map(String::as_str).unwrap_or("");
            Ok(MediaRecord {
                domain: extract_domain(raw)?,
                bias: BiasLabel::parse(row.get(b).map(String::as_str).unwrap_or(""))?,
                factuality: f.and_then(|i| row.get(i)).filter(|s| !s.is_empty()).cloned(),
            })
        })
        .collect()
}

pub fn read_gold(path: &Path) -> Result<Vec<MediaRecord>> {
    gold_from_table(&Table::read(path)?)
}

pub fn accuracy(preds: &[Leaning], gold: &[Leaning]) -> f64 {
    assert_eq!(preds.len(), gold.len());
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / preds.len() as f64
}

/// Mean `|ord(pred) - ord(gold)|` with left=0, center=1, right=2.
pub fn mae(preds: &[Leaning], gold: &[Leaning]) -> f64 {
    assert_eq!(preds.len(), gold.len());
    if preds.is_empty() {
        return 0.0;
    }
    let total: usize = preds.iter().zip(gold).map(|(p, g)| p.ordinal().abs_diff(g.ordinal())).sum();
    total as f64 / preds.len() as f64
}

/// Positive average valence reads as left after sign alignment.
pub fn unsupervised_leaning(avg_valence: f64) -> Leaning {
    if avg_valence > 0.2 {
        Leaning::Left
    } else if avg_valence < -0.2 {
        Leaning::Right
    } else {
        Leaning::Center
    }
}

/// Counts of (valence category, gold label) pairs, 5 x 7.
pub fn confusion_table<'a>(pairs: impl IntoIterator<Item = &'a (Category, BiasLabel)>) -> [[u64; 7]; 5] {
    let mut m = [[0u64; 7]; 5];
    for (c, b) in pairs {
        m[c.index()][b.index()] += 1;
    }
    m
}

pub fn confusion_to_table(m: &[[u64; 7]; 5]) -> Table {
    let mut cols = vec!["category".to_string()];
    cols.extend(BiasLabel::ALL.iter().map(|b| b.to_string()));
    let mut t = Table::new(&cols);
    for c in Category::ALL {
        let mut row = vec![c.to_string()];
        row.extend(m[c.index()].iter().map(u64::to_string));
        t.push(row);
    }
    t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub folds: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for BiasParams {
    fn default() -> Self {
        Self {
            c: 0.1,
            folds: 5,
            max_iter: 5000,
            grad_tol: 1e-5,
        }
    }
}

/// Multinomial logistic regression over z-normalized features. Classes
/// absent from training get probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel {
    pub classes: [Leaning; 3],
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `3 x n_features`.
    pub weights: Vec<f64>,
    pub biases: [f64; 3],
    pub present: [bool; 3],
    pub c: f64,
    pub grad_norm: f64,
}

fn softmax_masked(z: &[f64; 3], present: &[bool; 3]) -> [f64; 3] {
    let m = (0..3).filter(|&k| present[k]).map(|k| z[k]).fold(f64::NEG_INFINITY, f64::max);
    let mut e = [0.0; 3];
    for k in 0..3 {
        if present[k] {
            e[k] = (z[k] - m).exp();
        }
    }
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Column means and standard deviations (1 where a column is constant).
fn standardizer(rows: &[Vec<f64>], nf: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; nf];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; nf];
    for r in rows {
        var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(v, (x, m))| *v += (x - m).powi(2) / n);
    }
    let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

impl BiasModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<[f64; 3]> {
        if x.len() != self.n_features() {
            return Err(Error::InvalidInput(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        let z = self.standardize(x);
        let nf = self.n_features();
        let mut logits = self.biases;
        for k in 0..3 {
            logits[k] += self.weights[k * nf..(k + 1) * nf].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(softmax_masked(&logits, &self.present))
    }

    pub fn predict(&self, x: &[f64]) -> Result<(Leaning, [f64; 3])> {
        let p = self.probabilities(x)?;
        let best = (0..3).filter(|&k| self.present[k]).fold(None::<usize>, |b, k| match b {
            Some(j) if p[j] >= p[k] => Some(j),
            _ => Some(k),
        });
        Ok((self.classes[best.expect("a trained model has classes")], p))
    }
}

/// Minimizes summed cross-entropy + `||W||^2 / (2C)` (intercepts not
/// penalized) on z-normalized features.
pub fn train(features: &[Vec<f64>], labels: &[Leaning], feature_names: &[String], params: &BiasParams) -> Result<BiasModel> {
    let nf = feature_names.len();
    if features.len() != labels.len() || features.iter().any(|r| r.len() != nf) {
        return Err(Error::InvalidInput("feature rows and labels do not line up".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    if !(params.c > 0.0) {
        return Err(Error::Config("C must be positive".into()));
    }
    let mut present = [false; 3];
    labels.iter().for_each(|l| present[l.ordinal()] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::SingleClass);
    }
    let (mean, scale) = standardizer(features, nf);
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let ys: Vec<usize> = labels.iter().map(|l| l.ordinal()).collect();
    let active: Vec<usize> = (0..3).filter(|&k| present[k]).collect();
    let ka = active.len();
    let inv_c = 1.0 / params.c;

    // parameters: ka x nf weights, then ka intercepts
    let objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (w, b) = theta.split_at(ka * nf);
        let mut loss = 0.0;
        let mut z = vec![0.0; ka];
        for (x, &y) in xs.iter().zip(&ys) {
            for a in 0..ka {
                z[a] = b[a] + w[a * nf..(a + 1) * nf].iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let ya = active.iter().position(|&k| k == y).expect("label is a present class");
            loss += lse - z[ya];
            for a in 0..ka {
                let g = (z[a] - lse).exp() - if a == ya { 1.0 } else { 0.0 };
                grad[a * nf..(a + 1) * nf].iter_mut().zip(x).for_each(|(gi, xi)| *gi += g * xi);
                grad[ka * nf + a] += g;
            }
        }
        for (gi, wi) in grad[..ka * nf].iter_mut().zip(w) {
            *gi += inv_c * wi;
            loss += 0.5 * inv_c * wi * wi;
        }
        loss
    };
    let lb = LbfgsParams {
        max_iter: params.max_iter,
        grad_tol: params.grad_tol,
        ..Default::default()
    };
    let min = minimize(objective, vec![0.0; ka * (nf + 1)], &lb)?;
    let mut weights = vec![0.0; 3 * nf];
    let mut biases = [0.0; 3];
    for (a, &k) in active.iter().enumerate() {
        weights[k * nf..(k + 1) * nf].copy_from_slice(&min.x[a * nf..(a + 1) * nf]);
        biases[k] = min.x[ka * nf + a];
    }
    Ok(BiasModel {
        classes: Leaning::ALL,
        feature_names: feature_names.to_vec(),
        mean,
        scale,
        weights,
        biases,
        present,
        c: params.c,
        grad_norm: min.grad_norm,
    })
}

/// Fold index per item; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[Leaning], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut offset = 0;
    for class in Leaning::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            out[i] = (offset + j) % folds;
        }
        offset += labels.iter().filter(|&&l| l == class).count();
    }
    out
}

/// Feature blocks a configuration may combine.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Block {
    Valence,
    Graph(String),
    External,
}

impl Block {
    pub fn name(&self) -> String {
        match self {
            Block::Valence => "valence".into(),
            Block::Graph(g) => format!("graph_{g}"),
            Block::External => "external".into(),
        }
    }
}

/// Everything known about one gold-labeled medium.
#[derive(Debug, Clone, Default)]
pub struct MediumFeatures {
    pub domain: String,
    pub valence: BTreeMap<String, f64>,
    pub graph: BTreeMap<String, Vec<f64>>,
    pub external: Option<Vec<f64>>,
}

/// Column layout shared by training and prediction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureLayout {
    pub topics: Vec<String>,
    pub graph: Vec<(String, usize)>,
    pub external_dim: Option<usize>,
}

impl FeatureLayout {
    pub fn infer(media: &[MediumFeatures], topics: &[String]) -> Self {
        let mut graph: BTreeMap<String, usize> = BTreeMap::new();
        let mut external_dim = None;
        for m in media {
            for (g, v) in &m.graph {
                graph.insert(g.clone(), v.len());
            }
            if let Some(e) = &m.external {
                external_dim = Some(e.len());
            }
        }
        Self {
            topics: topics.to_vec(),
            graph: graph.into_iter().collect(),
            external_dim,
        }
    }

    fn block_dim(&self, b: &Block) -> Option<usize> {
        match b {
            Block::Valence => Some(self.topics.len()),
            Block::Graph(g) => self.graph.iter().find(|(n, _)| n == g).map(|x| x.1),
            Block::External => self.external_dim,
        }
    }

    /// Names of the columns `row` produces for these blocks.
    pub fn names(&self, blocks: &[Block]) -> Vec<String> {
        let mut out = Vec::new();
        for b in blocks {
            match b {
                Block::Valence => {
                    for t in &self.topics {
                        out.push(format!("valence:{t}"));
                    }
                    for t in &self.topics {
                        out.push(format!("present:{t}"));
                    }
                }
                _ => {
                    let dim = self.block_dim(b).unwrap_or(0);
                    out.extend((0..dim).map(|i| format!("{}:{i}", b.name())));
                    out.push(format!("present:{}", b.name()));
                }
            }
        }
        out
    }

    /// Missing values are 0.0 with the paired presence bit cleared.
    pub fn row(&self, m: &MediumFeatures, blocks: &[Block]) -> Vec<f64> {
        let mut out = Vec::new();
        for b in blocks {
            match b {
                Block::Valence => {
                    out.extend(self.topics.iter().map(|t| m.valence.get(t).copied().unwrap_or(0.0)));
                    out.extend(self.topics.iter().map(|t| if m.valence.contains_key(t) { 1.0 } else { 0.0 }));
                }
                _ => {
                    let dim = self.block_dim(b).unwrap_or(0);
                    let v = match b {
                        Block::Graph(g) => m.graph.get(g),
                        _ => m.external.as_ref(),
                    };
                    match v.filter(|v| v.len() == dim) {
                        Some(v) => {
                            out.extend_from_slice(v);
                            out.push(1.0);
                        }
                        None => {
                            out.extend(std::iter::repeat_n(0.0, dim));
                            out.push(0.0);
                        }
                    }
                }
            }
        }
        out
    }

    /// The feature combinations the available blocks permit.
    pub fn configurations(&self) -> Vec<Vec<Block>> {
        let mut out = vec![vec![Block::Valence]];
        let graphs: Vec<Block> = self.graph.iter().map(|(g, _)| Block::Graph(g.clone())).collect();
        for g in &graphs {
            out.push(vec![g.clone()]);
        }
        if graphs.len() > 1 {
            out.push(graphs.clone());
        }
        if !graphs.is_empty() {
            let mut v = vec![Block::Valence];
            v.extend(graphs.iter().cloned());
            out.push(v);
        }
        if self.external_dim.is_some() {
            out.push(vec![Block::External]);
            out.push(vec![Block::Valence, Block::External]);
            if !graphs.is_empty() {
                let mut v = vec![Block::Valence];
                v.extend(graphs.iter().cloned());
                v.push(Block::External);
                out.push(v);
            }
        }
        out
    }
}

pub fn config_name(blocks: &[Block]) -> String {
    blocks.iter().map(Block::name).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub config: String,
    pub n_media: usize,
    pub n_features: usize,
    pub accuracy: f64,
    pub mae: f64,
}

/// Stratified k-fold evaluation of one feature matrix; fold means.
pub fn cross_validate(rows: &[Vec<f64>], labels: &[Leaning], names: &[String], params: &BiasParams, seed: u64) -> Result<(f64, f64)> {
    if labels.len() < params.folds || params.folds < 2 {
        return Err(Error::InvalidInput(format!("{} media cannot fill {} folds", labels.len(), params.folds)));
    }
    let fold_of = stratified_folds(labels, params.folds, seed);
    let scores: Vec<Result<(f64, f64)>> = (0..params.folds)
        .into_par_iter()
        .map(|f| {
            let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..labels.len() {
                if fold_of[i] == f {
                    xte.push(rows[i].clone());
                    yte.push(labels[i]);
                } else {
                    xtr.push(rows[i].clone());
                    ytr.push(labels[i]);
                }
            }
            let model = train(&xtr, &ytr, names, params)?;
            let preds = xte.iter().map(|x| model.predict(x).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
            Ok((accuracy(&preds, &yte), mae(&preds, &yte)))
        })
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let k = scores.len() as f64;
    Ok((scores.iter().map(|s| s.0).sum::<f64>() / k, scores.iter().map(|s| s.1).sum::<f64>() / k))
}

/// Train-fold majority class, evaluated fold by fold.
pub fn majority_baseline(labels: &[Leaning], folds: usize, seed: u64) -> (f64, f64) {
    let fold_of = stratified_folds(labels, folds, seed);
    let mut acc = 0.0;
    let mut err = 0.0;
    for f in 0..folds {
        let mut counts = [0usize; 3];
        for (l, _) in labels.iter().zip(&fold_of).filter(|(_, &k)| k != f) {
            counts[l.ordinal()] += 1;
        }
        let best = (0..3).fold(0, |b, k| if counts[k] > counts[b] { k } else { b });
        let gold: Vec<Leaning> = labels.iter().zip(&fold_of).filter(|(_, &k)| k == f).map(|(l, _)| *l).collect();
        let preds = vec![Leaning::from_ordinal(best); gold.len()];
        acc += accuracy(&preds, &gold);
        err += mae(&preds, &gold);
    }
    (acc / folds as f64, err / folds as f64)
}

/// Every report row: the two baselines, then each feature combination.
/// `avg_valence` holds each medium's average aligned valence.
pub fn evaluate(
    media: &[MediumFeatures],
    labels: &[Leaning],
    avg_valence: &[f64],
    layout: &FeatureLayout,
    params: &BiasParams,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let n = media.len();
    let mut out = Vec::new();
    let (acc, err) = majority_baseline(labels, params.folds, seed);
    out.push(ReportRow {
        config: "baseline_majority".into(),
        n_media: n,
        n_features: 0,
        accuracy: acc,
        mae: err,
    });
    let preds: Vec<Leaning> = avg_valence.iter().map(|&v| unsupervised_leaning(v)).collect();
    out.push(ReportRow {
        config: "baseline_avg_valence".into(),
        n_media: n,
        n_features: 1,
        accuracy: accuracy(&preds, labels),
        mae: mae(&preds, labels),
    });
    for blocks in layout.configurations() {
        let names = layout.names(&blocks);
        let rows: Vec<Vec<f64>> = media.iter().map(|m| layout.row(m, &blocks)).collect();
        let (acc, err) = cross_validate(&rows, labels, &names, params, seed)?;
        out.push(ReportRow {
            config: config_name(&blocks),
            n_media: n,
            n_features: names.len(),
            accuracy: acc,
            mae: err,
        });
    }
    Ok(out)
}

pub fn report_table(rows: &[ReportRow]) -> Table {
    let mut t = Table::new(&["config", "n_media", "n_features", "accuracy", "mae"]);
    for r in rows {
        t.push([r.config.clone(), r.n_media.to_string(), r.n_features.to_string(), fmt_f64(r.accuracy), fmt_f64(r.mae)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use Leaning::{Center as C, Left as L, Right as R};

    #[test]
    fn label_merging() {
        assert_eq!(merge_label_str("extreme-right").unwrap(), Some(R));
        assert_eq!(merge_label_str("Extreme Left").unwrap(), Some(L));
        assert_eq!(merge_label_str("left-center").unwrap(), None);
        assert_eq!(merge_label_str("right_center").unwrap(), None);
        assert_eq!(merge_label_str("center").unwrap(), Some(C));
        assert!(matches!(merge_label_str("mostly-left"), Err(Error::UnknownBiasLabel(_))));
    }

    #[test]
    fn metric_fixtures() {
        assert_eq!(accuracy(&[L, C, R, L], &[L, C, R, L]), 1.0);
        assert_eq!(accuracy(&[R, R, L, L], &[L, L, R, R]), 0.0);
        assert_eq!(accuracy(&[L, C, R, R], &[L, C, R, L]), 0.75);
        assert_eq!(mae(&[R], &[L]), 2.0);
        assert_eq!(mae(&[L, C], &[C, C]), 0.5);
        assert_eq!(mae(&[L, C, R, C], &[L, C, R, C]), 0.0);
        assert_eq!(mae(&[R, C, R, L], &[L, C, R, C]), 0.75);
    }

    #[test]
    fn leaning_thresholds() {
        assert_eq!(unsupervised_leaning(0.9), L);
        assert_eq!(unsupervised_leaning(-0.9), R);
        assert_eq!(unsupervised_leaning(0.1), C);
        assert_eq!(unsupervised_leaning(0.2), C);
        assert_eq!(unsupervised_leaning(-0.2), C);
    }

    #[test]
    fn confusion_counts() {
        assert_eq!(confusion_table(&[]), [[0; 7]; 5]);
        let one = confusion_table(&[(Category::PosPos, BiasLabel::Left)]);
        assert_eq!(one[4][1], 1);
        assert_eq!(one.iter().flatten().sum::<u64>(), 1);
        let three = confusion_table(&[
            (Category::PosPos, BiasLabel::Left),
            (Category::NegNeg, BiasLabel::ExtremeRight),
            (Category::PosPos, BiasLabel::Left),
        ]);
        assert_eq!(three[4][1], 2);
        assert_eq!(three[0][6], 1);
        let t = confusion_to_table(&three);
        assert_eq!(t.rows.len(), 5);
        assert_eq!(t.columns.len(), 8);
        assert_eq!(t.rows[4][0], "++");
        assert_eq!(t.rows[4][2], "2");
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn blobs(per: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Leaning>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (center, l) in [(0.8, L), (0.0, C), (-0.8, R)] {
            for _ in 0..per {
                xs.push(vec![center + noise.sample(&mut rng), rng.random::<f64>()]);
                ys.push(l);
            }
        }
        (xs, ys)
    }

    #[test]
    fn separable_with_weak_regularization() {
        let (xs, ys) = blobs(10, 0.02, 1);
        let m = train(&xs, &ys, &names(2), &BiasParams { c: 1e6, ..Default::default() }).unwrap();
        let preds: Vec<Leaning> = xs.iter().map(|x| m.predict(x).unwrap().0).collect();
        assert_eq!(accuracy(&preds, &ys), 1.0);
        assert!(m.grad_norm <= 1e-5);
    }

    #[test]
    fn strong_regularization_gives_prior() {
        let (xs, mut ys) = blobs(10, 0.1, 2);
        ys[0] = C; // priors 9/30, 11/30, 10/30
        let m = train(&xs, &ys, &names(2), &BiasParams { c: 1e-9, ..Default::default() }).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-6));
        let p = m.probabilities(&xs[3]).unwrap();
        assert!((p[0] - 9.0 / 30.0).abs() < 1e-5 && (p[1] - 11.0 / 30.0).abs() < 1e-5);
        assert_eq!(m.predict(&xs[3]).unwrap().0, C);
    }

    #[test]
    fn probabilities_form_distribution() {
        let (xs, ys) = blobs(8, 0.2, 3);
        let m = train(&xs, &ys, &names(2), &BiasParams::default()).unwrap();
        for x in &xs {
            let p = m.probabilities(x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        assert!(m.probabilities(&[1.0]).is_err());
    }

    #[test]
    fn rescaling_keeps_predictions() {
        let (xs, ys) = blobs(8, 0.3, 4);
        let scaled: Vec<Vec<f64>> = xs.iter().map(|r| vec![r[0] * 7.5, r[1] * 0.01]).collect();
        let m = train(&xs, &ys, &names(2), &BiasParams::default()).unwrap();
        let ms = train(&scaled, &ys, &names(2), &BiasParams::default()).unwrap();
        for (a, b) in xs.iter().zip(&scaled) {
            assert_eq!(m.predict(a).unwrap().0, ms.predict(b).unwrap().0);
        }
    }

    #[test]
    fn two_classes_only() {
        let (xs, ys) = blobs(6, 0.1, 5);
        let keep: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] != C).collect();
        let x2: Vec<_> = keep.iter().map(|&i| xs[i].clone()).collect();
        let y2: Vec<_> = keep.iter().map(|&i| ys[i]).collect();
        let m = train(&x2, &y2, &names(2), &BiasParams::default()).unwrap();
        assert_eq!(m.probabilities(&x2[0]).unwrap()[1], 0.0);
        let one = vec![L; 4];
        assert!(matches!(train(&x2[..4], &one, &names(2), &BiasParams::default()), Err(Error::SingleClass)));
    }

    #[test]
    fn folds_are_stratified() {
        let ys: Vec<Leaning> = [vec![L; 20], vec![C; 10], vec![R; 15]].concat();
        let f = stratified_folds(&ys, 5, 1);
        for k in 0..5 {
            for (class, per) in [(L, 4), (C, 2), (R, 3)] {
                assert_eq!((0..ys.len()).filter(|&i| f[i] == k && ys[i] == class).count(), per);
            }
        }
    }

    #[test]
    fn layout_rows_and_configs() {
        let m = MediumFeatures {
            domain: "a.com".into(),
            valence: [("t1".to_string(), 0.5)].into(),
            graph: [("u2h".to_string(), vec![1.0, 2.0])].into(),
            external: None,
        };
        let other = MediumFeatures { domain: "b.com".into(), ..Default::default() };
        let layout = FeatureLayout::infer(&[m.clone(), other.clone()], &["t1".into(), "t2".into()]);
        let blocks = vec![Block::Valence, Block::Graph("u2h".into())];
        assert_eq!(layout.row(&m, &blocks), vec![0.5, 0.0, 1.0, 0.0, 1.0, 2.0, 1.0]);
        assert_eq!(layout.row(&other, &blocks), vec![0.0; 7]);
        assert_eq!(layout.names(&blocks).len(), 7);
        let names: Vec<String> = layout.configurations().iter().map(|c| config_name(c)).collect();
        assert_eq!(names, ["valence", "graph_u2h", "valence+graph_u2h"]);
    }

    #[test]
    fn cross_validation_on_planted_valence() {
        let (xs, ys) = blobs(40, 0.1, 6);
        let (acc, err) = cross_validate(&xs, &ys, &names(2), &BiasParams::default(), 1).unwrap();
        assert!(acc >= 0.9 && err <= 0.1, "{acc} {err}");
        let (macc, _) = majority_baseline(&ys, 5, 1);
        assert!((macc - 1.0 / 3.0).abs() < 1e-9);
    }
}
