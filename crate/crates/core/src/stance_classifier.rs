//! Supervised expansion of the two stance clusters.
//!
//! A bag-of-features linear classifier: each retweeted account id is a
//! token with a learned embedding, a user is the average of their tokens
//! (repeated per retweet), and a softmax layer maps the average to C0/C1.
//! Trained by SGD on cross-entropy with a linearly decaying learning rate.
//!
//! Model file layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "STNCMDL\0"
//! version    u32      1
//! dim        u32
//! classes    u32      2
//! vocab_len  u32
//! vocab      vocab_len x (u32 byte length, UTF-8 bytes)
//! input      vocab_len x dim f32, row-major
//! output     dim x classes f32, row-major
//! bias       classes f32
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterAssignment, LabelSource, Stance, StanceLabel};
use crate::error::{Error, Result};
use crate::user_model::{UserVector, UserVectors};

const MAGIC: &[u8; 8] = b"STNCMDL\0";
const VERSION: u32 = 1;
const CLASSES: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StanceParams {
    pub dim: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    /// Minimum number of retweeted accounts for expansion.
    pub min_accounts: usize,
    /// Count distinct accounts (true) or total retweets toward `min_accounts`.
    pub distinct_accounts: bool,
    /// Predictions must be strictly more confident than this.
    pub threshold: f64,
    pub holdout_split: f64,
}

impl Default for StanceParams {
    fn default() -> Self {
        Self {
            dim: 10,
            learning_rate: 0.1,
            epochs: 5,
            min_accounts: 5,
            distinct_accounts: true,
            threshold: 0.8,
            holdout_split: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StanceModel {
    pub dim: usize,
    pub vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// `vocab.len() x dim`.
    pub input: Vec<f32>,
    /// `dim x 2`.
    pub output: Vec<f32>,
    pub bias: [f32; CLASSES],
}

fn softmax(z: [f32; CLASSES]) -> [f32; CLASSES] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// In-vocabulary tokens of a user with their weights `count / total`.
fn features(model_index: &HashMap<String, usize>, user: &UserVector) -> Vec<(usize, f32)> {
    let known: Vec<(usize, u32)> = user
        .counts
        .iter()
        .filter_map(|(acc, &c)| model_index.get(acc).map(|&i| (i, c)))
        .collect();
    let total: u32 = known.iter().map(|k| k.1).sum();
    known.into_iter().map(|(i, c)| (i, c as f32 / total as f32)).collect()
}

impl StanceModel {
    fn with_vocab(vocab: Vec<String>, dim: usize) -> Self {
        let index = vocab.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        Self {
            dim,
            input: vec![0.0; vocab.len() * dim],
            output: vec![0.0; dim * CLASSES],
            bias: [0.0; CLASSES],
            vocab,
            index,
        }
    }

    fn hidden(&self, feats: &[(usize, f32)]) -> Vec<f32> {
        let mut h = vec![0.0f32; self.dim];
        for &(t, w) in feats {
            let row = &self.input[t * self.dim..(t + 1) * self.dim];
            h.iter_mut().zip(row).for_each(|(a, b)| *a += w * b);
        }
        h
    }

    fn logits(&self, h: &[f32]) -> [f32; CLASSES] {
        let mut z = self.bias;
        for (k, &hk) in h.iter().enumerate() {
            z[0] += hk * self.output[k * CLASSES];
            z[1] += hk * self.output[k * CLASSES + 1];
        }
        z
    }

    /// Class probabilities; uniform when no token is in the vocabulary.
    pub fn probabilities(&self, user: &UserVector) -> [f64; CLASSES] {
        let feats = features(&self.index, user);
        if feats.is_empty() {
            return [0.5, 0.5];
        }
        let p = softmax(self.logits(&self.hidden(&feats)));
        [p[0] as f64, p[1] as f64]
    }

    /// Most probable stance and its probability (C0 on exact ties).
    pub fn predict(&self, user: &UserVector) -> (Stance, f64) {
        let p = self.probabilities(user);
        if p[1] > p[0] { (Stance::C1, p[1]) } else { (Stance::C0, p[0]) }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for v in [VERSION, self.dim as u32, CLASSES as u32, self.vocab.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for token in &self.vocab {
            w.write_all(&(token.len() as u32).to_le_bytes())?;
            w.write_all(token.as_bytes())?;
        }
        for x in self.input.iter().chain(&self.output).chain(&self.bias) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let classes = read_u32(&mut r)? as usize;
        if classes != CLASSES {
            return Err(bad("expected two classes"));
        }
        let vocab_len = read_u32(&mut r)? as usize;
        let mut vocab = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let len = read_u32(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated vocabulary"))?;
            vocab.push(String::from_utf8(bytes).map_err(|_| bad("vocabulary is not UTF-8"))?);
        }
        let mut model = Self::with_vocab(vocab, dim);
        let mut floats = vec![0f32; vocab_len * dim + dim * CLASSES + CLASSES];
        for f in floats.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated weights"))?;
            *f = f32::from_le_bytes(b);
        }
        let (input, rest) = floats.split_at(vocab_len * dim);
        let (output, bias) = rest.split_at(dim * CLASSES);
        model.input = input.to_vec();
        model.output = output.to_vec();
        model.bias = [bias[0], bias[1]];
        Ok(model)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::ModelFormat("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Trains on `(user, label)` pairs. The same examples in the same order
/// with the same seed always produce the same model.
pub fn train(examples: &[(&UserVector, Stance)], params: &StanceParams, seed: u64) -> Result<StanceModel> {
    let count = |s: Stance| examples.iter().filter(|e| e.1 == s).count();
    let (n0, n1) = (count(Stance::C0), count(Stance::C1));
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    if n0 < 2 || n1 < 2 {
        return Err(Error::InvalidInput(format!("need two examples per class, got {n0} and {n1}")));
    }
    let mut vocab: Vec<String> = examples.iter().flat_map(|(u, _)| u.counts.keys().cloned()).collect();
    vocab.sort();
    vocab.dedup();
    let dim = params.dim.max(1);
    let mut model = StanceModel::with_vocab(vocab, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / dim as f32;
    model.input.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));

    let encoded: Vec<(Vec<(usize, f32)>, Stance)> =
        examples.iter().map(|(u, s)| (features(&model.index, u), *s)).collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let total_steps = (params.epochs * encoded.len()).max(1) as f32;
    let mut step = 0usize;
    let mut grad_h = vec![0.0f32; dim];
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let (feats, label) = &encoded[idx];
            let lr = params.learning_rate * (1.0 - step as f32 / total_steps);
            step += 1;
            if feats.is_empty() {
                continue;
            }
            let h = model.hidden(feats);
            let p = softmax(model.logits(&h));
            let mut g = p;
            g[label.index()] -= 1.0;
            for k in 0..dim {
                let w = &mut model.output[k * CLASSES..(k + 1) * CLASSES];
                grad_h[k] = g[0] * w[0] + g[1] * w[1];
                w[0] -= lr * g[0] * h[k];
                w[1] -= lr * g[1] * h[k];
            }
            model.bias[0] -= lr * g[0];
            model.bias[1] -= lr * g[1];
            for &(t, weight) in feats {
                let row = &mut model.input[t * dim..(t + 1) * dim];
                row.iter_mut().zip(&grad_h).for_each(|(e, gh)| *e -= lr * weight * gh);
            }
        }
    }
    Ok(model)
}

/// Training pairs for every user labeled so far that has a retweet vector.
pub fn training_examples<'a>(assignment: &ClusterAssignment, vectors: &'a UserVectors) -> Vec<(&'a UserVector, Stance)> {
    assignment
        .stances
        .iter()
        .filter_map(|(u, l)| vectors.get(u).map(|v| (v, l.stance)))
        .collect()
}

/// Labels every not-yet-clustered user that retweeted at least
/// `min_accounts` accounts and is predicted with confidence strictly above
/// `threshold`. Returns the number of users added.
pub fn expand(model: &StanceModel, assignment: &mut ClusterAssignment, vectors: &UserVectors, params: &StanceParams) -> usize {
    let mut added = 0;
    for (user, v) in vectors {
        if assignment.clusters.contains_key(user) || assignment.stances.contains_key(user) {
            continue;
        }
        let activity = if params.distinct_accounts { v.distinct_accounts() as u64 } else { v.total() };
        if activity < params.min_accounts as u64 {
            continue;
        }
        let (stance, confidence) = model.predict(v);
        if confidence > params.threshold {
            assignment.stances.insert(
                user.clone(),
                StanceLabel {
                    stance,
                    source: LabelSource::Expanded,
                    confidence,
                },
            );
            added += 1;
        }
    }
    added
}

pub fn accuracy_on(model: &StanceModel, examples: &[(&UserVector, Stance)]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples.iter().filter(|(u, s)| model.predict(u).0 == *s).count();
    hits as f64 / examples.len() as f64
}

/// Trains on a random `split` share of the labeled users and reports
/// accuracy on the rest. Reshuffles (next seed) up to 10 times when a class
/// is missing from either side.
pub fn holdout_eval(examples: &[(&UserVector, Stance)], params: &StanceParams, seed: u64) -> Result<f64> {
    for attempt in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut idx: Vec<usize> = (0..examples.len()).collect();
        idx.shuffle(&mut rng);
        let cut = ((examples.len() as f64) * params.holdout_split).round() as usize;
        let (tr, te) = idx.split_at(cut.min(examples.len()));
        let pick = |ids: &[usize]| ids.iter().map(|&i| examples[i]).collect::<Vec<_>>();
        let (train_set, test_set) = (pick(tr), pick(te));
        let has_both = |set: &[(&UserVector, Stance)]| {
            set.iter().any(|e| e.1 == Stance::C0) && set.iter().any(|e| e.1 == Stance::C1)
        };
        if !has_both(&train_set) || !has_both(&test_set) {
            continue;
        }
        let model = train(&train_set, params, seed.wrapping_add(attempt))?;
        return Ok(accuracy_on(&model, &test_set));
    }
    Err(Error::InvalidInput("a class is missing from the holdout split after 10 reshuffles".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str, pairs: &[(&str, u32)]) -> UserVector {
        UserVector::from_counts(id, pairs.iter().map(|&(a, c)| (a, c)))
    }

    /// Mirrored fixture: C0 users retweet a*, C1 users retweet b*.
    fn separable(n: usize) -> Vec<(UserVector, Stance)> {
        let mut out = Vec::new();
        for i in 0..n {
            let k = (i % 5) as u32;
            out.push((user(&format!("l{i}"), &[("a1", 1 + k), ("a2", 2), ("a3", 1), ("a4", 1 + k % 2)]), Stance::C0));
            out.push((user(&format!("r{i}"), &[("b1", 1 + k), ("b2", 2), ("b3", 1), ("b4", 1 + k % 2)]), Stance::C1));
        }
        out
    }

    fn params() -> StanceParams {
        StanceParams { epochs: 50, ..Default::default() }
    }

    fn gate(threshold: f64) -> StanceParams {
        StanceParams { threshold, ..Default::default() }
    }

    fn refs(v: &[(UserVector, Stance)]) -> Vec<(&UserVector, Stance)> {
        v.iter().map(|(u, s)| (u, *s)).collect()
    }

    #[test]
    fn separable_training_accuracy() {
        let data = separable(20);
        let model = train(&refs(&data), &params(), 1).unwrap();
        assert_eq!(accuracy_on(&model, &refs(&data)), 1.0);
        let (stance, conf) = model.predict(&user("q", &[("a1", 3), ("a2", 1)]));
        assert_eq!(stance, Stance::C0);
        assert!(conf > 0.99, "confidence {conf}");
    }

    #[test]
    fn probabilities_are_a_distribution() {
        let data = separable(10);
        let model = train(&refs(&data), &params(), 2).unwrap();
        for (u, _) in &data {
            let p = model.probabilities(u);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<_> = separable(5).into_iter().filter(|e| e.1 == Stance::C0).collect();
        assert!(matches!(train(&refs(&data), &params(), 1), Err(Error::SingleClass)));
    }

    #[test]
    fn oov_user_is_uniform() {
        let data = separable(5);
        let model = train(&refs(&data), &params(), 1).unwrap();
        assert_eq!(model.probabilities(&user("q", &[("zz", 4)])), [0.5, 0.5]);
        assert_eq!(model.predict(&user("q", &[])).1, 0.5);
    }

    #[test]
    fn balanced_user_is_uncertain() {
        let data = separable(20);
        let model = train(&refs(&data), &params(), 4).unwrap();
        let (_, conf) = model.predict(&user("q", &[("a2", 1), ("b2", 1)]));
        assert!((conf - 0.5).abs() <= 0.05, "confidence {conf}");
    }

    #[test]
    fn mirrored_labels_mirror_confidence() {
        let data = separable(15);
        let swapped: Vec<_> = data.iter().map(|(u, s)| (u.clone(), s.other())).collect();
        let params = params();
        let m = train(&refs(&data), &params, 9).unwrap();
        let w = train(&refs(&swapped), &params, 9).unwrap();
        let queries = [
            user("q1", &[("a1", 2), ("b3", 1)]),
            user("q2", &[("b1", 1)]),
            user("q3", &[("a2", 1), ("a4", 5), ("b2", 2)]),
        ];
        for q in &queries {
            let (p, p2) = (m.probabilities(q), w.probabilities(q));
            assert!((p[0] - p2[1]).abs() <= 1e-6);
        }
    }

    fn assignment_with(clustered: &[(UserVector, Stance)]) -> ClusterAssignment {
        let ids: Vec<String> = clustered.iter().map(|(u, _)| u.user_id.clone()).collect();
        let labels: Vec<usize> = clustered.iter().map(|(_, s)| s.index()).collect();
        ClusterAssignment::from_clusters("t", &ids, &labels).unwrap()
    }

    #[test]
    fn expansion_gates() {
        let data = separable(20);
        let model = train(&refs(&data), &params(), 3).unwrap();
        let mut a = assignment_with(&data);
        let before = a.stances.clone();
        let mut vectors: UserVectors = data.iter().map(|(u, _)| (u.user_id.clone(), u.clone())).collect();
        // four distinct accounts: below the activity floor
        let four = user("x4", &[("a1", 9), ("a2", 9), ("a3", 9), ("a4", 9)]);
        let six = user("x6", &[("a1", 3), ("a2", 3), ("a3", 3), ("a4", 3), ("o1", 1), ("o2", 1)]);
        vectors.insert(four.user_id.clone(), four.clone());
        vectors.insert(six.user_id.clone(), six.clone());
        assert!(model.predict(&four).1 > 0.9);
        assert!(model.predict(&six).1 > 0.9);
        let added = expand(&model, &mut a, &vectors, &StanceParams::default());
        assert_eq!(added, 1);
        assert!(!a.stances.contains_key("x4"));
        assert_eq!(a.stances["x6"].stance, Stance::C0);
        assert_eq!(a.stances["x6"].source, LabelSource::Expanded);
        for (u, l) in &before {
            assert_eq!(a.stances[u], *l);
        }
        let by_total = StanceParams { distinct_accounts: false, ..Default::default() };
        assert_eq!(expand(&model, &mut a, &vectors, &by_total), 1);
        assert!(a.stances.contains_key("x4"));
    }

    #[test]
    fn threshold_is_strict() {
        // a model whose prediction is exactly 0.8 for C0
        let mut model = StanceModel::with_vocab(vec!["a".into()], 1);
        model.bias = [(0.8f32 / 0.2f32).ln(), 0.0];
        let v = user("q", &[("a", 1), ("b", 1), ("c", 1), ("d", 1), ("e", 1)]);
        let conf = model.predict(&v).1;
        let mut a = assignment_with(&separable(2));
        let mut vectors = UserVectors::new();
        vectors.insert("q".into(), v);
        assert_eq!(expand(&model, &mut a, &vectors, &gate(conf)), 0);
        assert_eq!(expand(&model, &mut a, &vectors, &gate(conf - 1e-6)), 1);
    }

    #[test]
    fn raising_threshold_never_adds_users() {
        let data = separable(10);
        let model = train(&refs(&data[..8]), &StanceParams { epochs: 1, ..Default::default() }, 5).unwrap();
        let mut vectors: UserVectors = UserVectors::new();
        for i in 0..40u32 {
            let v = user(&format!("n{i}"), &[("a1", 1 + i % 3), ("b1", 1 + i % 4), ("a2", 1), ("b2", 1 + i % 2), ("a3", 1)]);
            vectors.insert(v.user_id.clone(), v);
        }
        let mut last = usize::MAX;
        for t in [0.5, 0.6, 0.7, 0.8, 0.9, 0.99] {
            let mut a = assignment_with(&data[..8]);
            let n = expand(&model, &mut a, &vectors, &gate(t));
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn holdout_on_separable_data() {
        let data = separable(30);
        assert_eq!(holdout_eval(&refs(&data), &params(), 1).unwrap(), 1.0);
    }

    #[test]
    fn model_file_round_trip() {
        let data = separable(6);
        let model = train(&refs(&data), &params(), 1).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..8], b"STNCMDL\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let back = StanceModel::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, model);
        assert!(StanceModel::read_from(&bytes[..bytes.len() - 2]).is_err());
        assert!(StanceModel::read_from(&b"NOTAMODEL___"[..]).is_err());
    }
}
