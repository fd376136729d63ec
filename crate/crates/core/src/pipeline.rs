//! End-to-end orchestration: per-topic stages, then cross-topic aggregation.
//!
//! Layout under the output directory:
//!
//! ```text
//! topics/<name>/posts.jsonl            ingest
//! topics/<name>/vectors.tsv active.tsv user model
//! topics/<name>/embedding.tsv          projection
//! topics/<name>/clusters.tsv cluster_info.tsv
//! topics/<name>/labels.tsv stance_eval.tsv stance_model.bin
//! topics/<name>/valence_media.tsv valence_accounts.tsv media_users.tsv
//! aggregate/...                        alignment, embeddings, bias report
//! ```
//!
//! Every text artifact starts with a provenance line carrying the hash of
//! the configuration that produced it. With `resume`, a stage whose outputs
//! carry the expected hash is loaded instead of recomputed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias_predictor::{self, merge_labels, BiasParams, FeatureLayout, MediumFeatures};
use crate::clustering::{estimate_bandwidth, mean_shift, ClusterAssignment, LabelSource, MeanShiftParams, Stance};
use crate::error::{Error, Result};
use crate::graph_embeddings::{self, build_graph, EmbeddingParams, GraphMode, NodeEmbeddings};
use crate::ingest::{self, filter_topic, filter_us_users, read_post_files, Denylist, Gazetteer, Post, TopicConfig};
use crate::projection::{project, Embedding, ProjectionParams};
use crate::seeds::{derive_seed, named_seed};
use crate::stance_classifier::{self, StanceModel, StanceParams};
use crate::synthetic::{SynthCorpus, SynthParams};
use crate::tsv::{fmt_f64, write_file, Provenance, Table, TOOL_VERSION};
use crate::user_model::{build_vectors, top_active, vectors_from_table, vectors_table, Activity, UserVectors};
use crate::valence::{self, Anchors, ValenceParams, ValenceRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UserModelParams {
    /// Users embedded and clustered per topic.
    pub top_users: usize,
    pub activity: Activity,
    pub dense_cap: usize,
}

impl Default for UserModelParams {
    fn default() -> Self {
        Self {
            top_users: 1000,
            activity: Activity::Posts,
            dense_cap: crate::user_model::DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateParams {
    /// Fewer aligned topics than this aborts aggregation.
    pub min_aligned_topics: usize,
    pub graph_embeddings: bool,
}

impl Default for AggregateParams {
    fn default() -> Self {
        Self {
            min_aligned_topics: 2,
            graph_embeddings: true,
        }
    }
}

/// Whole-run configuration, read from TOML. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub gazetteer: Option<PathBuf>,
    #[serde(default)]
    pub anchors: Option<PathBuf>,
    #[serde(default)]
    pub gold: Option<PathBuf>,
    /// Per-medium dense vectors in the embedding text format.
    #[serde(default)]
    pub external_vectors: Option<PathBuf>,
    pub topics: Vec<TopicConfig>,
    #[serde(default)]
    pub user_model: UserModelParams,
    #[serde(default)]
    pub projection: ProjectionParams,
    #[serde(default)]
    pub clustering: MeanShiftParams,
    #[serde(default)]
    pub stance: StanceParams,
    #[serde(default)]
    pub valence: ValenceParams,
    #[serde(default)]
    pub embeddings: EmbeddingParams,
    #[serde(default)]
    pub bias: BiasParams,
    #[serde(default)]
    pub aggregate: AggregateParams,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.out);
        cfg.inputs.iter_mut().for_each(resolve);
        for p in [&mut cfg.gazetteer, &mut cfg.anchors, &mut cfg.gold, &mut cfg.external_vectors] {
            if let Some(p) = p.as_mut() {
                resolve(p);
            }
        }
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics.is_empty() {
            return Err(Error::Config("no topics configured".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.topics {
            t.validate()?;
            if !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("topic name {:?} may only use letters, digits, '-' and '_'", t.name)));
            }
            if !names.insert(&t.name) {
                return Err(Error::Config(format!("duplicate topic {:?}", t.name)));
            }
        }
        if self.inputs.is_empty() {
            return Err(Error::Config("no input files configured".into()));
        }
        let must_exist = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        for p in &self.inputs {
            must_exist("input", p)?;
        }
        for (what, p) in [
            ("gazetteer", &self.gazetteer),
            ("anchor file", &self.anchors),
            ("gold label file", &self.gold),
            ("external vector file", &self.external_vectors),
        ] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        if self.user_model.top_users == 0 {
            return Err(Error::Config("user_model.top_users must be positive".into()));
        }
        if self.user_model.top_users > self.user_model.dense_cap {
            return Err(Error::Config(format!(
                "user_model.top_users = {} exceeds dense_cap = {}",
                self.user_model.top_users, self.user_model.dense_cap
            )));
        }
        if !(self.stance.threshold >= 0.0 && self.stance.threshold < 1.0) {
            return Err(Error::Config("stance.threshold must lie in [0, 1)".into()));
        }
        if !(self.clustering.quantile > 0.0 && self.clustering.quantile <= 1.0) {
            return Err(Error::Config("clustering.quantile must lie in (0, 1]".into()));
        }
        self.embeddings.validate()?;
        if !(self.bias.c > 0.0) || self.bias.folds < 2 {
            return Err(Error::Config("bias.c must be positive and bias.folds at least 2".into()));
        }
        Ok(())
    }

    pub fn topic_dir(&self, topic: &str) -> PathBuf {
        self.out.join("topics").join(topic)
    }

    pub fn aggregate_dir(&self) -> PathBuf {
        self.out.join("aggregate")
    }
}

/// Per-topic stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    UserModel,
    Projection,
    Clustering,
    Stance,
    Valence,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::UserModel => "user_model",
            Stage::Projection => "projection",
            Stage::Clustering => "clustering",
            Stage::Stance => "stance",
            Stage::Valence => "valence",
        }
    }
}

/// Cross-topic stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AggregateStage {
    Align,
    Embed,
    Bias,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Last per-topic stage to run.
    pub until: Stage,
    /// Last aggregate stage to run, if any.
    pub aggregate: Option<AggregateStage>,
    /// Restrict per-topic work to one topic.
    pub topic: Option<String>,
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            until: Stage::Valence,
            aggregate: Some(AggregateStage::Bias),
            topic: None,
            resume: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicSummary {
    pub n_posts: usize,
    pub n_active: usize,
    pub n_clusters: usize,
    pub clustered: [usize; 2],
    pub expanded: [usize; 2],
    pub holdout_accuracy: Option<f64>,
    pub media_records: usize,
    pub account_records: usize,
    pub skipped: Vec<Stage>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateSummary {
    pub aligned_topics: Vec<String>,
    pub unaligned_topics: Vec<String>,
    pub media_averages: usize,
    pub report: Vec<bias_predictor::ReportRow>,
}

#[derive(Debug)]
pub struct RunReport {
    pub topics: Vec<(String, Result<TopicSummary>)>,
    pub aggregate: Option<Result<AggregateSummary>>,
}

impl RunReport {
    pub fn failed(&self) -> bool {
        self.topics.iter().any(|t| t.1.is_err()) || matches!(self.aggregate, Some(Err(_)))
    }
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("parameters serialize")
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// True when every file exists and carries `hash` in its header.
fn fresh(paths: &[PathBuf], hash: &str) -> bool {
    paths.iter().all(|p| Provenance::of_file(p).is_some_and(|prov| prov.config_hash == hash))
}

/// Rounds through the artifact text format so that fresh and resumed runs
/// see identical values.
fn as_written(x: f64) -> f64 {
    fmt_f64(x).parse().expect("formatted float parses")
}

/// Inputs shared by all topics.
struct Shared {
    posts: Vec<Post>,
    input_digest: String,
    gazetteer: Gazetteer,
    gazetteer_digest: String,
}

fn load_shared(cfg: &PipelineConfig) -> Result<Shared> {
    let parsed = read_post_files(&cfg.inputs)?;
    if parsed.skipped > 0 {
        warn!("skipped {} malformed or duplicate input lines", parsed.skipped);
    }
    let digests = cfg.inputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
    let (gazetteer, gazetteer_digest) = match &cfg.gazetteer {
        Some(p) => (Gazetteer::from_toml_file(p)?, file_digest(p)?),
        None => (Gazetteer::us_default(), "builtin".to_string()),
    };
    Ok(Shared {
        posts: parsed.posts,
        input_digest: short_hash(&digests.iter().map(String::as_str).collect::<Vec<_>>()),
        gazetteer,
        gazetteer_digest,
    })
}

/// Hash of every per-topic stage, each chained on its predecessor.
pub fn stage_hashes(cfg: &PipelineConfig, topic: &TopicConfig, input_digest: &str, gazetteer_digest: &str) -> BTreeMap<Stage, String> {
    let mut out = BTreeMap::new();
    let gaz = if topic.us_only { gazetteer_digest } else { "-" };
    let seed = cfg.seed.to_string();
    let ingest = short_hash(&["ingest", TOOL_VERSION, &seed, &json(topic), input_digest, gaz]);
    let user = short_hash(&["user_model", &ingest, &json(&cfg.user_model)]);
    let proj = short_hash(&["projection", &user, &json(&cfg.projection)]);
    let clu = short_hash(&["clustering", &proj, &json(&cfg.clustering)]);
    let stance = short_hash(&["stance", &clu, &json(&cfg.stance)]);
    let val = short_hash(&["valence", &stance, &json(&cfg.valence)]);
    for (s, h) in [
        (Stage::Ingest, ingest),
        (Stage::UserModel, user),
        (Stage::Projection, proj),
        (Stage::Clustering, clu),
        (Stage::Stance, stance),
        (Stage::Valence, val),
    ] {
        out.insert(s, h);
    }
    out
}

struct TopicRun<'a> {
    cfg: &'a PipelineConfig,
    topic: &'a TopicConfig,
    dir: PathBuf,
    hashes: BTreeMap<Stage, String>,
    seed: u64,
    resume: bool,
    summary: TopicSummary,
}

impl TopicRun<'_> {
    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn prov(&self, stage: Stage) -> Provenance {
        Provenance::new(self.hashes[&stage].clone(), self.cfg.seed)
    }

    fn is_fresh(&self, stage: Stage, files: &[&str]) -> bool {
        let fresh = self.resume && fresh(&files.iter().map(|f| self.path(f)).collect::<Vec<_>>(), &self.hashes[&stage]);
        if fresh {
            info!("[{}] {}: up to date, skipping", self.topic.name, stage.name());
        }
        fresh
    }

    fn write(&self, stage: Stage, file: &str, table: &Table) -> Result<()> {
        table.write(&self.path(file), Some(&self.prov(stage)))
    }

    fn ingest(&mut self, shared: &Shared) -> Result<Vec<Post>> {
        const FILE: &str = "posts.jsonl";
        if self.is_fresh(Stage::Ingest, &[FILE]) {
            self.summary.skipped.push(Stage::Ingest);
            return Ok(read_post_files(&[self.path(FILE)])?.posts);
        }
        let mut posts = filter_topic(&shared.posts, self.topic);
        if self.topic.us_only {
            posts = filter_us_users(&posts, &shared.gazetteer);
        }
        let mut text = self.prov(Stage::Ingest).header_line();
        text.push('\n');
        for p in &posts {
            text.push_str(&p.to_json_line());
            text.push('\n');
        }
        write_file(&self.path(FILE), &text)?;
        Ok(posts)
    }

    fn user_model(&mut self, posts: &[Post]) -> Result<(UserVectors, Vec<String>)> {
        const FILES: [&str; 2] = ["vectors.tsv", "active.tsv"];
        if self.is_fresh(Stage::UserModel, &FILES) {
            self.summary.skipped.push(Stage::UserModel);
            let vectors = vectors_from_table(&Table::read(&self.path(FILES[0]))?)?;
            let active = Table::read(&self.path(FILES[1]))?.rows.into_iter().filter_map(|r| r.into_iter().next()).collect();
            return Ok((vectors, active));
        }
        let vectors = build_vectors(posts);
        let ranked: Vec<(String, usize)> = top_active(posts, usize::MAX, self.cfg.user_model.activity)
            .into_iter()
            .filter(|(u, _)| vectors.contains_key(u))
            .take(self.cfg.user_model.top_users)
            .collect();
        self.write(Stage::UserModel, FILES[0], &vectors_table(&vectors))?;
        let mut t = Table::new(&["user_id", "activity"]);
        for (u, n) in &ranked {
            t.push([u.clone(), n.to_string()]);
        }
        self.write(Stage::UserModel, FILES[1], &t)?;
        Ok((vectors, ranked.into_iter().map(|r| r.0).collect()))
    }

    fn projection(&mut self, vectors: &UserVectors, active: &[String]) -> Result<Embedding> {
        const FILE: &str = "embedding.tsv";
        if self.is_fresh(Stage::Projection, &[FILE]) {
            self.summary.skipped.push(Stage::Projection);
            return Embedding::from_table(&Table::read(&self.path(FILE))?);
        }
        let refs: Vec<_> = active.iter().map(|u| &vectors[u]).collect();
        let mut emb = project(&refs, &self.cfg.projection, derive_seed(self.seed, 3, 0))?;
        emb.coords.iter_mut().for_each(|c| *c = as_written(*c));
        self.write(Stage::Projection, FILE, &emb.to_table())?;
        Ok(emb)
    }

    fn clustering(&mut self, emb: &Embedding) -> Result<ClusterAssignment> {
        const FILES: [&str; 2] = ["clusters.tsv", "cluster_info.tsv"];
        let name = &self.topic.name;
        if self.is_fresh(Stage::Clustering, &FILES) {
            self.summary.skipped.push(Stage::Clustering);
            let a = ClusterAssignment::from_clusters_table(name, &Table::read(&self.path(FILES[0]))?)?;
            self.summary.n_clusters = a.clusters.values().collect::<BTreeSet<_>>().len();
            return Ok(a);
        }
        let points = emb.points();
        let bandwidth = match self.cfg.clustering.bandwidth {
            Some(b) => b,
            None => estimate_bandwidth(&points, self.cfg.clustering.quantile)?,
        };
        let ms = mean_shift(&points, bandwidth, &self.cfg.clustering)?;
        self.summary.n_clusters = ms.centers.len();
        let a = ClusterAssignment::from_clusters(name, &emb.user_ids, &ms.labels)?;
        self.write(Stage::Clustering, FILES[0], &a.clusters_table())?;
        let mut info = Table::new(&["metric", "value"]);
        info.push(["bandwidth".to_string(), fmt_f64(bandwidth)]);
        info.push(["clusters".to_string(), ms.centers.len().to_string()]);
        info.push(["c0_size".to_string(), a.cluster_size(a.c0).to_string()]);
        info.push(["c1_size".to_string(), a.cluster_size(a.c1).to_string()]);
        self.write(Stage::Clustering, FILES[1], &info)?;
        Ok(a)
    }

    fn stance(&mut self, vectors: &UserVectors, mut a: ClusterAssignment) -> Result<ClusterAssignment> {
        const FILES: [&str; 2] = ["labels.tsv", "stance_eval.tsv"];
        const MODEL: &str = "stance_model.bin";
        if self.is_fresh(Stage::Stance, &FILES) && self.path(MODEL).is_file() {
            self.summary.skipped.push(Stage::Stance);
            a.apply_labels_table(&Table::read(&self.path(FILES[0]))?)?;
            let eval = Table::read(&self.path(FILES[1]))?;
            self.summary.holdout_accuracy = eval
                .rows
                .iter()
                .find(|r| r.first().is_some_and(|m| m == "holdout_accuracy"))
                .and_then(|r| r.get(1)?.parse().ok());
            return Ok(a);
        }
        let params = &self.cfg.stance;
        let examples = stance_classifier::training_examples(&a, vectors);
        let model = stance_classifier::train(&examples, params, derive_seed(self.seed, 5, 0))?;
        let holdout = match stance_classifier::holdout_eval(&examples, params, derive_seed(self.seed, 5, 1)) {
            Ok(acc) => Some(acc),
            Err(e) => {
                warn!("[{}] holdout evaluation skipped: {e}", self.topic.name);
                None
            }
        };
        stance_classifier::expand(&model, &mut a, vectors, params);
        let model_path = self.path(MODEL);
        write_model(&model, &model_path)?;
        self.write(Stage::Stance, FILES[0], &a.labels_table())?;
        let mut eval = Table::new(&["metric", "value"]);
        for s in [Stance::C0, Stance::C1] {
            eval.push([format!("clustered_{}", s.as_str()), a.count(s, Some(LabelSource::Clustered)).to_string()]);
            eval.push([format!("expanded_{}", s.as_str()), a.count(s, Some(LabelSource::Expanded)).to_string()]);
        }
        eval.push(["holdout_accuracy".to_string(), holdout.map_or("NA".to_string(), fmt_f64)]);
        self.write(Stage::Stance, FILES[1], &eval)?;
        self.summary.holdout_accuracy = holdout.map(as_written);
        Ok(a)
    }

    fn valence(&mut self, posts: &[Post], a: &ClusterAssignment) -> Result<(Vec<ValenceRecord>, Vec<ValenceRecord>)> {
        const FILES: [&str; 3] = ["valence_media.tsv", "valence_accounts.tsv", "media_users.tsv"];
        if self.is_fresh(Stage::Valence, &FILES) {
            self.summary.skipped.push(Stage::Valence);
            let media = valence::records_from_table(&Table::read(&self.path(FILES[0]))?)?;
            let accounts = valence::records_from_table(&Table::read(&self.path(FILES[1]))?)?;
            return Ok((media, accounts));
        }
        let params = &self.cfg.valence;
        let denylist = Denylist::new(ingest::DEFAULT_SHORTENERS.iter().copied().chain(params.denylist.iter().map(String::as_str)));
        let cites = valence::collect_citations(posts, &a.stances, &denylist);
        let name = &self.topic.name;
        let media = valence::score_media(name, &cites, params)?;
        let accounts = valence::score_accounts(name, &cites, params)?;
        self.write(Stage::Valence, FILES[0], &valence::records_table(&media))?;
        self.write(Stage::Valence, FILES[1], &valence::records_table(&accounts))?;
        let mut mu = Table::new(&["domain", "user_id", "count"]);
        for (d, users) in &cites.media_users {
            for (u, n) in users {
                mu.push([d.clone(), u.clone(), n.to_string()]);
            }
        }
        self.write(Stage::Valence, FILES[2], &mu)?;
        Ok((media, accounts))
    }
}

fn write_model(model: &StanceModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs one topic's stages up to `until`; errors carry the failing stage.
fn run_topic_inner(cfg: &PipelineConfig, topic: &TopicConfig, shared: &Shared, until: Stage, resume: bool) -> Result<TopicSummary> {
    let mut run = TopicRun {
        cfg,
        topic,
        dir: cfg.topic_dir(&topic.name),
        hashes: stage_hashes(cfg, topic, &shared.input_digest, &shared.gazetteer_digest),
        seed: named_seed(cfg.seed, &topic.name),
        resume,
        summary: TopicSummary::default(),
    };
    let posts = run.ingest(shared).map_err(|e| e.at_stage("ingest"))?;
    run.summary.n_posts = posts.len();
    if until == Stage::Ingest {
        return Ok(run.summary);
    }
    let (vectors, active) = run.user_model(&posts).map_err(|e| e.at_stage("user_model"))?;
    run.summary.n_active = active.len();
    if until == Stage::UserModel {
        return Ok(run.summary);
    }
    let emb = run.projection(&vectors, &active).map_err(|e| e.at_stage("projection"))?;
    if until == Stage::Projection {
        return Ok(run.summary);
    }
    let a = run.clustering(&emb).map_err(|e| e.at_stage("clustering"))?;
    run.summary.clustered = [a.count(Stance::C0, None), a.count(Stance::C1, None)];
    if until == Stage::Clustering {
        return Ok(run.summary);
    }
    let a = run.stance(&vectors, a).map_err(|e| e.at_stage("stance"))?;
    for s in [Stance::C0, Stance::C1] {
        run.summary.clustered[s.index()] = a.count(s, Some(LabelSource::Clustered));
        run.summary.expanded[s.index()] = a.count(s, Some(LabelSource::Expanded));
    }
    if until == Stage::Stance {
        return Ok(run.summary);
    }
    let (media, accounts) = run.valence(&posts, &a).map_err(|e| e.at_stage("valence"))?;
    run.summary.media_records = media.len();
    run.summary.account_records = accounts.len();
    Ok(run.summary)
}

/// Runs a single topic by name.
pub fn run_topic(cfg: &PipelineConfig, topic: &str, until: Stage, resume: bool) -> Result<TopicSummary> {
    let t = cfg
        .topics
        .iter()
        .find(|t| t.name == topic)
        .ok_or_else(|| Error::Config(format!("unknown topic {topic:?}")))?;
    let shared = load_shared(cfg).map_err(|e| e.at_stage("ingest"))?;
    run_topic_inner(cfg, t, &shared, until, resume)
}

/// Per-topic outputs the aggregate stages read back from disk.
struct TopicValence {
    name: String,
    hash: String,
    media: Vec<ValenceRecord>,
    accounts: Vec<ValenceRecord>,
    media_users: BTreeMap<String, BTreeMap<String, u64>>,
    posts_path: PathBuf,
}

fn load_topic_valence(cfg: &PipelineConfig, topic: &str) -> Option<TopicValence> {
    let dir = cfg.topic_dir(topic);
    let media_path = dir.join("valence_media.tsv");
    let hash = Provenance::of_file(&media_path)?.config_hash;
    let read = |f: &str| -> Result<Table> { Table::read(&dir.join(f)) };
    let load = || -> Result<TopicValence> {
        let media = valence::records_from_table(&read("valence_media.tsv")?)?;
        let accounts = valence::records_from_table(&read("valence_accounts.tsv")?)?;
        let mut media_users: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for row in read("media_users.tsv")?.rows {
            if let [d, u, n] = row.as_slice() {
                let n: u64 = n.parse().map_err(|_| Error::InvalidInput(format!("bad count in media_users row {row:?}")))?;
                media_users.entry(d.clone()).or_default().insert(u.clone(), n);
            }
        }
        Ok(TopicValence {
            name: topic.to_string(),
            hash: hash.clone(),
            media,
            accounts,
            media_users,
            posts_path: dir.join("posts.jsonl"),
        })
    };
    match load() {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("[{topic}] unreadable valence outputs: {e}");
            None
        }
    }
}

fn run_aggregate_inner(cfg: &PipelineConfig, until: AggregateStage, resume: bool) -> Result<AggregateSummary> {
    let dir = cfg.aggregate_dir();
    let topics: Vec<TopicValence> = cfg.topics.iter().filter_map(|t| load_topic_valence(cfg, &t.name)).collect();
    let anchors_path = cfg.anchors.as_ref().ok_or_else(|| Error::Config("aggregation needs an anchor file".into()))?;
    let anchors = Anchors::read(anchors_path)?;
    let anchors_digest = file_digest(anchors_path)?;
    let topic_hashes: Vec<String> = topics.iter().map(|t| format!("{}={}", t.name, t.hash)).collect();
    let align_hash = short_hash(&[&["align", TOOL_VERSION, &anchors_digest], &topic_hashes.iter().map(String::as_str).collect::<Vec<_>>()[..]].concat());
    let prov = |h: &str| Provenance::new(h, cfg.seed);

    // sign alignment on media and accounts together
    let combined: BTreeMap<String, Vec<ValenceRecord>> =
        topics.iter().map(|t| (t.name.clone(), [t.media.clone(), t.accounts.clone()].concat())).collect();
    let (_, signs) = valence::align_signs(&combined, &anchors);
    let mut summary = AggregateSummary::default();
    let mut sign_table = Table::new(&["topic", "sign", "status"]);
    for t in &cfg.topics {
        match (signs.get(&t.name), topics.iter().any(|v| v.name == t.name)) {
            (Some(Some(s)), _) => {
                summary.aligned_topics.push(t.name.clone());
                sign_table.push([t.name.clone(), s.to_string(), "aligned".into()]);
            }
            (Some(None), _) => {
                summary.unaligned_topics.push(t.name.clone());
                sign_table.push([t.name.clone(), "NA".into(), "unaligned".into()]);
            }
            (None, _) => sign_table.push([t.name.clone(), "NA".into(), "missing".into()]),
        }
    }
    sign_table.write(&dir.join("signs.tsv"), Some(&prov(&align_hash)))?;
    if summary.aligned_topics.len() < cfg.aggregate.min_aligned_topics {
        return Err(Error::InvalidInput(format!(
            "only {} aligned topic(s) ({}); need at least {}",
            summary.aligned_topics.len(),
            summary.aligned_topics.join(", "),
            cfg.aggregate.min_aligned_topics
        )));
    }
    let aligned: Vec<&TopicValence> = topics.iter().filter(|t| summary.aligned_topics.contains(&t.name)).collect();
    let mut media_aligned = Vec::new();
    let mut accounts_aligned = Vec::new();
    for t in &aligned {
        let s = signs[&t.name].expect("aligned topic has a sign");
        media_aligned.extend(valence::apply_sign(&t.media, s));
        accounts_aligned.extend(valence::apply_sign(&t.accounts, s));
    }
    let media_avg = valence::average_valence(&media_aligned);
    let account_avg = valence::average_valence(&accounts_aligned);
    summary.media_averages = media_avg.len();
    valence::records_table(&media_aligned).write(&dir.join("valence_media.tsv"), Some(&prov(&align_hash)))?;
    valence::records_table(&accounts_aligned).write(&dir.join("valence_accounts.tsv"), Some(&prov(&align_hash)))?;
    valence::averages_table(&media_avg).write(&dir.join("average_media.tsv"), Some(&prov(&align_hash)))?;
    valence::averages_table(&account_avg).write(&dir.join("average_accounts.tsv"), Some(&prov(&align_hash)))?;
    if until == AggregateStage::Align {
        return Ok(summary);
    }

    // graph embeddings over the aligned topics' posts
    let mut medium_vectors: BTreeMap<String, NodeEmbeddings> = BTreeMap::new();
    if cfg.aggregate.graph_embeddings {
        let embed_hash = short_hash(&[&["embed", &align_hash, &json(&cfg.embeddings)], &topic_hashes.iter().map(String::as_str).collect::<Vec<_>>()[..]].concat());
        let mut citing: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for t in &aligned {
            for (d, users) in &t.media_users {
                let e = citing.entry(d.clone()).or_default();
                for (u, n) in users {
                    *e.entry(u.clone()).or_default() += n;
                }
            }
        }
        let mut posts: Option<Vec<Post>> = None;
        for mode in [GraphMode::Hashtag, GraphMode::Mention] {
            let node_file = dir.join(format!("embeddings_{}.txt", mode.short_name()));
            let medium_file = dir.join(format!("media_embeddings_{}.txt", mode.short_name()));
            let media_emb = if resume && fresh(&[node_file.clone(), medium_file.clone()], &embed_hash) {
                info!("aggregate embed {}: up to date, skipping", mode.short_name());
                NodeEmbeddings::read(&medium_file)?
            } else {
                let posts = posts.get_or_insert_with(|| {
                    let mut seen = BTreeSet::new();
                    let mut all = Vec::new();
                    for t in &aligned {
                        match read_post_files(&[&t.posts_path]) {
                            Ok(p) => all.extend(p.posts.into_iter().filter(|p| seen.insert(p.post_id.clone()))),
                            Err(e) => warn!("[{}] cannot read posts: {e}", t.name),
                        }
                    }
                    all
                });
                let graph = build_graph(posts, mode);
                let seed = derive_seed(cfg.seed, 20, mode as u64);
                let nodes = graph_embeddings::embed_graph(&graph, &cfg.embeddings, seed)?;
                nodes.write(&node_file, Some(&prov(&embed_hash)))?;
                let mut media = NodeEmbeddings {
                    dim: nodes.dim,
                    vectors: BTreeMap::new(),
                };
                for (d, users) in &citing {
                    if let Some(v) = graph_embeddings::medium_embedding(users, &nodes) {
                        media.vectors.insert(d.clone(), v.into_iter().map(as_written).collect());
                    }
                }
                media.write(&medium_file, Some(&prov(&embed_hash)))?;
                media
            };
            medium_vectors.insert(mode.short_name().to_string(), media_emb);
        }
    }
    if until == AggregateStage::Embed {
        return Ok(summary);
    }

    // bias prediction
    let Some(gold_path) = &cfg.gold else {
        warn!("no gold label file configured; skipping bias evaluation");
        return Ok(summary);
    };
    let gold = bias_predictor::read_gold(gold_path)?;
    let external = match &cfg.external_vectors {
        Some(p) => Some(NodeEmbeddings::read(p)?),
        None => None,
    };
    let external: Option<BTreeMap<String, Vec<f64>>> =
        external.map(|e| e.vectors.into_iter().map(|(k, v)| (ingest::extract_domain(&k).unwrap_or(k), v)).collect());
    let bias_hash = short_hash(&[
        "bias",
        &align_hash,
        &json(&cfg.bias),
        &json(&cfg.embeddings),
        &file_digest(gold_path)?,
        &cfg.external_vectors.as_ref().map(|p| file_digest(p)).transpose()?.unwrap_or_default(),
    ]);
    let mut per_topic: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in &media_aligned {
        per_topic.entry(r.influencer_id.as_str()).or_default().insert(r.topic.as_str(), r.score);
    }
    let mut media = Vec::new();
    let mut labels = Vec::new();
    let mut avg = Vec::new();
    let mut confusion_pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in &gold {
        if !seen.insert(rec.domain.clone()) {
            continue;
        }
        let Some(a) = media_avg.get(&rec.domain) else { continue };
        confusion_pairs.push((a.category, rec.bias));
        let Some(leaning) = merge_labels(rec.bias) else { continue };
        let m = MediumFeatures {
            domain: rec.domain.clone(),
            valence: per_topic
                .get(rec.domain.as_str())
                .map(|m| m.iter().map(|(t, s)| (t.to_string(), *s)).collect())
                .unwrap_or_default(),
            graph: medium_vectors
                .iter()
                .filter_map(|(g, e)| e.vectors.get(&rec.domain).map(|v| (g.clone(), v.clone())))
                .collect(),
            external: external.as_ref().and_then(|e| e.get(&rec.domain).cloned()),
        };
        media.push(m);
        labels.push(leaning);
        avg.push(a.score);
    }
    let mut layout = FeatureLayout::infer(&media, &summary.aligned_topics);
    for (g, e) in &medium_vectors {
        if !layout.graph.iter().any(|(n, _)| n == g) && !e.vectors.is_empty() {
            layout.graph.push((g.clone(), e.dim));
        }
    }
    layout.graph.sort();
    let report = bias_predictor::evaluate(&media, &labels, &avg, &layout, &cfg.bias, derive_seed(cfg.seed, 30, 0))?;
    bias_predictor::report_table(&report).write(&dir.join("bias_report.tsv"), Some(&prov(&bias_hash)))?;
    let confusion = bias_predictor::confusion_table(&confusion_pairs);
    bias_predictor::confusion_to_table(&confusion).write(&dir.join("confusion.tsv"), Some(&prov(&bias_hash)))?;
    summary.report = report;
    Ok(summary)
}

/// Cross-topic stages over whatever topic outputs exist on disk.
pub fn run_aggregate(cfg: &PipelineConfig, until: AggregateStage, resume: bool) -> Result<AggregateSummary> {
    run_aggregate_inner(cfg, until, resume).map_err(|e| match e {
        e @ Error::Config(_) => e,
        e => e.at_stage("aggregate"),
    })
}

/// Topics in parallel, then (after all of them finish) the aggregate.
/// `Err` means the run could not start; stage failures are reported per
/// topic in the returned report.
pub fn run(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    if let Some(t) = &opts.topic {
        if !cfg.topics.iter().any(|c| &c.name == t) {
            return Err(Error::Config(format!("unknown topic {t:?}")));
        }
    }
    if opts.aggregate.is_some() && cfg.anchors.is_none() {
        return Err(Error::Config("aggregation needs `anchors` in the config".into()));
    }
    let shared = load_shared(cfg).map_err(|e| e.at_stage("ingest"))?;
    let selected: Vec<&TopicConfig> = cfg.topics.iter().filter(|t| opts.topic.as_ref().is_none_or(|n| &t.name == n)).collect();
    let topics: Vec<(String, Result<TopicSummary>)> = selected
        .par_iter()
        .map(|t| {
            let r = run_topic_inner(cfg, t, &shared, opts.until, opts.resume);
            match &r {
                Ok(s) => info!(
                    "[{}] done: {} posts, {} active, clusters {:?}, expanded {:?}",
                    t.name, s.n_posts, s.n_active, s.clustered, s.expanded
                ),
                Err(e) => warn!("[{}] failed: {e}", t.name),
            }
            (t.name.clone(), r)
        })
        .collect();
    let aggregate = opts.aggregate.map(|until| run_aggregate(cfg, until, opts.resume));
    Ok(RunReport { topics, aggregate })
}

/// Writes a synthetic corpus plus ground truth, gold labels, anchors and a
/// ready-to-run `config.toml` into `dir`.
pub fn write_synth_bundle(dir: &Path, params: &SynthParams) -> Result<SynthCorpus> {
    let corpus = crate::synthetic::generate(params)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prov = Provenance::new(short_hash(&["synth", TOOL_VERSION, &json(params)]), params.seed);
    let mut text = prov.header_line();
    text.push('\n');
    for p in &corpus.posts {
        text.push_str(&p.to_json_line());
        text.push('\n');
    }
    write_file(&dir.join("posts.jsonl"), &text)?;
    corpus.users_table().write(&dir.join("users.tsv"), Some(&prov))?;
    corpus.gold_table().write(&dir.join("gold.tsv"), Some(&prov))?;
    corpus.anchors_table().write(&dir.join("anchors.tsv"), Some(&prov))?;
    let end = params.start_date + chrono::Days::new(params.days as u64);
    let mut cfg = format!(
        "seed = {}\nout = \"out\"\ninputs = [\"posts.jsonl\"]\nanchors = \"anchors.tsv\"\ngold = \"gold.tsv\"\n",
        params.seed
    );
    for t in &params.topics {
        cfg.push_str(&format!(
            "\n[[topics]]\nname = \"{t}\"\nkeywords = [\"#{t}\"]\ndate_start = {}\ndate_end = {end}\nus_only = true\n",
            params.start_date
        ));
    }
    write_file(&dir.join("config.toml"), &cfg)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_paths_resolve_against_base() {
        let text = r##"
            inputs = ["data/a.jsonl"]
            anchors = "/abs/anchors.tsv"
            [[topics]]
            name = "t"
            keywords = ["#t"]
            date_start = 2020-01-01
            date_end = 2020-01-31
            [projection]
            epochs = 50
        "##;
        let cfg = PipelineConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.inputs[0], Path::new("/base/data/a.jsonl"));
        assert_eq!(cfg.anchors.as_deref(), Some(Path::new("/abs/anchors.tsv")));
        assert_eq!(cfg.out, Path::new("/base/out"));
        assert_eq!(cfg.projection.epochs, 50);
        assert_eq!(cfg.projection.n_neighbors, 15);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "inputs = []\ntopics = []\nbogus = 1\n";
        assert!(matches!(PipelineConfig::parse(text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn stage_hashes_chain() {
        let text = "inputs = [\"x\"]\n[[topics]]\nname = \"t\"\nkeywords = [\"#t\"]\ndate_start = 2020-01-01\ndate_end = 2020-01-02\n";
        let mut cfg = PipelineConfig::parse(text, Path::new(".")).unwrap();
        let t = cfg.topics[0].clone();
        let a = stage_hashes(&cfg, &t, "in", "gz");
        cfg.clustering.quantile = 0.2;
        let b = stage_hashes(&cfg, &t, "in", "gz");
        assert_eq!(a[&Stage::Projection], b[&Stage::Projection]);
        assert_ne!(a[&Stage::Clustering], b[&Stage::Clustering]);
        assert_ne!(a[&Stage::Valence], b[&Stage::Valence]);
        // gazetteer only matters for US-filtered topics
        assert_eq!(a[&Stage::Ingest], stage_hashes(&cfg, &t, "in", "other")[&Stage::Ingest]);
        cfg.seed = 9;
        assert_ne!(a[&Stage::Ingest], stage_hashes(&cfg, &t, "in", "gz")[&Stage::Ingest]);
    }
}
