pub mod bias_predictor;
pub mod clustering;
pub mod error;
pub mod graph_embeddings;
pub mod ingest;
pub mod optim;
pub mod pipeline;
pub mod projection;
pub mod seeds;
pub mod stance_classifier;
pub mod synthetic;
pub mod tsv;
pub mod user_model;
pub mod valence;

pub use error::{Error, Result};
