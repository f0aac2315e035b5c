//! Knowledge-graph embeddings and link prediction for drug-drug interactions.
//!
//! The crate covers the whole desk-scale pipeline: ingest triple files into
//! one [`graph::KnowledgeGraph`], learn entity embeddings five ways
//! (random-walk skip-gram, PageRank co-occurrence GloVe, TransE, ComplEx,
//! SimplE), build drug-pair features, train baseline classifiers and a
//! Conv-LSTM network, and evaluate with AUPR / ROC-AUC / F1 / MCC.

pub mod baselines;
pub mod config;
pub mod convlstm;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod optim;
pub mod pairs;
pub mod pipeline;
pub mod rng;
pub mod shallow;
pub mod synth;
pub mod triple;
pub mod walks;

pub use error::{Error, Result};
