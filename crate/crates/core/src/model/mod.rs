//! A small UniLM-style seq2seq transformer trained from scratch, with
//! per-layer knowledge injection and a copy-label head.

mod checkpoint;
mod config;
mod knowledge;
mod network;
mod ops;
mod params;
mod train;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use knowledge::{
    bidirectional_states, encode_knowledge, knowledge_token_ids, KnowledgeEncoding,
};
pub use network::{
    embed_input, inject_knowledge, loss, seq2seq_mask, ForwardOutput, ForwardTrace,
    LayerKnowledge, Model,
};
pub use ops::{sigmoid, softmax};
pub use params::{
    GruParams, InjectionParams, KnowledgeEncoderParams, LayerParams, Parameters,
};
pub use train::{teacher_forced_accuracy, train, train_with, Adam, TrainingExample, TrainingLog};
