//! Sparse evidence sampling for question answering over long documents
//! with interleaved text and images.

pub mod doc_model;
pub mod embedding;
pub mod limits;
pub mod sampler;
pub mod adapter_train;
pub mod generation;
pub mod dataset_builder;
pub mod evaluation;
pub mod engine;
