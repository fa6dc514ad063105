//! Multi-view spatial-temporal travel time estimation.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`dataio`]: road network / trajectory file formats, synthetic worlds, splits
//! - [`roadgraph`]: trajectory-conditioned subgraphs and node-walk corpora
//! - [`graph2vec`]: skipgram embeddings of subgraphs over the node vocabulary
//! - [`tensor`]: dense tensors with reverse-mode differentiation
//! - [`nn`]: embedding, LSTM, same-padded convolution and self-attention layers
//! - [`mvstm`]: the three-view model, MAPE training and checkpoints
//! - [`eval`]: metrics, the Simple ETA baseline and the experiment runner
//! - [`cli`]: the `mvstm` command-line front end

pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod graph2vec;
pub mod mvstm;
pub mod nn;
pub mod roadgraph;
pub mod tensor;

pub use error::{Error, Result};
