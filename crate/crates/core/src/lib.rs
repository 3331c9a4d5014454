//! Information-bottleneck noise filtering for retrieval-augmented generation.
//!
//! The crate scores candidate compressions of retrieved passages with an
//! information-bottleneck objective estimated through LM log-probabilities,
//! mines extractive candidates, builds silver SFT and preference datasets,
//! and evaluates filter outputs (EM, F1, flip rates, mean IB, compression).

pub mod corpus;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod ib;
pub mod miners;
pub mod text;

pub use corpus::{Passage, QARecord};
pub use ib::{IbConfig, IbScore, IbScorer};
pub use miners::{Compression, CompressionMethod};

