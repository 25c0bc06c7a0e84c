//! Proposition-grounded synthetic dialog generation and conversational
//! retrieval evaluation.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] ingests documents and chunks units into sublists,
//! * [`gateway`] talks to chat/embedding backends (live HTTP or a replayable mock),
//! * [`synth`] turns documents into annotated dialogs,
//! * [`retrieval`] provides BM25, dense cosine and reciprocal rank fusion,
//! * [`rewrite`] formulates queries from dialog turns,
//! * [`eval`] computes MAP, R@k, BLEU and corpus statistics,
//! * [`cli`] wires everything into the `propdial` executable.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod retrieval;
pub mod rewrite;
pub mod synth;

mod jsonl;

pub use error::{Error, Result};
