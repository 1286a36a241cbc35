//! File formats, pipeline stages and the `aesg` command-line tool built on
//! [`aesg_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod embeddings;
pub mod error;
pub mod pipeline;
pub mod provenance;
pub mod tables;

pub use error::{Error, Result};
