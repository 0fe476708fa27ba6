//! IO, file formats, transports, and orchestration around `obbr-core`:
//! line-delimited JSON datasets with metadata sidecars, the persisted benign
//! index, HTTP chat/embeddings clients, bounded-concurrency execution, and
//! the `obbr` CLI.

pub mod cli;
pub mod config;
pub mod http;
pub mod index_io;
pub mod jsonl;
pub mod parallel;
pub mod report;
