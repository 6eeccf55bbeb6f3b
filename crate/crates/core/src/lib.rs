//! Federated training of graph convolutional networks with shared node embeddings.
//!
//! Hosts each see a subset of node attributes but the full topology. Every
//! iteration a host samples a subgraph, runs the first convolution locally,
//! and exchanges the resulting node embeddings through an aggregation server
//! that averages them per node over the hosts allowed to see that node. Weight
//! matrices are averaged every `q` iterations.
//!
//! The [`theory`] module materializes the linearized update maps of the two
//! layer network and certifies the spectral conditions under which one
//! federated iteration is a contraction.

pub mod aggregator;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod gcn;
pub mod graph;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod theory;
pub mod trainer;

pub use error::{FerasError, Result};
