//! Block simplicial complex networks for link prediction.
//!
//! The crate covers the whole pipeline: clique complexes and their signed
//! boundary matrices ([`complex`]), Hodge Laplacians and block operators
//! ([`hodge`]), a reverse-mode tape over dense matrices ([`autodiff`]), the
//! adaptive block convolution model ([`model`]), training and evaluation
//! ([`training`]), centrality features ([`features`]) and the SEIR harness
//! that scores reconstructed contact networks ([`epidemic`]).

pub mod autodiff;
pub mod complex;
pub mod config;
pub mod epidemic;
pub mod error;
pub mod features;
pub mod graph;
pub mod hodge;
pub mod linalg;
pub mod model;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use graph::Graph;
