//! Spatial constraint reasoning for point-of-interest question answering.
//!
//! The crate covers the whole pipeline: a synthetic POI [`geo`] catalog, a
//! template-driven question generator ([`datagen`]), a small reverse-mode
//! [`autodiff`] engine, the learned spatial reasoner ([`spatial`]), the joint
//! spatio-textual scorer ([`joint`]), max-margin [`train`]ing and the
//! evaluation harness ([`eval`]).

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geo;
pub mod joint;
pub mod rank;
pub mod rng;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/catalog.md")]
    mod catalog {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/spatial.md")]
    mod spatial {}
    #[doc = include_str!("../../../book/src/joint.md")]
    mod joint {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
