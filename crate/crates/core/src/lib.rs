//! Toolkit for boosted paired-comparison image quality studies.
//!
//! The pipeline runs from stimulus preparation ([`stimuli`]) and study design
//! ([`sampling`]) through vote collection ([`service`]) to Thurstone scaling
//! ([`reconstruction`]), worker screening ([`screening`]) and the evaluation
//! of full-reference metrics ([`metrics`], [`stats`]). [`simulate`] provides
//! synthetic observers for validating all of it.

pub mod cli;
pub mod image;
pub mod metrics;
pub mod normal;
pub mod optim;
pub mod reconstruction;
pub mod report;
pub mod sampling;
pub mod screening;
pub mod service;
pub mod simulate;
pub mod stats;
pub mod stimuli;
pub mod votes;

pub use image::{GrayImage, RgbImage};
