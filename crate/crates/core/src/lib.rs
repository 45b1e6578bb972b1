//! Data pipeline for clinical problem-list summarisation.
//!
//! The crate covers three stages:
//!
//! * **Pre-training corpora.** Progress notes are segmented into sentences,
//!   annotated on two concept channels ([`annotation`]), and rewritten with
//!   numbered sentinel tokens whose dropped-out spans form a pseudo-summary
//!   target ([`masking`], [`corpus`]).
//! * **Augmentation.** Paraphrases of assessment sentences are generated from
//!   instruction templates with self-debiased decoding over a pluggable
//!   next-token model ([`augmentation`]), scored against their sources and cut
//!   down to the best fraction ([`similarity`]).
//! * **Fine-tuning data and evaluation.** Task instances are composed from
//!   note sections ([`dataset`]) and predictions are scored with ROUGE-1/2/L
//!   ([`rouge`]).
//!
//! Every stochastic step draws from a seeded stream derived from one global
//! seed ([`rng`]), so identical inputs always produce byte-identical outputs.

pub mod annotation;
pub mod augmentation;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod masking;
pub mod rng;
pub mod rouge;
pub mod similarity;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
