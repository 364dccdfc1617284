//! Flat-minima transfer attacks over diverse surrogate ensembles.
//!
//! - [`nn`]: tiny classifiers with exact input gradients.
//! - [`forge`]: datasets, training, and the two-axis diverse surrogate ensemble.
//! - [`attack`]: I-FGSM, MI-FGSM, RAP, Flat-RAP, Flat-CWA and DRAP, plus the
//!   gradient-call cost model.
//! - [`bound`]: numerical evaluation of every term of the transferability bound.
//! - [`harness`]: data ingestion, experiment orchestration, ASR tables and CSV output.

pub mod attack;
pub mod bound;
pub mod forge;
pub mod harness;
pub mod kv;
pub mod nn;
