//! Media-consumption quantification over tweet streams.
//!
//! The crate is organised as a set of pipeline stages that can be used
//! independently:
//!
//! - [`ingest`]: newline-delimited tweet JSON into [`ingest::TweetRecord`]s, plus
//!   stream sampling-rate estimation from rate-limit notices.
//! - [`geoparse`]: free-form profile locations resolved against a gazetteer.
//! - [`registry`]: the media-outlet registry, factuality/credibility rules and
//!   handle resolution by URL matching.
//! - [`interactions`]: weighted user-to-media interaction events and sparse
//!   interaction matrices, cutoffs and information-flow ratios.
//! - [`clustering`]: KMeans++ with distortion, silhouette and Davies–Bouldin
//!   scores, stability across seeds and cluster profiles.
//! - [`crosscountry`]: source/target groups, transition probabilities and
//!   risk ratios for a pair of countries.
//! - [`regression`]: ridge, gradient-boosted trees and random forests scored
//!   by R² under k-fold cross-validation.
//! - [`pipeline`]: sharded ingest + extraction used by the CLI.

pub mod clustering;
pub mod crosscountry;
pub mod error;
pub mod geoparse;
pub mod ingest;
pub mod interactions;
pub mod pipeline;
pub mod registry;
pub mod regression;
pub mod urls;

pub use error::{Error, Result};
