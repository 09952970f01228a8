//! Real-time flight analytics on a single node.
//!
//! Positions come from a deterministic simulator or the flight API
//! ([`simsource`]), travel through an embedded partitioned commit log
//! ([`eventlog`]), are processed in micro-batches with event-time tumbling
//! windows ([`stream`]), land in a keyword/numeric/geo search index
//! ([`index`]) and are served over HTTP ([`api`]). [`histbatch`] computes
//! delay statistics over BTS on-time CSV files.

pub mod api;
pub mod geo;
pub mod geohash;
pub mod histbatch;
pub mod index;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod eventlog;
pub mod metrics;
pub mod simsource;
pub mod stream;
