//! Long-horizon forecasting of station entries per quarter hour from
//! calendar and planned-event features.
//!
//! The crate covers the whole pipeline: CSV ingestion ([`ingest`]), feature
//! encoding ([`features`]), the model suite ([`models`]), grid search
//! ([`tuning`]), metrics and trend correction ([`evaluate`]), tree feature
//! importance ([`importance`]) and a synthetic data generator ([`synthgen`]).

pub mod evaluate;
pub mod features;
pub mod importance;
pub mod ingest;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod synthgen;
pub mod tuning;
