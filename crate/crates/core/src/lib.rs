//! Quantitative evidence for purpose-compatibility assessments of data
//! repurposing in recommender systems.
//!
//! The modules follow the evidence they produce: [`links`] (how related two
//! genre purposes are), [`probe`] (whether sensitive attributes become more
//! predictable), [`safeguards`] (reidentification risk), [`impact`] (what
//! changes for users when the catalogue grows), [`monitor`] (when to
//! re-assess) and [`registry`] (the persisted assessment records).

pub mod dataset;
pub mod error;
pub mod heatmap;
pub mod impact;
pub mod links;
pub mod monitor;
pub mod probe;
pub mod registry;
pub mod safeguards;
pub mod stats;

pub use dataset::{
    dataset_stats, export_generic, parse_generic, parse_movielens, parse_movielens_with, DatasetParts, Gender,
    GenreSet, Item, RatingRecord, RatingsDataset, StatsSummary, UserProfile,
};
pub use error::{Error, Result};
