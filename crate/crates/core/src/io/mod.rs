//! Serialization, configuration, reports and heatmap export.

pub mod config;
pub mod container;
pub mod heatmap;
pub mod report;
pub mod schema;

pub use config::{RawConfig, RunConfig};
pub use container::Container;
pub use heatmap::{export_heatmap, HeatmapMode};
pub use schema::{
    load_dataset, load_posterior, load_relevance_set, load_weights, save_dataset, save_posterior,
    save_relevance_set, save_weights,
};
