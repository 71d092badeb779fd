//! Inverting the generator: which seeds produce a given point.
//!
//! Grid-based gravitational maps, gradient-descent seed clouds and their
//! convexity checks, PCA of clouds, trained embedding networks, pushforward
//! densities, and the cross-model uniqueness experiment.

mod density;
mod gravity;
mod inverter;
mod pca;
mod seeds;
mod uniqueness;

pub use density::{pushforward_density, DensityGrid};
pub use gravity::{emb_cloud_from_grid, grav_map, grav_profile_export, grav_weight, Distance, GravMap, GravProfile};
pub use inverter::{train_embed_net, EmbedNet, EmbedTrainConfig};
pub use pca::{pca_cloud, traverse_component, PcaResult};
pub use seeds::{
    convex_combos, embed_gd, embed_gd_from, embed_gd_targets, median, progressive_mean, recon_errors, refine_seed_gd, CloudSource,
    ComboResult, GdConfig, RefineResult, SeedCloud,
};
pub use uniqueness::{compare_nets, paired_outputs, uniqueness_experiment, PairedOutputs, UniquenessArm, UniquenessReport};

/// Squared Euclidean distance.
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
