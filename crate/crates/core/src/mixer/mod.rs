//! Checkpoint-aligned regrouping, density-based reweighting and the budgeted
//! mixture draw.

mod groups;
mod report;
mod sampling;

pub use groups::{
    budget_allocations, influence_density, influence_token_product, percentile_filter, regroup, retained_count,
    sampling_weights, scale_group_scores, scale_influences, subsample_to_budget, weights_from_densities, DataGroup,
    GroupMember, MixtureSpec,
};
pub use report::{
    bucket_stats, bucket_table, overlap_analysis, overlap_table, thousands, thousands_2dp, BucketStats,
    DEFAULT_BUCKET_EDGES,
};
pub use sampling::{sample_mixture, ManifestEntry, MixtureManifest, MIN_DRAW_WEIGHT};
