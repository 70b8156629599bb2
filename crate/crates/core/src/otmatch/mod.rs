//! Coarse-to-fine pseudo-pair construction: image-level fused
//! Gromov-Wasserstein matching, top-k retrieval, patch-level Sinkhorn
//! refinement and weighted target sampling.

mod descriptor;
mod fgw;
mod graph;
mod matrix;
mod sinkhorn;

pub use descriptor::{color_gram, composite_descriptor, DescriptorSpec};
pub use fgw::{
    build_costs, build_costs_from_vectors, fgw_match, fused_objective, pairwise_sq_distances,
    squared_distance, structure_cost, CostMatrices, FgwResult, DEFAULT_ALPHA, DEFAULT_OUTER_ITERS,
};
pub use graph::{
    build_pair_graph, top_k_images, Candidate, PairEntry, PairGraph, PairGraphConfig, PatchIndex,
    DEFAULT_CANDIDATES, DEFAULT_TOP_IMAGES,
};
pub use matrix::Mat;
pub use sinkhorn::{marginal_violation, sinkhorn, uniform, SinkhornConfig, TransportPlan};
