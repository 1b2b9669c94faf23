//! Evaluation suite: feature extraction, label propagation, long-horizon
//! stability, visualizations, the moving-noise-square experiment, and the
//! recurrent-vs-attention cost benchmark.

pub mod bench;
pub mod features;
pub mod flops;
pub mod noise_square;
pub mod propagate;
pub mod viz;

pub use bench::{cost_benchmark, BenchRow};
pub use features::{extract_features, AggregatorKind, FeatureVolume};
pub use flops::CostModel;
pub use noise_square::{noise_square_experiment, NoiseSquareReport};
pub use propagate::{propagate_labels, PropagationConfig};
pub use viz::{kmeans_maps, pca3_maps, stability_curve};
