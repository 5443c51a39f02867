//! Similarity of activation paths between natural and visualization inputs,
//! silent-unit counts, and how straight visualization trajectories are.

mod census;
mod linearity;
mod similarity;
mod stats;

pub use census::{relu_maxima, silent_census, LayerCensus, SilentCensus};
pub use linearity::{
    agpa, aldp, angle_between, correlate_with_scores, read_scores, segment_distance, AgpaReport, AldpReport,
    Correlation, LinearityReport, UnitLinearity,
};
pub use similarity::{
    correctly_classified, layerwise_similarity, moving_std, normalize_curve, similarity_report, smooth_curve,
    write_similarity_csv, LayerSimilarity, Metric, PairOptions, SimilarityReport, GAP_THRESHOLD,
};
pub use stats::{cosine, pearson, ranks, spearman, spearman_with_p, t_test_p};

use thiserror::Error;

use crate::netgraph::NetError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("{0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
