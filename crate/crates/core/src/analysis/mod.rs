//! Measurements on pairs and triples of models: loss barriers, their Taylor
//! prediction, singular-vector alignment, input alignment, the output
//! difference bound and loss landscapes.

mod barrier;
mod landscape;
mod spectral;
mod taylor;
mod three_model;

pub use barrier::{barrier, interpolate, lambda_grid, BarrierReport, DEFAULT_GRID};
pub use landscape::{landscape, LandscapeGrid, MARGIN};
pub use spectral::{
    alignment_objective, compute_r, compute_r_many, input_alignment, large_singular_ratio, layer_svds, output_diff_bound, spectrum,
    AlignmentReport, OutputDiffReport,
};
pub use taylor::{taylor_barrier, TaylorEstimate};
pub use three_model::{three_model_experiment, PairAlignment, ThreeModelOptions, ThreeModelReport};
