use serde::{Deserialize, Serialize};

use super::barrier::{barrier, BarrierReport, DEFAULT_GRID};
use super::landscape::{landscape, LandscapeGrid};
use super::spectral::{compute_r_many, AlignmentReport};
use crate::error::{Error, Result};
use crate::matching::{run, MatchConfig, MatchReport};
use crate::nn::{EvalSet, ModelParams};
use crate::permutation::Permutation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThreeModelOptions {
    pub grid_size: usize,
    /// Landscape resolution per axis; 0 skips the landscape.
    pub resolution: usize,
    pub gammas: Vec<f64>,
}

impl Default for ThreeModelOptions {
    fn default() -> Self {
        ThreeModelOptions {
            grid_size: DEFAULT_GRID,
            resolution: 0,
            gammas: vec![0.0, 0.3],
        }
    }
}

/// `R` values for one model pair, one entry per threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAlignment {
    pub pair: String,
    pub reports: Vec<AlignmentReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreeModelReport {
    pub match_b: MatchReport,
    pub match_c: MatchReport,
    /// `a` against `π_b(b)`.
    pub barrier_ab: BarrierReport,
    /// `a` against `π_c(c)`.
    pub barrier_ac: BarrierReport,
    /// `π_b(b)` against `π_c(c)`: the pair that was never matched directly.
    pub barrier_bc: BarrierReport,
    /// `b` against `c` with no permutation.
    pub barrier_bc_unmatched: BarrierReport,
    pub alignment: Vec<PairAlignment>,
    pub landscape: Option<LandscapeGrid>,
    /// Why the landscape is missing when it was requested.
    pub landscape_skipped: Option<String>,
}

impl ThreeModelReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Aligns `b` and `c` to `a` with the configured method, then measures how
/// well the two aligned models connect to `a` and to each other.
///
/// `search` feeds the data-driven methods; barriers and the landscape use
/// `eval`.
pub fn three_model_experiment(
    a: &ModelParams,
    b: &ModelParams,
    c: &ModelParams,
    cfg: &MatchConfig,
    search: &EvalSet,
    eval: &EvalSet,
    opts: &ThreeModelOptions,
) -> Result<ThreeModelReport> {
    let match_b = run(a, b, Some(search), cfg)?;
    let match_c = run(a, c, Some(search), cfg)?;
    let pb = match_b.pi.apply(b)?;
    let pc = match_c.pi.apply(c)?;
    let split = |r: BarrierReport| r.with_split("eval");
    let barrier_ab = split(barrier(a, &pb, eval, opts.grid_size)?);
    let barrier_ac = split(barrier(a, &pc, eval, opts.grid_size)?);
    let barrier_bc = split(barrier(&pb, &pc, eval, opts.grid_size)?);
    let barrier_bc_unmatched = split(barrier(b, c, eval, opts.grid_size)?);

    let id = Permutation::identity_for(a);
    let alignment = vec![
        PairAlignment {
            pair: "a,pi_b(b)".into(),
            reports: compute_r_many(a, &pb, &id, &opts.gammas)?,
        },
        PairAlignment {
            pair: "a,pi_c(c)".into(),
            reports: compute_r_many(a, &pc, &id, &opts.gammas)?,
        },
        PairAlignment {
            pair: "pi_b(b),pi_c(c)".into(),
            reports: compute_r_many(&pb, &pc, &id, &opts.gammas)?,
        },
        PairAlignment {
            pair: "b,c".into(),
            reports: compute_r_many(b, c, &id, &opts.gammas)?,
        },
    ];

    let (landscape, landscape_skipped) = if opts.resolution == 0 {
        (None, None)
    } else {
        match landscape(a, &pb, &pc, eval, opts.resolution) {
            Ok(g) => (Some(g), None),
            Err(Error::DegeneratePlane(why)) => (None, Some(why)),
            Err(e) => return Err(e),
        }
    };
    Ok(ThreeModelReport {
        match_b,
        match_c,
        barrier_ab,
        barrier_ac,
        barrier_bc,
        barrier_bc_unmatched,
        alignment,
        landscape,
        landscape_skipped,
    })
}
