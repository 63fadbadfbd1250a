//! One function per subcommand. Each reads its inputs, writes JSON and CSV
//! artifacts into the output directory and returns nothing else.

use std::path::{Path, PathBuf};

use permalign::analysis::{
    alignment_objective, barrier, compute_r_many, input_alignment, interpolate, landscape, large_singular_ratio,
    spectrum, taylor_barrier, three_model_experiment, BarrierReport, ThreeModelOptions,
};
use permalign::conv::{
    build_conv_matrix, conv_alignment_objective, conv_singular_values, dense_singular_values, kernel_permute,
    load_kernel, save_kernel, ConvKernel,
};
use permalign::matching::{self, MatchReport};
use permalign::nn::{loss_and_accuracy, EvalSet, ModelParams};
use permalign::permutation::Permutation;
use serde::Serialize;

use crate::artifacts::OutputDir;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::{eval_set, load_dataset, load_model, search_set, train_cached};

fn read_perm(out: &mut OutputDir, path: &Path) -> Result<Permutation, CliError> {
    out.input(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Permutation::from_json(&text)?)
}

fn read_model(out: &mut OutputDir, path: &Path) -> Result<ModelParams, CliError> {
    let m = load_model(path)?;
    out.input(path)?;
    Ok(m)
}

/// `a` and `b`, with `b` moved by the permutation file when one is given.
fn read_pair(out: &mut OutputDir, a: &Path, b: &Path, perm: Option<&Path>) -> Result<(ModelParams, ModelParams), CliError> {
    let ma = read_model(out, a)?;
    let mut mb = read_model(out, b)?;
    if let Some(p) = perm {
        mb = read_perm(out, p)?.apply(&mb)?;
    }
    Ok((ma, mb))
}

fn eval_only(cfg: &ExperimentConfig) -> Result<EvalSet, CliError> {
    let ds = load_dataset(cfg)?;
    eval_set(cfg, &ds)
}

fn barrier_csv(out: &mut OutputDir, name: &str, r: &BarrierReport) -> Result<(), CliError> {
    out.text(name, &r.to_csv())
}

#[derive(Serialize)]
struct TrainRecord {
    seed: u64,
    checkpoint: String,
    epoch_losses: Vec<f64>,
    train_loss: f64,
    train_accuracy: f64,
    eval_split: String,
    eval_loss: f64,
    eval_accuracy: f64,
}

pub fn train(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let eval = eval_set(cfg, &ds)?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let name = format!("seed-{seed}/model.nnpk");
        let path = out.register(&name)?;
        let (model, notes) = train_cached(&cfg.train, &cfg.dataset, &ds.train, seed, &path)?;
        let (train_loss, train_accuracy) = loss_and_accuracy(&model, &ds.train)?;
        let (eval_loss, eval_accuracy) = loss_and_accuracy(&model, &eval)?;
        records.push(TrainRecord {
            seed,
            checkpoint: name,
            epoch_losses: notes.epoch_losses,
            train_loss,
            train_accuracy,
            eval_split: cfg.analysis.eval_split.clone(),
            eval_loss,
            eval_accuracy,
        });
    }
    out.json("train.json", &records)?;
    out.csv(
        "train.csv",
        "seed,train_loss,train_accuracy,eval_loss,eval_accuracy",
        records
            .iter()
            .map(|r| format!("{},{},{},{},{}", r.seed, r.train_loss, r.train_accuracy, r.eval_loss, r.eval_accuracy)),
    )?;
    out.csv(
        "epochs.csv",
        "seed,epoch,mean_loss",
        records
            .iter()
            .flat_map(|r| r.epoch_losses.iter().enumerate().map(move |(e, l)| format!("{},{},{l}", r.seed, e + 1))),
    )
}

fn write_match(out: &mut OutputDir, prefix: &str, report: &MatchReport, b: &ModelParams) -> Result<(), CliError> {
    out.json(&format!("{prefix}match.json"), report)?;
    out.text(&format!("{prefix}permutation.json"), &report.pi.to_json())?;
    out.model(&format!("{prefix}aligned.nnpk"), &report.pi.apply(b)?, None, "")?;
    out.csv(
        &format!("{prefix}objective.csv"),
        "iteration,objective",
        report.objective_trace.iter().enumerate().map(|(i, v)| format!("{},{v}", i + 1)),
    )
}

pub fn match_models(cfg: &ExperimentConfig, out: &mut OutputDir, a: &Path, b: &Path) -> Result<(), CliError> {
    let (ma, mb) = read_pair(out, a, b, None)?;
    let search = if cfg.matching.method.needs_data() {
        let ds = load_dataset(cfg)?;
        Some(search_set(cfg, &ds))
    } else {
        None
    };
    let report = matching::run(&ma, &mb, search.as_ref(), &cfg.matching)?;
    write_match(out, "", &report, &mb)
}

#[derive(Serialize)]
struct MergeReport {
    lambda: f64,
    split: String,
    loss: f64,
    accuracy: f64,
    loss_a: f64,
    accuracy_a: f64,
    loss_b: f64,
    accuracy_b: f64,
    /// Loss above the straight line between the endpoint losses.
    gap: f64,
}

pub fn merge(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    a: &Path,
    b: &Path,
    perm: Option<&Path>,
    lambda: f64,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CliError::ConfigInvalid(format!("--lambda must lie in [0, 1], got {lambda}")));
    }
    let (ma, mb) = read_pair(out, a, b, perm)?;
    let merged = interpolate(&ma, &mb, lambda)?;
    let eval = eval_only(cfg)?;
    let (loss, accuracy) = loss_and_accuracy(&merged, &eval)?;
    let (loss_a, accuracy_a) = loss_and_accuracy(&ma, &eval)?;
    let (loss_b, accuracy_b) = loss_and_accuracy(&mb, &eval)?;
    out.model("merged.nnpk", &merged, None, "")?;
    out.json(
        "merge.json",
        &MergeReport {
            lambda,
            split: cfg.analysis.eval_split.clone(),
            loss,
            accuracy,
            loss_a,
            accuracy_a,
            loss_b,
            accuracy_b,
            gap: loss - (lambda * loss_a + (1.0 - lambda) * loss_b),
        },
    )
}

pub fn barrier_cmd(cfg: &ExperimentConfig, out: &mut OutputDir, a: &Path, b: &Path, perm: Option<&Path>) -> Result<(), CliError> {
    let (ma, mb) = read_pair(out, a, b, perm)?;
    let eval = eval_only(cfg)?;
    let r = barrier(&ma, &mb, &eval, cfg.analysis.lambda_grid)?.with_split(&cfg.analysis.eval_split);
    out.json("barrier.json", &r)?;
    barrier_csv(out, "barrier.csv", &r)
}

#[derive(Serialize)]
struct TaylorReport<'a> {
    taylor: &'a permalign::analysis::TaylorEstimate,
    true_barrier: f64,
    true_barrier_at_half: f64,
    split: &'a str,
    /// The estimate at λ = 1/2 is above the measured value there.
    estimate_exceeds_true_at_half: bool,
}

pub fn taylor(cfg: &ExperimentConfig, out: &mut OutputDir, a: &Path, b: &Path, perm: Option<&Path>) -> Result<(), CliError> {
    let (ma, mb) = read_pair(out, a, b, perm)?;
    let eval = eval_only(cfg)?;
    let grid = cfg.analysis.lambda_grid;
    let est = taylor_barrier(&ma, &mb, &eval, grid)?;
    let bar = barrier(&ma, &mb, &eval, grid)?;
    out.json(
        "taylor.json",
        &TaylorReport {
            taylor: &est,
            true_barrier: bar.barrier,
            true_barrier_at_half: bar.barrier_at_half,
            split: &cfg.analysis.eval_split,
            estimate_exceeds_true_at_half: est.estimate_at_half > bar.barrier_at_half,
        },
    )?;
    let (l_b, l_a) = (bar.losses[0], bar.losses[bar.losses.len() - 1]);
    out.csv(
        "taylor.csv",
        "lambda,first_order,second_order,estimate,true_gap",
        est.lambdas.iter().zip(&est.per_lambda_terms).zip(&bar.losses).map(|((l, (g, h)), loss)| {
            let gap = loss - (l * l_a + (1.0 - l) * l_b);
            format!("{l},{g},{h},{},{gap}", g + h)
        }),
    )
}

#[derive(Serialize)]
struct RReport {
    reports: Vec<permalign::analysis::AlignmentReport>,
    alignment_objective: f64,
    squared_distance: f64,
}

pub fn r_metric(cfg: &ExperimentConfig, out: &mut OutputDir, a: &Path, b: &Path, perm: Option<&Path>) -> Result<(), CliError> {
    let (ma, mb) = read_pair(out, a, b, perm)?;
    let id = Permutation::identity_for(&ma);
    let reports = compute_r_many(&ma, &mb, &id, &cfg.analysis.gammas)?;
    let objective = alignment_objective(&ma, &mb, &id)?;
    let dw = ma.sub(&mb);
    out.csv(
        "r_metric.csv",
        "gamma,r_value,denominator",
        reports.iter().map(|r| format!("{},{},{}", r.gamma, r.r_value, r.denominator)),
    )?;
    out.json(
        "r_metric.json",
        &RReport {
            reports,
            alignment_objective: objective,
            squared_distance: dw.weight_norm_sq(),
        },
    )
}

#[derive(Serialize)]
struct SpectrumReport {
    layers: Vec<Vec<f64>>,
    gamma: f64,
    large_singular_ratio: f64,
}

pub fn spectrum_cmd(cfg: &ExperimentConfig, out: &mut OutputDir, model: &Path) -> Result<(), CliError> {
    let m = read_model(out, model)?;
    let gamma = cfg.analysis.large_singular_gamma;
    let layers = spectrum(&m)?;
    out.csv(
        "spectrum.csv",
        "layer,index,singular_value,relative",
        layers.iter().enumerate().flat_map(|(l, s)| {
            let top = s.first().copied().unwrap_or(0.0);
            s.iter().enumerate().map(move |(i, v)| {
                let rel = if top > 0.0 { v / top } else { 0.0 };
                format!("{},{},{v},{rel}", l + 1, i + 1)
            })
        }),
    )?;
    out.json(
        "spectrum.json",
        &SpectrumReport {
            large_singular_ratio: large_singular_ratio(&m, gamma)?,
            layers,
            gamma,
        },
    )
}

#[derive(Serialize)]
struct InputAlignLayer {
    singular_values: Vec<f64>,
    mean_sq_projection: Vec<f64>,
}

pub fn input_align(cfg: &ExperimentConfig, out: &mut OutputDir, model: &Path) -> Result<(), CliError> {
    let m = read_model(out, model)?;
    let eval = eval_only(cfg)?;
    let proj = input_alignment(&m, &eval)?;
    let layers: Vec<InputAlignLayer> = spectrum(&m)?
        .into_iter()
        .zip(proj)
        .map(|(s, p)| InputAlignLayer {
            singular_values: s,
            mean_sq_projection: p,
        })
        .collect();
    out.csv(
        "input_align.csv",
        "layer,index,singular_value,mean_sq_projection",
        layers.iter().enumerate().flat_map(|(l, x)| {
            x.singular_values
                .iter()
                .zip(&x.mean_sq_projection)
                .enumerate()
                .map(move |(i, (s, p))| format!("{},{},{s},{p}", l + 1, i + 1))
        }),
    )?;
    out.json("input_align.json", &layers)
}

pub fn landscape_cmd(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    models: [&Path; 3],
    resolution: Option<usize>,
) -> Result<(), CliError> {
    let a = read_model(out, models[0])?;
    let b = read_model(out, models[1])?;
    let c = read_model(out, models[2])?;
    let eval = eval_only(cfg)?;
    let g = landscape(&a, &b, &c, &eval, resolution.unwrap_or(cfg.analysis.landscape_resolution))?;
    out.text("landscape.json", &(g.to_json() + "\n"))?;
    out.text("landscape.csv", &g.to_csv())
}

/// The three models to compare: read from disk, or trained from the first
/// three seeds.
fn three_models(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    given: Option<[&Path; 3]>,
    train: &EvalSet,
) -> Result<Vec<ModelParams>, CliError> {
    match given {
        Some(paths) => paths.iter().map(|p| read_model(out, p)).collect(),
        None => {
            if cfg.seeds.len() < 3 {
                return Err(CliError::ConfigInvalid(format!(
                    "three-model needs three seeds or --a/--b/--c, got {} seeds",
                    cfg.seeds.len()
                )));
            }
            cfg.seeds[..3]
                .iter()
                .map(|&s| {
                    let path = out.register(&format!("seed-{s}/model.nnpk"))?;
                    Ok(train_cached(&cfg.train, &cfg.dataset, train, s, &path)?.0)
                })
                .collect()
        }
    }
}

pub fn three_model(cfg: &ExperimentConfig, out: &mut OutputDir, given: Option<[&Path; 3]>) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let eval = eval_set(cfg, &ds)?;
    let search = search_set(cfg, &ds);
    let m = three_models(cfg, out, given, &ds.train)?;
    let opts = ThreeModelOptions {
        grid_size: cfg.analysis.lambda_grid,
        resolution: cfg.analysis.landscape_resolution,
        gammas: cfg.analysis.gammas.clone(),
    };
    let r = three_model_experiment(&m[0], &m[1], &m[2], &cfg.matching, &search, &eval, &opts)?;
    write_match(out, "b_", &r.match_b, &m[1])?;
    write_match(out, "c_", &r.match_c, &m[2])?;
    let rows = [
        ("a,pi_b(b)", &r.barrier_ab),
        ("a,pi_c(c)", &r.barrier_ac),
        ("pi_b(b),pi_c(c)", &r.barrier_bc),
        ("b,c", &r.barrier_bc_unmatched),
    ];
    out.csv(
        "three_model.csv",
        "pair,barrier,barrier_at_half,loss_at_half,accuracy_at_half",
        rows.iter().map(|(p, b)| {
            let acc = b.accuracy_at_half.map(|a| a.to_string()).unwrap_or_default();
            format!("\"{p}\",{},{},{},{acc}", b.barrier, b.barrier_at_half, b.loss_at_half)
        }),
    )?;
    if let Some(g) = &r.landscape {
        out.text("landscape.csv", &g.to_csv())?;
    }
    out.text("three_model.json", &(r.to_json() + "\n"))
}

#[derive(Serialize)]
struct ConvPair {
    objective_identity: f64,
    /// `n²‖K_a − K_b‖²`, the squared distance of the dense matrices.
    dense_distance_sq: f64,
    /// `‖M_a‖² + ‖M_b‖² − 2·objective`, equal to the line above.
    via_objective: f64,
    /// Channel permutations maximizing the objective, searched exhaustively
    /// when there are at most four channels.
    best: Option<ConvBest>,
}

#[derive(Serialize)]
struct ConvBest {
    p_out: Vec<usize>,
    p_in: Vec<usize>,
    objective: f64,
    distance_sq: f64,
}

#[derive(Serialize)]
struct ConvReport {
    n: usize,
    m: usize,
    kernel_norm: f64,
    singular_values: Vec<f64>,
    /// Largest difference to the dense SVD when the matrix is small enough.
    dense_max_abs_diff: Option<f64>,
    pair: ConvPair,
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

fn kernel_or_random(out: &mut OutputDir, given: Option<&Path>, cfg: &ExperimentConfig, seed: u64, name: &str) -> Result<ConvKernel, CliError> {
    match given {
        Some(p) => {
            let k = load_kernel(p)?;
            out.input(p)?;
            Ok(k)
        }
        None => {
            let c = &cfg.conv;
            let small = ConvKernel::random(c.kernel_size, c.m, seed);
            let k = ConvKernel::padded(small.tensor(), c.n)?;
            let path = out.register(name)?;
            save_kernel(&k, &path)?;
            Ok(k)
        }
    }
}

pub fn conv_analyze(cfg: &ExperimentConfig, out: &mut OutputDir, ka: Option<&Path>, kb: Option<&Path>) -> Result<(), CliError> {
    let a = kernel_or_random(out, ka, cfg, cfg.conv.seed, "kernel_a.cnvk")?;
    let b = kernel_or_random(out, kb, cfg, cfg.conv.seed + 1, "kernel_b.cnvk")?;
    if a.tensor().dim() != b.tensor().dim() {
        return Err(CliError::Core(permalign::Error::Dimension(format!(
            "kernels {:?} vs {:?}",
            a.tensor().dim(),
            b.tensor().dim()
        ))));
    }
    let (n, m) = (a.n(), a.m());
    let sv = conv_singular_values(&a)?;
    let dense_max_abs_diff = if m * n * n <= cfg.conv.dense_check_limit {
        let d = dense_singular_values(&a)?;
        Some(sv.iter().zip(&d).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    let sq = |k: &ConvKernel| -> Result<f64, CliError> {
        Ok(conv_singular_values(k)?.iter().map(|s| s * s).sum::<f64>())
    };
    let (na, nb) = (sq(&a)?, sq(&b)?);
    let id: Vec<usize> = (0..m).collect();
    let objective_identity = conv_alignment_objective(&a, &b, &id, &id)?;
    let best = if m <= 4 {
        let mut best: Option<ConvBest> = None;
        for po in permutations(m) {
            for pi in permutations(m) {
                let v = conv_alignment_objective(&a, &b, &po, &pi)?;
                if best.as_ref().is_none_or(|x| v > x.objective) {
                    let moved = kernel_permute(&b, &po, &pi)?;
                    let d = (n * n) as f64 * a.sub(&moved)?.norm().powi(2);
                    best = Some(ConvBest {
                        p_out: po.clone(),
                        p_in: pi,
                        objective: v,
                        distance_sq: d,
                    });
                }
            }
        }
        best
    } else {
        None
    };
    // the dense matrix is only needed to confirm its block structure
    if m * n * n <= cfg.conv.dense_check_limit && !build_conv_matrix(&a)?.is_doubly_circulant() {
        return Err(CliError::Core(permalign::Error::InvalidArgument("conv matrix lost its circulant structure".into())));
    }
    out.csv(
        "conv.csv",
        "index,singular_value",
        sv.iter().enumerate().map(|(i, s)| format!("{},{s}", i + 1)),
    )?;
    out.json(
        "conv.json",
        &ConvReport {
            n,
            m,
            kernel_norm: a.norm(),
            singular_values: sv,
            dense_max_abs_diff,
            pair: ConvPair {
                objective_identity,
                dense_distance_sq: (n * n) as f64 * a.sub(&b)?.norm().powi(2),
                via_objective: na + nb - 2.0 * objective_identity,
                best,
            },
        },
    )
}

#[derive(Serialize)]
struct SweepRow {
    width: usize,
    weight_decay: f64,
    learning_rate: f64,
    seed_a: u64,
    seed_b: u64,
    eval_loss_a: f64,
    eval_loss_b: f64,
    merged_loss: f64,
    merged_accuracy: f64,
    barrier: f64,
    barrier_at_half: f64,
    reduction_rate: f64,
    large_singular_ratio_a: f64,
    large_singular_ratio_b: f64,
}

pub fn sweep(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    if cfg.seeds.len() < 2 {
        return Err(CliError::ConfigInvalid("sweep pairs consecutive seeds and needs at least two".into()));
    }
    let ds = load_dataset(cfg)?;
    let eval = eval_set(cfg, &ds)?;
    let search = cfg.matching.method.needs_data().then(|| search_set(cfg, &ds));
    let gamma = cfg.analysis.large_singular_gamma;
    let mut rows = Vec::new();
    for &width in &cfg.sweep.widths {
        for &weight_decay in &cfg.sweep.weight_decays {
            for &learning_rate in &cfg.sweep.learning_rates {
                let mut tc = cfg.train.clone();
                tc.hidden = vec![width; tc.hidden.len().max(1)];
                tc.weight_decay = weight_decay;
                tc.learning_rate = learning_rate;
                tc.validate().map_err(|e| CliError::ConfigInvalid(format!("sweep: {e}")))?;
                let cell = format!("w{width}-wd{weight_decay}-lr{learning_rate}");
                for pair in cfg.seeds.chunks_exact(2) {
                    let mut models = Vec::new();
                    for &s in pair {
                        let path: PathBuf = out.register(&format!("{cell}/seed-{s}/model.nnpk"))?;
                        models.push(train_cached(&tc, &cfg.dataset, &ds.train, s, &path)?.0);
                    }
                    let report = matching::run(&models[0], &models[1], search.as_ref(), &cfg.matching)?;
                    let aligned = report.pi.apply(&models[1])?;
                    let bar = barrier(&models[0], &aligned, &eval, cfg.analysis.lambda_grid)?;
                    let merged = interpolate(&models[0], &aligned, 0.5)?;
                    let (merged_loss, merged_accuracy) = loss_and_accuracy(&merged, &eval)?;
                    rows.push(SweepRow {
                        width,
                        weight_decay,
                        learning_rate,
                        seed_a: pair[0],
                        seed_b: pair[1],
                        eval_loss_a: bar.losses[bar.losses.len() - 1],
                        eval_loss_b: bar.losses[0],
                        merged_loss,
                        merged_accuracy,
                        barrier: bar.barrier,
                        barrier_at_half: bar.barrier_at_half,
                        reduction_rate: report.reduction_rate,
                        large_singular_ratio_a: large_singular_ratio(&models[0], gamma)?,
                        large_singular_ratio_b: large_singular_ratio(&models[1], gamma)?,
                    });
                }
            }
        }
    }
    out.csv(
        "sweep.csv",
        "width,weight_decay,learning_rate,seed_a,seed_b,eval_loss_a,eval_loss_b,merged_loss,merged_accuracy,barrier,barrier_at_half,reduction_rate,large_singular_ratio_a,large_singular_ratio_b",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.width,
                r.weight_decay,
                r.learning_rate,
                r.seed_a,
                r.seed_b,
                r.eval_loss_a,
                r.eval_loss_b,
                r.merged_loss,
                r.merged_accuracy,
                r.barrier,
                r.barrier_at_half,
                r.reduction_rate,
                r.large_singular_ratio_a,
                r.large_singular_ratio_b
            )
        }),
    )?;
    out.json("sweep.json", &rows)
}
