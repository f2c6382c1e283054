//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::DataMatrix;
use crate::diagnostics::{self, DiagnoseConfig};
use crate::dict::{self, BuildConfig, Dictionary};
use crate::error::{Error, Result};
use crate::lasso::{self, LassoProblem, Loss, SolverConfig};
use crate::net::{self, ReluNetwork};
use crate::polish::{self, PolishConfig, Refit};
use crate::svg;
use crate::trainer::{self, Optimizer, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NONCONVERGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "wedgenet", version, about = "Convex wedge-product training and polishing of ReLU networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    /// One-dimensional ramps (d = 1).
    #[value(name = "1d")]
    OneD,
    /// ℓ1 bias-free features over augmented rows.
    L1Nobias,
    /// ℓ2 distance to spans of d-1 rows.
    L2Nobias,
    /// ℓ2 distance to affine hulls of d rows.
    L2Bias,
    /// Planar ℓ1 features with biases.
    #[value(name = "2d-l1-bias")]
    TwoDL1Bias,
    /// Planar ℓ2 features with biases.
    #[value(name = "2d-l2-bias")]
    TwoDL2Bias,
    /// Three-layer ℓ1 dictionary, bias-free first layer.
    #[value(name = "3layer-l1-nobias")]
    ThreeLayerNobias,
    /// Three-layer ℓ1 dictionary with biases.
    #[value(name = "3layer-l1-bias")]
    ThreeLayerBias,
    /// Vector output, one group per feature.
    Vector,
}

impl VariantArg {
    fn norm(self) -> Option<u8> {
        match self {
            VariantArg::L2Nobias | VariantArg::L2Bias | VariantArg::TwoDL2Bias => Some(2),
            VariantArg::Vector => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Squared,
    Logistic,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Squared => Loss::SquaredError,
            LossArg::Logistic => Loss::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Gd,
    Adam,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dictionary, solve the convex program and reconstruct the network.
    TrainConvex(TrainConvexArgs),
    /// Polish a trained network against its training data.
    Polish(PolishArgs),
    /// Chamber-diameter and dispersion diagnostics of a data set.
    Diagnose(DiagnoseArgs),
    /// Train the non-convex reference network.
    Baseline(BaselineArgs),
    /// Loss and accuracy of a network on a data set.
    Eval(EvalArgs),
}

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainConvexArgs {
    /// CSV with a header row; the last --label-cols columns are labels.
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub lambda: f64,
    /// Regularization norm; must match the variant (vector output accepts 1 or 2).
    #[arg(long)]
    pub p: Option<u8>,
    #[arg(long, value_enum, default_value = "squared")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1)]
    pub label_cols: usize,
    #[arg(long)]
    pub penalty_scale: Option<f64>,
    #[arg(long, default_value_t = dict::DEFAULT_MAX_FEATURES)]
    pub max_features: usize,
    #[arg(long, default_value_t = 200_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the dictionary in the binary column format.
    #[arg(long)]
    pub save_dictionary: bool,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct PolishArgs {
    pub data: PathBuf,
    /// Network JSON to polish.
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub label_cols: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub p: u8,
    /// Polish weights only, leaving biases out of the closed form.
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_enum, default_value = "squared")]
    pub refit: LossArg,
    #[arg(long)]
    pub refit_reg: Option<f64>,
    /// Comma-separated hidden layer indices (default: all hidden layers).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct DiagnoseArgs {
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub label_cols: usize,
    #[arg(long, default_value_t = 10_000)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the per-anchor (local) diameter.
    #[arg(long)]
    pub no_local: bool,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct BaselineArgs {
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub label_cols: usize,
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub p: u8,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.5)]
    pub init_scale: f64,
    #[arg(long, value_enum, default_value = "squared")]
    pub loss: LossArg,
    /// Train the three-layer branch network instead.
    #[arg(long)]
    pub three_layer: bool,
    /// Drop the first-layer biases.
    #[arg(long)]
    pub no_hidden_bias: bool,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct EvalArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub label_cols: usize,
    #[arg(long, value_enum, default_value = "squared")]
    pub loss: LossArg,
    /// Also report the weight-decay objective at this λ.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    timings_ms: Vec<(String, f64)>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Run {
    command: &'static str,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl Run {
    fn new(command: &'static str, config: &impl Serialize, seed: Option<u64>, inputs: Vec<PathBuf>) -> Self {
        let cfg = serde_json::to_vec(config).unwrap_or_default();
        Self {
            command,
            config_hash: hex::encode(Sha256::digest(&cfg)),
            seed,
            inputs,
            outputs: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        self.timings.push((name.to_string(), self.clock.elapsed().as_secs_f64() * 1e3));
        self.clock = Instant::now();
    }

    fn write_json(&mut self, path: PathBuf, value: &serde_json::Value) -> Result<()> {
        let s = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, s + "\n")?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_text(&mut self, path: PathBuf, text: &str) -> Result<()> {
        std::fs::write(&path, text)?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(self, dir: &Path) -> Result<()> {
        let digests = |ps: &[PathBuf]| -> Result<Vec<FileDigest>> {
            ps.iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            timings_ms: self.timings.clone(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }
}

impl std::str::FromStr for VariantArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, false).map_err(|_| Error::Variant(format!("unknown variant '{s}'")))
    }
}

impl VariantArg {
    /// Norm used by the variant, with `p` only consulted for vector output.
    pub fn resolve_p(self, p: Option<u8>) -> Result<u8> {
        match (self.norm(), p) {
            (Some(n), Some(q)) if n != q => Err(Error::Variant(format!("variant {self:?} uses p = {n}, got p = {q}"))),
            (Some(n), _) => Ok(n),
            (None, Some(q)) if q == 1 || q == 2 => Ok(q),
            (None, Some(q)) => Err(Error::InvalidArgument(format!("p must be 1 or 2, got {q}"))),
            (None, None) => Ok(2),
        }
    }
}

/// Builds the dictionary for `variant` and returns it with the data its
/// descriptors index into (augmented for the ℓ1 bias-free families).
pub fn build_for_variant(
    variant: VariantArg,
    p: u8,
    data: &DataMatrix,
    cfg: &BuildConfig,
) -> Result<(Dictionary, DataMatrix)> {
    let dictionary = build_dictionary(variant, p, data, cfg)?;
    Ok((dictionary, dictionary_data(variant, p, data)?))
}

fn build_dictionary(variant: VariantArg, p: u8, data: &DataMatrix, cfg: &BuildConfig) -> Result<Dictionary> {
    match variant {
        VariantArg::OneD => dict::build_1d(data),
        VariantArg::L1Nobias => dict::build_l1_nobias(&data.augment()?, cfg),
        VariantArg::L2Nobias => dict::build_l2(data, false, cfg),
        VariantArg::L2Bias => dict::build_l2(data, true, cfg),
        VariantArg::TwoDL1Bias => dict::build_2d_l1_bias(data, cfg),
        VariantArg::TwoDL2Bias => dict::build_2d_l2_bias(data, cfg),
        VariantArg::ThreeLayerNobias => dict::build_3layer_l1(data, false, cfg),
        VariantArg::ThreeLayerBias => dict::build_3layer_l1(data, true, cfg),
        VariantArg::Vector => dict::build_vector_output(data, p, cfg),
    }
}

/// Data the dictionary's descriptors index into (augmented for ℓ1 bias-free).
fn dictionary_data(variant: VariantArg, p: u8, data: &DataMatrix) -> Result<DataMatrix> {
    match (variant, p) {
        (VariantArg::L1Nobias, _) | (VariantArg::Vector, 1) => data.augment(),
        _ => Ok(data.clone()),
    }
}

fn needs_full_rank(variant: VariantArg) -> bool {
    !matches!(
        variant,
        VariantArg::OneD | VariantArg::TwoDL1Bias | VariantArg::TwoDL2Bias
    )
}

fn train_convex(args: &TrainConvexArgs) -> Result<i32> {
    let p = args.variant.resolve_p(args.p)?;
    std::fs::create_dir_all(&args.out)?;
    let mut run = Run::new("train-convex", args, Some(args.seed), vec![args.data.clone()]);
    let raw = DataMatrix::read_csv(&args.data, args.label_cols)?;

    let (data, lift) = if needs_full_rank(args.variant) && raw.effective_rank() < raw.d() {
        let (red, v, r) = net::rank_reduce(&raw)?;
        log::info!("data has rank {r} < d = {}; solving in the reduced space", raw.d());
        (red, Some(v))
    } else {
        (raw.clone(), None)
    };
    let bcfg = BuildConfig {
        max_features: args.max_features,
        seed: args.seed,
    };
    let (dictionary, gen_data) = build_for_variant(args.variant, p, &data, &bcfg)?;
    run.lap("dictionary");
    if args.save_dictionary {
        let path = args.out.join("dictionary.bin");
        dictionary.save_binary(&path)?;
        run.outputs.push(path);
    }

    let mut problem = LassoProblem::for_dictionary(&dictionary, raw.y(), args.lambda).with_loss(args.loss.into());
    if let Some(s) = args.penalty_scale {
        problem.penalty_scale = s;
    }
    let scfg = SolverConfig {
        max_iter: args.max_iter,
        tol: args.tol,
        seed: args.seed,
        ..SolverConfig::default()
    };
    let (solution, code) = match lasso::solve(&problem, &scfg) {
        Ok(s) => (s, EXIT_OK),
        Err(Error::NonConverged { iterations, best }) => {
            log::warn!("solver stopped after {iterations} iterations without converging");
            (*best, EXIT_NONCONVERGED)
        }
        Err(e) => return Err(e),
    };
    run.lap("solve");

    let mut network = net::reconstruct(&dictionary, &solution, &gen_data)?;
    network = net::balance_scaling(&network).net;
    if let Some(v) = &lift {
        network.lift_input(v)?;
    }
    run.lap("reconstruct");

    let cost = net::nonconvex_cost(&network, &raw, args.lambda, p, args.loss.into())?;
    let mut sol_json = solution.to_json();
    sol_json["lambda"] = args.lambda.into();
    sol_json["penalty_scale"] = problem.penalty_scale.into();
    sol_json["features"] = serde_json::to_value(
        solution
            .support
            .iter()
            .map(|&j| &dictionary.features[j])
            .collect::<Vec<_>>(),
    )?;
    sol_json["network_objective"] = serde_json::to_value(cost)?;
    run.write_json(args.out.join("network.json"), &network.to_json())?;
    run.write_json(args.out.join("solution.json"), &sol_json)?;
    if raw.d() == 2 {
        run.write_text(
            args.out.join("breaklines.svg"),
            &svg::breaklines(&network, &raw.samples(), raw.y()),
        )?;
    }
    run.lap("write");
    run.finish(&args.out)?;
    Ok(code)
}

fn polish_cmd(args: &PolishArgs) -> Result<i32> {
    std::fs::create_dir_all(&args.out)?;
    let mut run = Run::new("polish", args, None, vec![args.data.clone(), args.network.clone()]);
    let data = DataMatrix::read_csv(&args.data, args.label_cols)?;
    let network = ReluNetwork::load(&args.network).map_err(|e| match e {
        Error::Json(j) => Error::InvalidArgument(format!("network file: {j}")),
        other => other,
    })?;
    let cfg = PolishConfig {
        include_bias: !args.no_bias,
        rank_override: args.rank,
        refit: match args.refit {
            LossArg::Squared => Refit::LeastSquaresRidge,
            LossArg::Logistic => Refit::LogisticRidge,
        },
        refit_reg: args.refit_reg,
        layers_to_polish: args.layers.clone(),
        lambda: args.lambda,
        p: args.p,
    };
    let (polished, report) = polish::polish_network(&network, &data, &cfg)?;
    for n in &report.neurons {
        if let Some(why) = &n.skipped {
            log::warn!("layer {} neuron {} left unchanged: {why}", n.layer, n.neuron);
        }
    }
    run.lap("polish");
    run.write_json(args.out.join("polished.json"), &polished.to_json())?;
    run.write_json(args.out.join("polish_report.json"), &serde_json::to_value(&report)?)?;
    run.finish(&args.out)?;
    Ok(EXIT_OK)
}

fn diagnose_cmd(args: &DiagnoseArgs) -> Result<i32> {
    std::fs::create_dir_all(&args.out)?;
    let mut run = Run::new("diagnose", args, Some(args.seed), vec![args.data.clone()]);
    let data = DataMatrix::read_csv(&args.data, args.label_cols)?;
    let report = diagnostics::diagnose(
        &data.samples(),
        &DiagnoseConfig {
            probes: args.probes,
            seed: args.seed,
            local: !args.no_local,
        },
    )?;
    run.lap("diagnose");
    let value = serde_json::to_value(&report)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    run.write_json(args.out.join("diagnostics.json"), &value)?;
    run.finish(&args.out)?;
    Ok(EXIT_OK)
}

fn baseline_cmd(args: &BaselineArgs) -> Result<i32> {
    std::fs::create_dir_all(&args.out)?;
    let mut run = Run::new("baseline", args, Some(args.seed), vec![args.data.clone()]);
    let data = DataMatrix::read_csv(&args.data, args.label_cols)?;
    let cfg = TrainConfig {
        m: args.m,
        lambda: args.lambda,
        p: args.p,
        steps: args.steps,
        lr: args.lr,
        restarts: args.restarts,
        seed: args.seed,
        optimizer: match args.optimizer {
            OptimizerArg::Gd => Optimizer::GD,
            OptimizerArg::Adam => Optimizer::AdaptiveMoments,
        },
        init_scale: args.init_scale,
        loss: args.loss.into(),
        hidden_bias: !args.no_hidden_bias,
        output_bias: true,
        decay: true,
    };
    let result = if args.three_layer {
        trainer::train_three_layer(&data, &cfg)?
    } else {
        trainer::train_two_layer(&data, &cfg)?
    };
    run.lap("train");
    run.write_json(args.out.join("baseline_network.json"), &result.net.to_json())?;
    run.write_json(
        args.out.join("baseline.json"),
        &serde_json::json!({
            "best_objective": result.best_objective,
            "restart_objectives": result.restart_objectives,
        }),
    )?;
    run.finish(&args.out)?;
    Ok(EXIT_OK)
}

fn eval_cmd(args: &EvalArgs) -> Result<i32> {
    let data = DataMatrix::read_csv(&args.data, args.label_cols)?;
    let network = ReluNetwork::load(&args.network)?;
    let f = net::forward(&network, &data.samples())?;
    let y = data.y();
    if f.ncols() != y.ncols() {
        return Err(Error::dim("network outputs differ from label columns"));
    }
    let loss: Loss = args.loss.into();
    let cost = net::nonconvex_cost(&network, &data, args.lambda.unwrap_or(0.0), network.p, loss)?;
    let n = f.nrows();
    let correct = (0..n)
        .filter(|&i| {
            if f.ncols() == 1 {
                (f[(i, 0)] >= 0.0) == (y[(i, 0)] >= 0.0)
            } else {
                f.row(i).transpose().argmax().0 == y.row(i).transpose().argmax().0
            }
        })
        .count();
    let mut out = serde_json::json!({
        "loss": cost.loss_term,
        "accuracy": correct as f64 / n as f64,
        "n": n,
    });
    if args.lambda.is_some() {
        out["objective"] = serde_json::to_value(cost)?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(EXIT_OK)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConverged { .. } => EXIT_NONCONVERGED,
        Error::InvalidArgument(_) | Error::Variant(_) | Error::State(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("WEDGENET_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::TrainConvex(a) => train_convex(a),
        Command::Polish(a) => polish_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_variant_is_usage_error() {
        assert_eq!(run(["wedgenet", "train-convex", "--variant", "nope", "--lambda", "1", "x.csv"]), EXIT_USAGE);
    }

    #[test]
    fn missing_file_is_data_error() {
        assert_eq!(
            run(["wedgenet", "diagnose", "/nonexistent/data.csv", "--out", "/tmp"]),
            EXIT_DATA
        );
    }

    #[test]
    fn mismatched_norm_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        std::fs::write(&csv, "x1,x2,y\n1,0,1\n0,1,-1\n1,1,1\n").unwrap();
        let code = run([
            "wedgenet".as_ref(),
            "train-convex".as_ref(),
            "--variant".as_ref(),
            "l2-bias".as_ref(),
            "--p".as_ref(),
            "1".as_ref(),
            "--lambda".as_ref(),
            "0.1".as_ref(),
            csv.as_os_str(),
            "--out".as_ref(),
            dir.path().as_os_str(),
        ] as [&std::ffi::OsStr; 11]);
        assert_eq!(code, EXIT_USAGE);
    }
}
