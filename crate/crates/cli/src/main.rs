use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bfperc::experiments::{
    crossing_sweep, decay_fit, failure_estimates, logit_curve, pivotal_decay_scan, recursion_report,
    summability_report, threshold_sharpness, EpsRule, ExperimentConfig, RunRecord,
};
use bfperc::influence::{influences, kkl_check, russo_check, GaussianSpec, GraphCrossing};
use bfperc::io::{cached_sqrt_kernel, manifest_path, write_csv, write_field_file, write_json, CSV_SCHEMA_VERSION};
use bfperc::kernels::op_norm_scan;
use bfperc::lattice::{build_region_graph, Region};
use bfperc::percolation::Direction;
use bfperc::sampler::ConvolutionSampler;
use bfperc::sprinkling::{estimate_fold, estimate_sprinkled_gap, FoldMethod, FoldSpec};
use bfperc::{Error, Kernel, Result};

#[derive(Parser)]
#[command(name = "bfperc", version, about = "Excursion-set percolation experiments for planar Gaussian fields")]
struct Cli {
    /// Master seed; every replicate draws from its own stream under it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for cached square-root tables.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Store wall-clock time in run manifests (breaks byte-identical reruns).
    #[arg(long, global = true)]
    record_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the convolution square root for a kernel and mesh.
    KernelSqrt(KernelSqrtArgs),
    /// Draw one field sample on a rectangle and dump it.
    Sample(SampleArgs),
    /// Crossing probabilities over grids of R and p.
    CrossingSweep(SweepArgs),
    /// Influences of every site on a small crossing event.
    Influence(InfluenceArgs),
    /// Fold-event probability on one lattice edge.
    Fold(FoldArgs),
    /// Sprinkled crossing gap between a coarse and a refined mesh.
    Gap(GapArgs),
    /// Derived experiments: decay fits, summability, pivotal decay.
    Report(ReportArgs),
    /// Lattice utilities.
    Lattice {
        #[command(subcommand)]
        command: LatticeCommand,
    },
}

#[derive(Args)]
struct KernelSqrtArgs {
    #[arg(long, default_value = "bf")]
    kernel: Kernel,
    #[arg(long)]
    eps: f64,
    /// Also tabulate sum |eta| over these meshes.
    #[arg(long, value_delimiter = ',')]
    scan: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value = "bf")]
    kernel: Kernel,
    #[arg(long)]
    eps: f64,
    /// Width and height of `[0, W] x [0, H]`.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    rect: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "bf")]
    kernel: Kernel,
    /// Mesh, or `log` for eps(R) = log(R)^(-1/3).
    #[arg(long)]
    eps: String,
    #[arg(long, default_value_t = 2.0)]
    rho: f64,
    #[arg(long = "R", value_delimiter = ',', required = true)]
    r: Vec<f64>,
    /// Comma list or `start:stop:step`.
    #[arg(long, allow_hyphen_values = true)]
    p: String,
    #[arg(long, value_parser = parse_count)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InfluenceArgs {
    #[arg(long, default_value = "bf")]
    kernel: Kernel,
    #[arg(long)]
    eps: f64,
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    rect: Vec<f64>,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    p: f64,
    /// Step of the finite-difference derivative in the Russo check.
    #[arg(long, default_value_t = 0.05)]
    h: f64,
    #[arg(long, value_parser = parse_count)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FoldArgs {
    #[arg(long, default_value = "bf")]
    kernel: Kernel,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    p: f64,
    #[arg(long = "K", default_value_t = 16)]
    k: usize,
    /// Additional interior counts for the refinement table.
    #[arg(long, value_delimiter = ',')]
    refine: Vec<usize>,
    #[arg(long)]
    crude: bool,
    #[arg(long, value_parser = parse_count)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long, default_value = "bf")]
    kernel: Kernel,
    #[arg(long)]
    eps: f64,
    #[arg(long = "R")]
    r: f64,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 4)]
    fine_factor: usize,
    #[arg(long, value_parser = parse_count)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(subcommand)]
    kind: ReportKind,
}

#[derive(Subcommand)]
enum ReportKind {
    /// Exponential decay of 1 - P[Cross_p(2R, R)] in R.
    Decay {
        #[arg(long, default_value = "bf")]
        kernel: Kernel,
        #[arg(long)]
        eps: f64,
        #[arg(long, allow_hyphen_values = true)]
        p: f64,
        #[arg(long = "R", value_delimiter = ',', required = true)]
        r: Vec<f64>,
        #[arg(long, value_parser = parse_count)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partial sums of dyadic crossing failures and the a_k recursion.
    Summability {
        #[arg(long, default_value = "bf")]
        kernel: Kernel,
        #[arg(long)]
        eps: f64,
        #[arg(long, allow_hyphen_values = true)]
        p: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        #[arg(long, value_parser = parse_count)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pivotal probability of the centre site across R.
    Pivotal {
        #[arg(long, default_value = "bf")]
        kernel: Kernel,
        #[arg(long)]
        eps: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        p: f64,
        #[arg(long = "R", value_delimiter = ',', required = true)]
        r: Vec<f64>,
        #[arg(long, value_parser = parse_count)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Slope of the logit crossing curve at p = 0 across R.
    Sharpness {
        #[arg(long, default_value = "bf")]
        kernel: Kernel,
        #[arg(long)]
        eps: f64,
        #[arg(long = "R", value_delimiter = ',', required = true)]
        r: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        p_far: f64,
        #[arg(long, value_parser = parse_count)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LatticeCommand {
    /// Write the site and edge lists of a rectangle.
    Dump {
        #[arg(long)]
        eps: f64,
        #[arg(long, num_args = 2, value_names = ["W", "H"])]
        rect: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Replicate counts accept scientific notation (`1e6`).
fn parse_count(s: &str) -> std::result::Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    let x: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
        Ok(x as usize)
    } else {
        Err(format!("not a non-negative integer: {s}"))
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("bad grid {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step): (f64, f64, f64) = (
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
                step.parse().map_err(|_| bad())?,
            );
            if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || b < a {
                return Err(bad());
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect())
        }
        _ => s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect(),
    }
}

fn rect_region(rect: &[f64]) -> Result<Region> {
    match rect {
        [w, h] => Ok(Region::rectangle(*w, *h)),
        _ => Err(Error::InvalidParameter("--rect takes a width and a height".into())),
    }
}

struct Ctx {
    seed: u64,
    cache_dir: Option<PathBuf>,
    record_timing: bool,
    started: Instant,
}

impl Ctx {
    fn sqrt(&self, kernel: &Kernel, eps: f64) -> Result<Arc<bfperc::SqrtKernel>> {
        Ok(Arc::new(cached_sqrt_kernel(self.cache_dir.as_deref(), kernel, eps)?))
    }

    /// Writes the run manifest next to `data`.
    fn manifest<C: Serialize, R: Serialize>(&self, command: &str, data: &Path, config: &C, results: &R, fits: serde_json::Value) -> Result<()> {
        let mut record = RunRecord::new(command, config, results)?;
        record.fits = fits;
        if self.record_timing {
            record.wall_time_s = Some(self.started.elapsed().as_secs_f64());
        }
        write_json(&manifest_path(data), &record)
    }
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    config: &'a T,
}

fn versioned<T: Serialize>(config: &T) -> Versioned<'_, T> {
    Versioned {
        schema_version: CSV_SCHEMA_VERSION,
        config,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        cache_dir: cli.cache_dir,
        record_timing: cli.record_timing,
        started: Instant::now(),
    };
    match cli.command {
        Command::KernelSqrt(a) => {
            let sk = ctx.sqrt(&a.kernel, a.eps)?;
            write_json(&a.out, &*sk)?;
            if !a.scan.is_empty() {
                let rows = op_norm_scan(&a.kernel, &a.scan)?;
                let path = a.out.with_extension("scan.csv");
                write_csv(&path, &rows)?;
            }
        }
        Command::Sample(a) => {
            let sqrt = ctx.sqrt(&a.kernel, a.eps)?;
            let graph = Arc::new(build_region_graph(a.eps, rect_region(&a.rect)?)?);
            let sampler = ConvolutionSampler::new(sqrt, graph.clone())?;
            let f = sampler.sample(ctx.seed, a.replicate);
            write_field_file(&a.out, &graph, &f)?;
        }
        Command::CrossingSweep(a) => {
            let eps = match a.eps.as_str() {
                "log" => EpsRule::LogCubeRoot,
                e => EpsRule::Fixed(e.parse().map_err(|_| Error::InvalidParameter(format!("bad mesh {e:?}")))?),
            };
            let config = ExperimentConfig {
                kernel: a.kernel,
                eps,
                r_grid: a.r,
                p_grid: parse_grid(&a.p)?,
                rho: a.rho,
                n: a.n,
                seed: ctx.seed,
                output: Some(a.out.display().to_string()),
            };
            let rows = crossing_sweep(&config)?;
            write_csv(&a.out, &rows)?;
            let curve = logit_curve(&rows);
            ctx.manifest("crossing-sweep", &a.out, &versioned(&config), &rows, serde_json::to_value(curve)?)?;
        }
        Command::Influence(a) => {
            let graph = build_region_graph(a.eps, rect_region(&a.rect)?)?;
            let spec = GaussianSpec::from_graph(&a.kernel, &graph)?.with_sqrt();
            let event = GraphCrossing::new(&graph, Direction::LeftRight);
            let report = influences(&event, &spec, a.p, a.n, ctx.seed)?;
            write_csv(&a.out, &report.sites.iter().map(InfluenceRow::from).collect::<Vec<_>>())?;
            let russo = russo_check(&event, &spec, a.p, a.h, a.n, ctx.seed)?;
            let kkl = kkl_check(&event, &spec, a.p, a.n, ctx.seed)?;
            let config = serde_json::json!({
                "schema_version": CSV_SCHEMA_VERSION,
                "kernel": a.kernel, "eps": a.eps, "rect": a.rect, "p": a.p, "h": a.h, "n": a.n, "seed": ctx.seed,
            });
            ctx.manifest("influence", &a.out, &config, &report, serde_json::json!({ "russo": russo, "kkl": kkl }))?;
        }
        Command::Fold(a) => {
            let method = if a.crude { FoldMethod::Crude } else { FoldMethod::ImportanceSampling };
            let mut ks = vec![a.k];
            ks.extend(a.refine.iter().filter(|&&k| k != a.k));
            let rows = ks
                .iter()
                .map(|&k| {
                    let spec = FoldSpec { eps: a.eps, p: a.p, k, n: a.n };
                    estimate_fold(&a.kernel, &spec, ctx.seed, method).map(|e| FoldRow::new(&a.kernel, &e))
                })
                .collect::<Result<Vec<_>>>()?;
            write_csv(&a.out, &rows)?;
            let config = serde_json::json!({
                "schema_version": CSV_SCHEMA_VERSION,
                "kernel": a.kernel, "eps": a.eps, "p": a.p, "K": ks, "n": a.n, "method": method, "seed": ctx.seed,
            });
            ctx.manifest("fold", &a.out, &config, &rows, serde_json::Value::Null)?;
        }
        Command::Gap(a) => {
            let report = estimate_sprinkled_gap(&a.kernel, a.eps, a.r, a.p, a.fine_factor, a.n, ctx.seed)?;
            write_json(&a.out, &report)?;
        }
        Command::Report(r) => report(&ctx, r.kind)?,
        Command::Lattice {
            command: LatticeCommand::Dump { eps, rect, out },
        } => {
            let graph = build_region_graph(eps, rect_region(&rect)?)?;
            std::fs::write(out, graph.dump())?;
        }
    }
    Ok(())
}

fn report(ctx: &Ctx, kind: ReportKind) -> Result<()> {
    let seed = ctx.seed;
    match kind {
        ReportKind::Decay { kernel, eps, p, r, n, out } => {
            let failures = failure_estimates(&kernel, eps, &r, p, n, seed)?;
            let fit = decay_fit(p, &r, &failures);
            let value = serde_json::json!({
                "kernel": kernel, "eps": eps, "p": p, "R": r, "n": n, "seed": seed,
                "failures": failures,
                "fit": fit.as_ref().ok(),
                "fit_error": fit.as_ref().err().map(|e| e.to_string()),
            });
            write_json(&out, &value)?;
        }
        ReportKind::Summability { kernel, eps, p, k, n, out } => {
            let sum = summability_report(&kernel, eps, p, &k, n, seed)?;
            let k_max = k.iter().copied().max().unwrap_or(0);
            let rec = recursion_report(&kernel, eps, p, k_max, n, seed)?;
            write_json(&out, &serde_json::json!({ "summability": sum, "recursion": rec, "seed": seed }))?;
        }
        ReportKind::Pivotal { kernel, eps, p, r, n, out } => {
            write_json(&out, &pivotal_decay_scan(&kernel, eps, &r, p, n, seed)?)?;
        }
        ReportKind::Sharpness { kernel, eps, r, p_far, n, out } => {
            write_json(&out, &threshold_sharpness(&kernel, eps, &r, 2.0, p_far, n, seed)?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct InfluenceRow {
    site: usize,
    level: f64,
    pivotal_prob: f64,
    pivotal_stderr: f64,
    influence: f64,
    influence_stderr: f64,
}

impl From<&bfperc::influence::InfluenceEstimate> for InfluenceRow {
    fn from(e: &bfperc::influence::InfluenceEstimate) -> Self {
        InfluenceRow {
            site: e.site,
            level: e.level,
            pivotal_prob: e.pivotal_prob.mean,
            pivotal_stderr: e.pivotal_prob.stderr,
            influence: e.influence,
            influence_stderr: e.influence_stderr,
        }
    }
}

#[derive(Serialize)]
struct FoldRow {
    kernel: String,
    eps: f64,
    p: f64,
    k: usize,
    n: usize,
    mean: f64,
    stderr: f64,
    seed: u64,
}

impl FoldRow {
    fn new(kernel: &Kernel, e: &bfperc::sprinkling::FoldEstimate) -> Self {
        FoldRow {
            kernel: kernel.to_string(),
            eps: e.spec.eps,
            p: e.spec.p,
            k: e.spec.k,
            n: e.spec.n,
            mean: e.estimate.mean,
            stderr: e.estimate.stderr,
            seed: e.estimate.seed_stream,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_in_scientific_notation() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("2000"), Ok(2000));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn level_grids() {
        assert_eq!(parse_grid("-0.2:0.2:0.1").unwrap(), vec![-0.2, -0.1, 0.0, 0.1, 0.2]);
        assert_eq!(parse_grid("0.5,1").unwrap(), vec![0.5, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a,b").is_err());
    }
}
