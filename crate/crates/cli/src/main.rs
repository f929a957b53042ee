//! `hrender`: render scenes, fit lobe lighting, check gradients and run
//! inverse-rendering tasks from the command line.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_render::assets::Backend;

#[derive(Parser, Debug)]
#[command(name = "hrender", version, about = "Differentiable deferred renderer", propagate_version = true)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "HRENDER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene to PNG and PFM.
    Render(RenderArgs),
    /// Fit spherical-Gaussian lobes to an HDR environment map.
    FitEnv(FitEnvArgs),
    /// Run an inverse-rendering task file.
    Optimize(OptimizeArgs),
    /// Compare two images or masks.
    Compare(CompareArgs),
    /// Dump the G-buffers of a scene.
    Gbuffer(GbufferArgs),
    /// Compare analytic gradients with finite differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Scene file.
    pub scene: PathBuf,
    /// Output path without extension; `.png` and `.pfm` are appended.
    #[arg(long)]
    pub out: PathBuf,
    /// Shading backend (`mc` or `sg`), overriding the scene's.
    #[arg(long)]
    pub backend: Option<Backend>,
    /// Monte Carlo samples per pixel, overriding the scene's.
    #[arg(long, value_parser = positive)]
    pub samples: Option<usize>,
    /// Random seed, overriding the scene's.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FitEnvArgs {
    /// PFM or Radiance HDR environment map.
    pub hdr: PathBuf,
    /// Number of lobes.
    #[arg(long, default_value_t = 128, value_parser = positive)]
    pub k: usize,
    /// Adam iterations.
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Initial Adam step size.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Output path without extension; writes `.sg`, `.pfm` and `.trace.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// Task file.
    pub task: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// First image (PNG, PFM or HDR).
    pub a: PathBuf,
    /// Second image of the same size.
    pub b: PathBuf,
    /// Metric to report.
    #[arg(long, value_enum, default_value_t = Metric::All)]
    pub metric: Metric,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    All,
    L1,
    Iou,
    Ncc,
}

#[derive(Args, Debug)]
pub struct GbufferArgs {
    /// Scene file.
    pub scene: PathBuf,
    /// Output path prefix; one PFM per buffer is written.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckGradArgs {
    /// Scene file.
    pub scene: PathBuf,
    /// Parameter glob or group (all, shape, material, lighting).
    #[arg(long)]
    pub selector: String,
    /// Central-difference step in unconstrained coordinates.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Shading backend (`mc` or `sg`), overriding the scene's.
    #[arg(long)]
    pub backend: Option<Backend>,
    /// Seed of the random linear objective.
    #[arg(long, default_value_t = 0)]
    pub loss_seed: u64,
    /// Also write the report as CSV to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Render(a) => commands::render(&a, threads),
        Command::FitEnv(a) => commands::fit_env(&a, threads),
        Command::Optimize(a) => commands::optimize(&a, threads),
        Command::Compare(a) => commands::compare(&a),
        Command::Gbuffer(a) => commands::gbuffer(&a, threads),
        Command::CheckGrad(a) => commands::check_grad(&a, threads),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn registry_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn zero_lobes_is_a_usage_error() {
        let r = Cli::try_parse_from(["hrender", "fit-env", "a.hdr", "--k", "0", "--out", "x"]);
        assert!(r.is_err());
        let ok = Cli::try_parse_from(["hrender", "fit-env", "a.hdr", "--k", "4", "--out", "x"]).unwrap();
        assert!(matches!(ok.command, Command::FitEnv(FitEnvArgs { k: 4, .. })));
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["hrender", "render", "s.scene", "--out", "x", "--gamma", "2"]).is_err());
        let r =
            Cli::try_parse_from(["hrender", "--threads", "3", "render", "s", "--out", "x", "--backend", "sg"]).unwrap();
        assert_eq!(r.threads, Some(3));
        assert!(matches!(r.command, Command::Render(RenderArgs { backend: Some(Backend::Sg), .. })));
    }
}
