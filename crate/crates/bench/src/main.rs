use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deepgnn_bench::report::{self, GridArtifact, ResultsArtifact, TimingArtifact};
use deepgnn_bench::runner::load_source;
use deepgnn_bench::spec::{self, ExperimentSpec};
use deepgnn_bench::{grid_search, profile_epoch, resolve_preset, run_experiment};

#[derive(Parser)]
#[command(
    name = "deepgnn",
    version,
    about = "Train and benchmark deep GNNs with training tricks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the repetitions of a spec and write results.json and summary.md.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run every cell of the spec's grid and write heatmap.csv.
    Grid {
        spec: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Time training epochs and write timing.json.
    Profile {
        spec: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run a named preset, or print its spec with --emit-spec.
    Preset {
        name: String,
        #[arg(long)]
        emit_spec: bool,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args)]
struct Opts {
    /// Repetitions (overrides run.reps).
    #[arg(long)]
    reps: Option<usize>,
    /// First seed (overrides run.seed_base).
    #[arg(long)]
    seed_base: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

impl Opts {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        if let Some(reps) = self.reps {
            spec.reps = reps;
        }
        if let Some(seed) = self.seed_base {
            spec.seed_base = seed;
        }
        spec.validate()?;
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.threads {
            anyhow::ensure!(n >= 1, "--threads must be at least 1");
            builder = builder.num_threads(n);
        }
        Ok(builder.build()?)
    }
}

fn load_spec(path: &Path, opts: &Opts) -> Result<ExperimentSpec> {
    let mut spec =
        spec::read_spec(path).with_context(|| format!("reading spec {}", path.display()))?;
    opts.apply(&mut spec)?;
    Ok(spec)
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn run(spec: &ExperimentSpec, opts: &Opts) -> Result<()> {
    let data = load_source(&spec.dataset).context("loading dataset")?;
    let outcome = opts.pool()?.install(|| run_experiment(spec, &data));
    let outcome = outcome?;
    for r in &outcome.records {
        if let Some(e) = &r.error {
            eprintln!("seed {} failed: {e}", r.seed);
        }
    }
    let artifact = ResultsArtifact::new(spec, &outcome);
    report_written(&report::write_results(&opts.out, &artifact)?);
    print!("{}", report::summary_markdown(&artifact));
    Ok(())
}

fn grid(spec: &ExperimentSpec, opts: &Opts) -> Result<()> {
    let data = load_source(&spec.dataset).context("loading dataset")?;
    let outcome = opts.pool()?.install(|| grid_search(spec, &data))?;
    let artifact = GridArtifact::new(spec, &outcome);
    report_written(&report::write_grid(&opts.out, &artifact)?);
    print!("{}", artifact.heatmap_csv());
    Ok(())
}

fn profile(spec: &ExperimentSpec, opts: &Opts) -> Result<()> {
    let data = load_source(&spec.dataset).context("loading dataset")?;
    let timings = profile_epoch(spec, &data)?;
    for t in &timings {
        println!("{:<10} {:>10.3} ms/epoch", t.label, t.median_ms);
    }
    let artifact = TimingArtifact::new(spec, timings);
    report_written(&report::write_timing(&opts.out, &artifact)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, opts } => run(&load_spec(&spec, &opts)?, &opts),
        Command::Grid { spec, opts } => grid(&load_spec(&spec, &opts)?, &opts),
        Command::Profile { spec, opts } => profile(&load_spec(&spec, &opts)?, &opts),
        Command::Preset {
            name,
            emit_spec,
            opts,
        } => {
            let mut spec = resolve_preset(&name)?;
            opts.apply(&mut spec)?;
            if emit_spec {
                print!("{spec}");
                Ok(())
            } else {
                run(&spec, &opts)
            }
        }
    }
}
