//! `hodgefast` command-line tool.
//!
//! Every subcommand prints a short summary on success. On failure it writes a
//! JSON object to stderr and exits with 1, or 2 for usage and config errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hodgefast::fast::EdgeSet;
use hodgefast::io;
use hodgefast::pipeline::{
    connectivity_stage, decomposition_stage, load_cohort, run_pipeline, BandConnectivity, PipelineConfig,
};
use hodgefast::simplicial::build_clique_complex;
use hodgefast::stats::{group_compare, StatsOptions};
use hodgefast::synth::{generate_cohort, SynthConfig};
use hodgefast::Error;

#[derive(Parser)]
#[command(name = "hodgefast", version, about = "FAST connectivity, Hodge decomposition and group statistics")]
struct Cli {
    /// Print stage timings and extra detail to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (manifest plus epoch CSVs).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the FAST filter, mask and complex of every band.
    Filter(StageArgs),
    /// Decompose windowed flows into a feature table, using stored filters and masks.
    Decompose {
        #[command(flatten)]
        stage: StageArgs,
        /// Directory holding `bands/<name>/{filter.csv,mask.json}` (defaults to the output directory).
        #[arg(long = "from")]
        from: Option<PathBuf>,
    },
    /// Compare groups cell by cell from a feature table.
    Stats {
        #[arg(long)]
        features: PathBuf,
        /// Pipeline config supplying the test method and FDR family.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run every stage end to end.
    Pipeline(StageArgs),
    /// Summarise a mask's complex and/or a filter's value distribution.
    Inspect {
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        filter: Option<PathBuf>,
        /// Histogram bins for the filter.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl StageArgs {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command, cli.verbose) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": {
                    "kind": e.kind(),
                    "stage": e.stage(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{body}");
            ExitCode::from(if e.kind() == "config" { 2 } else { 1 })
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T, Error> + Send) -> Result<T, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

fn run(command: Command, verbose: bool) -> Result<(), Error> {
    match command {
        Command::Synth { config, output, seed } => {
            let text = io::read_text(&config)?;
            let mut cfg: SynthConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
            let cohort = generate_cohort(&cfg)?;
            let manifest = io::write_cohort(&output, &cohort)?;
            io::write_json(&output.join("synth_config.json"), &cfg)?;
            println!("wrote {} participants to {}", cohort.len(), manifest.display());
        }
        Command::Filter(args) => {
            let cfg = args.load()?;
            with_threads(cfg.threads, || {
                let (cohort, _) = load_cohort(&cfg)?;
                for conn in connectivity_stage(&cfg, &cohort)? {
                    let dir = cfg.band_dir(&conn.band.name);
                    conn.write(&dir)?;
                    let s = conn.summary();
                    println!(
                        "{}: {} edges, {} triangles, β1 = {} -> {}",
                        s.band,
                        s.n_edges,
                        s.n_triangles,
                        s.betti_1,
                        dir.display()
                    );
                }
                Ok(())
            })?;
        }
        Command::Decompose { stage, from } => {
            let cfg = stage.load()?;
            let from = from.unwrap_or_else(|| cfg.output.clone());
            with_threads(cfg.threads, || {
                let (cohort, _) = load_cohort(&cfg)?;
                let conns = cfg
                    .bands
                    .iter()
                    .map(|b| BandConnectivity::read(b.clone(), &from.join("bands").join(&b.name)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.in_stage("decomposition"))?;
                let table = decomposition_stage(&cfg, &cohort, &conns)?;
                let path = cfg.output.join("features.csv");
                io::write_features_csv(&path, &table)?;
                println!("wrote {}", path.display());
                Ok(())
            })?;
        }
        Command::Stats {
            features,
            config,
            output,
            threads,
        } => {
            let options = match &config {
                Some(p) => PipelineConfig::load(p)?.stats_options(),
                None => StatsOptions::default(),
            };
            let results = with_threads(threads, || {
                let table = io::read_features_csv(&features)?;
                group_compare(&table, options).map_err(|e| e.in_stage("statistics"))
            })?;
            let csv = output.join("results.csv");
            io::write_results_csv(&csv, &results)?;
            io::write_results_json(&output.join("results.json"), &results)?;
            let n_sig = results.iter().filter(|r| r.fdr_p_value < 0.05).count();
            println!("{} cells, {n_sig} with FDR p < 0.05 -> {}", results.len(), csv.display());
        }
        Command::Pipeline(args) => {
            let cfg = args.load()?;
            let report = run_pipeline(&cfg)?;
            if verbose {
                for t in &report.timings {
                    eprintln!("{:>28} {:>9.3} s", t.stage, t.seconds);
                }
            }
            let n_sig = report.results.iter().filter(|r| r.fdr_p_value < 0.05).count();
            println!(
                "{} cells, {n_sig} with FDR p < 0.05 -> {}",
                report.results.len(),
                cfg.output.join("results.csv").display()
            );
        }
        Command::Inspect { mask, filter, bins } => {
            if mask.is_none() && filter.is_none() {
                return Err(Error::Config("inspect needs --mask and/or --filter".into()));
            }
            if let Some(path) = mask {
                println!("{}", describe_mask(&path)?);
            }
            if let Some(path) = filter {
                print!("{}", filter_histogram(&path, bins)?);
            }
        }
    }
    Ok(())
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("{n} {word}")
    } else {
        format!("{n} {word}s")
    }
}

fn describe_mask(path: &Path) -> Result<String, Error> {
    let mask: EdgeSet = io::read_mask_json(path)?;
    let c = build_clique_complex(&mask);
    Ok(format!(
        "{}, {}, {}, β1 = {}",
        plural(c.n_nodes(), "node"),
        plural(c.n_edges(), "edge"),
        plural(c.n_triangles(), "triangle"),
        c.betti_1()
    ))
}

fn filter_histogram(path: &Path, bins: usize) -> Result<String, Error> {
    if bins == 0 {
        return Err(Error::Config("--bins must be positive".into()));
    }
    let filter = io::read_filter_csv(path)?;
    let values: Vec<f64> = filter.upper_triangle().map(|(_, v)| v).collect();
    let mut counts = vec![0usize; bins];
    for v in &values {
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut out = format!("filter: {} nodes, {} pairs\n", filter.n_nodes(), values.len());
    for (k, n) in counts.iter().enumerate() {
        let lo = k as f64 / bins as f64;
        let hi = (k + 1) as f64 / bins as f64;
        let bar = "#".repeat((n * 40).div_ceil(peak));
        out.push_str(&format!("[{lo:.2}, {hi:.2}{} {n:>7} {bar}\n", if k + 1 == bins { "]" } else { ")" }));
    }
    Ok(out)
}
