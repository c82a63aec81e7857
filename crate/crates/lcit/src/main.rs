//! Command-line interface: run a conditional independence test on a CSV
//! file, simulate benchmark instances, run the benchmark grid, or check
//! null calibration.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lcit::bench::{
    run_benchmark, tester_by_name, write_record_csv, BenchCell, BenchConfig, RUN_CSV_HEADER,
};
use lcit::data::load_csv;
use lcit::error::{Error, Result};
use lcit::flow::TrainConfig;
use lcit::independence::{lcit as lcit_test, partial_correlation_test, Decision, TestResult};
use lcit::metrics::{ks_uniform, Hypothesis};
use lcit::rng::derive_seed;
use lcit::synth::{generate_instance, SimConfig};

#[derive(Parser)]
#[command(name = "lcit", about = "Latent-representation conditional independence testing")]
struct Cli {
    /// Base RNG seed; all randomness is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Significance level; the null is rejected when p <= alpha.
    #[arg(long, global = true, default_value_t = 0.05)]
    alpha: f64,

    /// Write primary output here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Output format for single-result commands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lcit,
    Pcorr,
}

#[derive(Args)]
struct FlowArgs {
    /// Mixture components per flow.
    #[arg(long, default_value_t = 32)]
    components: usize,

    /// Maximum training epochs per flow.
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
}

impl FlowArgs {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            components: self.components,
            max_epochs: self.max_epochs,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Test whether x and y are conditionally independent given z.
    Test {
        /// Input CSV file with a header row.
        #[arg(long)]
        input: PathBuf,

        /// Column name of the first variable.
        #[arg(long, default_value = "x")]
        x: String,

        /// Column name of the second variable.
        #[arg(long, default_value = "y")]
        y: String,

        /// Comma-separated conditioning column names; may be empty.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        z: Vec<String>,

        #[arg(long, value_enum, default_value_t = Method::Lcit)]
        method: Method,

        #[command(flatten)]
        flow: FlowArgs,
    },

    /// Generate one synthetic benchmark instance as CSV plus a JSON sidecar
    /// with the realized configuration.
    Simulate {
        #[arg(long)]
        n: usize,

        /// Conditioning dimension.
        #[arg(long)]
        d: usize,

        /// Ground-truth label: H0 (independent) or H1 (dependent).
        #[arg(long, default_value = "H0")]
        label: String,

        /// Output CSV path; the sidecar goes to the same path with a .json
        /// extension.
        #[arg(long)]
        out: PathBuf,
    },

    /// Run the benchmark grid and write per-run records and a summary.
    Bench {
        /// Grid cells as NxD pairs, e.g. "500x5,1000x25".
        #[arg(long)]
        grid: String,

        /// Runs per label per cell.
        #[arg(long, default_value_t = 50)]
        runs: usize,

        /// Comma-separated methods to compare.
        #[arg(long, value_delimiter = ',', default_value = "lcit,pcorr")]
        methods: Vec<String>,

        /// Output directory for runs.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,

        #[command(flatten)]
        flow: FlowArgs,
    },

    /// Check null calibration: repeated H0 draws through the test, reporting
    /// the rejection rate and the KS distance of the p-values to uniform.
    Calibrate {
        /// Sample size per draw.
        #[arg(long, default_value_t = 500)]
        n: usize,

        /// Conditioning dimension per draw.
        #[arg(long, default_value_t = 5)]
        d: usize,

        /// Number of H0 draws.
        #[arg(long, default_value_t = 20)]
        runs: usize,

        #[command(flatten)]
        flow: FlowArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err((stage, err)) => {
            eprintln!("error during {stage}: {err}");
            ExitCode::from(2)
        }
    }
}

type StageResult = std::result::Result<ExitCode, (&'static str, Error)>;

fn stage<T>(name: &'static str, result: Result<T>) -> std::result::Result<T, (&'static str, Error)> {
    result.map_err(|e| (name, e))
}

fn run(cli: &Cli) -> StageResult {
    match &cli.command {
        Command::Test {
            input,
            x,
            y,
            z,
            method,
            flow,
        } => cmd_test(cli, input, x, y, z, *method, flow),
        Command::Simulate { n, d, label, out } => cmd_simulate(cli, *n, *d, label, out),
        Command::Bench {
            grid,
            runs,
            methods,
            out,
            flow,
        } => cmd_bench(cli, grid, *runs, methods, out, flow),
        Command::Calibrate { n, d, runs, flow } => cmd_calibrate(cli, *n, *d, *runs, flow),
    }
}

fn cmd_test(
    cli: &Cli,
    input: &Path,
    x: &str,
    y: &str,
    z: &[String],
    method: Method,
    flow: &FlowArgs,
) -> StageResult {
    let z: Vec<String> = z.iter().filter(|c| !c.is_empty()).cloned().collect();
    let dataset = stage("data loading", load_csv(input, x, y, &z))?;
    let result = match method {
        Method::Lcit => {
            let config = flow.train_config(cli.seed);
            stage(
                "flow training and testing",
                lcit_test(&dataset.x, &dataset.y, &dataset.z, cli.alpha, &config),
            )?
            .0
        }
        Method::Pcorr => stage(
            "partial correlation test",
            partial_correlation_test(&dataset.x, &dataset.y, &dataset.z, cli.alpha),
        )?,
    };
    stage("writing output", emit_result(cli, &result))?;
    Ok(match result.decision {
        Decision::Independent => ExitCode::SUCCESS,
        Decision::Dependent => ExitCode::from(1),
    })
}

fn emit_result(cli: &Cli, result: &TestResult) -> Result<()> {
    let rendered = match cli.format {
        Format::Json => serde_json::to_string_pretty(result)? + "\n",
        Format::Csv => format!(
            "p_value,statistic,correlation,n,alpha,decision\n{:.12},{:.12},{:.12},{},{},{}\n",
            result.p_value.get(),
            result.statistic,
            result.correlation,
            result.n,
            result.alpha,
            match result.decision {
                Decision::Independent => "independent",
                Decision::Dependent => "dependent",
            }
        ),
    };
    match &cli.output {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, n: usize, d: usize, label: &str, out: &Path) -> StageResult {
    let label: Hypothesis = stage("argument parsing", label.parse())?;
    let config = stage("configuration sampling", SimConfig::sample(n, d, label, cli.seed))?;
    let dataset = stage("data generation", generate_instance(&config))?;

    let write = || -> Result<()> {
        let mut writer = csv::Writer::from_path(out)?;
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((1..=d).map(|j| format!("z{j}")));
        writer.write_record(&header)?;
        for i in 0..n {
            let mut row = vec![format!("{:.12}", dataset.x[i]), format!("{:.12}", dataset.y[i])];
            row.extend((0..d).map(|j| format!("{:.12}", dataset.z[[i, j]])));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        let sidecar = out.with_extension("json");
        std::fs::write(&sidecar, serde_json::to_string_pretty(&config)? + "\n")?;
        Ok(())
    };
    stage("writing output", write())?;
    Ok(ExitCode::SUCCESS)
}

fn parse_grid(grid: &str) -> Result<Vec<BenchCell>> {
    grid.split(',')
        .map(|cell| {
            let (n, d) = cell
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("bad grid cell '{cell}', expected NxD")))?;
            Ok(BenchCell {
                n: n.parse().map_err(|_| Error::Config(format!("bad n in '{cell}'")))?,
                d: d.parse().map_err(|_| Error::Config(format!("bad d in '{cell}'")))?,
            })
        })
        .collect()
}

fn cmd_bench(
    cli: &Cli,
    grid: &str,
    runs: usize,
    methods: &[String],
    out: &Path,
    flow: &FlowArgs,
) -> StageResult {
    let cells = stage("argument parsing", parse_grid(grid))?;
    let base = flow.train_config(0);
    let testers = stage(
        "argument parsing",
        methods.iter().map(|m| tester_by_name(m, &base)).collect::<Result<Vec<_>>>(),
    )?;
    let config = BenchConfig {
        cells,
        runs_per_label: runs,
        alpha: cli.alpha,
        seed: cli.seed,
    };

    let execute = || -> Result<String> {
        std::fs::create_dir_all(out)?;
        let mut writer = csv::Writer::from_path(out.join("runs.csv"))?;
        writer.write_record(RUN_CSV_HEADER)?;
        let reports = run_benchmark(&config, &testers, &mut |record| {
            write_record_csv(&mut writer, record)
        })?;
        writer.flush()?;

        let mut summary = String::from("method,n,d,f1,auc,type1,type2,runs,errors\n");
        for r in &reports {
            let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            summary.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.n,
                r.d,
                opt(r.f1),
                opt(r.auc),
                opt(r.type1),
                opt(r.type2),
                r.runs,
                r.errors
            ));
        }
        std::fs::write(out.join("summary.csv"), &summary)?;
        Ok(summary)
    };
    let summary = stage("benchmark execution", execute())?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(cli: &Cli, n: usize, d: usize, runs: usize, flow: &FlowArgs) -> StageResult {
    if runs == 0 {
        return Err(("argument parsing", Error::Config("need at least one run".into())));
    }
    let mut p_values = Vec::new();
    let mut errors = 0usize;
    for rep in 0..runs {
        let instance_seed = derive_seed(cli.seed, 0xCA11 + rep as u64);
        let sim = stage(
            "configuration sampling",
            SimConfig::sample(n, d, Hypothesis::H0, instance_seed),
        )?;
        let dataset = stage("data generation", generate_instance(&sim))?;
        let config = flow.train_config(derive_seed(instance_seed, 0x3E57));
        match lcit_test(&dataset.x, &dataset.y, &dataset.z, cli.alpha, &config) {
            Ok((result, _)) => p_values.push(result.p_value.get()),
            Err(Error::TooFewSamples { got, min }) => {
                return Err(("flow training and testing", Error::TooFewSamples { got, min }))
            }
            Err(_) => errors += 1,
        }
    }
    if p_values.is_empty() {
        return Err(("flow training and testing", Error::Divergence("all runs failed".into())));
    }
    let rejected = p_values.iter().filter(|p| **p <= cli.alpha).count();
    let report = serde_json::json!({
        "n": n,
        "d": d,
        "alpha": cli.alpha,
        "runs": runs,
        "errors": errors,
        "rejection_rate": rejected as f64 / p_values.len() as f64,
        "ks_uniform": stage("calibration summary", ks_uniform(&p_values))?,
    });
    let rendered = serde_json::to_string_pretty(&report).expect("json render") + "\n";
    match &cli.output {
        Some(path) => stage("writing output", std::fs::write(path, rendered).map_err(Error::from))?,
        None => {
            print!("{rendered}");
            std::io::stdout().flush().ok();
        }
    }
    Ok(ExitCode::SUCCESS)
}
