use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gafm_core::experiment::{
    emit_reports, parse_results_csv, run_multiclient, run_table, select_delta, sigma_sweep,
    summary_markdown, DataSource, DeltaSearch, ExperimentConfig, TableResult,
};
use gafm_core::{Error, Result};

/// Split-learning label-leakage experiments.
#[derive(Parser, Debug)]
#[command(name = "gafm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every method on every seed; writes results.csv, summary.md, cut_records.tsv, leak_report.json.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Choose the randomized-response width on a small subsample.
    SelectDelta {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.3, 0.5])]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0.6)]
        tau: f64,
        /// Seeds the subsample and the repetitions.
        #[arg(long, default_value_t = 0)]
        search_seed: u64,
    },
    /// GAFM at several generator-input noise scales.
    SigmaSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.25, 1.0])]
        sigmas: Vec<f64>,
    },
    /// Several passive parties with averaged cut values; a single-client config becomes 3 parties.
    Multiclient {
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild summary.md from an existing results.csv.
    Report {
        /// results.csv to read.
        input: PathBuf,
        /// Where to write the summary; stdout only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    path: Option<String>,
    /// Comma-separated: gafm, vanilla, maxnorm, gan_only, penalty_only.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr_d: Option<String>,
    #[arg(long)]
    lr_g: Option<String>,
    #[arg(long)]
    lr_l: Option<String>,
    /// "0..9", "3" or "0,2,5".
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    clients: Option<String>,
    /// Feature columns per party, e.g. 19,19,19.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    outdir: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Any other config key, e.g. --set init=glorot.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let cfg = self.unchecked()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn unchecked(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::new(DataSource::from_name("synthetic", None)?),
        };
        // dataset before path, so a new name picks up the new path
        let named = [
            ("dataset", &self.dataset),
            ("path", &self.path),
            ("method", &self.method),
            ("delta", &self.delta),
            ("sigma", &self.sigma),
            ("gamma", &self.gamma),
            ("clip", &self.clip),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("lr_d", &self.lr_d),
            ("lr_g", &self.lr_g),
            ("lr_l", &self.lr_l),
            ("seeds", &self.seeds),
            ("clients", &self.clients),
            ("split", &self.split),
            ("outdir", &self.outdir),
            ("workers", &self.workers),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                cfg.apply(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.apply(k, v)?;
        }
        if let DataSource::Spambase(p) | DataSource::Credit(p) | DataSource::Imdb(p) = &cfg.source {
            if p.as_os_str().is_empty() {
                return Err(Error::InvalidParameter(format!("dataset {} needs a path", cfg.source.name())));
            }
        }
        Ok(cfg)
    }
}

fn finish(table: &TableResult, outdir: &Path) -> Result<()> {
    emit_reports(&table.outcomes, outdir)?;
    print!("{}", summary_markdown(&table.rows()));
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { common } => {
            let cfg = common.config()?;
            finish(&run_table(&cfg)?, &cfg.outdir)
        }
        Command::SelectDelta {
            common,
            grid,
            fraction,
            reps,
            tau,
            search_seed,
        } => {
            let cfg = common.config()?;
            let search = DeltaSearch {
                grid,
                subsample_fraction: fraction,
                reps,
                tau,
                seed: search_seed,
            };
            let data = cfg.source.load()?;
            let sel = select_delta(&data, &search, &cfg.train, cfg.workers)?;
            let json = serde_json::to_string_pretty(&sel).expect("selection serializes");
            write(&cfg.outdir.join("delta_selection.json"), &json)?;
            println!("{json}");
            Ok(())
        }
        Command::SigmaSweep { common, sigmas } => {
            let cfg = common.config()?;
            finish(&sigma_sweep(&cfg, &sigmas)?, &cfg.outdir)
        }
        Command::Multiclient { common } => {
            let mut cfg = common.unchecked()?;
            if cfg.clients == 1 {
                cfg.clients = cfg.split.as_ref().map_or(3, Vec::len);
            }
            cfg.validate()?;
            finish(&run_multiclient(&cfg, cfg.clients)?, &cfg.outdir)
        }
        Command::Report { input, out } => {
            let text = fs::read_to_string(&input).map_err(|e| io_error(&input, e))?;
            let summary = summary_markdown(&parse_results_csv(&text)?);
            if let Some(out) = out {
                write(&out, &summary)?;
            }
            print!("{summary}");
            Ok(())
        }
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string()),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
