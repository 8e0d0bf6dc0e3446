use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use codebook_transfer::eval::{cluster_sweep, learn_codebook, run_methods, sweep_csv};
use codebook_transfer::{ingest, Error, ExperimentConfig, Method, Result, TransferModel};

/// Codebook transfer experiments for cross-domain rating prediction.
#[derive(Parser, Debug)]
#[command(name = "codebook-transfer", version)]
struct Cli {
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run repetitions sequentially.
    #[arg(long, global = true)]
    serial: bool,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the configured method with repeated hold-out runs.
    Run { config: PathBuf },
    /// Evaluate one cluster count after another (k1 = k2 = k).
    Sweep {
        config: PathBuf,
        /// Comma-separated cluster counts, e.g. 25,50,75.
        #[arg(long = "k")]
        k: String,
    },
    /// Co-cluster the source and write its codebook.
    Codebook { config: PathBuf },
    /// Print dataset statistics for the source and target.
    Stats { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            report_error(&Error::Usage(e.kind().to_string()));
            return ExitCode::from(1);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report_error(e: &Error) {
    let message = e.to_string().replace(['\n', '\r'], " ");
    eprintln!("error code={} message={message}", e.code());
}

fn load_config(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn parse_k_list(text: &str) -> Result<Vec<usize>> {
    let ks = text
        .split(',')
        .map(|f| match f.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(k),
            _ => Err(Error::Usage(format!("bad cluster count {f:?} in --k"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() {
        return Err(Error::Usage("--k needs at least one value".into()));
    }
    Ok(ks)
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => cmd_run(cli, config),
        Command::Sweep { config, k } => {
            let ks = parse_k_list(k)?;
            cmd_sweep(cli, config, &ks)
        }
        Command::Codebook { config } => cmd_codebook(cli, config),
        Command::Stats { config } => {
            let cfg = load_config(cli, config)?;
            for (name, spec) in [("source", &cfg.source), ("target", &cfg.target)] {
                let m = ingest::load(spec)?;
                for line in ingest::stats(&m).to_string().lines() {
                    println!("{name}.{line}");
                }
            }
            Ok(())
        }
    }
}

fn cmd_run(cli: &Cli, config: &Path) -> Result<()> {
    let cfg = load_config(cli, config)?;
    let target = ingest::load(&cfg.target)?;
    let source = if cfg.method == Method::Proposed {
        ingest::load(&cfg.source)?
    } else {
        target.clone()
    };
    let protocol = cfg.protocol(cli.serial);
    let mut outcome = run_methods(&source, &target, &protocol, &[cfg.method], None)?;
    let mut report = outcome.reports.remove(0);
    report.config_echo = codebook_transfer::eval::config_echo(&cfg);

    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.txt"), report.to_key_value())?;
    fs::write(out.join("runs.csv"), report.per_run_csv())?;
    if let Some(src) = &outcome.source {
        fs::write(out.join("codebook.csv"), src.codebook.to_csv())?;
        fs::write(out.join("codebook_counts.csv"), src.codebook.counts_csv())?;
        fs::write(
            out.join("cocluster_trace.csv"),
            src.factorization.trace_csv(),
        )?;
    }
    if let Some(Some(model)) = outcome.first_models.first() {
        // run 0 is trained with the configured seed
        model.export(&out.join("model"), &cfg.transfer)?;
        fs::write(
            out.join("predictions.csv"),
            predictions_csv(model, &outcome.first_test),
        )?;
    }
    println!("method={}", report.method.name());
    println!("rmse={}", report.rmse);
    println!("mae={}", report.mae);
    println!("global_mean_rmse={}", report.global_mean_rmse);
    println!("output_dir={}", out.display());
    Ok(())
}

fn predictions_csv(model: &TransferModel, test: &codebook_transfer::SparseRatingMatrix) -> String {
    let mut out = String::from("user,item,rating,predicted,score\n");
    for t in test.iter() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.user,
            t.item,
            t.rating,
            model.predict(t.user, t.item),
            model.score(t.user, t.item)
        );
    }
    out
}

fn cmd_sweep(cli: &Cli, config: &Path, ks: &[usize]) -> Result<()> {
    let cfg = load_config(cli, config)?;
    let target = ingest::load(&cfg.target)?;
    let source = if cfg.method == Method::Proposed {
        ingest::load(&cfg.source)?
    } else {
        target.clone()
    };
    let points = cluster_sweep(&source, &target, ks, &cfg.protocol(cli.serial))?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let csv = sweep_csv(&points);
    fs::write(out.join("sweep.csv"), &csv)?;
    let mut text = String::new();
    for (k, report) in &points {
        for line in report.to_key_value().lines() {
            let _ = writeln!(text, "k{k}.{line}");
        }
    }
    fs::write(out.join("sweep_report.txt"), text)?;
    print!("{csv}");
    Ok(())
}

fn cmd_codebook(cli: &Cli, config: &Path) -> Result<()> {
    let cfg = load_config(cli, config)?;
    let source = ingest::load(&cfg.source)?;
    let model = learn_codebook(&source, &cfg.cocluster, cfg.averaging)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("codebook.csv"), model.codebook.to_csv())?;
    fs::write(out.join("codebook_counts.csv"), model.codebook.counts_csv())?;
    fs::write(
        out.join("cocluster_trace.csv"),
        model.factorization.trace_csv(),
    )?;
    let (k1, k2) = model.codebook.shape();
    println!("k1={k1}");
    println!("k2={k2}");
    println!("final_objective={}", model.factorization.final_objective());
    println!("output_dir={}", out.display());
    Ok(())
}
