use clap::{Args, Parser, Subcommand};
use labcli::{catalog_table, list_experiments, parse_seeds, Experiment, ExperimentSpec, Params, RunManifest};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ganlab",
    version,
    about = "Run the ganlab experiments and record their assertions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment for each seed.
    Run {
        experiment: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run one experiment for each value of a config key and each seed.
    Sweep {
        experiment: String,
        /// Config key to vary.
        key: String,
        /// Comma-separated values.
        values: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the experiment catalog.
    List {
        /// Print a JSON array instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// A seed; repeat for several.
    #[arg(long = "seed")]
    seed: Vec<u64>,
    /// Seed list: 0..3, 0..=2 or 0,1,2.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<String>,
    /// Output directory for CSVs and manifest.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// key=value override; repeat for several.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// key=value config file applied before --set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the manifest as JSON on stdout instead of a summary.
    #[arg(long)]
    json: bool,
}

impl CommonArgs {
    fn spec(&self, experiment: &str) -> labcli::Result<ExperimentSpec> {
        let mut params = Params::defaults(Experiment::parse(experiment)?);
        if let Some(path) = &self.config {
            params.apply_file(path)?;
        }
        for s in &self.set {
            params.apply_assignment(s)?;
        }
        let seeds = match (&self.seeds, self.seed.is_empty()) {
            (Some(s), _) => parse_seeds(s)?,
            (None, true) => vec![0],
            (None, false) => self.seed.clone(),
        };
        ExperimentSpec::new(params, seeds, &self.out)
    }
}

fn report(m: &RunManifest, json: bool, out: &std::path::Path) -> labcli::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(m)?);
        return Ok(());
    }
    for a in &m.assertions {
        let tag = if a.passed { "PASS" } else { "FAIL" };
        let seed = a.seed.map_or_else(|| "pooled".to_string(), |s| format!("seed {s}"));
        println!(
            "{tag} {} [{seed}] {}: {}",
            a.config_id.as_deref().unwrap_or("sweep"),
            a.name,
            a.detail
        );
    }
    println!(
        "{}: {}/{} assertions passed; manifest {}",
        m.experiment,
        m.passed_count(),
        m.declared_assertions,
        out.join(labcli::MANIFEST_NAME).display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> labcli::Result<i32> {
    match cli.command {
        Command::List { json } => {
            if json {
                println!("{}", serde_json::to_string_pretty(&list_experiments())?);
            } else {
                print!("{}", catalog_table());
            }
            Ok(0)
        }
        Command::Run { experiment, common } => {
            let spec = common.spec(&experiment)?;
            let m = labcli::run(&spec)?;
            report(&m, common.json, &spec.out)?;
            Ok(m.exit_code())
        }
        Command::Sweep {
            experiment,
            key,
            values,
            common,
        } => {
            let spec = common.spec(&experiment)?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let m = labcli::sweep(&spec, &key, &values)?;
            report(&m, common.json, &spec.out)?;
            Ok(m.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let code = match dispatch(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
