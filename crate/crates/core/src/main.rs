use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use spikefilter::config::{ExperimentConfig, FilterChoice};
use spikefilter::experiments::{
    compare_uniform, filter_prior, preset, sweep_center, sweep_population, trial_observations, validate_oracle,
    variance_vs_mse, CompareRow, PRESETS,
};
use spikefilter::filter::{run_filter, FilterMode};
use spikefilter::io::{belief_table, path_table, read_spikes, write_spikes, Manifest, Table};

#[derive(Parser)]
#[command(
    name = "spikefilter",
    version,
    about = "Filtering diffusions from Poisson spike trains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one state path.
    Simulate(Common),
    /// Simulate one path and its spike train.
    Spikes(Common),
    /// Filter one trial (or a given spike file) and write the beliefs.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Spike CSV to filter instead of a simulated train.
        #[arg(long)]
        spikes: Option<PathBuf>,
    },
    /// Full ADF against the uniform coding filter over `sweep.sigma_pop2`.
    CompareUniform(Common),
    /// Posterior std over population center and rate or tuning width.
    SweepCenter(Common),
    /// Posterior std over population center and spread for a static state.
    SweepPop(Common),
    /// Squared error against posterior variance over time.
    VarianceMse(Common),
    /// ADF moments against a particle filter.
    ValidateOracle(Common),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults to the command's preset.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration by name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Trial index for single-trial commands.
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

impl Common {
    /// Effective configuration and the text identifying it.
    fn load(&self, default_preset: &str) -> Result<(ExperimentConfig, String)> {
        let mut text = match (&self.config, &self.preset) {
            (Some(path), _) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            (None, name) => {
                let name = name.as_deref().unwrap_or(default_preset);
                match preset(name) {
                    Some(t) => t.to_string(),
                    None => bail!("unknown preset `{name}`"),
                }
            }
        };
        let mut cfg = ExperimentConfig::from_text(&text).context("invalid configuration")?;
        // overrides are appended as comments so they change the hash
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            text.push_str(&format!("\n# --seed {seed}"));
        }
        if let Some(trials) = self.trials {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            cfg.trials = trials;
            text.push_str(&format!("\n# --trials {trials}"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt <= cfg.horizon) {
                bail!("--dt must be positive and at most the horizon");
            }
            cfg.dt = dt;
            text.push_str(&format!("\n# --dt {dt}"));
        }
        Ok((cfg, text))
    }
}

struct Output<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir, files: Vec::new() })
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        table
            .write_file(&self.dir.join(name))
            .with_context(|| format!("writing {name}"))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self, command: &str, text: &str, seed: u64) -> Result<()> {
        Manifest::new(command, text, seed, self.files)
            .write_file(&self.dir.join("manifest.json"))
            .context("writing manifest.json")
    }
}

fn mode_of(cfg: &ExperimentConfig) -> FilterMode {
    match cfg.filter {
        FilterChoice::Full => FilterMode::Full,
        FilterChoice::Uniform => FilterMode::UniformCoding,
    }
}

fn run(command: &Command, common: &Common) -> Result<()> {
    let (name, default) = match command {
        Command::Simulate(_) => ("simulate", "variance-mse"),
        Command::Spikes(_) => ("spikes", "variance-mse"),
        Command::Filter { .. } => ("filter", "variance-mse"),
        Command::CompareUniform(_) => ("compare-uniform", "compare-uniform"),
        Command::SweepCenter(_) => ("sweep-center", "center-rate"),
        Command::SweepPop(_) => ("sweep-pop", "population-wide"),
        Command::VarianceMse(_) => ("variance-mse", "variance-mse"),
        Command::ValidateOracle(_) => ("validate-oracle", "oracle"),
        Command::Presets => unreachable!("handled in main"),
    };
    let (cfg, text) = common.load(default)?;
    let mut out = Output::new(&common.out)?;
    match command {
        Command::Simulate(_) | Command::Spikes(_) | Command::Filter { spikes: None, .. } => {
            let (path, train) = trial_observations(&cfg, &cfg.encoder, common.trial)?;
            out.table("path.csv", &path_table(&path))?;
            if !matches!(command, Command::Simulate(_)) {
                let f = BufWriter::new(File::create(common.out.join("spikes.csv"))?);
                write_spikes(f, &train).context("writing spikes.csv")?;
                out.files.push("spikes.csv".to_string());
            }
            if matches!(command, Command::Filter { .. }) {
                let run = run_filter(
                    &cfg.model,
                    &cfg.encoder,
                    &train,
                    &filter_prior(&cfg),
                    cfg.dt,
                    &mode_of(&cfg),
                )?;
                out.table("beliefs.csv", &belief_table(&run.times, &run.beliefs))?;
            }
        }
        Command::Filter { spikes: Some(file), .. } => {
            let f = File::open(file).with_context(|| format!("reading {}", file.display()))?;
            let train = read_spikes(f, cfg.horizon)?;
            let run = run_filter(
                &cfg.model,
                &cfg.encoder,
                &train,
                &filter_prior(&cfg),
                cfg.dt,
                &mode_of(&cfg),
            )?;
            out.table("beliefs.csv", &belief_table(&run.times, &run.beliefs))?;
        }
        Command::CompareUniform(_) => {
            let rows = compare_uniform(&cfg)?;
            out.table("compare_uniform.csv", &CompareRow::table(&rows))?;
        }
        Command::SweepCenter(_) | Command::SweepPop(_) => {
            let r = if matches!(command, Command::SweepCenter(_)) {
                sweep_center(&cfg)?
            } else {
                sweep_population(&cfg)?
            };
            out.table("sweep_cells.csv", &r.cells_table())?;
            out.table("sweep_rows.csv", &r.rows_table())?;
        }
        Command::VarianceMse(_) => {
            let r = variance_vs_mse(&cfg)?;
            out.table("variance_mse.csv", &r.table())?;
            let mut summary = Table::new(["steady_ratio", "trials_ok", "failures"]);
            summary.push(vec![r.steady_ratio, r.trials_ok as f64, r.failures as f64]);
            out.table("variance_mse_summary.csv", &summary)?;
        }
        Command::ValidateOracle(_) => {
            let r = validate_oracle(&cfg)?;
            out.table("oracle_trials.csv", &r.table())?;
            let mut summary = Table::new([
                "mean_gap",
                "pf_std",
                "rel_var_gap",
                "mean_ok",
                "variance_ok",
                "failures",
            ]);
            summary.push(vec![
                r.mean_gap,
                r.pf_std,
                r.rel_var_gap,
                f64::from(u8::from(r.mean_agrees())),
                f64::from(u8::from(r.variance_agrees())),
                r.failures as f64,
            ]);
            out.table("oracle_summary.csv", &summary)?;
        }
        Command::Presets => unreachable!(),
    }
    out.finish(name, &text, cfg.seed)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Presets => {
            for (name, text) in PRESETS {
                let title = text.lines().next().unwrap_or("").trim_start_matches("# ");
                println!("{name:<20} {title}");
            }
            return Ok(());
        }
        Command::Simulate(c)
        | Command::Spikes(c)
        | Command::CompareUniform(c)
        | Command::SweepCenter(c)
        | Command::SweepPop(c)
        | Command::VarianceMse(c)
        | Command::ValidateOracle(c)
        | Command::Filter { common: c, .. } => c,
    };
    let threads = common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| run(&cli.command, common))
}
