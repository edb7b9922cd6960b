use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use terramap::commands::{self, SnapshotRef};
use terramap::io::RunConfig;
use terramap::Result;

#[derive(Parser, Debug)]
#[command(name = "terramap", version, about = "Probabilistic height-grid terrain mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// `key = value` configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long)]
    baseline: Option<usize>,
    #[arg(long = "snapshot-every")]
    snapshot_every: Option<u64>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.baseline {
            cfg.baseline = Some(v);
        }
        if let Some(v) = self.snapshot_every {
            cfg.snapshot_every = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a map from a dataset, writing snapshots, the final map and run metrics.
    Map(Common),
    /// Volume timeseries and change grids from map snapshots.
    Volume {
        #[command(flatten)]
        common: Common,
        /// Snapshot files; defaults to every snapshot of the map output given by --dataset.
        snapshots: Vec<PathBuf>,
    },
    /// Render a scenario file into a dataset with its truth log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scenario file.
        scenario: PathBuf,
    },
    /// Time the pipeline on a dataset.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Minimum number of scans to time.
        #[arg(long, default_value_t = 100)]
        min_scans: u64,
    },
}

fn warn(ws: &[String]) {
    for w in ws {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Map(common) => {
            let s = commands::cmd_map(&common.run_config()?)?;
            warn(&s.warnings);
            println!(
                "read {} scans, processed {}, {} cells, {} snapshots, {:.2} scans/s",
                s.scans_read,
                s.scans_processed,
                s.cells,
                s.snapshots.len(),
                s.scans_per_sec()
            );
        }
        Command::Volume { common, snapshots } => {
            let cfg = common.run_config()?;
            let refs: Vec<SnapshotRef> = if snapshots.is_empty() {
                let dir = cfg.dataset.clone().ok_or_else(|| {
                    terramap::Error::InvalidConfig("give snapshot files or a map output directory via --dataset".into())
                })?;
                commands::snapshots_in(&dir)?
            } else {
                commands::snapshot_refs_from_paths(&snapshots)?
            };
            let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let s = commands::cmd_volume(&cfg, &refs, &out)?;
            warn(&s.warnings);
            if let Some(last) = s.reports.last() {
                println!(
                    "{} entries from baseline {}; latest net change {:.3} m3; {} change grids",
                    s.reports.len(),
                    s.baseline,
                    last.net_change,
                    s.change_grids
                );
            }
        }
        Command::Simulate { common, scenario } => {
            let cfg = common.run_config()?;
            let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
            let s = commands::cmd_simulate(&scenario, common.seed, &out, cfg.grid.delta)?;
            println!(
                "wrote {} scans ({} points, {} dust) and {} events to {}",
                s.scans,
                s.points,
                s.dust_points,
                s.events,
                out.display()
            );
        }
        Command::Bench { common, min_scans } => {
            let r = commands::cmd_bench(&common.run_config()?, min_scans)?;
            warn(&r.warnings);
            print!("{}", r.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
