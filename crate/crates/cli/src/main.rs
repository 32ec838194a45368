//! `hfm`: generate data, train, and post-process from one config file.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hfm_core::datagen::{export_dataset, sample_points, solve_transport, uniform_collocation, DatasetMetadata};
use hfm_core::dataset::{export_collocation, import_collocation, import_dataset};
use hfm_core::network::checkpoint::Checkpoint;
use hfm_core::postproc::{
    evaluate_like, evaluate_on_grid, force_series, read_fields_csv, relative_l2, write_fields_csv, wss_field,
    FieldProvider,
};
use hfm_core::training::{
    train, CheckpointReason, EpochLog, Observer, TrainState, LOG_HEADER,
};
use hfm_core::{HfmError, Result};

use config::{RunConfig, Source};

#[derive(Parser)]
#[command(name = "hfm", version, about = "Infer hidden velocity and pressure from passive scalar data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve scalar transport and sample a dataset.
    Generate,
    /// Train a network on a dataset.
    Train {
        /// Start from the weights of this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Export all fields on a regular grid.
    Predict,
    /// Relative L2 errors against a reference field file.
    Evaluate,
    /// Lift and drag on a closed surface.
    Forces,
    /// Wall shear stress along a wall.
    Wss,
}

fn exit_code(e: &HfmError) -> u8 {
    match e {
        HfmError::Io { .. } => 4,
        HfmError::Diverged { .. } | HfmError::SolverBlowup { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| HfmError::InvalidInput(format!("cannot size thread pool: {e}")))?;
    }
    let path = cli
        .config
        .ok_or_else(|| HfmError::InvalidInput("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::Train { resume } => train_cmd(&cfg, resume.as_deref()),
        Command::Predict => predict(&cfg),
        Command::Evaluate => evaluate(&cfg),
        Command::Forces => forces(&cfg),
        Command::Wss => wss(&cfg),
    }
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let flow = cfg.analytic_flow()?;
    let solver = cfg.solver_config()?;
    let sampling = cfg
        .sampling
        .as_ref()
        .ok_or_else(|| HfmError::InvalidInput("configuration lacks a [sampling] section".into()))?;
    let out = cfg.output(&cfg.paths.dataset, "dataset")?;
    let snaps = solve_transport(&flow, &solver)?;
    let ds = sample_points(&snaps, sampling.count, cfg.seed, sampling.noise)?;
    export_dataset(&ds, &out)?;
    DatasetMetadata {
        flow: flow.kind.name().to_string(),
        reynolds: flow.re,
        peclet: cfg.flow()?.peclet,
        grid: solver.n,
        dt: solver.dt,
        t_final: solver.t_final,
        snapshot_interval: solver.snapshot_interval,
        noise_sigma: sampling.noise,
        seed: cfg.seed,
        count: sampling.count,
    }
    .write(&out)?;
    if sampling.collocation > 0 {
        let (lo, hi) = ds.bounding_box();
        let pts = uniform_collocation(&lo, &hi, sampling.collocation, cfg.seed.wrapping_add(1))?;
        export_collocation(ds.dim, &pts, &cfg.output(&cfg.paths.collocation, "collocation")?)?;
    }
    eprintln!("wrote {} records to {}", ds.len(), out.display());
    Ok(())
}

/// Streams the log and writes checkpoints at stage ends.
struct RunObserver {
    log: BufWriter<File>,
    log_path: PathBuf,
    checkpoint: PathBuf,
}

impl Observer for RunObserver {
    fn epoch(&mut self, log: &EpochLog) -> Result<()> {
        let l = &log.loss;
        eprintln!(
            "epoch {:5} stage {} total {:.4e} c {:.3e} d {:.3e} e {:.3e} {:.3e} {:.3e} {:.3e} {:.3e} {:.3e} Re {:.4} Pec {:.4}",
            log.epoch, log.stage, l.total, l.data_c, l.data_d, l.e[0], l.e[1], l.e[2], l.e[3], l.e[4], l.e[5], log.re, log.pec
        );
        let io = |e| HfmError::Io {
            path: self.log_path.clone(),
            source: e,
        };
        writeln!(self.log, "{}", log.csv_row()).map_err(io)?;
        self.log.flush().map_err(io)
    }

    fn checkpoint(&mut self, state: &TrainState, reason: CheckpointReason) -> Result<()> {
        if let CheckpointReason::StageEnd(_) = reason {
            save(state, &self.checkpoint)?;
        }
        Ok(())
    }
}

fn save(state: &TrainState, path: &Path) -> Result<()> {
    Checkpoint {
        mlp: state.mlp.clone(),
        flow: state.flow,
    }
    .write(path)
}

fn train_cmd(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let mut ds = import_dataset(&cfg.input(&cfg.paths.dataset, "dataset")?)?;
    if cfg.paths.collocation.is_some() {
        let (dim, pts) = import_collocation(&cfg.input(&cfg.paths.collocation, "collocation")?)?;
        if dim != ds.dim {
            return Err(HfmError::Dimension {
                expected: ds.dim.n(),
                actual: dim.n(),
            });
        }
        ds = ds.with_collocation(pts)?;
    }
    let tc = cfg.train_config()?;
    let arch = cfg.architecture(ds.dim)?;
    let initial = match resume {
        Some(p) => {
            let ck = Checkpoint::read(p)?;
            if ck.mlp.arch != arch {
                return Err(HfmError::InvalidInput(format!(
                    "checkpoint {} holds a {}x{} network, configuration asks for {}x{}",
                    p.display(),
                    ck.mlp.arch.hidden_layers,
                    ck.mlp.arch.hidden_width,
                    arch.hidden_layers,
                    arch.hidden_width
                )));
            }
            let flow = if ck.flow.trainable_count() == tc.flow.trainable_count() {
                ck.flow
            } else {
                tc.flow
            };
            TrainState::new(ck.mlp, flow)
        }
        None => TrainState::initial(arch, &ds, tc.flow, tc.seed)?,
    };
    let checkpoint = cfg.output(&cfg.paths.checkpoint, "checkpoint")?;
    let log_path = cfg.output(&cfg.paths.log, "log")?;
    let file = File::create(&log_path).map_err(|source| HfmError::Io {
        path: log_path.clone(),
        source,
    })?;
    let mut obs = RunObserver {
        log: BufWriter::new(file),
        log_path: log_path.clone(),
        checkpoint: checkpoint.clone(),
    };
    writeln!(obs.log, "{LOG_HEADER}").map_err(|source| HfmError::Io {
        path: log_path.clone(),
        source,
    })?;
    let state = train(&tc, arch, &ds, Some(initial), &mut obs)?;
    obs.log.flush().map_err(|source| HfmError::Io { path: log_path, source })?;
    save(&state, &checkpoint)?;
    eprintln!(
        "finished {} epochs; Re {:.6} Pec {:.6}; checkpoint {}",
        state.epoch,
        state.flow.re.value(),
        state.flow.pec.value(),
        checkpoint.display()
    );
    Ok(())
}

/// The configured field source and the Reynolds number that goes with it.
fn provider(cfg: &RunConfig) -> Result<(Box<dyn FieldProvider>, f64)> {
    match cfg.post()?.source {
        Source::Checkpoint => {
            let ck = Checkpoint::read(&cfg.input(&cfg.paths.checkpoint, "checkpoint")?)?;
            let re = ck.flow.re.value();
            Ok((Box::new(ck.mlp), re))
        }
        Source::Analytic => {
            let f = cfg.analytic_flow()?;
            Ok((Box::new(f), f.re))
        }
    }
}

fn predict(cfg: &RunConfig) -> Result<()> {
    let (field, _) = provider(cfg)?;
    let grid = cfg
        .post()?
        .grid
        .as_ref()
        .ok_or_else(|| HfmError::InvalidInput("configuration lacks post.grid".into()))?;
    let ev = evaluate_on_grid(field.as_ref(), grid, cfg.times()?)?;
    if ev.extrapolated {
        eprintln!("warning: grid extends beyond the training region; values there are extrapolated");
    }
    let out = cfg.output(&cfg.paths.output, "output")?;
    write_fields_csv(&out, &ev.snapshots)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let reference = read_fields_csv(&cfg.input(&cfg.paths.reference, "reference")?)?;
    let pred = match cfg.paths.prediction {
        Some(_) => read_fields_csv(&cfg.input(&cfg.paths.prediction, "prediction")?)?,
        None => evaluate_like(provider(cfg)?.0.as_ref(), &reference)?,
    };
    let align = cfg.post.as_ref().is_none_or(|p| p.align_pressure);
    let report = relative_l2(&pred, &reference, align)?;
    let out = cfg.output(&cfg.paths.output, "output")?;
    report.write_csv(&out)?;
    for e in &report.entries {
        match e.rel_l2 {
            Some(r) => eprintln!("t = {:<8} {}: {:.4e}", e.time, e.field.name(), r),
            None => eprintln!("t = {:<8} {}: undefined (zero reference)", e.time, e.field.name()),
        }
    }
    Ok(())
}

fn forces(cfg: &RunConfig) -> Result<()> {
    let (field, re) = provider(cfg)?;
    let series = force_series(field.as_ref(), &cfg.surface()?, re, cfg.times()?)?;
    let out = cfg.output(&cfg.paths.output, "output")?;
    series.write_csv(&out)?;
    for k in 0..series.times.len() {
        eprintln!("t = {:<8} FL {:.6e} FD {:.6e}", series.times[k], series.lift[k], series.drag[k]);
    }
    Ok(())
}

fn wss(cfg: &RunConfig) -> Result<()> {
    let (field, re) = provider(cfg)?;
    let w = wss_field(field.as_ref(), &cfg.surface()?, re, cfg.times()?)?;
    let out = cfg.output(&cfg.paths.output, "output")?;
    w.write_csv(&out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
