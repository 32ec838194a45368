//! Composite loss, Adam and the staged training loop.

mod loss;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::dataset::SampledDataset;
use crate::error::{HfmError, Result};
use crate::network::{initialize, InputNormalization, Mlp, MlpArchitecture};
use crate::physics::{FlowParam, FlowParams};
pub use loss::{reference_loss, Batch, LossBreakdown, LossEvaluator, LossGradient, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Where the equation residuals are penalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualPolicy {
    /// At the observation points of each batch.
    #[default]
    SameAsData,
    /// At the dataset's collocation points, split evenly across the batches
    /// of an epoch.
    Separate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage_epochs: Vec<usize>,
    pub stage_rates: Vec<f64>,
    pub batch_size: usize,
    /// Seeds both the initial weights and the per-epoch shuffles.
    pub seed: u64,
    pub adam: AdamConfig,
    pub residual_points: ResidualPolicy,
    pub flow: FlowParams,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage_epochs: vec![250, 500, 250],
            stage_rates: vec![1e-3, 1e-4, 1e-5],
            batch_size: 10_000,
            seed: 0,
            adam: AdamConfig::default(),
            residual_points: ResidualPolicy::SameAsData,
            flow: FlowParams::fixed(100.0, 100.0).expect("positive"),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_epochs.len() != self.stage_rates.len() {
            return Err(HfmError::InvalidInput(format!(
                "{} stage epoch counts but {} learning rates",
                self.stage_epochs.len(),
                self.stage_rates.len()
            )));
        }
        if let Some(lr) = self.stage_rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(HfmError::InvalidInput(format!("learning rates must be positive, got {lr}")));
        }
        if self.batch_size == 0 {
            return Err(HfmError::InvalidInput("batch size must be at least 1".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(HfmError::InvalidInput("Adam needs β1, β2 in [0, 1) and ε > 0".into()));
        }
        self.weights.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.stage_epochs.iter().sum()
    }

    /// `(stage, lr)` of a zero-based global epoch, stages counted from 1.
    fn stage_of(&self, epoch: usize) -> (usize, f64) {
        let mut end = 0;
        for (s, (&n, &lr)) in self.stage_epochs.iter().zip(&self.stage_rates).enumerate() {
            end += n;
            if epoch < end {
                return (s + 1, lr);
            }
        }
        unreachable!("epoch beyond schedule")
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Global epoch, counted from 1.
    pub epoch: usize,
    pub stage: usize,
    pub lr: f64,
    /// Means over the epoch's batches.
    pub loss: LossBreakdown,
    pub re: f64,
    pub pec: f64,
}

pub const LOG_HEADER: &str = "epoch,stage,lr,total,data_c,data_d,e1,e2,e3,e4,e5,e6,Re,Pec";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        let mut cols = vec![self.epoch.to_string(), self.stage.to_string()];
        let vals = [self.lr, l.total, l.data_c, l.data_d]
            .into_iter()
            .chain(l.e)
            .chain([self.re, self.pec]);
        cols.extend(vals.map(crate::dataset::fmt17));
        cols.join(",")
    }
}

pub fn write_log(path: &std::path::Path, log: &[EpochLog]) -> Result<()> {
    let io = |e| HfmError::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "{LOG_HEADER}").map_err(io)?;
    for row in log {
        writeln!(f, "{}", row.csv_row()).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Parameters, optimiser moments and history of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub mlp: Mlp,
    pub flow: FlowParams,
    /// Adam moments over the parameters followed by trainable exponents.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(mlp: Mlp, flow: FlowParams) -> Self {
        let n = mlp.params.len() + flow.trainable_count();
        Self {
            mlp,
            flow,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            epoch: 0,
            history: Vec::new(),
        }
    }

    /// Fresh state: seeded initial weights, inputs normalised to the
    /// dataset's bounding box.
    pub fn initial(arch: MlpArchitecture, dataset: &SampledDataset, flow: FlowParams, seed: u64) -> Result<Self> {
        if arch.dim != dataset.dim {
            return Err(HfmError::Dimension {
                expected: arch.dim.n(),
                actual: dataset.dim.n(),
            });
        }
        let (lo, hi) = dataset.bounding_box();
        let norm = InputNormalization::from_bounds(&lo, &hi)?;
        let mlp = Mlp::new(arch, initialize(&arch, seed)?, norm)?;
        Ok(Self::new(mlp, flow))
    }

    fn parameter_count(&self) -> usize {
        self.mlp.params.len() + self.flow.trainable_count()
    }
}

/// One Adam update with bias correction. The gradient covers the network
/// parameters followed by the trainable flow exponents.
pub fn adam_step(state: &mut TrainState, gradient: &[f64], lr: f64, cfg: &AdamConfig) -> Result<()> {
    let n = state.parameter_count();
    if gradient.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(HfmError::ContractViolation(format!(
            "gradient of length {} for {n} parameters",
            gradient.len()
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(HfmError::Diverged {
            epoch: state.epoch + 1,
            step: state.step + 1,
            point: i,
            what: "non-finite gradient component".into(),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
    };
    let np = state.mlp.params.len();
    let (gp, gf) = gradient.split_at(np);
    let (mp, mf) = state.m.split_at_mut(np);
    let (vp, vf) = state.v.split_at_mut(np);
    for (((p, &g), m), v) in state.mlp.params.as_mut_slice().iter_mut().zip(gp).zip(mp).zip(vp) {
        update(p, g, m, v);
    }
    let mut k = 0;
    for param in [&mut state.flow.re, &mut state.flow.pec] {
        if let FlowParam::Trainable { log_value } = param {
            update(log_value, gf[k], &mut mf[k], &mut vf[k]);
            k += 1;
        }
    }
    Ok(())
}

/// Why a checkpoint is offered to the observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointReason {
    /// End of stage `n` (from 1).
    StageEnd(usize),
    Completed,
}

/// Receives progress from [`train`]. Errors abort training.
pub trait Observer {
    fn epoch(&mut self, _log: &EpochLog) -> Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _state: &TrainState, _reason: CheckpointReason) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Seeded permutation of `0..n` for one shuffle stream.
fn epoch_order(seed: u64, stream: u64, n: usize, order: &mut Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    order.clear();
    order.extend(0..n);
    order.shuffle(&mut rng);
}

/// Runs the remaining epochs of the schedule, starting from `initial` (or
/// a fresh state) and returning the final state with its history.
pub fn train(
    cfg: &TrainConfig,
    arch: MlpArchitecture,
    dataset: &SampledDataset,
    initial: Option<TrainState>,
    observer: &mut dyn Observer,
) -> Result<TrainState> {
    cfg.validate()?;
    let mut state = match initial {
        Some(s) => {
            if s.mlp.arch != arch {
                return Err(HfmError::InvalidInput(
                    "initial state architecture does not match the requested one".into(),
                ));
            }
            s
        }
        None => TrainState::initial(arch, dataset, cfg.flow, cfg.seed)?,
    };
    if state.mlp.arch.dim != dataset.dim {
        return Err(HfmError::Dimension {
            expected: state.mlp.arch.dim.n(),
            actual: dataset.dim.n(),
        });
    }
    let collocation = match cfg.residual_points {
        ResidualPolicy::SameAsData => None,
        ResidualPolicy::Separate => Some(dataset.collocation().ok_or_else(|| {
            HfmError::InvalidInput("separate residual points requested but the dataset has no collocation set".into())
        })?),
    };
    let stride = dataset.stride();
    let n = dataset.len();
    let batch = cfg.batch_size.min(n);
    let batches = n.div_ceil(batch);
    let n_colloc = dataset.collocation_len();

    let mut evaluator = LossEvaluator::new(cfg.weights);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut colloc_order: Vec<usize> = Vec::with_capacity(n_colloc);
    let mut pts = Vec::new();
    let mut cs = Vec::new();
    let mut rpts = Vec::new();

    for epoch in state.epoch..cfg.total_epochs() {
        let (stage, lr) = cfg.stage_of(epoch);
        epoch_order(cfg.seed, 2 * epoch as u64, n, &mut order);
        if collocation.is_some() {
            epoch_order(cfg.seed, 2 * epoch as u64 + 1, n_colloc, &mut colloc_order);
        }

        let mut sum = LossBreakdown::default();
        for k in 0..batches {
            let ids = &order[k * batch..((k + 1) * batch).min(n)];
            pts.clear();
            cs.clear();
            for &i in ids {
                pts.extend_from_slice(dataset.point(i));
                cs.push(dataset.c()[i]);
            }
            let rids = collocation.map(|cp| {
                let lo = k * n_colloc / batches;
                let hi = (k + 1) * n_colloc / batches;
                rpts.clear();
                for &i in &colloc_order[lo..hi] {
                    rpts.extend_from_slice(&cp[i * stride..(i + 1) * stride]);
                }
                &colloc_order[lo..hi]
            });
            let b = Batch {
                points: &pts,
                c: &cs,
                ids,
                residual_points: rids.filter(|r| !r.is_empty()).map(|_| rpts.as_slice()),
                residual_ids: rids,
            };
            let lg = evaluator
                .run(&state.mlp, &state.flow, &b, true)
                .map_err(|f| f.into_error(epoch + 1, state.step + 1))?;
            adam_step(&mut state, &lg.gradient, lr, &cfg.adam).map_err(|e| match e {
                HfmError::Diverged { what, point, .. } => HfmError::Diverged {
                    epoch: epoch + 1,
                    step: state.step + 1,
                    point,
                    what,
                },
                e => e,
            })?;
            sum.add_scaled(&lg.loss, 1.0 / batches as f64);
        }
        state.epoch = epoch + 1;
        let log = EpochLog {
            epoch: epoch + 1,
            stage,
            lr,
            loss: sum,
            re: state.flow.re.value(),
            pec: state.flow.pec.value(),
        };
        state.history.push(log);
        observer.epoch(&log)?;
        let stage_end = cfg.stage_epochs[..stage].iter().sum::<usize>() == epoch + 1;
        if epoch + 1 == cfg.total_epochs() {
            observer.checkpoint(&state, CheckpointReason::Completed)?;
        } else if stage_end {
            observer.checkpoint(&state, CheckpointReason::StageEnd(stage))?;
        }
    }
    Ok(state)
}

/// Learned flow numbers of a run with trainable Re and/or Pec, with their
/// per-epoch trajectory `(epoch, Re, Pec)`.
pub fn infer_flow_parameters(
    cfg: &TrainConfig,
    arch: MlpArchitecture,
    dataset: &SampledDataset,
    observer: &mut dyn Observer,
) -> Result<(FlowParams, Vec<(usize, f64, f64)>, TrainState)> {
    if cfg.flow.trainable_count() == 0 {
        return Err(HfmError::InvalidInput("no flow parameter is marked trainable".into()));
    }
    let state = train(cfg, arch, dataset, None, observer)?;
    let history = state.history.iter().map(|l| (l.epoch, l.re, l.pec)).collect();
    Ok((state.flow, history, state))
}
