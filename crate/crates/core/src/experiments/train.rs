//! Online predict–update training on a single pass over a trajectory.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Arith, Tape, Var};
use crate::dynsys::Trajectory;
use crate::error::{Error, Result};
use crate::lyap;
use crate::net::{Network, NetworkParams};
use crate::rng::{self, Stream};

use super::optim::{Optimizer, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    None,
    Lyapunov,
    L1,
    L2,
    Dropout,
}

impl Regularizer {
    pub fn tag(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Lyapunov => "lyapunov",
            Regularizer::L1 => "l1",
            Regularizer::L2 => "l2",
            Regularizer::Dropout => "dropout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "vanilla" => Some(Regularizer::None),
            "lyapunov" | "lyap" => Some(Regularizer::Lyapunov),
            "l1" => Some(Regularizer::L1),
            "l2" => Some(Regularizer::L2),
            "dropout" => Some(Regularizer::Dropout),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    /// Weight of the regularization term (ignored for `none` and `dropout`).
    pub alpha: f64,
    /// Unit drop probability, used only with `dropout`.
    pub dropout_p: f64,
    /// Self-generated steps for the training-time largest exponent.
    pub lyap_horizon: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regularizer: Regularizer::None,
            alpha: 0.0,
            dropout_p: 0.0,
            lyap_horizon: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            layer_sizes: vec![3, 50, 50, 50, 3],
        }
    }
}

impl TrainConfig {
    pub fn with_regularizer(mut self, reg: Regularizer, param: f64) -> Self {
        self.regularizer = reg;
        match reg {
            Regularizer::Dropout => self.dropout_p = param,
            Regularizer::None => {}
            _ => self.alpha = param,
        }
        self
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            out.push(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            out.push(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if self.lyap_horizon == 0 {
            out.push("lyap_horizon must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            out.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            out.push(format!("layer_sizes invalid: {:?}", self.layer_sizes));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(p.join("; ")))
        }
    }

    /// Whether the Lyapunov term contributes to the loss at all.
    fn lyapunov_active(&self) -> bool {
        self.regularizer == Regularizer::Lyapunov && self.alpha != 0.0
    }
}

/// Per-run record. `per_step_mse[k]` is the squared error of predicting
/// state `k + 1` from state `k`, measured before that step's update.
/// `per_step_reg[k]` is `None` where the regularizer was skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub per_step_mse: Vec<f64>,
    pub per_step_reg: Vec<Option<f64>>,
    pub post_shift_mse_sum: f64,
    pub shift_index: usize,
    pub seed: u64,
    pub skipped_reg_steps: usize,
    pub config: TrainConfig,
    #[serde(skip)]
    pub final_params: Option<NetworkParams>,
}

impl ExperimentResult {
    pub fn steps(&self) -> usize {
        self.per_step_mse.len()
    }

    /// `step,mse,reg` rows; skipped regularizer steps are written as `skipped`.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("step,mse,reg\n");
        for (k, (m, r)) in self.per_step_mse.iter().zip(&self.per_step_reg).enumerate() {
            match r {
                Some(r) => s.push_str(&format!("{k},{m:.16e},{r:.16e}\n")),
                None => s.push_str(&format!("{k},{m:.16e},skipped\n")),
            }
        }
        s
    }
}

/// Value and pieces of the per-step training objective.
pub struct StepLoss {
    pub total: Var,
    pub mse: f64,
    /// `None` when the Lyapunov estimate failed and the term was dropped.
    pub reg: Option<f64>,
}

/// Builds the composite loss for one time step on `tape`.
///
/// `dropout_rng` must be provided for the dropout regularizer.
pub fn step_loss<R: rand::Rng>(
    tape: &Tape,
    net: &Network<Var>,
    cfg: &TrainConfig,
    input: &[f64],
    target: &[f64],
    dropout_rng: Option<&mut R>,
) -> Result<StepLoss> {
    let x = tape.leaves(input);
    let pred = match (cfg.regularizer, dropout_rng) {
        (Regularizer::Dropout, Some(rng)) => net.forward_dropout(tape, &x, cfg.dropout_p, rng)?,
        _ => net.forward(tape, &x)?,
    };
    let diff: Vec<Var> = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| tape.add_c(p, -t))
        .collect();
    let data = tape.dot(&diff, &diff);
    let mse = data.value();

    let (total, reg) = match cfg.regularizer {
        Regularizer::Lyapunov if cfg.lyapunov_active() => {
            match lyap::largest_exponent(tape, net, &x, cfg.lyap_horizon, 1) {
                Ok(lambda) => {
                    let term = tape.mul_c(tape.abs(lambda), cfg.alpha);
                    (tape.add(data, term), Some(term.value()))
                }
                Err(
                    Error::RankDeficient { .. }
                    | Error::Collapse { .. }
                    | Error::Divergence { .. }
                    | Error::Domain { .. },
                ) => (data, None),
                Err(e) => return Err(e),
            }
        }
        Regularizer::L1 | Regularizer::L2 if cfg.alpha != 0.0 => {
            let params = net.flat();
            let penalty = if cfg.regularizer == Regularizer::L1 {
                let abs: Vec<Var> = params.iter().map(|&w| tape.abs(w)).collect();
                tape.sum(&abs)
            } else {
                tape.dot(&params, &params)
            };
            let term = tape.mul_c(penalty, cfg.alpha);
            (tape.add(data, term), Some(term.value()))
        }
        _ => (data, Some(0.0)),
    };
    Ok(StepLoss { total, mse, reg })
}

/// Single pass, one optimizer step per time point.
pub fn train_online(cfg: &TrainConfig, traj: &Trajectory) -> Result<ExperimentResult> {
    let init = NetworkParams::init(&cfg.layer_sizes, cfg.seed)?;
    train_online_from(cfg, traj, init)
}

/// [`train_online`] from explicit initial parameters.
pub fn train_online_from(
    cfg: &TrainConfig,
    traj: &Trajectory,
    init: NetworkParams,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if traj.len() < 2 {
        return Err(Error::InvalidConfig("trajectory needs at least 2 states".into()));
    }
    let d = traj.dim();
    if init.input_dim() != d || init.output_dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: init.input_dim(),
        });
    }

    let mut flat = init.flat();
    let shape = init;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, flat.len());
    let mut dropout_rng = rng::stream(cfg.seed, Stream::Dropout);
    let steps = traj.len() - 1;
    let mut per_step_mse = Vec::with_capacity(steps);
    let mut per_step_reg = Vec::with_capacity(steps);
    let mut skipped = 0;
    let tape = Tape::new();

    for k in 0..steps {
        tape.clear();
        let leaves = tape.leaves(&flat);
        let net = shape.with_flat(&leaves)?;
        let loss = step_loss(
            &tape,
            &net,
            cfg,
            &traj.states[k],
            &traj.states[k + 1],
            Some(&mut dropout_rng),
        )?;
        if !loss.total.value().is_finite() {
            return Err(Error::NonFinite { step: k });
        }
        let grads = tape
            .backward(loss.total)
            .map_err(|_| Error::NonFinite { step: k })?
            .wrt_all(&leaves);
        opt.step(&mut flat, &grads);
        if loss.reg.is_none() {
            skipped += 1;
        }
        per_step_mse.push(loss.mse);
        per_step_reg.push(loss.reg);
    }

    let shift_index = traj.shift_index.unwrap_or(0);
    let post_shift_mse_sum = per_step_mse.iter().skip(shift_index).sum();
    Ok(ExperimentResult {
        per_step_mse,
        per_step_reg,
        post_shift_mse_sum,
        shift_index,
        seed: cfg.seed,
        skipped_reg_steps: skipped,
        config: cfg.clone(),
        final_params: Some(shape.with_flat(&flat)?),
    })
}
