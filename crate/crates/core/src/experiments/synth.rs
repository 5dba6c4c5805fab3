//! Training a small network whose loss depends only on its own Lyapunov
//! spectrum, until the free-running map is a chaotic attractor with a
//! prescribed largest exponent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Arith, Plain, Tape, Var};
use crate::dynsys::Trajectory;
use crate::error::{Error, Result};
use crate::lyap::{self, is_chaotic_attractor, QrAccumulator, Spectrum, SpectrumEstimate};
use crate::net::{Network, NetworkParams};
use crate::rng::{self, Stream};

use super::optim::{Optimizer, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Weight `c` of the dissipativity hinge `c · max(0, Σλ + m)²`.
    pub hinge_weight: f64,
    /// Multiplier applied to the freshly initialized weights.
    pub init_gain: f64,
    /// Margin `m` of the hinge.
    pub margin: f64,
    /// Steps per training-time spectrum estimate.
    pub train_horizon: usize,
    /// Free-running steps between consecutive estimates.
    pub advance: usize,
    /// Hold visited states fixed and differentiate only through the Jacobians.
    pub detach_states: bool,
    pub max_steps: usize,
    pub max_restarts: usize,
    pub eval_every: usize,
    pub eval_horizon: usize,
    pub transient: usize,
    pub tolerance: f64,
    pub bound: f64,
    /// Length of the final bounded-trajectory check and reported spectrum.
    pub check_steps: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            layer_sizes: vec![3, 10, 3],
            seed: 0,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            hinge_weight: 10.0,
            init_gain: 3.0,
            margin: 0.1,
            train_horizon: 50,
            advance: 50,
            detach_states: true,
            max_steps: 50_000,
            max_restarts: 5,
            eval_every: 250,
            eval_horizon: 20_000,
            transient: 1000,
            tolerance: 0.05,
            bound: 10.0,
            check_steps: 100_000,
        }
    }
}

impl SynthConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let sz = &self.layer_sizes;
        if sz.len() < 2 || sz.contains(&0) || sz.first() != sz.last() {
            out.push(format!("layer_sizes must describe a square map, got {sz:?}"));
        }
        if !(self.learning_rate > 0.0) {
            out.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.hinge_weight >= 0.0) || !(self.margin >= 0.0) {
            out.push("hinge_weight and margin must be >= 0".into());
        }
        for (name, v) in [
            ("train_horizon", self.train_horizon),
            ("eval_every", self.eval_every),
            ("eval_horizon", self.eval_horizon),
            ("check_steps", self.check_steps),
        ] {
            if v == 0 {
                out.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.init_gain > 0.0) || !self.init_gain.is_finite() {
            out.push(format!("init_gain must be > 0, got {}", self.init_gain));
        }
        if !(self.tolerance > 0.0) || !(self.bound > 0.0) {
            out.push("tolerance and bound must be > 0".into());
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutcome {
    pub params: NetworkParams,
    /// Post-transient free-running orbit of `check_steps` states.
    pub trajectory: Trajectory,
    pub spectrum: SpectrumEstimate,
    pub seed_used: u64,
    pub restarts: usize,
    pub steps: usize,
}

/// `(λ_1 - target)² + c · max(0, Σλ + m)²`.
pub fn synthesis_loss<A: Arith>(
    ar: &A,
    s: &Spectrum<A::S>,
    target: f64,
    hinge_weight: f64,
    margin: f64,
) -> A::S {
    let gap = ar.add_c(s.exponents[0], -target);
    let excess = ar.max(ar.add_c(s.sum, margin), ar.constant(0.0));
    ar.add(ar.square(gap), ar.mul_c(ar.square(excess), hinge_weight))
}

fn training_spectrum(
    tape: &Tape,
    net: &Network<Var>,
    detached: &NetworkParams,
    x: &[f64],
    cfg: &SynthConfig,
) -> Result<Spectrum<Var>> {
    if !cfg.detach_states {
        let xs = tape.leaves(x);
        return lyap::spectrum_of_network(tape, net, &xs, cfg.train_horizon, 0);
    }
    let mut acc = QrAccumulator::new(tape, x.len());
    let mut state = x.to_vec();
    for t in 0..cfg.train_horizon {
        let xs = tape.leaves(&state);
        let j = net.input_jacobian(tape, &xs)?;
        acc.push(tape, &j)?;
        if t + 1 < cfg.train_horizon {
            state = detached.forward(&Plain, &state)?;
        }
    }
    acc.finish(tape)
}

fn max_abs_coordinate(states: &[Vec<f64>]) -> f64 {
    states
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// Final acceptance of a candidate network: long orbit bounded, long-horizon
/// spectrum chaotic and within tolerance of the target.
fn verify(
    params: &NetworkParams,
    x: &[f64],
    target: f64,
    cfg: &SynthConfig,
) -> Result<Option<(Trajectory, SpectrumEstimate)>> {
    let start = lyap::run_transient(&Plain, params, x, cfg.transient)?;
    let mut states = Vec::with_capacity(cfg.check_steps);
    let mut s = start.clone();
    for _ in 0..cfg.check_steps {
        states.push(s.clone());
        s = params.forward(&Plain, &s)?;
    }
    if max_abs_coordinate(&states) >= cfg.bound || states.iter().flatten().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let spec = lyap::spectrum_of_network(&Plain, params, &start, cfg.check_steps, 0)?;
    let report = is_chaotic_attractor(&spec);
    if !report.chaotic || (report.largest - target).abs() >= cfg.tolerance {
        return Ok(None);
    }
    let traj = Trajectory {
        states,
        dt: 1.0,
        shift_index: None,
        scale: 1.0,
        meta: None,
    };
    Ok(Some((traj, spec)))
}

/// Trains until the network is a chaotic attractor with `λ_1 ≈ target`.
///
/// Each restart reinitializes from seed `cfg.seed + restart`. Diverging or
/// numerically failing runs restart early; exhausting every restart yields
/// [`Error::NonConvergence`] carrying the last evaluated spectrum.
pub fn synthesize_attractor(target: f64, cfg: &SynthConfig) -> Result<SynthOutcome> {
    if !(target > 0.0) {
        return Err(Error::InvalidConfig(format!("target must be > 0, got {target}")));
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems.join("; ")));
    }
    let mut last: Option<SpectrumEstimate> = None;
    for restart in 0..=cfg.max_restarts {
        let seed = cfg.seed + restart as u64;
        match attempt(target, cfg, seed, &mut last)? {
            Some((params, trajectory, spectrum, steps)) => {
                return Ok(SynthOutcome {
                    params,
                    trajectory,
                    spectrum,
                    seed_used: seed,
                    restarts: restart,
                    steps,
                })
            }
            None => continue,
        }
    }
    let (lambda_max, sum, exponents) = match last {
        Some(s) => (s.exponents[0], s.sum, s.exponents),
        None => (f64::NAN, f64::NAN, vec![]),
    };
    Err(Error::NonConvergence {
        lambda_max,
        sum,
        exponents,
    })
}

type Attempt = Option<(NetworkParams, Trajectory, SpectrumEstimate, usize)>;

fn attempt(
    target: f64,
    cfg: &SynthConfig,
    seed: u64,
    last: &mut Option<SpectrumEstimate>,
) -> Result<Attempt> {
    let mut params = NetworkParams::init(&cfg.layer_sizes, seed)?;
    let mut flat: Vec<f64> = params.flat().iter().map(|w| w * cfg.init_gain).collect();
    params = params.with_flat(&flat)?;
    let mut rng = rng::stream(seed, Stream::Synthesis);
    let d = params.input_dim();
    let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, flat.len());
    let tape = Tape::new();

    for step in 0..cfg.max_steps {
        x = match lyap::run_transient(&Plain, &params, &x, cfg.advance) {
            Ok(nx) => nx,
            Err(_) => return Ok(None),
        };
        if step % cfg.eval_every == 0 {
            if let Ok(spec) =
                lyap::spectrum_of_network(&Plain, &params, &x, cfg.eval_horizon, cfg.transient)
            {
                let report = is_chaotic_attractor(&spec);
                let close = (report.largest - target).abs() < cfg.tolerance;
                *last = Some(spec);
                if report.chaotic && close {
                    if let Some((traj, spec)) = verify(&params, &x, target, cfg)? {
                        return Ok(Some((params, traj, spec, step)));
                    }
                }
            }
        }

        tape.clear();
        let leaves = tape.leaves(&flat);
        let net = params.with_flat(&leaves)?;
        let spec = match training_spectrum(&tape, &net, &params, &x, cfg) {
            Ok(s) => s,
            Err(e) if e.is_numerical() => {
                // nudge off the degenerate point and keep going
                x = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                continue;
            }
            Err(e) => return Err(e),
        };
        let loss = synthesis_loss(&tape, &spec, target, cfg.hinge_weight, cfg.margin);
        let grads = match tape.backward(loss) {
            Ok(g) => g.wrt_all(&leaves),
            Err(_) => return Ok(None),
        };
        opt.step(&mut flat, &grads);
        params = params.with_flat(&flat)?;
        if !params.is_finite() {
            return Ok(None);
        }
    }
    Ok(None)
}
