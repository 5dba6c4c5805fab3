use std::fmt::Write as _;
use std::path::PathBuf;

use lyapunov_learning::dynsys::{
    generate_regime_shift, oracle_map, LorenzParams, OracleMap, RegimeShiftSpec, Trajectory,
};
use lyapunov_learning::experiments::{
    rows_csv, run_grid, synthesize_attractor, train_online, BenchRow, OptimizerKind, Regularizer,
    SynthConfig, TrainConfig, Variant, DEFAULT_ALPHA_GRID,
};
use lyapunov_learning::lyap::{spectrum_of_map, spectrum_of_network, SpectrumReport};
use lyapunov_learning::{ExecMode, NetworkParams, Plain};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Files produced by a command, written only after the whole computation
/// succeeded.
pub struct Output {
    pub files: Vec<(String, String)>,
    pub summary: String,
}

pub trait Settings {
    fn out(&self) -> &PathBuf;
    fn threads(&self) -> usize;
    /// Range and consistency problems, one entry per offending key.
    fn problems(&self) -> Vec<String>;
}

macro_rules! settings {
    ($($t:ty => $check:ident),*) => {$(
        impl Settings for $t {
            fn out(&self) -> &PathBuf { &self.out }
            fn threads(&self) -> usize { self.threads }
            fn problems(&self) -> Vec<String> { $check(self) }
        }
    )*};
}
settings!(
    GenSettings => gen_problems,
    TrainSettings => train_problems,
    BenchSettings => bench_problems,
    SweepSettings => sweep_problems,
    SynthSettings => synth_problems,
    LyapSettings => lyap_problems
);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSettings {
    pub sigma_a: f64,
    pub rho_a: f64,
    pub beta_a: f64,
    pub sigma_b: f64,
    pub rho_b: f64,
    pub beta_b: f64,
    pub n: usize,
    pub dt: f64,
    pub transient: usize,
    pub scale: f64,
    pub x0: Vec<f64>,
}

impl Default for DataSettings {
    fn default() -> Self {
        let spec = RegimeShiftSpec::default();
        DataSettings {
            sigma_a: spec.params_a.sigma,
            rho_a: spec.params_a.rho,
            beta_a: spec.params_a.beta,
            sigma_b: spec.params_b.sigma,
            rho_b: spec.params_b.rho,
            beta_b: spec.params_b.beta,
            n: spec.n_per_regime,
            dt: spec.dt,
            transient: spec.transient,
            scale: spec.scale,
            x0: spec.x0.to_vec(),
        }
    }
}

impl DataSettings {
    fn problems(&self, out: &mut Vec<String>) {
        if self.n == 0 {
            out.push("n: must be >= 1".into());
        }
        if !(self.dt > 0.0) {
            out.push(format!("dt: must be > 0, got {}", self.dt));
        }
        if !(self.scale > 0.0) {
            out.push(format!("scale: must be > 0, got {}", self.scale));
        }
        if self.x0.len() != 3 {
            out.push(format!("x0: expected 3 values, got {}", self.x0.len()));
        }
    }

    fn spec(&self, seed: u64) -> RegimeShiftSpec {
        let mut x0 = [0.0; 3];
        x0.copy_from_slice(&self.x0);
        RegimeShiftSpec {
            params_a: LorenzParams::new(self.sigma_a, self.rho_a, self.beta_a),
            params_b: LorenzParams::new(self.sigma_b, self.rho_b, self.beta_b),
            n_per_regime: self.n,
            dt: self.dt,
            x0,
            transient: self.transient,
            scale: self.scale,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSettings {
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub lyap_horizon: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        ModelSettings {
            layer_sizes: t.layer_sizes,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            lyap_horizon: t.lyap_horizon,
        }
    }
}

impl ModelSettings {
    fn base(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            layer_sizes: self.layer_sizes.clone(),
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            lyap_horizon: self.lyap_horizon,
            seed,
            ..Default::default()
        }
    }
}

fn config_problems(problems: Vec<String>) -> Result<(), CliError> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(problems))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    #[serde(flatten)]
    pub data: DataSettings,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            out: "runs/gen".into(),
            seed: 0,
            threads: 0,
            data: DataSettings::default(),
        }
    }
}

fn trajectory_files(traj: &Trajectory, stem: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let sidecar = serde_json::to_string_pretty(&traj.sidecar()).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(vec![
        (format!("{stem}.csv"), String::from_utf8(csv).expect("ascii csv")),
        (format!("{stem}.json"), sidecar + "\n"),
    ])
}

fn gen_problems(s: &GenSettings) -> Vec<String> {
    let mut p = Vec::new();
    s.data.problems(&mut p);
    p
}

pub fn gen(s: &GenSettings) -> Result<Output, CliError> {
    config_problems(gen_problems(s))?;
    let traj = generate_regime_shift(&s.data.spec(s.seed))?;
    Ok(Output {
        files: trajectory_files(&traj, "trajectory")?,
        summary: format!(
            "{} states, shift at {}",
            traj.len(),
            traj.shift_index.unwrap_or(traj.len())
        ),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub data: Option<PathBuf>,
    #[serde(flatten)]
    pub gen: DataSettings,
    pub regularizer: Regularizer,
    pub alpha: f64,
    pub dropout_p: f64,
    #[serde(flatten)]
    pub model: ModelSettings,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            out: "runs/train".into(),
            seed: 0,
            threads: 0,
            data: None,
            gen: DataSettings::default(),
            regularizer: Regularizer::Lyapunov,
            alpha: 1.0,
            dropout_p: 0.2,
            model: ModelSettings::default(),
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a TrainConfig,
    seed: u64,
    shift_index: usize,
    post_shift_mse_sum: f64,
    skipped_reg_steps: usize,
    series: &'static str,
    params: &'static str,
}

fn train_config(s: &TrainSettings) -> TrainConfig {
    TrainConfig {
        regularizer: s.regularizer,
        alpha: s.alpha,
        dropout_p: s.dropout_p,
        ..s.model.base(s.seed)
    }
}

fn train_problems(s: &TrainSettings) -> Vec<String> {
    let mut p = train_config(s).problems();
    match &s.data {
        Some(path) if !path.is_file() => p.push(format!("data: no such file {}", path.display())),
        Some(_) => {}
        None => s.gen.problems(&mut p),
    }
    p
}

pub fn train(s: &TrainSettings) -> Result<Output, CliError> {
    config_problems(train_problems(s))?;
    let cfg = train_config(s);
    let traj = match &s.data {
        Some(path) => Trajectory::load(path).map_err(|e| match e {
            lyapunov_learning::Error::InvalidConfig(m) => {
                CliError::Io(format!("{}: {m}", path.display()))
            }
            other => CliError::from(other),
        })?,
        None => generate_regime_shift(&s.gen.spec(s.seed))?,
    };
    let result = train_online(&cfg, &traj)?;
    let record = RunRecord {
        config: &cfg,
        seed: result.seed,
        shift_index: result.shift_index,
        post_shift_mse_sum: result.post_shift_mse_sum,
        skipped_reg_steps: result.skipped_reg_steps,
        series: "series.csv",
        params: "params.txt",
    };
    let params = result
        .final_params
        .as_ref()
        .map(|n| n.to_snapshot_string())
        .unwrap_or_default();
    Ok(Output {
        summary: format!(
            "post-shift MSE sum {:.6e}, skipped {}",
            result.post_shift_mse_sum, result.skipped_reg_steps
        ),
        files: vec![
            ("run.json".into(), to_json(&record)?),
            ("series.csv".into(), result.series_csv()),
            ("params.txt".into(), params),
        ],
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub seeds: usize,
    pub alpha: f64,
    pub l1: f64,
    pub l2: f64,
    pub dropout: f64,
    #[serde(flatten)]
    pub gen: DataSettings,
    #[serde(flatten)]
    pub model: ModelSettings,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            out: "runs/bench".into(),
            seed: 0,
            threads: 0,
            seeds: 10,
            alpha: 1.0,
            l1: 1e-4,
            l2: 1e-3,
            dropout: 0.2,
            gen: DataSettings::default(),
            model: ModelSettings::default(),
        }
    }
}

fn grid_rows(
    base: &TrainConfig,
    data: &DataSettings,
    variants: &[Variant],
    seeds: usize,
) -> Result<Vec<BenchRow>, CliError> {
    let grid = run_grid(base, &data.spec(base.seed), variants, seeds, ExecMode::Parallel)?;
    Ok(grid.rows()?)
}

fn table(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<9} {:<8} mean {:.4}  q1 {:.4}  median {:.4}  q3 {:.4}",
            r.regularizer.tag(),
            r.param,
            r.mean_ratio,
            r.q1,
            r.median,
            r.q3
        );
    }
    s
}

fn bench_problems(s: &BenchSettings) -> Vec<String> {
    let mut p = s.model.base(s.seed).problems();
    s.gen.problems(&mut p);
    if s.seeds == 0 {
        p.push("seeds: must be >= 1".into());
    }
    for (key, v) in [("alpha", s.alpha), ("l1", s.l1), ("l2", s.l2)] {
        if !(v >= 0.0) {
            p.push(format!("{key}: must be >= 0, got {v}"));
        }
    }
    if !(0.0..1.0).contains(&s.dropout) {
        p.push(format!("dropout: must be in [0, 1), got {}", s.dropout));
    }
    p
}

pub fn bench(s: &BenchSettings) -> Result<Output, CliError> {
    config_problems(bench_problems(s))?;
    let base = s.model.base(s.seed);
    let variants = [
        Variant::new(Regularizer::Lyapunov, s.alpha),
        Variant::new(Regularizer::L1, s.l1),
        Variant::new(Regularizer::L2, s.l2),
        Variant::new(Regularizer::Dropout, s.dropout),
    ];
    let mut rows = grid_rows(&base, &s.gen, &variants, s.seeds)?;
    rows.sort_by(|a, b| b.mean_ratio.total_cmp(&a.mean_ratio));
    Ok(Output {
        summary: table(&rows),
        files: vec![
            ("bench.csv".into(), rows_csv(&rows)),
            ("bench.json".into(), to_json(&rows)?),
        ],
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub seeds: usize,
    pub alphas: Vec<f64>,
    #[serde(flatten)]
    pub gen: DataSettings,
    #[serde(flatten)]
    pub model: ModelSettings,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            out: "runs/sweep".into(),
            seed: 0,
            threads: 0,
            seeds: 10,
            alphas: DEFAULT_ALPHA_GRID.to_vec(),
            gen: DataSettings::default(),
            model: ModelSettings::default(),
        }
    }
}

fn sweep_problems(s: &SweepSettings) -> Vec<String> {
    let mut p = s.model.base(s.seed).problems();
    s.gen.problems(&mut p);
    if s.seeds == 0 {
        p.push("seeds: must be >= 1".into());
    }
    if s.alphas.is_empty() {
        p.push("alphas: must not be empty".into());
    }
    for a in s.alphas.iter().filter(|a| !(**a >= 0.0)) {
        p.push(format!("alphas: {a} is negative"));
    }
    p
}

pub fn sweep(s: &SweepSettings) -> Result<Output, CliError> {
    config_problems(sweep_problems(s))?;
    let base = s.model.base(s.seed);
    let variants: Vec<Variant> = s
        .alphas
        .iter()
        .map(|&a| Variant::new(Regularizer::Lyapunov, a))
        .collect();
    let rows = grid_rows(&base, &s.gen, &variants, s.seeds)?;
    Ok(Output {
        summary: table(&rows),
        files: vec![
            ("sweep.csv".into(), rows_csv(&rows)),
            ("sweep.json".into(), to_json(&rows)?),
        ],
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub threads: usize,
    pub target: f64,
    #[serde(flatten)]
    pub synth: SynthConfig,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            out: "runs/synth".into(),
            threads: 0,
            target: 0.191,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct SynthRecord {
    target: f64,
    seed_used: u64,
    restarts: usize,
    steps: usize,
    spectrum: SpectrumReport,
}

fn synth_problems(s: &SynthSettings) -> Vec<String> {
    let mut p = s.synth.problems();
    if !(s.target > 0.0) {
        p.push(format!("target: must be > 0, got {}", s.target));
    }
    p
}

pub fn synth(s: &SynthSettings) -> Result<Output, CliError> {
    config_problems(synth_problems(s))?;
    let o = synthesize_attractor(s.target, &s.synth)?;
    let mut orbit = String::from("x,y,z\n");
    for st in &o.trajectory.states {
        let row: Vec<String> = st.iter().map(|v| format!("{v:.16e}")).collect();
        orbit.push_str(&row.join(","));
        orbit.push('\n');
    }
    let record = SynthRecord {
        target: s.target,
        seed_used: o.seed_used,
        restarts: o.restarts,
        steps: o.steps,
        spectrum: SpectrumReport::from(&o.spectrum),
    };
    Ok(Output {
        summary: format!(
            "lambda_1 = {:.4}, sum = {:.4} (seed {}, {} updates)",
            o.spectrum.exponents[0], o.spectrum.sum, o.seed_used, o.steps
        ),
        files: vec![
            ("params.txt".into(), o.params.to_snapshot_string()),
            ("attractor.csv".into(), orbit),
            ("spectrum.json".into(), to_json(&record)?),
        ],
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub map: String,
    pub network: Option<PathBuf>,
    pub r: f64,
    pub dt: f64,
    pub steps: usize,
    pub transient: usize,
    /// Empty means the map's default start (0.1 in every coordinate for a network).
    pub x0: Vec<f64>,
}

impl Default for LyapSettings {
    fn default() -> Self {
        LyapSettings {
            out: "runs/lyap".into(),
            seed: 0,
            threads: 0,
            map: "logistic".into(),
            network: None,
            r: 4.0,
            dt: 0.01,
            steps: 100_000,
            transient: 1000,
            x0: vec![],
        }
    }
}

fn lyap_map(s: &LyapSettings) -> Result<OracleMap, String> {
    match oracle_map(&s.map) {
        Ok(OracleMap::Logistic { .. }) => Ok(OracleMap::Logistic { r: s.r }),
        Ok(OracleMap::Lorenz { params, .. }) => Ok(OracleMap::Lorenz { params, dt: s.dt }),
        Ok(m) => Ok(m),
        Err(e) => Err(format!("map: {e}")),
    }
}

fn lyap_problems(s: &LyapSettings) -> Vec<String> {
    let mut p = Vec::new();
    if s.steps == 0 {
        p.push("steps: must be >= 1".into());
    }
    if !(s.dt > 0.0) {
        p.push(format!("dt: must be > 0, got {}", s.dt));
    }
    match &s.network {
        Some(path) if !path.is_file() => p.push(format!("network: no such file {}", path.display())),
        Some(_) => {}
        None => {
            if let Err(e) = lyap_map(s) {
                p.push(e);
            }
        }
    }
    p
}

pub fn lyap(s: &LyapSettings) -> Result<Output, CliError> {
    config_problems(lyap_problems(s))?;
    let map = match s.network {
        Some(_) => None,
        None => lyap_map(s).ok(),
    };

    let spec = match (&s.network, map) {
        (Some(path), _) => {
            let net = NetworkParams::load(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let x0 = if s.x0.is_empty() { vec![0.1; net.input_dim()] } else { s.x0.clone() };
            spectrum_of_network(&Plain, &net, &x0, s.steps, s.transient)?
        }
        (None, Some(m)) => {
            let x0 = if s.x0.is_empty() { m.default_start() } else { s.x0.clone() };
            spectrum_of_map(&Plain, &m, &x0, s.steps, s.transient)?
        }
        (None, None) => unreachable!("validated above"),
    };
    let report = SpectrumReport::from(&spec);
    Ok(Output {
        summary: format!(
            "lambda_max = {:.6}\nexponents = {:?}\nsum = {:.6}",
            spec.exponents[0], spec.exponents, spec.sum
        ),
        files: vec![("spectrum.json".into(), to_json(&report)?)],
    })
}
