//! Reference dynamical systems: the Lorenz flow integrated with classical
//! RK4, regime-shift trajectory generation, and small oracle maps with
//! known Jacobians.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Arith, Plain, Tape};
use crate::error::{Error, Result};
use crate::lyap::StateMap;
use crate::mat::Mat;
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl LorenzParams {
    pub const fn new(sigma: f64, rho: f64, beta: f64) -> Self {
        LorenzParams { sigma, rho, beta }
    }

    /// σ = 10, ρ = 28, β = 8/3.
    pub const fn classic() -> Self {
        Self::new(10.0, 28.0, 8.0 / 3.0)
    }

    /// First regime of the shift benchmark: σ = 20, ρ = 28, β = 8/3.
    pub const fn slow_converging() -> Self {
        Self::new(20.0, 28.0, 8.0 / 3.0)
    }

    pub fn is_finite(&self) -> bool {
        self.sigma.is_finite() && self.rho.is_finite() && self.beta.is_finite()
    }
}

/// Right-hand side of the Lorenz equations.
pub fn lorenz_rhs<A: Arith>(ar: &A, s: &[A::S], p: &LorenzParams) -> Vec<A::S> {
    let (x, y, z) = (s[0], s[1], s[2]);
    let dx = ar.mul_c(ar.sub(y, x), p.sigma);
    let dy = ar.sub(ar.mul(x, ar.add_c(ar.neg(z), p.rho)), y);
    let dz = ar.sub(ar.mul(x, y), ar.mul_c(z, p.beta));
    vec![dx, dy, dz]
}

fn axpy<A: Arith>(ar: &A, s: &[A::S], k: &[A::S], h: f64) -> Vec<A::S> {
    s.iter().zip(k).map(|(&a, &b)| ar.add(a, ar.mul_c(b, h))).collect()
}

/// One classical RK4 step, on any [`Arith`].
pub fn lorenz_step_with<A: Arith>(ar: &A, s: &[A::S], p: &LorenzParams, dt: f64) -> Vec<A::S> {
    let k1 = lorenz_rhs(ar, s, p);
    let k2 = lorenz_rhs(ar, &axpy(ar, s, &k1, 0.5 * dt), p);
    let k3 = lorenz_rhs(ar, &axpy(ar, s, &k2, 0.5 * dt), p);
    let k4 = lorenz_rhs(ar, &axpy(ar, s, &k3, dt), p);
    (0..3)
        .map(|i| {
            let incr = ar.lin_comb(&[k1[i], k2[i], k3[i], k4[i]], &[1.0, 2.0, 2.0, 1.0]);
            ar.add(s[i], ar.mul_c(incr, dt / 6.0))
        })
        .collect()
}

/// One RK4 step of the Lorenz flow.
pub fn lorenz_step(s: [f64; 3], p: &LorenzParams, dt: f64) -> Result<[f64; 3]> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let out = lorenz_step_with(&Plain, &s, p, dt);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    Ok([out[0], out[1], out[2]])
}

/// Analytic Jacobian of the Lorenz right-hand side.
pub fn lorenz_jacobian(s: [f64; 3], p: &LorenzParams) -> Mat<f64> {
    let [x, y, z] = s;
    Mat::from_rows(&[
        vec![-p.sigma, p.sigma, 0.0],
        vec![p.rho - z, -1.0, -x],
        vec![y, x, -p.beta],
    ])
}

/// RK4 step of the state together with its variational equation
/// `dΦ/dt = Df(s) Φ`. Returns the new state and the propagated tangent matrix.
pub fn lorenz_variational_step(
    s: [f64; 3],
    phi: &Mat<f64>,
    p: &LorenzParams,
    dt: f64,
) -> ([f64; 3], Mat<f64>) {
    let f = |s: [f64; 3]| {
        let r = lorenz_rhs(&Plain, &s, p);
        [r[0], r[1], r[2]]
    };
    let dphi = |s: [f64; 3], ph: &Mat<f64>| lorenz_jacobian(s, p).matmul(&Plain, ph);
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let madd = |a: &Mat<f64>, b: &Mat<f64>, h: f64| {
        Mat::from_vec(
            a.rows(),
            a.cols(),
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + h * y).collect(),
        )
    };

    let k1 = f(s);
    let m1 = dphi(s, phi);
    let s2 = add(s, k1, 0.5 * dt);
    let p2 = madd(phi, &m1, 0.5 * dt);
    let k2 = f(s2);
    let m2 = dphi(s2, &p2);
    let s3 = add(s, k2, 0.5 * dt);
    let p3 = madd(phi, &m2, 0.5 * dt);
    let k3 = f(s3);
    let m3 = dphi(s3, &p3);
    let s4 = add(s, k3, dt);
    let p4 = madd(phi, &m3, dt);
    let k4 = f(s4);
    let m4 = dphi(s4, &p4);

    let mut ns = [0.0; 3];
    for i in 0..3 {
        ns[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let data = (0..9)
        .map(|k| {
            let (a, b, c, d) = (
                m1.as_slice()[k],
                m2.as_slice()[k],
                m3.as_slice()[k],
                m4.as_slice()[k],
            );
            phi.as_slice()[k] + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
        })
        .collect();
    (ns, Mat::from_vec(3, 3, data))
}

/// Generator settings recorded alongside a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeShiftSpec {
    pub params_a: LorenzParams,
    pub params_b: LorenzParams,
    pub n_per_regime: usize,
    pub dt: f64,
    pub x0: [f64; 3],
    pub transient: usize,
    pub scale: f64,
    pub seed: u64,
}

impl Default for RegimeShiftSpec {
    fn default() -> Self {
        RegimeShiftSpec {
            params_a: LorenzParams::slow_converging(),
            params_b: LorenzParams::classic(),
            n_per_regime: 5000,
            dt: 0.01,
            x0: [1.0, 1.0, 1.0],
            transient: 1000,
            scale: 30.0,
            seed: 0,
        }
    }
}

/// Time-ordered states. `states` hold the scaled values `raw / scale`;
/// exponents computed on them are per step, divide by `dt` for time units.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    pub shift_index: Option<usize>,
    pub scale: f64,
    pub meta: Option<RegimeShiftSpec>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.states.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { step: k });
        }
        if let Some(si) = self.shift_index {
            if si == 0 || si >= self.states.len() {
                return Err(Error::InvalidConfig(format!(
                    "shift_index {si} outside (0, {})",
                    self.states.len()
                )));
            }
        }
        if !(self.dt > 0.0) || !(self.scale > 0.0) {
            return Err(Error::InvalidConfig("dt and scale must be positive".into()));
        }
        Ok(())
    }

    /// Regime label of state `k`: 0 before the shift, 1 from it onwards.
    pub fn regime(&self, k: usize) -> u8 {
        match self.shift_index {
            Some(si) if k >= si => 1,
            _ => 0,
        }
    }

    /// CSV with header `t,x,y,z,regime`, floats at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,y,z,regime")?;
        for (k, s) in self.states.iter().enumerate() {
            write!(w, "{k}")?;
            for v in s {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w, ",{}", self.regime(k))?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            dt: self.dt,
            shift_index: self.shift_index,
            scale: self.scale,
            params_a: self.meta.as_ref().map(|m| m.params_a),
            params_b: self.meta.as_ref().map(|m| m.params_b),
            seed: self.meta.as_ref().map(|m| m.seed),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        let mut w = std::io::BufWriter::new(csv);
        self.write_csv(&mut w)?;
        w.flush()?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }

    /// Reads a CSV written by [`Trajectory::write_csv`] plus its JSON sidecar.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let sidecar_path = csv_path.with_extension("json");
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(&sidecar_path)?)?;
        let reader = BufReader::new(std::fs::File::open(csv_path)?);
        let mut states = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "t,x,y,z,regime" {
                    return Err(Error::InvalidConfig(format!(
                        "unexpected trajectory header `{line}`"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected 5 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let state = fields[1..4]
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
            states.push(state);
        }
        let traj = Trajectory {
            states,
            dt: sidecar.dt,
            shift_index: sidecar.shift_index,
            scale: sidecar.scale,
            meta: None,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// JSON companion of a trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dt: f64,
    pub shift_index: Option<usize>,
    pub scale: f64,
    pub params_a: Option<LorenzParams>,
    pub params_b: Option<LorenzParams>,
    pub seed: Option<u64>,
}

/// Lorenz series whose parameters switch abruptly from `params_a` to
/// `params_b` after `n_per_regime` retained states.
///
/// The start point is `x0` plus a uniform jitter in `[-1e-3, 1e-3]` per
/// coordinate drawn from the seed's data stream.
pub fn generate_regime_shift(spec: &RegimeShiftSpec) -> Result<Trajectory> {
    if spec.n_per_regime == 0 {
        return Err(Error::InvalidConfig("n_per_regime must be at least 1".into()));
    }
    if !(spec.dt > 0.0) || !(spec.scale > 0.0) {
        return Err(Error::InvalidConfig("dt and scale must be positive".into()));
    }
    if !spec.params_a.is_finite() || !spec.params_b.is_finite() {
        return Err(Error::InvalidConfig("Lorenz parameters must be finite".into()));
    }
    let mut rng = rng::stream(spec.seed, Stream::Data);
    let mut s = spec.x0;
    for v in &mut s {
        *v += rng.gen_range(-1e-3..=1e-3);
    }
    let step = |s: [f64; 3], p: &LorenzParams, k: usize| {
        lorenz_step(s, p, spec.dt).map_err(|_| Error::Divergence { step: k })
    };
    for k in 0..spec.transient {
        s = step(s, &spec.params_a, k)?;
    }
    let inv = 1.0 / spec.scale;
    let mut states = Vec::with_capacity(2 * spec.n_per_regime);
    states.push(s.iter().map(|v| v * inv).collect());
    for k in 1..spec.n_per_regime {
        s = step(s, &spec.params_a, spec.transient + k)?;
        states.push(s.iter().map(|v| v * inv).collect());
    }
    for k in 0..spec.n_per_regime {
        s = step(s, &spec.params_b, spec.transient + spec.n_per_regime + k)?;
        states.push(s.iter().map(|v| v * inv).collect());
    }
    Ok(Trajectory {
        states,
        dt: spec.dt,
        shift_index: Some(spec.n_per_regime),
        scale: spec.scale,
        meta: Some(spec.clone()),
    })
}

/// Reference maps with known Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleMap {
    /// `x -> A x`.
    Linear(Mat<f64>),
    /// `x -> r x (1 - x)`.
    Logistic { r: f64 },
    /// One RK4 step of the Lorenz flow.
    Lorenz { params: LorenzParams, dt: f64 },
}

pub const ORACLE_NAMES: [&str; 3] = ["linear", "logistic", "lorenz"];

/// Default registry: `linear` = diag(0.5, 0.5, 0.5), `logistic` with r = 4,
/// `lorenz` with classic parameters at dt = 0.01.
pub fn oracle_maps() -> Vec<(&'static str, OracleMap)> {
    ORACLE_NAMES
        .iter()
        .map(|&n| (n, oracle_map(n).expect("registered")))
        .collect()
}

pub fn oracle_map(name: &str) -> Result<OracleMap> {
    match name {
        "linear" => Ok(OracleMap::Linear(Mat::diag(&[0.5, 0.5, 0.5]))),
        "logistic" => Ok(OracleMap::Logistic { r: 4.0 }),
        "lorenz" => Ok(OracleMap::Lorenz {
            params: LorenzParams::classic(),
            dt: 0.01,
        }),
        other => Err(Error::UnknownMap(other.to_string())),
    }
}

impl OracleMap {
    pub fn state_dim(&self) -> usize {
        match self {
            OracleMap::Linear(a) => a.rows(),
            OracleMap::Logistic { .. } => 1,
            OracleMap::Lorenz { .. } => 3,
        }
    }

    /// A generic starting point inside the map's basin.
    pub fn default_start(&self) -> Vec<f64> {
        match self {
            OracleMap::Linear(a) => vec![1.0; a.rows()],
            OracleMap::Logistic { .. } => vec![0.123456789],
            OracleMap::Lorenz { .. } => vec![1.0, 1.0, 1.0],
        }
    }

    fn plain_jacobian(&self, x: &[f64]) -> Mat<f64> {
        match self {
            OracleMap::Linear(a) => a.clone(),
            OracleMap::Logistic { r } => Mat::from_vec(1, 1, vec![r - 2.0 * r * x[0]]),
            OracleMap::Lorenz { params, dt } => {
                // reverse mode, one backward pass per output row
                let tape = Tape::new();
                let xs = tape.leaves(x);
                let out = lorenz_step_with(&tape, &xs, params, *dt);
                let mut rows = Vec::with_capacity(3);
                for o in out {
                    let g = tape.backward(o).expect("finite RK4 step");
                    rows.push(g.wrt_all(&xs));
                }
                Mat::from_rows(&rows)
            }
        }
    }
}

/// The Jacobian is computed from the values of `x`; on a tape its entries
/// are constants (no second derivatives of the oracle maps are needed).
impl<A: Arith> StateMap<A> for OracleMap {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn step(&self, ar: &A, x: &[A::S]) -> Result<Vec<A::S>> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(match self {
            OracleMap::Linear(a) => a.map(|v| ar.constant(v)).matvec(ar, x),
            OracleMap::Logistic { r } => {
                let one_minus = ar.add_c(ar.neg(x[0]), 1.0);
                vec![ar.mul_c(ar.mul(x[0], one_minus), *r)]
            }
            OracleMap::Lorenz { params, dt } => lorenz_step_with(ar, x, params, *dt),
        })
    }

    fn jacobian(&self, ar: &A, x: &[A::S]) -> Result<Mat<A::S>> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(self.plain_jacobian(&ar.values(x)).map(|v| ar.constant(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: LorenzParams = LorenzParams::classic();

    #[test]
    fn origin_is_fixed() {
        assert_eq!(lorenz_step([0.0; 3], &P, 0.01).unwrap(), [0.0; 3]);
        assert_eq!(
            lorenz_step([0.0; 3], &LorenzParams::new(3.0, -1.0, 7.0), 0.1).unwrap(),
            [0.0; 3]
        );
    }

    #[test]
    fn nontrivial_equilibrium_is_fixed() {
        let c = (P.beta * (P.rho - 1.0)).sqrt();
        let s = [c, c, P.rho - 1.0];
        assert!((c - 8.48528).abs() < 1e-5);
        let n = lorenz_step(s, &P, 0.01).unwrap();
        for i in 0..3 {
            assert!((n[i] - s[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_at_origin_and_trace() {
        let j = lorenz_jacobian([0.0; 3], &P);
        assert_eq!(
            j,
            Mat::from_rows(&[
                vec![-10.0, 10.0, 0.0],
                vec![28.0, -1.0, 0.0],
                vec![0.0, 0.0, -8.0 / 3.0]
            ])
        );
        for s in [[1.0, 2.0, 3.0], [-7.5, 4.0, 30.0]] {
            let j = lorenz_jacobian(s, &P);
            let tr = j.get(0, 0) + j.get(1, 1) + j.get(2, 2);
            assert!((tr + (P.sigma + 1.0 + P.beta)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_dt_and_divergence() {
        assert!(lorenz_step([1.0; 3], &P, 0.0).is_err());
        assert!(matches!(
            lorenz_step([1e200, 1e200, 1e200], &P, 0.01),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn regime_shift_layout() {
        let spec = RegimeShiftSpec {
            n_per_regime: 200,
            transient: 100,
            ..Default::default()
        };
        let t = generate_regime_shift(&spec).unwrap();
        assert_eq!(t.len(), 400);
        assert_eq!(t.shift_index, Some(200));
        assert_eq!(t.regime(199), 0);
        assert_eq!(t.regime(200), 1);
        t.validate().unwrap();
        assert_eq!(t, generate_regime_shift(&spec).unwrap());
        assert!(generate_regime_shift(&RegimeShiftSpec {
            n_per_regime: 0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn unknown_oracle_is_an_error() {
        assert!(matches!(oracle_map("rossler"), Err(Error::UnknownMap(_))));
        assert_eq!(oracle_maps().len(), 3);
    }

    #[test]
    fn logistic_and_linear_jacobians() {
        let m = oracle_map("logistic").unwrap();
        for x in [0.0, 0.3, 0.9] {
            let j = StateMap::<Plain>::jacobian(&m, &Plain, &[x]).unwrap();
            assert_eq!(j.get(0, 0), 4.0 - 8.0 * x);
        }
        let lin = oracle_map("linear").unwrap();
        let j = StateMap::<Plain>::jacobian(&lin, &Plain, &[3.0, -1.0, 2.0]).unwrap();
        assert_eq!(j, Mat::diag(&[0.5, 0.5, 0.5]));
    }
}
