//! Finite-time Lyapunov exponents by QR re-orthonormalization.
//!
//! An orthonormal frame is pushed through the Jacobian sequence,
//! `A_t = J_t · Q_{t-1}`, and re-factored with modified Gram–Schmidt at
//! every step. The logs of the positive `R` diagonals, averaged over the
//! horizon, are the exponents. Everything is written against [`Arith`], so
//! on a [`Tape`](crate::diffcore::Tape) the exponents are differentiable in
//! whatever produced the Jacobians.

use serde::{Deserialize, Serialize};

use crate::diffcore::Arith;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::net::Network;

/// `R_ii` below this is treated as a rank-deficient frame.
pub const RANK_TOL: f64 = 1e-12;

/// States with any coordinate beyond this magnitude count as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// A differentiable discrete-time map on `dim`-dimensional states.
pub trait StateMap<A: Arith> {
    fn dim(&self) -> usize;

    fn step(&self, ar: &A, x: &[A::S]) -> Result<Vec<A::S>>;

    fn jacobian(&self, ar: &A, x: &[A::S]) -> Result<Mat<A::S>>;

    /// `(F(x), J(x)·v)`. Implementors with a cheaper tangent sweep override this.
    fn step_jvp(&self, ar: &A, x: &[A::S], v: &[A::S]) -> Result<(Vec<A::S>, Vec<A::S>)> {
        let j = self.jacobian(ar, x)?;
        Ok((self.step(ar, x)?, j.matvec(ar, v)))
    }
}

impl<A: Arith> StateMap<A> for Network<A::S> {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn step(&self, ar: &A, x: &[A::S]) -> Result<Vec<A::S>> {
        self.forward(ar, x)
    }

    fn jacobian(&self, ar: &A, x: &[A::S]) -> Result<Mat<A::S>> {
        self.input_jacobian(ar, x)
    }

    fn step_jvp(&self, ar: &A, x: &[A::S], v: &[A::S]) -> Result<(Vec<A::S>, Vec<A::S>)> {
        self.forward_jvp(ar, x, v)
    }
}

/// Finite-time spectrum. `exponents` are in nats per discrete step, sorted
/// descending; divide by the integrator step to get continuous-time rates.
#[derive(Clone, Debug)]
pub struct Spectrum<S> {
    pub exponents: Vec<S>,
    pub sum: S,
    pub horizon: usize,
    /// `ln R_ii(t)` per step, columns permuted to match `exponents`.
    pub log_diag_history: Vec<Vec<f64>>,
}

/// Values-only spectrum.
pub type SpectrumEstimate = Spectrum<f64>;

impl<S: Copy> Spectrum<S> {
    pub fn detach<A: Arith<S = S>>(&self, ar: &A) -> SpectrumEstimate {
        Spectrum {
            exponents: ar.values(&self.exponents),
            sum: ar.value(self.sum),
            horizon: self.horizon,
            log_diag_history: self.log_diag_history.clone(),
        }
    }
}

/// Modified Gram–Schmidt QR of a square matrix.
///
/// `R_jj` is a norm, so the diagonal is positive by construction; a column
/// whose residual norm falls under [`RANK_TOL`] is reported with `step` as
/// the caller's time index.
pub fn mgs_qr<A: Arith>(ar: &A, a: &Mat<A::S>, step: usize) -> Result<(Mat<A::S>, Vec<A::S>)> {
    let n = a.rows();
    // columns of Q, stored as rows of qt
    let mut qt: Vec<Vec<A::S>> = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = a.col(j);
        for q in &qt {
            let r = ar.dot(q, &v);
            v = v
                .iter()
                .zip(q)
                .map(|(&vk, &qk)| ar.sub(vk, ar.mul(r, qk)))
                .collect();
        }
        let norm_sq = ar.dot(&v, &v);
        let norm_sq_val = ar.value(norm_sq);
        if !(norm_sq_val >= RANK_TOL * RANK_TOL) {
            return Err(Error::RankDeficient {
                step,
                column: j,
                value: norm_sq_val.max(0.0).sqrt(),
            });
        }
        let r_jj = ar.sqrt(norm_sq)?;
        let inv = ar.div(ar.constant(1.0), r_jj)?;
        qt.push(v.iter().map(|&vk| ar.mul(vk, inv)).collect());
        diag.push(r_jj);
    }
    Ok((Mat::from_rows(&qt).transpose(), diag))
}

/// Streaming form of [`spectrum`]: feed Jacobians one at a time.
pub struct QrAccumulator<S> {
    frame: Mat<S>,
    sums: Vec<Option<S>>,
    history: Vec<Vec<f64>>,
    steps: usize,
}

impl<S: Copy> QrAccumulator<S> {
    pub fn new<A: Arith<S = S>>(ar: &A, dim: usize) -> Self {
        let id = Mat::<f64>::identity(dim).map(|v| ar.constant(v));
        QrAccumulator {
            frame: id,
            sums: vec![None; dim],
            history: Vec::new(),
            steps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.frame.rows()
    }

    /// Current orthonormal frame `Q_t`.
    pub fn frame(&self) -> &Mat<S> {
        &self.frame
    }

    pub fn push<A: Arith<S = S>>(&mut self, ar: &A, jac: &Mat<S>) -> Result<()> {
        let d = self.dim();
        if jac.rows() != d || jac.cols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: if jac.rows() != d { jac.rows() } else { jac.cols() },
            });
        }
        if jac.as_slice().iter().any(|&x| !ar.value(x).is_finite()) {
            return Err(Error::NonFinite { step: self.steps });
        }
        let a = jac.matmul(ar, &self.frame);
        let (q, r) = mgs_qr(ar, &a, self.steps)?;
        let mut row = Vec::with_capacity(d);
        for (i, &rii) in r.iter().enumerate() {
            let l = ar.ln(rii)?;
            row.push(ar.value(l));
            self.sums[i] = Some(match self.sums[i] {
                Some(acc) => ar.add(acc, l),
                None => l,
            });
        }
        self.history.push(row);
        self.frame = q;
        self.steps += 1;
        Ok(())
    }

    pub fn finish<A: Arith<S = S>>(self, ar: &A) -> Result<Spectrum<S>> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("spectrum needs at least one Jacobian".into()));
        }
        let inv_t = 1.0 / self.steps as f64;
        let raw: Vec<S> = self
            .sums
            .iter()
            .map(|s| ar.mul_c(s.expect("steps > 0"), inv_t))
            .collect();
        let sum = ar.sum(&raw);
        let mut order: Vec<usize> = (0..raw.len()).collect();
        // stable sort keeps Gram–Schmidt column order on ties
        order.sort_by(|&a, &b| ar.value(raw[b]).total_cmp(&ar.value(raw[a])));
        let exponents = order.iter().map(|&i| raw[i]).collect();
        let log_diag_history = self
            .history
            .into_iter()
            .map(|row| order.iter().map(|&i| row[i]).collect())
            .collect();
        Ok(Spectrum {
            exponents,
            sum,
            horizon: self.steps,
            log_diag_history,
        })
    }
}

/// Lyapunov spectrum of an ordered Jacobian sequence.
pub fn spectrum<A: Arith>(ar: &A, jacobians: &[Mat<A::S>]) -> Result<Spectrum<A::S>> {
    let first = jacobians
        .first()
        .ok_or_else(|| Error::InvalidConfig("spectrum needs at least one Jacobian".into()))?;
    if !first.is_square() {
        return Err(Error::Dimension {
            expected: first.rows(),
            got: first.cols(),
        });
    }
    let mut acc = QrAccumulator::new(ar, first.rows());
    for j in jacobians {
        acc.push(ar, j)?;
    }
    acc.finish(ar)
}

fn check_state<A: Arith>(ar: &A, x: &[A::S], step: usize) -> Result<()> {
    for &xi in x {
        let v = ar.value(xi);
        if !v.is_finite() || v.abs() > DIVERGENCE_BOUND {
            return Err(Error::Divergence { step });
        }
    }
    Ok(())
}

/// Largest exponent from a single tangent vector.
///
/// The tangent starts at `(1, …, 1)/√d` and is renormalized every
/// `renorm_every` steps; any remainder is logged at the end.
pub fn largest_exponent<A, M>(
    ar: &A,
    map: &M,
    x0: &[A::S],
    steps: usize,
    renorm_every: usize,
) -> Result<A::S>
where
    A: Arith,
    M: StateMap<A> + ?Sized,
{
    if steps == 0 || renorm_every == 0 {
        return Err(Error::InvalidConfig(
            "largest_exponent needs steps >= 1 and renorm_every >= 1".into(),
        ));
    }
    let d = map.dim();
    if x0.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x0.len(),
        });
    }
    let start = 1.0 / (d as f64).sqrt();
    let mut v: Vec<A::S> = (0..d).map(|_| ar.constant(start)).collect();
    let mut x = x0.to_vec();
    let mut acc: Option<A::S> = None;
    for t in 1..=steps {
        let (nx, nv) = map.step_jvp(ar, &x, &v)?;
        check_state(ar, &nx, t)?;
        x = nx;
        v = nv;
        if t % renorm_every == 0 || t == steps {
            let norm_sq = ar.dot(&v, &v);
            let nsv = ar.value(norm_sq);
            if !(nsv >= RANK_TOL * RANK_TOL) || !nsv.is_finite() {
                return Err(Error::Collapse {
                    step: t,
                    norm: nsv.max(0.0).sqrt(),
                });
            }
            let norm = ar.sqrt(norm_sq)?;
            let l = ar.ln(norm)?;
            acc = Some(match acc {
                Some(a) => ar.add(a, l),
                None => l,
            });
            if t != steps {
                let inv = ar.div(ar.constant(1.0), norm)?;
                v = v.iter().map(|&vi| ar.mul(vi, inv)).collect();
            }
        }
    }
    Ok(ar.mul_c(acc.expect("steps >= 1"), 1.0 / steps as f64))
}

/// Runs `transient` discarded steps from `x0`, returning the landing state.
pub fn run_transient<A, M>(ar: &A, map: &M, x0: &[A::S], transient: usize) -> Result<Vec<A::S>>
where
    A: Arith,
    M: StateMap<A> + ?Sized,
{
    let mut x = x0.to_vec();
    for t in 1..=transient {
        x = map.step(ar, &x)?;
        check_state(ar, &x, t)?;
    }
    Ok(x)
}

/// Full spectrum along the orbit of `map` started at `x0`.
///
/// The Jacobian at each retained state `x_t` is fed to the QR recursion
/// before stepping to `x_{t+1}`.
pub fn spectrum_of_map<A, M>(
    ar: &A,
    map: &M,
    x0: &[A::S],
    steps: usize,
    transient: usize,
) -> Result<Spectrum<A::S>>
where
    A: Arith,
    M: StateMap<A> + ?Sized,
{
    if steps == 0 {
        return Err(Error::InvalidConfig("spectrum needs steps >= 1".into()));
    }
    let d = map.dim();
    if x0.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x0.len(),
        });
    }
    check_state(ar, x0, 0)?;
    let mut x = run_transient(ar, map, x0, transient)?;
    let mut acc = QrAccumulator::new(ar, d);
    for t in 0..steps {
        let j = map.jacobian(ar, &x)?;
        acc.push(ar, &j)?;
        if t + 1 < steps {
            x = map.step(ar, &x)?;
            check_state(ar, &x, transient + t + 1)?;
        }
    }
    acc.finish(ar)
}

/// [`spectrum_of_map`] for a network, which must be a square map.
pub fn spectrum_of_network<A: Arith>(
    ar: &A,
    net: &Network<A::S>,
    x0: &[A::S],
    steps: usize,
    transient: usize,
) -> Result<Spectrum<A::S>> {
    if net.input_dim() != net.output_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: net.output_dim(),
        });
    }
    spectrum_of_map(ar, net, x0, steps, transient)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub chaotic: bool,
    pub largest: f64,
    pub sum: f64,
}

/// Chaotic attractor: a positive largest exponent and a negative sum.
pub fn is_chaotic_attractor(s: &SpectrumEstimate) -> ChaosReport {
    let largest = s.exponents.first().copied().unwrap_or(f64::NAN);
    ChaosReport {
        chaotic: largest > 0.0 && s.sum < 0.0,
        largest,
        sum: s.sum,
    }
}

/// JSON form of a spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub exponents: Vec<f64>,
    pub horizon: usize,
    pub sum: f64,
    pub chaotic: bool,
}

impl From<&SpectrumEstimate> for SpectrumReport {
    fn from(s: &SpectrumEstimate) -> Self {
        SpectrumReport {
            exponents: s.exponents.clone(),
            horizon: s.horizon,
            sum: s.sum,
            chaotic: is_chaotic_attractor(s).chaotic,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Plain, Tape};
    use crate::net::{Activation, NetworkParams};

    #[test]
    fn identity_sequence_has_zero_exponents() {
        let js = vec![Mat::identity(3); 7];
        let s = spectrum(&Plain, &js).unwrap();
        assert_eq!(s.exponents, vec![0.0; 3]);
        assert_eq!(s.horizon, 7);
    }

    #[test]
    fn diagonal_sequence_recovers_log_diagonal() {
        let js = vec![Mat::diag(&[0.5, 2.0, 0.25]); 20];
        let s = spectrum(&Plain, &js).unwrap();
        let want = [2f64.ln(), 0.5f64.ln(), 0.25f64.ln()];
        for (a, b) in s.exponents.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        for (i, &e) in s.exponents.iter().enumerate() {
            let mut acc = 0.0;
            for row in &s.log_diag_history {
                acc += row[i];
            }
            assert_eq!(e, acc * (1.0 / s.horizon as f64));
        }
    }

    #[test]
    fn rank_deficiency_names_step_and_column() {
        let mut js = vec![Mat::identity(3); 3];
        js[2] = Mat::diag(&[1.0, 0.0, 1.0]);
        match spectrum(&Plain, &js) {
            Err(Error::RankDeficient { step, column, .. }) => assert_eq!((step, column), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_or_non_square_input_is_rejected() {
        assert!(spectrum::<Plain>(&Plain, &[]).is_err());
        assert!(spectrum(&Plain, &[Mat::filled(2, 3, 1.0)]).is_err());
    }

    #[test]
    fn chaos_predicate_cases() {
        let mk = |e: Vec<f64>| {
            let sum = e.iter().sum();
            Spectrum {
                exponents: e,
                sum,
                horizon: 1,
                log_diag_history: vec![],
            }
        };
        assert!(is_chaotic_attractor(&mk(vec![0.1, -0.5, -1.0])).chaotic);
        assert!(!is_chaotic_attractor(&mk(vec![-0.1, -0.2, -0.3])).chaotic);
        let r = is_chaotic_attractor(&mk(vec![0.5, 0.4, -0.1]));
        assert!(!r.chaotic);
        assert!((r.sum - 0.8).abs() < 1e-15);
        assert_eq!(r.largest, 0.5);
    }

    #[test]
    fn linear_network_spectrum() {
        let mut flat = vec![0.0; 12];
        for i in 0..3 {
            flat[i * 4] = 0.9;
        }
        let net = NetworkParams::from_flat(&[3, 3], Activation::Tanh, &flat).unwrap();
        let s = spectrum_of_network(&Plain, &net, &[0.4, -0.2, 0.1], 50, 3).unwrap();
        for e in s.exponents {
            assert!((e - 0.9f64.ln()).abs() < 1e-12);
        }
        let l = largest_exponent(&Plain, &net, &[0.4, -0.2, 0.1], 40, 1).unwrap();
        assert!((l - 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn horizon_one_is_log_of_single_qr_diagonal() {
        let net = NetworkParams::init(&[3, 6, 3], 5).unwrap();
        let x = [0.1, 0.2, -0.3];
        let s = spectrum_of_network(&Plain, &net, &x, 1, 0).unwrap();
        let j = net.input_jacobian(&Plain, &x).unwrap();
        let (_, r) = mgs_qr(&Plain, &j, 0).unwrap();
        let mut logs: Vec<f64> = r.iter().map(|v| v.ln()).collect();
        logs.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(s.exponents, logs);
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let net = NetworkParams::init(&[3, 6, 3], 3).unwrap();
        let x = [0.3, -0.1, 0.2];
        let plain = spectrum_of_network(&Plain, &net, &x, 10, 0).unwrap();
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let xs = tape.leaves(&x);
        let taped = spectrum_of_network(&tape, &bound, &xs, 10, 0).unwrap().detach(&tape);
        for (a, b) in plain.exponents.iter().zip(&taped.exponents) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn divergence_reports_step() {
        let mut flat = vec![0.0; 2];
        flat[0] = 10.0;
        let net = NetworkParams::from_flat(&[1, 1], Activation::Tanh, &flat).unwrap();
        match spectrum_of_network(&Plain, &net, &[1.0], 20, 0) {
            Err(Error::Divergence { step }) => assert_eq!(step, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn collapse_is_reported() {
        let net = NetworkParams::from_flat(&[1, 1], Activation::Tanh, &[1e-7, 0.0]).unwrap();
        assert!(matches!(
            largest_exponent(&Plain, &net, &[1.0], 5, 5),
            Err(Error::Collapse { .. })
        ));
        assert!(largest_exponent(&Plain, &net, &[1.0], 0, 1).is_err());
    }
}
