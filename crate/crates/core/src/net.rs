//! Feed-forward network used as a discrete dynamical map `x -> F(x, w)`.
//!
//! Hidden layers use `tanh`; the output layer is affine. The input Jacobian
//! is assembled as `W_L · D_{L-1} · W_{L-1} ⋯ D_1 · W_1` with
//! `D_k = diag(1 - tanh²(z_k))`, built from ordinary tape operations so a
//! first-order backward pass through any function of it reaches the weights.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Arith, Tape, Var};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `tanh` on hidden layers, identity on the output layer.
    Tanh,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

/// One affine layer: `weights` is `rows × cols` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S> {
    pub weights: Mat<S>,
    pub bias: Vec<S>,
}

/// Network over scalar type `S` (`f64` for snapshots, [`Var`] when bound to a tape).
#[derive(Clone, Debug, PartialEq)]
pub struct Network<S> {
    layers: Vec<Layer<S>>,
    sizes: Vec<usize>,
    activation: Activation,
}

/// Detached parameter values.
pub type NetworkParams = Network<f64>;

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "layer_sizes needs at least 2 entries, got {sizes:?}"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!(
            "layer_sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl<S: Copy> Network<S> {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        param_count(&self.sizes)
    }

    /// Flat parameter list: per layer, weights row-major then bias.
    pub fn flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Rebuilds a network of the same shape from a flat list.
    pub fn with_flat<T: Copy>(&self, flat: &[T]) -> Result<Network<T>> {
        Network::from_flat(&self.sizes, self.activation, flat)
    }

    pub fn from_flat(sizes: &[usize], activation: Activation, flat: &[S]) -> Result<Self> {
        validate_sizes(sizes)?;
        let expected = param_count(sizes);
        if flat.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: flat.len(),
            });
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (cols, rows) = (w[0], w[1]);
            let weights = Mat::from_vec(rows, cols, flat[offset..offset + rows * cols].to_vec());
            offset += rows * cols;
            let bias = flat[offset..offset + rows].to_vec();
            offset += rows;
            layers.push(Layer { weights, bias });
        }
        Ok(Network {
            layers,
            sizes: sizes.to_vec(),
            activation,
        })
    }

    fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass, caching the activation derivatives of every hidden layer.
    pub fn forward_pass<A: Arith<S = S>>(&self, ar: &A, x: &[S]) -> Result<ForwardPass<S>> {
        self.forward_impl(ar, x, None::<&mut Dropout<'_, rand_chacha::ChaCha8Rng>>)
    }

    pub fn forward<A: Arith<S = S>>(&self, ar: &A, x: &[S]) -> Result<Vec<S>> {
        Ok(self.forward_pass(ar, x)?.output)
    }

    /// Training-time forward with inverted dropout on hidden activations.
    pub fn forward_dropout<A, R>(&self, ar: &A, x: &[S], p: f64, rng: &mut R) -> Result<Vec<S>>
    where
        A: Arith<S = S>,
        R: Rng,
    {
        let mut d = Dropout { p, rng };
        Ok(self.forward_impl(ar, x, Some(&mut d))?.output)
    }

    fn forward_impl<A, R>(
        &self,
        ar: &A,
        x: &[S],
        mut dropout: Option<&mut Dropout<'_, R>>,
    ) -> Result<ForwardPass<S>>
    where
        A: Arith<S = S>,
        R: Rng,
    {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        let mut derivs = Vec::with_capacity(last);
        for (k, layer) in self.layers.iter().enumerate() {
            let z: Vec<S> = (0..layer.weights.rows())
                .map(|r| ar.affine(layer.weights.row(r), &h, Some(layer.bias[r])))
                .collect();
            if k == last {
                h = z;
            } else {
                let t: Vec<S> = z.iter().map(|&zi| ar.tanh(zi)).collect();
                derivs.push(
                    t.iter()
                        .map(|&ti| ar.add_c(ar.neg(ar.square(ti)), 1.0))
                        .collect(),
                );
                h = match dropout.as_deref_mut() {
                    Some(d) => d.apply(ar, &t),
                    None => t,
                };
            }
        }
        Ok(ForwardPass { output: h, derivs })
    }

    /// `(F(x), J(x)·v)` in one sweep, without materializing `J`.
    pub fn forward_jvp<A: Arith<S = S>>(&self, ar: &A, x: &[S], v: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        self.check_input(x)?;
        self.check_input(v)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        let mut u = v.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let rows = layer.weights.rows();
            let z: Vec<S> = (0..rows)
                .map(|r| ar.affine(layer.weights.row(r), &h, Some(layer.bias[r])))
                .collect();
            let wu: Vec<S> = (0..rows).map(|r| ar.dot(layer.weights.row(r), &u)).collect();
            if k == last {
                h = z;
                u = wu;
            } else {
                h = z.iter().map(|&zi| ar.tanh(zi)).collect();
                u = h
                    .iter()
                    .zip(&wu)
                    .map(|(&t, &w)| ar.mul(ar.add_c(ar.neg(ar.square(t)), 1.0), w))
                    .collect();
            }
        }
        Ok((h, u))
    }

    /// `∂F/∂x` at `x`, `output_dim × input_dim`.
    pub fn input_jacobian<A: Arith<S = S>>(&self, ar: &A, x: &[S]) -> Result<Mat<S>> {
        let pass = self.forward_pass(ar, x)?;
        Ok(self.jacobian_from_pass(ar, &pass))
    }

    /// Assembles the Jacobian from cached derivatives, multiplying from the
    /// output side so intermediate products stay `output_dim` rows tall.
    pub fn jacobian_from_pass<A: Arith<S = S>>(&self, ar: &A, pass: &ForwardPass<S>) -> Mat<S> {
        let last = self.layers.len() - 1;
        let mut m = self.layers[last].weights.clone();
        for k in (0..last).rev() {
            let d = &pass.derivs[k];
            let scaled = Mat::from_vec(
                m.rows(),
                m.cols(),
                (0..m.rows())
                    .flat_map(|r| (0..m.cols()).map(move |c| (r, c)))
                    .map(|(r, c)| ar.mul(m.get(r, c), d[c]))
                    .collect(),
            );
            m = scaled.matmul(ar, &self.layers[k].weights);
        }
        m
    }
}

/// Output of a forward pass plus cached `1 - tanh²` per hidden layer.
#[derive(Clone, Debug)]
pub struct ForwardPass<S> {
    pub output: Vec<S>,
    pub derivs: Vec<Vec<S>>,
}

struct Dropout<'r, R> {
    p: f64,
    rng: &'r mut R,
}

impl<R: Rng> Dropout<'_, R> {
    fn apply<A: Arith>(&mut self, ar: &A, h: &[A::S]) -> Vec<A::S> {
        if self.p <= 0.0 {
            return h.to_vec();
        }
        let keep_scale = 1.0 / (1.0 - self.p);
        h.iter()
            .map(|&x| {
                if self.rng.gen::<f64>() < self.p {
                    ar.mul_c(x, 0.0)
                } else {
                    ar.mul_c(x, keep_scale)
                }
            })
            .collect()
    }
}

impl NetworkParams {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut rng = rng::stream(seed, Stream::Init);
        let mut flat = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, rows) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..rows * fan_in {
                flat.push(rng.gen_range(-bound..bound));
            }
            flat.extend(std::iter::repeat(0.0).take(rows));
        }
        Self::from_flat(sizes, Activation::Tanh, &flat)
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &Tape) -> Network<Var> {
        let leaves = tape.leaves(&self.flat());
        self.with_flat(&leaves).expect("same shape")
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }

    /// Text snapshot: header lines, then one parameter per line with 17
    /// significant digits so parsing restores the exact bits.
    pub fn to_snapshot_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# lyapunov-learning network snapshot v1").unwrap();
        let sizes: Vec<String> = self.sizes.iter().map(|x| x.to_string()).collect();
        writeln!(s, "layer_sizes {}", sizes.join(" ")).unwrap();
        writeln!(s, "activation {}", self.activation.tag()).unwrap();
        for v in self.flat() {
            writeln!(s, "{v:.16e}").unwrap();
        }
        s
    }

    pub fn from_snapshot_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let sizes_line = lines
            .next()
            .ok_or_else(|| Error::Snapshot("missing layer_sizes".into()))?;
        let sizes = sizes_line
            .strip_prefix("layer_sizes")
            .ok_or_else(|| Error::Snapshot(format!("expected layer_sizes, got `{sizes_line}`")))?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        let act_line = lines
            .next()
            .ok_or_else(|| Error::Snapshot("missing activation".into()))?;
        let activation = match act_line.strip_prefix("activation").map(str::trim) {
            Some("tanh") => Activation::Tanh,
            _ => return Err(Error::Snapshot(format!("unsupported activation line `{act_line}`"))),
        };
        let flat = lines
            .map(|l| l.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        Self::from_flat(&sizes, activation, &flat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_snapshot_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Plain;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = NetworkParams::init(&[3, 10, 3], 0).unwrap();
        let b = NetworkParams::init(&[3, 10, 3], 0).unwrap();
        assert_eq!(a, b);
        let big = NetworkParams::init(&[3, 50, 50, 50, 3], 4).unwrap();
        let shapes: Vec<(usize, usize)> = big
            .layers()
            .iter()
            .map(|l| (l.weights.rows(), l.weights.cols()))
            .collect();
        assert_eq!(shapes, vec![(50, 3), (50, 50), (50, 50), (3, 50)]);
        assert!(big.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(NetworkParams::init(&[3], 0).is_err());
        assert!(NetworkParams::init(&[], 0).is_err());
        assert!(NetworkParams::init(&[3, 0, 3], 0).is_err());
    }

    #[test]
    fn zero_and_identity_maps() {
        let zero = NetworkParams::from_flat(&[3, 4, 3], Activation::Tanh, &[0.0; 31]).unwrap();
        assert_eq!(zero.forward(&Plain, &[0.3, -2.0, 9.0]).unwrap(), vec![0.0; 3]);

        let mut flat = vec![0.0; 12];
        flat[0] = 1.0;
        flat[4] = 1.0;
        flat[8] = 1.0;
        let id = NetworkParams::from_flat(&[3, 3], Activation::Tanh, &flat).unwrap();
        assert_eq!(id.forward(&Plain, &[0.3, -2.0, 9.0]).unwrap(), vec![0.3, -2.0, 9.0]);
    }

    #[test]
    fn linear_layer_jacobian_is_the_weight_matrix() {
        let flat = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 0.1, 0.2, 0.3];
        let net = NetworkParams::from_flat(&[3, 3], Activation::Tanh, &flat).unwrap();
        for x in [[0.0, 0.0, 0.0], [5.0, -1.0, 2.0]] {
            let j = net.input_jacobian(&Plain, &x).unwrap();
            assert_eq!(j.as_slice(), &flat[..9]);
        }
    }

    #[test]
    fn zero_bias_zero_input_gives_weight_product() {
        let net = NetworkParams::init(&[3, 5, 3], 2).unwrap();
        let j = net.input_jacobian(&Plain, &[0.0; 3]).unwrap();
        let prod = net.layers()[1].weights.matmul(&Plain, &net.layers()[0].weights);
        for (a, b) in j.as_slice().iter().zip(prod.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = NetworkParams::init(&[3, 4, 3], 0).unwrap();
        assert!(matches!(
            net.forward(&Plain, &[1.0, 2.0]),
            Err(Error::Dimension { expected: 3, got: 2 })
        ));
        assert!(net.input_jacobian(&Plain, &[1.0; 4]).is_err());
    }

    #[test]
    fn jvp_matches_jacobian_times_vector() {
        let net = NetworkParams::init(&[3, 7, 6, 3], 9).unwrap();
        let x = [0.2, -0.4, 0.9];
        let v = [0.3, 0.1, -0.7];
        let j = net.input_jacobian(&Plain, &x).unwrap();
        let jv = j.matvec(&Plain, &v);
        let (y, u) = net.forward_jvp(&Plain, &x, &v).unwrap();
        assert_eq!(y, net.forward(&Plain, &x).unwrap());
        for (a, b) in jv.iter().zip(&u) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let net = NetworkParams::init(&[3, 10, 3], 11).unwrap();
        let text = net.to_snapshot_string();
        let back = NetworkParams::from_snapshot_str(&text).unwrap();
        let bits = |n: &NetworkParams| n.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&net), bits(&back));
        assert!(NetworkParams::from_snapshot_str("layer_sizes 3 3\nactivation relu\n").is_err());
        assert!(NetworkParams::from_snapshot_str("layer_sizes 3 3\nactivation tanh\n1.0\n").is_err());
    }

    #[test]
    fn dropout_zero_probability_is_identity() {
        let net = NetworkParams::init(&[3, 8, 3], 1).unwrap();
        let mut r = rng::stream(0, Stream::Dropout);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(
            net.forward_dropout(&Plain, &x, 0.0, &mut r).unwrap(),
            net.forward(&Plain, &x).unwrap()
        );
    }
}
