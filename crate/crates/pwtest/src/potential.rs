//! The discriminator ψ_θ: a small feed-forward network ℝ^k → ℝ with exact
//! reverse-mode gradients, written from first principles.
//!
//! Parameters live in one flat layer-major array (per layer: weight matrix
//! row-major, then biases). The flat layout is shared by the optimizer, the
//! gradient bundle, and the JSON checkpoint, so there is exactly one
//! parameter indexing convention in the crate.
//!
//! Note there is no Lipschitz constraint on ψ_θ (no clipping, no gradient
//! penalty): the c-transform construction keeps the dual pair feasible no
//! matter how steep ψ_θ gets.

use serde::{Deserialize, Serialize};

use crate::core::{GaussianStream, Matrix, RngSeed};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            // Subgradient convention: relu'(0) = 0.
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Reverse-mode partials of a single forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// ∂ψ/∂θ in the flat layer-major parameter layout.
    pub d_theta: Vec<f64>,
    /// ∂ψ/∂z, length k.
    pub d_input: Vec<f64>,
}

/// Feed-forward potential ψ_θ: linear layers with the chosen activation on
/// hidden layers and a linear scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CheckpointRepr", into = "CheckpointRepr")]
pub struct PotentialNetwork {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    /// Flat offset of each layer's block plus a total-count sentinel;
    /// derived from dims.
    offsets: Vec<usize>,
}

/// JSON checkpoint: {dims, activation, params} with the layer-major flat
/// parameter array.
#[derive(Serialize, Deserialize)]
struct CheckpointRepr {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl From<PotentialNetwork> for CheckpointRepr {
    fn from(net: PotentialNetwork) -> CheckpointRepr {
        CheckpointRepr {
            dims: net.dims,
            activation: net.activation,
            params: net.params,
        }
    }
}

impl TryFrom<CheckpointRepr> for PotentialNetwork {
    type Error = Error;
    fn try_from(r: CheckpointRepr) -> Result<PotentialNetwork> {
        PotentialNetwork::from_parts(r.dims, r.activation, r.params)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(
            "network needs at least an input and an output layer".into(),
        ));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::Config("output dimension must be 1".into()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Config("all layer widths must be >= 1".into()));
    }
    Ok(())
}

fn layer_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut acc = 0usize;
    for l in 0..dims.len() - 1 {
        offsets.push(acc);
        acc += dims[l + 1] * (dims[l] + 1); // out×in weights plus out biases
    }
    offsets.push(acc); // sentinel: total parameter count
    offsets
}

/// Fresh network with weights ~ N(0, 1/fan_in) (drawn with the crate's
/// portable Box–Muller stream) and zero biases. Deterministic given `seed`.
pub fn init_network(
    dims: &[usize],
    activation: Activation,
    seed: RngSeed,
) -> Result<PotentialNetwork> {
    validate_dims(dims)?;
    let offsets = layer_offsets(dims);
    let mut params = vec![0.0; *offsets.last().unwrap()];
    let mut g = GaussianStream::new(seed);
    for l in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let base = offsets[l];
        for w in params[base..base + fan_out * fan_in].iter_mut() {
            *w = scale * g.next_normal();
        }
        // Biases (the tail of the block) stay zero.
    }
    Ok(PotentialNetwork {
        dims: dims.to_vec(),
        activation,
        params,
        offsets,
    })
}

impl PotentialNetwork {
    /// Builds a network from an explicit flat parameter array (checkpoint
    /// loading, hand-constructed test nets).
    pub fn from_parts(
        dims: Vec<usize>,
        activation: Activation,
        params: Vec<f64>,
    ) -> Result<PotentialNetwork> {
        validate_dims(&dims)?;
        let offsets = layer_offsets(&dims);
        if params.len() != *offsets.last().unwrap() {
            return Err(Error::Config(format!(
                "parameter array has length {}, dims {:?} require {}",
                params.len(),
                dims,
                offsets.last().unwrap()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::DegenerateData("non-finite parameter".into()));
        }
        Ok(PotentialNetwork {
            dims,
            activation,
            params,
            offsets,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable view of the flat parameters, in the same layer-major order as
    /// `GradientBundle::d_theta`. Exposed for optimizers and
    /// finite-difference checks.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Copy of the weight matrix of `layer` (0-based), shaped out×in.
    pub fn weights(&self, layer: usize) -> Matrix {
        let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
        let base = self.offsets[layer];
        Matrix::from_flat(
            fan_out,
            fan_in,
            self.params[base..base + fan_out * fan_in].to_vec(),
        )
        .expect("layer block has exactly out*in weight entries")
    }

    /// ψ_θ(z).
    pub fn forward(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dims[0] {
            return Err(Error::Dimension(format!(
                "network expects input length {}, got {}",
                self.dims[0],
                z.len()
            )));
        }
        let mut ws = Scratch::new(self);
        Ok(self.forward_ws(z, &mut ws))
    }

    /// Exact reverse-mode partials of `forward` at `z`.
    pub fn backward(&self, z: &[f64]) -> Result<GradientBundle> {
        if z.len() != self.dims[0] {
            return Err(Error::Dimension(format!(
                "network expects input length {}, got {}",
                self.dims[0],
                z.len()
            )));
        }
        let mut ws = Scratch::new(self);
        self.forward_ws(z, &mut ws);
        let mut d_theta = vec![0.0; self.params.len()];
        let mut d_input = vec![0.0; self.dims[0]];
        self.backward_ws(&ws, 1.0, &mut d_theta, &mut d_input);
        Ok(GradientBundle { d_theta, d_input })
    }

    /// Forward pass that records pre- and post-activations in `ws`. The hot
    /// training loop reuses one `Scratch` across thousands of calls.
    pub(crate) fn forward_ws(&self, z: &[f64], ws: &mut Scratch) -> f64 {
        debug_assert_eq!(z.len(), self.dims[0]);
        ws.acts[0].copy_from_slice(z);
        let layers = self.dims.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let base = self.offsets[l];
            let bias_base = base + fan_out * fan_in;
            let last = l == layers - 1;
            for o in 0..fan_out {
                let wrow = &self.params[base + o * fan_in..base + (o + 1) * fan_in];
                let mut pre = self.params[bias_base + o];
                for (w, a) in wrow.iter().zip(&ws.acts[l]) {
                    pre += w * a;
                }
                ws.pres[l][o] = pre;
                ws.acts[l + 1][o] = if last { pre } else { self.activation.apply(pre) };
            }
        }
        ws.acts[layers][0]
    }

    /// Backprop from the state left by the last `forward_ws` call:
    /// accumulates `scale * d_theta` into `acc_theta` and writes
    /// `scale * d_input` into `d_input`.
    pub(crate) fn backward_ws(
        &self,
        ws: &Scratch,
        scale: f64,
        acc_theta: &mut [f64],
        d_input: &mut [f64],
    ) {
        debug_assert_eq!(acc_theta.len(), self.params.len());
        debug_assert_eq!(d_input.len(), self.dims[0]);
        let layers = self.dims.len() - 1;

        // delta holds ∂out/∂pre of the current layer, starting at the linear
        // scalar output.
        let mut delta = vec![scale];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let base = self.offsets[l];
            let bias_base = base + fan_out * fan_in;

            let mut delta_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let dv = delta[o];
                acc_theta[bias_base + o] += dv;
                let wbase = base + o * fan_in;
                for i in 0..fan_in {
                    acc_theta[wbase + i] += dv * ws.acts[l][i];
                    delta_prev[i] += dv * self.params[wbase + i];
                }
            }
            if l > 0 {
                for i in 0..fan_in {
                    delta_prev[i] *= self.activation.derivative(ws.pres[l - 1][i]);
                }
                delta = delta_prev;
            } else {
                d_input.copy_from_slice(&delta_prev);
            }
        }
    }
}

/// Reusable forward/backward buffers for one network shape.
pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

impl Scratch {
    pub(crate) fn new(net: &PotentialNetwork) -> Scratch {
        Scratch {
            acts: net.dims.iter().map(|&d| vec![0.0; d]).collect(),
            pres: net.dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net =
            PotentialNetwork::from_parts(vec![2, 3, 1], Activation::Relu, vec![0.0; 13]).unwrap();
        assert_eq!(net.forward(&[5.0, -7.0]).unwrap(), 0.0);
        let g = net.backward(&[5.0, -7.0]).unwrap();
        assert!(g.d_input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_network_and_gradients() {
        // dims [2, 1]: weights (3, -2), bias 0.5 → ψ(z) = 3 z1 - 2 z2 + 0.5
        let net = PotentialNetwork::from_parts(
            vec![2, 1],
            Activation::Relu,
            vec![3.0, -2.0, 0.5],
        )
        .unwrap();
        let z = [1.5, 2.0];
        assert_abs_diff_eq!(net.forward(&z).unwrap(), 3.0 * 1.5 - 2.0 * 2.0 + 0.5);
        let g = net.backward(&z).unwrap();
        assert_eq!(g.d_input, vec![3.0, -2.0]);
        assert_eq!(g.d_theta, vec![1.5, 2.0, 1.0]); // (z, 1)
    }

    #[test]
    fn single_relu_unit_clips_negative_input() {
        // [1, 1, 1], all weights 1, biases 0: ψ(z) = relu(z).
        let net = PotentialNetwork::from_parts(
            vec![1, 1, 1],
            Activation::Relu,
            vec![1.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[-2.0]).unwrap(), 0.0);
        assert_eq!(net.forward(&[2.0]).unwrap(), 2.0);
    }

    #[test]
    fn init_network_shapes_and_determinism() {
        let tiny = init_network(&[1, 1], Activation::Relu, RngSeed::new(1)).unwrap();
        assert_eq!(tiny.param_count(), 2);
        assert_eq!(tiny.params()[1], 0.0); // bias zero

        let net = init_network(&[2, 32, 32, 1], Activation::Relu, RngSeed::new(9)).unwrap();
        assert_eq!(net.param_count(), 2 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
        assert_eq!(net.param_count(), 1185);

        let again = init_network(&[2, 32, 32, 1], Activation::Relu, RngSeed::new(9)).unwrap();
        assert_eq!(net, again);
        let other = init_network(&[2, 32, 32, 1], Activation::Relu, RngSeed::new(10)).unwrap();
        assert_ne!(net, other);
    }

    #[test]
    fn init_network_rejects_bad_dims() {
        assert!(matches!(
            init_network(&[2], Activation::Relu, RngSeed::new(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            init_network(&[2, 4, 2], Activation::Relu, RngSeed::new(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            init_network(&[2, 0, 1], Activation::Relu, RngSeed::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = init_network(&[3, 4, 1], Activation::Tanh, RngSeed::new(2)).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Dimension(_))));
        assert!(matches!(net.backward(&[1.0]), Err(Error::Dimension(_))));
    }

    /// Central finite differences over every parameter and every input
    /// coordinate. Returns (fd_theta, fd_input).
    fn finite_difference(net: &PotentialNetwork, z: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
        let mut fd_theta = Vec::with_capacity(net.param_count());
        for p in 0..net.param_count() {
            let mut plus = net.clone();
            plus.params_mut()[p] += h;
            let mut minus = net.clone();
            minus.params_mut()[p] -= h;
            fd_theta
                .push((plus.forward(z).unwrap() - minus.forward(z).unwrap()) / (2.0 * h));
        }
        let mut fd_input = Vec::with_capacity(z.len());
        for i in 0..z.len() {
            let mut zp = z.to_vec();
            zp[i] += h;
            let mut zm = z.to_vec();
            zm[i] -= h;
            fd_input.push((net.forward(&zp).unwrap() - net.forward(&zm).unwrap()) / (2.0 * h));
        }
        (fd_theta, fd_input)
    }

    /// True when every pre-activation is at a safe distance from a RELU
    /// kink, so finite differences see a locally smooth function.
    fn away_from_kinks(net: &PotentialNetwork, z: &[f64]) -> bool {
        if net.activation() == Activation::Tanh {
            return true;
        }
        let mut ws = Scratch::new(net);
        net.forward_ws(z, &mut ws);
        ws.pres
            .iter()
            .take(net.dims().len() - 2) // hidden layers only
            .all(|layer| layer.iter().all(|p| p.abs() > 1e-3))
    }

    #[test]
    fn gradients_match_finite_differences() {
        let architectures: [&[usize]; 3] = [&[1, 1], &[1, 16, 1], &[2, 32, 32, 1]];
        let mut rng = RngSeed::new(31).rng();
        let mut checked = 0;
        'outer: for trial in 0..400 {
            let dims = architectures[trial % architectures.len()];
            let activation = if trial % 2 == 0 {
                Activation::Relu
            } else {
                Activation::Tanh
            };
            let net = init_network(dims, activation, RngSeed::new(1000 + trial as u64)).unwrap();
            let z: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            if !away_from_kinks(&net, &z) {
                continue 'outer;
            }
            let g = net.backward(&z).unwrap();
            let (fd_theta, fd_input) = finite_difference(&net, &z, 1e-5);
            for (a, b) in g.d_theta.iter().zip(&fd_theta) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-5);
            }
            for (a, b) in g.d_input.iter().zip(&fd_input) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-5);
            }
            checked += 1;
            if checked >= 100 {
                break;
            }
        }
        assert!(checked >= 100, "only {checked} kink-free instances found");
    }

    /// Largest singular value by power iteration on W^T W.
    fn spectral_norm(w: &Matrix) -> f64 {
        let mut v = vec![1.0; w.cols()];
        let mut sigma = 0.0;
        for _ in 0..100 {
            // u = W v; v' = W^T u
            let mut u = vec![0.0; w.rows()];
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    u[r] += w[(r, c)] * v[c];
                }
            }
            let mut vn = vec![0.0; w.cols()];
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    vn[c] += w[(r, c)] * u[r];
                }
            }
            let norm = vn.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            for x in vn.iter_mut() {
                *x /= norm;
            }
            sigma = norm.sqrt();
            v = vn;
        }
        sigma
    }

    #[test]
    fn tanh_network_is_lipschitz_with_spectral_bound() {
        let mut rng = RngSeed::new(77).rng();
        for trial in 0..20 {
            let net = init_network(&[2, 8, 8, 1], Activation::Tanh, RngSeed::new(trial)).unwrap();
            let bound: f64 = (0..3).map(|l| spectral_norm(&net.weights(l))).product();
            for _ in 0..50 {
                let z1: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
                let z2: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
                let df = (net.forward(&z1).unwrap() - net.forward(&z2).unwrap()).abs();
                let dz = ((z1[0] - z2[0]).powi(2) + (z1[1] - z2[1]).powi(2)).sqrt();
                assert!(df <= bound * dz + 1e-12, "{df} > {bound} * {dz}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = init_network(&[2, 32, 32, 1], Activation::Relu, RngSeed::new(5)).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        assert!(json.contains("\"dims\":[2,32,32,1]"));
        assert!(json.contains("\"activation\":\"relu\""));
        let back: PotentialNetwork = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }

    proptest! {
        #[test]
        fn forward_is_pure_and_deterministic(
            seed in 0u64..1000,
            z in proptest::collection::vec(-5.0..5.0f64, 2),
        ) {
            let net = init_network(&[2, 8, 1], Activation::Relu, RngSeed::new(seed)).unwrap();
            let a = net.forward(&z).unwrap();
            let b = net.forward(&z).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.is_finite());
        }
    }
}
