//! Minimal dense feed-forward networks over f64 with hand-written
//! reverse-mode gradients, an adaptive-moment optimizer and hard target
//! synchronization. Small enough to stay deterministic and checkable by
//! finite differences; all Q-networks, evaluation networks and the
//! autoencoder run on top of this.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input dimension {got} does not match network input {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("non-finite gradient in layer {layer} at index {index}: {value}")]
    NonFiniteGradient { layer: usize, index: usize, value: f64 },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint shape mismatch: {0}")]
    BadCheckpoint(String),
}

/// Architecture: rectifier hidden layers, identity output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1, "dims must be >= 1");
        assert!(hidden.iter().all(|&h| h >= 1), "hidden widths must be >= 1");
        NetSpec { input_dim, hidden, output_dim }
    }

    /// Layer shapes as (fan_in, fan_out) pairs.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DenseLayer {
    /// Row-major (fan_out x fan_in).
    w: Vec<f64>,
    b: Vec<f64>,
    #[serde(skip)]
    fan_in: usize,
}

impl DenseLayer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        let fan_out = self.b.len();
        out.clear();
        out.reserve(fan_out);
        for o in 0..fan_out {
            let row = &self.w[o * self.fan_in..(o + 1) * self.fan_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Adaptive-moment state, one slot per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Parameters plus optimizer moments for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    spec: NetSpec,
    layers: Vec<DenseLayer>,
    adam: AdamState,
}

/// Per-layer activations kept from a cached forward pass.
pub struct ForwardCache {
    /// activations[0] is the input; activations[i] the post-rectifier output
    /// of hidden layer i; the final entry is the network output.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers only.
    preacts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    /// Smallest rectifier pre-activation magnitude seen in this pass.
    pub fn kink_margin(&self) -> f64 {
        self.preacts
            .iter()
            .flat_map(|z| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gradient accumulator with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(spec: &NetSpec) -> Self {
        let dims = spec.layer_dims();
        Gradients {
            dw: dims.iter().map(|(i, o)| vec![0.0; i * o]).collect(),
            db: dims.iter().map(|(_, o)| vec![0.0; *o]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.dw.iter_mut().chain(self.db.iter_mut()) {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }
}

impl Net {
    /// Fan-in-scaled uniform initialization.
    pub fn init(spec: NetSpec, rng: &mut ChaCha12Rng) -> Self {
        let dims = spec.layer_dims();
        let layers = dims
            .iter()
            .map(|&(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                DenseLayer {
                    w: (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect(),
                    b: (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect(),
                    fan_in,
                }
            })
            .collect();
        let adam = AdamState {
            t: 0,
            m: dims.iter().map(|(i, o)| vec![0.0; i * o + o]).collect(),
            v: dims.iter().map(|(i, o)| vec![0.0; i * o + o]).collect(),
        };
        Net { spec, layers, adam }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).output().to_vec()
    }

    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        assert_eq!(
            input.len(),
            self.spec.input_dim,
            "input dim {} != spec {}",
            input.len(),
            self.spec.input_dim
        );
        let n_hidden = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(n_hidden);
        activations.push(input.to_vec());
        let mut buf = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            layer.apply(activations.last().unwrap(), &mut buf);
            if li < n_hidden {
                preacts.push(buf.clone());
                activations.push(buf.iter().map(|z| z.max(0.0)).collect());
            } else {
                activations.push(buf.clone());
            }
        }
        ForwardCache { activations, preacts }
    }

    /// Accumulates dL/dparams into `grads` given dL/doutput for one sample.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grads: &mut Gradients) {
        let n_layers = self.layers.len();
        let mut delta = dout.to_vec();
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            let x = &cache.activations[li];
            let fan_out = layer.b.len();
            let dw = &mut grads.dw[li];
            let db = &mut grads.db[li];
            for o in 0..fan_out {
                db[o] += delta[o];
                let row = &mut dw[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (slot, xi) in row.iter_mut().zip(x) {
                    *slot += delta[o] * xi;
                }
            }
            if li > 0 {
                let mut prev_delta = vec![0.0; layer.fan_in];
                for o in 0..fan_out {
                    let row = &layer.w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (pd, wi) in prev_delta.iter_mut().zip(row) {
                        *pd += delta[o] * wi;
                    }
                }
                // Rectifier gate of the layer below.
                let z = &cache.preacts[li - 1];
                for (pd, zi) in prev_delta.iter_mut().zip(z) {
                    if *zi <= 0.0 {
                        *pd = 0.0;
                    }
                }
                delta = prev_delta;
            }
        }
    }

    /// One adaptive-moment update. Rejects non-finite gradients.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<(), NeuralError> {
        for (li, (gw, gb)) in grads.dw.iter().zip(&grads.db).enumerate() {
            for (idx, g) in gw.iter().chain(gb.iter()).enumerate() {
                if !g.is_finite() {
                    return Err(NeuralError::NonFiniteGradient { layer: li, index: idx, value: *g });
                }
            }
        }
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let nw = layer.w.len();
            let m = &mut self.adam.m[li];
            let v = &mut self.adam.v[li];
            let gw = &grads.dw[li];
            let gb = &grads.db[li];
            for (j, slot) in layer.w.iter_mut().chain(layer.b.iter_mut()).enumerate() {
                let g = if j < nw { gw[j] } else { gb[j - nw] };
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *slot -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    /// Hard copy of weights from `source`; optimizer moments are untouched.
    pub fn sync_from(&mut self, source: &Net) {
        assert_eq!(self.spec, source.spec, "target-sync across different specs");
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.w.copy_from_slice(&src.w);
            dst.b.copy_from_slice(&src.b);
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NeuralError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Net, NeuralError> {
        let text = std::fs::read_to_string(path)?;
        let mut net: Net = serde_json::from_str(&text)?;
        // fan_in is derived, not serialized.
        let dims = net.spec.layer_dims();
        if dims.len() != net.layers.len() {
            return Err(NeuralError::BadCheckpoint("layer count".into()));
        }
        for (layer, (fan_in, fan_out)) in net.layers.iter_mut().zip(dims) {
            if layer.w.len() != fan_in * fan_out || layer.b.len() != fan_out {
                return Err(NeuralError::BadCheckpoint("tensor shape".into()));
            }
            layer.fan_in = fan_in;
        }
        Ok(net)
    }

    fn param_slots(&mut self) -> Vec<*mut f64> {
        let mut slots = Vec::with_capacity(self.num_params());
        for layer in self.layers.iter_mut() {
            for w in layer.w.iter_mut() {
                slots.push(w as *mut f64);
            }
            for b in layer.b.iter_mut() {
                slots.push(b as *mut f64);
            }
        }
        slots
    }
}

/// Compares the analytic gradient of the scalar head `sum(outputs)` against
/// central differences over every parameter. Parameters whose perturbation
/// flips a rectifier sign are skipped. Returns the max relative error.
pub fn finite_diff_check(net: &mut Net, input: &[f64], h: f64) -> f64 {
    assert!(h > 0.0);
    let cache = net.forward_cached(input);
    let mut grads = Gradients::zeros(net.spec());
    let dout = vec![1.0; net.spec().output_dim];
    net.backward(&cache, &dout, &mut grads);
    let mut analytic = Vec::with_capacity(net.num_params());
    for (gw, gb) in grads.dw.iter().zip(&grads.db) {
        analytic.extend(gw.iter().copied());
        analytic.extend(gb.iter().copied());
    }

    let relu_signs = |c: &ForwardCache| -> Vec<bool> {
        c.preacts.iter().flat_map(|z| z.iter().map(|v| *v > 0.0)).collect()
    };

    let slots = net.param_slots();
    let mut max_rel = 0.0_f64;
    for (k, slot) in slots.iter().enumerate() {
        // Safe: slots borrow disjoint scalars living as long as `net`.
        unsafe {
            let original = **slot;
            **slot = original + h;
            let plus = net.forward_cached(input);
            **slot = original - h;
            let minus = net.forward_cached(input);
            **slot = original;
            if relu_signs(&plus) != relu_signs(&minus) {
                continue; // crossed a kink
            }
            let fd = (plus.output().iter().sum::<f64>() - minus.output().iter().sum::<f64>())
                / (2.0 * h);
            let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[k] - fd).abs() / denom);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_net_is_affine_map() {
        let mut net = Net::init(NetSpec::new(3, vec![], 2), &mut rng(1));
        net.layers[0].w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        net.layers[0].b = vec![0.5, -0.5];
        let out = net.forward(&[1.0, 1.0, 1.0]);
        assert_eq!(out, vec![6.5, 14.5]);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mut net = Net::init(NetSpec::new(2, vec![4], 3), &mut rng(2));
        for layer in net.layers.iter_mut() {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
        }
        net.layers[1].b = vec![1.0, 2.0, 3.0];
        // hidden biases rectify to >= 0 but contribute nothing through zero weights
        let out = net.forward(&[10.0, -3.0]);
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Net::init(NetSpec::new(5, vec![16, 16], 4), &mut rng(3));
        let x = [0.1, -0.4, 2.0, 0.0, 1.0];
        assert_eq!(net.forward(&x), net.forward(&x));
    }

    #[test]
    fn linear_gradient_is_exact() {
        let mut net = Net::init(NetSpec::new(4, vec![], 1), &mut rng(4));
        let err = finite_diff_check(&mut net, &[0.3, -1.2, 0.8, 2.0], 1e-5);
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn deep_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut net = Net::init(NetSpec::new(6, vec![12, 12], 3), &mut rng(seed));
            let mut r = rng(100 + seed);
            let x: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
            let err = finite_diff_check(&mut net, &x, 1e-5);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn adam_solves_scalar_quadratic() {
        // Minimize (x - 3)^2 with a single-weight "network".
        let mut net = Net::init(NetSpec::new(1, vec![], 1), &mut rng(5));
        net.layers[0].w[0] = 0.0;
        net.layers[0].b[0] = 0.0;
        for _ in 0..10_000 {
            let x = net.layers[0].w[0];
            let mut grads = Gradients::zeros(net.spec());
            grads.dw[0][0] = 2.0 * (x - 3.0);
            net.adam_step(&grads, 1e-2).unwrap();
        }
        let x = net.layers[0].w[0];
        assert!((x - 3.0).abs() < 1e-3, "x = {x}");
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut net = Net::init(NetSpec::new(2, vec![4], 2), &mut rng(6));
        let before = net.clone();
        let grads = Gradients::zeros(net.spec());
        net.adam_step(&grads, 0.1).unwrap();
        assert_eq!(before.layers, net.layers);
        assert_eq!(net.adam.t, 1);
    }

    #[test]
    fn identical_nets_make_identical_updates() {
        let mut a = Net::init(NetSpec::new(3, vec![8], 2), &mut rng(7));
        let mut b = a.clone();
        let x = [0.2, 0.4, -0.6];
        for net in [&mut a, &mut b] {
            let cache = net.forward_cached(&x);
            let mut grads = Gradients::zeros(net.spec());
            net.backward(&cache, &[1.0, -1.0], &mut grads);
            net.adam_step(&grads, 1e-3).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut net = Net::init(NetSpec::new(2, vec![], 1), &mut rng(8));
        let mut grads = Gradients::zeros(net.spec());
        grads.dw[0][0] = f64::NAN;
        assert!(net.adam_step(&grads, 1e-3).is_err());
    }

    #[test]
    fn target_sync_copies_exactly() {
        let source = Net::init(NetSpec::new(4, vec![8], 3), &mut rng(9));
        let mut target = Net::init(NetSpec::new(4, vec![8], 3), &mut rng(10));
        let x = [1.0, 0.0, -1.0, 0.5];
        assert_ne!(source.forward(&x), target.forward(&x));
        target.sync_from(&source);
        assert_eq!(source.forward(&x), target.forward(&x));
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let mut net = Net::init(NetSpec::new(3, vec![5], 2), &mut rng(11));
        // Give the moments some history so the round trip covers them.
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]);
        let mut grads = Gradients::zeros(net.spec());
        net.backward(&cache, &[1.0, 1.0], &mut grads);
        net.adam_step(&grads, 1e-3).unwrap();
        net.save(&path).unwrap();
        let loaded = Net::load(&path).unwrap();
        assert_eq!(net, loaded);
    }
}
