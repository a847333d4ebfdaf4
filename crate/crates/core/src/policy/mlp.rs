//! Fully connected tanh network with a linear, scaled output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{Axis, Roi};

/// Network inputs are `(image coordinate, vz, cz)`.
pub const INPUT_DIM: usize = 3;
pub const DEFAULT_LAYER_SIZES: [usize; 5] = [3, 16, 16, 16, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.n_in).zip(&self.biases))
        {
            *o = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
        }
    }
}

/// `x' = (x - shift) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub inputs: [Affine; INPUT_DIM],
}

impl InputScaler {
    pub fn identity() -> Self {
        Self {
            inputs: [Affine {
                shift: 0.0,
                scale: 1.0,
            }; INPUT_DIM],
        }
    }

    /// Maps the RoI ranges of `(coordinate, vz, cz)` onto `[-1, 1]`.
    pub fn from_roi(roi: &Roi, axis: Axis) -> Self {
        let to_unit = |i: crate::lyapunov::Interval| Affine {
            shift: i.mid(),
            scale: 2.0 / i.width(),
        };
        Self {
            inputs: [to_unit(roi.coord(axis)), to_unit(roi.vz), to_unit(roi.cz)],
        }
    }

    pub fn apply(&self, x: [f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        for ((o, v), a) in out.iter_mut().zip(x).zip(&self.inputs) {
            *o = (v - a.shift) * a.scale;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    /// Axis the policy was trained for, if any.
    axis: Option<Axis>,
    input_scaler: InputScaler,
    output_scale: f64,
    layers: Vec<Dense>,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config("a network needs at least two layers".into()));
    }
    if sizes[0] != INPUT_DIM || *sizes.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "layer sizes must start with {INPUT_DIM} and end with 1, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {sizes:?}")));
    }
    Ok(())
}

impl MlpParams {
    /// Xavier-uniform weights and zero biases, identity scaling, unit output scale.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let mut layer = Dense::zeros(n_in, n_out);
                for v in &mut layer.weights {
                    *v = rng.random_range(-limit..=limit);
                }
                layer
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            axis: None,
            input_scaler: InputScaler::identity(),
            output_scale: 1.0,
            layers,
        })
    }

    /// Default-architecture network for `axis`, inputs scaled from `roi`.
    pub fn for_axis(roi: &Roi, axis: Axis, output_scale: f64, seed: u64) -> Result<Self> {
        if !(output_scale.is_finite() && output_scale > 0.0) {
            return Err(Error::Config(format!(
                "output scale must be positive, got {output_scale}"
            )));
        }
        Ok(Self::init(&DEFAULT_LAYER_SIZES, seed)?
            .with_input_scaler(InputScaler::from_roi(roi, axis))
            .with_output_scale(output_scale)
            .with_axis(axis))
    }

    /// All weights and biases zero, so the network outputs 0 everywhere.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        let mut p = Self::init(layer_sizes, 0)?;
        p.params_mut().for_each(|v| *v = 0.0);
        Ok(p)
    }

    pub fn with_input_scaler(mut self, scaler: InputScaler) -> Self {
        self.input_scaler = scaler;
        self
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        self.output_scale = scale;
        self
    }

    pub fn with_axis(mut self, axis: Axis) -> Self {
        self.axis = Some(axis);
        self
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn axis(&self) -> Option<Axis> {
        self.axis
    }

    pub fn input_scaler(&self) -> &InputScaler {
        &self.input_scaler
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameters in storage order: per layer, weights row-major then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        for (p, v) in self.params_mut().zip(flat) {
            *p = *v;
        }
        Ok(())
    }

    /// Structural checks for parameters that came from outside (e.g. a file).
    pub fn validate(&self) -> Result<()> {
        check_sizes(&self.layer_sizes)?;
        if self.layers.len() != self.layer_sizes.len() - 1 {
            return Err(Error::Config(
                "layer count does not match layer sizes".into(),
            ));
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.n_in != w[0]
                || l.n_out != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.biases.len() != w[1]
            {
                return Err(Error::Config(format!(
                    "layer {}x{} does not match sizes {:?}",
                    l.n_out, l.n_in, w
                )));
            }
        }
        if !self.params().all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::Config("output scale must be positive".into()));
        }
        if self
            .input_scaler
            .inputs
            .iter()
            .any(|a| !(a.scale.is_finite() && a.scale > 0.0 && a.shift.is_finite()))
        {
            return Err(Error::Config("input scales must be positive".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: [f64; INPUT_DIM]) -> f64 {
        let mut a = self.input_scaler.apply(input).to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.n_out];
            layer.apply(&a, &mut z);
            if i < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        self.output_scale * a[0]
    }

    /// Bound on `|forward|` that holds for every input, since hidden units lie in `[-1, 1]`.
    pub fn output_bound(&self) -> f64 {
        let last = self.layers.last().unwrap();
        let l1: f64 = last.weights.iter().map(|w| w.abs()).sum();
        if self.layers.len() == 1 {
            // No hidden layer: the output is affine and unbounded.
            return f64::INFINITY;
        }
        self.output_scale * (l1 + last.biases[0].abs())
    }

    /// Mean squared error over `batch` and its gradient in [`MlpParams::params`] order.
    pub fn backward(&self, batch: &[([f64; INPUT_DIM], f64)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Domain("gradient of an empty batch".into()));
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.param_count()];
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.weights.len() + l.biases.len();
                Some(o)
            })
            .collect();

        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = std::iter::once(vec![0.0; INPUT_DIM])
            .chain(self.layers.iter().map(|l| vec![0.0; l.n_out]))
            .collect();
        let max_width = *self.layer_sizes.iter().max().unwrap();
        let mut delta = vec![0.0; max_width];
        let mut prev_delta = vec![0.0; max_width];
        let mut loss = 0.0;

        for (x, target) in batch {
            acts[0].copy_from_slice(&self.input_scaler.apply(*x));
            for (i, layer) in self.layers.iter().enumerate() {
                let (before, after) = acts.split_at_mut(i + 1);
                let out = &mut after[0];
                layer.apply(&before[i], out);
                if i < last {
                    out.iter_mut().for_each(|v| *v = v.tanh());
                }
            }
            let y = self.output_scale * acts[last + 1][0];
            let err = y - target;
            loss += err * err;

            delta[0] = 2.0 * err / n * self.output_scale;
            for i in (0..=last).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                let off = offsets[i];
                let (gw, gb) = grad[off..off + layer.weights.len() + layer.biases.len()]
                    .split_at_mut(layer.weights.len());
                for o in 0..layer.n_out {
                    let d = delta[o];
                    gb[o] += d;
                    for (g, a) in gw[o * layer.n_in..(o + 1) * layer.n_in]
                        .iter_mut()
                        .zip(input)
                    {
                        *g += d * a;
                    }
                }
                if i > 0 {
                    for j in 0..layer.n_in {
                        let mut s = 0.0;
                        for o in 0..layer.n_out {
                            s += layer.weights[o * layer.n_in + j] * delta[o];
                        }
                        let a = input[j];
                        prev_delta[j] = s * (1.0 - a * a);
                    }
                    std::mem::swap(&mut delta, &mut prev_delta);
                }
            }
        }
        Ok((loss / n, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_architecture_has_625_parameters() {
        let p = MlpParams::init(&DEFAULT_LAYER_SIZES, 1).unwrap();
        assert_eq!(p.param_count(), 3 * 16 + 16 + 2 * (16 * 16 + 16) + 16 + 1);
        assert_eq!(p.param_count(), 625);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(&DEFAULT_LAYER_SIZES, 7).unwrap();
        let b = MlpParams::init(&DEFAULT_LAYER_SIZES, 7).unwrap();
        let bits = |p: &MlpParams| p.params().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = MlpParams::init(&DEFAULT_LAYER_SIZES, 8).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn init_respects_xavier_range() {
        let p = MlpParams::init(&DEFAULT_LAYER_SIZES, 3).unwrap();
        for l in p.layers() {
            let lim = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= lim));
            assert!(l.biases.iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn bad_sizes_are_rejected() {
        for sizes in [&[3usize][..], &[2, 16, 1], &[3, 16, 2], &[3, 0, 1]] {
            assert!(matches!(MlpParams::init(sizes, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_final_layer_gives_zero_output() {
        let mut p = MlpParams::init(&DEFAULT_LAYER_SIZES, 5)
            .unwrap()
            .with_output_scale(30.0);
        let last = p.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.biases[0] = 0.0;
        for x in [[0.5, 15.0, 10.0], [-1.0, 0.1, 0.5], [0.0, 3.0, 49.0]] {
            assert_eq!(p.forward(x), 0.0);
        }
    }

    #[test]
    fn output_is_bounded() {
        let p = MlpParams::init(&DEFAULT_LAYER_SIZES, 0)
            .unwrap()
            .with_output_scale(30.0);
        let bound = p.output_bound();
        for x in [[1e6, -1e6, 3.0], [0.0, 0.0, 0.0], [-5.0, 100.0, 0.5]] {
            let y = p.forward(x);
            assert!(y.is_finite());
            assert!(y.abs() <= bound);
        }
    }

    #[test]
    fn scaler_maps_roi_to_unit_box() {
        let s = InputScaler::from_roi(&Roi::default(), Axis::X);
        assert_eq!(s.apply([-1.0, 0.1, 0.5]), [-1.0, -1.0, -1.0]);
        let hi = s.apply([1.0, 15.0, 50.0]);
        for v in hi {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        let p = MlpParams::init(&DEFAULT_LAYER_SIZES, 2).unwrap();
        let x = [0.3, 5.0, 7.0];
        let (loss, g) = p.backward(&[(x, p.forward(x))]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let p = MlpParams::init(&DEFAULT_LAYER_SIZES, 4).unwrap();
        let batch = vec![([0.3, 5.0, 7.0], 1.0), ([-0.6, 12.0, 40.0], -2.0)];
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).copied().collect();
        let (l1, g1) = p.backward(&batch).unwrap();
        let (l2, g2) = p.backward(&doubled).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-14);
        for (a, b) in g1.iter().zip(&g2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = MlpParams::init(&DEFAULT_LAYER_SIZES, 4).unwrap();
        assert!(matches!(p.backward(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut p = MlpParams::init(&DEFAULT_LAYER_SIZES, 9).unwrap();
        let mut flat = p.flat_params();
        flat[0] = 42.0;
        p.set_flat_params(&flat).unwrap();
        assert_eq!(p.layers()[0].weights[0], 42.0);
        assert!(p.set_flat_params(&flat[1..]).is_err());
    }
}
