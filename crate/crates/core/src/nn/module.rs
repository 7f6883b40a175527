//! The compensation network `Q = W_h . a . ... . W_2 . a . W_1`: a plain dense
//! stack without biases, with rational activations between layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rational::{RationalActivation, COEFF_COUNT};
use crate::error::{check_len, Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = self * x`
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `out = self^T * y`
    pub fn matvec_transposed_into(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), out);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// What the network is fed at each solver step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputForm {
    /// The integration term `S` itself.
    #[default]
    Slope,
    /// `S * dt`.
    SlopeTimesStep,
}

/// Architectural switches that sit around the dense stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleOptions {
    /// Adds the network input to its output (residual variant).
    pub skip: bool,
    pub input_form: InputForm,
    /// Constant added to every output; 1 makes a zero-initialised module
    /// start at the all-ones vector for multiplicative steps.
    pub output_offset: f64,
    /// One coefficient set per hidden unit instead of one per layer.
    pub per_neuron_activation: bool,
    pub learnable_activation: bool,
}

impl Default for ModuleOptions {
    fn default() -> Self {
        Self {
            skip: false,
            input_form: InputForm::Slope,
            output_offset: 0.0,
            per_neuron_activation: false,
            learnable_activation: true,
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 1024;
pub const DEFAULT_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionModule {
    pub dim: usize,
    pub hidden: usize,
    pub depth: usize,
    /// `W_1 .. W_h`.
    pub weights: Vec<Matrix>,
    /// One entry per hidden layer (`depth - 1`); each holds either a single
    /// shared coefficient set or one per unit.
    pub activations: Vec<Vec<RationalActivation>>,
    pub options: ModuleOptions,
}

/// Intermediate values of one forward pass, consumed by [`mlp_backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// Gradient buffers congruent with an [`AttentionModule`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub activations: Vec<Vec<[f64; COEFF_COUNT]>>,
}

pub(crate) fn layer_shape(dim: usize, hidden: usize, depth: usize, layer: usize) -> (usize, usize) {
    let cols = if layer == 0 { dim } else { hidden };
    let rows = if layer + 1 == depth { dim } else { hidden };
    (rows, cols)
}

/// Builds a module with Glorot-uniform hidden weights, a zero output layer
/// and activations at the fitted ReLU approximation.
pub fn init_module(dim: usize, hidden: usize, depth: usize, seed: u64) -> Result<AttentionModule> {
    init_module_with(dim, hidden, depth, seed, ModuleOptions::default())
}

pub fn init_module_with(
    dim: usize,
    hidden: usize,
    depth: usize,
    seed: u64,
    options: ModuleOptions,
) -> Result<AttentionModule> {
    if dim == 0 || hidden == 0 || depth == 0 {
        return Err(Error::InvalidArgument(format!(
            "module sizes must be positive (d={dim}, d1={hidden}, h={depth})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..depth)
        .map(|layer| {
            let (rows, cols) = layer_shape(dim, hidden, depth, layer);
            let mut m = Matrix::zeros(rows, cols);
            if layer + 1 < depth {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                m.data.iter_mut().for_each(|w| *w = rng.gen_range(-bound..=bound));
            }
            m
        })
        .collect();
    let mut act = RationalActivation::relu_fit();
    act.learnable = options.learnable_activation;
    let sets = if options.per_neuron_activation { hidden } else { 1 };
    let activations = (0..depth - 1).map(|_| vec![act; sets]).collect();
    Ok(AttentionModule {
        dim,
        hidden,
        depth,
        weights,
        activations,
        options,
    })
}

impl AttentionModule {
    #[inline]
    fn activation_for(&self, layer: usize, unit: usize) -> &RationalActivation {
        let sets = &self.activations[layer];
        if sets.len() == 1 {
            &sets[0]
        } else {
            &sets[unit]
        }
    }

    fn finish_output(&self, input: &[f64], out: &mut [f64]) {
        if self.options.skip {
            for (o, x) in out.iter_mut().zip(input) {
                *o += x;
            }
        }
        if self.options.output_offset != 0.0 {
            out.iter_mut().for_each(|o| *o += self.options.output_offset);
        }
    }

    /// Forward pass without keeping intermediates.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("module input", self.dim, input.len())?;
        let mut z = input.to_vec();
        for (layer, w) in self.weights.iter().enumerate() {
            let mut y = vec![0.0; w.rows];
            w.matvec_into(&z, &mut y);
            if layer + 1 < self.depth {
                for (unit, v) in y.iter_mut().enumerate() {
                    let act = self.activation_for(layer, unit);
                    *v = act.value(*v).ok_or_else(|| Error::ActivationSingularity {
                        layer,
                        unit,
                        x: *v,
                        denominator: act.denominator_at(*v),
                    })?;
                }
            }
            z = y;
        }
        self.finish_output(input, &mut z);
        Ok(z)
    }

    /// Forward pass that records what [`mlp_backward`] needs.
    pub fn forward_cached(&self, input: &[f64], cache: &mut ForwardCache) -> Result<Vec<f64>> {
        check_len("module input", self.dim, input.len())?;
        cache.input.clear();
        cache.input.extend_from_slice(input);
        cache.pre.resize(self.depth - 1, Vec::new());
        cache.post.resize(self.depth - 1, Vec::new());
        let mut out = vec![0.0; self.dim];
        for (layer, w) in self.weights.iter().enumerate() {
            let z: &[f64] = if layer == 0 { &cache.input } else { &cache.post[layer - 1] };
            if layer + 1 == self.depth {
                w.matvec_into(z, &mut out);
                break;
            }
            let mut pre = std::mem::take(&mut cache.pre[layer]);
            pre.resize(w.rows, 0.0);
            w.matvec_into(z, &mut pre);
            let mut post = std::mem::take(&mut cache.post[layer]);
            post.clear();
            for (unit, &x) in pre.iter().enumerate() {
                let act = self.activation_for(layer, unit);
                let v = act.value(x).ok_or_else(|| Error::ActivationSingularity {
                    layer,
                    unit,
                    x,
                    denominator: act.denominator_at(x),
                })?;
                post.push(v);
            }
            cache.pre[layer] = pre;
            cache.post[layer] = post;
        }
        self.finish_output(input, &mut out);
        Ok(out)
    }

    /// Number of scalar parameters (weights then activation coefficients).
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.activations.iter().map(|l| l.len() * COEFF_COUNT).sum::<usize>()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in &self.weights {
            out.extend_from_slice(&w.data);
        }
        for layer in &self.activations {
            for act in layer {
                out.extend_from_slice(&act.coeffs());
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("flat parameters", self.param_count(), params.len())?;
        let mut offset = 0;
        for w in &mut self.weights {
            let n = w.data.len();
            w.data.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        for layer in &mut self.activations {
            for act in layer {
                act.set_coeffs(&params[offset..offset + COEFF_COUNT]);
                offset += COEFF_COUNT;
            }
        }
        Ok(())
    }

    /// Per-parameter trainability, in flat order.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.weights.iter().map(|w| w.data.len()).sum()];
        for layer in &self.activations {
            for act in layer {
                mask.extend(std::iter::repeat_n(act.learnable, COEFF_COUNT));
            }
        }
        mask
    }

    /// True when the module outputs exactly zero for every input.
    pub fn is_zero_output(&self) -> bool {
        self.weights.last().is_none_or(|w| w.data.iter().all(|v| *v == 0.0))
            && !self.options.skip
            && self.options.output_offset == 0.0
    }
}

/// `Q[input | phi]`, returning the output and the cache for backward.
pub fn mlp_forward(input: &[f64], module: &AttentionModule) -> Result<(Vec<f64>, ForwardCache)> {
    let mut cache = ForwardCache::default();
    let out = module.forward_cached(input, &mut cache)?;
    Ok((out, cache))
}

/// Accumulates `d(upstream . Q)/d(phi)` into `grads`.
pub fn mlp_backward(
    upstream: &[f64],
    cache: &ForwardCache,
    module: &AttentionModule,
    grads: &mut GradientSet,
) -> Result<()> {
    check_len("upstream gradient", module.dim, upstream.len())?;
    check_len("cached input", module.dim, cache.input.len())?;
    check_len("cached layers", module.depth - 1, cache.pre.len())?;
    check_len("gradient layers", module.depth, grads.weights.len())?;
    for (layer, pre) in cache.pre.iter().enumerate() {
        check_len("cached pre-activation", module.hidden, pre.len())?;
        check_len(
            "activation gradient sets",
            module.activations[layer].len(),
            grads.activations[layer].len(),
        )?;
    }

    let mut delta = upstream.to_vec();
    for layer in (0..module.depth).rev() {
        let w = &module.weights[layer];
        let z: &[f64] = if layer == 0 { &cache.input } else { &cache.post[layer - 1] };
        let gw = &mut grads.weights[layer];
        for (i, &di) in delta.iter().enumerate() {
            if di != 0.0 {
                axpy(di, z, &mut gw[i * w.cols..(i + 1) * w.cols]);
            }
        }
        if layer == 0 {
            break;
        }
        // Back through W_layer into the activation of hidden layer `layer - 1`.
        let hidden_layer = layer - 1;
        let mut dz = vec![0.0; w.cols];
        w.matvec_transposed_into(&delta, &mut dz);
        let pre = &cache.pre[hidden_layer];
        let shared = module.activations[hidden_layer].len() == 1;
        let gact = &mut grads.activations[hidden_layer];
        for (unit, (d, &x)) in dz.iter_mut().zip(pre).enumerate() {
            let act = module.activation_for(hidden_layer, unit);
            let e = act.eval(x).ok_or_else(|| Error::ActivationSingularity {
                layer: hidden_layer,
                unit,
                x,
                denominator: act.denominator_at(x),
            })?;
            if act.learnable {
                let slot = &mut gact[if shared { 0 } else { unit }];
                for k in 0..COEFF_COUNT {
                    slot[k] += *d * e.dcoeffs[k];
                }
            }
            *d *= e.dx;
        }
        delta = dz;
    }
    Ok(())
}

impl GradientSet {
    pub fn zeros_like(module: &AttentionModule) -> Self {
        Self {
            weights: module.weights.iter().map(|w| vec![0.0; w.data.len()]).collect(),
            activations: module
                .activations
                .iter()
                .map(|l| vec![[0.0; COEFF_COUNT]; l.len()])
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        self.weights.iter_mut().for_each(|w| w.iter_mut().for_each(|g| *g = 0.0));
        self.activations
            .iter_mut()
            .for_each(|l| l.iter_mut().for_each(|c| *c = [0.0; COEFF_COUNT]));
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.activations.iter_mut().zip(&other.activations) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..COEFF_COUNT {
                    x[k] += y[k];
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| w.iter_mut().for_each(|g| *g *= s));
        self.activations
            .iter_mut()
            .for_each(|l| l.iter_mut().for_each(|c| c.iter_mut().for_each(|g| *g *= s)));
    }

    /// Flat view in the same order as [`AttentionModule::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.weights.iter().flatten().copied().collect();
        for layer in &self.activations {
            for c in layer {
                out.extend_from_slice(c);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|g| g.is_finite())
            && self.activations.iter().flatten().flatten().all(|g| g.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = init_module(3, 5, 3, 1).unwrap();
        m.weights.iter_mut().for_each(|w| w.data.iter_mut().for_each(|v| *v = 0.0));
        // The ReLU fit has a0 != 0, so hidden units are nonzero, but W_h = 0.
        assert_eq!(m.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn fresh_module_is_zero_and_reproducible() {
        let a = init_module(4, 16, 2, 7).unwrap();
        let b = init_module(4, 16, 2, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.is_zero_output());
        assert_eq!(a.forward(&[0.3, 1.0, -4.0, 2.0]).unwrap(), vec![0.0; 4]);
        assert_ne!(a, init_module(4, 16, 2, 8).unwrap());
        assert!(a.activations.iter().flatten().all(|act| act.denominator_root_free()));
    }

    #[test]
    fn sums_inputs_with_identity_activation() {
        let mut m = init_module(3, 1, 2, 0).unwrap();
        m.weights[0].data = vec![1.0; 3];
        m.weights[1].data = vec![1.0; 3];
        m.activations[0][0] = RationalActivation::identity();
        let out = m.forward(&[1.0, 2.0, -0.5]).unwrap();
        assert_eq!(out, vec![2.5; 3]);
    }

    #[test]
    fn shapes_compose_for_all_depths() {
        for depth in 1..=4 {
            let mut m = init_module(3, 6, depth, 2).unwrap();
            m.weights.last_mut().unwrap().data.iter_mut().for_each(|v| *v = 0.1);
            let (out, cache) = mlp_forward(&[0.1, 0.2, 0.3], &m).unwrap();
            assert_eq!(out.len(), 3);
            assert_eq!(cache.pre.len(), depth - 1);
        }
    }

    #[test]
    fn forward_paths_agree() {
        let mut m = init_module(4, 8, 3, 3).unwrap();
        m.weights[2].data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        let x = [0.5, -1.0, 2.0, 0.25];
        let (cached, _) = mlp_forward(&x, &m).unwrap();
        assert_eq!(cached, m.forward(&x).unwrap());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = init_module(2, 4, 2, 0).unwrap();
        let (_, cache) = mlp_forward(&[1.0, 2.0], &m).unwrap();
        let mut g = GradientSet::zeros_like(&m);
        mlp_backward(&[0.0, 0.0], &cache, &m, &mut g).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let m = init_module(2, 4, 2, 0).unwrap();
        let other = init_module(3, 4, 2, 0).unwrap();
        let (_, cache) = mlp_forward(&[1.0, 2.0, 3.0], &other).unwrap();
        let mut g = GradientSet::zeros_like(&m);
        assert!(matches!(
            mlp_backward(&[1.0, 1.0], &cache, &m, &mut g),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_params_round_trip() {
        let m = init_module_with(
            3,
            5,
            3,
            9,
            ModuleOptions {
                per_neuron_activation: true,
                ..Default::default()
            },
        )
        .unwrap();
        let mut copy = m.clone();
        copy.set_flat_params(&vec![0.0; m.param_count()]).unwrap();
        copy.set_flat_params(&m.flat_params()).unwrap();
        assert_eq!(copy, m);
        assert_eq!(m.trainable_mask().len(), m.param_count());
    }

    #[test]
    fn frozen_activations_receive_no_gradient() {
        let mut m = init_module_with(
            2,
            4,
            2,
            5,
            ModuleOptions {
                learnable_activation: false,
                ..Default::default()
            },
        )
        .unwrap();
        m.weights[1].data.iter_mut().for_each(|v| *v = 0.3);
        let (_, cache) = mlp_forward(&[1.0, -1.0], &m).unwrap();
        let mut g = GradientSet::zeros_like(&m);
        mlp_backward(&[1.0, 2.0], &cache, &m, &mut g).unwrap();
        assert!(g.activations[0][0].iter().all(|v| *v == 0.0));
        assert!(g.weights[0].iter().any(|v| *v != 0.0));
    }
}
