//! Finite-dimensional parameter spaces: Euclidean boxes, linear basis
//! expansions, and small dense multilayer networks with weight and output
//! clipping, plus the width growth schedule used to size networks as the
//! sample grows.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Polynomial,
    Trig,
    /// Bin indicators over a scalar input: one feature per cell of the
    /// partition induced by sorted `edges` (no constant term, since the
    /// indicators already sum to one).
    Indicator { edges: Vec<f64> },
}

#[derive(Debug, Clone)]
pub enum SieveKind {
    /// Coordinates are the output; `eval` ignores its input.
    Euclidean { bounds: Vec<(f64, f64)> },
    /// Linear expansion in fixed features of the input.
    LinearBasis {
        basis: Basis,
        degree: usize,
        input_dim: usize,
        output_dim: usize,
    },
    /// Dense multilayer network, `depth` affine layers. Weights are kept
    /// in [-weight_clip, weight_clip] and the output is squashed smoothly
    /// into [-output_clip, output_clip].
    Network {
        input_dim: usize,
        output_dim: usize,
        depth: usize,
        width: usize,
        max_nonzero: usize,
        weight_clip: f64,
        output_clip: f64,
        activation: Activation,
    },
}

/// A parameter space with coordinate-level operations (dimension, seeded
/// initialization, projection after an optimizer step) and, for function
/// spaces, pointwise evaluation with coordinate gradients.
#[derive(Debug, Clone)]
pub struct Sieve {
    id: String,
    kind: SieveKind,
    /// Affine layers as (fan_in, fan_out); empty unless Network.
    layers: Vec<(usize, usize)>,
    dim: usize,
}

fn feature_count(basis: &Basis, degree: usize, input_dim: usize) -> usize {
    match basis {
        Basis::Polynomial => 1 + input_dim * degree,
        Basis::Trig => 1 + 2 * input_dim * degree,
        Basis::Indicator { edges } => edges.len() + 1,
    }
}

fn features(basis: &Basis, degree: usize, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    if let Basis::Indicator { edges } = basis {
        let b = edges.partition_point(|&e| x[0] >= e);
        out.resize(edges.len() + 1, 0.0);
        out[b] = 1.0;
        return;
    }
    out.push(1.0);
    for &xi in x {
        match basis {
            Basis::Polynomial => {
                let mut p = 1.0;
                for _ in 0..degree {
                    p *= xi;
                    out.push(p);
                }
            }
            Basis::Trig => {
                for k in 1..=degree {
                    let kx = k as f64 * xi;
                    out.push(kx.sin());
                    out.push(kx.cos());
                }
            }
            Basis::Indicator { .. } => unreachable!(),
        }
    }
}

/// d(features)/dx for scalar input; indicator features are flat almost
/// everywhere.
fn features_deriv(basis: &Basis, degree: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    match basis {
        Basis::Polynomial => {
            out.push(0.0);
            let mut p = 1.0;
            for k in 1..=degree {
                out.push(k as f64 * p);
                p *= x;
            }
        }
        Basis::Trig => {
            out.push(0.0);
            for k in 1..=degree {
                let kf = k as f64;
                out.push(kf * (kf * x).cos());
                out.push(-kf * (kf * x).sin());
            }
        }
        Basis::Indicator { edges } => out.resize(edges.len() + 1, 0.0),
    }
}

impl Sieve {
    pub fn new(id: impl Into<String>, kind: SieveKind) -> Result<Self> {
        let id = id.into();
        let (layers, dim) = match &kind {
            SieveKind::Euclidean { bounds } => {
                if bounds.is_empty() {
                    return Err(Error::invalid("euclidean sieve needs at least one coord"));
                }
                for (lo, hi) in bounds {
                    if lo >= hi {
                        return Err(Error::invalid("euclidean bounds must satisfy lo < hi"));
                    }
                }
                (vec![], bounds.len())
            }
            SieveKind::LinearBasis {
                basis,
                degree,
                input_dim,
                output_dim,
            } => {
                if *input_dim == 0 || *output_dim == 0 {
                    return Err(Error::invalid("linear basis dims must be positive"));
                }
                if let Basis::Indicator { edges } = basis {
                    if *input_dim != 1 {
                        return Err(Error::invalid("indicator basis is scalar-input only"));
                    }
                    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::invalid("indicator edges must be sorted and nonempty"));
                    }
                }
                let k = feature_count(basis, *degree, *input_dim);
                (vec![], k * output_dim)
            }
            SieveKind::Network {
                input_dim,
                output_dim,
                depth,
                width,
                max_nonzero,
                weight_clip,
                output_clip,
                ..
            } => {
                if *depth == 0 {
                    return Err(Error::invalid("network depth must be >= 1"));
                }
                if *width < *input_dim {
                    return Err(Error::invalid("network width must be >= input dim"));
                }
                if *weight_clip <= 0.0 || *output_clip <= 0.0 {
                    return Err(Error::invalid("clips must be positive"));
                }
                // Size dense layers so the total parameter count stays
                // within the nonzero budget; the budget governs layer
                // sizing rather than pruning.
                let mut h = *width;
                loop {
                    let layers = layer_shapes(*input_dim, *output_dim, *depth, h);
                    let count: usize = layers.iter().map(|(i, o)| i * o + o).sum();
                    if count <= *max_nonzero || h <= *input_dim.max(&1) {
                        if count > *max_nonzero {
                            return Err(Error::invalid(format!(
                                "max_nonzero {max_nonzero} too small for depth {depth}, input {input_dim}"
                            )));
                        }
                        break (layers, count);
                    }
                    h -= 1;
                }
            }
        };
        Ok(Sieve {
            id,
            kind,
            layers,
            dim,
        })
    }

    pub fn euclidean(id: &str, bounds: Vec<(f64, f64)>) -> Result<Self> {
        Sieve::new(id, SieveKind::Euclidean { bounds })
    }

    pub fn linear(id: &str, basis: Basis, degree: usize, input_dim: usize, output_dim: usize) -> Result<Self> {
        Sieve::new(
            id,
            SieveKind::LinearBasis {
                basis,
                degree,
                input_dim,
                output_dim,
            },
        )
    }

    /// Bin-indicator sieve over a scalar input.
    pub fn binned(id: &str, edges: Vec<f64>, output_dim: usize) -> Result<Self> {
        Sieve::linear(id, Basis::Indicator { edges }, 0, 1, output_dim)
    }

    pub fn euclidean_cube(id: &str, dim: usize, half_width: f64) -> Result<Self> {
        Sieve::euclidean(id, vec![(-half_width, half_width); dim])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &SieveKind {
        &self.kind
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            SieveKind::Euclidean { .. } => 0,
            SieveKind::LinearBasis { input_dim, .. } => *input_dim,
            SieveKind::Network { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            SieveKind::Euclidean { bounds } => bounds.len(),
            SieveKind::LinearBasis { output_dim, .. } => *output_dim,
            SieveKind::Network { output_dim, .. } => *output_dim,
        }
    }

    /// Seeded initialization. Networks draw uniform on
    /// [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        match &self.kind {
            SieveKind::Euclidean { bounds } => bounds
                .iter()
                .map(|&(lo, hi)| {
                    let l = lo.max(-1e3);
                    let h = hi.min(1e3);
                    rng.gen_range(l..h)
                })
                .collect(),
            SieveKind::LinearBasis { .. } => {
                let s = 0.5 / (self.dim as f64).sqrt();
                (0..self.dim).map(|_| rng.gen_range(-s..s)).collect()
            }
            SieveKind::Network { .. } => {
                let mut coords = Vec::with_capacity(self.dim);
                for &(fan_in, fan_out) in &self.layers {
                    let s = 1.0 / (fan_in as f64).sqrt();
                    for _ in 0..fan_in * fan_out + fan_out {
                        coords.push(rng.gen_range(-s..s));
                    }
                }
                coords
            }
        }
    }

    /// Project coordinates back into the admissible set after an optimizer
    /// step: box clamp for Euclidean, weight clamp for networks.
    pub fn clip(&self, coords: &mut [f64]) {
        match &self.kind {
            SieveKind::Euclidean { bounds } => {
                for (c, &(lo, hi)) in coords.iter_mut().zip(bounds) {
                    *c = c.clamp(lo, hi);
                }
            }
            SieveKind::LinearBasis { .. } => {}
            SieveKind::Network { weight_clip, .. } => {
                let k = *weight_clip;
                for c in coords.iter_mut() {
                    *c = c.clamp(-k, k);
                }
            }
        }
    }

    /// Evaluate the function at `x`, writing `output_dim` values.
    pub fn eval(&self, coords: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dims(coords, x, out)?;
        match &self.kind {
            SieveKind::Euclidean { .. } => out.copy_from_slice(coords),
            SieveKind::LinearBasis {
                basis,
                degree,
                output_dim,
                ..
            } => {
                let mut phi = Vec::new();
                features(basis, *degree, x, &mut phi);
                let k = phi.len();
                for j in 0..*output_dim {
                    out[j] = coords[j * k..(j + 1) * k]
                        .iter()
                        .zip(&phi)
                        .map(|(c, p)| c * p)
                        .sum();
                }
            }
            SieveKind::Network {
                output_clip,
                activation,
                ..
            } => {
                let raw = self.forward(coords, x, *activation, None);
                for (o, r) in out.iter_mut().zip(&raw) {
                    *o = output_clip * (r / output_clip).tanh();
                }
            }
        }
        Ok(())
    }

    /// Gradient of `upstream . eval(coords, x)` with respect to coords,
    /// accumulated into `grad` (which must have length `dim`).
    pub fn grad_coords(
        &self,
        coords: &[f64],
        x: &[f64],
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.dim {
            return Err(Error::invalid("gradient buffer has wrong length"));
        }
        match &self.kind {
            SieveKind::Euclidean { .. } => {
                for (g, u) in grad.iter_mut().zip(upstream) {
                    *g += u;
                }
            }
            SieveKind::LinearBasis {
                basis,
                degree,
                output_dim,
                ..
            } => {
                let mut phi = Vec::new();
                features(basis, *degree, x, &mut phi);
                let k = phi.len();
                for j in 0..*output_dim {
                    for (i, p) in phi.iter().enumerate() {
                        grad[j * k + i] += upstream[j] * p;
                    }
                }
            }
            SieveKind::Network {
                output_clip,
                activation,
                ..
            } => {
                let mut trace = NetTrace::default();
                let raw = self.forward(coords, x, *activation, Some(&mut trace));
                // Chain through the smooth output squash.
                let delta: Vec<f64> = raw
                    .iter()
                    .zip(upstream)
                    .map(|(r, u)| u * (1.0 - (r / output_clip).tanh().powi(2)))
                    .collect();
                self.backward(coords, x, *activation, &trace, &delta, grad);
            }
        }
        Ok(())
    }

    /// Number of basis features per output (linear-basis sieves only).
    pub fn feature_dim(&self) -> Result<usize> {
        match &self.kind {
            SieveKind::LinearBasis {
                basis,
                degree,
                input_dim,
                ..
            } => Ok(feature_count(basis, *degree, *input_dim)),
            _ => Err(Error::invalid("feature_dim: not a linear-basis sieve")),
        }
    }

    /// Basis feature vector at `x` (linear-basis sieves only). The
    /// coordinate layout is one contiguous feature block per output.
    pub fn basis_features(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        match &self.kind {
            SieveKind::LinearBasis { basis, degree, .. } => {
                features(basis, *degree, x, out);
                Ok(())
            }
            _ => Err(Error::invalid("basis_features: not a linear-basis sieve")),
        }
    }

    /// d(features)/dx for scalar-input linear-basis sieves.
    pub fn basis_features_deriv(&self, x: f64, out: &mut Vec<f64>) -> Result<()> {
        match &self.kind {
            SieveKind::LinearBasis {
                basis,
                degree,
                input_dim,
                ..
            } => {
                if *input_dim != 1 {
                    return Err(Error::invalid("basis_features_deriv: scalar input only"));
                }
                features_deriv(basis, *degree, x, out);
                Ok(())
            }
            _ => Err(Error::invalid("basis_features_deriv: not a linear-basis sieve")),
        }
    }

    fn check_dims(&self, coords: &[f64], x: &[f64], out: &[f64]) -> Result<()> {
        if coords.len() != self.dim {
            return Err(Error::invalid(format!(
                "sieve '{}' expects {} coords, got {}",
                self.id,
                self.dim,
                coords.len()
            )));
        }
        if out.len() != self.output_dim() {
            return Err(Error::invalid("output buffer has wrong length"));
        }
        match &self.kind {
            SieveKind::Euclidean { .. } => Ok(()),
            _ => {
                if x.len() != self.input_dim() {
                    Err(Error::invalid(format!(
                        "sieve '{}' expects input dim {}, got {}",
                        self.id,
                        self.input_dim(),
                        x.len()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Raw (pre-squash) forward pass, recording pre-activations if asked.
    fn forward(
        &self,
        coords: &[f64],
        x: &[f64],
        act: Activation,
        mut trace: Option<&mut NetTrace>,
    ) -> Vec<f64> {
        let clip = match &self.kind {
            SieveKind::Network { weight_clip, .. } => *weight_clip,
            _ => unreachable!(),
        };
        let n_layers = self.layers.len();
        let mut cur: Vec<f64> = x.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in self.layers.iter().enumerate() {
            let w = &coords[offset..offset + fan_in * fan_out];
            let b = &coords[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut next = vec![0.0; fan_out];
            for (j, nj) in next.iter_mut().enumerate() {
                let mut s = b[j].clamp(-clip, clip);
                for (i, &ci) in cur.iter().enumerate() {
                    s += w[j * fan_in + i].clamp(-clip, clip) * ci;
                }
                *nj = s;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(cur.clone());
                t.pre.push(next.clone());
            }
            if l + 1 < n_layers {
                for v in next.iter_mut() {
                    *v = act.apply(*v);
                }
            }
            cur = next;
        }
        cur
    }

    fn backward(
        &self,
        coords: &[f64],
        _x: &[f64],
        act: Activation,
        trace: &NetTrace,
        out_delta: &[f64],
        grad: &mut [f64],
    ) {
        let clip = match &self.kind {
            SieveKind::Network { weight_clip, .. } => *weight_clip,
            _ => unreachable!(),
        };
        // Offsets of each layer's parameter block.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for &(fan_in, fan_out) in &self.layers {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
        let mut delta = out_delta.to_vec();
        for l in (0..self.layers.len()).rev() {
            let (fan_in, fan_out) = self.layers[l];
            let off = offsets[l];
            let input = &trace.inputs[l];
            // Parameter gradients.
            for j in 0..fan_out {
                for i in 0..fan_in {
                    grad[off + j * fan_in + i] += delta[j] * input[i];
                }
                grad[off + fan_in * fan_out + j] += delta[j];
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer's activations.
            let w = &coords[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (i, p) in prev.iter_mut().enumerate() {
                for j in 0..fan_out {
                    *p += delta[j] * w[j * fan_in + i].clamp(-clip, clip);
                }
            }
            let pre_prev = &trace.pre[l - 1];
            for (p, z) in prev.iter_mut().zip(pre_prev) {
                *p *= act.deriv(*z);
            }
            delta = prev;
        }
    }
}

fn layer_shapes(input_dim: usize, output_dim: usize, depth: usize, h: usize) -> Vec<(usize, usize)> {
    if depth == 1 {
        return vec![(input_dim, output_dim)];
    }
    let mut layers = vec![(input_dim, h)];
    for _ in 1..depth - 1 {
        layers.push((h, h));
    }
    layers.push((h, output_dim));
    layers
}

#[derive(Default)]
struct NetTrace {
    /// Input vector of each affine layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each affine layer.
    pre: Vec<Vec<f64>>,
}

/// Width schedule W_n ~ c * n^(r/(r+2)).
#[derive(Debug, Clone, Copy)]
pub struct GrowthSchedule {
    pub r_lower: f64,
    pub intrinsic_dim: f64,
    pub smoothness: f64,
    pub c_width: f64,
}

impl GrowthSchedule {
    pub fn new(r_lower: f64, intrinsic_dim: f64, smoothness: f64, c_width: f64) -> Result<Self> {
        if c_width <= 0.0 {
            return Err(Error::invalid("c_width must be positive"));
        }
        if smoothness <= 0.0 || r_lower < intrinsic_dim / smoothness {
            return Err(Error::invalid(
                "growth schedule requires r_lower >= intrinsic_dim / smoothness",
            ));
        }
        Ok(GrowthSchedule {
            r_lower,
            intrinsic_dim,
            smoothness,
            c_width,
        })
    }

    pub fn width_for_n(&self, n: usize) -> usize {
        let e = self.r_lower / (self.r_lower + 2.0);
        let w = (self.c_width * (n as f64).powf(e)).round();
        (w as usize).max(1)
    }
}

/// Penalized refit of a sieve function toward a target sampled on a grid,
/// keeping the sup-norm distance within `radius`.
pub struct ProjectionOutcome {
    pub coords: Vec<f64>,
    pub achieved: f64,
}

pub fn project_toward(
    sieve: &Sieve,
    coords: &[f64],
    grid: &[(Vec<f64>, f64)],
    radius: f64,
) -> Result<ProjectionOutcome> {
    let sup = |c: &[f64]| -> Result<f64> {
        let mut worst: f64 = 0.0;
        let mut out = vec![0.0; sieve.output_dim()];
        for (x, target) in grid {
            sieve.eval(c, x, &mut out)?;
            worst = worst.max((out[0] - target).abs());
        }
        Ok(worst)
    };
    let mut cur = coords.to_vec();
    let initial = sup(&cur)?;
    if initial <= radius || radius.is_infinite() {
        return Ok(ProjectionOutcome {
            coords: cur,
            achieved: initial,
        });
    }
    // Gradient descent on the hinge of the excess distance, aiming a bit
    // inside the radius so the final sup check has margin.
    let target_margin = 0.9 * radius;
    let mut step = 0.05;
    let mut out = vec![0.0; sieve.output_dim()];
    for _ in 0..2000 {
        let mut grad = vec![0.0; sieve.dim()];
        for (x, target) in grid {
            sieve.eval(&cur, x, &mut out)?;
            let e = out[0] - target;
            let excess = e.abs() - target_margin;
            if excess > 0.0 {
                let up = 2.0 * excess * e.signum() / grid.len() as f64;
                sieve.grad_coords(&cur, x, &[up], &mut grad)?;
            }
        }
        let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-12 {
            break;
        }
        for (c, g) in cur.iter_mut().zip(&grad) {
            *c -= step * g;
        }
        sieve.clip(&mut cur);
        step *= 0.999;
    }
    let achieved = sup(&cur)?;
    if achieved > radius {
        return Err(Error::RegularizationFailure { achieved, radius });
    }
    Ok(ProjectionOutcome {
        coords: cur,
        achieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn tiny_net(depth: usize, width: usize) -> Sieve {
        Sieve::new(
            "net",
            SieveKind::Network {
                input_dim: 1,
                output_dim: 1,
                depth,
                width,
                max_nonzero: 10_000,
                weight_clip: 10.0,
                output_clip: 100.0,
                activation: Activation::Relu,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for act in [Activation::Relu, Activation::Tanh] {
            let s = Sieve::new(
                "net",
                SieveKind::Network {
                    input_dim: 1,
                    output_dim: 1,
                    depth: 2,
                    width: 4,
                    max_nonzero: 1000,
                    weight_clip: 5.0,
                    output_clip: 10.0,
                    activation: act,
                },
            )
            .unwrap();
            let coords = vec![0.0; s.dim()];
            let mut out = [1.0];
            s.eval(&coords, &[3.0], &mut out).unwrap();
            assert_eq!(out[0], 0.0);
        }
    }

    #[test]
    fn hand_forward_pass_relu() {
        // depth 2, hidden width 1: hidden = relu(1*x - 1), output = 1*hidden + 0.
        let s = tiny_net(2, 1);
        assert_eq!(s.dim(), 4); // w1, b1, w2, b2
        let coords = vec![1.0, -1.0, 1.0, 0.0];
        let mut out = [0.0];
        s.eval(&coords, &[2.0], &mut out).unwrap();
        // Raw output 1.0 passes through the smooth bound 100*tanh(raw/100).
        let expected = 100.0 * (1.0f64 / 100.0).tanh();
        assert!((out[0] - expected).abs() < 1e-12);
        s.eval(&coords, &[0.5], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn tanh_net_zero_input() {
        let s = Sieve::new(
            "net",
            SieveKind::Network {
                input_dim: 1,
                output_dim: 1,
                depth: 2,
                width: 1,
                max_nonzero: 100,
                weight_clip: 5.0,
                output_clip: 10.0,
                activation: Activation::Tanh,
            },
        )
        .unwrap();
        let coords = vec![1.0, 0.0, 1.0, 0.0];
        let mut out = [0.0];
        s.eval(&coords, &[0.0], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn linear_basis_gradient_is_features() {
        let s = Sieve::new(
            "lin",
            SieveKind::LinearBasis {
                basis: Basis::Polynomial,
                degree: 1,
                input_dim: 1,
                output_dim: 1,
            },
        )
        .unwrap();
        let mut grad = vec![0.0; 2];
        s.grad_coords(&[0.3, 0.7], &[2.0], &[1.0], &mut grad).unwrap();
        assert_eq!(grad, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let s = tiny_net(3, 4);
        let mut rng = rng_from(1, &[0]);
        let coords = s.init(&mut rng);
        let mut grad = vec![0.0; s.dim()];
        s.grad_coords(&coords, &[0.4], &[0.0], &mut grad).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        for (act, depth) in [
            (Activation::Tanh, 2),
            (Activation::Tanh, 3),
            (Activation::Relu, 2),
        ] {
            let s = Sieve::new(
                "net",
                SieveKind::Network {
                    input_dim: 2,
                    output_dim: 2,
                    depth,
                    width: 5,
                    max_nonzero: 10_000,
                    weight_clip: 3.0,
                    output_clip: 5.0,
                    activation: act,
                },
            )
            .unwrap();
            let mut rng = rng_from(7, &[depth as u64]);
            let coords = s.init(&mut rng);
            let x = [0.3, -0.8];
            let upstream = [1.0, -0.5];
            let mut grad = vec![0.0; s.dim()];
            s.grad_coords(&coords, &x, &upstream, &mut grad).unwrap();
            let h = 1e-5;
            let mut out = [0.0; 2];
            for i in 0..s.dim() {
                let mut cp = coords.clone();
                cp[i] += h;
                s.eval(&cp, &x, &mut out).unwrap();
                let up: f64 = out.iter().zip(&upstream).map(|(o, u)| o * u).sum();
                cp[i] -= 2.0 * h;
                s.eval(&cp, &x, &mut out).unwrap();
                let dn: f64 = out.iter().zip(&upstream).map(|(o, u)| o * u).sum();
                let fd = (up - dn) / (2.0 * h);
                let scale = fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(
                    (fd - grad[i]).abs() / scale < 1e-4,
                    "coord {i}: fd {fd} vs backprop {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn output_respects_bound() {
        let b = 2.0;
        let s = Sieve::new(
            "net",
            SieveKind::Network {
                input_dim: 1,
                output_dim: 1,
                depth: 2,
                width: 8,
                max_nonzero: 10_000,
                weight_clip: 5.0,
                output_clip: b,
                activation: Activation::Relu,
            },
        )
        .unwrap();
        let mut rng = rng_from(3, &[]);
        let coords: Vec<f64> = (0..s.dim()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut out = [0.0];
        for i in 0..10_000 {
            let x = [-5.0 + 10.0 * (i as f64) / 9_999.0];
            s.eval(&coords, &x, &mut out).unwrap();
            assert!(out[0].abs() <= b);
        }
    }

    #[test]
    fn nonzero_budget_governs_layer_sizing() {
        let s = Sieve::new(
            "net",
            SieveKind::Network {
                input_dim: 1,
                output_dim: 1,
                depth: 3,
                width: 64,
                max_nonzero: 300,
                weight_clip: 5.0,
                output_clip: 10.0,
                activation: Activation::Relu,
            },
        )
        .unwrap();
        assert!(s.dim() <= 300);
    }

    #[test]
    fn width_schedule_examples() {
        let s = GrowthSchedule::new(2.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(s.width_for_n(64), 8);
        assert_eq!(s.width_for_n(1), 1);
        let s = GrowthSchedule::new(1.0, 0.5, 1.0, 2.0).unwrap();
        assert_eq!(s.width_for_n(1000), 20);
    }

    #[test]
    fn width_schedule_nondecreasing() {
        let s = GrowthSchedule::new(2.0, 1.0, 1.0, 1.3).unwrap();
        let mut prev = 0;
        for n in 1..2000 {
            let w = s.width_for_n(n);
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn tanh_net_lipschitz_bound() {
        // Crude check that the weight clip caps the input Lipschitz
        // constant by (clip * width)^depth.
        let clip = 0.8;
        let width = 3;
        let depth = 2;
        let s = Sieve::new(
            "net",
            SieveKind::Network {
                input_dim: 1,
                output_dim: 1,
                depth,
                width,
                max_nonzero: 10_000,
                weight_clip: clip,
                output_clip: 50.0,
                activation: Activation::Tanh,
            },
        )
        .unwrap();
        let bound = (clip * width as f64).powi(depth as i32);
        let mut rng = rng_from(11, &[]);
        for _ in 0..20 {
            let mut coords = s.init(&mut rng);
            for c in coords.iter_mut() {
                *c = c.clamp(-clip, clip);
            }
            let mut o1 = [0.0];
            let mut o2 = [0.0];
            for _ in 0..100 {
                let a = rng.gen_range(-2.0..2.0);
                let b = rng.gen_range(-2.0..2.0);
                s.eval(&coords, &[a], &mut o1).unwrap();
                s.eval(&coords, &[b], &mut o2).unwrap();
                if (a - b).abs() > 1e-12 {
                    assert!((o1[0] - o2[0]).abs() / (a - b).abs() <= bound + 1e-9);
                }
            }
        }
    }

    #[test]
    fn projection_noop_when_inside() {
        let s = Sieve::euclidean("e", vec![(-1.0, 1.0)]).unwrap();
        let grid = vec![(vec![], 0.2)];
        let out = project_toward(&s, &[0.2], &grid, 0.5).unwrap();
        assert_eq!(out.coords, vec![0.2]);
        let out = project_toward(&s, &[0.9], &grid, f64::INFINITY).unwrap();
        assert_eq!(out.coords, vec![0.9]);
    }

    #[test]
    fn projection_pulls_bump_toward_constant() {
        let s = Sieve::new(
            "net",
            SieveKind::Network {
                input_dim: 1,
                output_dim: 1,
                depth: 2,
                width: 6,
                max_nonzero: 10_000,
                weight_clip: 5.0,
                output_clip: 10.0,
                activation: Activation::Tanh,
            },
        )
        .unwrap();
        let mut rng = rng_from(5, &[]);
        let mut coords = s.init(&mut rng);
        // Exaggerate into a bump.
        for c in coords.iter_mut() {
            *c *= 4.0;
        }
        let grid: Vec<(Vec<f64>, f64)> = (0..64)
            .map(|i| (vec![-2.0 + 4.0 * i as f64 / 63.0], 0.0))
            .collect();
        let before = grid
            .iter()
            .map(|(x, _)| {
                let mut o = [0.0];
                s.eval(&coords, x, &mut o).unwrap();
                o[0].abs()
            })
            .fold(0.0f64, f64::max);
        let radius = (before * 0.25).max(0.05);
        let out = project_toward(&s, &coords, &grid, radius).unwrap();
        assert!(out.achieved <= radius);
    }
}
