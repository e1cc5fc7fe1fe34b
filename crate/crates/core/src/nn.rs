//! Dense tanh networks with hand-written backpropagation and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Dense<S> {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out x fan_in`.
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            fan_in,
            fan_out,
            weights: vec![S::zero(); fan_in * fan_out],
            bias: vec![S::zero(); fan_out],
        }
    }

    fn apply(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.fan_in..(o + 1) * self.fan_in];
            row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + *w * *xi)
        }));
    }
}

/// Multilayer perceptron: tanh on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

/// Layer inputs saved by [`Mlp::forward_trace`]; the last entry is the output.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    activations: Vec<Vec<S>>,
}

impl<S> Trace<S> {
    pub fn output(&self) -> &[S] {
        self.activations.last().expect("trace holds at least the input")
    }
}

impl<S: Scalar> Mlp<S> {
    /// Uniform Glorot initialization; the output layer is scaled by `out_scale`.
    pub fn new(sizes: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                if i == last {
                    limit *= out_scale;
                }
                let mut d = Dense::zeros(fan_in, fan_out);
                for x in &mut d.weights {
                    *x = S::of(rng.gen_range(-limit..=limit));
                }
                d
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_trace(&self, x: &[S]) -> Trace<S> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.fan_out);
            layer.apply(activations.last().expect("non-empty"), &mut out);
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Trace { activations }
    }

    /// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(output)`.
    pub fn backward(&self, trace: &Trace<S>, d_out: &[S], grads: &mut Mlp<S>) {
        let mut delta = d_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.activations[li];
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] = g.bias[o] + *d;
                let row = &mut g.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw = *gw + *d * *xi;
                }
            }
            if li == 0 {
                break;
            }
            // Input of this layer is tanh output of the previous one.
            let mut prev = vec![S::zero(); layer.fan_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p = *p + *w * *d;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p = *p * (S::one() - *a * *a);
            }
            delta = prev;
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &S> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn scale(&mut self, factor: S) {
        self.params_mut().for_each(|p| *p = *p * factor);
    }

    pub fn sq_norm(&self) -> S {
        self.params().map(|p| *p * *p).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

/// Adam state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr: S::of(lr),
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            m: vec![S::zero(); num_params],
            v: vec![S::zero(); num_params],
            t: 0,
        }
    }

    /// Gradient-descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut S>,
        grads: impl Iterator<Item = &'a S>,
    ) {
        self.t += 1;
        let c1 = S::one() - self.beta1.powi(self.t);
        let c2 = S::one() - self.beta2.powi(self.t);
        for (i, (p, g)) in params.zip(grads).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * *g;
            self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * *g * *g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: Mlp<f64> = Mlp::new(&[3, 5, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1];
        // loss = 0.7 * out0 - 1.3 * out1
        let coef = [0.7, -1.3];
        let loss = |n: &Mlp<f64>| {
            let o = n.forward(&x);
            coef[0] * o[0] + coef[1] * o[1]
        };
        let mut grads = net.zeros_like();
        net.backward(&net.forward_trace(&x), &coef, &mut grads);
        let analytic: Vec<f64> = grads.params().copied().collect();
        let h = 1e-6;
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(i).unwrap() -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((a - numeric).abs() <= 1e-7 + 1e-5 * numeric.abs(), "param {i}: {a} vs {numeric}");
        }
    }

    #[test]
    fn trace_output_equals_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net: Mlp<f32> = Mlp::new(&[4, 8, 3], 0.1, &mut rng);
        let x = [1.0, 0.0, -1.0, 0.5];
        assert_eq!(net.forward(&x), net.forward_trace(&x).output());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0f64, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(p.iter_mut(), g.iter());
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
