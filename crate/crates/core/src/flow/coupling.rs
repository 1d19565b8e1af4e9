//! Time-conditioned affine coupling.
//!
//! For the transformed half `x2` and the pass-through half `x1`,
//!
//! ```text
//! y1 = x1
//! y2 = x2 * (1 + beta tanh(s)) + exp(zeta) * tanh(q),   (s, q) = NN(x1, t)
//! ```
//!
//! The scale lies in `(1 - |beta|, 1 + |beta|)`, so the layer is invertible
//! whatever the network outputs.

use rand::Rng;

use crate::error::Result;
use crate::tape::{NodeId, ParamTape};

/// A dense layer stored in the flow's parameter vector.
#[derive(Clone, Debug)]
pub struct Dense {
    pub(crate) weight: usize,
    pub(crate) bias: usize,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
}

impl Dense {
    fn new(rows: usize, cols: usize, params: &mut Vec<f64>) -> Self {
        let weight = params.len();
        params.resize(weight + rows * cols, 0.0);
        let bias = params.len();
        params.resize(bias + rows, 0.0);
        Dense {
            weight,
            bias,
            rows,
            cols,
        }
    }

    fn glorot<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let limit = (6.0 / (self.rows + self.cols) as f64).sqrt();
        for w in &mut params[self.weight..self.weight + self.rows * self.cols] {
            *w = rng.random_range(-limit..limit);
        }
    }

    fn apply(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &params[self.weight + r * self.cols..self.weight + (r + 1) * self.cols];
            let acc: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(acc + params[self.bias + r]);
        }
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight..self.weight + self.rows * self.cols]
    }

    pub fn biases<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias..self.bias + self.rows]
    }
}

/// Two tanh hidden layers; the output holds `s` followed by `q`.
#[derive(Clone, Debug)]
pub struct ConditionerNet {
    pub(crate) layers: [Dense; 3],
}

impl ConditionerNet {
    fn new(inputs: usize, hidden: usize, outputs: usize, params: &mut Vec<f64>) -> Self {
        ConditionerNet {
            layers: [
                Dense::new(hidden, inputs, params),
                Dense::new(hidden, hidden, params),
                Dense::new(outputs, hidden, params),
            ],
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].cols
    }

    pub fn outputs(&self) -> usize {
        self.layers[2].rows
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].rows
    }

    /// Plain forward pass.
    pub fn eval(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut a = Vec::with_capacity(self.hidden());
        let mut b = Vec::with_capacity(self.hidden());
        self.layers[0].apply(params, input, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        self.layers[1].apply(params, &a, &mut b);
        b.iter_mut().for_each(|v| *v = v.tanh());
        self.layers[2].apply(params, &b, &mut a);
        a
    }

    fn record(&self, tape: &mut ParamTape, params: &[f64], input: NodeId) -> NodeId {
        let [l0, l1, l2] = &self.layers;
        let h = tape.linear(params, input, l0.weight, l0.bias, l0.rows);
        let h = tape.tanh(h);
        let h = tape.linear(params, h, l1.weight, l1.bias, l1.rows);
        let h = tape.tanh(h);
        tape.linear(params, h, l2.weight, l2.bias, l2.rows)
    }
}

#[derive(Clone, Debug)]
pub struct CouplingLayer {
    pub(crate) net: ConditionerNet,
    pub(crate) beta: f64,
    pub(crate) zeta: usize,
    pub(crate) parity: usize,
    pub(crate) pass: Vec<usize>,
    pub(crate) trans: Vec<usize>,
    /// Restores coordinate order from `[pass, trans]`.
    pub(crate) unpermute: Vec<usize>,
}

/// Half-half split; odd parity swaps the roles of the two halves. A split
/// that would leave nothing to transform falls back to even parity.
pub(crate) fn partition(dim: usize, parity: usize) -> (Vec<usize>, Vec<usize>) {
    let half = dim / 2;
    let lo: Vec<usize> = (0..half).collect();
    let hi: Vec<usize> = (half..dim).collect();
    if parity % 2 == 1 && !lo.is_empty() {
        (hi, lo)
    } else {
        (lo, hi)
    }
}

impl CouplingLayer {
    pub(crate) fn new<R: Rng + ?Sized>(
        dim: usize,
        parity: usize,
        hidden: usize,
        beta: f64,
        params: &mut Vec<f64>,
        rng: &mut R,
    ) -> Self {
        let (pass, trans) = partition(dim, parity);
        let net = ConditionerNet::new(pass.len() + 1, hidden, 2 * trans.len(), params);
        // final layer stays zero so the layer starts as the identity
        net.layers[0].glorot(params, rng);
        net.layers[1].glorot(params, rng);
        let zeta = params.len();
        params.resize(zeta + trans.len(), 0.0);
        Self::assemble(net, beta, zeta, parity, pass, trans)
    }

    pub(crate) fn assemble(
        net: ConditionerNet,
        beta: f64,
        zeta: usize,
        parity: usize,
        pass: Vec<usize>,
        trans: Vec<usize>,
    ) -> Self {
        let mut unpermute = vec![0; pass.len() + trans.len()];
        for (pos, &coord) in pass.iter().chain(&trans).enumerate() {
            unpermute[coord] = pos;
        }
        CouplingLayer {
            net,
            beta,
            zeta,
            parity,
            pass,
            trans,
            unpermute,
        }
    }

    pub fn net(&self) -> &ConditionerNet {
        &self.net
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn pass_indices(&self) -> &[usize] {
        &self.pass
    }

    pub fn transformed_indices(&self) -> &[usize] {
        &self.trans
    }

    pub fn zeta<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.zeta..self.zeta + self.trans.len()]
    }

    fn conditioner_input(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.pass.iter().map(|&i| x[i]).chain(std::iter::once(t)).collect()
    }

    pub(crate) fn record(
        &self,
        tape: &mut ParamTape,
        params: &[f64],
        x: NodeId,
        t: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let k = self.trans.len();
        let x1 = tape.select(x, &self.pass);
        let x2 = tape.select(x, &self.trans);
        let input = tape.concat(&[x1, t]);
        let out = self.net.record(tape, params, input);
        let s_idx: Vec<usize> = (0..k).collect();
        let q_idx: Vec<usize> = (k..2 * k).collect();
        let s = tape.select(out, &s_idx);
        let q = tape.select(out, &q_idx);
        let ts = tape.tanh(s);
        let scale = tape.affine(ts, self.beta, 1.0);
        let zeta = tape.param(params, self.zeta, k);
        let ez = tape.exp(zeta);
        let tq = tape.tanh(q);
        let shift = tape.mul(ez, tq);
        let xs = tape.mul(x2, scale);
        let y2 = tape.add(xs, shift);
        let joined = tape.concat(&[x1, y2]);
        let y = tape.select(joined, &self.unpermute);
        let ls = tape.ln(scale)?;
        let logdet = tape.sum(ls);
        Ok((y, logdet))
    }

    pub(crate) fn apply(&self, params: &[f64], x: &mut [f64], t: f64) -> f64 {
        let out = self.net.eval(params, &self.conditioner_input(x, t));
        let k = self.trans.len();
        let zeta = self.zeta(params);
        let mut logdet = 0.0;
        for (j, &i) in self.trans.iter().enumerate() {
            let scale = 1.0 + self.beta * out[j].tanh();
            x[i] = x[i] * scale + zeta[j].exp() * out[k + j].tanh();
            logdet += scale.ln();
        }
        logdet
    }

    pub(crate) fn invert(&self, params: &[f64], y: &mut [f64], t: f64) {
        let out = self.net.eval(params, &self.conditioner_input(y, t));
        let k = self.trans.len();
        let zeta = self.zeta(params);
        for (j, &i) in self.trans.iter().enumerate() {
            let scale = 1.0 + self.beta * out[j].tanh();
            y[i] = (y[i] - zeta[j].exp() * out[k + j].tanh()) / scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partitions() {
        assert_eq!(partition(2, 0), (vec![0], vec![1]));
        assert_eq!(partition(2, 1), (vec![1], vec![0]));
        assert_eq!(partition(3, 0), (vec![0], vec![1, 2]));
        assert_eq!(partition(3, 1), (vec![1, 2], vec![0]));
        assert_eq!(partition(1, 1), (vec![], vec![0]));
    }

    fn randomized(dim: usize, parity: usize) -> (CouplingLayer, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = Vec::new();
        let layer = CouplingLayer::new(dim, parity, 8, 0.6, &mut params, &mut rng);
        for p in params.iter_mut() {
            *p += rng.random_range(-0.8..0.8);
        }
        (layer, params)
    }

    #[test]
    fn scale_stays_positive() {
        // huge network outputs still give a scale in (1 - beta, 1 + beta)
        let (layer, mut params) = randomized(2, 0);
        for p in params.iter_mut() {
            *p *= 50.0;
        }
        let mut x = [0.3, -0.2];
        let ld = layer.apply(&params, &mut x, 0.5);
        assert!(ld.is_finite());
        assert!(ld > (0.4f64).ln() - 1e-12 && ld < (1.6f64).ln() + 1e-12);
    }

    #[test]
    fn round_trip() {
        for (dim, parity) in [(1, 0), (2, 0), (2, 1), (3, 1), (4, 0)] {
            let (layer, params) = randomized(dim, parity);
            let x: Vec<f64> = (0..dim).map(|i| 0.7 * i as f64 - 1.3).collect();
            let mut y = x.clone();
            layer.apply(&params, &mut y, 0.4);
            layer.invert(&params, &mut y, 0.4);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
