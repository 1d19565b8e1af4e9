//! Reverse-mode accumulation over jet-valued nodes.
//!
//! Every node of a [`ParamTape`] holds a vector of jets in the tape's
//! [`JetLayout`]. Values are computed eagerly when a node is recorded;
//! [`ParamTape::backward`] then pulls an adjoint for every jet component back
//! through the recorded operations and accumulates the derivative of a scalar
//! output with respect to every trainable parameter referenced by the tape.
//!
//! Parameters are not owned by the tape. Operations that read parameters
//! store their offsets into the caller's flat parameter vector, which is
//! passed again to [`ParamTape::replay`] and whose gradient buffer is passed
//! to [`ParamTape::backward`].

use crate::error::{Error, Result};
use crate::flow::spline::SplineShape;
use crate::jet::{JetLayout, Unary};

/// Handle to a node recorded on a [`ParamTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Input,
    Param {
        start: usize,
    },
    /// `out_i = sum_j W_ij in_j + b_i`, weights row-major.
    Linear {
        input: NodeId,
        weight: usize,
        bias: usize,
    },
    Unary {
        input: NodeId,
        kind: Unary,
    },
    Affine {
        input: NodeId,
        scale: f64,
        shift: f64,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Node ids live in `links[start..start + count]`.
    Concat {
        start: usize,
        count: usize,
    },
    /// Jet indices live in `links[start..start + count]`.
    Select {
        input: NodeId,
        start: usize,
    },
    Sum {
        input: NodeId,
    },
    /// Coefficients live in `coeffs[start..start + width]`.
    Contract {
        input: NodeId,
        start: usize,
    },
    Spline {
        input: NodeId,
        params: usize,
        shape: SplineShape,
        log_slope: bool,
    },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    offset: usize,
    len: usize,
}

/// Append-only record of jet operations that depend on trainable parameters.
#[derive(Clone, Debug)]
pub struct ParamTape {
    layout: JetLayout,
    width: usize,
    nodes: Vec<Node>,
    values: Vec<f64>,
    adjoints: Vec<f64>,
    links: Vec<usize>,
    coeffs: Vec<f64>,
    scratch: Vec<[f64; 3]>,
}

impl ParamTape {
    pub fn new(layout: JetLayout) -> Self {
        let width = layout.width();
        ParamTape {
            layout,
            width,
            nodes: Vec::new(),
            values: Vec::new(),
            adjoints: Vec::new(),
            links: Vec::new(),
            coeffs: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn layout(&self) -> &JetLayout {
        &self.layout
    }

    /// Forgets all nodes but keeps the allocated buffers.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.links.clear();
        self.coeffs.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of jets held by `node`.
    pub fn node_len(&self, node: NodeId) -> usize {
        self.nodes[node.0].len
    }

    /// All jet components of `node`, jet-major.
    pub fn values(&self, node: NodeId) -> &[f64] {
        let n = &self.nodes[node.0];
        &self.values[n.offset..n.offset + n.len * self.width]
    }

    /// Components of jet `i` of `node`.
    pub fn jet(&self, node: NodeId, i: usize) -> &[f64] {
        let n = &self.nodes[node.0];
        let o = n.offset + i * self.width;
        &self.values[o..o + self.width]
    }

    /// Value component of jet `i` of `node`.
    pub fn value(&self, node: NodeId, i: usize) -> f64 {
        self.values[self.nodes[node.0].offset + i * self.width]
    }

    fn push(&mut self, op: Op, len: usize, params: &[f64]) -> Result<NodeId> {
        let offset = self.values.len();
        self.values.resize(offset + len * self.width, 0.0);
        self.nodes.push(Node { op, offset, len });
        let id = self.nodes.len() - 1;
        if let Err(e) = self.compute(id, params) {
            self.nodes.pop();
            self.values.truncate(offset);
            return Err(e);
        }
        Ok(NodeId(id))
    }

    /// Records raw jet components (`len * width` values).
    pub fn input(&mut self, data: &[f64]) -> NodeId {
        assert_eq!(data.len() % self.width, 0, "input is not a whole number of jets");
        let offset = self.values.len();
        self.values.extend_from_slice(data);
        self.nodes.push(Node {
            op: Op::Input,
            offset,
            len: data.len() / self.width,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records constant jets with zero derivatives.
    pub fn constants(&mut self, values: &[f64]) -> NodeId {
        let mut data = vec![0.0; values.len() * self.width];
        for (chunk, &v) in data.chunks_mut(self.width).zip(values) {
            chunk[0] = v;
        }
        self.input(&data)
    }

    /// Records the seeded input coordinates: `x` (d jets) and `t` (one jet).
    pub fn seed(&mut self, x: &[f64], t: f64) -> (NodeId, NodeId) {
        assert_eq!(x.len(), self.layout.dim(), "point dimension mismatch");
        let w = self.width;
        let mut data = vec![0.0; x.len() * w];
        for (k, (chunk, &v)) in data.chunks_mut(w).zip(x).enumerate() {
            self.layout.seed(v, k, chunk);
        }
        let xs = self.input(&data);
        let mut tj = vec![0.0; w];
        self.layout.seed(t, self.layout.dim(), &mut tj);
        let tn = self.input(&tj);
        (xs, tn)
    }

    /// Parameters `params[start..start + len]` as constant-derivative jets.
    pub fn param(&mut self, params: &[f64], start: usize, len: usize) -> NodeId {
        self.push(Op::Param { start }, len, params)
            .expect("parameter nodes cannot fail")
    }

    /// Dense layer with `rows` outputs; weights row-major at `weight`.
    pub fn linear(
        &mut self,
        params: &[f64],
        input: NodeId,
        weight: usize,
        bias: usize,
        rows: usize,
    ) -> NodeId {
        self.push(
            Op::Linear {
                input,
                weight,
                bias,
            },
            rows,
            params,
        )
        .expect("linear nodes cannot fail")
    }

    pub fn unary(&mut self, input: NodeId, kind: Unary) -> Result<NodeId> {
        let len = self.node_len(input);
        self.push(Op::Unary { input, kind }, len, &[])
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        self.unary(input, Unary::Tanh).expect("tanh is total")
    }

    pub fn exp(&mut self, input: NodeId) -> NodeId {
        self.unary(input, Unary::Exp).expect("exp is total")
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        self.unary(input, Unary::Square).expect("square is total")
    }

    pub fn ln(&mut self, input: NodeId) -> Result<NodeId> {
        self.unary(input, Unary::Ln)
    }

    pub fn recip(&mut self, input: NodeId) -> Result<NodeId> {
        self.unary(input, Unary::Recip)
    }

    /// `scale * input + shift` with constant coefficients.
    pub fn affine(&mut self, input: NodeId, scale: f64, shift: f64) -> NodeId {
        let len = self.node_len(input);
        self.push(
            Op::Affine {
                input,
                scale,
                shift,
            },
            len,
            &[],
        )
        .expect("affine nodes cannot fail")
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId) -> NodeId {
        let (la, lb) = (self.node_len(a), self.node_len(b));
        assert_eq!(la, lb, "binary op on nodes of different lengths");
        self.push(op, la, &[]).expect("binary nodes cannot fail")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Add(a, b), a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Sub(a, b), a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Mul(a, b), a, b)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let start = self.links.len();
        self.links.extend(parts.iter().map(|p| p.0));
        let len = parts.iter().map(|&p| self.node_len(p)).sum();
        self.push(
            Op::Concat {
                start,
                count: parts.len(),
            },
            len,
            &[],
        )
        .expect("concat nodes cannot fail")
    }

    /// Gathers jets `indices` of `input`.
    pub fn select(&mut self, input: NodeId, indices: &[usize]) -> NodeId {
        let n = self.node_len(input);
        assert!(indices.iter().all(|&i| i < n), "select index out of range");
        let start = self.links.len();
        self.links.extend_from_slice(indices);
        self.push(Op::Select { input, start }, indices.len(), &[])
            .expect("select nodes cannot fail")
    }

    /// Sum of all jets of `input`.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        self.push(Op::Sum { input }, 1, &[])
            .expect("sum nodes cannot fail")
    }

    /// Scalar `sum_c coeffs[c] * input[c]` over the components of a single
    /// jet. The result carries no derivatives.
    pub fn contract(&mut self, input: NodeId, coeffs: &[f64]) -> NodeId {
        assert_eq!(self.node_len(input), 1, "contract expects a single jet");
        assert_eq!(coeffs.len(), self.width, "coefficient count must equal jet width");
        let start = self.coeffs.len();
        self.coeffs.extend_from_slice(coeffs);
        self.push(Op::Contract { input, start }, 1, &[])
            .expect("contract nodes cannot fail")
    }

    /// Elementwise spline map `G` (or `ln G'` when `log_slope`), with logits
    /// at `params[start..start + shape.n_params()]`.
    pub fn spline(
        &mut self,
        params: &[f64],
        input: NodeId,
        start: usize,
        shape: SplineShape,
        log_slope: bool,
    ) -> Result<NodeId> {
        let len = self.node_len(input);
        self.push(
            Op::Spline {
                input,
                params: start,
                shape,
                log_slope,
            },
            len,
            params,
        )
    }

    fn compute(&mut self, id: usize, params: &[f64]) -> Result<()> {
        let w = self.width;
        let node = self.nodes[id];
        let (prev, out) = self.values.split_at_mut(node.offset);
        let out = &mut out[..node.len * w];
        let slice = |n: NodeId| {
            let nd = &self.nodes[n.0];
            &prev[nd.offset..nd.offset + nd.len * w]
        };
        let layout = &self.layout;
        match node.op {
            Op::Input => {}
            Op::Param { start } => {
                for (i, chunk) in out.chunks_mut(w).enumerate() {
                    layout.constant(params[start + i], chunk);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let inp = slice(input);
                let cols = inp.len() / w;
                out.fill(0.0);
                for (r, o) in out.chunks_mut(w).enumerate() {
                    let row = &params[weight + r * cols..weight + (r + 1) * cols];
                    for (wij, u) in row.iter().zip(inp.chunks(w)) {
                        for (oc, uc) in o.iter_mut().zip(u) {
                            *oc += wij * uc;
                        }
                    }
                    o[0] += params[bias + r];
                }
            }
            Op::Unary { input, kind } => {
                for (a, o) in slice(input).chunks(w).zip(out.chunks_mut(w)) {
                    kind.check(a[0])?;
                    let [f0, f1, f2, _] = kind.derivs(a[0]);
                    layout.unary(a, [f0, f1, f2], o);
                }
            }
            Op::Affine {
                input,
                scale,
                shift,
            } => {
                for (a, o) in slice(input).chunks(w).zip(out.chunks_mut(w)) {
                    layout.affine(a, scale, shift, o);
                }
            }
            Op::Add(a, b) => layout.add(slice(a), slice(b), out),
            Op::Sub(a, b) => layout.sub(slice(a), slice(b), out),
            Op::Mul(a, b) => {
                for ((x, y), o) in slice(a).chunks(w).zip(slice(b).chunks(w)).zip(out.chunks_mut(w)) {
                    layout.mul(x, y, o);
                }
            }
            Op::Concat { start, count } => {
                let mut pos = 0;
                for &p in &self.links[start..start + count] {
                    let s = slice(NodeId(p));
                    out[pos..pos + s.len()].copy_from_slice(s);
                    pos += s.len();
                }
            }
            Op::Select { input, start } => {
                let inp = slice(input);
                for (k, o) in out.chunks_mut(w).enumerate() {
                    let i = self.links[start + k];
                    o.copy_from_slice(&inp[i * w..(i + 1) * w]);
                }
            }
            Op::Sum { input } => {
                out.fill(0.0);
                for a in slice(input).chunks(w) {
                    for (o, x) in out.iter_mut().zip(a) {
                        *o += x;
                    }
                }
            }
            Op::Contract { input, start } => {
                let a = slice(input);
                let c = &self.coeffs[start..start + w];
                out.fill(0.0);
                out[0] = a.iter().zip(c).map(|(x, y)| x * y).sum();
            }
            Op::Spline {
                input,
                params: start,
                shape,
                log_slope,
            } => {
                let ev = shape.prepare(&params[start..start + shape.n_params()]);
                for (a, o) in slice(input).chunks(w).zip(out.chunks_mut(w)) {
                    let [f0, f1, f2, _] = ev.derivs(a[0], log_slope);
                    if !f0.is_finite() {
                        return Err(Error::Domain {
                            primitive: if log_slope { "spline_log_slope" } else { "spline" },
                            detail: format!("non-finite output at {}", a[0]),
                        });
                    }
                    layout.unary(a, [f0, f1, f2], o);
                }
            }
        }
        Ok(())
    }

    /// Recomputes every node in recording order from the stored inputs and
    /// `params`.
    pub fn replay(&mut self, params: &[f64]) -> Result<()> {
        for id in 0..self.nodes.len() {
            self.compute(id, params)?;
        }
        Ok(())
    }

    /// Accumulates `seed * d output / d params` into `grads`.
    ///
    /// `output` must hold a single jet; its value component is the scalar
    /// being differentiated. `params` must be the vector the tape was
    /// recorded with. The tape can be replayed or extended afterwards.
    pub fn backward(
        &mut self,
        params: &[f64],
        output: NodeId,
        seed: f64,
        grads: &mut [f64],
    ) -> Result<()> {
        let out_node = self.nodes[output.0];
        if out_node.len != 1 {
            return Err(Error::NotScalar { len: out_node.len });
        }
        let w = self.width;
        self.adjoints.clear();
        self.adjoints.resize(out_node.offset + w, 0.0);
        self.adjoints[out_node.offset] = seed;

        for id in (0..=output.0).rev() {
            let node = self.nodes[id];
            let (lower, upper) = self.adjoints.split_at_mut(node.offset);
            let adj = &upper[..node.len * w];
            if adj.iter().all(|&a| a == 0.0) {
                continue;
            }
            let values = &self.values;
            let nodes = &self.nodes;
            let span = |n: NodeId| {
                let nd = &nodes[n.0];
                nd.offset..nd.offset + nd.len * w
            };
            let layout = &self.layout;
            match node.op {
                Op::Input => {}
                Op::Param { start } => {
                    for (i, a) in adj.chunks(w).enumerate() {
                        grads[start + i] += a[0];
                    }
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let r_in = span(input);
                    let inp = &values[r_in.clone()];
                    let in_adj = &mut lower[r_in];
                    let cols = inp.len() / w;
                    for (r, o) in adj.chunks(w).enumerate() {
                        grads[bias + r] += o[0];
                        let wrow = weight + r * cols;
                        for (j, (u, ua)) in inp.chunks(w).zip(in_adj.chunks_mut(w)).enumerate() {
                            let wij = params[wrow + j];
                            let mut g = 0.0;
                            for ((oc, uc), uac) in o.iter().zip(u).zip(ua.iter_mut()) {
                                g += oc * uc;
                                *uac += wij * oc;
                            }
                            grads[wrow + j] += g;
                        }
                    }
                }
                Op::Unary { input, kind } => {
                    let r_in = span(input);
                    let inp = &values[r_in.clone()];
                    let in_adj = &mut lower[r_in];
                    for ((a, o), aa) in inp.chunks(w).zip(adj.chunks(w)).zip(in_adj.chunks_mut(w)) {
                        let [_, f1, f2, f3] = kind.derivs(a[0]);
                        layout.unary_backward(a, o, [f1, f2, f3], aa);
                    }
                }
                Op::Affine { input, scale, .. } => {
                    for (aa, o) in lower[span(input)].iter_mut().zip(adj) {
                        *aa += scale * o;
                    }
                }
                Op::Add(a, b) => {
                    for (aa, o) in lower[span(a)].iter_mut().zip(adj) {
                        *aa += o;
                    }
                    for (bb, o) in lower[span(b)].iter_mut().zip(adj) {
                        *bb += o;
                    }
                }
                Op::Sub(a, b) => {
                    for (aa, o) in lower[span(a)].iter_mut().zip(adj) {
                        *aa += o;
                    }
                    for (bb, o) in lower[span(b)].iter_mut().zip(adj) {
                        *bb -= o;
                    }
                }
                Op::Mul(a, b) => {
                    let (ra, rb) = (span(a), span(b));
                    for k in 0..node.len {
                        let o = &adj[k * w..(k + 1) * w];
                        let x = &values[ra.start + k * w..ra.start + (k + 1) * w];
                        let y = &values[rb.start + k * w..rb.start + (k + 1) * w];
                        let xa = ra.start + k * w;
                        layout.mul_backward(x, y, o, &mut lower[xa..xa + w]);
                        let ya = rb.start + k * w;
                        layout.mul_backward(y, x, o, &mut lower[ya..ya + w]);
                    }
                }
                Op::Concat { start, count } => {
                    let mut pos = 0;
                    for &p in &self.links[start..start + count] {
                        let r = span(NodeId(p));
                        let n = r.len();
                        for (aa, o) in lower[r].iter_mut().zip(&adj[pos..pos + n]) {
                            *aa += o;
                        }
                        pos += n;
                    }
                }
                Op::Select { input, start } => {
                    let base = span(input).start;
                    for (k, o) in adj.chunks(w).enumerate() {
                        let i = self.links[start + k];
                        let s = base + i * w;
                        for (aa, oc) in lower[s..s + w].iter_mut().zip(o) {
                            *aa += oc;
                        }
                    }
                }
                Op::Sum { input } => {
                    for aa in lower[span(input)].chunks_mut(w) {
                        for (x, o) in aa.iter_mut().zip(adj) {
                            *x += o;
                        }
                    }
                }
                Op::Contract { input, start } => {
                    let c = &self.coeffs[start..start + w];
                    for (aa, cc) in lower[span(input)].iter_mut().zip(c) {
                        *aa += adj[0] * cc;
                    }
                }
                Op::Spline {
                    input,
                    params: start,
                    shape,
                    log_slope,
                } => {
                    let ev = shape.prepare(&params[start..start + shape.n_params()]);
                    let r_in = span(input);
                    let inp = &values[r_in.clone()];
                    let in_adj = &mut lower[r_in];
                    self.scratch.resize(shape.n_params(), [0.0; 3]);
                    for ((a, o), aa) in inp.chunks(w).zip(adj.chunks(w)).zip(in_adj.chunks_mut(w)) {
                        let [_, f1, f2, f3] = ev.derivs(a[0], log_slope);
                        let c = layout.unary_contract(a, o);
                        layout.unary_backward(a, o, [f1, f2, f3], aa);
                        ev.param_partials(a[0], log_slope, &mut self.scratch);
                        for (g, p) in grads[start..start + shape.n_params()].iter_mut().zip(&self.scratch) {
                            *g += c[0] * p[0] + c[1] * p[1] + c[2] * p[2];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_gradient() {
        let params = [3.0];
        let mut tape = ParamTape::new(JetLayout::value_only(1));
        let p = tape.param(&params, 0, 1);
        let loss = tape.mul(p, p);
        let mut g = [0.0];
        tape.backward(&params, loss, 1.0, &mut g).unwrap();
        assert_eq!(g, [6.0]);
    }

    #[test]
    fn tanh_sum_gradient() {
        let params = [0.0; 4];
        let mut tape = ParamTape::new(JetLayout::value_only(1));
        let p = tape.param(&params, 0, 4);
        let th = tape.tanh(p);
        let loss = tape.sum(th);
        let mut g = [0.0; 4];
        tape.backward(&params, loss, 1.0, &mut g).unwrap();
        assert_eq!(g, [1.0; 4]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let params = [1.0, 2.0];
        let mut tape = ParamTape::new(JetLayout::value_only(1));
        let p = tape.param(&params, 0, 2);
        let mut g = [0.0; 2];
        assert!(matches!(
            tape.backward(&params, p, 1.0, &mut g),
            Err(Error::NotScalar { len: 2 })
        ));
    }

    /// 2 -> 2 -> 1 tanh network on the full jet of a 1-d input; the loss
    /// mixes value, gradient and Hessian components.
    fn small_net(tape: &mut ParamTape, params: &[f64], x: f64, t: f64) -> NodeId {
        let (xs, ts) = tape.seed(&[x], t);
        let inp = tape.concat(&[xs, ts]);
        let h = tape.linear(params, inp, 0, 4, 2);
        let h = tape.tanh(h);
        let o = tape.linear(params, h, 6, 8, 1);
        let e = tape.exp(o);
        let w = tape.layout().width();
        let coeffs: Vec<f64> = (0..w).map(|c| 1.0 + 0.5 * c as f64).collect();
        let r = tape.contract(e, &coeffs);
        tape.square(r)
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let params: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (x, t) = (rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
            let mut tape = ParamTape::new(JetLayout::full(1));
            let out = small_net(&mut tape, &params, x, t);
            let mut g = vec![0.0; params.len()];
            tape.backward(&params, out, 1.0, &mut g).unwrap();
            let f = |p: &[f64]| {
                let mut tp = ParamTape::new(JetLayout::full(1));
                let o = small_net(&mut tp, p, x, t);
                tp.value(o, 0)
            };
            for i in 0..params.len() {
                let h = 1e-5;
                let mut hi = params.clone();
                hi[i] += h;
                let mut lo = params.clone();
                lo[i] -= h;
                let fd = (f(&hi) - f(&lo)) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(1e-3);
                assert!(err < 1e-5, "param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = ParamTape::new(JetLayout::full(1));
        let out = small_net(&mut tape, &params, 0.3, 0.7);
        let before: Vec<u64> = tape.values.iter().map(|v| v.to_bits()).collect();
        tape.replay(&params).unwrap();
        let after: Vec<u64> = tape.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        let mut g1 = vec![0.0; 9];
        tape.backward(&params, out, 1.0, &mut g1).unwrap();
        let mut g2 = vec![0.0; 9];
        tape.backward(&params, out, 1.0, &mut g2).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn self_product_accumulates_both_sides() {
        // d/dp (p * p) through a shared node must count both operands
        let params = [1.5];
        let mut tape = ParamTape::new(JetLayout::full(2));
        let (x, _) = tape.seed(&[0.2, 0.4], 0.0);
        let p = tape.param(&params, 0, 1);
        let x0 = tape.select(x, &[0]);
        let px = tape.mul(p, x0);
        let sq = tape.mul(px, px);
        let mut c = vec![0.0; tape.layout().width()];
        c[tape.layout().hess_slot(0, 0).unwrap()] = 1.0;
        let h = tape.contract(sq, &c);
        // (p x)^2 has d2/dx2 = 2 p^2, so d/dp = 4 p
        let mut g = [0.0];
        tape.backward(&params, h, 1.0, &mut g).unwrap();
        assert!((g[0] - 4.0 * 1.5).abs() < 1e-14);
    }
}
