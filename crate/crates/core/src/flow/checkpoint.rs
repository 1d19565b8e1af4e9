//! JSON checkpoints of a [`TemporalFlow`].
//!
//! Floats are written in shortest round-trip decimal form, so a reloaded
//! flow is bit-identical to the saved one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coupling::{partition, ConditionerNet, CouplingLayer, Dense};
use super::{ActnormLayer, FlowSpec, Layer, SplineLayer, SplineShape, SplineSpec, TemporalFlow};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dim: usize,
    /// Number of (actnorm, coupling) pairs `L`.
    pub couplings: usize,
    pub hidden: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Spline half-width `c`.
    pub half_width: f64,
    /// Spline knot intervals `m`.
    pub intervals: usize,
    pub spline_enabled: bool,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerRecord {
    Actnorm {
        dim: usize,
        initialized: bool,
        a: Vec<f64>,
        b: Vec<f64>,
    },
    Coupling {
        parity: usize,
        pass: Vec<usize>,
        transformed: Vec<usize>,
        dense: Vec<DenseRecord>,
        zeta: Vec<f64>,
    },
    Spline {
        intervals: usize,
        logits: Vec<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Checkpoint {
    pub fn from_flow(flow: &TemporalFlow) -> Self {
        let spec = flow.spec();
        let p = flow.params();
        let layers = flow
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Actnorm(a) => LayerRecord::Actnorm {
                    dim: a.dim,
                    initialized: a.initialized,
                    a: a.scale(p).to_vec(),
                    b: a.shift(p).to_vec(),
                },
                Layer::Coupling(c) => LayerRecord::Coupling {
                    parity: c.parity,
                    pass: c.pass.clone(),
                    transformed: c.trans.clone(),
                    dense: c
                        .net
                        .layers
                        .iter()
                        .map(|d| DenseRecord {
                            rows: d.rows,
                            cols: d.cols,
                            weights: d.weights(p).to_vec(),
                            biases: d.biases(p).to_vec(),
                        })
                        .collect(),
                    zeta: c.zeta(p).to_vec(),
                },
                Layer::Spline(s) => LayerRecord::Spline {
                    intervals: s.shape.intervals,
                    logits: s.logits(p).to_vec(),
                },
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            dim: spec.dim,
            couplings: spec.couplings,
            hidden: spec.hidden,
            beta: spec.beta,
            gamma: spec.spline.gamma,
            half_width: spec.spline.half_width,
            intervals: spec.spline.intervals,
            spline_enabled: spec.spline.enabled,
            layers,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(ck)
    }

    pub fn spec(&self) -> FlowSpec {
        FlowSpec {
            dim: self.dim,
            couplings: self.couplings,
            hidden: self.hidden,
            beta: self.beta,
            spline: SplineSpec {
                enabled: self.spline_enabled,
                intervals: self.intervals,
                gamma: self.gamma,
                half_width: self.half_width,
            },
        }
    }

    /// Rebuilds the flow, checking every shape against the header.
    pub fn to_flow(&self) -> Result<TemporalFlow> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let spec = self.spec();
        spec.validate()?;
        let expected_layers = 2 * spec.couplings + usize::from(spec.spline.enabled);
        if self.layers.len() != expected_layers {
            return Err(Error::Shape(format!(
                "{} layers recorded, header implies {expected_layers}",
                self.layers.len()
            )));
        }
        let d = spec.dim;
        let mut params = Vec::new();
        let mut layers = Vec::with_capacity(self.layers.len());
        let check = |what: &str, got: usize, want: usize| -> Result<()> {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!("{what}: got {got} values, expected {want}")))
            }
        };
        for (idx, rec) in self.layers.iter().enumerate() {
            let want_kind = if idx == 2 * spec.couplings {
                "spline"
            } else if idx % 2 == 0 {
                "actnorm"
            } else {
                "coupling"
            };
            match rec {
                LayerRecord::Actnorm {
                    dim,
                    initialized,
                    a,
                    b,
                } if want_kind == "actnorm" => {
                    check("actnorm dim", *dim, d)?;
                    check("actnorm a", a.len(), d)?;
                    check("actnorm b", b.len(), d)?;
                    let mut layer = ActnormLayer::new(d, &mut params);
                    layer.initialized = *initialized;
                    params[layer.offset..layer.offset + d].copy_from_slice(a);
                    params[layer.offset + d..layer.offset + 2 * d].copy_from_slice(b);
                    layers.push(Layer::Actnorm(layer));
                }
                LayerRecord::Coupling {
                    parity,
                    pass,
                    transformed,
                    dense,
                    zeta,
                } if want_kind == "coupling" => {
                    let (p_ref, t_ref) = partition(d, *parity);
                    if *pass != p_ref || *transformed != t_ref {
                        return Err(Error::Shape(format!("coupling {idx}: partition does not match parity")));
                    }
                    check("conditioner layers", dense.len(), 3)?;
                    let dims = [
                        (spec.hidden, pass.len() + 1),
                        (spec.hidden, spec.hidden),
                        (2 * transformed.len(), spec.hidden),
                    ];
                    let mut built = Vec::with_capacity(3);
                    for (rec, &(rows, cols)) in dense.iter().zip(&dims) {
                        check("dense rows", rec.rows, rows)?;
                        check("dense cols", rec.cols, cols)?;
                        check("dense weights", rec.weights.len(), rows * cols)?;
                        check("dense biases", rec.biases.len(), rows)?;
                        let weight = params.len();
                        params.extend_from_slice(&rec.weights);
                        let bias = params.len();
                        params.extend_from_slice(&rec.biases);
                        built.push(Dense {
                            weight,
                            bias,
                            rows,
                            cols,
                        });
                    }
                    check("zeta", zeta.len(), transformed.len())?;
                    let zoff = params.len();
                    params.extend_from_slice(zeta);
                    let net = ConditionerNet {
                        layers: built.try_into().expect("three dense layers"),
                    };
                    layers.push(Layer::Coupling(CouplingLayer::assemble(
                        net,
                        spec.beta,
                        zoff,
                        *parity,
                        pass.clone(),
                        transformed.clone(),
                    )));
                }
                LayerRecord::Spline { intervals, logits } if want_kind == "spline" => {
                    check("spline intervals", *intervals, spec.spline.intervals)?;
                    let shape = SplineShape::new(*intervals, spec.spline.gamma, spec.spline.half_width)?;
                    check("spline logits", logits.len(), shape.n_params())?;
                    let layer = SplineLayer::new(d, shape, &mut params);
                    params[layer.offset..layer.offset + logits.len()].copy_from_slice(logits);
                    layers.push(Layer::Spline(layer));
                }
                _ => {
                    return Err(Error::Shape(format!("layer {idx} should be {want_kind}")));
                }
            }
        }
        Ok(TemporalFlow::from_parts(spec, layers, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flow(spline: bool) -> TemporalFlow {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut spec = FlowSpec::new(3, 2);
        spec.hidden = 6;
        spec.spline.enabled = spline;
        spec.spline.intervals = 5;
        let mut flow = TemporalFlow::new(spec, &mut rng).unwrap();
        for p in flow.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        flow
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for spline in [false, true] {
            let flow = random_flow(spline);
            let ck = Checkpoint::from_flow(&flow);
            let text = ck.to_json().unwrap();
            let back: Checkpoint = serde_json::from_str(&text).unwrap();
            let flow2 = back.to_flow().unwrap();
            assert_eq!(flow.params(), flow2.params());
            let x = [0.2, -0.4, 1.1];
            assert_eq!(
                flow.log_density(&x, 0.3).unwrap().to_bits(),
                flow2.log_density(&x, 0.3).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn rejects_bad_version_and_shapes() {
        let flow = random_flow(false);
        let mut ck = Checkpoint::from_flow(&flow);
        ck.format_version = 99;
        assert!(matches!(ck.to_flow(), Err(Error::VersionMismatch { found: 99, .. })));

        let mut ck = Checkpoint::from_flow(&flow);
        if let LayerRecord::Actnorm { a, .. } = &mut ck.layers[0] {
            a.pop();
        }
        assert!(matches!(ck.to_flow(), Err(Error::Shape(_))));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let text = Checkpoint::from_flow(&random_flow(false)).to_json().unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Parse { .. })));
    }
}
