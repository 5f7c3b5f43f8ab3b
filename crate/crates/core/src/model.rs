//! The full parameter set of all heads, name-keyed views over it, and inference.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anfl::{self, AnflParams, DEFAULT_K, DEFAULT_NODE_DIM, NUM_AUS};
use crate::data::{Prediction, Sample};
use crate::error::{Error, Result};
use crate::heads::{self, AttentionParams, HeadParams, DEFAULT_ATTN_DIM, NUM_EXPRESSIONS};
use crate::math::{argmax, BatchNormState, BnMode, Tensor2};
use crate::par::{self, Execution};

/// Parameter groups, used as name prefixes and for freezing.
pub const GROUP_ANFL: &str = "anfl";
pub const GROUP_EX: &str = "ex";
pub const GROUP_ATTN: &str = "attn";
pub const GROUP_VA: &str = "va";
pub const GROUPS: [&str; 4] = [GROUP_ANFL, GROUP_EX, GROUP_ATTN, GROUP_VA];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub node_dim: usize,
    pub attn_dim: usize,
    pub num_aus: usize,
    pub num_classes: usize,
    pub k: usize,
}

impl ModelDims {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            node_dim: DEFAULT_NODE_DIM,
            attn_dim: DEFAULT_ATTN_DIM,
            num_aus: NUM_AUS,
            num_classes: NUM_EXPRESSIONS,
            k: DEFAULT_K,
        }
    }
}

/// Ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub attention: bool,
    pub batchnorm: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            attention: true,
            batchnorm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub anfl: AnflParams,
    pub heads: HeadParams,
}

/// Read-only view of one parameter tensor.
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

pub struct ParamMut<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a mut [f64],
}

/// Anything the optimizers can update through name-keyed mutable views.
pub trait Parameters: Clone {
    fn params_mut(&mut self) -> Vec<ParamMut<'_>>;
}

impl Parameters for ModelParams {
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        ModelParams::params_mut(self)
    }
}

impl Parameters for GradientSet {
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.0
            .iter_mut()
            .map(|(name, t)| ParamMut {
                name: name.clone(),
                shape: t.shape(),
                data: t.data_mut(),
            })
            .collect()
    }
}

/// Group prefix of a parameter name, e.g. `"anfl"` for `"anfl.w3"`.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| { let z: f64 = StandardNormal.sample(rng); std * z })
        .collect::<Vec<f64>>();
    Tensor2::new(rows, cols, data).expect("finite draws")
}

impl ModelParams {
    /// Seeded Gaussian initialization scaled by fan-in; anchors uniform on `[0, 1)`.
    pub fn init(dims: ModelDims, arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, din) = (dims.num_aus, dims.node_dim, dims.input_dim);
        if din == 0 || d == 0 {
            return Err(Error::Config("input and node dimensions must be positive".into()));
        }
        let he = (2.0 / din as f64).sqrt();
        let au_weights = (0..n).map(|_| gaussian(&mut rng, d, din, he)).collect();
        let au_biases = (0..n).map(|_| vec![0.0; d]).collect();
        let gcn_weight = gaussian(&mut rng, d, d, 0.1 / (d as f64).sqrt());
        let anchors_data = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let anchors = Tensor2::new(n, d, anchors_data)?;
        let anfl = AnflParams {
            au_weights,
            au_biases,
            gcn_weight,
            anchors,
            k: dims.k,
        };

        let lecun = (1.0 / din as f64).sqrt();
        let va_weight = gaussian(&mut rng, 2, din, lecun);
        let ex_weight = gaussian(&mut rng, dims.num_classes, din, lecun);
        let attention = if arch.attention {
            if dims.attn_dim == 0 {
                return Err(Error::Config("attention width must be at least 1".into()));
            }
            let da = dims.attn_dim;
            Some(AttentionParams {
                query: gaussian(&mut rng, da, n, (1.0 / n as f64).sqrt()),
                key: gaussian(&mut rng, da, dims.num_classes, (1.0 / dims.num_classes as f64).sqrt()),
                value: gaussian(&mut rng, dims.num_classes, da, (1.0 / da as f64).sqrt()),
            })
        } else {
            None
        };
        let heads = HeadParams {
            va_weight,
            va_bias: vec![0.0; 2],
            va_bn: arch.batchnorm.then(|| BatchNormState::new(2)),
            ex_weight,
            ex_bias: vec![0.0; dims.num_classes],
            attention,
        };
        let params = Self { anfl, heads };
        params.validate()?;
        Ok(params)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.anfl.input_dim(),
            node_dim: self.anfl.node_dim(),
            attn_dim: self.heads.attention.as_ref().map_or(0, AttentionParams::attn_dim),
            num_aus: self.anfl.num_nodes(),
            num_classes: self.heads.num_classes(),
            k: self.anfl.k,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            attention: self.heads.attention.is_some(),
            batchnorm: self.heads.va_bn.is_some(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.anfl.validate()?;
        self.heads.validate(self.anfl.input_dim(), self.anfl.num_nodes())?;
        if self.heads.ex_weight.cols() != self.anfl.input_dim() {
            return Err(Error::shape(
                "EX weight vs ANFL input",
                self.heads.ex_weight.shape(),
                (self.heads.num_classes(), self.anfl.input_dim()),
            ));
        }
        Ok(())
    }

    /// Every trainable tensor in a fixed order.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut refs = Vec::new();
        let a = &self.anfl;
        for (i, (w, b)) in a.au_weights.iter().zip(&a.au_biases).enumerate() {
            refs.push(ParamRef {
                name: format!("{GROUP_ANFL}.w{i}"),
                shape: w.shape(),
                data: w.data(),
            });
            refs.push(ParamRef {
                name: format!("{GROUP_ANFL}.b{i}"),
                shape: (1, b.len()),
                data: b,
            });
        }
        refs.push(ParamRef {
            name: format!("{GROUP_ANFL}.gcn"),
            shape: a.gcn_weight.shape(),
            data: a.gcn_weight.data(),
        });
        refs.push(ParamRef {
            name: format!("{GROUP_ANFL}.anchors"),
            shape: a.anchors.shape(),
            data: a.anchors.data(),
        });
        let h = &self.heads;
        refs.push(ParamRef {
            name: format!("{GROUP_EX}.w"),
            shape: h.ex_weight.shape(),
            data: h.ex_weight.data(),
        });
        refs.push(ParamRef {
            name: format!("{GROUP_EX}.b"),
            shape: (1, h.ex_bias.len()),
            data: &h.ex_bias,
        });
        if let Some(at) = &h.attention {
            for (n, t) in [("q", &at.query), ("k", &at.key), ("v", &at.value)] {
                refs.push(ParamRef {
                    name: format!("{GROUP_ATTN}.{n}"),
                    shape: t.shape(),
                    data: t.data(),
                });
            }
        }
        refs.push(ParamRef {
            name: format!("{GROUP_VA}.w"),
            shape: h.va_weight.shape(),
            data: h.va_weight.data(),
        });
        refs.push(ParamRef {
            name: format!("{GROUP_VA}.b"),
            shape: (1, 2),
            data: &h.va_bias,
        });
        if let Some(bn) = &h.va_bn {
            refs.push(ParamRef {
                name: format!("{GROUP_VA}.gamma"),
                shape: (1, bn.gamma.len()),
                data: &bn.gamma,
            });
            refs.push(ParamRef {
                name: format!("{GROUP_VA}.beta"),
                shape: (1, bn.beta.len()),
                data: &bn.beta,
            });
        }
        refs
    }

    /// Mutable counterpart of [`ModelParams::params`], same names and order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut refs = Vec::new();
        let a = &mut self.anfl;
        for (i, (w, b)) in a.au_weights.iter_mut().zip(a.au_biases.iter_mut()).enumerate() {
            refs.push(ParamMut {
                name: format!("{GROUP_ANFL}.w{i}"),
                shape: w.shape(),
                data: w.data_mut(),
            });
            refs.push(ParamMut {
                name: format!("{GROUP_ANFL}.b{i}"),
                shape: (1, b.len()),
                data: b,
            });
        }
        refs.push(ParamMut {
            name: format!("{GROUP_ANFL}.gcn"),
            shape: a.gcn_weight.shape(),
            data: a.gcn_weight.data_mut(),
        });
        refs.push(ParamMut {
            name: format!("{GROUP_ANFL}.anchors"),
            shape: a.anchors.shape(),
            data: a.anchors.data_mut(),
        });
        let h = &mut self.heads;
        refs.push(ParamMut {
            name: format!("{GROUP_EX}.w"),
            shape: h.ex_weight.shape(),
            data: h.ex_weight.data_mut(),
        });
        refs.push(ParamMut {
            name: format!("{GROUP_EX}.b"),
            shape: (1, h.ex_bias.len()),
            data: &mut h.ex_bias,
        });
        if let Some(at) = &mut h.attention {
            for (n, t) in [("q", &mut at.query), ("k", &mut at.key), ("v", &mut at.value)] {
                refs.push(ParamMut {
                    name: format!("{GROUP_ATTN}.{n}"),
                    shape: t.shape(),
                    data: t.data_mut(),
                });
            }
        }
        refs.push(ParamMut {
            name: format!("{GROUP_VA}.w"),
            shape: h.va_weight.shape(),
            data: h.va_weight.data_mut(),
        });
        refs.push(ParamMut {
            name: format!("{GROUP_VA}.b"),
            shape: (1, 2),
            data: &mut h.va_bias,
        });
        if let Some(bn) = &mut h.va_bn {
            refs.push(ParamMut {
                name: format!("{GROUP_VA}.gamma"),
                shape: (1, bn.gamma.len()),
                data: &mut bn.gamma,
            });
            refs.push(ParamMut {
                name: format!("{GROUP_VA}.beta"),
                shape: (1, bn.beta.len()),
                data: &mut bn.beta,
            });
        }
        refs
    }

    pub fn shapes(&self) -> BTreeMap<String, (usize, usize)> {
        self.params().into_iter().map(|p| (p.name, p.shape)).collect()
    }

    /// Snapshot of the tensors in `group`.
    pub fn group_snapshot(&self, group: &str) -> BTreeMap<String, Vec<f64>> {
        self.params()
            .into_iter()
            .filter(|p| group_of(&p.name) == group)
            .map(|p| (p.name, p.data.to_vec()))
            .collect()
    }
}

/// Name-keyed gradients mirroring [`ModelParams`] shapes. Vectors are `1 × n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientSet(BTreeMap<String, Tensor2>);

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor2) {
        self.0.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.0.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    /// L2 norm over all tensors together.
    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor2::is_finite)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.values_mut().for_each(|t| t.scale(alpha));
    }

    /// `self += alpha · other` over the names `other` carries.
    pub fn add_scaled(&mut self, alpha: f64, other: &GradientSet) {
        for (name, g) in &other.0 {
            match self.0.get_mut(name) {
                Some(t) => t.add_scaled(alpha, g),
                None => {
                    let mut t = g.clone();
                    t.scale(alpha);
                    self.0.insert(name.clone(), t);
                }
            }
        }
    }

    /// Flattened in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Raw outputs of every head for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub au: Vec<f64>,
    pub ex_scores: Vec<f64>,
    pub va: [f64; 2],
}

/// Inference over all samples: batchnorm in infer mode, graphs rebuilt per sample.
pub fn predict(params: &ModelParams, samples: &[&Sample], exec: Execution) -> Result<Vec<SampleOutput>> {
    let outs = par::map_indexed(exec, samples.len(), |i| -> Result<SampleOutput> {
        let x = &samples[i].feature;
        let au = anfl::anfl_forward(x, &params.anfl, None)?.activations;
        let raw = heads::ex_logits(x, &params.heads)?;
        let ex_scores = heads::expression_scores(&au, &raw, &params.heads)?;
        let row = Tensor2::new(1, x.len(), x.clone())?;
        let va = heads::va_head(&row, &params.heads, BnMode::Infer)?;
        Ok(SampleOutput {
            au,
            ex_scores,
            va: [va.get(0, 0), va.get(0, 1)],
        })
    });
    outs.into_iter().collect()
}

pub fn to_predictions(samples: &[&Sample], outputs: &[SampleOutput]) -> Vec<Prediction> {
    samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| Prediction {
            id: s.id.clone(),
            au: o.au.clone(),
            expr: argmax(&o.ex_scores),
            va: o.va,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            input_dim: 5,
            node_dim: 3,
            attn_dim: 4,
            num_aus: 12,
            num_classes: 8,
            k: 3,
        }
    }

    #[test]
    fn init_is_seeded_and_valid() {
        let a = ModelParams::init(dims(), Architecture::default(), 1).unwrap();
        let b = ModelParams::init(dims(), Architecture::default(), 1).unwrap();
        let c = ModelParams::init(dims(), Architecture::default(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.dims(), dims());
    }

    #[test]
    fn names_cover_every_group_and_match_mut_view() {
        let mut p = ModelParams::init(dims(), Architecture::default(), 1).unwrap();
        let names: Vec<String> = p.params().into_iter().map(|r| r.name).collect();
        let names_mut: Vec<String> = p.params_mut().into_iter().map(|r| r.name).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names.len(), 24 + 2 + 2 + 3 + 4);
        for g in GROUPS {
            assert!(names.iter().any(|n| group_of(n) == g), "{g}");
        }

        let ablated = ModelParams::init(
            dims(),
            Architecture {
                attention: false,
                batchnorm: false,
            },
            1,
        )
        .unwrap();
        let shapes = ablated.shapes();
        assert!(!shapes.keys().any(|n| n.starts_with("attn.") || n.ends_with("gamma")));
    }

    #[test]
    fn gradient_set_norm_and_accumulate() {
        let mut g = GradientSet::new();
        g.insert("a", Tensor2::row_vector(vec![3.0]).unwrap());
        let mut h = GradientSet::new();
        h.insert("a", Tensor2::row_vector(vec![1.0]).unwrap());
        h.insert("b", Tensor2::row_vector(vec![4.0]).unwrap());
        g.add_scaled(1.0, &h);
        assert_eq!(g.flatten(), vec![4.0, 4.0]);
        assert!((g.global_norm() - 32f64.sqrt()).abs() < 1e-15);
    }
}
