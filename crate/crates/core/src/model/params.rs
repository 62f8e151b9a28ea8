use crate::autodiff::{xavier_with, SplitMix64, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{ClassifierParams, GatHead, GatLayerParams, GcnLayerParams};

use super::config::{ModelConfig, Variant};

/// Every trainable weight of a model, generic over the leaf type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// One stack per relation; empty for [`Variant::Pr`].
    pub gcn: Vec<GcnLayerParams<T>>,
    pub gat: GatLayerParams<T>,
    pub clf: ClassifierParams<T>,
}

pub type ModelParams = Params<Tensor>;

impl<T> Params<T> {
    /// Leaves with their persistent names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (r, stack) in self.gcn.iter().enumerate() {
            for (l, w) in stack.weights.iter().enumerate() {
                out.push((format!("gcn.{r}.{l}.weight"), w));
            }
        }
        for (k, h) in self.gat.heads.iter().enumerate() {
            out.push((format!("gat.{k}.transform"), &h.transform));
            out.push((format!("gat.{k}.att_src"), &h.att_src));
            out.push((format!("gat.{k}.att_dst"), &h.att_dst));
        }
        out.push(("clf.hidden.weight".into(), &self.clf.hidden_weight));
        out.push(("clf.hidden.bias".into(), &self.clf.hidden_bias));
        out.push(("clf.out.weight".into(), &self.clf.out_weight));
        out.push(("clf.out.bias".into(), &self.clf.out_bias));
        out
    }

    pub fn leaves(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.named().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        Params {
            gcn: self
                .gcn
                .iter()
                .map(|s| GcnLayerParams {
                    weights: s.weights.iter().map(&mut f).collect(),
                })
                .collect(),
            gat: GatLayerParams {
                heads: self
                    .gat
                    .heads
                    .iter()
                    .map(|h| GatHead {
                        transform: f(&h.transform),
                        att_src: f(&h.att_src),
                        att_dst: f(&h.att_dst),
                    })
                    .collect(),
            },
            clf: ClassifierParams {
                hidden_weight: f(&self.clf.hidden_weight),
                hidden_bias: f(&self.clf.hidden_bias),
                out_weight: f(&self.clf.out_weight),
                out_bias: f(&self.clf.out_bias),
            },
        }
    }

    /// Same structure with leaves replaced, in [`Params::named`] order.
    pub fn with_leaves<U>(&self, leaves: Vec<U>) -> Result<Params<U>> {
        let expected = self.len();
        if leaves.len() != expected {
            return Err(Error::Config(format!(
                "{} parameter tensors supplied, model has {expected}",
                leaves.len()
            )));
        }
        let mut it = leaves.into_iter();
        Ok(self.map(|_| it.next().expect("length checked")))
    }
}

impl ModelParams {
    /// Xavier-initialized weights and zero biases. Each tensor draws from
    /// its own stream derived from `config.seed` and the tensor name.
    pub fn init(config: &ModelConfig, n_relations: usize, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        if n_relations == 0 || feature_dim == 0 {
            return Err(Error::Config(
                "need at least one relation and one feature".into(),
            ));
        }
        let d = config.embed_dim;
        let seed = config.seed;
        let draw = |name: &str, rows: usize, cols: usize| {
            let mut rng = SplitMix64::derive(seed, name);
            xavier_with(rows, cols, &mut rng)
        };
        let gcn = match config.variant {
            Variant::Pr => Vec::new(),
            Variant::Full | Variant::Pa => (0..n_relations)
                .map(|r| GcnLayerParams {
                    weights: (0..config.gcn_layers)
                        .map(|l| {
                            let d_in = if l == 0 { feature_dim } else { d };
                            draw(&format!("gcn.{r}.{l}.weight"), d_in, d)
                        })
                        .collect(),
                })
                .collect(),
        };
        let gat_in = match config.variant {
            Variant::Pr => feature_dim,
            Variant::Full | Variant::Pa => n_relations * d,
        };
        let dh = config.head_dim();
        let heads = (0..config.gat_heads)
            .map(|k| GatHead {
                transform: draw(&format!("gat.{k}.transform"), gat_in, dh),
                att_src: draw(&format!("gat.{k}.att_src"), dh, 1),
                att_dst: draw(&format!("gat.{k}.att_dst"), dh, 1),
            })
            .collect();
        let clf = ClassifierParams {
            hidden_weight: draw("clf.hidden.weight", d, d),
            hidden_bias: Tensor::zeros(1, d),
            out_weight: draw("clf.out.weight", d, 1),
            out_bias: Tensor::zeros(1, 1),
        };
        Ok(Params {
            gcn,
            gat: GatLayerParams { heads },
            clf,
        })
    }

    /// Records every leaf as a trainable tape input.
    pub fn lift(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|t| tape.param(t.clone()))
    }

    /// Records every leaf as a constant (inference only).
    pub fn lift_constant(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|t| tape.constant(t.clone()))
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.leaves().into_iter().cloned().collect()
    }

    /// Rebuilds from named tensors, checking names and shapes against a
    /// freshly initialized model of the same configuration.
    pub fn from_named(
        config: &ModelConfig,
        n_relations: usize,
        feature_dim: usize,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let template = Self::init(config, n_relations, feature_dim)?;
        let expect = template.named();
        if expect.len() != named.len() {
            return Err(Error::WeightFormat(format!(
                "{} tensors in file, configuration needs {}",
                named.len(),
                expect.len()
            )));
        }
        for ((en, et), (gn, gt)) in expect.iter().zip(&named) {
            if en != gn || et.shape() != gt.shape() {
                return Err(Error::WeightFormat(format!(
                    "expected {en} {:?}, found {gn} {:?}",
                    et.shape(),
                    gt.shape()
                )));
            }
        }
        template.with_leaves(named.into_iter().map(|(_, t)| t).collect())
    }

    pub fn count(&self) -> usize {
        self.leaves().iter().map(|t| t.len()).sum()
    }

    /// `Σθ²` over every parameter.
    pub fn sum_squares(&self) -> f64 {
        self.leaves().iter().map(|t| t.sum_squares()).sum()
    }
}
