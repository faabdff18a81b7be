//! Graph attention forecaster.
//!
//! Per station, the `c_in × F` input block is flattened and projected to
//! `hidden_dim` with a LeakyReLU. A stack of attention layers follows. Each
//! head scores neighbour pairs with `LeakyReLU(aᵀ[Wh_i ‖ Wh_j])`, optionally
//! adds `ln a_ij`, and normalizes over the stations with `a_ij > 0`. Hidden
//! layers concatenate their heads; the last layer averages them. A head shared
//! by all stations maps the final embedding to `c_out` logits.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::dataset::{FeatureMode, NormStats};
use crate::graph::GraphSpec;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("station {0} has no positive adjacency entry, not even a self-loop")]
    IsolatedNode(usize),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// How the effective adjacency shapes attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionBias {
    /// Only the support `a_ij > 0` matters.
    MaskOnly,
    /// Adds `ln a_ij` to the logits, which multiplies each softmax numerator
    /// by `a_ij`.
    #[default]
    LogBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: FeatureMode,
    pub c_in: usize,
    pub c_out: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub attention_bias: AttentionBias,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Di,
            c_in: 10,
            c_out: 3,
            n_layers: 2,
            hidden_dim: 64,
            n_heads: 4,
            attention_bias: AttentionBias::LogBias,
            leaky_slope: LEAKY_SLOPE,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn n_features(&self) -> usize {
        self.mode.n_features()
    }

    pub fn input_dim(&self) -> usize {
        self.c_in * self.n_features()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.c_in == 0 || self.c_out == 0 {
            return bad(format!("c_in = {}, c_out = {} must be >= 1", self.c_in, self.c_out));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.hidden_dim == 0 {
            return bad("n_layers, n_heads and hidden_dim must be >= 1".into());
        }
        if !self.hidden_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad(format!("leaky_slope {} must be finite and >= 0", self.leaky_slope));
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, [usize; 2])> {
        let d = self.head_dim();
        let mut out = vec![
            ("input.weight".into(), [self.input_dim(), self.hidden_dim]),
            ("input.bias".into(), [1, self.hidden_dim]),
        ];
        for l in 0..self.n_layers {
            for h in 0..self.n_heads {
                out.push((format!("gat{l}.head{h}.weight"), [self.hidden_dim, d]));
                out.push((format!("gat{l}.head{h}.attn"), [2 * d, 1]));
            }
        }
        out.push(("output.weight".into(), [d, self.c_out]));
        out.push(("output.bias".into(), [1, self.c_out]));
        out
    }
}

/// Attention support and log-weights derived once from a graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    n: usize,
    mask: Rc<Vec<bool>>,
    log_a: Tensor,
    policy: AttentionBias,
}

impl GraphContext {
    pub fn new(a: &[f64], n: usize, policy: AttentionBias) -> Result<Self, ModelError> {
        if a.len() != n * n {
            return Err(ModelError::ShapeMismatch(format!(
                "adjacency has {} entries for {} stations",
                a.len(),
                n
            )));
        }
        let mask: Vec<bool> = a.iter().map(|&v| v > 0.0).collect();
        if let Some(i) = (0..n).find(|&i| !mask[i * n..(i + 1) * n].iter().any(|&m| m)) {
            return Err(ModelError::IsolatedNode(i));
        }
        let log_a = a.iter().map(|&v| if v > 0.0 { libm::log(v) } else { 0.0 }).collect();
        Ok(Self {
            n,
            mask: Rc::new(mask),
            log_a: Tensor::matrix(n, n, log_a),
            policy,
        })
    }

    pub fn from_graph(graph: &GraphSpec, policy: AttentionBias) -> Result<Self, ModelError> {
        Self::new(&graph.a, graph.n(), policy)
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// One head's attention: returns `(α, α·Wh)`.
fn head_on_tape(
    tape: &mut Tape,
    h: Var,
    weight: Var,
    attn: Var,
    ctx: &GraphContext,
    slope: f64,
) -> Result<(Var, Var), ModelError> {
    let d = tape.value(weight).cols();
    let wh = tape.matmul(h, weight)?;
    let a_src = tape.slice_rows(attn, 0, d)?;
    let a_dst = tape.slice_rows(attn, d, 2 * d)?;
    let s = tape.matmul(wh, a_src)?;
    let t = tape.matmul(wh, a_dst)?;
    let bias = (ctx.policy == AttentionBias::LogBias).then_some(&ctx.log_a);
    let alpha = tape.attention(s, t, &ctx.mask, bias, slope)?;
    let out = tape.matmul(alpha, wh)?;
    Ok((alpha, out))
}

/// Attention matrix of a single head for node embeddings `h: N × d_in`.
pub fn attention_coefficients(
    h: &Tensor,
    weight: &Tensor,
    attn: &Tensor,
    ctx: &GraphContext,
    slope: f64,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let (hv, wv, av) = (tape.constant(h.clone()), tape.constant(weight.clone()), tape.constant(attn.clone()));
    let (alpha, _) = head_on_tape(&mut tape, hv, wv, av, ctx, slope)?;
    Ok(tape.value(alpha).clone())
}

/// Rearranges a `[c_in, N, F]` window into `N × (c_in·F)`, one row per
/// station with days in order.
pub fn flatten_window(x: &[f64], c_in: usize, n: usize, f: usize) -> Tensor {
    let mut out = Vec::with_capacity(x.len());
    for s in 0..n {
        for t in 0..c_in {
            let i = (t * n + s) * f;
            out.extend_from_slice(&x[i..i + f]);
        }
    }
    Tensor::matrix(n, c_in * f, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatModel {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
}

impl GatModel {
    /// Glorot-uniform weights, zero biases, deterministic per `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, [r, c]) in config.param_shapes() {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&[r, c])
            } else {
                let limit = libm::sqrt(6.0 / (r + c) as f64);
                let data = (0..r * c).map(|_| limit * (2.0 * rng.random::<f64>() - 1.0)).collect();
                Tensor::matrix(r, c, data)
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self { config, names, params })
    }

    /// Checks names and shapes against the config.
    pub fn from_parts(config: ModelConfig, names: Vec<String>, params: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = config.param_shapes();
        if names.len() != expected.len() || params.len() != expected.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} parameters given, config needs {}",
                params.len(),
                expected.len()
            )));
        }
        for ((name, shape), (n, p)) in expected.iter().zip(names.iter().zip(&params)) {
            if name != n {
                return Err(ModelError::MissingParam(name.clone()));
            }
            if p.shape() != shape {
                return Err(ModelError::ShapeMismatch(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    p.shape(),
                    shape
                )));
            }
        }
        Ok(Self { config, names, params })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass for a flattened window `x: N × (c_in·F)` and
    /// returns `c_out × N` probabilities. `vars` are the parameters already
    /// placed on `tape`, in canonical order.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], x: Tensor, ctx: &GraphContext) -> Result<Var, ModelError> {
        self.forward_recording(tape, vars, x, ctx, None)
    }

    fn forward_recording(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Tensor,
        ctx: &GraphContext,
        mut attention: Option<&mut Vec<Tensor>>,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        if x.rows() != ctx.n || x.cols() != cfg.input_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "input is {}×{}, expected {}×{} ({} stations, c_in {} × {} features)",
                x.rows(),
                x.cols(),
                ctx.n,
                cfg.input_dim(),
                ctx.n,
                cfg.c_in,
                cfg.n_features()
            )));
        }
        let slope = cfg.leaky_slope;
        let xv = tape.constant(x);
        let z = tape.matmul(xv, vars[0])?;
        let z = tape.add_row(z, vars[1])?;
        let mut h = tape.leaky_relu(z, slope);
        let mut k = 2;
        for l in 0..cfg.n_layers {
            let mut outs = Vec::with_capacity(cfg.n_heads);
            for _ in 0..cfg.n_heads {
                let (alpha, out) = head_on_tape(tape, h, vars[k], vars[k + 1], ctx, slope)?;
                if let Some(rec) = attention.as_deref_mut() {
                    rec.push(tape.value(alpha).clone());
                }
                outs.push(out);
                k += 2;
            }
            if l + 1 < cfg.n_layers {
                let cat = tape.concat_cols(&outs)?;
                h = tape.leaky_relu(cat, slope);
            } else {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = tape.add(acc, o)?;
                }
                h = tape.scale(acc, 1.0 / cfg.n_heads as f64);
            }
        }
        let logits = tape.matmul(h, vars[k])?;
        let logits = tape.add_row(logits, vars[k + 1])?;
        let p = tape.sigmoid(logits);
        Ok(tape.transpose(p)?)
    }

    /// Places every parameter on `tape` as a gradient-receiving leaf.
    pub fn load_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Probabilities `c_out × N` for a flattened window.
    pub fn predict(&self, x: Tensor, ctx: &GraphContext) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let out = self.forward_recording(&mut tape, &vars, x, ctx, None)?;
        Ok(tape.value(out).clone())
    }

    /// Probabilities plus every head's attention matrix, layer by layer.
    pub fn predict_with_attention(&self, x: Tensor, ctx: &GraphContext) -> Result<(Tensor, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let mut rec = Vec::new();
        let out = self.forward_recording(&mut tape, &vars, x, ctx, Some(&mut rec))?;
        Ok((tape.value(out).clone(), rec))
    }
}

/// A model bundled with what it needs to score new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: GatModel,
    pub norm: NormStats,
    pub graph: GraphSpec,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> ModelConfig {
        ModelConfig {
            mode: FeatureMode::Baseline,
            c_in: 2,
            c_out: 3,
            hidden_dim: 8,
            n_heads: 2,
            seed,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = GatModel::init(tiny(1)).unwrap();
        assert_eq!(a, GatModel::init(tiny(1)).unwrap());
        assert_ne!(a, GatModel::init(tiny(2)).unwrap());
        assert_eq!(a.param("input.bias").unwrap(), &Tensor::zeros(&[1, 8]));
    }

    #[test]
    fn glorot_bound_square() {
        let cfg = ModelConfig {
            hidden_dim: 64,
            n_heads: 1,
            ..tiny(3)
        };
        let m = GatModel::init(cfg).unwrap();
        let w = m.param("gat0.head0.weight").unwrap();
        assert_eq!(w.shape(), [64, 64]);
        let bound = libm::sqrt(6.0 / 128.0);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig { hidden_dim: 10, n_heads: 4, ..tiny(0) };
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn isolated_node_is_an_error() {
        let a = [1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            GraphContext::new(&a, 3, AttentionBias::LogBias).unwrap_err(),
            ModelError::IsolatedNode(2)
        );
    }

    #[test]
    fn flatten_orders_days_per_station() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let t = flatten_window(&x, 2, 3, 2);
        assert_eq!(t.shape(), [3, 4]);
        assert_eq!(&t.data()[..4], [0.0, 1.0, 6.0, 7.0]);
    }

    #[test]
    fn output_shape_and_range() {
        let m = GatModel::init(tiny(5)).unwrap();
        let ctx = GraphContext::new(&[1.0, 0.3, 0.3, 1.0], 2, AttentionBias::LogBias).unwrap();
        let x: Vec<f64> = (0..2 * 2 * 13).map(|i| libm::sin(i as f64)).collect();
        let p = m.predict(flatten_window(&x, 2, 2, 13), &ctx).unwrap();
        assert_eq!(p.shape(), [3, 2]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let bad = Tensor::matrix(2, 5, vec![0.0; 10]);
        assert!(matches!(m.predict(bad, &ctx), Err(ModelError::ShapeMismatch(_))));
    }
}
