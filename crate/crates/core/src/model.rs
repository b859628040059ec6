//! Node classification models.
//!
//! * [`Architecture::Gcn`]: `Â_rw · ReLU(Â_rw · X · W0) · W1`.
//! * [`Architecture::Spectral`]: the channel/transform grid. With two
//!   channels and a nonlinear transform each layer computes
//!   `α_L · L_LP f(H W_L) + α_H · L_HP f(H W_H)`.
//! * [`Architecture::Spatial`]: the same two-channel mix written node by
//!   node, aggregating `ĥ_i + ĥ_j` and diversifying `ĥ_i - ĥ_j` over the
//!   closed neighborhood with weights `1/(d_i + 1)`.
//!
//! Mixing weights are `α = sigmoid(a_raw)`, so they stay in `(0, 1)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, DiffOperator, NeighborCombine, Tape, Tensor};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{OperatorKind, SparseOperator};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channels {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Architecture {
    Gcn,
    Spectral {
        channels: Channels,
        transform: Transform,
    },
    Spatial,
}

impl Architecture {
    pub const FB_SPECTRAL: Architecture = Architecture::Spectral {
        channels: Channels::Two,
        transform: Transform::Nonlinear,
    };

    /// Ablation grid in reporting order.
    pub const ABLATION_GRID: [Architecture; 4] = [
        Architecture::Spectral {
            channels: Channels::One,
            transform: Transform::Linear,
        },
        Architecture::Spectral {
            channels: Channels::One,
            transform: Transform::Nonlinear,
        },
        Architecture::Spectral {
            channels: Channels::Two,
            transform: Transform::Linear,
        },
        Architecture::Spectral {
            channels: Channels::Two,
            transform: Transform::Nonlinear,
        },
    ];

    pub fn is_two_channel(self) -> bool {
        matches!(
            self,
            Architecture::Spatial
                | Architecture::Spectral {
                    channels: Channels::Two,
                    ..
                }
        )
    }

    pub fn name(self) -> String {
        match self {
            Architecture::Gcn => "gcn".into(),
            Architecture::Spatial => "fb-spatial".into(),
            Architecture::FB_SPECTRAL => "fb-spectral".into(),
            Architecture::Spectral {
                channels,
                transform,
            } => format!(
                "{}ch-{}",
                match channels {
                    Channels::One => 1,
                    Channels::Two => 2,
                },
                match transform {
                    Transform::Linear => "linear",
                    Transform::Nonlinear => "nonlinear",
                }
            ),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [Architecture::Gcn, Architecture::Spatial]
            .into_iter()
            .chain(Architecture::ABLATION_GRID);
        for arch in all {
            if arch.name() == s {
                return Ok(arch);
            }
        }
        Err(Error::InvalidConfig(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Layer widths `[F, F_1, ..., O]`.
    pub dims: Vec<usize>,
    pub lp_kind: OperatorKind,
    pub hp_kind: OperatorKind,
}

impl ModelConfig {
    /// Default filter pair `(Â_rw, L̂_rw)`.
    pub fn new(architecture: Architecture, dims: Vec<usize>) -> Self {
        Self {
            architecture,
            dims,
            lp_kind: OperatorKind::RenormRwAffinity,
            hp_kind: OperatorKind::RenormRwLaplacian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer widths {:?} need at least an input and an output",
                self.dims
            )));
        }
        if self.architecture == Architecture::Gcn && self.dims.len() != 3 {
            return Err(Error::InvalidConfig(
                "the GCN baseline has exactly two propagation layers".into(),
            ));
        }
        if self.lp_kind.is_laplacian() || self.lp_kind.complement() != Some(self.hp_kind) {
            return Err(Error::InvalidConfig(format!(
                "({}, {}) is not a complementary affinity/Laplacian pair",
                self.lp_kind, self.hp_kind
            )));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }
}

/// Parameters of one layer. Weight matrices are `F_{l-1} × F_l` for the
/// spectral and GCN layers and `F_l × F_{l-1}` for spatial layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_l: Matrix,
    pub w_h: Option<Matrix>,
    pub a_l_raw: Option<f64>,
    pub a_h_raw: Option<f64>,
}

impl LayerParams {
    pub fn alphas(&self) -> Option<(f64, f64)> {
        Some((sigmoid(self.a_l_raw?), sigmoid(self.a_h_raw?)))
    }

    fn parameter_count(&self) -> usize {
        let w = |m: &Matrix| m.rows() * m.cols();
        w(&self.w_l)
            + self.w_h.as_ref().map_or(0, w)
            + self.a_l_raw.map_or(0, |_| 1)
            + self.a_h_raw.map_or(0, |_| 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Test mode: the channel nonlinearity becomes the identity.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub activation: Activation,
    /// Replaces `(α_L, α_H)` with constants. Test mode.
    pub alpha_override: Option<(f64, f64)>,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            activation: Activation::Relu,
            alpha_override: None,
        }
    }
}

/// Graph-dependent state shared by every forward pass on one graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub graph: Arc<Graph>,
    pub lp: Arc<DiffOperator>,
    pub hp: Arc<DiffOperator>,
    pub renorm_rw: Arc<DiffOperator>,
}

impl GraphContext {
    pub fn new(graph: Arc<Graph>, lp_kind: OperatorKind, hp_kind: OperatorKind) -> Result<Self> {
        let lp = DiffOperator::new(SparseOperator::build(&graph, lp_kind)?);
        let hp = DiffOperator::new(SparseOperator::build(&graph, hp_kind)?);
        let renorm_rw = if lp_kind == OperatorKind::RenormRwAffinity {
            Arc::clone(&lp)
        } else {
            DiffOperator::new(SparseOperator::build(&graph, OperatorKind::RenormRwAffinity)?)
        };
        Ok(Self {
            graph,
            lp,
            hp,
            renorm_rw,
        })
    }

    pub fn for_config(graph: Arc<Graph>, cfg: &ModelConfig) -> Result<Self> {
        Self::new(graph, cfg.lp_kind, cfg.hp_kind)
    }
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerTensors {
    pub w_l: Tensor,
    pub w_h: Option<Tensor>,
    pub a_l_raw: Option<Tensor>,
    pub a_h_raw: Option<Tensor>,
}

impl LayerTensors {
    /// Records `layer` on `tape` as parameters.
    pub fn record(tape: &mut Tape, layer: &LayerParams) -> Result<Self> {
        Ok(Self {
            w_l: tape.parameter(layer.w_l.clone())?,
            w_h: layer.w_h.clone().map(|w| tape.parameter(w)).transpose()?,
            a_l_raw: layer.a_l_raw.map(|a| tape.scalar_parameter(a)).transpose()?,
            a_h_raw: layer.a_h_raw.map(|a| tape.scalar_parameter(a)).transpose()?,
        })
    }

    /// Handles in the same order as [`Model::flat_params`].
    pub fn flat(&self) -> Vec<Tensor> {
        let mut v = vec![self.w_l];
        v.extend(self.w_h);
        v.extend(self.a_l_raw);
        v.extend(self.a_h_raw);
        v
    }
}

fn activate(tape: &mut Tape, x: Tensor, act: Activation) -> Result<Tensor> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Identity => Ok(x),
    }
}

fn mixing_weights(
    tape: &mut Tape,
    layer: &LayerTensors,
    opts: &ForwardOptions,
) -> Result<(Tensor, Tensor)> {
    if let Some((al, ah)) = opts.alpha_override {
        return Ok((
            tape.constant(Matrix::filled(1, 1, al))?,
            tape.constant(Matrix::filled(1, 1, ah))?,
        ));
    }
    let missing = || Error::InvalidConfig("two-channel layer without mixing scalars".into());
    let al = layer.a_l_raw.ok_or_else(missing)?;
    let ah = layer.a_h_raw.ok_or_else(missing)?;
    Ok((tape.sigmoid(al)?, tape.sigmoid(ah)?))
}

fn expect_cols(op: &'static str, h: Tensor, w: Tensor, rows_of_w: bool) -> Result<()> {
    let want = if rows_of_w { w.rows() } else { w.cols() };
    if h.cols() != want {
        return Err(Error::ShapeMismatch {
            op,
            lhs: h.shape(),
            rhs: w.shape(),
        });
    }
    Ok(())
}

/// `α_L · L_LP f(H W_L) + α_H · L_HP f(H W_H)`.
pub fn spectral_fb_forward(
    tape: &mut Tape,
    ctx: &GraphContext,
    layer: &LayerTensors,
    h_prev: Tensor,
    opts: &ForwardOptions,
) -> Result<Tensor> {
    spectral_layer(tape, ctx, layer, h_prev, Channels::Two, Transform::Nonlinear, opts)
}

/// One spectral layer of the channel/transform grid, before any outer
/// activation.
pub fn spectral_layer(
    tape: &mut Tape,
    ctx: &GraphContext,
    layer: &LayerTensors,
    h_prev: Tensor,
    channels: Channels,
    transform: Transform,
    opts: &ForwardOptions,
) -> Result<Tensor> {
    expect_cols("spectral_layer", h_prev, layer.w_l, true)?;
    let channel = |tape: &mut Tape, w: Tensor, op: &Arc<DiffOperator>| -> Result<Tensor> {
        let hw = tape.matmul(h_prev, w)?;
        let hw = match transform {
            Transform::Nonlinear => activate(tape, hw, opts.activation)?,
            Transform::Linear => hw,
        };
        tape.sparse_apply(op, hw)
    };
    let low = channel(tape, layer.w_l, &ctx.lp)?;
    match channels {
        Channels::One => Ok(low),
        Channels::Two => {
            let w_h = layer
                .w_h
                .ok_or_else(|| Error::InvalidConfig("two-channel layer without W_H".into()))?;
            let high = channel(tape, w_h, &ctx.hp)?;
            let (al, ah) = mixing_weights(tape, layer, opts)?;
            let low = tape.scale(low, al)?;
            let high = tape.scale(high, ah)?;
            tape.add(low, high)
        }
    }
}

/// Node-level two-channel layer with `w_ij = 1/(d_i + 1)`; returns
/// `(mixed output, aggregation channel, diversification channel)`.
pub fn spatial_fb_channels(
    tape: &mut Tape,
    ctx: &GraphContext,
    layer: &LayerTensors,
    h_prev: Tensor,
    opts: &ForwardOptions,
) -> Result<(Tensor, Tensor, Tensor)> {
    if h_prev.rows() != ctx.graph.node_count() {
        return Err(Error::ShapeMismatch {
            op: "spatial_fb_forward",
            lhs: h_prev.shape(),
            rhs: (ctx.graph.node_count(), h_prev.cols()),
        });
    }
    expect_cols("spatial_fb_forward", h_prev, layer.w_l, false)?;
    let w_h = layer
        .w_h
        .ok_or_else(|| Error::InvalidConfig("spatial layer without W_H".into()))?;
    let hl = tape.matmul_transposed(h_prev, layer.w_l)?;
    let hl = activate(tape, hl, opts.activation)?;
    let hh = tape.matmul_transposed(h_prev, w_h)?;
    let hh = activate(tape, hh, opts.activation)?;
    let low = tape.neighborhood_combine(&ctx.graph, hl, NeighborCombine::Sum)?;
    let high = tape.neighborhood_combine(&ctx.graph, hh, NeighborCombine::Difference)?;
    let (al, ah) = mixing_weights(tape, layer, opts)?;
    let a = tape.scale(low, al)?;
    let b = tape.scale(high, ah)?;
    Ok((tape.add(a, b)?, low, high))
}

pub fn spatial_fb_forward(
    tape: &mut Tape,
    ctx: &GraphContext,
    layer: &LayerTensors,
    h_prev: Tensor,
    opts: &ForwardOptions,
) -> Result<Tensor> {
    Ok(spatial_fb_channels(tape, ctx, layer, h_prev, opts)?.0)
}

/// `Â_rw · ReLU(Â_rw · X · W0) · W1`.
pub fn gcn_forward(
    tape: &mut Tape,
    ctx: &GraphContext,
    w0: Tensor,
    w1: Tensor,
    x: Tensor,
    opts: &ForwardOptions,
) -> Result<Tensor> {
    expect_cols("gcn_forward", x, w0, true)?;
    let ax = tape.sparse_apply(&ctx.renorm_rw, x)?;
    let h = tape.matmul(ax, w0)?;
    let h = activate(tape, h, opts.activation)?;
    let ah = tape.sparse_apply(&ctx.renorm_rw, h)?;
    tape.matmul(ah, w1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
}

/// Result of recording a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Tensor,
    pub layers: Vec<LayerTensors>,
}

impl Forward {
    pub fn flat_params(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(LayerTensors::flat).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    /// Glorot-uniform weights from `seed`; mixing scalars start at 0 (α = 0.5).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spatial = config.architecture == Architecture::Spatial;
        let two = config.architecture.is_two_channel();
        let layers = config
            .dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let mut glorot = || {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let (r, c) = if spatial {
                        (fan_out, fan_in)
                    } else {
                        (fan_in, fan_out)
                    };
                    let data = (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect();
                    Matrix::from_vec(r, c, data).expect("sized above")
                };
                let w_l = glorot();
                let w_h = two.then(&mut glorot);
                LayerParams {
                    w_l,
                    w_h,
                    a_l_raw: two.then_some(0.0),
                    a_h_raw: two.then_some(0.0),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerParams::parameter_count).sum()
    }

    /// Every parameter as a matrix (scalars as 1×1), with a flag marking the
    /// weight matrices that receive weight decay.
    pub fn flat_params(&self) -> Vec<(Matrix, bool)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((l.w_l.clone(), true));
            if let Some(w) = &l.w_h {
                out.push((w.clone(), true));
            }
            for a in [l.a_l_raw, l.a_h_raw].into_iter().flatten() {
                out.push((Matrix::filled(1, 1, a), false));
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[Matrix]) -> Result<()> {
        let mut it = flat.iter();
        let mut next = |shape: (usize, usize)| -> Result<Matrix> {
            let m = it
                .next()
                .ok_or_else(|| Error::InvalidConfig("too few parameters".into()))?;
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "set_flat_params",
                    lhs: shape,
                    rhs: m.shape(),
                });
            }
            Ok(m.clone())
        };
        for l in &mut self.layers {
            l.w_l = next(l.w_l.shape())?;
            if let Some(w) = &mut l.w_h {
                *w = next(w.shape())?;
            }
            for a in [&mut l.a_l_raw, &mut l.a_h_raw].into_iter().flatten() {
                *a = next((1, 1))?.as_slice()[0];
            }
        }
        Ok(())
    }

    /// Current `(α_L, α_H)` per two-channel layer.
    pub fn alphas(&self) -> Vec<(f64, f64)> {
        self.layers.iter().filter_map(LayerParams::alphas).collect()
    }

    /// Records the full forward pass; the returned logits feed directly into
    /// softmax cross-entropy.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        x: Tensor,
        opts: &ForwardOptions,
    ) -> Result<Forward> {
        let layers: Vec<LayerTensors> = self
            .layers
            .iter()
            .map(|l| LayerTensors::record(tape, l))
            .collect::<Result<_>>()?;
        let logits = match self.config.architecture {
            Architecture::Gcn => gcn_forward(tape, ctx, layers[0].w_l, layers[1].w_l, x, opts)?,
            Architecture::Spectral {
                channels,
                transform,
            } => {
                // one-channel and linear cells keep an activation between layers
                let outer = channels == Channels::One || transform == Transform::Linear;
                let mut h = x;
                for (i, lt) in layers.iter().enumerate() {
                    h = spectral_layer(tape, ctx, lt, h, channels, transform, opts)?;
                    if outer && i + 1 < layers.len() {
                        h = activate(tape, h, opts.activation)?;
                    }
                }
                h
            }
            Architecture::Spatial => {
                let mut h = x;
                for lt in &layers {
                    h = spatial_fb_forward(tape, ctx, lt, h, opts)?;
                }
                h
            }
        };
        Ok(Forward { logits, layers })
    }

    /// Logits without keeping the tape.
    pub fn predict(&self, ctx: &GraphContext, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xt = tape.constant(x.clone())?;
        let f = self.forward(&mut tape, ctx, xt, &ForwardOptions::default())?;
        Ok(tape.value(f.logits).clone())
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ck = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&ck).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::parse("<checkpoint>", e.line(), e))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "checkpoint schema {} unsupported",
                ck.schema_version
            )));
        }
        ck.model.config.validate()?;
        Ok(ck.model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path.display(), e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        Self::from_checkpoint_json(&s)
    }
}
