//! Generator and discriminator networks for the synthetic benchmarks.
//!
//! Both are plain MLPs with leaky-ReLU hidden activations. The discriminator
//! is kept split into a feature stack (`D1`, every leaky-activated layer) and
//! a linear classification head (`D2`, the final affine map): the
//! feature-statistics-regularized objective feeds the head the per-batch mean
//! and variance of `D1`'s features alongside the features themselves.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mathx;
use crate::matrix::Matrix;
use crate::params::{Layout, LayoutEntry, ParamVector};
use crate::rng;
use crate::tape::{Bank, NodeId, Tape};

/// Activation applied after the final affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    /// Used by the discriminator feature stack, whose "output" is just the
    /// last hidden activation.
    LeakyRelu,
}

/// MLP architecture descriptor. `hidden_layers` counts leaky-activated
/// hidden layers of width `hidden_width`; the net then applies one affine map
/// to `output_dim` followed by `output_activation`. `hidden_layers = 0`
/// describes a bare affine map (the discriminator head).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub leak: f64,
    pub output_activation: OutputActivation,
}

impl MlpNet {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("network dims must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return Err(Error::Config(format!(
                "leak must lie in (0,1), got {}",
                self.leak
            )));
        }
        Ok(())
    }

    /// Number of affine layers.
    pub fn affine_count(&self) -> usize {
        self.hidden_layers + 1
    }

    /// `(in, out)` dims of affine layer `l`.
    fn layer_dims(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 { self.input_dim } else { self.hidden_width };
        let fan_out = if l + 1 == self.affine_count() {
            self.output_dim
        } else {
            self.hidden_width
        };
        (fan_in, fan_out)
    }

    /// Layout entries `(prefix)w0, (prefix)b0, ...` in forward order.
    pub fn layout_entries(&self, prefix: &str) -> Vec<LayoutEntry> {
        let mut out = Vec::with_capacity(2 * self.affine_count());
        for l in 0..self.affine_count() {
            let (fi, fo) = self.layer_dims(l);
            out.push(LayoutEntry::matrix(&format!("{prefix}w{l}"), fi, fo));
            out.push(LayoutEntry::vector(&format!("{prefix}b{l}"), fo));
        }
        out
    }

    pub fn layout(&self) -> Arc<Layout> {
        Arc::new(Layout::new(self.layout_entries("")))
    }

    /// Forward pass on a tape. `entry0` points at this net's `w0` inside
    /// `params` (nets embedded in a larger layout pass their base index).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bank: Bank,
        params: &ParamVector,
        entry0: usize,
        mut x: NodeId,
    ) -> Result<NodeId> {
        for l in 0..self.affine_count() {
            let w = tape.param(bank, params, entry0 + 2 * l);
            let b = tape.param(bank, params, entry0 + 2 * l + 1);
            x = tape.affine(x, w, b)?;
            let last = l + 1 == self.affine_count();
            if !last {
                x = tape.leaky_relu(x, self.leak);
            } else {
                match self.output_activation {
                    OutputActivation::Identity => {}
                    OutputActivation::Sigmoid => x = tape.sigmoid(x),
                    OutputActivation::LeakyRelu => x = tape.leaky_relu(x, self.leak),
                }
            }
        }
        Ok(x)
    }
}

/// Discriminator split into feature stack and linear head.
///
/// With `with_stats`, the head consumes `[D1(x); mean(D1(x)); var(D1(x))]`
/// where mean/variance are per-batch column statistics broadcast to each row
/// (population variance). Without, the head consumes `D1(x)` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDiscriminator {
    pub feature_net: MlpNet,
    pub head: MlpNet,
    pub with_stats: bool,
}

impl SplitDiscriminator {
    /// `feature_layers` counts the leaky-activated layers (the generator's
    /// `hidden_layers` for a symmetric pair); `sigmoid_head` picks the head's
    /// output activation for probability-producing flavors.
    pub fn new(
        input_dim: usize,
        width: usize,
        feature_layers: usize,
        leak: f64,
        with_stats: bool,
        sigmoid_head: bool,
    ) -> Result<Self> {
        if feature_layers == 0 {
            return Err(Error::Config(
                "discriminator needs at least one feature layer".into(),
            ));
        }
        let feature_net = MlpNet {
            input_dim,
            output_dim: width,
            hidden_width: width,
            hidden_layers: feature_layers - 1,
            leak,
            output_activation: OutputActivation::LeakyRelu,
        };
        feature_net.validate()?;
        let stat_dim = if with_stats { 2 * width } else { 0 };
        let head = MlpNet {
            input_dim: width + stat_dim,
            output_dim: 1,
            hidden_width: width,
            hidden_layers: 0,
            leak,
            output_activation: if sigmoid_head {
                OutputActivation::Sigmoid
            } else {
                OutputActivation::Identity
            },
        };
        Ok(SplitDiscriminator {
            feature_net,
            head,
            with_stats,
        })
    }

    /// Single layout covering feature stack then head.
    pub fn layout(&self) -> Arc<Layout> {
        let mut entries = self.feature_net.layout_entries("f_");
        entries.extend(self.head.layout_entries("h_"));
        Arc::new(Layout::new(entries))
    }

    fn head_entry0(&self) -> usize {
        2 * self.feature_net.affine_count()
    }

    /// Feature stack output `D1(x)` as a tape node.
    pub fn features(
        &self,
        tape: &mut Tape,
        params: &ParamVector,
        x: NodeId,
    ) -> Result<NodeId> {
        self.feature_net.forward(tape, Bank::Disc, params, 0, x)
    }

    /// Pre-activation head score (`n×1` logits / raw scores). The head's
    /// output activation is *not* applied here; objectives consume raw
    /// scores through numerically stable forms.
    pub fn score(&self, tape: &mut Tape, params: &ParamVector, x: NodeId) -> Result<NodeId> {
        let feats = self.features(tape, params, x)?;
        let head_in = if self.with_stats {
            let n = tape.value(feats).rows;
            if n < 2 {
                return Err(Error::Config(
                    "batch statistics need at least 2 rows".into(),
                ));
            }
            let m = tape.col_mean(feats);
            let v = tape.col_var(feats);
            let mb = tape.broadcast_rows(m, n)?;
            let vb = tape.broadcast_rows(v, n)?;
            tape.hconcat(&[feats, mb, vb])?
        } else {
            feats
        };
        let w = tape.param(Bank::Disc, params, self.head_entry0());
        let b = tape.param(Bank::Disc, params, self.head_entry0() + 1);
        tape.affine(head_in, w, b)
    }
}

/// Generator forward pass: latents (`n×latent_dim`) to samples
/// (`n×output_dim`). Pure function of `(params, z)`.
pub fn generator_forward(net: &MlpNet, params: &ParamVector, z: &Matrix) -> Result<Matrix> {
    if z.cols != net.input_dim {
        return Err(Error::Shape(format!(
            "generator expects {} latent columns, got {}",
            net.input_dim, z.cols
        )));
    }
    let mut tape = Tape::new();
    let zc = tape.constant(z.clone());
    let out = net.forward(&mut tape, Bank::Gen, params, 0, zc)?;
    Ok(tape.value(out).clone())
}

/// Discriminator forward pass to scores: sigmoid-head networks return
/// probabilities in `(0,1)`, identity heads return raw scores.
pub fn discriminator_forward(
    disc: &SplitDiscriminator,
    params: &ParamVector,
    x: &Matrix,
) -> Result<Matrix> {
    if x.cols != disc.feature_net.input_dim {
        return Err(Error::Shape(format!(
            "discriminator expects {} input columns, got {}",
            disc.feature_net.input_dim, x.cols
        )));
    }
    let mut tape = Tape::new();
    let xc = tape.constant(x.clone());
    let score = disc.score(&mut tape, params, xc)?;
    let out = match disc.head.output_activation {
        OutputActivation::Sigmoid => tape.sigmoid(score),
        _ => score,
    };
    Ok(tape.value(out).clone())
}

/// Seeded parameter init: weight matrices uniform in
/// `±sqrt(6/(fan_in+fan_out))`, biases zero. Each layout entry draws from its
/// own derived stream, so the values are independent of surrounding entries.
pub fn init_params(layout: Arc<Layout>, seed: u64, stream_purpose: u64) -> ParamVector {
    let mut pv = ParamVector::zeros(layout.clone());
    for (idx, entry) in layout.entries().iter().enumerate() {
        if entry.dims.len() != 2 {
            continue; // biases stay zero
        }
        let (rows, cols) = entry.shape2();
        let bound = mathx::sqrt(6.0 / (rows + cols) as f64);
        let mut stream = rng::substream(seed, stream_purpose, idx as u64, 0);
        let dst = &mut pv.values[layout.range(idx)];
        for v in dst {
            *v = (2.0 * rng::uniform01(&mut stream) - 1.0) * bound;
        }
    }
    pv
}

/// Convenience: readable one-line description for logs/configs.
pub fn describe_net(net: &MlpNet) -> String {
    format!(
        "{}→[{}×{}]→{}",
        net.input_dim, net.hidden_width, net.hidden_layers, net.output_dim
    )
}
