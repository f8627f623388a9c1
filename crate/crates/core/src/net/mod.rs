//! The fusion network: a complex mixer lifts the pilot observations to the
//! full channel shape, an attention encoder fuses that estimate with pseudo
//! channels, and a second mixer refines the partial-channel token into the
//! output. Gradients are written by hand; everything runs in `f64`.

mod checkpoint;
pub mod cmat;
mod encoder;
pub mod layout;
mod mixer;
mod model;
mod train;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cmat::CMat;
pub use model::{loss, Model, NetInput};
pub use train::{
    evaluate_loss, train, Adam, Example, TrainConfig, TrainOutcome, TrainRecord, Trainer,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Mixers around the attention encoder, consuming pseudo channels.
    Gcd,
    /// A mixer stack on the pilots alone.
    PilotOnly,
}

/// Elementwise activation used in the mixers and the feed-forward layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// GELU, tanh approximation.
    Gelu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn f(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn df(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Mixer layers in the front and in the back stack.
    pub k: usize,
    /// Encoder layers.
    pub l: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub n_t: usize,
    pub n_c: usize,
    pub n_t0: usize,
    pub n_c0: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelConfig {
    /// K = 3, L = 6, hidden = N_t N_c / 2.
    pub fn full_scale(n_t: usize, n_c: usize, n_t0: usize, n_c0: usize) -> Self {
        Self {
            kind: ModelKind::Gcd,
            k: 3,
            l: 6,
            hidden: n_t * n_c / 2,
            heads: 4,
            ffn_mult: 2,
            n_t,
            n_c,
            n_t0,
            n_c0,
            activation: Activation::Gelu,
            seed: 0,
        }
    }

    /// Desk profile: the full-scale layout with a two-layer encoder.
    pub fn desk(n_t: usize, n_c: usize, n_t0: usize, n_c0: usize) -> Self {
        Self {
            l: 2,
            ..Self::full_scale(n_t, n_c, n_t0, n_c0)
        }
    }

    /// Eight mixer layers on the pilots, no encoder.
    pub fn pilot_only(n_t: usize, n_c: usize, n_t0: usize, n_c0: usize) -> Self {
        Self {
            kind: ModelKind::PilotOnly,
            k: 8,
            l: 0,
            ..Self::full_scale(n_t, n_c, n_t0, n_c0)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("model: {m}")));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if [self.n_t, self.n_c, self.n_t0, self.n_c0].contains(&0) {
            return bad("channel shapes must be positive");
        }
        if self.n_t0 > self.n_t || self.n_c0 > self.n_c {
            return bad("pilot grid larger than the channel");
        }
        if self.kind == ModelKind::Gcd {
            if self.hidden == 0 || self.heads == 0 || self.ffn_mult == 0 {
                return bad("hidden, heads and ffn_mult must be positive");
            }
            if !self.hidden.is_multiple_of(self.heads) {
                return bad("hidden must be divisible by heads");
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        layout::Layout::new(self).total
    }
}
