use serde::{Deserialize, Serialize};

use super::losses::LossSwitches;
use crate::completion::CompletionMode;
use crate::data::TaskKind;
use crate::decoders::DecoderKind;
use crate::error::{Error, Result};
use crate::rbm::VisibleKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub task: TaskKind,
    /// Fraction of leading rows used for fitting; the rest is held out.
    pub train_fraction: f64,
    pub lr: f64,
    /// Largest gradient norm of any one parameter tensor per fine-tuning step; 0 disables.
    pub grad_clip: f64,
    pub epochs: usize,
    /// Rows per contiguous training window.
    pub batch_size: usize,
    pub cd_k: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub decoder_x: DecoderKind,
    pub decoder_y: DecoderKind,
    pub loss_switches: LossSwitches,
    /// Widths above the visible layer of every completion stack.
    pub hidden_sizes: Vec<usize>,
    pub visible_kind: VisibleKind,
    /// Causal masking in the gating self-attention.
    pub completion_causal: bool,
    /// Multiplier on the identity-plus-noise start of the gating value
    /// projections. Larger values sharpen the feature softmax of the gate.
    pub attention_value_scale: f64,
    pub completion_mode: CompletionMode,
    /// Output width of both decoders and model width of the fusion.
    pub d_decoder: usize,
    pub decoder_heads: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_fusion: usize,
    pub downstream: DownstreamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            task: TaskKind::Regression,
            train_fraction: 0.7,
            lr: 10.0,
            grad_clip: 0.03,
            epochs: 100,
            batch_size: 32,
            cd_k: 1,
            pretrain_epochs: 200,
            pretrain_lr: 0.5,
            decoder_x: DecoderKind::Transformer,
            decoder_y: DecoderKind::Lstm,
            loss_switches: LossSwitches::default(),
            hidden_sizes: vec![64, 16],
            visible_kind: VisibleKind::BernoulliProb,
            completion_causal: true,
            attention_value_scale: 10.0,
            completion_mode: CompletionMode::Expectation,
            d_decoder: 32,
            decoder_heads: 4,
            heads: 4,
            d_k: 8,
            d_fusion: 32,
            downstream: DownstreamConfig::default(),
        }
    }
}

/// The LSTM predictor trained on completed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub hidden: usize,
    /// Steps of history fed to the predictor for each prediction.
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Windows per gradient step.
    pub batch_windows: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            window: 4,
            epochs: 60,
            lr: 0.05,
            batch_windows: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return fail("grad_clip must be non-negative");
        }
        if !(self.attention_value_scale > 0.0 && self.attention_value_scale.is_finite()) {
            return fail("attention_value_scale must be positive");
        }
        if !(self.pretrain_lr >= 0.0 && self.pretrain_lr.is_finite()) {
            return fail("pretrain_lr must be non-negative");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.cd_k == 0 {
            return fail("batch_size and cd_k must be positive");
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return fail("hidden_sizes must list positive widths");
        }
        if self.d_decoder == 0 || self.d_fusion == 0 || self.d_k == 0 || self.heads == 0 {
            return fail("decoder and fusion widths must be positive");
        }
        if self.heads * self.d_k != self.d_decoder {
            return fail("heads × d_k must equal d_decoder");
        }
        if self.decoder_heads == 0 || self.d_decoder % self.decoder_heads != 0 {
            return fail("d_decoder must be divisible by decoder_heads");
        }
        let d = &self.downstream;
        if d.hidden == 0 || d.window == 0 || d.batch_windows == 0 {
            return fail("downstream sizes must be positive");
        }
        if !(d.lr > 0.0 && d.lr.is_finite()) {
            return fail("downstream lr must be positive");
        }
        Ok(())
    }

    pub fn train_rows(&self, total: usize) -> usize {
        ((total as f64 * self.train_fraction).round() as usize)
            .clamp(1, total.saturating_sub(1).max(1))
    }
}
