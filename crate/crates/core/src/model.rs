//! The full forecaster: embedding, encoder and regression decoder.
//!
//! A forward pass runs the encoder exactly once and reads the prediction
//! from the target token's row, whatever the horizon.

use rand::Rng;
use serde::{Deserialize, Serialize};

use phenocast_tensor::{rng, Tape, Var};

use crate::embedding::{EmbedConfig, Embedding};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{Bindings, Linear, ParamStore};
use crate::sampling::TrainingExample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed: EmbedConfig,
    pub encoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed: EmbedConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        self.encoder.validate()?;
        if self.embed.d_model != self.encoder.d_model {
            return Err(Error::config(format!(
                "embed.d_model = {} differs from encoder.d_model = {}",
                self.embed.d_model, self.encoder.d_model
            )));
        }
        if self.encoder.d_model < 2 {
            return Err(Error::config("d_model must be at least 2 for the decoder"));
        }
        Ok(())
    }
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

/// `|pred − truth|`
pub fn mae_loss(pred: f64, truth: f64) -> f64 {
    (pred - truth).abs()
}

/// `Linear(d → d/2)`, ReLU, dropout, `Linear(d/2 → 1)`.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub hidden: Linear,
    pub out: Linear,
    pub dropout: f64,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(d_model: usize, dropout: f64, store: &mut ParamStore, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, "decoder.hidden", d_model, d_model / 2, rng),
            out: Linear::new(store, "decoder.out", d_model / 2, 1, rng),
            dropout,
        }
    }

    pub fn decode<R: Rng + ?Sized>(&self, tape: &mut Tape, b: &Bindings, target: Var, training: bool, rng: &mut R) -> Result<Var> {
        let h = self.hidden.forward(tape, b, target)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.dropout, training, rng)?;
        self.out.forward(tape, b, h)
    }
}

/// Cost counters of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardStats {
    pub encoder_passes: usize,
    pub tape_ops: usize,
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub embedding: Embedding,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

const TAG_INIT: u64 = 0x1417;

impl Model {
    /// Builds a model with seeded Glorot-uniform weights, zero biases and
    /// unit layer-norm gains.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream_for(seed, &[TAG_INIT]);
        let mut params = ParamStore::new();
        let embedding = Embedding::new(cfg.embed, &mut params, &mut rng)?;
        let encoder = Encoder::new(cfg.encoder, &mut params, &mut rng)?;
        let decoder = Decoder::new(cfg.encoder.d_model, cfg.encoder.dropout, &mut params, &mut rng);
        Ok(Self {
            cfg,
            params,
            embedding,
            encoder,
            decoder,
        })
    }

    /// Records one prediction (a `1×1` node) on `tape`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        ex: &TrainingExample,
        training: bool,
        rng: &mut R,
        stats: &mut ForwardStats,
    ) -> Result<Var> {
        let seq = self.embedding.build_tokens(tape, b, ex)?;
        let tokens = tape.dropout(seq.tokens, self.cfg.encoder.dropout, training, rng)?;
        let encoded = self.encoder.encode(tape, b, tokens, &seq.validity, training, rng)?;
        stats.encoder_passes += 1;
        let target = tape.row(encoded, seq.validity.len() - 1)?;
        self.decoder.decode(tape, b, target, training, rng)
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, ex: &TrainingExample) -> Result<f64> {
        self.predict_with_stats(ex).map(|(p, _)| p)
    }

    pub fn predict_with_stats(&self, ex: &TrainingExample) -> Result<(f64, ForwardStats)> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let mut stats = ForwardStats::default();
        // Dropout is inactive in evaluation, so the stream is never drawn.
        let mut rng = rng::stream(0, 0);
        let pred = self.forward(&mut tape, &b, ex, false, &mut rng, &mut stats)?;
        stats.tape_ops = tape.op_count();
        stats.flops = tape.flops();
        Ok((tape.item(pred), stats))
    }

    pub fn predict_all(&self, examples: &[TrainingExample]) -> Result<Vec<f64>> {
        examples.iter().map(|ex| self.predict(ex)).collect()
    }

    /// Mean loss over a batch, recorded on `tape`.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        batch: &[TrainingExample],
        loss: LossKind,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut stats = ForwardStats::default();
        let preds = batch
            .iter()
            .map(|ex| self.forward(tape, b, ex, training, rng, &mut stats))
            .collect::<Result<Vec<_>>>()?;
        let preds = tape.concat_rows(&preds)?;
        let neg_truth: Vec<f64> = batch.iter().map(|ex| -ex.target_value).collect();
        let residual = tape.add_const(preds, &neg_truth)?;
        let per_example = match loss {
            LossKind::Mae => tape.abs(residual),
            LossKind::Mse => tape.square(residual),
        };
        Ok(tape.mean(per_example))
    }
}
