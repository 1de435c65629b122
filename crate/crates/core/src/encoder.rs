//! Post-norm transformer encoder with validity-masked multi-head attention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use phenocast_tensor::{Tape, Var};

use crate::error::{Error, Result};
use crate::params::{Bindings, Linear, ParamId, ParamStore};

/// Additive score for keys that must receive zero attention weight.
pub const MASKED_SCORE: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Feed-forward width; `4 · d_model` when absent.
    pub d_ff: Option<usize>,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 8,
            d_model: 256,
            d_ff: None,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_ff == Some(0) {
            return Err(Error::config("encoder: heads, d_model and d_ff must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "encoder.d_model = {} is not divisible by encoder.heads = {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("encoder.dropout = {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff.unwrap_or(4 * self.d_model)
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }
}

/// `softmax(Q·Kᵀ / √d_k)·V` over valid keys only. Rows of invalid queries
/// are zeroed so masked tokens take no part in either role.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, validity: &[bool]) -> Result<Var> {
    let tokens = tape.shape(q)[0];
    let d_k = tape.shape(q)[1];
    if validity.len() != tokens || tape.shape(k)[0] != tokens || tape.shape(v)[0] != tokens {
        return Err(Error::contract(format!(
            "attention over {tokens} tokens got validity of length {}",
            validity.len()
        )));
    }
    if !validity.iter().any(|&ok| ok) {
        return Err(Error::contract("attention needs at least one valid key"));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let key_mask: Vec<f64> = (0..tokens * tokens)
        .map(|i| if validity[i % tokens] { 0.0 } else { MASKED_SCORE })
        .collect();
    let scores = tape.add_const(scores, &key_mask)?;
    let weights = tape.softmax(scores, 1)?;
    let weights = if validity.iter().all(|&ok| ok) {
        weights
    } else {
        let query_mask: Vec<f64> = (0..tokens * tokens)
            .map(|i| if validity[i / tokens] { 1.0 } else { 0.0 })
            .collect();
        tape.mul_const(weights, query_mask)?
    };
    Ok(tape.matmul(weights, v)?)
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayer {
                    w_q: store.add_weight(&format!("{p}.attn.w_q"), d, d, rng),
                    w_k: store.add_weight(&format!("{p}.attn.w_k"), d, d, rng),
                    w_v: store.add_weight(&format!("{p}.attn.w_v"), d, d, rng),
                    w_o: store.add_weight(&format!("{p}.attn.w_o"), d, d, rng),
                    norm1_gain: store.add_ones(&format!("{p}.norm1.gain"), d),
                    norm1_bias: store.add_zeros(&format!("{p}.norm1.bias"), d),
                    ffn1: Linear::new(store, &format!("{p}.ffn1"), d, cfg.d_ff(), rng),
                    ffn2: Linear::new(store, &format!("{p}.ffn2"), cfg.d_ff(), d, rng),
                    norm2_gain: store.add_ones(&format!("{p}.norm2.gain"), d),
                    norm2_bias: store.add_zeros(&format!("{p}.norm2.bias"), d),
                }
            })
            .collect();
        Ok(Self { cfg, layers })
    }

    /// `concat(head_1, …, head_h)·W_O` with per-head column slices of the
    /// shared `Q`, `K`, `V` projections.
    pub fn multi_head(&self, tape: &mut Tape, b: &Bindings, layer: &EncoderLayer, h: Var, validity: &[bool]) -> Result<Var> {
        let q = tape.matmul(h, b[layer.w_q])?;
        let k = tape.matmul(h, b[layer.w_k])?;
        let v = tape.matmul(h, b[layer.w_v])?;
        let d_head = self.cfg.d_head();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for i in 0..self.cfg.heads {
            let qi = tape.slice_cols(q, i * d_head, d_head)?;
            let ki = tape.slice_cols(k, i * d_head, d_head)?;
            let vi = tape.slice_cols(v, i * d_head, d_head)?;
            heads.push(attention(tape, qi, ki, vi, validity)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        Ok(tape.matmul(joined, b[layer.w_o])?)
    }

    /// `LN(H + MHA(H))`, then `LN(· + FFN(·))`, then dropout.
    pub fn block<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        layer: &EncoderLayer,
        h: Var,
        validity: &[bool],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let attn = self.multi_head(tape, b, layer, h, validity)?;
        let res1 = tape.add(h, attn)?;
        let h1 = tape.layer_norm(res1, b[layer.norm1_gain], b[layer.norm1_bias])?;
        let inner = layer.ffn1.forward(tape, b, h1)?;
        let inner = tape.relu(inner);
        let ffn = layer.ffn2.forward(tape, b, inner)?;
        let res2 = tape.add(h1, ffn)?;
        let h2 = tape.layer_norm(res2, b[layer.norm2_gain], b[layer.norm2_bias])?;
        Ok(tape.dropout(h2, self.cfg.dropout, training, rng)?)
    }

    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        tokens: Var,
        validity: &[bool],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let mut h = tokens;
        for layer in &self.layers {
            h = self.block(tape, b, layer, h, validity, training, rng)?;
        }
        Ok(h)
    }
}
