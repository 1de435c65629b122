#![allow(dead_code)]

use phenocast::data::{LandClass, Patch, PixelSeries, Season, Step};
use phenocast::embedding::{encode_month, normalize_year, positional_encoding, sphere_point, EmbedConfig};
use phenocast::encoder::EncoderConfig;
use phenocast::model::{Model, ModelConfig};
use phenocast::params::Linear;
use phenocast::sampling::{extract_window, TrainingExample};
use phenocast_tensor::{rng, LAYER_NORM_EPS};
use rand::Rng;

pub fn small_config(size: usize, d_model: usize, layers: usize, heads: usize, dropout: f64) -> ModelConfig {
    ModelConfig {
        embed: EmbedConfig {
            patch_size: size,
            d_spatial: 6,
            d_temporal: 5,
            d_location: 4,
            d_model,
            ..EmbedConfig::default()
        },
        encoder: EncoderConfig {
            layers,
            heads,
            d_model,
            d_ff: None,
            dropout,
        },
    }
}

/// Random-valued series of `len` steps starting in winter 1990.
pub fn random_series(seed: u64, len: usize, size: usize) -> PixelSeries {
    let mut r = rng::stream(seed, 99);
    PixelSeries {
        pixel_id: seed,
        lat: r.random_range(-60.0..60.0),
        lon: r.random_range(-170.0..170.0),
        land_class: LandClass::Grass,
        steps: (0..len)
            .map(|i| Step {
                year: 1990 + (i / 2) as i32,
                season: if i % 2 == 0 { Season::Winter } else { Season::Summer },
                patch: Patch::new(size, (0..size * size).map(|_| r.random_range(-0.2..0.9)).collect()).unwrap(),
            })
            .collect(),
    }
}

pub fn random_example(seed: u64, t: usize, delta: usize, size: usize) -> TrainingExample {
    extract_window(&random_series(seed, t + delta + 1, size), 0, t, delta).unwrap()
}

/// Perturbs every parameter so zero biases and unit gains do not hide
/// wiring mistakes.
pub fn jitter(model: &mut Model, seed: u64) {
    let mut r = rng::stream(seed, 5);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
}

type Mat = Vec<Vec<f64>>;

fn linear(model: &Model, l: &Linear, x: &Mat) -> Mat {
    x.iter().map(|row| l.apply(&model.params, row)).collect()
}

fn matmul(a: &Mat, w: &[f64], cols: usize) -> Mat {
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().enumerate().map(|(i, x)| x * w[i * cols + j]).sum())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + LAYER_NORM_EPS).sqrt() * g[j] + b[j])
                .collect()
        })
        .collect()
}

/// Token matrix built with plain loops.
pub fn reference_tokens(model: &Model, ex: &TrainingExample) -> Mat {
    let cfg = model.cfg.embed;
    let rows = ex.patches.len() + 1;
    let point = sphere_point(ex.lat, ex.lon).unwrap();
    (0..rows)
        .map(|t| {
            let mut concat = if t + 1 < rows {
                model.embedding.spatial.apply(&model.params, ex.patches[t].values())
            } else {
                vec![0.0; cfg.d_spatial]
            };
            let (month, year) = if t + 1 < rows {
                (ex.months[t], ex.years[t])
            } else {
                (ex.target_month, ex.target_year)
            };
            concat.extend(encode_month(month).unwrap());
            let yn = normalize_year(year, cfg.year_start, cfg.year_end).unwrap();
            concat.extend(model.embedding.year.apply(&model.params, &[yn]));
            concat.extend(model.embedding.location.apply(&model.params, &point));
            let h = model.embedding.project.apply(&model.params, &concat);
            let pe = positional_encoding(t, cfg.d_model).unwrap();
            h.iter().zip(&pe).map(|(a, b)| a + b).collect()
        })
        .collect()
}

/// Evaluation-mode encoder output, one head at a time.
pub fn reference_encode(model: &Model, tokens: &Mat, validity: &[bool]) -> Mat {
    let d = model.cfg.encoder.d_model;
    let heads = model.cfg.encoder.heads;
    let dh = d / heads;
    let n = tokens.len();
    let mut h = tokens.clone();
    for layer in &model.encoder.layers {
        let p = |id| model.params.get(id).data();
        let q = matmul(&h, p(layer.w_q), d);
        let k = matmul(&h, p(layer.w_k), d);
        let v = matmul(&h, p(layer.w_v), d);
        let mut joined = vec![vec![0.0; d]; n];
        for head in 0..heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..n {
                if !validity[i] {
                    continue;
                }
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        let s: f64 = cols.clone().map(|c| q[i][c] * k[j][c]).sum();
                        s / (dh as f64).sqrt()
                    })
                    .collect();
                let m = (0..n).filter(|&j| validity[j]).map(|j| scores[j]).fold(f64::MIN, f64::max);
                let w: Vec<f64> = (0..n).map(|j| if validity[j] { (scores[j] - m).exp() } else { 0.0 }).collect();
                let z: f64 = w.iter().sum();
                for c in cols.clone() {
                    joined[i][c] = (0..n).map(|j| w[j] / z * v[j][c]).sum();
                }
            }
        }
        let attn = matmul(&joined, p(layer.w_o), d);
        let res: Mat = h.iter().zip(&attn).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        let h1 = layer_norm(&res, p(layer.norm1_gain), p(layer.norm1_bias));
        let inner: Mat = linear(model, &layer.ffn1, &h1)
            .into_iter()
            .map(|r| r.into_iter().map(|x| x.max(0.0)).collect())
            .collect();
        let ffn = linear(model, &layer.ffn2, &inner);
        let res: Mat = h1.iter().zip(&ffn).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        h = layer_norm(&res, p(layer.norm2_gain), p(layer.norm2_bias));
    }
    h
}

pub fn reference_predict(model: &Model, ex: &TrainingExample) -> f64 {
    let tokens = reference_tokens(model, ex);
    let mut validity = ex.valid.clone();
    validity.push(true);
    let h = reference_encode(model, &tokens, &validity);
    let hidden: Vec<f64> = model
        .decoder
        .hidden
        .apply(&model.params, h.last().unwrap())
        .into_iter()
        .map(|x| x.max(0.0))
        .collect();
    model.decoder.out.apply(&model.params, &hidden)[0]
}
