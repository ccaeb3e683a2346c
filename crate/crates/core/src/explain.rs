//! Gradient-weighted attention rollout.
//!
//! Each layer contributes the head-mean of `A ⊙ ∂ŷ/∂A`, clamped at zero and
//! row-normalized. The layer matrices are chained from the first layer to the
//! last, and row 0 of the product (the class token) gives one heat value per
//! image patch.

use std::fs;
use std::path::Path;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::masking::MaskBank;
use crate::model::{ModelConfig, Vit};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    /// Normalized per-layer matrices, `p×p`.
    pub layers: Vec<Tensor<f64>>,
    /// Chained product after the last layer.
    pub rollout: Tensor<f64>,
    /// `rollout[0, i+1]` for patch `i`.
    pub heat: Vec<f64>,
}

/// Clamps negatives and normalizes rows. A row with no positive mass becomes
/// uniform unless the whole matrix is zero, which stays zero.
pub fn normalize_layer(m: &Tensor<f64>) -> Tensor<f64> {
    let clamped = m.map(|v| v.max(0.0));
    if clamped.data().iter().all(|&v| v == 0.0) {
        return clamped;
    }
    let (rows, cols) = (clamped.rows(), clamped.cols());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = clamped.row(r);
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            out.extend(row.iter().map(|v| v / total));
        } else {
            out.extend(std::iter::repeat_n(1.0 / cols as f64, cols));
        }
    }
    Tensor::new(vec![rows, cols], out).expect("same dims")
}

/// Chains already-combined layer matrices `A_l ⊙ ∂ŷ/∂A_l` (head-averaged).
pub fn rollout_from_layers(raw: &[Tensor<f64>]) -> Result<RolloutResult> {
    let first = raw.first().ok_or_else(|| Error::contract("rollout needs at least one layer"))?;
    let p = first.rows();
    let mut acc = identity(p);
    let mut layers = Vec::with_capacity(raw.len());
    for m in raw {
        if m.dims() != [p, p] {
            return Err(Error::shape(format!("layer matrix {:?}, expected [{p}, {p}]", m.dims())));
        }
        let n = normalize_layer(m);
        acc = n.matmul(&acc)?;
        layers.push(n);
    }
    let heat = acc.row(0)[1..].to_vec();
    Ok(RolloutResult {
        layers,
        rollout: acc,
        heat,
    })
}

fn identity(p: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[p, p]);
    for i in 0..p {
        t.data_mut()[i * p + i] = 1.0;
    }
    t
}

pub fn gradient_attention_rollout<T: Real>(
    model: &Vit<T>,
    bank: &MaskBank<T>,
    image: &Image,
    target: usize,
) -> Result<RolloutResult> {
    let c = &model.config;
    if target >= c.num_classes {
        return Err(Error::contract(format!(
            "target label {target} outside 0..{}",
            c.num_classes
        )));
    }
    let mut tape = Tape::new();
    let tr = model.trace(&mut tape, image, Some(bank), true)?;
    let score = tape.gather(tr.scores, &[target])?;
    let score = tape.sum(score);
    let grads = tape.backward(score)?;
    let p = c.tokens();
    let mut raw = vec![Tensor::<f64>::zeros(&[p, p]); c.layers];
    for ht in &tr.heads {
        let a = tape.value(ht.probs).cast::<f64>();
        let g = grads
            .get(ht.probs)
            .map(|g| g.cast::<f64>())
            .unwrap_or_else(|| Tensor::zeros(&[p, p]));
        let weighted = a.zip_map(&g, |x, y| x * y)?;
        raw[ht.layer].add_assign(&weighted);
    }
    for m in &mut raw {
        m.scale_in_place(1.0 / c.heads as f64);
    }
    rollout_from_layers(&raw)
}

/// Min-max normalized gray level per patch. Equal heats map to 128.
pub fn heat_levels(heat: &[f64]) -> Vec<u8> {
    let lo = heat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = heat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; heat.len()];
    }
    heat.iter()
        .map(|&v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
        .collect()
}

pub fn heat_csv(heat: &[f64]) -> String {
    let mut out = String::from("patch,heat\n");
    for (i, v) in heat.iter().enumerate() {
        out.push_str(&format!("{i},{v:e}\n"));
    }
    out
}

/// Grayscale image at the input resolution, one block per patch.
pub fn heat_image(heat: &[f64], config: &ModelConfig) -> Result<Image> {
    let grid = config.grid();
    if heat.len() != grid * grid {
        return Err(Error::shape(format!(
            "{} heat values for a {grid}x{grid} patch grid",
            heat.len()
        )));
    }
    let levels = heat_levels(heat);
    let (size, ps) = (config.image_size, config.patch_size);
    let mut bytes = vec![0u8; size * size];
    for (y, row) in bytes.chunks_mut(size).enumerate() {
        for (x, px) in row.iter_mut().enumerate() {
            *px = levels[(y / ps) * grid + x / ps];
        }
    }
    Image::from_bytes(1, size, size, &bytes)
}

pub fn render_heatmap(
    result: &RolloutResult,
    config: &ModelConfig,
    csv_path: impl AsRef<Path>,
    pgm_path: impl AsRef<Path>,
) -> Result<()> {
    let image = heat_image(&result.heat, config)?;
    let csv_path = csv_path.as_ref();
    fs::write(csv_path, heat_csv(&result.heat)).map_err(|e| Error::io(csv_path, e))?;
    image.write(pgm_path)
}
