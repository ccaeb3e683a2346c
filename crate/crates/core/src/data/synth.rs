//! Synthetic grayscale images with a controllable spurious correlation.
//!
//! The target is the glyph shape (square = 1, circle = 0). The sensitive
//! attribute is the background band (light = 1, dark = 0), which agrees with
//! the target with probability `correlation`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Image, Sample};
use crate::error::{Error, Result};
use crate::rng::substream;

pub const TARGET_ATTR: &str = "Square";
pub const SENSITIVE_ATTR: &str = "Light";

const DARK_BAND: (f32, f32) = (0.15, 0.40);
const LIGHT_BAND: (f32, f32) = (0.60, 0.85);
const GLYPH_CONTRAST: f32 = 0.30;
const NOISE_STD: f64 = 0.08;

pub fn synth_biased_dataset(
    n: usize,
    correlation: f64,
    image_size: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&correlation) {
        return Err(Error::config(format!("correlation {correlation} outside [0, 1]")));
    }
    if image_size < 8 {
        return Err(Error::config("synthetic images need image_size >= 8"));
    }
    let mut rng = substream(seed, "synth");
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let size = image_size as f32;
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let y = u8::from(rng.random_bool(0.5));
        let s = if rng.random_bool(correlation) { y } else { 1 - y };
        let band = if s == 1 { LIGHT_BAND } else { DARK_BAND };
        let bg = rng.random_range(band.0..band.1);
        let fg = if rng.random_bool(0.5) {
            bg + GLYPH_CONTRAST
        } else {
            bg - GLYPH_CONTRAST
        };
        let radius = rng.random_range(0.22 * size..0.32 * size);
        let margin = radius + 1.0;
        let cx = rng.random_range(margin..size - margin);
        let cy = rng.random_range(margin..size - margin);
        // the square circumscribes the circle of the same radius
        let half_side = radius;

        let mut bytes = Vec::with_capacity(image_size * image_size);
        for py in 0..image_size {
            for px in 0..image_size {
                let (dx, dy) = (px as f32 + 0.5 - cx, py as f32 + 0.5 - cy);
                let inside = if y == 1 {
                    dx.abs() <= half_side && dy.abs() <= half_side
                } else {
                    dx * dx + dy * dy <= radius * radius
                };
                let base = if inside { fg } else { bg };
                let v = base + noise.sample(&mut rng) as f32;
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out.push(Sample {
            id: format!("{idx:06}.pgm"),
            image: Image::from_bytes(1, image_size, image_size, &bytes)?,
            y,
            s,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agreement_rate_tracks_correlation() {
        let d = synth_biased_dataset(2000, 0.5, 16, 3).unwrap();
        let agree = d.iter().filter(|s| s.s == s.y).count() as f64 / 2000.0;
        assert!((agree - 0.5).abs() < 0.05, "{agree}");

        let d = synth_biased_dataset(300, 1.0, 16, 3).unwrap();
        assert!(d.iter().all(|s| s.s == s.y));
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = synth_biased_dataset(20, 0.8, 32, 7).unwrap();
        let b = synth_biased_dataset(20, 0.8, 32, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_biased_dataset(20, 0.8, 32, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_correlation() {
        assert!(synth_biased_dataset(10, 1.5, 32, 0).is_err());
    }
}
