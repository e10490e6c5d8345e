//! Deterministic synthetic corpus: procedural color targets plus color-cast
//! degraded variants.
//!
//! Each target composes a smooth two-color gradient, filled rectangles and
//! ellipses, and two sinusoidal textures whose frequencies are placed inside
//! the mid and high default bands, so every generated image carries energy in
//! all three bands. The degraded variant adds one constant RGB offset per
//! image, drawn uniformly from [-cast_strength, +cast_strength] per channel,
//! then clamps to [0, 1].

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PlanarImage;
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub cast_strength: f64,
}

impl CorpusSpec {
    pub fn new(count: usize, size: usize, seed: u64, cast_strength: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Imaging("corpus count must be positive".into()));
        }
        if size < 2 {
            return Err(Error::Imaging("corpus image size must be at least 2".into()));
        }
        if !(0.0..=0.5).contains(&cast_strength) {
            return Err(Error::Imaging(format!(
                "cast_strength must lie in [0, 0.5], got {cast_strength}"
            )));
        }
        Ok(Self { count, size, seed, cast_strength })
    }
}

/// The constant RGB offset applied to image `index`'s degraded variant.
/// Exposed so the degradation can be re-derived independently of
/// [`gen_corpus`].
pub fn cast_offsets(spec: &CorpusSpec, index: usize) -> [f64; 3] {
    let mut rng = SeededRng::stream(spec.seed, index as u64 * 2 + 1);
    let s = spec.cast_strength;
    [rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s)]
}

/// Generate `(target, degraded)` pairs. Same spec, same bytes.
pub fn gen_corpus(spec: &CorpusSpec) -> Vec<(PlanarImage, PlanarImage)> {
    (0..spec.count)
        .map(|i| {
            let target = gen_target(spec, i);
            let offsets = cast_offsets(spec, i);
            let degraded = apply_cast(&target, offsets);
            (target, degraded)
        })
        .collect()
}

fn apply_cast(target: &PlanarImage, offsets: [f64; 3]) -> PlanarImage {
    let n = target.height() * target.width();
    let mut out = target.clone();
    for c in 0..3 {
        let off = offsets[c] as f32;
        for v in &mut out.samples_mut()[c * n..(c + 1) * n] {
            *v = (*v + off).clamp(0.0, 1.0);
        }
    }
    out
}

fn gen_target(spec: &CorpusSpec, index: usize) -> PlanarImage {
    let mut rng = SeededRng::stream(spec.seed, index as u64 * 2);
    let s = spec.size;
    let n = s * s;
    let mut planes = vec![0.0f32; 3 * n];

    // two-color gradient background along a random direction
    let ca = [rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)];
    let cb = [rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)];
    let theta = rng.uniform(0.0, 2.0 * PI);
    let (dx, dy) = (theta.cos(), theta.sin());
    for y in 0..s {
        for x in 0..s {
            let proj = (x as f64 * dx + y as f64 * dy) / s as f64;
            let t = (proj + 1.0) / 2.0; // in [0,1] for any direction
            for c in 0..3 {
                planes[c * n + y * s + x] = (ca[c] + (cb[c] - ca[c]) * t) as f32;
            }
        }
    }

    // filled rectangles (hard edges feed the mid and high bands)
    let n_rect = 2 + rng.below(2);
    for _ in 0..n_rect {
        let color = [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)];
        let rw = (s / 8 + rng.below(s * 3 / 8)).max(1);
        let rh = (s / 8 + rng.below(s * 3 / 8)).max(1);
        let x0 = rng.below(s - rw.min(s - 1));
        let y0 = rng.below(s - rh.min(s - 1));
        for y in y0..(y0 + rh).min(s) {
            for x in x0..(x0 + rw).min(s) {
                for c in 0..3 {
                    planes[c * n + y * s + x] = color[c] as f32;
                }
            }
        }
    }

    // filled ellipses
    let n_ell = 1 + rng.below(2);
    for _ in 0..n_ell {
        let color = [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)];
        let cx = rng.uniform(0.2, 0.8) * s as f64;
        let cy = rng.uniform(0.2, 0.8) * s as f64;
        let rx = rng.uniform(0.1, 0.33) * s as f64;
        let ry = rng.uniform(0.1, 0.33) * s as f64;
        for y in 0..s {
            for x in 0..s {
                let u = (x as f64 - cx) / rx;
                let v = (y as f64 - cy) / ry;
                if u * u + v * v <= 1.0 {
                    for c in 0..3 {
                        planes[c * n + y * s + x] = color[c] as f32;
                    }
                }
            }
        }
    }

    // sinusoidal textures aimed at the mid and high default bands; the
    // default radii scale with size, so fixed fractions of the extent land
    // inside each band for any corpus size
    for (f_lo, f_hi) in [(0.15, 0.30), (0.38, 0.46)] {
        let freq = rng.uniform(f_lo * s as f64, f_hi * s as f64);
        let phi = rng.uniform(0.0, 2.0 * PI);
        let phase = rng.uniform(0.0, 2.0 * PI);
        let amp = rng.uniform(0.06, 0.10);
        let (dx, dy) = (phi.cos(), phi.sin());
        for y in 0..s {
            for x in 0..s {
                let arg = 2.0 * PI * freq * (x as f64 * dx + y as f64 * dy) / s as f64 + phase;
                let add = (amp * arg.sin()) as f32;
                for c in 0..3 {
                    planes[c * n + y * s + x] += add;
                }
            }
        }
    }

    for v in &mut planes {
        *v = v.clamp(0.0, 1.0);
    }
    PlanarImage::new(3, s, s, planes).expect("generator output is finite and sized")
}

/// Materialize a corpus as `<index>_target.png` / `<index>_cast.png` plus a
/// `manifest.json` recording the spec.
pub fn write_corpus_dir(dir: &Path, spec: &CorpusSpec) -> Result<Vec<(PlanarImage, PlanarImage)>> {
    std::fs::create_dir_all(dir)?;
    let pairs = gen_corpus(spec);
    for (i, (target, degraded)) in pairs.iter().enumerate() {
        super::save_image(target, &dir.join(format!("{i}_target.png")))?;
        super::save_image(degraded, &dir.join(format!("{i}_cast.png")))?;
    }
    let manifest = serde_json::to_string_pretty(spec)?;
    std::fs::write(dir.join("manifest.json"), manifest)?;
    Ok(pairs)
}

pub fn read_corpus_dir(dir: &Path) -> Result<(CorpusSpec, Vec<(PlanarImage, PlanarImage)>)> {
    let manifest = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| {
        Error::Imaging(format!("cannot read corpus manifest in {}: {e}", dir.display()))
    })?;
    let spec: CorpusSpec = serde_json::from_str(&manifest)?;
    let mut pairs = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let target = super::load_image(&dir.join(format!("{i}_target.png")))?;
        let degraded = super::load_image(&dir.join(format!("{i}_cast.png")))?;
        pairs.push((target, degraded));
    }
    Ok((spec, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cast_means_degraded_equals_target() {
        let spec = CorpusSpec::new(4, 16, 11, 0.0).unwrap();
        for (target, degraded) in gen_corpus(&spec) {
            assert_eq!(target.samples(), degraded.samples());
        }
    }

    #[test]
    fn same_spec_gives_identical_corpora() {
        let spec = CorpusSpec::new(3, 24, 123, 0.3).unwrap();
        let a = gen_corpus(&spec);
        let b = gen_corpus(&spec);
        for ((t0, d0), (t1, d1)) in a.iter().zip(&b) {
            assert_eq!(t0.samples(), t1.samples());
            assert_eq!(d0.samples(), d1.samples());
        }
    }

    #[test]
    fn degradation_matches_independently_recomputed_offsets() {
        let spec = CorpusSpec::new(32, 64, 7, 0.2).unwrap();
        for (i, (target, degraded)) in gen_corpus(&spec).iter().enumerate() {
            let offsets = cast_offsets(&spec, i);
            let n = 64 * 64;
            for c in 0..3 {
                let mut expected_mean = 0.0f64;
                let mut actual_mean = 0.0f64;
                for p in 0..n {
                    let t = target.samples()[c * n + p] as f64;
                    let d = degraded.samples()[c * n + p] as f64;
                    expected_mean += ((t + offsets[c]).clamp(0.0, 1.0) - t).abs();
                    actual_mean += (d - t).abs();
                }
                assert!(
                    (expected_mean / n as f64 - actual_mean / n as f64).abs() < 1e-6,
                    "image {i} channel {c}"
                );
            }
        }
    }

    #[test]
    fn values_stay_in_unit_range() {
        let spec = CorpusSpec::new(6, 32, 99, 0.5).unwrap();
        for (target, degraded) in gen_corpus(&spec) {
            assert!(target.samples().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(degraded.samples().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cast_strength_out_of_range_is_rejected() {
        assert!(CorpusSpec::new(1, 16, 0, 0.75).is_err());
    }

    #[test]
    fn corpus_dir_round_trip() {
        let dir = std::env::temp_dir().join("bandtint_corpus_test");
        std::fs::remove_dir_all(&dir).ok();
        let spec = CorpusSpec::new(2, 16, 42, 0.1).unwrap();
        let written = write_corpus_dir(&dir, &spec).unwrap();
        let (spec_back, loaded) = read_corpus_dir(&dir).unwrap();
        assert_eq!(spec, spec_back);
        assert_eq!(written.len(), loaded.len());
        for ((t0, d0), (t1, d1)) in written.iter().zip(&loaded) {
            assert!(t0.max_abs_diff(t1) <= 0.5 / 255.0 + 1e-6);
            assert!(d0.max_abs_diff(d1) <= 0.5 / 255.0 + 1e-6);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
