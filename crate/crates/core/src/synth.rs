//! Procedural scan corpus: textured dark colonies on a bright slide.
//!
//! Each species has its own colony texture (small dots, large dots,
//! horizontal streaks, diagonal streaks, ...); preparations differ by a
//! brightness offset. Raw intensities stay roughly within 0..1000.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::{write_manifest, ManifestEntry};
use crate::imaging::write_u16_image;
use crate::labels::Species;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub species: Vec<Species>,
    pub scans_per_preparation: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            species: vec![Species::CA, Species::CG, Species::CL, Species::CN],
            scans_per_preparation: 10,
            height: 512,
            width: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Texture {
    Dots { radius: f64, spacing: f64 },
    Streaks { period: f64, angle: f64 },
}

fn texture(species: Species) -> Texture {
    use std::f64::consts::PI;
    match species.index() % 9 {
        0 => Texture::Dots {
            radius: 2.5,
            spacing: 10.0,
        },
        1 => Texture::Dots {
            radius: 8.0,
            spacing: 26.0,
        },
        2 => Texture::Streaks {
            period: 16.0,
            angle: 0.0,
        },
        3 => Texture::Streaks {
            period: 16.0,
            angle: PI / 4.0,
        },
        4 => Texture::Streaks {
            period: 16.0,
            angle: PI / 2.0,
        },
        5 => Texture::Streaks {
            period: 40.0,
            angle: 0.0,
        },
        6 => Texture::Dots {
            radius: 5.0,
            spacing: 16.0,
        },
        7 => Texture::Streaks {
            period: 16.0,
            angle: 3.0 * PI / 4.0,
        },
        _ => Texture::Streaks {
            period: 40.0,
            angle: PI / 4.0,
        },
    }
}

/// Darkening in `[0, 1]` of the colony texture at a point.
fn texture_value(t: Texture, y: f64, x: f64, phase: (f64, f64)) -> f64 {
    match t {
        Texture::Dots { radius, spacing } => {
            let (cy, cx) = (y + phase.0 * spacing, x + phase.1 * spacing);
            let dy = cy.rem_euclid(spacing) - spacing / 2.0;
            let dx = cx.rem_euclid(spacing) - spacing / 2.0;
            if dy * dy + dx * dx <= radius * radius {
                1.0
            } else {
                0.0
            }
        }
        Texture::Streaks { period, angle } => {
            let u = y * angle.cos() + x * angle.sin();
            0.5 + 0.5 * (2.0 * std::f64::consts::PI * (u / period + phase.0)).sin()
        }
    }
}

/// One single-channel 16-bit scan.
pub fn synth_scan(spec: &SynthSpec, species: Species, preparation: u8, index: usize) -> Array3<u16> {
    let seed = spec.seed ^ ((species.index() as u64) << 40) ^ ((preparation as u64) << 32) ^ index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height as f64, spec.width as f64);
    let side = h.min(w);
    let prep_offset = if preparation == 1 { 0.0 } else { 40.0 };
    let background = 880.0 - prep_offset + rng.random_range(-15.0..15.0);
    let colony = 470.0 + prep_offset + rng.random_range(-20.0..20.0);
    let depth = 220.0;

    // two or three colonies, the first one always large
    let n_blobs = rng.random_range(2..=3);
    let blobs: Vec<(f64, f64, f64)> = (0..n_blobs)
        .map(|b| {
            let r = if b == 0 {
                rng.random_range(0.28..0.34) * side
            } else {
                rng.random_range(0.12..0.2) * side
            };
            (
                rng.random_range(r * 0.6..h - r * 0.6),
                rng.random_range(r * 0.6..w - r * 0.6),
                r,
            )
        })
        .collect();
    let tex = texture(species);
    let phase = (rng.random::<f64>(), rng.random::<f64>());

    let mut out = Array3::<u16>::zeros((spec.height, spec.width, 1));
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (fy, fx) = (y as f64, x as f64);
            let inside = blobs
                .iter()
                .any(|&(cy, cx, r)| (fy - cy).powi(2) + (fx - cx).powi(2) <= r * r);
            let noise = rng.random_range(-12.0..12.0) + rng.random_range(-12.0..12.0);
            let v = if inside {
                colony - depth * texture_value(tex, fy, fx, phase)
            } else {
                background
            };
            out[[y, x, 0]] = (v + noise).clamp(0.0, 1000.0).round() as u16;
        }
    }
    out
}

/// Writes every scan as a PNG plus `manifest.csv` (with relative paths) into
/// `dir`. The returned entries point at the written files.
pub fn write_corpus(dir: &Path, spec: &SynthSpec) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for &species in &spec.species {
        for preparation in 1..=2u8 {
            for i in 0..spec.scans_per_preparation {
                let scan_id = format!("{species}_p{preparation}_{i:02}");
                let file = format!("{scan_id}.png");
                write_u16_image(&dir.join(&file), &synth_scan(spec, species, preparation, i))?;
                entries.push(ManifestEntry {
                    scan_id,
                    path: PathBuf::from(file),
                    species,
                    preparation_id: preparation,
                });
            }
        }
    }
    write_manifest(&dir.join("manifest.csv"), &entries)?;
    for e in &mut entries {
        e.path = dir.join(&e.path);
    }
    Ok(entries)
}
