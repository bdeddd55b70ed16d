//! Synthetic mixture-of-Gaussians benchmarks: 2D rings of 5 or 8 modes and
//! the 3D 27-mode lattice cube, plus the deterministic batch source that
//! feeds them (and matching standard-normal latents) to the trainers.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::bilevel::BatchSource;
use crate::error::{Error, Result};
use crate::mathx;
use crate::matrix::Matrix;
use crate::objectives::Batch;
use crate::rng::{self, purpose};

pub const DEFAULT_RADIUS: f64 = 1.0;
pub const DEFAULT_HALF_EXTENT: f64 = 1.0;
/// Per-coordinate Gaussian variance of every mode.
pub const DEFAULT_VARIANCE: f64 = 0.02;

/// An isotropic mixture of Gaussians with equal weights: one row of
/// `centers` per mode, one shared per-coordinate `variance`.
#[derive(Debug, Clone)]
pub struct MogSpec {
    pub centers: Matrix,
    pub variance: f64,
}

impl MogSpec {
    pub fn new(centers: Matrix, variance: f64) -> Result<Self> {
        if centers.rows == 0 || centers.cols == 0 {
            return Err(Error::Config("mixture needs at least one center".into()));
        }
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::Config(format!(
                "variance must be finite and non-negative, got {variance}"
            )));
        }
        if !centers.is_finite() {
            return Err(Error::Config("mixture centers must be finite".into()));
        }
        Ok(MogSpec { centers, variance })
    }

    pub fn modes(&self) -> usize {
        self.centers.rows
    }

    pub fn dim(&self) -> usize {
        self.centers.cols
    }
}

/// Ring of `modes` Gaussians on a circle of `radius`; mode k sits at angle
/// `2πk/modes`, so mode 0 is at `(radius, 0)`.
pub fn ring2d(modes: usize, radius: f64) -> Result<MogSpec> {
    if modes < 2 {
        return Err(Error::Config(format!("ring needs at least 2 modes, got {modes}")));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("ring radius must be positive, got {radius}")));
    }
    let mut centers = Matrix::zeros(modes, 2);
    for k in 0..modes {
        let angle = 2.0 * core::f64::consts::PI * k as f64 / modes as f64;
        *centers.at_mut(k, 0) = radius * mathx::cos(angle);
        *centers.at_mut(k, 1) = radius * mathx::sin(angle);
    }
    MogSpec::new(centers, DEFAULT_VARIANCE)
}

/// 27 Gaussians on the lattice `{−h, 0, h}³`, x varying slowest.
pub fn cube3d(half_extent: f64) -> Result<MogSpec> {
    if !(half_extent > 0.0) {
        return Err(Error::Config(format!(
            "cube half-extent must be positive, got {half_extent}"
        )));
    }
    let levels = [-half_extent, 0.0, half_extent];
    let mut centers = Matrix::zeros(27, 3);
    let mut row = 0;
    for &x in &levels {
        for &y in &levels {
            for &z in &levels {
                *centers.at_mut(row, 0) = x;
                *centers.at_mut(row, 1) = y;
                *centers.at_mut(row, 2) = z;
                row += 1;
            }
        }
    }
    MogSpec::new(centers, DEFAULT_VARIANCE)
}

/// The named benchmark datasets.
pub fn dataset_by_name(name: &str) -> Result<MogSpec> {
    match name {
        "ring5" => ring2d(5, DEFAULT_RADIUS),
        "ring8" => ring2d(8, DEFAULT_RADIUS),
        "cube27" => cube3d(DEFAULT_HALF_EXTENT),
        other => Err(Error::Config(format!(
            "unknown dataset '{other}' (expected ring5, ring8 or cube27)"
        ))),
    }
}

/// Draws `n` samples: first the `n` mode indices, then one Gaussian noise
/// block, so the stream layout is fixed and replayable.
pub fn sample(spec: &MogSpec, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let modes = spec.modes();
    let dim = spec.dim();
    let indices: Vec<usize> = (0..n)
        .map(|_| {
            let u = rng::uniform01(rng);
            // u < 1 strictly, so the cast stays in range.
            (u * modes as f64) as usize
        })
        .collect();
    let mut out = Matrix::zeros(n, dim);
    rng::fill_normal(rng, &mut out.data);
    let sd = mathx::sqrt(spec.variance);
    for (i, &mode) in indices.iter().enumerate() {
        for j in 0..dim {
            let noise = out.at(i, j);
            *out.at_mut(i, j) = spec.centers.at(mode, j) + sd * noise;
        }
    }
    out
}

/// [`sample`] on a derived stream, keyed by `(seed, purpose, a, b)`.
pub fn sample_seeded(spec: &MogSpec, n: usize, seed: u64, stream: u64, a: u64, b: u64) -> Matrix {
    let mut rng = rng::substream(seed, stream, a, b);
    sample(spec, n, &mut rng)
}

/// `rows × cols` matrix of standard normals (the latent prior).
pub fn latent_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut out = Matrix::zeros(rows, cols);
    rng::fill_normal(rng, &mut out.data);
    out
}

/// [`latent_matrix`] on a derived stream.
pub fn latents_seeded(rows: usize, cols: usize, seed: u64, stream: u64, a: u64, b: u64) -> Matrix {
    let mut rng = rng::substream(seed, stream, a, b);
    latent_matrix(rows, cols, &mut rng)
}

/// Deterministic training-batch provider: batch `(iteration, slot)` draws
/// reals from the mixture and latents from the standard normal, each on its
/// own derived stream, so any batch can be regenerated independently.
#[derive(Debug, Clone)]
pub struct MogBatchSource {
    pub spec: MogSpec,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub seed: u64,
}

impl MogBatchSource {
    pub fn new(spec: MogSpec, batch_size: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {batch_size}"
            )));
        }
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        Ok(MogBatchSource {
            spec,
            batch_size,
            latent_dim,
            seed,
        })
    }
}

impl BatchSource for MogBatchSource {
    fn batch(&self, iteration: u64, slot: u32) -> Result<Batch> {
        let real = sample_seeded(
            &self.spec,
            self.batch_size,
            self.seed,
            purpose::BATCH_REAL,
            iteration,
            slot as u64,
        );
        let latents = latents_seeded(
            self.batch_size,
            self.latent_dim,
            self.seed,
            purpose::BATCH_LATENT,
            iteration,
            slot as u64,
        );
        Ok(Batch { real, latents })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring5_geometry_is_right() {
        let spec = ring2d(5, 1.0).unwrap();
        assert_eq!(spec.modes(), 5);
        assert_eq!(spec.dim(), 2);
        assert!((spec.centers.at(0, 0) - 1.0).abs() < 1e-15);
        assert!(spec.centers.at(0, 1).abs() < 1e-15);
        // All on the circle; consecutive chords equal 2·sin(π/5).
        let chord = 2.0 * mathx::sin(core::f64::consts::PI / 5.0);
        for k in 0..5 {
            let (x, y) = (spec.centers.at(k, 0), spec.centers.at(k, 1));
            assert!((mathx::hypot(x, y) - 1.0).abs() < 1e-12);
            let nk = (k + 1) % 5;
            let d = mathx::hypot(x - spec.centers.at(nk, 0), y - spec.centers.at(nk, 1));
            assert!((d - chord).abs() < 1e-12);
        }
        // Centroid at the origin.
        let cx: f64 = (0..5).map(|k| spec.centers.at(k, 0)).sum();
        let cy: f64 = (0..5).map(|k| spec.centers.at(k, 1)).sum();
        assert!(cx.abs() < 1e-12 && cy.abs() < 1e-12);
    }

    #[test]
    fn ring8_puts_mode_two_on_the_y_axis() {
        let spec = ring2d(8, 2.0).unwrap();
        assert!(spec.centers.at(2, 0).abs() < 1e-12);
        assert!((spec.centers.at(2, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cube27_covers_the_lattice_exactly_once() {
        let spec = cube3d(1.0).unwrap();
        assert_eq!(spec.modes(), 27);
        assert_eq!(spec.dim(), 3);
        let mut seen = [[false; 3]; 27];
        for k in 0..27 {
            let mut key = 0usize;
            for j in 0..3 {
                let v = spec.centers.at(k, j);
                let level = if v < -0.5 {
                    0
                } else if v > 0.5 {
                    2
                } else {
                    1
                };
                assert!(
                    v == -1.0 || v == 0.0 || v == 1.0,
                    "coordinate off-lattice: {v}"
                );
                key = key * 3 + level;
            }
            assert!(!seen[key][0], "lattice point repeated");
            seen[key][0] = true;
        }
        // x varies slowest: first nine rows share x = −1.
        for k in 0..9 {
            assert_eq!(spec.centers.at(k, 0), -1.0);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ring2d(1, 1.0).is_err());
        assert!(ring2d(5, 0.0).is_err());
        assert!(cube3d(-1.0).is_err());
        assert!(dataset_by_name("ring6").is_err());
        assert!(dataset_by_name("ring5").is_ok());
        assert!(MogSpec::new(Matrix::zeros(2, 2), f64::NAN).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let spec = ring2d(5, 1.0).unwrap();
        let a = sample_seeded(&spec, 64, 7, purpose::EVAL_REAL, 3, 0);
        let b = sample_seeded(&spec, 64, 7, purpose::EVAL_REAL, 3, 0);
        assert_eq!(a.data, b.data);
        let c = sample_seeded(&spec, 64, 7, purpose::EVAL_REAL, 4, 0);
        assert_ne!(a.data, c.data);
        let d = sample_seeded(&spec, 64, 8, purpose::EVAL_REAL, 3, 0);
        assert_ne!(a.data, d.data);
    }

    #[test]
    fn zero_variance_reproduces_centers_exactly() {
        let centers = Matrix::from_rows(&[&[0.25, -0.75]]).unwrap();
        let spec = MogSpec::new(centers, 0.0).unwrap();
        let s = sample_seeded(&spec, 16, 1, purpose::DATASET, 0, 0);
        for i in 0..16 {
            assert_eq!(s.at(i, 0), 0.25);
            assert_eq!(s.at(i, 1), -0.75);
        }
    }

    #[test]
    fn per_coordinate_variance_matches_the_spec() {
        let centers = Matrix::from_rows(&[&[0.0, 0.0]]).unwrap();
        let spec = MogSpec::new(centers, DEFAULT_VARIANCE).unwrap();
        let n = 100_000;
        let s = sample_seeded(&spec, n, 11, purpose::DATASET, 0, 0);
        for j in 0..2 {
            let mean: f64 = (0..n).map(|i| s.at(i, j)).sum::<f64>() / n as f64;
            let var: f64 =
                (0..n).map(|i| (s.at(i, j) - mean) * (s.at(i, j) - mean)).sum::<f64>() / n as f64;
            assert!(
                (var - DEFAULT_VARIANCE).abs() < 0.1 * DEFAULT_VARIANCE,
                "coordinate {j}: var {var}"
            );
        }
    }

    #[test]
    fn mode_choice_is_uniform_within_three_sigma() {
        let spec = ring2d(5, 1.0).unwrap();
        let n = 50_000;
        let s = sample_seeded(&spec, n, 13, purpose::DATASET, 0, 0);
        let mut counts = [0usize; 5];
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..5 {
                let d = mathx::hypot(
                    s.at(i, 0) - spec.centers.at(k, 0),
                    s.at(i, 1) - spec.centers.at(k, 1),
                );
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            counts[best] += 1;
        }
        let expect = n as f64 / 5.0;
        let sigma = mathx::sqrt(n as f64 * 0.2 * 0.8);
        for (k, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma,
                "mode {k}: {c} vs {expect}±{sigma}"
            );
        }
    }

    #[test]
    fn noise_is_isotropic_by_chi_square() {
        // Angles of single-mode samples around their center must be uniform
        // over 16 sectors; χ² upper 0.99 quantile at 15 dof is 30.578.
        let centers = Matrix::from_rows(&[&[0.0, 0.0]]).unwrap();
        let spec = MogSpec::new(centers, DEFAULT_VARIANCE).unwrap();
        let n = 40_000;
        let s = sample_seeded(&spec, n, 17, purpose::DATASET, 0, 0);
        let mut bins = [0usize; 16];
        for i in 0..n {
            let angle = mathx::atan2(s.at(i, 1), s.at(i, 0));
            let frac = (angle + core::f64::consts::PI) / (2.0 * core::f64::consts::PI);
            let k = ((frac * 16.0) as usize).min(15);
            bins[k] += 1;
        }
        let expect = n as f64 / 16.0;
        let chi2: f64 = bins
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        assert!(chi2 < 30.578, "χ² = {chi2}");
    }

    #[test]
    fn batch_source_is_a_pure_function_of_iteration_and_slot() {
        let spec = ring2d(8, 1.0).unwrap();
        let src = MogBatchSource::new(spec, 32, 4, 99).unwrap();
        let a = src.batch(5, 2).unwrap();
        let b = src.batch(5, 2).unwrap();
        assert_eq!(a.real.data, b.real.data);
        assert_eq!(a.latents.data, b.latents.data);
        let c = src.batch(5, 3).unwrap();
        assert_ne!(a.real.data, c.real.data);
        assert_ne!(a.latents.data, c.latents.data);
        assert_eq!(a.real.rows, 32);
        assert_eq!(a.real.cols, 2);
        assert_eq!(a.latents.cols, 4);
    }

    #[test]
    fn latent_moments_look_standard_normal() {
        let z = latents_seeded(20_000, 4, 23, purpose::BATCH_LATENT, 0, 0);
        let n = (z.rows * z.cols) as f64;
        let mean: f64 = z.data.iter().sum::<f64>() / n;
        let var: f64 = z.data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
