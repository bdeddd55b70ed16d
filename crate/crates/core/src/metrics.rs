//! Evaluation metrics for low-dimensional generative benchmarks: data-space
//! Fréchet distance between Gaussian moment fits, Jensen–Shannon divergence
//! over a fixed histogram grid (in bits), and mode-coverage counting
//! against a known mixture.
//!
//! Everything is exact small-dimension linear algebra (d = 2 or 3): the
//! matrix square roots come from a cyclic Jacobi eigensolver, not an
//! iterative approximation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mathx;
use crate::matrix::{matmul, Matrix};
use crate::synthdata::MogSpec;

/// Histogram resolution: 64×64 cells in 2D, 16³ in 3D — comparable cell
/// counts, kept coarse enough that a few hundred samples fill them.
pub const DEFAULT_BINS_2D: usize = 64;
pub const DEFAULT_BINS_3D: usize = 16;
/// Half-width padding of the histogram box, in mode standard deviations.
pub const DEFAULT_PAD_STDS: f64 = 4.0;
/// A sample counts toward a mode if it lies within this many mode standard
/// deviations of the center.
pub const DEFAULT_DIST_MULT: f64 = 3.0;

/// Coverage threshold: a mode is captured when it receives at least this
/// fraction of the samples. A quarter of the uniform share keeps the
/// finite-sample false-negative rate negligible while still rejecting
/// stray outliers.
pub fn default_min_frac(max_modes: usize) -> f64 {
    1.0 / (4.0 * max_modes as f64)
}

fn check_samples(x: &Matrix, what: &str) -> Result<()> {
    if x.rows < 2 {
        return Err(Error::Metric(format!("{what}: need at least 2 samples, got {}", x.rows)));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("{what}: samples contain non-finite values")));
    }
    Ok(())
}

/// Sample mean and unbiased (n−1) covariance, exactly symmetrized.
pub fn mean_and_cov(x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    check_samples(x, "mean_and_cov")?;
    let (n, d) = (x.rows, x.cols);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += x.at(i, j);
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = x.at(i, a) - mean[a];
            for b in a..d {
                let db = x.at(i, b) - mean[b];
                *cov.at_mut(a, b) += da * db;
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov.at(a, b) / (n - 1) as f64;
            *cov.at_mut(a, b) = v;
            *cov.at_mut(b, a) = v;
        }
    }
    Ok((mean, cov))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the orthonormal eigenvector matrix (columns).
/// The input is symmetrized first, so tiny asymmetries are harmless.
pub fn sym_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::Shape(format!("sym_eigen: {}x{} not square", m.rows, m.cols)));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("sym_eigen input".into()));
    }
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            *a.at_mut(i, j) = 0.5 * (m.at(i, j) + m.at(j, i));
        }
    }
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        *v.at_mut(i, i) = 1.0;
    }
    let frob: f64 = mathx::sqrt(a.data.iter().map(|&x| x * x).sum());
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a.at(i, j) * a.at(i, j);
            }
        }
        if mathx::sqrt(off) <= 1e-14 * (1.0 + frob) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.at(p, q);
                if mathx::abs(apq) <= 1e-300 {
                    continue;
                }
                let tau = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + mathx::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + mathx::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / mathx::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    *a.at_mut(k, p) = c * akp - s * akq;
                    *a.at_mut(k, q) = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    *a.at_mut(p, k) = c * apk - s * aqk;
                    *a.at_mut(q, k) = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigs: Vec<f64> = (0..n).map(|i| a.at(i, i)).collect();
    Ok((eigs, v))
}

/// Symmetric PSD square root via [`sym_eigen`]. Eigenvalues in
/// `(−1e-10, 0)` are treated as rounding noise and clamped to zero; more
/// negative ones are a real error.
pub fn sqrt_psd(m: &Matrix) -> Result<Matrix> {
    let (eigs, v) = sym_eigen(m)?;
    let n = m.rows;
    let mut roots = vec![0.0; n];
    for (i, &e) in eigs.iter().enumerate() {
        if e < -1e-10 {
            return Err(Error::Metric(format!(
                "matrix is not positive semidefinite (eigenvalue {e:.3e})"
            )));
        }
        roots[i] = mathx::sqrt(mathx::max(e, 0.0));
    }
    // V · diag(√λ) · Vᵀ
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += v.at(i, k) * roots[k] * v.at(j, k);
            }
            *out.at_mut(i, j) = s;
        }
    }
    Ok(out)
}

/// Fréchet distance between two Gaussians given exact moments:
/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2·(Σ₁^½ Σ₂ Σ₁^½)^½)`.
pub fn fid_from_moments(
    mu1: &[f64],
    cov1: &Matrix,
    mu2: &[f64],
    cov2: &Matrix,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.rows != d || cov2.rows != d {
        return Err(Error::Shape("fid_from_moments: dimension mismatch".into()));
    }
    let s1h = sqrt_psd(cov1)?;
    let inner = matmul(&matmul(&s1h, cov2)?, &s1h)?;
    let cross = sqrt_psd(&inner)?;
    let mut fid = 0.0;
    for i in 0..d {
        let dm = mu1[i] - mu2[i];
        fid += dm * dm;
        fid += cov1.at(i, i) + cov2.at(i, i) - 2.0 * cross.at(i, i);
    }
    // The exact value is non-negative; rounding can leave a tiny negative.
    Ok(mathx::max(fid, 0.0))
}

/// Fréchet distance between the Gaussian moment fits of two sample sets,
/// directly in data space (no feature network at these dimensions).
pub fn fid_data_space(real: &Matrix, fake: &Matrix) -> Result<f64> {
    if real.cols != fake.cols {
        return Err(Error::Shape(format!(
            "fid: dimension mismatch {} vs {}",
            real.cols, fake.cols
        )));
    }
    let (mu_r, cov_r) = mean_and_cov(real)?;
    let (mu_f, cov_f) = mean_and_cov(fake)?;
    fid_from_moments(&mu_r, &cov_r, &mu_f, &cov_f)
}

/// Axis-aligned histogram domain shared by both sample sets.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub bins: usize,
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn cells(&self) -> usize {
        let mut c = 1usize;
        for _ in 0..self.dim() {
            c *= self.bins;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.mins.len() != self.maxs.len() || self.mins.is_empty() {
            return Err(Error::Config("grid mins/maxs length mismatch".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("grid needs at least 2 bins per axis".into()));
        }
        for (lo, hi) in self.mins.iter().zip(&self.maxs) {
            if !(hi > lo) {
                return Err(Error::Config(format!("grid bounds inverted: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Symmetric box around the mixture: half-width = largest |center
/// coordinate| plus `pad_stds` mode standard deviations.
pub fn grid_for(spec: &MogSpec, bins: usize, pad_stds: f64) -> Result<GridSpec> {
    let mut extent = 0.0f64;
    for i in 0..spec.modes() {
        for j in 0..spec.dim() {
            extent = mathx::max(extent, mathx::abs(spec.centers.at(i, j)));
        }
    }
    let bound = extent + pad_stds * mathx::sqrt(spec.variance);
    let g = GridSpec {
        mins: vec![-bound; spec.dim()],
        maxs: vec![bound; spec.dim()],
        bins,
    };
    g.validate()?;
    Ok(g)
}

/// [`grid_for`] with the per-dimension default resolution.
pub fn default_grid(spec: &MogSpec) -> Result<GridSpec> {
    let bins = match spec.dim() {
        2 => DEFAULT_BINS_2D,
        3 => DEFAULT_BINS_3D,
        d => {
            return Err(Error::Metric(format!(
                "histogram grids are defined for 2 or 3 dimensions, got {d}"
            )))
        }
    };
    grid_for(spec, bins, DEFAULT_PAD_STDS)
}

/// Histogram with boundary clipping: out-of-box samples land in the nearest
/// edge cell and are counted as clipped.
fn histogram(x: &Matrix, grid: &GridSpec) -> Result<(Vec<f64>, usize)> {
    if x.cols != grid.dim() {
        return Err(Error::Shape(format!(
            "histogram: samples are {}-dimensional, grid {}",
            x.cols,
            grid.dim()
        )));
    }
    let mut counts = vec![0.0f64; grid.cells()];
    let mut clipped = 0usize;
    for i in 0..x.rows {
        let mut cell = 0usize;
        let mut out_of_box = false;
        for j in 0..grid.dim() {
            let v = x.at(i, j);
            let lo = grid.mins[j];
            let hi = grid.maxs[j];
            let frac = (v - lo) / (hi - lo);
            let mut k = (frac * grid.bins as f64) as isize;
            if v < lo || v > hi {
                out_of_box = true;
            }
            if k < 0 {
                k = 0;
            }
            if k as usize >= grid.bins {
                k = grid.bins as isize - 1;
            }
            cell = cell * grid.bins + k as usize;
        }
        if out_of_box {
            clipped += 1;
        }
        counts[cell] += 1.0;
    }
    let n = x.rows as f64;
    for c in counts.iter_mut() {
        *c /= n;
    }
    Ok((counts, clipped))
}

/// Jensen–Shannon divergence in bits between two discrete distributions of
/// equal length. Zero-probability terms contribute zero; the value lies in
/// [0, 1].
pub fn js_bits_from_probs(p: &[f64], q: &[f64]) -> f64 {
    let mut p_part = 0.0;
    let mut q_part = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            p_part += pi * mathx::log2(pi / m);
        }
        if qi > 0.0 {
            q_part += qi * mathx::log2(qi / m);
        }
    }
    0.5 * p_part + 0.5 * q_part
}

/// Histogram Jensen–Shannon divergence plus the fraction of samples (both
/// sets combined) that fell outside the grid and were clipped to its edge.
#[derive(Debug, Clone, Copy)]
pub struct JsResult {
    pub js_bits: f64,
    pub clip_fraction: f64,
}

pub fn js_divergence(real: &Matrix, fake: &Matrix, grid: &GridSpec) -> Result<JsResult> {
    grid.validate()?;
    check_samples(real, "js_divergence/real")?;
    check_samples(fake, "js_divergence/fake")?;
    let (p, clip_r) = histogram(real, grid)?;
    let (q, clip_f) = histogram(fake, grid)?;
    let js_bits = js_bits_from_probs(&p, &q);
    let clip_fraction = (clip_r + clip_f) as f64 / (real.rows + fake.rows) as f64;
    Ok(JsResult {
        js_bits,
        clip_fraction,
    })
}

/// Number of mixture modes captured by `samples`: a sample is attributed to
/// its nearest center if it lies within `dist_mult` mode standard
/// deviations; a mode counts as captured when it receives at least
/// `min_frac` of all samples (and at least one).
pub fn mode_coverage(
    samples: &Matrix,
    spec: &MogSpec,
    dist_mult: f64,
    min_frac: f64,
) -> Result<usize> {
    if samples.cols != spec.dim() {
        return Err(Error::Shape(format!(
            "mode_coverage: samples are {}-dimensional, mixture {}",
            samples.cols,
            spec.dim()
        )));
    }
    check_samples(samples, "mode_coverage")?;
    let threshold = dist_mult * mathx::sqrt(spec.variance);
    let mut hits = vec![0usize; spec.modes()];
    for i in 0..samples.rows {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for k in 0..spec.modes() {
            let mut d2 = 0.0;
            for j in 0..spec.dim() {
                let d = samples.at(i, j) - spec.centers.at(k, j);
                d2 += d * d;
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        if mathx::sqrt(best_d2) <= threshold {
            hits[best] += 1;
        }
    }
    let need = min_frac * samples.rows as f64;
    Ok(hits
        .iter()
        .filter(|&&h| h > 0 && h as f64 >= need)
        .count())
}

/// One evaluation round's worth of metrics. `spec_id` names the mixture the
/// report was computed against so rows from different benchmarks are never
/// confused downstream.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub fid: f64,
    pub js_bits: f64,
    pub modes_captured: usize,
    pub n_samples: usize,
    pub clip_fraction: f64,
    pub spec_id: String,
}

/// Computes all metrics of `fake` against `real` samples from `spec`, with
/// the default grid and coverage thresholds.
pub fn evaluate(
    real: &Matrix,
    fake: &Matrix,
    spec: &MogSpec,
    spec_id: &str,
) -> Result<MetricReport> {
    let grid = default_grid(spec)?;
    let js = js_divergence(real, fake, &grid)?;
    let fid = fid_data_space(real, fake)?;
    let modes_captured = mode_coverage(
        fake,
        spec,
        DEFAULT_DIST_MULT,
        default_min_frac(spec.modes()),
    )?;
    Ok(MetricReport {
        fid,
        js_bits: js.js_bits,
        modes_captured,
        n_samples: fake.rows,
        clip_fraction: js.clip_fraction,
        spec_id: spec_id.into(),
    })
}
