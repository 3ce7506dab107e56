//! Sample quality metrics that need no pretrained network.
//!
//! - Fréchet distance between Gaussians fitted to generated and real samples.
//! - Mode coverage and quality fraction against a known ring of modes.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{Dataset, GaussianRingSpec};
use crate::error::{Error, Result};
use crate::gan::{generate, sample_noise, sample_real, Generator};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 3.0;
pub const DEFAULT_SAMPLE_COUNT: usize = 500;

const PSD_TOLERANCE: f64 = 1e-9;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub frechet: f64,
    pub mode_coverage: f64,
    pub quality_fraction: f64,
    /// A covariance was singular and had a ridge added before scoring.
    #[serde(skip)]
    pub regularized: bool,
}

/// Mean vector and covariance matrix of a sample; the covariance is a
/// row-major `d × d` buffer normalized by `n - 1`.
pub fn mean_cov(samples: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = (samples.rows(), samples.cols());
    if n < 2 {
        return Err(Error::Config("need at least two samples for a covariance".into()));
    }
    let mut mean = vec![0.0; d];
    for row in samples.rows_iter() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for row in samples.rows_iter() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mean, cov))
}

fn check_psd(cov: &[f64], d: usize) -> Result<()> {
    if cov.len() != d * d {
        return Err(Error::Shape(format!("covariance has {} entries, expected {}", cov.len(), d * d)));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite covariance".into()));
    }
    let scale = cov.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            if (cov[i * d + j] - cov[j * d + i]).abs() > PSD_TOLERANCE * scale {
                return Err(Error::Numeric("covariance is not symmetric".into()));
            }
        }
    }
    if min_eigenvalue(cov, d) < -PSD_TOLERANCE * scale {
        return Err(Error::Numeric("covariance is not positive semi-definite".into()));
    }
    Ok(())
}

fn min_eigenvalue(cov: &[f64], d: usize) -> f64 {
    match d {
        1 => cov[0],
        2 => {
            let (a, b, c) = (cov[0], 0.5 * (cov[1] + cov[2]), cov[3]);
            let half_tr = 0.5 * (a + c);
            half_tr - (0.25 * (a - c).powi(2) + b * b).sqrt()
        }
        _ => DMatrix::from_row_slice(d, d, cov).symmetric_eigen().eigenvalues.min(),
    }
}

/// `Tr((Σ1 Σ2)^{1/2})`.
fn trace_sqrt_product(s1: &[f64], s2: &[f64], d: usize) -> f64 {
    match d {
        1 => (s1[0] * s2[0]).max(0.0).sqrt(),
        2 => {
            // the eigenvalues λ1, λ2 of Σ1Σ2 are real and non-negative, so
            // (√λ1 + √λ2)² = tr(Σ1Σ2) + 2·√det(Σ1Σ2)
            let tr = s1[0] * s2[0] + s1[1] * s2[2] + s1[2] * s2[1] + s1[3] * s2[3];
            let det1 = s1[0] * s1[3] - s1[1] * s1[2];
            let det2 = s2[0] * s2[3] - s2[1] * s2[2];
            let det = (det1 * det2).max(0.0);
            (tr + 2.0 * det.sqrt()).max(0.0).sqrt()
        }
        _ => {
            let a = DMatrix::from_row_slice(d, d, s1);
            let b = DMatrix::from_row_slice(d, d, s2);
            let eig = a.symmetric_eigen();
            let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
            let inner = &root * b * &root;
            let inner = (&inner + inner.transpose()) * 0.5;
            inner.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum()
        }
    }
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^{1/2})`, clamped at zero.
pub fn frechet_gaussian(mu1: &[f64], cov1: &[f64], mu2: &[f64], cov2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || d == 0 {
        return Err(Error::Shape("mean vectors must share a positive dimension".into()));
    }
    check_psd(cov1, d)?;
    check_psd(cov2, d)?;
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let trace: f64 = (0..d).map(|i| cov1[i * d + i] + cov2[i * d + i]).sum();
    let value = mean_term + trace - 2.0 * trace_sqrt_product(cov1, cov2, d);
    Ok(value.max(0.0))
}

fn regularize(cov: &mut [f64], d: usize) -> bool {
    if min_eigenvalue(cov, d) > RIDGE {
        return false;
    }
    for i in 0..d {
        cov[i * d + i] += RIDGE;
    }
    true
}

/// Fraction of `centers` hit by at least one point within `radius`, and the
/// fraction of points lying within `radius` of some center.
pub fn mode_stats(points: &Tensor, centers: &[[f64; 2]], radius: f64) -> (f64, f64) {
    let r2 = radius * radius;
    let mut hit = vec![false; centers.len()];
    let mut good = 0usize;
    for p in points.rows_iter() {
        let mut near_any = false;
        for (k, c) in centers.iter().enumerate() {
            if (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r2 {
                hit[k] = true;
                near_any = true;
            }
        }
        good += usize::from(near_any);
    }
    let coverage = hit.iter().filter(|&&h| h).count() as f64 / centers.len().max(1) as f64;
    let quality = good as f64 / points.rows().max(1) as f64;
    (coverage, quality)
}

#[derive(Debug, Clone)]
enum RealSource {
    Ring(GaussianRingSpec),
    Data(Tensor),
}

/// Scores a generator at a checkpoint.
///
/// Real reference samples are drawn fresh from the ring when the dataset is
/// a ring, otherwise resampled from the dataset itself.
#[derive(Debug, Clone)]
pub struct Scorer {
    source: RealSource,
    pub sample_count: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Scorer {
    pub fn new(dataset: &Dataset, sample_count: usize, threshold: f64, seed: u64) -> Result<Self> {
        if sample_count < 2 {
            return Err(Error::Config("scoring needs at least two samples".into()));
        }
        let source = match dataset.ring_spec() {
            Some(spec) => RealSource::Ring(*spec),
            None => RealSource::Data(dataset.samples.clone()),
        };
        Ok(Self { source, sample_count, threshold, seed })
    }

    pub fn score(&self, iteration: u64, g: &Generator) -> Result<MetricsRow> {
        let mut rng = stream(self.seed, Stream::Scoring, iteration);
        let z = sample_noise(self.sample_count, g.noise_dim, &mut rng);
        let generated = generate(g, &z)?.samples;
        self.score_samples(iteration, &generated, &mut rng)
    }

    fn score_samples(&self, iteration: u64, generated: &Tensor, rng: &mut crate::rng::SimRng) -> Result<MetricsRow> {
        let real = match &self.source {
            RealSource::Ring(spec) => spec.sample(self.sample_count, rng),
            RealSource::Data(data) => sample_real(data, self.sample_count, rng)?.samples,
        };
        if real.cols() != generated.cols() {
            return Err(Error::Shape("generator output width differs from data width".into()));
        }
        let d = real.cols();
        let (mu_g, mut cov_g) = mean_cov(generated)?;
        let (mu_r, mut cov_r) = mean_cov(&real)?;
        let regularized = regularize(&mut cov_g, d) | regularize(&mut cov_r, d);
        let frechet = frechet_gaussian(&mu_g, &cov_g, &mu_r, &cov_r)?;
        let (mode_coverage, quality_fraction) = match &self.source {
            RealSource::Ring(spec) => mode_stats(generated, &spec.centers(), self.threshold * spec.std),
            RealSource::Data(_) => (f64::NAN, f64::NAN),
        };
        Ok(MetricsRow { iteration, frechet, mode_coverage, quality_fraction, regularized })
    }
}

/// One-shot scoring of `g` against `dataset`.
pub fn score_generator(
    g: &Generator,
    dataset: &Dataset,
    sample_count: usize,
    threshold: f64,
    seed: u64,
) -> Result<MetricsRow> {
    Scorer::new(dataset, sample_count, threshold, seed)?.score(0, g)
}
