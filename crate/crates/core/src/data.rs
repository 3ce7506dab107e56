//! Synthetic datasets and i.i.d. sharding.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Isotropic Gaussian modes equally spaced on a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianRingSpec {
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
    pub samples_per_mode: usize,
}

impl GaussianRingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.samples_per_mode == 0 {
            return Err(Error::Config("ring needs at least one mode and one sample per mode".into()));
        }
        if self.std.is_nan() || self.std <= 0.0 || !self.radius.is_finite() {
            return Err(Error::Config("ring std must be positive and radius finite".into()));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.modes)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / self.modes as f64;
                [self.radius * angle.cos(), self.radius * angle.sin()]
            })
            .collect()
    }

    /// `count` fresh points, modes chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Tensor {
        let centers = self.centers();
        let noise = Normal::new(0.0, self.std).expect("validated std");
        let mut data = Vec::with_capacity(count * 2);
        for _ in 0..count {
            let c = centers[rng.random_range(0..centers.len())];
            data.push(c[0] + noise.sample(rng));
            data.push(c[1] + noise.sample(rng));
        }
        Tensor::matrix(count, 2, data).expect("sized by construction")
    }
}

/// Uniform points on the dark squares of a `cells × cells` board of side `2·half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerboardSpec {
    pub cells: usize,
    pub half_width: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetDescriptor {
    Ring(GaussianRingSpec),
    Checkerboard(CheckerboardSpec),
    Idx { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    pub descriptor: DatasetDescriptor,
}

impl Dataset {
    pub fn new(samples: Tensor, descriptor: DatasetDescriptor) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::Format("dataset has no samples".into()));
        }
        if !samples.all_finite() {
            return Err(Error::Format("dataset has non-finite entries".into()));
        }
        Ok(Self { samples: samples.flatten_rows(), descriptor })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn ring_spec(&self) -> Option<&GaussianRingSpec> {
        match &self.descriptor {
            DatasetDescriptor::Ring(spec) => Some(spec),
            _ => None,
        }
    }
}

/// `samples_per_mode` points per mode, grouped by mode in center order.
pub fn make_ring(spec: &GaussianRingSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(seed, Stream::Dataset, 0);
    let noise = Normal::new(0.0, spec.std).expect("validated std");
    let mut data = Vec::with_capacity(spec.modes * spec.samples_per_mode * 2);
    for c in spec.centers() {
        for _ in 0..spec.samples_per_mode {
            data.push(c[0] + noise.sample(&mut rng));
            data.push(c[1] + noise.sample(&mut rng));
        }
    }
    let rows = spec.modes * spec.samples_per_mode;
    Dataset::new(Tensor::matrix(rows, 2, data)?, DatasetDescriptor::Ring(*spec))
}

pub fn make_checkerboard(spec: &CheckerboardSpec, seed: u64) -> Result<Dataset> {
    if spec.cells == 0 || spec.samples == 0 || spec.half_width.is_nan() || spec.half_width <= 0.0 {
        return Err(Error::Config("checkerboard needs positive cells, samples and width".into()));
    }
    let mut rng = stream(seed, Stream::Dataset, 0);
    let cell = 2.0 * spec.half_width / spec.cells as f64;
    let dark: Vec<(usize, usize)> = (0..spec.cells)
        .flat_map(|r| (0..spec.cells).map(move |c| (r, c)))
        .filter(|(r, c)| (r + c) % 2 == 0)
        .collect();
    let mut data = Vec::with_capacity(spec.samples * 2);
    for _ in 0..spec.samples {
        let (r, c) = dark[rng.random_range(0..dark.len())];
        data.push(-spec.half_width + cell * (c as f64 + rng.random::<f64>()));
        data.push(-spec.half_width + cell * (r as f64 + rng.random::<f64>()));
    }
    Dataset::new(Tensor::matrix(spec.samples, 2, data)?, DatasetDescriptor::Checkerboard(*spec))
}

/// The local dataset `B_n` of worker `owner` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub owner: usize,
    pub samples: Tensor,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random permutation followed by a contiguous split into `workers` parts
/// whose sizes differ by at most one. A single shard keeps dataset order.
pub fn shard_iid(dataset: &Dataset, workers: usize, seed: u64) -> Result<Vec<Shard>> {
    let total = dataset.len();
    if workers == 0 {
        return Err(Error::Config("need at least one worker".into()));
    }
    if workers > total {
        return Err(Error::Config(format!("{workers} workers but only {total} samples")));
    }
    let mut order: Vec<usize> = (0..total).collect();
    if workers > 1 {
        order.shuffle(&mut stream(seed, Stream::Sharding, 0));
    }
    let base = total / workers;
    let extra = total % workers;
    let mut shards = Vec::with_capacity(workers);
    let mut start = 0;
    for n in 0..workers {
        let len = base + usize::from(n < extra);
        shards.push(Shard { owner: n + 1, samples: dataset.samples.select_rows(&order[start..start + len]) });
        start += len;
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(modes: usize, std: f64, per: usize) -> GaussianRingSpec {
        GaussianRingSpec { modes, radius: 2.0, std, samples_per_mode: per }
    }

    fn nearest(centers: &[[f64; 2]], p: &[f64]) -> usize {
        (0..centers.len())
            .min_by(|&a, &b| {
                let da = (p[0] - centers[a][0]).powi(2) + (p[1] - centers[a][1]).powi(2);
                let db = (p[0] - centers[b][0]).powi(2) + (p[1] - centers[b][1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap()
    }

    #[test]
    fn single_tight_mode_sits_on_positive_axis() {
        let d = make_ring(&GaussianRingSpec { modes: 1, radius: 3.0, std: 1e-9, samples_per_mode: 20 }, 1).unwrap();
        for row in d.samples.rows_iter() {
            assert!((row[0] - 3.0).abs() < 1e-6 && row[1].abs() < 1e-6);
        }
    }

    #[test]
    fn nearest_center_recovers_equal_clusters() {
        let spec = ring(8, 0.02, 50);
        let d = make_ring(&spec, 3).unwrap();
        let centers = spec.centers();
        let mut counts = [0usize; 8];
        for (i, row) in d.samples.rows_iter().enumerate() {
            let k = nearest(&centers, row);
            assert_eq!(k, i / 50);
            counts[k] += 1;
        }
        assert_eq!(counts, [50; 8]);
    }

    #[test]
    fn ring_is_seeded() {
        let spec = ring(4, 0.1, 10);
        assert_eq!(make_ring(&spec, 9).unwrap(), make_ring(&spec, 9).unwrap());
        assert_ne!(make_ring(&spec, 9).unwrap(), make_ring(&spec, 10).unwrap());
    }

    #[test]
    fn invalid_ring_rejected() {
        assert!(make_ring(&ring(0, 0.1, 10), 1).is_err());
        assert!(make_ring(&ring(3, 0.0, 10), 1).is_err());
    }

    #[test]
    fn checkerboard_points_land_on_dark_cells() {
        let spec = CheckerboardSpec { cells: 4, half_width: 2.0, samples: 500 };
        let d = make_checkerboard(&spec, 2).unwrap();
        for row in d.samples.rows_iter() {
            let c = ((row[0] + 2.0) / 1.0).floor() as usize;
            let r = ((row[1] + 2.0) / 1.0).floor() as usize;
            assert_eq!((r + c) % 2, 0);
        }
    }

    #[test]
    fn single_shard_is_the_dataset() {
        let d = make_ring(&ring(3, 0.1, 5), 1).unwrap();
        let shards = shard_iid(&d, 1, 4).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].samples, d.samples);
    }

    #[test]
    fn equal_shards() {
        let d = make_ring(&ring(10, 0.1, 100), 1).unwrap();
        let shards = shard_iid(&d, 10, 4).unwrap();
        assert!(shards.iter().all(|s| s.len() == 100));
        assert_eq!(shards.iter().map(|s| s.owner).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_workers() {
        let d = make_ring(&ring(1, 0.1, 3), 1).unwrap();
        assert!(matches!(shard_iid(&d, 4, 1), Err(Error::Config(_))));
    }
}
