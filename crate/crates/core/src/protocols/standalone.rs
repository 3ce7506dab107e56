//! The single-server baseline run through the same scheduler, so that
//! checkpoints and crash handling look identical across protocols. It never
//! touches the network.

use crate::cluster::{Network, Protocol};
use crate::error::Result;
use crate::gan::{Discriminator, Generator, LocalGan};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Standalone {
    pub gan: LocalGan,
    pub data: Tensor,
    pub batch: usize,
    pub disc_steps: usize,
}

impl Standalone {
    /// Uses the same random streams as FL-GAN worker 1.
    pub fn new(generator: Generator, discriminator: Discriminator, data: Tensor, batch: usize, disc_steps: usize, seed: u64) -> Self {
        let gan = LocalGan {
            generator,
            discriminator,
            noise_rng: stream(seed, Stream::LocalNoise, 1),
            sample_rng: stream(seed, Stream::RealSampling, 1),
        };
        Self { gan, data, batch, disc_steps }
    }
}

impl Protocol for Standalone {
    fn server_generate(&mut self, _iteration: u64, _net: &mut Network) -> Result<()> {
        Ok(())
    }

    fn worker_learn(&mut self, _iteration: u64, _net: &mut Network) -> Result<()> {
        self.gan.iteration(&self.data, self.batch, self.disc_steps)
    }

    fn server_merge(&mut self, _iteration: u64, _net: &mut Network) -> Result<()> {
        Ok(())
    }

    fn swap_check(&mut self, _iteration: u64, _net: &mut Network) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, _net: &mut Network) -> Result<()> {
        Ok(())
    }

    fn on_crash(&mut self, _worker: usize) {}

    fn generator(&self) -> &Generator {
        &self.gan.generator
    }
}
