//! FL-GAN: every worker trains a full GAN on its shard; every `mE/b` local
//! iterations the workers upload `(w_n, θ_n)`, the server averages them
//! element-wise and broadcasts the result back.

use crate::cluster::{Message, Network, NodeId, Payload, Protocol};
use crate::error::{Error, Result};
use crate::gan::{Discriminator, Generator, LocalGan};
use crate::protocols::mdgan::MergeRecord;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct FlGanWorkerState {
    pub index: usize,
    pub gan: LocalGan,
    pub shard: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlGanSettings {
    pub batch: usize,
    pub disc_steps: usize,
    /// Local iterations per round (`mE/b`).
    pub round_period: u64,
}

#[derive(Debug, Clone)]
pub struct FlGan {
    /// Server copy of the averaged generator; checkpoints score this one.
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub workers: Vec<FlGanWorkerState>,
    pub settings: FlGanSettings,
    alive: Vec<bool>,
    pub rounds: Vec<MergeRecord>,
}

/// Element-wise mean; accumulation starts from the first vector so a single
/// input is returned bit for bit.
pub fn average(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let (first, rest) = vectors.split_first().ok_or_else(|| Error::Protocol("nothing to average".into()))?;
    let mut acc = first.to_vec();
    for v in rest {
        if v.len() != acc.len() {
            return Err(Error::Shape("cannot average vectors of different lengths".into()));
        }
        acc.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b);
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

impl FlGan {
    /// Every worker starts from copies of the server's `(generator, disc)`.
    pub fn new(
        generator: Generator,
        disc: Discriminator,
        shards: Vec<Tensor>,
        settings: FlGanSettings,
        seed: u64,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Config("FL-GAN needs at least one worker".into()));
        }
        if shards.iter().any(|s| s.rows() == 0) {
            return Err(Error::Config("every worker needs a non-empty shard".into()));
        }
        if settings.batch == 0 || settings.disc_steps == 0 || settings.round_period == 0 {
            return Err(Error::Config("batch, discriminator steps and round length must be positive".into()));
        }
        let workers = shards
            .into_iter()
            .enumerate()
            .map(|(i, shard)| {
                let index = i + 1;
                FlGanWorkerState {
                    index,
                    gan: LocalGan {
                        generator: generator.clone(),
                        discriminator: disc.clone(),
                        noise_rng: stream(seed, Stream::LocalNoise, index as u64),
                        sample_rng: stream(seed, Stream::RealSampling, index as u64),
                    },
                    shard,
                }
            })
            .collect::<Vec<_>>();
        let alive = vec![true; workers.len()];
        Ok(Self { generator, discriminator: disc, workers, settings, alive, rounds: Vec::new() })
    }

    fn alive_workers(&self) -> Vec<usize> {
        (1..=self.workers.len()).filter(|&n| self.alive[n - 1]).collect()
    }

    /// Applies any broadcast waiting in a worker's inbox.
    fn absorb_broadcasts(&mut self, net: &mut Network) -> Result<()> {
        for n in self.alive_workers() {
            while let Some(msg) = net.recv(NodeId::Worker(n)) {
                let Payload::GanParams { generator, discriminator } = msg.payload else {
                    return Err(Error::Protocol(format!("worker {n} expected averaged parameters")));
                };
                let gan = &mut self.workers[n - 1].gan;
                gan.generator.net.set_params(&generator)?;
                gan.discriminator.net.set_params(&discriminator)?;
            }
        }
        Ok(())
    }
}

/// Averages uploaded `(w_n, θ_n)` pairs; returns `(w, θ)`.
pub fn flgan_average(uploads: &[(Vec<f64>, Vec<f64>)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let ws: Vec<&[f64]> = uploads.iter().map(|(w, _)| w.as_slice()).collect();
    let ts: Vec<&[f64]> = uploads.iter().map(|(_, t)| t.as_slice()).collect();
    Ok((average(&ws)?, average(&ts)?))
}

impl Protocol for FlGan {
    fn server_generate(&mut self, _iteration: u64, _net: &mut Network) -> Result<()> {
        Ok(())
    }

    fn worker_learn(&mut self, iteration: u64, net: &mut Network) -> Result<()> {
        self.absorb_broadcasts(net)?;
        let FlGanSettings { batch, disc_steps, round_period } = self.settings;
        for n in self.alive_workers() {
            let w = &mut self.workers[n - 1];
            w.gan.iteration(&w.shard, batch, disc_steps)?;
            if iteration.is_multiple_of(round_period) {
                let payload = Payload::GanUpload {
                    generator: w.gan.generator.net.params(),
                    discriminator: w.gan.discriminator.net.params(),
                };
                net.send(Message::new(NodeId::Worker(n), NodeId::Server, payload))?;
            }
        }
        Ok(())
    }

    fn server_merge(&mut self, iteration: u64, net: &mut Network) -> Result<()> {
        let mut uploads = Vec::new();
        for msg in net.recv_all(NodeId::Server) {
            let Payload::GanUpload { generator, discriminator } = msg.payload else {
                return Err(Error::Protocol("server expected a GAN upload".into()));
            };
            uploads.push((generator, discriminator));
        }
        if uploads.is_empty() {
            return Ok(());
        }
        let alive = self.alive_workers();
        if uploads.len() != alive.len() {
            return Err(Error::Protocol(format!("{} uploads from {} alive workers", uploads.len(), alive.len())));
        }
        let (w, theta) = flgan_average(&uploads)?;
        self.generator.net.set_params(&w)?;
        self.discriminator.net.set_params(&theta)?;
        for n in &alive {
            let payload = Payload::GanParams { generator: w.clone(), discriminator: theta.clone() };
            net.send(Message::new(NodeId::Server, NodeId::Worker(*n), payload))?;
        }
        self.rounds.push(MergeRecord { iteration, divisor: uploads.len(), alive: net.alive_count() });
        Ok(())
    }

    fn swap_check(&mut self, _iteration: u64, _net: &mut Network) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, net: &mut Network) -> Result<()> {
        net.deliver();
        self.absorb_broadcasts(net)
    }

    fn on_crash(&mut self, worker: usize) {
        self.alive[worker - 1] = false;
    }

    fn generator(&self) -> &Generator {
        &self.generator
    }
}
