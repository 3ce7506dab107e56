#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use mdgan::adam::AdamConfig;
use mdgan::config::{CrashConfig, KSetting, LogBase};
use mdgan::data::{DatasetDescriptor, GaussianRingSpec};
use mdgan::gan::{feedback_for_batch, sample_noise, DataBatch, FeedbackBundle};
use mdgan::nn::{Activation, Gradients, LayerSpec};
use mdgan::protocols::distribute_batches;
use mdgan::protocols::mdgan::{mdgan_merge_gradient, mdgan_server_iteration, mdgan_worker_iteration, MdGanServerState, MdGanWorkerState};
use mdgan::cluster::{run_global_iterations, CrashSchedule, Network, TrafficLedger};
use mdgan::cost::CostModelInput;
use mdgan::protocols::flgan::{FlGan, FlGanSettings};
use mdgan::protocols::mdgan::{MdGan, MdGanSettings};
use mdgan::protocols::period_iterations;
use mdgan::rng::{stream, Stream};
use mdgan::{Discriminator, ExperimentConfig, GanArchitecture, Generator, Mlp, ProtocolKind, Tensor};

pub const SMALL_G: &[LayerSpec] = &[(16, Activation::Relu)];
pub const SMALL_D: &[LayerSpec] = &[(16, Activation::Relu)];

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / ‖b‖`, or the absolute error when `b` vanishes.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = l2(b);
    if scale == 0.0 {
        l2(&diff)
    } else {
        l2(&diff) / scale
    }
}

/// Generator 2→16→2 and discriminator 2→16→1 from one seed.
pub fn small_pair(seed: u64) -> (Generator, Discriminator) {
    let mut rng = stream(seed, Stream::Test, 1);
    let g = Generator::new(2, SMALL_G, 2, AdamConfig::default(), &mut rng).unwrap();
    let d = Discriminator::new(2, SMALL_D, AdamConfig::default(), &mut rng).unwrap();
    (g, d)
}

pub fn gaussian_shard(rows: usize, seed: u64) -> Tensor {
    let z = sample_noise(rows, 2, &mut stream(seed, Stream::Test, 2));
    z.samples
}

/// One MD-GAN setup: server, `workers` worker states with independent
/// discriminators, all on a small Gaussian shard.
pub fn mdgan_setup(seed: u64, workers: usize, k: usize, b: usize, steps: usize) -> (MdGanServerState, Vec<MdGanWorkerState>) {
    let (g, _) = small_pair(seed);
    let server = MdGanServerState::new(g, k, b, seed);
    let ws = (1..=workers)
        .map(|n| {
            let (_, d) = small_pair(seed.wrapping_mul(31).wrapping_add(n as u64));
            MdGanWorkerState::new(n, d, gaussian_shard(40, seed + n as u64), steps, b, seed)
        })
        .collect();
    (server, ws)
}

/// Runs the server and worker halves of one MD-GAN iteration and returns
/// the feedback of every worker.
pub fn mdgan_half_iteration(server: &mut MdGanServerState, workers: &mut [MdGanWorkerState]) -> BTreeMap<usize, FeedbackBundle> {
    let alive: Vec<usize> = workers.iter().map(|w| w.index).collect();
    let msgs = mdgan_server_iteration(server, &alive).unwrap();
    let mut out = BTreeMap::new();
    for msg in msgs {
        let mdgan::cluster::NodeId::Worker(n) = msg.dst else { panic!("server sent to server") };
        let mdgan::cluster::Payload::GeneratedBatchPair { disc, gen } = msg.payload else { panic!("wrong payload") };
        let w = workers.iter_mut().find(|w| w.index == n).unwrap();
        out.insert(n, mdgan_worker_iteration(w, &disc, &gen).unwrap());
    }
    out
}

/// Gradient of `(1/N) Σ_n mean log2(1 − D_n(G(z_g(n))))` with respect to the
/// generator weights, back-propagated end to end through the stacked
/// network `D_n ∘ G`, without going through feedback vectors.
pub fn direct_generator_gradient(server: &MdGanServerState, workers: &[MdGanWorkerState]) -> Vec<f64> {
    let pairs = distribute_batches(server.k, workers.len()).unwrap();
    let gen_layers = server.generator.net.layers().len();
    let mut total = Gradients::zeros_like(&server.generator.net).to_flat();
    for (w, &(g_idx, _)) in workers.iter().zip(&pairs) {
        let z = server.noise(g_idx).unwrap();
        let stacked = Mlp::stack(&server.generator.net, &w.disc.net).unwrap();
        let (p, cache) = stacked.forward(z).unwrap();
        let b = p.rows() as f64;
        let out_grad: Vec<f64> = p.data().iter().map(|&v| -1.0 / (b * (1.0 - v) * LN_2)).collect();
        let grads = stacked.backward_params(&cache, &Tensor::matrix(p.rows(), 1, out_grad).unwrap()).unwrap();
        let gen_part = Gradients { layers: grads.layers[..gen_layers].to_vec() };
        for (t, g) in total.iter_mut().zip(gen_part.to_flat()) {
            *t += g / workers.len() as f64;
        }
    }
    total
}

pub fn merged_gradient(server: &MdGanServerState, feedback: &BTreeMap<usize, FeedbackBundle>) -> Vec<f64> {
    let alive: Vec<usize> = feedback.keys().copied().collect();
    mdgan_merge_gradient(server, feedback, &alive).unwrap().to_flat()
}

pub fn feedback_on(d: &Discriminator, x: &Tensor) -> Tensor {
    feedback_for_batch(d, &DataBatch::generated(x.clone())).unwrap().vectors
}

pub fn ring_spec(samples_per_mode: usize) -> GaussianRingSpec {
    GaussianRingSpec { modes: 8, radius: 2.0, std: 0.05, samples_per_mode }
}

/// Small ring experiment used by the protocol and run tests.
pub fn tiny_config(protocol: ProtocolKind, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        protocol,
        seed,
        workers: if protocol == ProtocolKind::Standalone { 1 } else { 3 },
        batch: 4,
        k: KSetting::Fixed(if protocol == ProtocolKind::Mdgan { 2 } else { 1 }),
        log_base: LogBase::Natural,
        epochs: 1,
        disc_steps: 1,
        iterations: 40,
        checkpoint_stride: 10,
        score_samples: 50,
        mode_threshold: 3.0,
        dataset: DatasetDescriptor::Ring(ring_spec(6)),
        crashes: CrashConfig::None,
        architecture: GanArchitecture {
            noise_dim: 2,
            generator_hidden: vec![(8, Activation::Relu)],
            discriminator_hidden: vec![(8, Activation::Relu)],
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
        },
    }
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub checked: usize,
    pub failures: Vec<(usize, f64, f64)>,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.failures.extend(other.failures);
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Central differences of `f` around `x0` at every coordinate, compared with
/// `analytic` at relative tolerance `FD_REL_TOL` (absolute floor `FD_ABS_FLOOR`).
pub fn fd_check(analytic: &[f64], x0: &[f64], f: impl Fn(&[f64]) -> f64) -> FdReport {
    assert_eq!(analytic.len(), x0.len());
    let mut report = FdReport::default();
    let mut x = x0.to_vec();
    for i in 0..x.len() {
        x[i] = x0[i] + FD_STEP;
        let up = f(&x);
        x[i] = x0[i] - FD_STEP;
        let down = f(&x);
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let tol = (FD_REL_TOL * a.abs().max(numeric.abs())).max(FD_ABS_FLOOR);
        report.checked += 1;
        if (a - numeric).abs() > tol {
            report.failures.push((i, a, numeric));
        }
    }
    report
}

/// Every parameter and input gradient of `J_disc` and `J_gen` for one
/// random instance, checked by central differences.
pub fn gradcheck_instance(seed: u64, b: usize) -> FdReport {
    use mdgan::gan::{disc_gradient, disc_loss, gen_gradient, gen_loss, generate_cached, Origin};
    let mut rng = stream(seed, Stream::Test, 3);
    let g_spec = [(16, Activation::Tanh), (16, Activation::Tanh)];
    let d_spec = [(16, Activation::Tanh), (16, Activation::Sigmoid)];
    let g = Generator::new(2, &g_spec, 2, AdamConfig::default(), &mut rng).unwrap();
    let d = Discriminator::new(2, &d_spec, AdamConfig::default(), &mut rng).unwrap();
    let x_real = DataBatch::real(sample_noise(b, 2, &mut rng).samples);
    let z = sample_noise(b, 2, &mut rng);
    let (x_gen, g_cache) = generate_cached(&g, &z).unwrap();
    let mut report = FdReport::default();

    // J_disc with respect to θ
    let analytic = disc_gradient(&d, &x_real, &x_gen).unwrap().to_flat();
    report.merge(fd_check(&analytic, &d.net.params(), |theta| {
        let mut d2 = d.clone();
        d2.net.set_params(theta).unwrap();
        disc_loss(&d2, &x_real, &x_gen).unwrap()
    }));

    // J_disc with respect to the real samples
    let (p, cache) = d.net.forward(&x_real.samples).unwrap();
    let out: Vec<f64> = p.data().iter().map(|&v| 1.0 / (b as f64 * v * LN_2)).collect();
    let analytic = d.net.backward_inputs(&cache, &Tensor::matrix(b, 1, out).unwrap()).unwrap();
    report.merge(fd_check(analytic.data(), x_real.samples.data(), |x| {
        let xr = DataBatch::real(Tensor::matrix(b, 2, x.to_vec()).unwrap());
        disc_loss(&d, &xr, &x_gen).unwrap()
    }));

    // J_disc (and B̃) with respect to the generated samples: the feedback
    let analytic = feedback_on(&d, &x_gen.samples);
    report.merge(fd_check(analytic.data(), x_gen.samples.data(), |x| {
        let xg = DataBatch { samples: Tensor::matrix(b, 2, x.to_vec()).unwrap(), origin: Origin::Generated };
        disc_loss(&d, &x_real, &xg).unwrap()
    }));

    // J_gen with respect to w
    let analytic = gen_gradient(&g, &d, &z).unwrap().to_flat();
    report.merge(fd_check(&analytic, &g.net.params(), |w| {
        let mut g2 = g.clone();
        g2.net.set_params(w).unwrap();
        gen_loss(&g2, &d, &z).unwrap()
    }));

    // J_gen with respect to the noise
    let fb = feedback_on(&d, &x_gen.samples);
    let analytic = g.net.backward_inputs(&g_cache, &fb).unwrap();
    report.merge(fd_check(analytic.data(), z.samples.data(), |zz| {
        let nz = mdgan::gan::NoiseBatch { samples: Tensor::matrix(b, 2, zz.to_vec()).unwrap() };
        gen_loss(&g, &d, &nz).unwrap()
    }));
    report
}

pub fn input(workers: u64, batch: u64, iterations: u64, local: u64, g: u64, d: u64) -> CostModelInput {
    CostModelInput {
        workers,
        batch,
        data_dim: 2,
        generator_params: g,
        discriminator_params: d,
        iterations,
        local_samples: local,
        epochs: 1,
        k: 1,
        bytes_per_scalar: 4,
    }
}

/// MD-GAN with N=3, b=4, d=2 on 20-sample shards (swap every 5 iterations).
pub fn mdgan_ledger(iterations: u64, crashes: &CrashSchedule) -> (TrafficLedger, CostModelInput) {
    let (g, d) = small_pair(11);
    let shards = (0..3).map(|n| gaussian_shard(20, n)).collect();
    let settings = MdGanSettings { k: 2, batch: 4, disc_steps: 1, swap_period: Some(period_iterations(20, 1, 4)) };
    let mut proto = MdGan::new(g.clone(), &d, shards, settings, 11).unwrap();
    let mut net = Network::new(3).unwrap();
    let out = run_global_iterations(&mut proto, &mut net, iterations, crashes, 0, None).unwrap();
    let mut inp = input(3, 4, iterations, 20, g.net.param_count() as u64, d.net.param_count() as u64);
    inp.k = 2;
    (out.ledger, inp)
}

/// FL-GAN with N=2, b=4 on 8-sample shards over 6 iterations: three rounds.
pub fn flgan_ledger() -> (TrafficLedger, CostModelInput) {
    let (g, d) = small_pair(12);
    let shards = vec![gaussian_shard(8, 1), gaussian_shard(8, 2)];
    let settings = FlGanSettings { batch: 4, disc_steps: 1, round_period: period_iterations(8, 1, 4) };
    let mut proto = FlGan::new(g.clone(), d.clone(), shards, settings, 12).unwrap();
    let mut net = Network::new(2).unwrap();
    let out = run_global_iterations(&mut proto, &mut net, 6, &CrashSchedule::default(), 0, None).unwrap();
    assert_eq!(proto.rounds.len(), 3);
    (out.ledger, input(2, 4, 6, 8, g.net.param_count() as u64, d.net.param_count() as u64))
}
