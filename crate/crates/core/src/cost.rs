//! Analytic communication and complexity model, and its cross-check against
//! the simulator's ledger.
//!
//! All traffic is computed as integer scalar counts and converted to bytes
//! last. Rows follow the `link (perspective)` convention: `C->W (C)` is
//! everything the server sends in one communication, `C->W (W)` what one
//! worker receives.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClassTotals, CrashSchedule, LinkClass, TrafficLedger};
use crate::error::{Error, Result};
use crate::protocols::period_iterations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Standalone,
    Flgan,
    Mdgan,
}

impl ProtocolKind {
    pub fn label(self) -> &'static str {
        match self {
            ProtocolKind::Standalone => "standalone",
            ProtocolKind::Flgan => "flgan",
            ProtocolKind::Mdgan => "mdgan",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModelInput {
    pub workers: u64,
    pub batch: u64,
    pub data_dim: u64,
    pub generator_params: u64,
    pub discriminator_params: u64,
    pub iterations: u64,
    /// Samples per local shard.
    pub local_samples: u64,
    pub epochs: u64,
    pub k: u64,
    pub bytes_per_scalar: u64,
}

impl CostModelInput {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("workers", self.workers),
            ("batch", self.batch),
            ("data_dim", self.data_dim),
            ("generator_params", self.generator_params),
            ("discriminator_params", self.discriminator_params),
            ("local_samples", self.local_samples),
            ("epochs", self.epochs),
            ("k", self.k),
            ("bytes_per_scalar", self.bytes_per_scalar),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.k > self.workers {
            return Err(Error::Config(format!("k={} exceeds N={}", self.k, self.workers)));
        }
        Ok(())
    }

    /// Iterations between two swaps or rounds, `mE/b`.
    pub fn period(&self) -> u64 {
        period_iterations(self.local_samples as usize, self.epochs as usize, self.batch as usize)
    }

    /// Swaps (MD-GAN) or rounds (FL-GAN) in `I` iterations: `Ib/(mE)`.
    pub fn sync_count(&self) -> u64 {
        self.iterations / self.period()
    }

    fn gan_params(&self) -> u64 {
        self.generator_params + self.discriminator_params
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub link: &'static str,
    pub per_communication_scalars: u64,
    pub communications: u64,
    pub per_communication_bytes: u64,
    pub total_bytes: u64,
}

impl CostRow {
    fn new(link: &'static str, scalars: u64, communications: u64, bps: u64) -> Self {
        Self {
            link,
            per_communication_scalars: scalars,
            communications,
            per_communication_bytes: scalars * bps,
            total_bytes: scalars * bps * communications,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolCosts {
    pub rows: Vec<CostRow>,
    /// Predicted ledger totals per link class.
    pub links: BTreeMap<LinkClass, ClassTotals>,
}

impl ProtocolCosts {
    pub fn row(&self, link: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.link == link)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub quantity: &'static str,
    pub flgan: f64,
    pub mdgan: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub input: CostModelInput,
    pub flgan: ProtocolCosts,
    pub mdgan: ProtocolCosts,
    pub complexity: Vec<ComplexityRow>,
}

impl CostReport {
    pub fn for_protocol(&self, kind: ProtocolKind) -> BTreeMap<LinkClass, ClassTotals> {
        match kind {
            ProtocolKind::Standalone => BTreeMap::new(),
            ProtocolKind::Flgan => self.flgan.links.clone(),
            ProtocolKind::Mdgan => self.mdgan.links.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let i = &self.input;
        let _ = writeln!(
            s,
            "N={} b={} d={} |w|={} |theta|={} I={} m={} E={} k={} bytes/scalar={}",
            i.workers,
            i.batch,
            i.data_dim,
            i.generator_params,
            i.discriminator_params,
            i.iterations,
            i.local_samples,
            i.epochs,
            i.k,
            i.bytes_per_scalar
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<8} {:<10} {:>16} {:>16} {:>14} {:>20}",
            "protocol", "link", "scalars/comm", "bytes/comm", "comms", "total bytes"
        );
        for (name, costs) in [("flgan", &self.flgan), ("mdgan", &self.mdgan)] {
            for r in &costs.rows {
                let _ = writeln!(
                    s,
                    "{:<8} {:<10} {:>16} {:>16} {:>14} {:>20}",
                    name, r.link, r.per_communication_scalars, r.per_communication_bytes, r.communications, r.total_bytes
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>18} {:>18}", "complexity", "flgan", "mdgan");
        for c in &self.complexity {
            let _ = writeln!(s, "{:<16} {:>18.6e} {:>18.6e}", c.quantity, c.flgan, c.mdgan);
        }
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["protocol", "link", "per_communication_scalars", "per_communication_bytes", "communications", "total_bytes"])?;
        for (name, costs) in [("flgan", &self.flgan), ("mdgan", &self.mdgan)] {
            for r in &costs.rows {
                w.write_record([
                    name.to_string(),
                    r.link.to_string(),
                    r.per_communication_scalars.to_string(),
                    r.per_communication_bytes.to_string(),
                    r.communications.to_string(),
                    r.total_bytes.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn analytic_costs(input: &CostModelInput) -> Result<CostReport> {
    input.validate()?;
    let bps = input.bytes_per_scalar;
    let (n, b, d) = (input.workers, input.batch, input.data_dim);
    let theta = input.discriminator_params;
    let gan = input.gan_params();
    let syncs = input.sync_count();
    let iters = input.iterations;

    let mdgan_rows = vec![
        CostRow::new("C->W (C)", 2 * b * d * n, iters, bps),
        CostRow::new("C->W (W)", 2 * b * d, iters, bps),
        CostRow::new("W->C (W)", b * d, iters, bps),
        CostRow::new("W->C (C)", b * d * n, iters, bps),
        CostRow::new("W->W (W)", theta, syncs, bps),
    ];
    let flgan_rows = vec![
        CostRow::new("C->W (C)", n * gan, syncs, bps),
        CostRow::new("C->W (W)", gan, syncs, bps),
        CostRow::new("W->C (W)", gan, syncs, bps),
        CostRow::new("W->C (C)", n * gan, syncs, bps),
    ];

    let (fi, ff, nf, bf, df, kf) = (iters as f64, gan as f64, n as f64, b as f64, d as f64, input.k as f64);
    let (wf, tf) = (input.generator_params as f64, theta as f64);
    let me = (input.local_samples * input.epochs) as f64;
    let complexity = vec![
        ComplexityRow { quantity: "computation C", flgan: fi * bf * nf * ff / me, mdgan: fi * bf * (df * nf + kf * wf) },
        ComplexityRow { quantity: "memory C", flgan: nf * ff, mdgan: bf * (df * nf + kf * wf) },
        ComplexityRow { quantity: "computation W", flgan: fi * bf * ff, mdgan: fi * bf * tf },
        ComplexityRow { quantity: "memory W", flgan: ff, mdgan: tf },
    ];

    Ok(CostReport {
        input: *input,
        mdgan: ProtocolCosts { rows: mdgan_rows, links: predict_links(ProtocolKind::Mdgan, input, &CrashSchedule::default())? },
        flgan: ProtocolCosts { rows: flgan_rows, links: predict_links(ProtocolKind::Flgan, input, &CrashSchedule::default())? },
        complexity,
    })
}

/// Ledger totals per link class, accounting for workers that crash (a
/// worker crashing at iteration `t` still communicates during `t`).
pub fn predict_links(
    kind: ProtocolKind,
    input: &CostModelInput,
    crashes: &CrashSchedule,
) -> Result<BTreeMap<LinkClass, ClassTotals>> {
    input.validate()?;
    let bps = input.bytes_per_scalar;
    let (b, d) = (input.batch, input.data_dim);
    let period = input.period();
    let mut links: BTreeMap<LinkClass, ClassTotals> = BTreeMap::new();
    if kind == ProtocolKind::Standalone {
        return Ok(links);
    }
    let mut add = |class: LinkClass, messages: u64, scalars_each: u64| {
        if messages == 0 {
            return;
        }
        let t = links.entry(class).or_default();
        t.messages += messages;
        t.bytes += messages * scalars_each * bps;
    };
    for i in 1..=input.iterations {
        let crashed_before = crashes.crashes.iter().filter(|(w, t)| *t < i && (1..=input.workers as usize).contains(w)).count() as u64;
        let alive = input.workers.saturating_sub(crashed_before);
        if alive == 0 {
            break;
        }
        match kind {
            ProtocolKind::Mdgan => {
                add(LinkClass::ServerToWorker, alive, 2 * b * d);
                add(LinkClass::WorkerToServer, alive, b * d);
                if i % period == 0 && alive >= 2 {
                    add(LinkClass::WorkerToWorker, alive, input.discriminator_params);
                }
            }
            ProtocolKind::Flgan => {
                if i % period == 0 {
                    add(LinkClass::WorkerToServer, alive, input.gan_params());
                    add(LinkClass::ServerToWorker, alive, input.gan_params());
                }
            }
            ProtocolKind::Standalone => unreachable!(),
        }
    }
    Ok(links)
}

/// Exact comparison of predicted and measured totals for every link class.
pub fn verify_links(predicted: &BTreeMap<LinkClass, ClassTotals>, ledger: &TrafficLedger) -> Result<()> {
    let measured = LinkClass::ALL.into_iter().map(|c| (c, ledger.totals(c))).collect();
    verify_totals(predicted, &measured)
}

pub fn verify_totals(
    predicted: &BTreeMap<LinkClass, ClassTotals>,
    measured: &BTreeMap<LinkClass, ClassTotals>,
) -> Result<()> {
    let mut diffs = String::new();
    for class in LinkClass::ALL {
        let p = predicted.get(&class).copied().unwrap_or_default();
        let m = measured.get(&class).copied().unwrap_or_default();
        if p != m {
            let _ = writeln!(
                diffs,
                "{}: predicted {} B / {} msgs, measured {} B / {} msgs",
                class.label(),
                p.bytes,
                p.messages,
                m.bytes,
                m.messages
            );
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::LedgerMismatch(diffs))
    }
}

pub fn verify_ledger(report: &CostReport, kind: ProtocolKind, ledger: &TrafficLedger) -> Result<()> {
    verify_links(&report.for_protocol(kind), ledger)
}

/// Maximal ingress per node class during one communication, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IngressPoint {
    pub batch: u64,
    pub flgan_worker: u64,
    pub flgan_server: u64,
    pub mdgan_worker: u64,
    pub mdgan_server: u64,
}

/// Smallest batch sizes at which MD-GAN ingress exceeds FL-GAN's.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossover {
    pub worker: u64,
    pub server: u64,
}

/// FL-GAN ingress is the model size and does not depend on `b`; an MD-GAN
/// worker receives two batches plus one swapped discriminator, the MD-GAN
/// server one feedback bundle per worker.
pub fn ingress_curve(input: &CostModelInput, batch_sizes: &[u64]) -> Result<Vec<IngressPoint>> {
    if batch_sizes.contains(&0) {
        return Err(Error::Config("batch sizes must be positive".into()));
    }
    let bps = input.bytes_per_scalar;
    let gan = input.gan_params();
    Ok(batch_sizes
        .iter()
        .map(|&b| IngressPoint {
            batch: b,
            flgan_worker: gan * bps,
            flgan_server: input.workers * gan * bps,
            mdgan_worker: (2 * b * input.data_dim + input.discriminator_params) * bps,
            mdgan_server: b * input.data_dim * input.workers * bps,
        })
        .collect())
}

pub fn crossover(input: &CostModelInput) -> Crossover {
    // 2bd + |θ| > |w| + |θ|  ⇔  b > |w| / 2d ;  bdN > N(|w| + |θ|)  ⇔  b > (|w| + |θ|) / d
    Crossover {
        worker: input.generator_params / (2 * input.data_dim) + 1,
        server: input.gan_params() / input.data_dim + 1,
    }
}

pub fn write_ingress_csv<W: Write>(points: &[IngressPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["batch", "flgan_worker", "flgan_server", "mdgan_worker", "mdgan_server"])?;
    for p in points {
        w.write_record([
            p.batch.to_string(),
            p.flgan_worker.to_string(),
            p.flgan_server.to_string(),
            p.mdgan_worker.to_string(),
            p.mdgan_server.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
