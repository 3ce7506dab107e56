mod common;

use common::*;
use mdgan::cluster::{ClassTotals, CrashSchedule, LinkClass};
use mdgan::cost::{
    analytic_costs, crossover, ingress_curve, predict_links, verify_ledger, CostModelInput, ProtocolKind,
};
use mdgan::Error;
use proptest::prelude::*;

#[test]
fn mdgan_ledger_matches_cost_model_with_one_swap() {
    let (ledger, inp) = mdgan_ledger(5, &CrashSchedule::default());
    let report = analytic_costs(&inp).unwrap();
    assert_eq!(report.mdgan.row("W->W (W)").unwrap().communications, 1);
    verify_ledger(&report, ProtocolKind::Mdgan, &ledger).unwrap();
    // hand-instantiated formulas: 2bdN and bdN scalars per iteration, N|θ| per swap
    assert_eq!(ledger.totals(LinkClass::ServerToWorker), ClassTotals { bytes: 5 * 2 * 4 * 2 * 3 * 4, messages: 15 });
    assert_eq!(ledger.totals(LinkClass::WorkerToServer), ClassTotals { bytes: 5 * 4 * 2 * 3 * 4, messages: 15 });
    assert_eq!(ledger.totals(LinkClass::WorkerToWorker), ClassTotals { bytes: 3 * 65 * 4, messages: 3 });
}

#[test]
fn mdgan_ledger_without_swap() {
    let (ledger, inp) = mdgan_ledger(4, &CrashSchedule::default());
    verify_ledger(&analytic_costs(&inp).unwrap(), ProtocolKind::Mdgan, &ledger).unwrap();
    assert_eq!(ledger.totals(LinkClass::WorkerToWorker), ClassTotals::default());
}

#[test]
fn crash_runs_match_the_alive_adjusted_prediction() {
    let crashes = CrashSchedule::new(vec![(2, 3), (1, 7)]).unwrap();
    let (ledger, inp) = mdgan_ledger(12, &crashes);
    let predicted = predict_links(ProtocolKind::Mdgan, &inp, &crashes).unwrap();
    mdgan::cost::verify_links(&predicted, &ledger).unwrap();
    // crash-free prediction must not match
    assert!(verify_ledger(&analytic_costs(&inp).unwrap(), ProtocolKind::Mdgan, &ledger).is_err());
}

#[test]
fn flgan_ledger_matches_cost_model_over_three_rounds() {
    let (ledger, inp) = flgan_ledger();
    verify_ledger(&analytic_costs(&inp).unwrap(), ProtocolKind::Flgan, &ledger).unwrap();
    let per_message = (82 + 65) * 4;
    let expected = ClassTotals { bytes: 3 * 2 * per_message, messages: 6 };
    assert_eq!(ledger.totals(LinkClass::WorkerToServer), expected);
    assert_eq!(ledger.totals(LinkClass::ServerToWorker), expected);
}

#[test]
fn off_by_one_ledger_is_reported() {
    let (mut ledger, inp) = mdgan_ledger(5, &CrashSchedule::default());
    ledger.totals_mut(LinkClass::WorkerToServer).bytes += 1;
    let err = verify_ledger(&analytic_costs(&inp).unwrap(), ProtocolKind::Mdgan, &ledger).unwrap_err();
    let Error::LedgerMismatch(msg) = err else { panic!("wrong error kind") };
    assert!(msg.contains("W->C"), "{msg}");
    assert!(msg.contains("predicted 480 B"), "{msg}");
    assert!(msg.contains("measured 481 B"), "{msg}");
    assert!(!msg.contains("C->W"));
}

#[test]
fn ledger_csv_round_trips_to_the_same_totals() {
    let (ledger, _) = mdgan_ledger(5, &CrashSchedule::default());
    let mut buf = Vec::new();
    ledger.write_csv(&mut buf).unwrap();
    let totals = mdgan::cluster::read_ledger_totals(buf.as_slice()).unwrap();
    for class in LinkClass::ALL {
        assert_eq!(totals.get(&class).copied().unwrap_or_default(), ledger.totals(class));
    }
}

fn arb_input() -> impl Strategy<Value = CostModelInput> {
    (1u64..50, 1u64..500, 1u64..4000, 1u64..2_000_000, 1u64..2_000_000, 0u64..100_000, 1u64..10_000, 1u64..5)
        .prop_map(|(n, b, d, g, t, i, m, e)| CostModelInput {
            workers: n,
            batch: b,
            data_dim: d,
            generator_params: g,
            discriminator_params: t,
            iterations: i,
            local_samples: m,
            epochs: e,
            k: 1,
            bytes_per_scalar: 4,
        })
}

proptest! {
    #[test]
    fn totals_are_per_communication_times_count(inp in arb_input()) {
        let report = analytic_costs(&inp).unwrap();
        for rows in [&report.flgan.rows, &report.mdgan.rows] {
            for r in rows {
                prop_assert_eq!(r.total_bytes, r.per_communication_bytes * r.communications);
                prop_assert_eq!(r.per_communication_bytes, r.per_communication_scalars * 4);
            }
        }
    }

    #[test]
    fn ingress_shapes(inp in arb_input()) {
        let batches: Vec<u64> = (1..=40).map(|b| b * 7).collect();
        let pts = ingress_curve(&inp, &batches).unwrap();
        prop_assert!(pts.iter().all(|p| p.flgan_worker == pts[0].flgan_worker && p.flgan_server == pts[0].flgan_server));
        prop_assert!(pts.windows(2).all(|w| w[1].mdgan_worker > w[0].mdgan_worker && w[1].mdgan_server > w[0].mdgan_server));
    }

    #[test]
    fn crossover_is_the_unique_switch_point(inp in arb_input()) {
        let c = crossover(&inp);
        let around: Vec<u64> = [c.worker.saturating_sub(1).max(1), c.worker, c.server.saturating_sub(1).max(1), c.server].to_vec();
        let pts = ingress_curve(&inp, &around).unwrap();
        for p in pts {
            prop_assert_eq!(p.mdgan_worker > p.flgan_worker, p.batch >= c.worker);
            prop_assert_eq!(p.mdgan_server > p.flgan_server, p.batch >= c.server);
        }
    }
}
