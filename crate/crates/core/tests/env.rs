mod common;

use approx::assert_relative_eq;
use common::*;
use proptest::prelude::*;
use sliceoff_core::env::{decode_action, ActionVector, OffloadEnv};
use sliceoff_core::model::SliceDecision;
use sliceoff_core::traffic::TrafficSeries;
use sliceoff_core::Error;

fn action(b: &[f64], x: &[f64], n_max: usize) -> ActionVector {
    let mut bf = vec![0.0; n_max];
    let mut xs = vec![0.0; n_max];
    bf[..b.len()].copy_from_slice(b);
    xs[..x.len()].copy_from_slice(x);
    ActionVector {
        bandwidth_fractions: bf,
        vm_selectors: xs,
    }
}

#[test]
fn reset_is_deterministic_per_seed() {
    let s = standard_scenario(2, 2);
    let t = constant_traffic(&s, 5);
    let mut a = OffloadEnv::new(s.clone(), t.clone(), decisions(&s, 9, 3)).unwrap();
    let mut b = OffloadEnv::new(s.clone(), t, decisions(&s, 9, 3)).unwrap();
    assert_eq!(a.reset(7).unwrap(), b.reset(7).unwrap());
    assert_ne!(a.reset(7).unwrap(), b.reset(8).unwrap());
}

#[test]
fn snapshot_is_zero_padded() {
    let s = standard_scenario(1, 1);
    let t = TrafficSeries::new(s.region_ids(), vec![vec![2], vec![0], vec![10]], 600.0).unwrap();
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 0, 0)).unwrap();
    let snap = env.reset(0).unwrap();
    assert_eq!(snap.user_count, 2);
    assert_eq!(snap.state_vector().len(), 33);
    assert!(snap.uplink_demand[..2].iter().all(|&x| x > 0.0));
    assert!(snap.uplink_demand[2..].iter().all(|&x| x == 0.0));
    assert!(snap.compute_demand[2..].iter().all(|&x| x == 0.0));
    assert!(snap.priorities[2..].iter().all(|&x| x == 0.0));
}

#[test]
fn traffic_above_n_max_is_rejected() {
    let s = standard_scenario(1, 1);
    let t = TrafficSeries::new(s.region_ids(), vec![vec![11], vec![0], vec![0]], 600.0).unwrap();
    assert!(matches!(OffloadEnv::new(s.clone(), t, decisions(&s, 0, 0)), Err(Error::Config(_))));
}

#[test]
fn decode_examples() {
    let s = pinned_scenario(1, 1);
    let t = constant_traffic(&s, 2);
    // 10 MHz, 6 VMs
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 9, 5)).unwrap();
    let snap = env.reset(0).unwrap();
    let alloc = decode_action(&action(&[0.8, 0.8], &[0.99, 1.0], 10), &snap);
    assert_relative_eq!(alloc.bandwidth_hz[0], 5e6, max_relative = 1e-12);
    assert_relative_eq!(alloc.bandwidth_hz[1], 5e6, max_relative = 1e-12);
    assert_eq!(alloc.vm_index, vec![5, 5]);
    let alloc = decode_action(&action(&[0.3, 0.2], &[0.0, 0.5], 10), &snap);
    assert_relative_eq!(alloc.bandwidth_hz[0], 3e6, max_relative = 1e-12);
    assert_relative_eq!(alloc.bandwidth_hz[1], 2e6, max_relative = 1e-12);
    assert_eq!(alloc.vm_index, vec![0, 3]);
}

#[test]
fn single_user_step_matches_chained_model() {
    let s = pinned_scenario(1, 1);
    let t = constant_traffic(&s, 1);
    // 16 MHz, 6 VMs
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 15, 5)).unwrap();
    env.reset(3).unwrap();
    let out = env.step(&action(&[1.0], &[0.0], 10)).unwrap();
    let rec = out.info.tasks[0];
    let up = 1.6e6 / (16e6 * 11f64.log2());
    assert_relative_eq!(rec.upload_s, up, max_relative = 1e-12);
    assert_relative_eq!(rec.upload_s, 0.0289, max_relative = 2e-3);
    assert_eq!(rec.queue_s, 0.0);
    assert_relative_eq!(rec.exec_s, 0.4, max_relative = 1e-12);
    assert_relative_eq!(rec.total_s, up + 0.4, max_relative = 1e-12);
    assert_eq!(out.reward, 2.0);
    assert!(out.done && out.next.is_none());
    assert!(matches!(env.step(&action(&[1.0], &[0.0], 10)), Err(Error::EpisodeFinished)));
}

#[test]
fn starved_upload_earns_nothing() {
    let s = pinned_scenario(1, 1);
    let t = constant_traffic(&s, 1);
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 15, 5)).unwrap();
    env.reset(0).unwrap();
    let out = env.step(&action(&[0.0], &[0.0], 10)).unwrap();
    assert!(out.info.tasks[0].total_s.is_infinite());
    assert_eq!(out.reward, 0.0);
    assert_eq!(out.info.violations, 1);
}

#[test]
fn shared_vm_queues_behind_first_user() {
    let s = pinned_scenario(1, 1);
    let t = constant_traffic(&s, 2);
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 15, 5)).unwrap();
    env.reset(0).unwrap();
    let out = env.step(&action(&[0.5, 0.5], &[0.1, 0.1], 10)).unwrap();
    let (a, b) = (out.info.tasks[0], out.info.tasks[1]);
    assert_eq!(a.queue_s, 0.0);
    assert_relative_eq!(b.queue_s, a.exec_s, max_relative = 1e-12);
    assert_relative_eq!(out.info.used_vm_s, 0.8, max_relative = 1e-12);
}

#[test]
fn slice_change_round_robin() {
    let s = pinned_scenario(2, 1);
    let t = constant_traffic(&s, 0);
    let cat = s.regions[0].catalog.clone();
    let six = SliceDecision::from_indices(&cat, 9, 5).unwrap();
    let three = SliceDecision::from_indices(&cat, 9, 2).unwrap();
    let mut env = OffloadEnv::new(s.clone(), t, vec![six.clone()]).unwrap();
    env.reset(0).unwrap();

    let backlog: Vec<Vec<f64>> = (0..6).map(|k| vec![1e12 + k as f64]).collect();
    env.set_backlog(0, backlog.clone()).unwrap();
    env.apply_slice_change(vec![six.clone()]).unwrap();
    assert_eq!(env.backlog(0), backlog);

    env.apply_slice_change(vec![three.clone()]).unwrap();
    let b = env.backlog(0);
    assert_eq!(b.len(), 3);
    assert!(b.iter().all(|q| q.len() == 2));
    assert_eq!(b[0], vec![1e12, 1e12 + 3.0]);

    let mut env = OffloadEnv::new(s.clone(), constant_traffic(&s, 0), vec![three]).unwrap();
    env.reset(0).unwrap();
    env.set_backlog(0, vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    env.apply_slice_change(vec![six]).unwrap();
    let b = env.backlog(0);
    assert_eq!(b, vec![vec![1.0], vec![2.0], vec![3.0], vec![], vec![], vec![]]);
}

#[test]
fn slice_change_mid_long_slot_is_rejected() {
    let s = pinned_scenario(1, 2);
    let t = constant_traffic(&s, 1);
    let d = decisions(&s, 9, 5);
    let mut env = OffloadEnv::new(s.clone(), t, d.clone()).unwrap();
    env.reset(0).unwrap();
    assert!(env.apply_slice_change(d.clone()).is_ok());
    env.step(&action(&[1.0], &[0.0], 10)).unwrap();
    assert!(matches!(env.apply_slice_change(d), Err(Error::Contract(_))));
}

#[test]
fn schedule_applies_at_boundaries() {
    let s = pinned_scenario(2, 2);
    let t = constant_traffic(&s, 1);
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 0, 0)).unwrap();
    env.set_schedule(vec![decisions(&s, 4, 1), decisions(&s, 9, 3)]).unwrap();
    let first = env.reset(0).unwrap();
    assert_eq!((first.rented_bandwidth_hz, first.rented_vm_count), (5e6, 2));
    let a = action(&[1.0], &[0.0], 10);
    let o = env.step(&a).unwrap();
    assert_eq!(o.next.unwrap().rented_vm_count, 2);
    let o = env.step(&a).unwrap();
    let snap = o.next.unwrap();
    assert_eq!((snap.long_slot, snap.rented_bandwidth_hz, snap.rented_vm_count), (1, 10e6, 4));
}

#[test]
fn trace_csv_lists_every_task() {
    let s = standard_scenario(1, 2);
    let t = constant_traffic(&s, 3);
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 5, 2)).unwrap();
    env.enable_trace();
    env.reset(1).unwrap();
    let a = action(&[0.3, 0.3, 0.0], &[0.1, 0.5, 0.9], 10);
    while !env.is_done() {
        env.step(&a).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    env.write_trace_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "day,long_slot,short_slot,region,user,upload_s,queue_s,exec_s,total_s,revenue"
    );
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 3 * 3 * 2);
    assert!(rows.iter().any(|r| r.contains(",inf,")));
}

fn run_episode(seed: u64, actions: &[Vec<f64>]) -> Vec<f64> {
    let s = standard_scenario(2, 2);
    let t = TrafficSeries::new(
        s.region_ids(),
        vec![vec![3, 10, 0, 7], vec![1, 2, 3, 4], vec![9, 9, 1, 5]],
        600.0,
    )
    .unwrap();
    let mut env = OffloadEnv::new(s.clone(), t, decisions(&s, 7, 3)).unwrap();
    env.reset(seed).unwrap();
    let mut rewards = Vec::new();
    let mut k = 0;
    while !env.is_done() {
        let a = ActionVector::from_flat(&actions[k % actions.len()]).unwrap();
        let out = env.step(&a).unwrap();
        let info = &out.info;
        // C4 and C5 after decoding
        let total_bw: f64 = info.tasks.iter().map(|t| t.bandwidth_hz).sum();
        assert!(total_bw <= info.rented_bandwidth_hz + 1e-9);
        assert!(info.tasks.iter().all(|t| t.vm < info.rented_vm_count as usize));
        // reward recomputed from the record
        let recomputed: f64 = info
            .tasks
            .iter()
            .filter(|t| t.total_s <= 1.0)
            .map(|t| f64::from(t.priority))
            .sum();
        assert_eq!(out.reward, recomputed);
        assert!(info.used_vm_s <= f64::from(info.rented_vm_count) * 600.0 + 1e-9);
        assert!(info.used_bandwidth_s <= info.rented_bandwidth_hz * 600.0 + 1e-6);
        rewards.push(out.reward);
        k += 1;
    }
    assert_eq!(rewards.len(), 12);
    rewards
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn random_actions_respect_constraints_and_replay(
        seed in 0u64..1000,
        actions in prop::collection::vec(prop::collection::vec(-0.2f64..1.2, 20), 1..6),
    ) {
        let a = run_episode(seed, &actions);
        let b = run_episode(seed, &actions);
        prop_assert_eq!(a, b);
    }
}
