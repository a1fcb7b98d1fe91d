mod common;

use std::collections::BTreeSet;

use common::{args, counter_network};
use ledgerci::ordering::{run_simnet, EventKind, Network, NetworkConfig, Partition, Ratio, SimNetConfig, WorkItem};

fn workload(net: &Network, n: usize) -> Vec<WorkItem> {
    let c1 = net.client_of("Org1").unwrap().key_id;
    let c2 = net.client_of("Org2").unwrap().key_id;
    (0..n)
        .map(|i| WorkItem {
            creator: if i % 2 == 0 { c1 } else { c2 },
            contract: "counter".into(),
            function: "incr".into(),
            args: args(&[&(i % 5).to_string()]),
        })
        .collect()
}

fn config(seed: u64, drop: Ratio) -> SimNetConfig {
    SimNetConfig {
        seed,
        drop_probability: drop,
        ..SimNetConfig::default()
    }
}

#[test]
fn lossless_run_converges() {
    let net = counter_network(NetworkConfig::default());
    let work = workload(&net, 20);
    let out = run_simnet(&net, &config(1, Ratio::ZERO), &work).unwrap();
    assert_eq!(out.peers.len(), 4);
    assert!(out.converged(None));
    assert!(out.abandoned.is_empty());
    assert!(out.events.iter().all(|e| e.kind != EventKind::Drop));
    assert_eq!(out.tip_hashes().values().collect::<BTreeSet<_>>().len(), 1);
    // the input network is untouched
    assert_eq!(net.blocks().unwrap().len(), 3);
}

#[test]
fn same_seed_same_log() {
    let net = counter_network(NetworkConfig::default());
    let work = workload(&net, 20);
    let cfg = config(42, Ratio::new(1, 5));
    let a = run_simnet(&net, &cfg, &work).unwrap();
    let b = run_simnet(&net, &cfg, &work).unwrap();
    assert_eq!(a.event_log(), b.event_log());
    assert_eq!(a.tip_hashes(), b.tip_hashes());
    let c = run_simnet(&net, &config(43, Ratio::new(1, 5)), &work).unwrap();
    assert_ne!(a.event_log(), c.event_log());
}

#[test]
fn lossy_runs_converge_and_take_longer() {
    let net = counter_network(NetworkConfig::default());
    let work = workload(&net, 20);
    for seed in 0..10 {
        let clean = run_simnet(&net, &config(seed, Ratio::ZERO), &work).unwrap();
        let lossy = run_simnet(&net, &config(seed, Ratio::new(1, 5)), &work).unwrap();
        assert!(lossy.converged(None), "seed {seed}");
        assert!(lossy.events.iter().any(|e| e.kind == EventKind::Drop), "seed {seed}");
        assert!(lossy.end_time >= clean.end_time, "seed {seed}");
    }
}

#[test]
fn healed_partition_converges() {
    let net = counter_network(NetworkConfig::default());
    let work = workload(&net, 10);
    let mut cfg = config(7, Ratio::ZERO);
    cfg.partitions = vec![Partition {
        side_a: BTreeSet::from(["peer1.Org2".to_string()]),
        side_b: BTreeSet::from(["orderer.Org1".to_string()]),
        heal_at: Some(200),
    }];
    let out = run_simnet(&net, &cfg, &work).unwrap();
    assert!(out.converged(None));
}

#[test]
fn permanent_partition_isolates_one_peer() {
    let net = counter_network(NetworkConfig::default());
    let work = workload(&net, 10);
    let mut cfg = config(7, Ratio::ZERO);
    cfg.partitions = vec![Partition {
        side_a: BTreeSet::from(["peer1.Org2".to_string()]),
        side_b: BTreeSet::from(["orderer.Org1".to_string()]),
        heal_at: None,
    }];
    let out = run_simnet(&net, &cfg, &work).unwrap();
    let rest: BTreeSet<String> = out
        .peers
        .iter()
        .map(|p| p.name().to_string())
        .filter(|n| n != "peer1.Org2")
        .collect();
    assert!(out.converged(Some(&rest)));
    assert!(!out.converged(None));
}

#[test]
fn log_is_jsonl() {
    let net = counter_network(NetworkConfig::default());
    let out = run_simnet(&net, &config(3, Ratio::new(1, 10)), &workload(&net, 4)).unwrap();
    let log = String::from_utf8(out.event_log()).unwrap();
    for (i, line) in log.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["seq"], i as u64);
        for field in ["time", "kind", "from", "to", "type", "detail"] {
            assert!(v.get(field).is_some(), "{field}");
        }
    }
    assert!(run_simnet(&net, &config(3, Ratio::new(3, 2)), &[]).is_err());
}
