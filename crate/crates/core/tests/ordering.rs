mod common;

use std::sync::Arc;

use common::{args, counter_network};
use ledgerci::canonical::Digest;
use ledgerci::chaincode::invoke_contract;
use ledgerci::identity::{generate_org_materials, Role};
use ledgerci::ledger::{Endorsement, Transaction, ValidationCode, Version, WriteEntry};
use ledgerci::ordering::{endorse_proposal, join_channel, ChannelError, EndorseError, Network, NetworkConfig, Peer};

const CH: &str = "cicd";

fn net() -> Network {
    counter_network(NetworkConfig::default())
}

#[test]
fn in_sync_peers_endorse_identically() {
    let net = net();
    let client = net.client_of("Org1").unwrap().clone();
    let endorsers = net.endorsers();
    assert_eq!(endorsers.len(), 2);
    let proposal = invoke_contract(endorsers[0], CH, "counter", "incr", &args(&["a"]), &client, [1; 16]).unwrap();
    let endorsed = endorse_proposal(&proposal, &endorsers).unwrap();
    assert_eq!(endorsed.transaction.endorsements.len(), 2);
    assert!(endorsed.transaction.is_well_formed());
}

#[test]
fn tampered_peer_breaks_endorsement() {
    let net = net();
    let client = net.client_of("Org1").unwrap().clone();
    let mut tampered = net.endorsers()[1].clone();
    tampered
        .replica_mut_for_tests(CH)
        .unwrap()
        .chain
        .state_mut_for_tests()
        .apply_writes(
            &[WriteEntry {
                key: "count/a".into(),
                value: Some(b"41".to_vec()),
            }],
            Version::new(1, 0),
        );
    let honest = net.endorsers()[0];
    let proposal = invoke_contract(honest, CH, "counter", "incr", &args(&["a"]), &client, [2; 16]).unwrap();
    match endorse_proposal(&proposal, &[honest, &tampered]) {
        Err(EndorseError::EndorsementMismatch { peer }) => assert_eq!(peer, tampered.name()),
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn offline_peer_is_unavailable() {
    let net = net();
    let client = net.client_of("Org1").unwrap().clone();
    let honest = net.endorsers()[0];
    let mut down = net.endorsers()[1].clone();
    down.set_online(false);
    let proposal = invoke_contract(honest, CH, "counter", "incr", &args(&["a"]), &client, [3; 16]).unwrap();
    assert!(matches!(
        endorse_proposal(&proposal, &[honest, &down]),
        Err(EndorseError::PeerUnavailable(_))
    ));
}

#[test]
fn intra_block_mvcc_conflict() {
    let mut net = net();
    let c = net.client_of("Org1").unwrap().key_id;
    let first = net.propose(&c, "counter", "incr", &args(&["k"])).unwrap();
    let second = net.propose(&c, "counter", "incr", &args(&["k"])).unwrap();
    let other_key = net.propose(&c, "counter", "incr", &args(&["other"])).unwrap();
    let outcomes = net.order(vec![first, second, other_key]).unwrap();
    let codes: Vec<ValidationCode> = outcomes.iter().map(|o| o.code).collect();
    assert_eq!(
        codes,
        vec![
            ValidationCode::Valid,
            ValidationCode::MvccConflict,
            ValidationCode::Valid
        ]
    );
    assert!(outcomes.iter().all(|o| o.height == outcomes[0].height));
    assert_eq!(net.query(&c, "counter", "get", &args(&["k"])).unwrap(), b"1");
}

#[test]
fn replayed_transaction_is_duplicate() {
    let mut net = net();
    let c = net.client_of("Org1").unwrap().key_id;
    let outcome = net.submit(&c, "counter", "incr", &args(&["r"])).unwrap();
    assert!(outcome.is_valid());
    let tx = net.blocks().unwrap()[outcome.height as usize].transactions[outcome.index as usize].clone();
    let state_before = net.reference_peer().unwrap().chain(CH).unwrap().state().digest();
    let replay = net.order_raw(vec![tx.clone(), tx]).unwrap();
    assert_eq!(replay[0].code, ValidationCode::DuplicateTxId);
    assert_eq!(replay[1].code, ValidationCode::DuplicateTxId);
    let state_after = net.reference_peer().unwrap().chain(CH).unwrap().state().digest();
    assert_eq!(state_before, state_after);
}

#[test]
fn foreign_and_partial_endorsements() {
    let mut net = net();
    let client = net.client_of("Org1").unwrap().clone();
    let org1 = net.endorsers()[0].clone();
    let proposal = invoke_contract(&org1, CH, "counter", "incr", &args(&["f"]), &client, [9; 16]).unwrap();
    let endorsed = endorse_proposal(&proposal, &[&org1]).unwrap();

    // a peer of an org outside the channel signs the payload
    let outsider = generate_org_materials("Mallory", 1, 0, false, &[9; 32]).unwrap();
    let cert = outsider.by_role(Role::Peer).next().unwrap().clone();
    let fresh = |nonce: u8| {
        let p = invoke_contract(&org1, CH, "counter", "incr", &args(&["g"]), &client, [nonce; 16]).unwrap();
        endorse_proposal(&p, &[&org1]).unwrap().transaction
    };
    let forge = |tx: &Transaction| Endorsement {
        key_id: cert.key_id(),
        signature: outsider.sign(&cert.key_id(), &tx.endorsement_payload()).unwrap(),
    };
    let mut only_foreign = fresh(20);
    only_foreign.endorsements = vec![forge(&only_foreign)];
    let mut mixed = fresh(21);
    let extra = forge(&mixed);
    mixed.endorsements.push(extra);
    // a corrupted signature from a member peer
    let mut bad_sig = fresh(22);
    bad_sig.endorsements[0].signature[0] ^= 1;

    let outcomes = net.order_raw(vec![only_foreign, mixed, bad_sig]).unwrap();
    assert!(outcomes.iter().all(|o| o.code == ValidationCode::BadSignature));

    // one valid endorsement satisfies OutOf(1, ..) but not the builtin majority of two
    let ok = net.order_raw(vec![endorsed.transaction]).unwrap();
    assert_eq!(ok[0].code, ValidationCode::Valid);
    let digest = Digest::of(b"x").to_hex();
    let src = Digest::of(b"s").to_hex();
    let org1 = net.endorsers()[0].clone();
    let proposal = invoke_contract(
        &org1,
        CH,
        "provenance",
        "register",
        &args(&[&digest, "a", "1", &src]),
        &client,
        [10; 16],
    )
    .unwrap();
    let partial = endorse_proposal(&proposal, &[&org1]).unwrap();
    let outcome = net.order_raw(vec![partial.transaction]).unwrap();
    assert_eq!(outcome[0].code, ValidationCode::PolicyFail);
}

fn fresh_peer(net: &Network, org: &str, index: usize) -> Peer {
    let m = net.org(org).unwrap();
    let cert = m.by_role(Role::Peer).nth(index).unwrap().clone();
    let key = m.signing_key(&cert.key_id()).unwrap().clone();
    Peer::new(cert, key, Arc::new(net.msp().clone()), net.acl().clone())
}

#[test]
fn late_join_replays_to_same_state() {
    let mut net = net();
    let c = net.client_of("Org2").unwrap().key_id;
    for i in 0..5 {
        net.submit(&c, "counter", "incr", &args(&[&i.to_string()])).unwrap();
    }
    let blocks = net.blocks().unwrap().to_vec();
    assert!(blocks.len() >= 7);
    let expected = net.reference_peer().unwrap().chain(CH).unwrap().state().digest();

    let admin = net.admin_of("Org2").unwrap().clone();
    let mut joiner = fresh_peer(&net, "Org2", 1);
    let digest = join_channel(&mut joiner, &admin, CH, &blocks).unwrap();
    assert_eq!(digest, expected);
    assert_eq!(joiner.chain(CH).unwrap().tip_hash(), blocks.last().unwrap().block_hash);

    let mut other = fresh_peer(&net, "Org1", 1);
    assert!(matches!(
        join_channel(&mut other, &admin, "nope", &[]),
        Err(ChannelError::UnknownChannel(_))
    ));
    let client = net.client_of("Org1").unwrap().clone();
    assert!(matches!(
        join_channel(&mut other, &client, CH, &blocks),
        Err(ChannelError::PermissionDenied { .. })
    ));
}

#[test]
fn join_rejects_altered_history() {
    let mut net = net();
    let c = net.client_of("Org1").unwrap().key_id;
    net.submit(&c, "counter", "incr", &args(&["z"])).unwrap();
    let mut blocks = net.blocks().unwrap().to_vec();
    let last = blocks.len() - 1;
    // claim an MVCC-invalid flag for a valid transaction and reseal
    let b = &blocks[last];
    let mut flags = b.validation_flags.clone();
    flags[0] = ValidationCode::MvccConflict;
    blocks[last] = ledgerci::ledger::Block::seal(b.height, b.prev_hash, b.transactions.clone(), flags);
    let admin = net.admin_of("Org1").unwrap().clone();
    let mut joiner = fresh_peer(&net, "Org1", 1);
    assert!(matches!(
        join_channel(&mut joiner, &admin, CH, &blocks),
        Err(ChannelError::ReplayDiverged { .. })
    ));
    assert!(joiner.chain(CH).is_none());
}

#[test]
fn offline_peer_catches_up() {
    let mut net = net();
    let c = net.client_of("Org1").unwrap().key_id;
    net.peer_mut("peer1.Org2").unwrap().set_online(false);
    for i in 0..3 {
        net.submit(&c, "counter", "incr", &args(&[&i.to_string()])).unwrap();
    }
    assert!(net.converged());
    let lagging = net.peer("peer1.Org2").unwrap().chain(CH).unwrap().next_height();
    assert!(lagging < net.blocks().unwrap().len() as u64);
    net.reconnect("peer1.Org2").unwrap();
    assert!(net.converged());
}

#[test]
fn unknown_malformed_rejected_by_orderer() {
    let mut net = net();
    let c = net.client_of("Org1").unwrap().key_id;
    let endorsed = net.propose(&c, "counter", "incr", &args(&["m"])).unwrap();
    let mut tx: Transaction = endorsed.transaction;
    tx.args.push("extra".into());
    assert!(net.order_raw(vec![tx]).is_err());
}
