#![allow(dead_code)]

pub mod oracles;

use std::sync::Arc;

use ledgerci::chaincode::{Contract, ContractError, FunctionSpec, InvocationContext};
use ledgerci::ordering::{EndorsementPolicy, Network, NetworkConfig};

pub fn args(a: &[&str]) -> Vec<String> {
    a.iter().map(|s| s.to_string()).collect()
}

/// `incr(k)` adds one to `count/<k>`; `get(k)` reads it.
pub struct Counter;

const COUNTER_FNS: &[FunctionSpec] = &[FunctionSpec::write("incr"), FunctionSpec::read("get")];

impl Contract for Counter {
    fn name(&self) -> &str {
        "counter"
    }
    fn version(&self) -> &str {
        "1"
    }
    fn functions(&self) -> &[FunctionSpec] {
        COUNTER_FNS
    }
    fn call(&self, function: &str, args: &[String], ctx: &mut InvocationContext<'_>) -> Result<Vec<u8>, ContractError> {
        let [name] = args else {
            return Err(ContractError::BadArguments("expected one key".into()));
        };
        let key = format!("count/{name}");
        let current = ctx
            .get_state(&key)
            .map(|b| String::from_utf8(b).unwrap().parse::<u64>().unwrap())
            .unwrap_or(0);
        if function == "incr" {
            ctx.put_state(&key, (current + 1).to_string().into_bytes());
        }
        Ok(current.to_string().into_bytes())
    }
}

/// Default two-org network with the counter contract active under
/// `OutOf(1,[Org1,Org2])`.
pub fn counter_network(config: NetworkConfig) -> Network {
    let mut net = Network::bootstrap(config).unwrap();
    net.install(Arc::new(Counter)).unwrap();
    let admin = net.admin_of("Org1").unwrap().key_id;
    let orgs = net.config().orgs.clone();
    net.init_contract(&admin, "counter", "1", &EndorsementPolicy::out_of_orgs(1, &orgs))
        .unwrap();
    net
}

/// Submit `keys` as counter increments, grouped into batches endorsed
/// against the same snapshot. Returns the number of Valid commits.
pub fn run_counter_batches(net: &mut Network, batches: &[Vec<u8>]) -> usize {
    let clients = [
        net.client_of("Org1").unwrap().key_id,
        net.client_of("Org2").unwrap().key_id,
    ];
    let mut valid = 0;
    for (b, batch) in batches.iter().enumerate() {
        let endorsed = batch
            .iter()
            .enumerate()
            .map(|(i, k)| {
                net.propose(&clients[(b + i) % 2], "counter", "incr", &args(&[&k.to_string()]))
                    .unwrap()
            })
            .collect();
        valid += net.order(endorsed).unwrap().iter().filter(|o| o.is_valid()).count();
    }
    valid
}

/// Re-execute the committed Valid counter transactions one at a time, in
/// chain order, against an empty map.
pub fn serial_replay(net: &Network) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut state = std::collections::BTreeMap::<String, u64>::new();
    for block in net.blocks().unwrap() {
        for (_, tx) in block.valid_transactions() {
            if tx.contract == "counter" && tx.function == "incr" {
                *state.entry(format!("count/{}", tx.args[0])).or_default() += 1;
            }
        }
    }
    state
        .into_iter()
        .map(|(k, v)| (k, v.to_string().into_bytes()))
        .collect()
}

/// `count/*` entries of the reference peer's world state.
pub fn committed_counts(net: &Network) -> std::collections::BTreeMap<String, Vec<u8>> {
    let peer = net.reference_peer().unwrap();
    peer.chain(&net.config().channel)
        .unwrap()
        .state()
        .scan_prefix("count/")
        .map(|(k, e)| (k.clone(), e.value.clone()))
        .collect()
}
