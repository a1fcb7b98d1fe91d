use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    catch_up, create_channel, endorse_proposal, join_channel, validate_and_commit, BlockCutConfig, ChannelError,
    CommitError, EndorseError, EndorsedTransaction, EndorsementPolicy, OrderError, Orderer, Peer,
};
use crate::canonical::{to_canonical, Digest};
use crate::chaincode::{
    builtin_contracts, install_contract, invoke_contract, query_contract, ChaincodeError, ChannelConfig, Contract,
    LIFECYCLE_CONTRACT, REPORTS_COLLECTION,
};
use crate::identity::{generate_org_materials, AclPolicy, Identity, IdentityError, KeyId, Msp, OrgMaterials, Role};
use crate::ledger::{Block, LedgerStore, PrivateStore, StoreError, ValidationCode};

/// Shape of a desk-scale network. Org keys derive from `seed`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub channel: String,
    pub orgs: Vec<String>,
    pub peers_per_org: u32,
    pub clients_per_org: u32,
    #[serde(with = "hex::serde")]
    pub seed: [u8; 32],
    pub block_cut: BlockCutConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            channel: "cicd".to_string(),
            orgs: vec!["Org1".to_string(), "Org2".to_string()],
            peers_per_org: 2,
            clients_per_org: 1,
            seed: [0; 32],
            block_cut: BlockCutConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("network config: {0}")]
    Config(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Chaincode(#[from] ChaincodeError),
    #[error(transparent)]
    Endorse(#[from] EndorseError),
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error(transparent)]
    Commit(#[from] CommitError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("no identity with key id {0}")]
    UnknownIdentity(KeyId),
    #[error("no org named {0}")]
    UnknownOrg(String),
    #[error("no peer named {0}")]
    UnknownPeer(String),
    #[error("no peer is online")]
    NoPeerOnline,
    #[error("transaction {tx_id} committed as {code}")]
    Rejected { tx_id: Digest, code: ValidationCode },
    #[error("workspace is inconsistent: {0}")]
    Corrupt(String),
}

/// Where one submitted transaction ended up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutcome {
    pub tx_id: Digest,
    pub height: u64,
    pub index: u32,
    pub code: ValidationCode,
    #[serde(skip)]
    pub response: Vec<u8>,
}

impl TxOutcome {
    pub fn is_valid(&self) -> bool {
        self.code == ValidationCode::Valid
    }

    pub fn require_valid(self) -> Result<Self, NetworkError> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(NetworkError::Rejected {
                tx_id: self.tx_id,
                code: self.code,
            })
        }
    }
}

/// A synchronous in-process network: every submit is executed, endorsed by
/// one online peer per org, ordered and committed on all online peers before
/// returning.
pub struct Network {
    config: NetworkConfig,
    materials: Vec<OrgMaterials>,
    msp: Arc<Msp>,
    acl: AclPolicy,
    peers: Vec<Peer>,
    orderer: Orderer,
    store: Option<LedgerStore>,
    nonce_counter: u64,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("config", &self.config)
            .field("peers", &self.peers)
            .finish_non_exhaustive()
    }
}

pub fn channel_config_for(config: &NetworkConfig) -> ChannelConfig {
    let reports_readers: BTreeSet<String> = config.orgs.iter().take(1).cloned().collect();
    ChannelConfig {
        name: config.channel.clone(),
        orgs: config.orgs.iter().cloned().collect(),
        lifecycle_policy: EndorsementPolicy::majority(&config.orgs),
        collections: BTreeMap::from([(REPORTS_COLLECTION.to_string(), reports_readers)]),
    }
}

pub fn generate_materials(config: &NetworkConfig) -> Result<Vec<OrgMaterials>, NetworkError> {
    config
        .orgs
        .iter()
        .enumerate()
        .map(|(i, org)| {
            generate_org_materials(
                org,
                config.peers_per_org as usize,
                config.clients_per_org as usize,
                i == 0,
                &config.seed,
            )
            .map_err(NetworkError::from)
        })
        .collect()
}

impl Network {
    fn assemble(config: NetworkConfig, materials: Vec<OrgMaterials>, next_height: u64) -> Result<Self, NetworkError> {
        if config.orgs.is_empty() {
            return Err(NetworkError::Config("at least one org is required".into()));
        }
        if config.block_cut.max_tx_per_block == 0 {
            return Err(NetworkError::Config("max_tx_per_block must be at least 1".into()));
        }
        let msp = Arc::new(Msp::from_materials(&materials));
        let acl = AclPolicy::default_policy();
        let mut peers = Vec::new();
        for m in &materials {
            for cert in m.by_role(Role::Peer) {
                let key = m.signing_key(&cert.key_id())?.clone();
                peers.push(Peer::new(cert.clone(), key, msp.clone(), acl.clone()));
            }
        }
        let orderer_id = materials[0]
            .by_role(Role::Orderer)
            .next()
            .ok_or_else(|| NetworkError::Config("first org carries no orderer identity".into()))?
            .identity
            .clone();
        let orderer = Orderer::new(&orderer_id, &acl, &config.channel, next_height, config.block_cut)?;
        let mut net = Network {
            config,
            materials,
            msp,
            acl,
            peers,
            orderer,
            store: None,
            nonce_counter: 0,
        };
        for contract in builtin_contracts() {
            net.install(contract)?;
        }
        Ok(net)
    }

    /// Fresh network: keys, genesis, every peer joined, built-in contracts
    /// installed and initialized with a majority-of-orgs policy.
    pub fn bootstrap(config: NetworkConfig) -> Result<Self, NetworkError> {
        let materials = generate_materials(&config)?;
        let mut net = Network::assemble(config, materials, 1)?;
        let genesis = create_channel(
            &net.acl,
            &net.materials[0].admin().identity,
            &channel_config_for(&net.config),
        )?;
        for i in 0..net.peers.len() {
            let admin = net.admin_of(net.peers[i].org())?.clone();
            join_channel(
                &mut net.peers[i],
                &admin,
                &net.config.channel,
                std::slice::from_ref(&genesis),
            )?;
        }
        let policy = EndorsementPolicy::majority(&net.config.orgs);
        let admin = net.materials[0].admin().key_id();
        let mut batch = Vec::new();
        for contract in builtin_contracts() {
            batch.push(net.propose_init(&admin, contract.name(), contract.version(), &policy)?);
        }
        for outcome in net.order(batch)? {
            outcome.require_valid()?;
        }
        Ok(net)
    }

    /// Rebuild a network from persisted keys and blocks. Every peer replays
    /// and re-validates the whole chain.
    pub fn restore(
        config: NetworkConfig,
        materials: Vec<OrgMaterials>,
        blocks: &[Block],
        private: &PrivateStore,
    ) -> Result<Self, NetworkError> {
        let mut net = Network::assemble(config, materials, blocks.len() as u64)?;
        for i in 0..net.peers.len() {
            let admin = net.admin_of(net.peers[i].org())?.clone();
            join_channel(&mut net.peers[i], &admin, &net.config.channel, blocks)?;
        }
        let channel = net.config.channel.clone();
        for peer in &mut net.peers {
            let org = peer.org().to_string();
            let replica = peer.channels.get_mut(&channel).expect("joined above");
            for (name, collection) in private.collections() {
                if !replica.private.is_reader(name, &org) {
                    continue;
                }
                for (key, blob) in &collection.entries {
                    if replica.chain.private_hash(name, key) != Some(Digest::of(&blob.0)) {
                        return Err(NetworkError::Corrupt(format!(
                            "private value {name}/{key} does not match its on-chain hash"
                        )));
                    }
                    replica.private.put(name, key, &blob.0).expect("declared at genesis");
                }
            }
        }
        Ok(net)
    }

    /// Persist every block so far and keep persisting after each commit.
    pub fn attach_store(&mut self, ledger_root: &Path) -> Result<(), NetworkError> {
        let store = LedgerStore::new(ledger_root, &self.config.channel);
        let reference = self.reference_peer()?;
        let replica = reference.replica(&self.config.channel).expect("joined");
        let existing = store.read_block_files()?.len() as u64;
        for block in replica.chain.blocks().iter().skip(existing as usize) {
            store.write_block(block)?;
        }
        store.write_state(replica.chain.state())?;
        store.write_private(&replica.private)?;
        self.store = Some(store);
        Ok(())
    }

    fn persist(&self, blocks: &[Block]) -> Result<(), NetworkError> {
        let Some(store) = &self.store else {
            return Ok(());
        };
        let replica = self.reference_peer()?.replica(&self.config.channel).expect("joined");
        for block in blocks {
            store.write_block(block)?;
        }
        store.write_state(replica.chain.state())?;
        store.write_private(&replica.private)?;
        Ok(())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn channel(&self) -> &str {
        &self.config.channel
    }

    pub fn msp(&self) -> &Msp {
        &self.msp
    }

    pub fn acl(&self) -> &AclPolicy {
        &self.acl
    }

    pub fn materials(&self) -> &[OrgMaterials] {
        &self.materials
    }

    pub fn org(&self, org: &str) -> Result<&OrgMaterials, NetworkError> {
        self.materials
            .iter()
            .find(|m| m.org == org)
            .ok_or_else(|| NetworkError::UnknownOrg(org.to_string()))
    }

    pub fn admin_of(&self, org: &str) -> Result<&Identity, NetworkError> {
        Ok(&self.org(org)?.admin().identity)
    }

    /// First client identity of `org`.
    pub fn client_of(&self, org: &str) -> Result<&Identity, NetworkError> {
        self.org(org)?
            .by_role(Role::Client)
            .next()
            .map(|c| &c.identity)
            .ok_or_else(|| NetworkError::Config(format!("{org} has no client identity")))
    }

    pub fn identity(&self, key_id: &KeyId) -> Result<&Identity, NetworkError> {
        self.msp.identity(key_id).ok_or(NetworkError::UnknownIdentity(*key_id))
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    pub fn peer(&self, name: &str) -> Result<&Peer, NetworkError> {
        self.peers
            .iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| NetworkError::UnknownPeer(name.to_string()))
    }

    pub fn peer_mut(&mut self, name: &str) -> Result<&mut Peer, NetworkError> {
        self.peers
            .iter_mut()
            .find(|p| p.name() == name)
            .ok_or_else(|| NetworkError::UnknownPeer(name.to_string()))
    }

    pub fn orderer(&self) -> &Orderer {
        &self.orderer
    }

    /// The first online peer; queries and persistence use its replica.
    pub fn reference_peer(&self) -> Result<&Peer, NetworkError> {
        self.peers
            .iter()
            .find(|p| p.is_online())
            .ok_or(NetworkError::NoPeerOnline)
    }

    pub fn blocks(&self) -> Result<&[Block], NetworkError> {
        Ok(self
            .reference_peer()?
            .chain(&self.config.channel)
            .expect("joined")
            .blocks())
    }

    /// One online peer per channel org, in org order.
    pub fn endorsers(&self) -> Vec<&Peer> {
        self.config
            .orgs
            .iter()
            .filter_map(|org| self.peers.iter().find(|p| p.org() == org && p.is_online()))
            .collect()
    }

    /// Install on every peer, each org's admin acting for its peers.
    pub fn install(&mut self, contract: Arc<dyn Contract>) -> Result<Digest, NetworkError> {
        let mut id = None;
        for i in 0..self.peers.len() {
            let admin = self.admin_of(self.peers[i].org())?.clone();
            id = Some(install_contract(&mut self.peers[i], &admin, contract.clone())?);
        }
        id.ok_or_else(|| NetworkError::Config("network has no peers".into()))
    }

    fn next_nonce(&mut self, creator: &KeyId) -> [u8; 16] {
        let tip = self
            .reference_peer()
            .ok()
            .and_then(|p| p.chain(&self.config.channel))
            .map(|c| c.tip_hash())
            .unwrap_or(Digest::ZERO);
        self.nonce_counter += 1;
        let mut input = Vec::with_capacity(32 + 32 + 8);
        input.extend_from_slice(tip.as_bytes());
        input.extend_from_slice(creator.as_bytes());
        input.extend_from_slice(&self.nonce_counter.to_be_bytes());
        let digest = Digest::of(&input);
        let mut nonce = [0; 16];
        nonce.copy_from_slice(&digest.as_bytes()[..16]);
        nonce
    }

    /// Execute on the first endorser and collect endorsements from all.
    pub fn propose(
        &mut self,
        creator: &KeyId,
        contract: &str,
        function: &str,
        args: &[String],
    ) -> Result<EndorsedTransaction, NetworkError> {
        let nonce = self.next_nonce(creator);
        let identity = self.identity(creator)?.clone();
        let endorsers = self.endorsers();
        let first = endorsers.first().ok_or(NetworkError::NoPeerOnline)?;
        let proposal = invoke_contract(first, &self.config.channel, contract, function, args, &identity, nonce)?;
        Ok(endorse_proposal(&proposal, &endorsers)?)
    }

    fn propose_init(
        &mut self,
        admin: &KeyId,
        name: &str,
        version: &str,
        policy: &EndorsementPolicy,
    ) -> Result<EndorsedTransaction, NetworkError> {
        let package_id = self
            .reference_peer()?
            .installed(name, version)
            .map(|i| i.package.package_id)
            .ok_or_else(|| ChaincodeError::NotInstalled(name.to_string()))?;
        let policy_json = String::from_utf8(to_canonical(policy).expect("policy encodes canonically"))
            .expect("canonical JSON is UTF-8");
        let args = [name.to_string(), version.to_string(), package_id.to_hex(), policy_json];
        self.propose(admin, LIFECYCLE_CONTRACT, "init", &args)
    }

    /// Activate an installed contract on the channel.
    pub fn init_contract(
        &mut self,
        admin: &KeyId,
        name: &str,
        version: &str,
        policy: &EndorsementPolicy,
    ) -> Result<TxOutcome, NetworkError> {
        policy
            .check()
            .map_err(|e| NetworkError::Config(format!("bad policy: {e}")))?;
        let endorsed = self.propose_init(admin, name, version, policy)?;
        let outcome = self.order(vec![endorsed])?.remove(0);
        outcome.require_valid()
    }

    /// Broadcast, cut everything pending into blocks and commit them on all
    /// online peers.
    pub fn order(&mut self, batch: Vec<EndorsedTransaction>) -> Result<Vec<TxOutcome>, NetworkError> {
        let mut responses = BTreeMap::new();
        for endorsed in batch {
            let tx_id = endorsed.transaction.tx_id;
            self.orderer.broadcast(endorsed.transaction, 0)?;
            for peer in &mut self.peers {
                peer.receive_private(tx_id, &endorsed.private_values);
            }
            responses.entry(tx_id).or_insert(endorsed.response);
        }
        let proposals = self.orderer.flush();
        self.commit_proposals(proposals, &responses)
    }

    /// Order raw transactions as they are, bypassing execution. Used to
    /// replay or forge submissions.
    pub fn order_raw(&mut self, txs: Vec<crate::ledger::Transaction>) -> Result<Vec<TxOutcome>, NetworkError> {
        for tx in txs {
            self.orderer.broadcast(tx, 0)?;
        }
        let proposals = self.orderer.flush();
        self.commit_proposals(proposals, &BTreeMap::new())
    }

    fn commit_proposals(
        &mut self,
        proposals: Vec<super::BlockProposal>,
        responses: &BTreeMap<Digest, Vec<u8>>,
    ) -> Result<Vec<TxOutcome>, NetworkError> {
        let mut outcomes = Vec::new();
        let mut committed = Vec::new();
        for proposal in proposals {
            let mut reference: Option<Block> = None;
            for peer in self.peers.iter_mut().filter(|p| p.is_online()) {
                let block = validate_and_commit(peer, &proposal)?;
                reference.get_or_insert(block);
            }
            let block = reference.ok_or(NetworkError::NoPeerOnline)?;
            for (index, tx, code) in block.flagged() {
                outcomes.push(TxOutcome {
                    tx_id: tx.tx_id,
                    height: block.height,
                    index,
                    code,
                    response: responses.get(&tx.tx_id).cloned().unwrap_or_default(),
                });
            }
            committed.push(block);
        }
        self.persist(&committed)?;
        Ok(outcomes)
    }

    /// Propose, order and commit one transaction.
    pub fn submit(
        &mut self,
        creator: &KeyId,
        contract: &str,
        function: &str,
        args: &[String],
    ) -> Result<TxOutcome, NetworkError> {
        let endorsed = self.propose(creator, contract, function, args)?;
        Ok(self.order(vec![endorsed])?.remove(0))
    }

    pub fn query(
        &self,
        creator: &KeyId,
        contract: &str,
        function: &str,
        args: &[String],
    ) -> Result<Vec<u8>, NetworkError> {
        let identity = self.identity(creator)?;
        Ok(query_contract(
            self.reference_peer()?,
            &self.config.channel,
            contract,
            function,
            args,
            identity,
        )?)
    }

    /// Bring a peer back online and replay what it missed.
    pub fn reconnect(&mut self, name: &str) -> Result<(), NetworkError> {
        let source = self.blocks()?.to_vec();
        let channel = self.config.channel.clone();
        let peer = self.peer_mut(name)?;
        peer.set_online(true);
        catch_up(peer, &channel, &source)?;
        Ok(())
    }

    /// Whether every online peer holds the same chain tip and state.
    pub fn converged(&self) -> bool {
        let tips: BTreeSet<(Digest, Digest)> = self
            .peers
            .iter()
            .filter(|p| p.is_online())
            .filter_map(|p| p.chain(&self.config.channel))
            .map(|c| (c.tip_hash(), c.state().digest()))
            .collect();
        tips.len() <= 1
    }
}
