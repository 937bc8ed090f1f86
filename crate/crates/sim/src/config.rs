// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Fixed menu of misbehaviours. Each acts only through the messages its
/// authority sends; none can sign for another party.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ByzantineStrategy {
    /// Votes for any correctly signed order, skipping every state check.
    SignAnything,
    /// Never answers.
    Stonewall,
    /// Claims to know nothing of an account's history in account queries.
    ReportZeroSequence,
    /// Honest, except that a pending lock never stops it from voting.
    Equivocate,
    /// Honest, but every reply takes the longest modelled delay.
    DelayMax,
}

impl ByzantineStrategy {
    pub const ALL: [ByzantineStrategy; 5] = [
        ByzantineStrategy::SignAnything,
        ByzantineStrategy::Stonewall,
        ByzantineStrategy::ReportZeroSequence,
        ByzantineStrategy::Equivocate,
        ByzantineStrategy::DelayMax,
    ];

    fn name(self) -> &'static str {
        match self {
            ByzantineStrategy::SignAnything => "sign_anything",
            ByzantineStrategy::Stonewall => "stonewall",
            ByzantineStrategy::ReportZeroSequence => "report_zero_sequence",
            ByzantineStrategy::Equivocate => "equivocate",
            ByzantineStrategy::DelayMax => "delay_max",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Behavior {
    #[default]
    Honest,
    /// Drops every message addressed to it for the whole run.
    Crashed,
    Byzantine(ByzantineStrategy),
}

impl Behavior {
    pub fn is_honest(self) -> bool {
        !matches!(self, Behavior::Byzantine(_))
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Honest => f.write_str("honest"),
            Behavior::Crashed => f.write_str("crashed"),
            Behavior::Byzantine(s) => write!(f, "byzantine:{}", s.name()),
        }
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "honest" => return Ok(Behavior::Honest),
            "crashed" => return Ok(Behavior::Crashed),
            _ => {}
        }
        let name = s.strip_prefix("byzantine:").unwrap_or(s);
        ByzantineStrategy::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .map(Behavior::Byzantine)
            .ok_or_else(|| format!("unknown behavior {s:?}"))
    }
}

impl TryFrom<String> for Behavior {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Behavior> for String {
    fn from(b: Behavior) -> String {
        b.to_string()
    }
}

/// Delays are drawn uniformly from `[min_delay_us, max_delay_us]` per
/// message, so the spread between them is the reorder window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkModel {
    pub min_delay_us: u64,
    pub max_delay_us: u64,
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    /// Delay between shards of one authority. The channel is reliable, so
    /// these messages are delayed and duplicated but never lost.
    pub cross_shard_min_delay_us: u64,
    pub cross_shard_max_delay_us: u64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            min_delay_us: 100,
            max_delay_us: 5_000,
            drop_probability: 0.02,
            duplicate_probability: 0.02,
            cross_shard_min_delay_us: 10,
            cross_shard_max_delay_us: 2_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSettings {
    /// Retransmission period of an unanswered request.
    pub retransmit_us: u64,
    /// Transmissions per request before it fails with `Timeout`.
    pub max_transmissions: u32,
    /// Pause between vote attempts when an authority reports missing funds.
    pub retry_interval_us: u64,
    pub max_attempts: usize,
    /// Wait for every authority rather than the first quorum.
    pub wait_for_all: bool,
}

impl Default for ClientSettings {
    fn default() -> Self {
        ClientSettings {
            retransmit_us: 20_000,
            max_transmissions: 12,
            retry_interval_us: 10_000,
            max_attempts: 6,
            wait_for_all: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub users: usize,
    /// Operations issued over the run, funding included.
    pub operations: usize,
    /// Mean virtual time between operation starts.
    pub mean_gap_us: u64,
    pub initial_funding: u64,
    pub max_amount: u64,
    pub fund_weight: u32,
    pub transfer_weight: u32,
    pub redeem_weight: u32,
    /// Replays of an already redeemed certificate, which must be refused.
    pub replay_redeem_weight: u32,
    /// Transfers by a dedicated client that signs two orders per sequence.
    pub equivocate_weight: u32,
    /// Balance queries to the whole committee.
    pub query_weight: u32,
    /// A user resends its Primary credits to every authority.
    pub relay_weight: u32,
    /// Explicit operations; when non-empty, replaces the random mix.
    pub script: Vec<ScriptedOp>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            users: 8,
            operations: 1_000,
            mean_gap_us: 10_000,
            initial_funding: 1_000,
            max_amount: 100,
            fund_weight: 2,
            transfer_weight: 12,
            redeem_weight: 1,
            replay_redeem_weight: 1,
            equivocate_weight: 0,
            query_weight: 0,
            relay_weight: 0,
            script: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptedOp {
    Fund { user: usize, amount: u64 },
    Transfer { from: usize, to: usize, amount: u64 },
    Redeem { from: usize, amount: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub committee_size: usize,
    pub shards: u32,
    /// One entry per authority; missing entries are honest.
    pub faults: Vec<Behavior>,
    pub network: NetworkModel,
    pub client: ClientSettings,
    pub workload: WorkloadConfig,
    /// Record one trace line per event.
    pub record_events: bool,
    /// Snapshot authority state every this many events, quiescent or not.
    pub checkpoint_every: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            committee_size: 4,
            shards: 2,
            faults: Vec::new(),
            network: NetworkModel::default(),
            client: ClientSettings::default(),
            workload: WorkloadConfig::default(),
            record_events: true,
            checkpoint_every: 500,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: SimConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn behavior(&self, authority: usize) -> Behavior {
        self.faults.get(authority).copied().unwrap_or_default()
    }

    /// Authorities that are crashed or Byzantine.
    pub fn faulty(&self) -> usize {
        (0..self.committee_size)
            .filter(|&i| self.behavior(i) != Behavior::Honest)
            .count()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.committee_size == 0 || self.committee_size % 3 != 1 {
            return invalid("committee size must be 3f + 1");
        }
        if self.faults.len() > self.committee_size {
            return invalid("more fault entries than authorities");
        }
        if self.shards == 0 {
            return invalid("at least one shard");
        }
        let n = &self.network;
        if n.min_delay_us > n.max_delay_us || n.cross_shard_min_delay_us > n.cross_shard_max_delay_us {
            return invalid("delay range is empty");
        }
        if !(0.0..1.0).contains(&n.drop_probability) || !(0.0..1.0).contains(&n.duplicate_probability) {
            return invalid("probabilities must lie in [0, 1)");
        }
        if self.workload.users < 2 {
            return invalid("at least two users");
        }
        if self.client.max_transmissions == 0 {
            return invalid("at least one transmission per request");
        }
        for op in &self.workload.script {
            let users = self.workload.users;
            let ok = match *op {
                ScriptedOp::Fund { user, .. } => user < users,
                ScriptedOp::Transfer { from, to, .. } => from < users && to < users && from != to,
                ScriptedOp::Redeem { from, .. } => from < users,
            };
            if !ok {
                return invalid("scripted operation names an unknown user");
            }
        }
        Ok(())
    }
}
