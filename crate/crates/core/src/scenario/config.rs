use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::{GatewayBehavior, ServerBehavior};
use crate::lifecycle::{GatewayParams, ServerParams};
use crate::mechanism::{option_rational_serde, rational_serde, Money};
use crate::model::{Address, FeatureConfig, Step};
use crate::netsim::{AttackerProfile, ClientProfile, Link, NodeKind, NodeSpec, Relocation, Topology};
use crate::spoofcheck::SpoofCheckConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub address: Address,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub managed_range: Option<BTreeSet<Address>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertised_range: Option<BTreeSet<Address>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerConfig {
    pub source: Address,
    pub target: Address,
    pub delta: Step,
    pub pattern: String,
    /// Forged source address; the attacker stays where it is.
    #[serde(default)]
    pub spoof_as: Option<Address>,
    #[serde(default)]
    pub start: Step,
    #[serde(default)]
    pub pause_window: Option<(Step, Step)>,
    #[serde(default)]
    pub relocate: Option<Relocation>,
    #[serde(default)]
    pub repeats: Option<usize>,
}

impl AttackerConfig {
    pub fn profile(&self) -> AttackerProfile {
        let mut p = AttackerProfile::new(self.source, self.target, self.delta, self.pattern.as_bytes());
        p.spoof_as = self.spoof_as;
        p.start = self.start;
        p.pause_window = self.pause_window;
        p.relocate = self.relocate;
        if let Some(r) = self.repeats {
            p.repeats = r;
        }
        p
    }
}

fn default_spoof() -> SpoofCheckConfig {
    SpoofCheckConfig { k: 4, timeout: 200, trivial_checks: true }
}

fn default_c() -> BigRational {
    BigRational::from_integer(2.into())
}

fn default_balance() -> Money {
    Money::from_integer(10_000)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub v_s: Money,
    /// Requested service duration Γ_S.
    pub gamma: Step,
    #[serde(default, with = "option_rational_serde", skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<BigRational>,
    #[serde(default = "ServerConfig::default_gamma_min")]
    pub gamma_min: Step,
    #[serde(default = "ServerConfig::default_gamma_max")]
    pub gamma_max: Step,
    pub fee_max: Money,
    #[serde(default = "ServerConfig::default_r_max")]
    pub r_max: u32,
    #[serde(default = "default_c", with = "rational_serde")]
    pub c: BigRational,
    #[serde(default = "ServerConfig::default_examples")]
    pub n_train: usize,
    #[serde(default = "ServerConfig::default_examples")]
    pub n_test: usize,
    #[serde(default = "ServerConfig::default_ttl")]
    pub ttl_max: u32,
    #[serde(default = "default_spoof")]
    pub spoof: SpoofCheckConfig,
    #[serde(default = "ServerConfig::default_timeout")]
    pub timeout: Step,
    #[serde(default = "ServerConfig::default_detect_threshold")]
    pub detect_threshold: usize,
    #[serde(default = "ServerConfig::default_collect")]
    pub collect: usize,
    #[serde(default = "ServerConfig::default_detect_deadline")]
    pub detect_deadline: Step,
    #[serde(default = "ServerConfig::default_benign_pool")]
    pub benign_pool: usize,
    #[serde(default = "default_balance")]
    pub balance: Money,
    #[serde(default)]
    pub behavior: ServerBehavior,
}

impl ServerConfig {
    fn default_gamma_min() -> Step {
        1
    }
    fn default_gamma_max() -> Step {
        Step::MAX
    }
    fn default_r_max() -> u32 {
        8
    }
    fn default_examples() -> usize {
        8
    }
    fn default_ttl() -> u32 {
        32
    }
    fn default_timeout() -> Step {
        200
    }
    fn default_detect_threshold() -> usize {
        4
    }
    fn default_collect() -> usize {
        72
    }
    fn default_detect_deadline() -> Step {
        2_000
    }
    fn default_benign_pool() -> usize {
        160
    }

    pub fn params(&self) -> ServerParams {
        ServerParams {
            v_s: self.v_s.clone(),
            gamma_s: self.gamma,
            epsilon: self.epsilon.clone(),
            gamma_min: self.gamma_min,
            gamma_max: self.gamma_max,
            fee_max: self.fee_max.clone(),
            r_max: self.r_max,
            c: self.c.clone(),
            n_train: self.n_train,
            n_test: self.n_test,
            ttl_max: self.ttl_max,
            spoof: self.spoof,
            timeout: self.timeout,
            detect_threshold: self.detect_threshold,
            collect: self.collect,
            detect_deadline: self.detect_deadline,
            benign_pool: self.benign_pool,
            behavior: self.behavior.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub address: Address,
    pub base_cost: Money,
    pub per_example_cost: Money,
    #[serde(default)]
    pub gamma: Option<Step>,
    pub fee: Money,
    pub iota: u64,
    /// Defaults to the server's `c`.
    #[serde(default, with = "option_rational_serde", skip_serializing_if = "Option::is_none")]
    pub c: Option<BigRational>,
    #[serde(default = "GatewayConfig::default_timeout")]
    pub timeout: Step,
    #[serde(default = "GatewayConfig::default_init_wait")]
    pub init_wait: Step,
    /// Defaults to the server's spoof-check settings.
    #[serde(default)]
    pub spoof: Option<SpoofCheckConfig>,
    #[serde(default = "Money::zero")]
    pub balance: Money,
    #[serde(default)]
    pub behavior: GatewayBehavior,
}

impl GatewayConfig {
    fn default_timeout() -> Step {
        400
    }
    fn default_init_wait() -> Step {
        400
    }

    pub fn params(&self, server: &ServerConfig) -> GatewayParams {
        GatewayParams {
            base_cost: self.base_cost.clone(),
            per_example_cost: self.per_example_cost.clone(),
            gamma: self.gamma,
            fee: self.fee.clone(),
            iota: self.iota,
            c: self.c.clone().unwrap_or_else(|| server.c.clone()),
            timeout: self.timeout,
            init_wait: self.init_wait,
            spoof: self.spoof.unwrap_or(server.spoof),
            behavior: self.behavior.clone(),
        }
    }
}

/// A complete scenario: topology, traffic, actor parameters and behaviors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub horizon: Step,
    #[serde(default)]
    pub features: FeatureConfig,
    /// Ground-truth attack signatures known to the server.
    pub patterns: Vec<String>,
    pub nodes: Vec<NodeConfig>,
    pub links: Vec<Link>,
    #[serde(default)]
    pub attackers: Vec<AttackerConfig>,
    #[serde(default)]
    pub clients: Vec<ClientProfile>,
    pub server: ServerConfig,
    #[serde(default)]
    pub gateways: Vec<GatewayConfig>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn topology(&self) -> Topology {
        Topology {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    address: n.address,
                    kind: n.kind,
                    managed_range: n.managed_range.clone(),
                    advertised_range: n.advertised_range.clone(),
                })
                .collect(),
            links: self.links.clone(),
        }
    }

    pub fn server_address(&self) -> Address {
        self.nodes.iter().find(|n| n.kind == NodeKind::Server).map(|n| n.address).expect("validated")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let servers = self.nodes.iter().filter(|n| n.kind == NodeKind::Server).count();
        if servers != 1 {
            return Err(invalid("nodes", format!("expected exactly one server node, found {servers}")));
        }
        let topology = self.topology();
        topology.validate().map_err(|e| {
            let text = e.to_string();
            match text.split_once(": ") {
                Some((path, msg)) if path.ends_with(']') => invalid(path, msg),
                _ => invalid("nodes", text),
            }
        })?;
        let kinds: BTreeMap<Address, NodeKind> = self.nodes.iter().map(|n| (n.address, n.kind)).collect();
        let exists = |path: String, a: Address| {
            if kinds.contains_key(&a) {
                Ok(())
            } else {
                Err(invalid(path, format!("unknown address {a}")))
            }
        };
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        if self.features.dim == 0 || self.features.buckets == 0 {
            return Err(invalid("features", "dim and buckets must be positive"));
        }
        if self.patterns.iter().all(|p| p.is_empty()) {
            return Err(invalid("patterns", "at least one non-empty pattern required"));
        }
        for (i, a) in self.attackers.iter().enumerate() {
            let at = |f: &str| format!("attackers[{i}].{f}");
            exists(at("source"), a.source)?;
            exists(at("target"), a.target)?;
            if let Some(s) = a.spoof_as {
                exists(at("spoof_as"), s)?;
            }
            if let Some(r) = a.relocate {
                exists(at("relocate.to"), r.to)?;
            }
            if a.delta == 0 {
                return Err(invalid(at("delta"), "must be positive"));
            }
            if a.pattern.is_empty() {
                return Err(invalid(at("pattern"), "must not be empty"));
            }
            if let Some((s, e)) = a.pause_window {
                if s > e {
                    return Err(invalid(at("pause_window"), "start after end"));
                }
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            exists(format!("clients[{i}].source"), c.source)?;
            exists(format!("clients[{i}].target"), c.target)?;
            if c.interval == 0 {
                return Err(invalid(format!("clients[{i}].interval"), "must be positive"));
            }
        }
        self.validate_server()?;
        let mut seen = BTreeSet::new();
        for (i, g) in self.gateways.iter().enumerate() {
            let at = |f: &str| format!("gateways[{i}].{f}");
            exists(at("address"), g.address)?;
            if kinds[&g.address] != NodeKind::Gateway {
                return Err(invalid(at("address"), format!("{} is not a gateway node", g.address)));
            }
            if !seen.insert(g.address) {
                return Err(invalid(at("address"), format!("gateway {} configured twice", g.address)));
            }
            if g.iota == 0 {
                return Err(invalid(at("iota"), "must be at least 1"));
            }
            if g.gamma == Some(0) {
                return Err(invalid(at("gamma"), "must be positive"));
            }
            if g.c.as_ref().is_some_and(|c| c <= &BigRational::one()) {
                return Err(invalid(at("c"), "must exceed 1"));
            }
            if g.timeout == 0 {
                return Err(invalid(at("timeout"), "must be positive"));
            }
        }
        Ok(())
    }

    fn validate_server(&self) -> Result<(), ConfigError> {
        let s = &self.server;
        if s.gamma == 0 {
            return Err(invalid("server.gamma", "must be positive"));
        }
        if s.gamma_min > s.gamma_max {
            return Err(invalid("server.gamma_min", "exceeds gamma_max"));
        }
        if let Some(e) = &s.epsilon {
            if e <= &BigRational::zero() || e >= &BigRational::one() {
                return Err(invalid("server.epsilon", "must lie strictly between 0 and 1"));
            }
        }
        if s.c <= BigRational::one() {
            return Err(invalid("server.c", "must exceed 1"));
        }
        if s.r_max == 0 {
            return Err(invalid("server.r_max", "must be at least 1"));
        }
        if s.n_train == 0 || s.n_test == 0 {
            return Err(invalid("server.n_test", "dataset sizes must be positive"));
        }
        if s.detect_threshold < 2 {
            return Err(invalid("server.detect_threshold", "need at least two packets to estimate Δ"));
        }
        if s.collect < s.detect_threshold {
            return Err(invalid("server.collect", "must be at least detect_threshold"));
        }
        if s.timeout == 0 {
            return Err(invalid("server.timeout", "must be positive"));
        }
        if s.spoof.k == 0 {
            return Err(invalid("server.spoof.k", "must be positive"));
        }
        Ok(())
    }
}
