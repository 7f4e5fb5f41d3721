//! ePDG discovery over DNS: CNAME-chasing resolution, EDNS Client Subnet,
//! and repeated-query pool enumeration.

pub mod resolver;
pub mod wire;

use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::net_util::Cidr;

/// Record type the pipeline discovers; v4 and v6 run as separate passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordType {
    A,
    AAAA,
}

impl RecordType {
    pub fn qtype(self) -> u16 {
        match self {
            RecordType::A => wire::TYPE_A,
            RecordType::AAAA => wire::TYPE_AAAA,
        }
    }

    pub fn matches(self, ip: IpAddr) -> bool {
        match self {
            RecordType::A => ip.is_ipv4(),
            RecordType::AAAA => ip.is_ipv6(),
        }
    }
}

impl std::fmt::Display for RecordType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecordType::A => write!(f, "A"),
            RecordType::AAAA => write!(f, "AAAA"),
        }
    }
}

/// How queries reach the authoritative data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolveMode {
    /// Walk from the root hints, following referrals, with an in-process
    /// cache. This is what live discovery campaigns use.
    Iterative,
    /// Ask one server directly with recursion-desired unset; used for
    /// targeted ECS experiments and for deterministic simnet runs.
    AuthoritativeDirect(SocketAddr),
}

#[derive(Debug, Clone)]
pub struct ResolveOptions {
    pub record_type: RecordType,
    pub mode: ResolveMode,
    pub ecs_subnet: Option<Cidr>,
    pub timeout: Duration,
    pub max_cname_depth: usize,
    /// Pool enumeration turns this off so repeated queries actually reach
    /// the server instead of the answer cache.
    pub use_cache: bool,
}

impl ResolveOptions {
    pub fn new(record_type: RecordType, mode: ResolveMode) -> Self {
        ResolveOptions {
            record_type,
            mode,
            ecs_subnet: None,
            timeout: Duration::from_secs(3),
            max_cname_depth: 8,
            use_cache: true,
        }
    }
}

/// Terminal status of one resolution attempt. Failures are data, not
/// exceptions: they feed the blocking classifier like any other signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DnsOutcome {
    Answers,
    NxDomain,
    NoData,
    Timeout,
    ServFail,
}

/// One resolution attempt as it lands in the JSONL log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsObservation {
    pub domain: String,
    pub record_type: RecordType,
    pub vantage_id: String,
    pub vantage_country: String,
    pub timestamp: DateTime<Utc>,
    pub cname_chain: Vec<String>,
    pub answers: Vec<IpAddr>,
    pub outcome: DnsOutcome,
    pub ecs_sent: Option<Cidr>,
}

impl DnsObservation {
    /// Consistency required of every observation we emit.
    pub fn is_well_formed(&self) -> bool {
        let answers_match = (self.outcome == DnsOutcome::Answers) == !self.answers.is_empty();
        let no_chain_repeat = {
            let mut seen = std::collections::HashSet::new();
            self.cname_chain.iter().all(|c| seen.insert(c))
        };
        answers_match && no_chain_repeat
    }
}

/// Final resolvable name: the last CNAME target, or the queried domain when
/// the chain is empty. Meaningful for `Answers` and `NoData` observations.
pub fn chase_target(obs: &DnsObservation) -> &str {
    obs.cname_chain.last().map(String::as_str).unwrap_or(&obs.domain)
}

/// Stop rule for enumerating withheld address pools by repeated querying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEnumerationPolicy {
    pub max_queries: usize,
    /// Consecutive queries adding no new address before we give up.
    pub stop_after_no_new: usize,
}

impl Default for PoolEnumerationPolicy {
    fn default() -> Self {
        PoolEnumerationPolicy { max_queries: 400, stop_after_no_new: 50 }
    }
}

impl PoolEnumerationPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_queries < 1 || self.stop_after_no_new < 1 {
            return Err("pool enumeration bounds must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(chain: &[&str]) -> DnsObservation {
        DnsObservation {
            domain: "d.example".into(),
            record_type: RecordType::A,
            vantage_id: "t".into(),
            vantage_country: "DE".into(),
            timestamp: Utc::now(),
            cname_chain: chain.iter().map(|s| s.to_string()).collect(),
            answers: vec![],
            outcome: DnsOutcome::NoData,
            ecs_sent: None,
        }
    }

    #[test]
    fn chase_target_rules() {
        assert_eq!(chase_target(&obs(&["a.example"])), "a.example");
        assert_eq!(chase_target(&obs(&[])), "d.example");
        assert_eq!(chase_target(&obs(&["x.example", "y.example", "z.example"])), "z.example");
    }

    #[test]
    fn observation_serializes_with_spec_field_names() {
        let mut o = obs(&["a.example"]);
        o.answers = vec!["192.0.2.1".parse().unwrap()];
        o.outcome = DnsOutcome::Answers;
        o.ecs_sent = Some("10.0.0.0/24".parse().unwrap());
        let json = serde_json::to_value(&o).unwrap();
        for key in [
            "domain",
            "record_type",
            "vantage_id",
            "vantage_country",
            "timestamp",
            "cname_chain",
            "answers",
            "outcome",
            "ecs_sent",
        ] {
            assert!(json.get(key).is_some(), "missing field {key}");
        }
        assert_eq!(json["outcome"], "answers");
        assert_eq!(json["ecs_sent"], "10.0.0.0/24");
        // RFC 3339 timestamp
        let ts = json["timestamp"].as_str().unwrap();
        assert!(DateTime::parse_from_rfc3339(ts).is_ok(), "bad timestamp {ts}");
    }

    #[test]
    fn well_formedness_catches_outcome_mismatch() {
        let mut o = obs(&[]);
        o.outcome = DnsOutcome::Answers;
        assert!(!o.is_well_formed());
        o.answers = vec!["192.0.2.1".parse().unwrap()];
        assert!(o.is_well_formed());
        o.cname_chain = vec!["a".into(), "a".into()];
        assert!(!o.is_well_formed());
    }
}
