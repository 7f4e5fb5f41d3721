//! Iterative and direct-to-authoritative resolution with CNAME chasing,
//! an in-process cache, and repeated-query pool enumeration.

use std::collections::{BTreeSet, HashMap};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Mutex;
use std::time::Instant;

use chrono::Utc;
use rand::Rng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpStream, UdpSocket};

use super::wire::{self, Message, RData, Rcode, Record};
use super::{DnsObservation, DnsOutcome, PoolEnumerationPolicy, ResolveMode, ResolveOptions};

/// Referral chain length bound in iterative mode.
const MAX_REFERRALS: usize = 16;
/// Recursion bound when resolving glueless NS names.
const MAX_NS_DEPTH: usize = 4;
/// Negative results are cached per the SOA minimum but never longer than
/// this, so repeated discovery rounds are not blinded by a stale NXDOMAIN.
const NEGATIVE_CACHE_CAP_SECS: u64 = 60;

/// IPv4 root server hints (a through m).
pub const ROOT_HINTS: [Ipv4Addr; 13] = [
    Ipv4Addr::new(198, 41, 0, 4),
    Ipv4Addr::new(170, 247, 170, 2),
    Ipv4Addr::new(192, 33, 4, 12),
    Ipv4Addr::new(199, 7, 91, 13),
    Ipv4Addr::new(192, 203, 230, 10),
    Ipv4Addr::new(192, 5, 5, 241),
    Ipv4Addr::new(192, 112, 36, 4),
    Ipv4Addr::new(198, 97, 190, 53),
    Ipv4Addr::new(192, 36, 148, 17),
    Ipv4Addr::new(192, 58, 128, 30),
    Ipv4Addr::new(193, 0, 14, 129),
    Ipv4Addr::new(199, 7, 83, 42),
    Ipv4Addr::new(202, 12, 27, 33),
];

/// Identity stamped into every observation this resolver emits.
#[derive(Debug, Clone, Default)]
pub struct VantageStamp {
    pub vantage_id: String,
    pub vantage_country: String,
}

#[derive(Default)]
struct CacheInner {
    /// Positive (name, qtype) -> full answer-section record set.
    rrsets: HashMap<(String, u16), (Vec<Record>, Instant)>,
    /// NXDOMAIN / NoData results.
    negatives: HashMap<(String, u16), (DnsOutcome, Instant)>,
    /// Zone -> nameserver addresses learned from referrals.
    zones: HashMap<String, (Vec<IpAddr>, Instant)>,
}

/// A shareable resolver. Per-query state is independent; the cache is
/// internally synchronized.
pub struct Resolver {
    stamp: VantageStamp,
    bind_addr: Option<IpAddr>,
    root_hints: Vec<SocketAddr>,
    cache: Mutex<CacheInner>,
}

enum LookupResult {
    Records(Vec<Record>),
    Negative(DnsOutcome),
    Timeout,
    ServFail,
}

enum QueryError {
    Timeout,
    Network,
    Malformed,
}

impl Resolver {
    pub fn new(stamp: VantageStamp) -> Self {
        Resolver {
            stamp,
            bind_addr: None,
            root_hints: ROOT_HINTS.iter().map(|ip| SocketAddr::new(IpAddr::V4(*ip), 53)).collect(),
            cache: Mutex::new(CacheInner::default()),
        }
    }

    /// Binds outgoing query sockets to a fixed source address (simnet
    /// vantages use this to assume a location).
    pub fn with_bind_addr(mut self, addr: IpAddr) -> Self {
        self.bind_addr = Some(addr);
        self
    }

    pub fn with_root_hints(mut self, hints: Vec<SocketAddr>) -> Self {
        self.root_hints = hints;
        self
    }

    pub fn clear_cache(&self) {
        let mut c = self.cache.lock().unwrap();
        c.rrsets.clear();
        c.negatives.clear();
        c.zones.clear();
    }

    /// Resolves `domain`, following CNAME referrals up to the configured
    /// depth and recording the full chain. Failures land in the outcome.
    pub async fn resolve(&self, domain: &str, opts: &ResolveOptions) -> DnsObservation {
        let domain = domain.trim_end_matches('.').to_ascii_lowercase();
        let mut chain: Vec<String> = Vec::new();
        let mut current = domain.clone();
        let qtype = opts.record_type.qtype();

        let mut outcome = DnsOutcome::ServFail;
        let mut answers: Vec<IpAddr> = Vec::new();

        'chase: while chain.len() <= opts.max_cname_depth {
            match self.lookup_rrset(&current, qtype, opts, 0).await {
                LookupResult::Negative(neg) => {
                    outcome = neg;
                    break 'chase;
                }
                LookupResult::Timeout => {
                    outcome = DnsOutcome::Timeout;
                    break 'chase;
                }
                LookupResult::ServFail => {
                    outcome = DnsOutcome::ServFail;
                    break 'chase;
                }
                LookupResult::Records(records) => {
                    // One response may carry several chain links at once.
                    let mut progressed = false;
                    loop {
                        let ips: Vec<IpAddr> = records
                            .iter()
                            .filter(|r| r.name == current && r.rtype == qtype)
                            .filter_map(|r| match &r.rdata {
                                RData::A(a) => Some(IpAddr::V4(*a)),
                                RData::Aaaa(a) => Some(IpAddr::V6(*a)),
                                _ => None,
                            })
                            .collect();
                        if !ips.is_empty() {
                            answers = ips;
                            outcome = DnsOutcome::Answers;
                            break 'chase;
                        }
                        let target = records.iter().find_map(|r| {
                            if r.name == current && r.rtype == wire::TYPE_CNAME {
                                match &r.rdata {
                                    RData::Cname(t) => Some(t.clone()),
                                    _ => None,
                                }
                            } else {
                                None
                            }
                        });
                        match target {
                            Some(t) => {
                                if t == domain || chain.contains(&t) {
                                    // CNAME cycle; refuse to loop.
                                    outcome = DnsOutcome::ServFail;
                                    break 'chase;
                                }
                                if chain.len() >= opts.max_cname_depth {
                                    outcome = DnsOutcome::ServFail;
                                    break 'chase;
                                }
                                chain.push(t.clone());
                                current = t;
                                progressed = true;
                            }
                            None => {
                                if progressed {
                                    // Need a fresh query for the new target.
                                    continue 'chase;
                                }
                                outcome = DnsOutcome::NoData;
                                break 'chase;
                            }
                        }
                    }
                }
            }
        }

        DnsObservation {
            domain,
            record_type: opts.record_type,
            vantage_id: self.stamp.vantage_id.clone(),
            vantage_country: self.stamp.vantage_country.clone(),
            timestamp: Utc::now(),
            cname_chain: chain,
            answers,
            outcome,
            ecs_sent: opts.ecs_subnet,
        }
    }

    /// Union of answers over repeated queries, with the stop-after-no-new
    /// rule bounding cost. Queries bypass the answer cache.
    pub async fn enumerate_pool(
        &self,
        domain: &str,
        opts: &ResolveOptions,
        policy: &PoolEnumerationPolicy,
    ) -> (BTreeSet<IpAddr>, Vec<DnsObservation>) {
        policy.validate().expect("valid pool enumeration policy");
        let mut fresh = opts.clone();
        fresh.use_cache = false;

        let mut ips = BTreeSet::new();
        let mut observations = Vec::new();
        let mut no_new = 0usize;
        while observations.len() < policy.max_queries {
            let obs = self.resolve(domain, &fresh).await;
            let mut added = false;
            for ip in &obs.answers {
                added |= ips.insert(*ip);
            }
            observations.push(obs);
            if added {
                no_new = 0;
            } else {
                no_new += 1;
                if no_new >= policy.stop_after_no_new {
                    break;
                }
            }
        }
        (ips, observations)
    }

    /// Resolves one (name, qtype) without CNAME chasing, consulting cache
    /// and negative cache first.
    async fn lookup_rrset(
        &self,
        name: &str,
        qtype: u16,
        opts: &ResolveOptions,
        ns_depth: usize,
    ) -> LookupResult {
        if opts.use_cache {
            let now = Instant::now();
            let cache = self.cache.lock().unwrap();
            if let Some((neg, until)) = cache.negatives.get(&(name.to_string(), qtype)) {
                if *until > now {
                    return LookupResult::Negative(*neg);
                }
            }
            if let Some((records, until)) = cache.rrsets.get(&(name.to_string(), qtype)) {
                if *until > now {
                    return LookupResult::Records(records.clone());
                }
            }
        }
        match opts.mode {
            ResolveMode::AuthoritativeDirect(server) => {
                match self.query_server(server, name, qtype, opts).await {
                    Ok(resp) => match resp.header.rcode {
                        Rcode::NoError if resp.answers.iter().any(|r| r.name == name) => {
                            self.insert_rrset(name, qtype, resp.answers.clone());
                            LookupResult::Records(resp.answers)
                        }
                        Rcode::NoError => {
                            let ttl = negative_ttl(&resp);
                            self.insert_negative(name, qtype, DnsOutcome::NoData, ttl);
                            LookupResult::Negative(DnsOutcome::NoData)
                        }
                        Rcode::NxDomain => {
                            let ttl = negative_ttl(&resp);
                            self.insert_negative(name, qtype, DnsOutcome::NxDomain, ttl);
                            LookupResult::Negative(DnsOutcome::NxDomain)
                        }
                        _ => LookupResult::ServFail,
                    },
                    Err(QueryError::Timeout) => LookupResult::Timeout,
                    Err(_) => LookupResult::ServFail,
                }
            }
            ResolveMode::Iterative => self.lookup_iterative(name, qtype, opts, ns_depth).await,
        }
    }

    async fn lookup_iterative(
        &self,
        name: &str,
        qtype: u16,
        opts: &ResolveOptions,
        ns_depth: usize,
    ) -> LookupResult {
        let mut servers = self.best_servers(name);
        for _ in 0..MAX_REFERRALS {
            let mut response = None;
            let mut any_network_error = false;
            for server in &servers {
                match self.query_server(*server, name, qtype, opts).await {
                    Ok(resp) => {
                        response = Some(resp);
                        break;
                    }
                    Err(QueryError::Timeout) => {}
                    Err(_) => any_network_error = true,
                }
            }
            let Some(resp) = response else {
                return if any_network_error { LookupResult::ServFail } else { LookupResult::Timeout };
            };

            match resp.header.rcode {
                Rcode::NoError => {}
                Rcode::NxDomain => {
                    let ttl = negative_ttl(&resp);
                    self.insert_negative(name, qtype, DnsOutcome::NxDomain, ttl);
                    return LookupResult::Negative(DnsOutcome::NxDomain);
                }
                _ => return LookupResult::ServFail,
            }

            if resp.answers.iter().any(|r| r.name == name) {
                self.insert_rrset(name, qtype, resp.answers.clone());
                return LookupResult::Records(resp.answers);
            }

            if let Some((zone, ns_names, glue)) = referral(&resp) {
                let addrs = if !glue.is_empty() {
                    glue
                } else if ns_depth < MAX_NS_DEPTH {
                    self.resolve_ns_addrs(&ns_names, opts, ns_depth + 1).await
                } else {
                    Vec::new()
                };
                if addrs.is_empty() {
                    return LookupResult::ServFail;
                }
                let until = Instant::now() + std::time::Duration::from_secs(300);
                self.cache.lock().unwrap().zones.insert(zone, (addrs.clone(), until));
                servers = addrs.into_iter().map(|ip| SocketAddr::new(ip, 53)).collect();
                continue;
            }

            let ttl = negative_ttl(&resp);
            self.insert_negative(name, qtype, DnsOutcome::NoData, ttl);
            return LookupResult::Negative(DnsOutcome::NoData);
        }
        LookupResult::ServFail
    }

    /// Resolves glueless nameserver names to addresses (A records only).
    async fn resolve_ns_addrs(
        &self,
        ns_names: &[String],
        opts: &ResolveOptions,
        ns_depth: usize,
    ) -> Vec<IpAddr> {
        let mut out = Vec::new();
        for ns in ns_names {
            let fut = self.lookup_rrset(ns, wire::TYPE_A, opts, ns_depth);
            if let LookupResult::Records(records) = Box::pin(fut).await {
                for r in records {
                    if r.name == *ns {
                        if let RData::A(a) = r.rdata {
                            out.push(IpAddr::V4(a));
                        }
                    }
                }
            }
            if !out.is_empty() {
                break;
            }
        }
        out
    }

    fn best_servers(&self, name: &str) -> Vec<SocketAddr> {
        let cache = self.cache.lock().unwrap();
        let now = Instant::now();
        let mut zone = name;
        loop {
            if let Some((addrs, until)) = cache.zones.get(zone) {
                if *until > now && !addrs.is_empty() {
                    return addrs.iter().map(|ip| SocketAddr::new(*ip, 53)).collect();
                }
            }
            match zone.split_once('.') {
                Some((_, parent)) => zone = parent,
                None => break,
            }
        }
        self.root_hints.clone()
    }

    fn insert_rrset(&self, name: &str, qtype: u16, records: Vec<Record>) {
        let min_ttl = records.iter().map(|r| r.ttl).min().unwrap_or(0);
        if min_ttl == 0 {
            return;
        }
        let until = Instant::now() + std::time::Duration::from_secs(min_ttl as u64);
        self.cache
            .lock()
            .unwrap()
            .rrsets
            .insert((name.to_string(), qtype), (records, until));
    }

    fn insert_negative(&self, name: &str, qtype: u16, outcome: DnsOutcome, ttl: u32) {
        if ttl == 0 {
            return;
        }
        let until = Instant::now() + std::time::Duration::from_secs(ttl as u64);
        self.cache
            .lock()
            .unwrap()
            .negatives
            .insert((name.to_string(), qtype), (outcome, until));
    }

    /// One query to one server, with truncation-triggered TCP retry.
    async fn query_server(
        &self,
        server: SocketAddr,
        name: &str,
        qtype: u16,
        opts: &ResolveOptions,
    ) -> Result<Message, QueryError> {
        let id: u16 = rand::rng().random();
        let query = Message::query(id, name, qtype, false, opts.ecs_subnet);
        let bytes = query.encode();

        let bind: SocketAddr = match (self.bind_addr, server) {
            (Some(ip), _) => SocketAddr::new(ip, 0),
            (None, SocketAddr::V4(_)) => "0.0.0.0:0".parse().unwrap(),
            (None, SocketAddr::V6(_)) => "[::]:0".parse().unwrap(),
        };
        let socket = UdpSocket::bind(bind).await.map_err(|_| QueryError::Network)?;
        socket.send_to(&bytes, server).await.map_err(|_| QueryError::Network)?;

        let mut buf = vec![0u8; 4096];
        let deadline = tokio::time::Instant::now() + opts.timeout;
        let resp = loop {
            let recv = tokio::time::timeout_at(deadline, socket.recv_from(&mut buf)).await;
            let (n, from) = match recv {
                Err(_) => return Err(QueryError::Timeout),
                Ok(Err(_)) => return Err(QueryError::Network),
                Ok(Ok(v)) => v,
            };
            if from != server {
                continue;
            }
            match Message::decode(&buf[..n]) {
                Ok(m) if m.header.id == id && m.header.response => break m,
                Ok(_) => continue,
                Err(_) => return Err(QueryError::Malformed),
            }
        };
        if resp.header.truncated {
            return self.query_tcp(server, &bytes, id, opts).await;
        }
        Ok(resp)
    }

    async fn query_tcp(
        &self,
        server: SocketAddr,
        query_bytes: &[u8],
        id: u16,
        opts: &ResolveOptions,
    ) -> Result<Message, QueryError> {
        let fut = async {
            let mut stream = TcpStream::connect(server).await.map_err(|_| QueryError::Network)?;
            let mut framed = Vec::with_capacity(query_bytes.len() + 2);
            framed.extend_from_slice(&(query_bytes.len() as u16).to_be_bytes());
            framed.extend_from_slice(query_bytes);
            stream.write_all(&framed).await.map_err(|_| QueryError::Network)?;
            let mut len_buf = [0u8; 2];
            stream.read_exact(&mut len_buf).await.map_err(|_| QueryError::Network)?;
            let len = u16::from_be_bytes(len_buf) as usize;
            let mut body = vec![0u8; len];
            stream.read_exact(&mut body).await.map_err(|_| QueryError::Network)?;
            let msg = Message::decode(&body).map_err(|_| QueryError::Malformed)?;
            if msg.header.id != id || !msg.header.response {
                return Err(QueryError::Malformed);
            }
            Ok(msg)
        };
        match tokio::time::timeout(opts.timeout, fut).await {
            Ok(r) => r,
            Err(_) => Err(QueryError::Timeout),
        }
    }
}

/// Negative-cache TTL: SOA minimum when present, capped at 60 seconds.
fn negative_ttl(resp: &Message) -> u32 {
    let soa_min = resp.authorities.iter().find_map(|r| match &r.rdata {
        RData::Soa { minimum, .. } => Some(*minimum),
        _ => None,
    });
    soa_min.unwrap_or(30).min(NEGATIVE_CACHE_CAP_SECS as u32)
}

/// Referral extraction for iterative mode: (zone, nameserver names, glue).
fn referral(resp: &Message) -> Option<(String, Vec<String>, Vec<IpAddr>)> {
    let mut zone = None;
    let mut ns_names = Vec::new();
    for r in &resp.authorities {
        if r.rtype == wire::TYPE_NS {
            if let RData::Ns(n) = &r.rdata {
                zone.get_or_insert_with(|| r.name.clone());
                ns_names.push(n.clone());
            }
        }
    }
    let zone = zone?;
    let mut glue = Vec::new();
    for r in &resp.additionals {
        if ns_names.iter().any(|n| *n == r.name) {
            match &r.rdata {
                RData::A(a) => glue.push(IpAddr::V4(*a)),
                RData::Aaaa(a) => glue.push(IpAddr::V6(*a)),
                _ => {}
            }
        }
    }
    Some((zone, ns_names, glue))
}

