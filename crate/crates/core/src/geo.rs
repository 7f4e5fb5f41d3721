//! IP-to-country lookups and special-purpose address detection.
//!
//! Two database backends sit behind [`GeoDb`]: MaxMind-format binary
//! databases (`.mmdb`, what live campaigns typically use) and a tiny
//! prefix-table format written by [`build_prefix_db`], which simnet and CI
//! generate from `cidr,country` CSV lines.

use std::fmt;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net_util::{nat64_embedded, v4_compatible_embedded, Cidr};

const PREFIX_DB_MAGIC: &[u8] = b"EPGDB1\n";

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("reading geolocation db: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt prefix db: {0}")]
    Corrupt(String),
    #[error("maxmind db: {0}")]
    MaxMind(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Result of a geolocation lookup. Absence is explicit: an address the
/// database does not know has both fields unset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoInfo {
    pub country: Option<String>,
    pub registered_country: Option<String>,
    pub source_db_version: String,
}

/// Structural class of an address, independent of any database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AddressClass {
    PublicRoutable,
    Loopback,
    PrivateOrReserved,
    /// NAT64 translation address (64:ff9b::/96) with the embedded IPv4.
    Nat64(Ipv4Addr),
    /// Deprecated IPv4-compatible IPv6 address (::a.b.c.d).
    V4CompatibleV6(Ipv4Addr),
}

impl fmt::Display for AddressClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddressClass::PublicRoutable => write!(f, "public"),
            AddressClass::Loopback => write!(f, "loopback"),
            AddressClass::PrivateOrReserved => write!(f, "private_or_reserved"),
            AddressClass::Nat64(v4) => write!(f, "nat64({v4})"),
            AddressClass::V4CompatibleV6(v4) => write!(f, "v4_compatible({v4})"),
        }
    }
}

/// Classifies an address by prefix rules. Total: every address gets exactly
/// one class.
pub fn classify_address(ip: IpAddr) -> AddressClass {
    match ip {
        IpAddr::V4(v4) => classify_v4(v4),
        IpAddr::V6(v6) => classify_v6(v6),
    }
}

fn classify_v4(ip: Ipv4Addr) -> AddressClass {
    if ip.is_loopback() {
        return AddressClass::Loopback;
    }
    let reserved = ip.is_private()
        || ip.is_link_local()
        || ip.is_broadcast()
        || ip.is_documentation()
        || ip.is_unspecified()
        || ip.octets()[0] == 0
        || (ip.octets()[0] & 0xf0) == 0xf0 // 240.0.0.0/4
        || ip.is_multicast()
        || in_v4(ip, [100, 64, 0, 0], 10) // CGNAT
        || in_v4(ip, [192, 0, 0, 0], 24)
        || in_v4(ip, [198, 18, 0, 0], 15); // benchmarking
    if reserved {
        AddressClass::PrivateOrReserved
    } else {
        AddressClass::PublicRoutable
    }
}

fn classify_v6(ip: Ipv6Addr) -> AddressClass {
    if ip.is_loopback() {
        return AddressClass::Loopback;
    }
    if let Some(v4) = nat64_embedded(ip) {
        return AddressClass::Nat64(v4);
    }
    if let Some(v4) = v4_compatible_embedded(ip) {
        return AddressClass::V4CompatibleV6(v4);
    }
    let seg = ip.segments();
    let reserved = ip.is_unspecified()
        || ip.is_multicast()
        || (seg[0] & 0xffc0) == 0xfe80 // link local
        || (seg[0] & 0xfe00) == 0xfc00 // unique local
        || (seg[0] == 0x2001 && seg[1] == 0xdb8) // documentation
        || ip.to_ipv4_mapped().is_some();
    if reserved {
        AddressClass::PrivateOrReserved
    } else {
        AddressClass::PublicRoutable
    }
}

fn in_v4(ip: Ipv4Addr, net: [u8; 4], len: u8) -> bool {
    Cidr::new(IpAddr::V4(Ipv4Addr::from(net)), len)
        .expect("static prefix")
        .contains(IpAddr::V4(ip))
}

/// One prefix-table entry: either country may be absent.
#[derive(Debug, Clone)]
struct PrefixEntry {
    cidr: Cidr,
    country: Option<String>,
    registered_country: Option<String>,
}

/// A geolocation database opened from disk.
pub struct GeoDb {
    backend: Backend,
}

enum Backend {
    Prefix { entries: Vec<PrefixEntry>, version: String },
    MaxMind { reader: maxminddb::Reader<Vec<u8>>, version: String },
}

impl fmt::Debug for GeoDb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.backend {
            Backend::Prefix { entries, version } => f
                .debug_struct("GeoDb::Prefix")
                .field("entries", &entries.len())
                .field("version", version)
                .finish(),
            Backend::MaxMind { version, .. } => {
                f.debug_struct("GeoDb::MaxMind").field("version", version).finish()
            }
        }
    }
}

impl GeoDb {
    /// Opens either format; the prefix format is detected by magic bytes,
    /// anything else is handed to the MaxMind reader. Corruption surfaces
    /// here, never at lookup time.
    pub fn open(path: &Path) -> Result<GeoDb, GeoError> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(PREFIX_DB_MAGIC) {
            return Self::parse_prefix(&bytes);
        }
        let reader = maxminddb::Reader::open_readfile(path)
            .map_err(|e| GeoError::MaxMind(e.to_string()))?;
        let version = format!(
            "{} {}",
            reader.metadata().database_type,
            reader.metadata().build_epoch
        );
        Ok(GeoDb { backend: Backend::MaxMind { reader, version } })
    }

    fn parse_prefix(bytes: &[u8]) -> Result<GeoDb, GeoError> {
        let mut cur = &bytes[PREFIX_DB_MAGIC.len()..];
        let version = read_str(&mut cur)?
            .ok_or_else(|| GeoError::Corrupt("missing version".into()))?;
        let count = read_u32(&mut cur)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let family = read_u8(&mut cur)?;
            let prefix_len = read_u8(&mut cur)?;
            let addr: IpAddr = match family {
                4 => Ipv4Addr::from(read_array::<4>(&mut cur)?).into(),
                6 => Ipv6Addr::from(read_array::<16>(&mut cur)?).into(),
                other => return Err(GeoError::Corrupt(format!("family byte {other}"))),
            };
            let cidr = Cidr::new(addr, prefix_len)
                .map_err(|e| GeoError::Corrupt(e.to_string()))?;
            let country = read_str(&mut cur)?;
            let registered_country = read_str(&mut cur)?;
            entries.push(PrefixEntry { cidr, country, registered_country });
        }
        Ok(GeoDb { backend: Backend::Prefix { entries, version } })
    }

    pub fn version(&self) -> &str {
        match &self.backend {
            Backend::Prefix { version, .. } => version,
            Backend::MaxMind { version, .. } => version,
        }
    }

    /// Longest-prefix-match lookup. Unknown addresses yield a `GeoInfo`
    /// with both country fields absent.
    pub fn lookup(&self, ip: IpAddr) -> GeoInfo {
        match &self.backend {
            Backend::Prefix { entries, version } => {
                let best = entries
                    .iter()
                    .filter(|e| e.cidr.contains(ip))
                    .max_by_key(|e| e.cidr.prefix_len);
                GeoInfo {
                    country: best.and_then(|e| e.country.clone()),
                    registered_country: best.and_then(|e| e.registered_country.clone()),
                    source_db_version: version.clone(),
                }
            }
            Backend::MaxMind { reader, version } => {
                let rec = reader
                    .lookup(ip)
                    .ok()
                    .and_then(|r| r.decode::<maxminddb::geoip2::Country>().ok())
                    .flatten();
                let country = rec
                    .as_ref()
                    .and_then(|c| c.country.iso_code)
                    .map(str::to_string);
                let registered_country = rec
                    .as_ref()
                    .and_then(|c| c.registered_country.iso_code)
                    .map(str::to_string);
                GeoInfo { country, registered_country, source_db_version: version.clone() }
            }
        }
    }
}

/// Builds a prefix db from CSV text: `cidr,country[,registered_country]`,
/// `#` comments allowed, empty country field permitted for registered-only
/// entries.
pub fn build_prefix_db<W: Write>(csv: &str, version: &str, mut out: W) -> Result<(), GeoError> {
    let mut entries = Vec::new();
    for (idx, raw) in csv.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let cidr: Cidr = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e: crate::net_util::CidrError| GeoError::Csv {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        let country = fields.next().map(str::trim).filter(|s| !s.is_empty());
        let registered = fields.next().map(str::trim).filter(|s| !s.is_empty());
        if country.is_none() && registered.is_none() {
            return Err(GeoError::Csv { line: idx + 1, msg: "entry maps to nothing".into() });
        }
        entries.push((cidr, country.map(String::from), registered.map(String::from)));
    }

    out.write_all(PREFIX_DB_MAGIC)?;
    write_str(&mut out, Some(version))?;
    out.write_all(&(entries.len() as u32).to_be_bytes())?;
    for (cidr, country, registered) in entries {
        match cidr.addr {
            IpAddr::V4(a) => {
                out.write_all(&[4, cidr.prefix_len])?;
                out.write_all(&a.octets())?;
            }
            IpAddr::V6(a) => {
                out.write_all(&[6, cidr.prefix_len])?;
                out.write_all(&a.octets())?;
            }
        }
        write_str(&mut out, country.as_deref())?;
        write_str(&mut out, registered.as_deref())?;
    }
    Ok(())
}

/// Convenience wrapper writing the db to a file path.
pub fn build_prefix_db_file(csv: &str, version: &str, path: &Path) -> Result<(), GeoError> {
    let mut f = std::fs::File::create(path)?;
    build_prefix_db(csv, version, &mut f)?;
    Ok(())
}

fn write_str<W: Write>(out: &mut W, s: Option<&str>) -> std::io::Result<()> {
    match s {
        None => out.write_all(&[0]),
        Some(s) => {
            let b = s.as_bytes();
            assert!(b.len() < 256, "string field too long");
            out.write_all(&[b.len() as u8])?;
            out.write_all(b)
        }
    }
}

fn read_u8(cur: &mut &[u8]) -> Result<u8, GeoError> {
    let (&b, rest) = cur.split_first().ok_or_else(|| GeoError::Corrupt("truncated".into()))?;
    *cur = rest;
    Ok(b)
}

fn read_u32(cur: &mut &[u8]) -> Result<u32, GeoError> {
    Ok(u32::from_be_bytes(read_array::<4>(cur)?))
}

fn read_array<const N: usize>(cur: &mut &[u8]) -> Result<[u8; N], GeoError> {
    if cur.len() < N {
        return Err(GeoError::Corrupt("truncated".into()));
    }
    let (head, rest) = cur.split_at(N);
    *cur = rest;
    Ok(head.try_into().unwrap())
}

fn read_str(cur: &mut &[u8]) -> Result<Option<String>, GeoError> {
    let len = read_u8(cur)? as usize;
    if len == 0 {
        return Ok(None);
    }
    if cur.len() < len {
        return Err(GeoError::Corrupt("truncated string".into()));
    }
    let (head, rest) = cur.split_at(len);
    *cur = rest;
    String::from_utf8(head.to_vec())
        .map(Some)
        .map_err(|_| GeoError::Corrupt("non-utf8 string".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_db(csv: &str) -> GeoDb {
        let mut buf = Vec::new();
        build_prefix_db(csv, "test-db-1", &mut buf).unwrap();
        let dir = std::env::temp_dir().join(format!("geodb-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("{:x}.geodb", sha_short(csv)));
        std::fs::write(&path, &buf).unwrap();
        GeoDb::open(&path).unwrap()
    }

    fn sha_short(s: &str) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        s.hash(&mut h);
        h.finish()
    }

    #[test]
    fn longest_prefix_wins() {
        let db = open_db("10.0.0.0/8,AT\n10.1.0.0/16,DE\n");
        assert_eq!(db.lookup("10.1.2.3".parse().unwrap()).country.as_deref(), Some("DE"));
        assert_eq!(db.lookup("10.2.2.3".parse().unwrap()).country.as_deref(), Some("AT"));
        assert_eq!(db.lookup("11.0.0.1".parse().unwrap()).country, None);
    }

    #[test]
    fn loopback_is_absent_not_sentinel() {
        let db = open_db("198.51.100.0/24,DE\n");
        let info = db.lookup("127.0.0.1".parse().unwrap());
        assert_eq!(info.country, None);
        assert_eq!(info.registered_country, None);
        assert_eq!(info.source_db_version, "test-db-1");
    }

    #[test]
    fn registered_country_only_entries() {
        let db = open_db("198.51.100.0/24,,DE\n");
        let info = db.lookup("198.51.100.9".parse().unwrap());
        assert_eq!(info.country, None);
        assert_eq!(info.registered_country.as_deref(), Some("DE"));
    }

    #[test]
    fn ipv6_lookup() {
        let db = open_db("2001:db8:1::/48,HU\n");
        assert_eq!(db.lookup("2001:db8:1::7".parse().unwrap()).country.as_deref(), Some("HU"));
        assert_eq!(db.lookup("2001:db8:2::7".parse().unwrap()).country, None);
    }

    #[test]
    fn corrupt_db_fails_at_open() {
        let dir = std::env::temp_dir();
        let path = dir.join("corrupt.geodb");
        std::fs::write(&path, b"EPGDB1\n\x05test").unwrap();
        assert!(GeoDb::open(&path).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_address("127.0.0.9".parse().unwrap()), AddressClass::Loopback);
        assert_eq!(
            classify_address("64:ff9b::c000:201".parse().unwrap()),
            AddressClass::Nat64("192.0.2.1".parse().unwrap())
        );
        assert_eq!(
            classify_address("203.0.113.7".parse().unwrap()),
            AddressClass::PrivateOrReserved
        );
        assert_eq!(classify_address("193.0.14.129".parse().unwrap()), AddressClass::PublicRoutable);
        assert_eq!(classify_address("2600::1".parse().unwrap()), AddressClass::PublicRoutable);
        assert_eq!(
            classify_address("::c0a8:101".parse().unwrap()),
            AddressClass::V4CompatibleV6("192.168.1.1".parse().unwrap())
        );
        assert_eq!(classify_address("::1".parse().unwrap()), AddressClass::Loopback);
        assert_eq!(classify_address("10.0.0.1".parse().unwrap()), AddressClass::PrivateOrReserved);
        assert_eq!(classify_address("fe80::1".parse().unwrap()), AddressClass::PrivateOrReserved);
    }
}
