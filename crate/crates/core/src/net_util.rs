//! Small address helpers shared by the DNS, geolocation, and simnet modules.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CidrError {
    #[error("invalid CIDR {0:?}")]
    Invalid(String),
    #[error("prefix length {len} out of range for {family}")]
    BadLength { len: u8, family: &'static str },
}

/// An IP prefix, e.g. `203.0.113.0/24` or `2001:db8::/32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cidr {
    pub addr: IpAddr,
    pub prefix_len: u8,
}

impl Cidr {
    pub fn new(addr: IpAddr, prefix_len: u8) -> Result<Self, CidrError> {
        let max = match addr {
            IpAddr::V4(_) => 32,
            IpAddr::V6(_) => 128,
        };
        if prefix_len > max {
            return Err(CidrError::BadLength {
                len: prefix_len,
                family: if max == 32 { "IPv4" } else { "IPv6" },
            });
        }
        Ok(Cidr { addr, prefix_len })
    }

    pub fn contains(&self, ip: IpAddr) -> bool {
        match (self.addr, ip) {
            (IpAddr::V4(net), IpAddr::V4(ip)) => {
                leading_bits_equal(&net.octets(), &ip.octets(), self.prefix_len)
            }
            (IpAddr::V6(net), IpAddr::V6(ip)) => {
                leading_bits_equal(&net.octets(), &ip.octets(), self.prefix_len)
            }
            _ => false,
        }
    }

    /// Address bytes with bits past the prefix cleared.
    pub fn masked_bytes(&self) -> Vec<u8> {
        let mut bytes = match self.addr {
            IpAddr::V4(a) => a.octets().to_vec(),
            IpAddr::V6(a) => a.octets().to_vec(),
        };
        mask_tail(&mut bytes, self.prefix_len);
        bytes
    }

    pub fn is_ipv4(&self) -> bool {
        self.addr.is_ipv4()
    }
}

fn mask_tail(bytes: &mut [u8], prefix_len: u8) {
    for (i, b) in bytes.iter_mut().enumerate() {
        let bit_start = (i * 8) as u16;
        let plen = prefix_len as u16;
        if bit_start >= plen {
            *b = 0;
        } else if bit_start + 8 > plen {
            let keep = (plen - bit_start) as u32;
            *b &= 0xffu8 << (8 - keep);
        }
    }
}

fn leading_bits_equal(a: &[u8], b: &[u8], prefix_len: u8) -> bool {
    let full = (prefix_len / 8) as usize;
    if a[..full] != b[..full] {
        return false;
    }
    let rem = prefix_len % 8;
    if rem == 0 {
        return true;
    }
    let mask = 0xffu8 << (8 - rem);
    (a[full] & mask) == (b[full] & mask)
}

impl FromStr for Cidr {
    type Err = CidrError;

    fn from_str(s: &str) -> Result<Self, CidrError> {
        let (addr, len) = s.split_once('/').ok_or_else(|| CidrError::Invalid(s.into()))?;
        let addr: IpAddr = addr.parse().map_err(|_| CidrError::Invalid(s.into()))?;
        let len: u8 = len.parse().map_err(|_| CidrError::Invalid(s.into()))?;
        Cidr::new(addr, len)
    }
}

impl TryFrom<String> for Cidr {
    type Error = CidrError;
    fn try_from(s: String) -> Result<Self, CidrError> {
        s.parse()
    }
}

impl From<Cidr> for String {
    fn from(c: Cidr) -> String {
        c.to_string()
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix_len)
    }
}

/// The NAT64 well-known prefix 64:ff9b::/96.
pub const NAT64_PREFIX: Ipv6Addr = Ipv6Addr::new(0x64, 0xff9b, 0, 0, 0, 0, 0, 0);

/// Extracts the IPv4 address embedded in a NAT64 (64:ff9b::/96) address.
pub fn nat64_embedded(v6: Ipv6Addr) -> Option<Ipv4Addr> {
    let o = v6.octets();
    if o[..12] == NAT64_PREFIX.octets()[..12] {
        Some(Ipv4Addr::new(o[12], o[13], o[14], o[15]))
    } else {
        None
    }
}

/// Extracts the IPv4 address from a deprecated IPv4-compatible IPv6 address
/// (::a.b.c.d with a non-zero low 32 bits, excluding ::1).
pub fn v4_compatible_embedded(v6: Ipv6Addr) -> Option<Ipv4Addr> {
    let o = v6.octets();
    if o[..12] != [0u8; 12] {
        return None;
    }
    let v4 = Ipv4Addr::new(o[12], o[13], o[14], o[15]);
    if u32::from(v4) <= 1 {
        return None; // :: and ::1
    }
    Some(v4)
}

/// Re-embeds an IPv4 address under the NAT64 prefix.
pub fn nat64_embed(v4: Ipv4Addr) -> Ipv6Addr {
    let mut o = NAT64_PREFIX.octets();
    o[12..].copy_from_slice(&v4.octets());
    Ipv6Addr::from(o)
}

/// Re-embeds an IPv4 address as an IPv4-compatible IPv6 address.
pub fn v4_compatible_embed(v4: Ipv4Addr) -> Ipv6Addr {
    let mut o = [0u8; 16];
    o[12..].copy_from_slice(&v4.octets());
    Ipv6Addr::from(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cidr_parse_and_contains() {
        let c: Cidr = "203.0.113.0/24".parse().unwrap();
        assert!(c.contains("203.0.113.77".parse().unwrap()));
        assert!(!c.contains("203.0.114.1".parse().unwrap()));
        assert!(!c.contains("2001:db8::1".parse().unwrap()));

        let c6: Cidr = "2001:db8::/32".parse().unwrap();
        assert!(c6.contains("2001:db8:ffff::1".parse().unwrap()));
        assert!(!c6.contains("2001:db9::1".parse().unwrap()));
    }

    #[test]
    fn cidr_rejects_garbage() {
        assert!("203.0.113.0".parse::<Cidr>().is_err());
        assert!("203.0.113.0/33".parse::<Cidr>().is_err());
        assert!("2001:db8::/129".parse::<Cidr>().is_err());
        assert!("nope/24".parse::<Cidr>().is_err());
    }

    #[test]
    fn masked_bytes_clear_host_bits() {
        let c: Cidr = "203.0.113.77/24".parse().unwrap();
        assert_eq!(c.masked_bytes(), vec![203, 0, 113, 0]);
        let c: Cidr = "203.0.113.77/25".parse().unwrap();
        assert_eq!(c.masked_bytes(), vec![203, 0, 113, 0]);
        let c: Cidr = "203.0.113.255/31".parse().unwrap();
        assert_eq!(c.masked_bytes(), vec![203, 0, 113, 254]);
    }

    #[test]
    fn nat64_round_trip() {
        let v4: Ipv4Addr = "192.0.2.1".parse().unwrap();
        let v6 = nat64_embed(v4);
        assert_eq!(v6.to_string(), "64:ff9b::c000:201");
        assert_eq!(nat64_embedded(v6), Some(v4));
        assert_eq!(nat64_embedded("2001:db8::1".parse().unwrap()), None);
    }

    #[test]
    fn v4_compatible_round_trip() {
        let v4: Ipv4Addr = "10.1.2.3".parse().unwrap();
        let v6 = v4_compatible_embed(v4);
        assert_eq!(v4_compatible_embedded(v6), Some(v4));
        assert_eq!(v4_compatible_embedded("::1".parse().unwrap()), None);
        assert_eq!(v4_compatible_embedded("::".parse().unwrap()), None);
    }
}
