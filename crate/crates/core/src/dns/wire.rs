//! DNS message codec: the subset of RFC 1035 plus EDNS(0) and the Client
//! Subnet option (RFC 7871) that the discovery pipeline needs.
//!
//! Encoding never uses name compression; decoding follows compression
//! pointers, since authoritative servers compress freely.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use thiserror::Error;

use crate::net_util::Cidr;

pub const TYPE_A: u16 = 1;
pub const TYPE_NS: u16 = 2;
pub const TYPE_CNAME: u16 = 5;
pub const TYPE_SOA: u16 = 6;
pub const TYPE_AAAA: u16 = 28;
pub const TYPE_OPT: u16 = 41;
pub const CLASS_IN: u16 = 1;

/// EDNS0 option code for Client Subnet.
pub const OPT_CLIENT_SUBNET: u16 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("message truncated at offset {0}")]
    Truncated(usize),
    #[error("bad label length {0}")]
    BadLabel(u8),
    #[error("compression pointer loop")]
    PointerLoop,
    #[error("name exceeds 255 octets")]
    NameTooLong,
    #[error("bad ECS option: {0}")]
    BadEcs(&'static str),
    #[error("record data length mismatch")]
    BadRdataLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rcode {
    NoError,
    FormErr,
    ServFail,
    NxDomain,
    NotImp,
    Refused,
    Other(u8),
}

impl Rcode {
    pub fn from_u8(v: u8) -> Rcode {
        match v {
            0 => Rcode::NoError,
            1 => Rcode::FormErr,
            2 => Rcode::ServFail,
            3 => Rcode::NxDomain,
            4 => Rcode::NotImp,
            5 => Rcode::Refused,
            other => Rcode::Other(other),
        }
    }

    pub fn to_u8(self) -> u8 {
        match self {
            Rcode::NoError => 0,
            Rcode::FormErr => 1,
            Rcode::ServFail => 2,
            Rcode::NxDomain => 3,
            Rcode::NotImp => 4,
            Rcode::Refused => 5,
            Rcode::Other(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub id: u16,
    pub response: bool,
    pub opcode: u8,
    pub authoritative: bool,
    pub truncated: bool,
    pub recursion_desired: bool,
    pub recursion_available: bool,
    pub rcode: Rcode,
}

impl Default for Header {
    fn default() -> Self {
        Header {
            id: 0,
            response: false,
            opcode: 0,
            authoritative: false,
            truncated: false,
            recursion_desired: false,
            recursion_available: false,
            rcode: Rcode::NoError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub name: String,
    pub rtype: u16,
    pub class: u16,
    pub ttl: u32,
    pub rdata: RData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RData {
    A(Ipv4Addr),
    Aaaa(Ipv6Addr),
    Cname(String),
    Ns(String),
    Soa {
        mname: String,
        rname: String,
        serial: u32,
        refresh: u32,
        retry: u32,
        expire: u32,
        minimum: u32,
    },
    Raw(Vec<u8>),
}

/// The EDNS(0) OPT pseudo-record, kept apart from ordinary records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Edns {
    pub udp_payload_size: u16,
    pub ext_rcode: u8,
    pub version: u8,
    pub dnssec_ok: bool,
    pub options: Vec<EdnsOption>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdnsOption {
    ClientSubnet(ClientSubnet),
    Other { code: u16, data: Vec<u8> },
}

/// RFC 7871 Client Subnet option payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientSubnet {
    pub subnet: Cidr,
    pub scope_prefix_len: u8,
}

impl ClientSubnet {
    pub fn encode(&self) -> Vec<u8> {
        let family: u16 = if self.subnet.is_ipv4() { 1 } else { 2 };
        let addr_bytes = self.subnet.masked_bytes();
        let keep = self.subnet.prefix_len.div_ceil(8) as usize;
        let mut out = Vec::with_capacity(4 + keep);
        out.extend_from_slice(&family.to_be_bytes());
        out.push(self.subnet.prefix_len);
        out.push(self.scope_prefix_len);
        out.extend_from_slice(&addr_bytes[..keep]);
        out
    }

    pub fn decode(data: &[u8]) -> Result<ClientSubnet, WireError> {
        if data.len() < 4 {
            return Err(WireError::BadEcs("short option"));
        }
        let family = u16::from_be_bytes([data[0], data[1]]);
        let source_len = data[2];
        let scope_len = data[3];
        let addr_bytes = &data[4..];
        let expect = source_len.div_ceil(8) as usize;
        if addr_bytes.len() != expect {
            return Err(WireError::BadEcs("address length mismatch"));
        }
        let addr = match family {
            1 => {
                if source_len > 32 {
                    return Err(WireError::BadEcs("v4 prefix too long"));
                }
                let mut o = [0u8; 4];
                o[..addr_bytes.len()].copy_from_slice(addr_bytes);
                IpAddr::V4(Ipv4Addr::from(o))
            }
            2 => {
                if source_len > 128 {
                    return Err(WireError::BadEcs("v6 prefix too long"));
                }
                let mut o = [0u8; 16];
                o[..addr_bytes.len()].copy_from_slice(addr_bytes);
                IpAddr::V6(Ipv6Addr::from(o))
            }
            _ => return Err(WireError::BadEcs("unknown family")),
        };
        let subnet = Cidr::new(addr, source_len).map_err(|_| WireError::BadEcs("bad prefix"))?;
        Ok(ClientSubnet { subnet, scope_prefix_len: scope_len })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Message {
    pub header: Header,
    pub questions: Vec<Question>,
    pub answers: Vec<Record>,
    pub authorities: Vec<Record>,
    pub additionals: Vec<Record>,
    pub edns: Option<Edns>,
}

impl Message {
    /// A plain IN-class query for `name`/`qtype`, optionally carrying an ECS
    /// option with scope 0 as clients do.
    pub fn query(id: u16, name: &str, qtype: u16, recursion_desired: bool, ecs: Option<Cidr>) -> Message {
        let mut msg = Message {
            header: Header { id, recursion_desired, ..Header::default() },
            questions: vec![Question {
                name: name.to_ascii_lowercase(),
                qtype,
                qclass: CLASS_IN,
            }],
            ..Message::default()
        };
        let options = match ecs {
            Some(subnet) => vec![EdnsOption::ClientSubnet(ClientSubnet {
                subnet,
                scope_prefix_len: 0,
            })],
            None => Vec::new(),
        };
        msg.edns = Some(Edns { udp_payload_size: 4096, options, ..Edns::default() });
        msg
    }

    /// Skeleton response echoing the question section.
    pub fn response_to(query: &Message, rcode: Rcode, authoritative: bool) -> Message {
        Message {
            header: Header {
                id: query.header.id,
                response: true,
                opcode: query.header.opcode,
                authoritative,
                recursion_desired: query.header.recursion_desired,
                rcode,
                ..Header::default()
            },
            questions: query.questions.clone(),
            ..Message::default()
        }
    }

    /// ECS option carried by this message, if any.
    pub fn client_subnet(&self) -> Option<ClientSubnet> {
        self.edns.as_ref().and_then(|e| {
            e.options.iter().find_map(|o| match o {
                EdnsOption::ClientSubnet(cs) => Some(*cs),
                EdnsOption::Other { .. } => None,
            })
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(512);
        out.extend_from_slice(&self.header.id.to_be_bytes());
        let mut flags: u16 = 0;
        if self.header.response {
            flags |= 0x8000;
        }
        flags |= (self.header.opcode as u16 & 0xf) << 11;
        if self.header.authoritative {
            flags |= 0x0400;
        }
        if self.header.truncated {
            flags |= 0x0200;
        }
        if self.header.recursion_desired {
            flags |= 0x0100;
        }
        if self.header.recursion_available {
            flags |= 0x0080;
        }
        flags |= self.header.rcode.to_u8() as u16 & 0xf;
        out.extend_from_slice(&flags.to_be_bytes());
        let extra = usize::from(self.edns.is_some());
        out.extend_from_slice(&(self.questions.len() as u16).to_be_bytes());
        out.extend_from_slice(&(self.answers.len() as u16).to_be_bytes());
        out.extend_from_slice(&(self.authorities.len() as u16).to_be_bytes());
        out.extend_from_slice(&((self.additionals.len() + extra) as u16).to_be_bytes());
        for q in &self.questions {
            encode_name(&q.name, &mut out);
            out.extend_from_slice(&q.qtype.to_be_bytes());
            out.extend_from_slice(&q.qclass.to_be_bytes());
        }
        for r in self.answers.iter().chain(&self.authorities).chain(&self.additionals) {
            encode_record(r, &mut out);
        }
        if let Some(edns) = &self.edns {
            encode_opt(edns, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let id = cur.u16()?;
        let flags = cur.u16()?;
        let header = Header {
            id,
            response: flags & 0x8000 != 0,
            opcode: ((flags >> 11) & 0xf) as u8,
            authoritative: flags & 0x0400 != 0,
            truncated: flags & 0x0200 != 0,
            recursion_desired: flags & 0x0100 != 0,
            recursion_available: flags & 0x0080 != 0,
            rcode: Rcode::from_u8((flags & 0xf) as u8),
        };
        let qd = cur.u16()?;
        let an = cur.u16()?;
        let ns = cur.u16()?;
        let ar = cur.u16()?;
        let mut msg = Message { header, ..Message::default() };
        for _ in 0..qd {
            let name = cur.name()?;
            msg.questions.push(Question { name, qtype: cur.u16()?, qclass: cur.u16()? });
        }
        for _ in 0..an {
            if let Some(r) = decode_record(&mut cur, &mut msg.edns)? {
                msg.answers.push(r);
            }
        }
        for _ in 0..ns {
            if let Some(r) = decode_record(&mut cur, &mut msg.edns)? {
                msg.authorities.push(r);
            }
        }
        for _ in 0..ar {
            if let Some(r) = decode_record(&mut cur, &mut msg.edns)? {
                msg.additionals.push(r);
            }
        }
        Ok(msg)
    }
}

fn encode_record(r: &Record, out: &mut Vec<u8>) {
    encode_name(&r.name, out);
    out.extend_from_slice(&r.rtype.to_be_bytes());
    out.extend_from_slice(&r.class.to_be_bytes());
    out.extend_from_slice(&r.ttl.to_be_bytes());
    let mut rdata = Vec::new();
    match &r.rdata {
        RData::A(a) => rdata.extend_from_slice(&a.octets()),
        RData::Aaaa(a) => rdata.extend_from_slice(&a.octets()),
        RData::Cname(n) | RData::Ns(n) => encode_name(n, &mut rdata),
        RData::Soa { mname, rname, serial, refresh, retry, expire, minimum } => {
            encode_name(mname, &mut rdata);
            encode_name(rname, &mut rdata);
            for v in [serial, refresh, retry, expire, minimum] {
                rdata.extend_from_slice(&v.to_be_bytes());
            }
        }
        RData::Raw(d) => rdata.extend_from_slice(d),
    }
    out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
    out.extend_from_slice(&rdata);
}

fn encode_opt(edns: &Edns, out: &mut Vec<u8>) {
    out.push(0); // root name
    out.extend_from_slice(&TYPE_OPT.to_be_bytes());
    out.extend_from_slice(&edns.udp_payload_size.to_be_bytes());
    out.push(edns.ext_rcode);
    out.push(edns.version);
    out.extend_from_slice(&(if edns.dnssec_ok { 0x8000u16 } else { 0 }).to_be_bytes());
    let mut rdata = Vec::new();
    for opt in &edns.options {
        let (code, data) = match opt {
            EdnsOption::ClientSubnet(cs) => (OPT_CLIENT_SUBNET, cs.encode()),
            EdnsOption::Other { code, data } => (*code, data.clone()),
        };
        rdata.extend_from_slice(&code.to_be_bytes());
        rdata.extend_from_slice(&(data.len() as u16).to_be_bytes());
        rdata.extend_from_slice(&data);
    }
    out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
    out.extend_from_slice(&rdata);
}

/// Decodes one resource record; OPT records are diverted into `edns` and
/// yield `None`.
fn decode_record(cur: &mut Cursor, edns: &mut Option<Edns>) -> Result<Option<Record>, WireError> {
    let name = cur.name()?;
    let rtype = cur.u16()?;
    let class = cur.u16()?;
    let ttl = cur.u32()?;
    let rdlen = cur.u16()? as usize;
    let rdata_start = cur.pos;
    if cur.bytes.len() < rdata_start + rdlen {
        return Err(WireError::Truncated(rdata_start));
    }

    if rtype == TYPE_OPT {
        let mut opts = Vec::new();
        let mut ocur = Cursor { bytes: &cur.bytes[..rdata_start + rdlen], pos: rdata_start };
        while ocur.pos < rdata_start + rdlen {
            let code = ocur.u16()?;
            let len = ocur.u16()? as usize;
            let data = ocur.take(len)?.to_vec();
            if code == OPT_CLIENT_SUBNET {
                opts.push(EdnsOption::ClientSubnet(ClientSubnet::decode(&data)?));
            } else {
                opts.push(EdnsOption::Other { code, data });
            }
        }
        *edns = Some(Edns {
            udp_payload_size: class,
            ext_rcode: (ttl >> 24) as u8,
            version: (ttl >> 16) as u8,
            dnssec_ok: ttl & 0x8000 != 0,
            options: opts,
        });
        cur.pos = rdata_start + rdlen;
        return Ok(None);
    }

    let rdata = match rtype {
        TYPE_A => {
            if rdlen != 4 {
                return Err(WireError::BadRdataLength);
            }
            RData::A(Ipv4Addr::from(<[u8; 4]>::try_from(cur.take(4)?).unwrap()))
        }
        TYPE_AAAA => {
            if rdlen != 16 {
                return Err(WireError::BadRdataLength);
            }
            RData::Aaaa(Ipv6Addr::from(<[u8; 16]>::try_from(cur.take(16)?).unwrap()))
        }
        TYPE_CNAME => RData::Cname(cur.name()?),
        TYPE_NS => RData::Ns(cur.name()?),
        TYPE_SOA => {
            let mname = cur.name()?;
            let rname = cur.name()?;
            RData::Soa {
                mname,
                rname,
                serial: cur.u32()?,
                refresh: cur.u32()?,
                retry: cur.u32()?,
                expire: cur.u32()?,
                minimum: cur.u32()?,
            }
        }
        _ => RData::Raw(cur.take(rdlen)?.to_vec()),
    };
    if cur.pos != rdata_start + rdlen {
        return Err(WireError::BadRdataLength);
    }
    Ok(Some(Record { name, rtype, class, ttl, rdata }))
}

fn encode_name(name: &str, out: &mut Vec<u8>) {
    let name = name.strip_suffix('.').unwrap_or(name);
    if !name.is_empty() {
        for label in name.split('.') {
            let bytes = label.as_bytes();
            debug_assert!(!bytes.is_empty() && bytes.len() <= 63, "bad label {label:?}");
            out.push(bytes.len() as u8);
            out.extend_from_slice(bytes);
        }
    }
    out.push(0);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u8(&mut self) -> Result<u8, WireError> {
        let b = *self.bytes.get(self.pos).ok_or(WireError::Truncated(self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes([self.u8()?, self.u8()?, self.u8()?, self.u8()?]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8], WireError> {
        if self.bytes.len() < self.pos + n {
            return Err(WireError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Reads a possibly-compressed name, normalized to lowercase without a
    /// trailing dot.
    fn name(&mut self) -> Result<String, WireError> {
        let mut labels: Vec<String> = Vec::new();
        let mut jumps = 0usize;
        let mut pos = self.pos;
        let mut end: Option<usize> = None;
        let mut total = 0usize;
        loop {
            let len = *self.bytes.get(pos).ok_or(WireError::Truncated(pos))?;
            match len {
                0 => {
                    pos += 1;
                    break;
                }
                l if l & 0xc0 == 0xc0 => {
                    let lo = *self.bytes.get(pos + 1).ok_or(WireError::Truncated(pos))?;
                    let target = (((l & 0x3f) as usize) << 8) | lo as usize;
                    if end.is_none() {
                        end = Some(pos + 2);
                    }
                    jumps += 1;
                    if jumps > 64 {
                        return Err(WireError::PointerLoop);
                    }
                    pos = target;
                }
                l if l & 0xc0 != 0 => return Err(WireError::BadLabel(l)),
                l => {
                    let l = l as usize;
                    if self.bytes.len() < pos + 1 + l {
                        return Err(WireError::Truncated(pos));
                    }
                    total += l + 1;
                    if total > 255 {
                        return Err(WireError::NameTooLong);
                    }
                    let label = &self.bytes[pos + 1..pos + 1 + l];
                    labels.push(String::from_utf8_lossy(label).to_ascii_lowercase());
                    pos += 1 + l;
                }
            }
        }
        self.pos = end.unwrap_or(pos);
        Ok(labels.join("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_round_trip_with_ecs() {
        let subnet: Cidr = "104.154.0.0/24".parse().unwrap();
        let q = Message::query(0x1234, "epdg.epc.drz1.vodafone-ip.de", TYPE_A, false, Some(subnet));
        let decoded = Message::decode(&q.encode()).unwrap();
        assert_eq!(decoded, q);
        let cs = decoded.client_subnet().unwrap();
        assert_eq!(cs.subnet, subnet);
        assert_eq!(cs.scope_prefix_len, 0);
    }

    #[test]
    fn ecs_wire_bytes_are_exact() {
        // family 1, source prefix 24, scope 0, 3 address octets
        let cs = ClientSubnet {
            subnet: "109.192.5.9/24".parse().unwrap(),
            scope_prefix_len: 0,
        };
        assert_eq!(cs.encode(), vec![0, 1, 24, 0, 109, 192, 5]);
        let back = ClientSubnet::decode(&cs.encode()).unwrap();
        assert_eq!(back.subnet.to_string(), "109.192.5.0/24");

        let cs6 = ClientSubnet {
            subnet: "2001:db8::/32".parse().unwrap(),
            scope_prefix_len: 0,
        };
        assert_eq!(cs6.encode(), vec![0, 2, 32, 0, 0x20, 0x01, 0x0d, 0xb8]);
    }

    #[test]
    fn ecs_rejects_malformed() {
        assert!(ClientSubnet::decode(&[0, 1, 24, 0, 109, 192]).is_err());
        assert!(ClientSubnet::decode(&[0, 3, 24, 0, 1, 2, 3]).is_err());
        assert!(ClientSubnet::decode(&[0, 1, 40, 0, 1, 2, 3, 4, 5]).is_err());
    }

    #[test]
    fn response_with_records_round_trips() {
        let q = Message::query(7, "epdg.epc.mnc002.mcc262.pub.3gppnetwork.org", TYPE_A, false, None);
        let mut resp = Message::response_to(&q, Rcode::NoError, true);
        resp.answers.push(Record {
            name: q.questions[0].name.clone(),
            rtype: TYPE_CNAME,
            class: CLASS_IN,
            ttl: 300,
            rdata: RData::Cname("epdg.epc.drz1.vodafone-ip.de".into()),
        });
        resp.answers.push(Record {
            name: "epdg.epc.drz1.vodafone-ip.de".into(),
            rtype: TYPE_A,
            class: CLASS_IN,
            ttl: 60,
            rdata: RData::A("198.51.100.7".parse().unwrap()),
        });
        resp.authorities.push(Record {
            name: "vodafone-ip.de".into(),
            rtype: TYPE_SOA,
            class: CLASS_IN,
            ttl: 3600,
            rdata: RData::Soa {
                mname: "ns1.vodafone-ip.de".into(),
                rname: "hostmaster.vodafone-ip.de".into(),
                serial: 1,
                refresh: 2,
                retry: 3,
                expire: 4,
                minimum: 30,
            },
        });
        let decoded = Message::decode(&resp.encode()).unwrap();
        assert_eq!(decoded, resp);
    }

    #[test]
    fn decodes_compressed_names() {
        // Hand-built: question example.com A, answer at pointer to offset 12.
        let mut bytes = vec![
            0x00, 0x07, 0x84, 0x00, 0x00, 0x01, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00,
        ];
        bytes.extend_from_slice(b"\x07example\x03com\x00");
        bytes.extend_from_slice(&TYPE_A.to_be_bytes());
        bytes.extend_from_slice(&CLASS_IN.to_be_bytes());
        bytes.extend_from_slice(&[0xc0, 0x0c]); // pointer to offset 12
        bytes.extend_from_slice(&TYPE_A.to_be_bytes());
        bytes.extend_from_slice(&CLASS_IN.to_be_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 60, 0, 4, 192, 0, 2, 1]);
        let msg = Message::decode(&bytes).unwrap();
        assert_eq!(msg.answers[0].name, "example.com");
        assert_eq!(msg.answers[0].rdata, RData::A("192.0.2.1".parse().unwrap()));
    }

    #[test]
    fn pointer_loops_are_rejected() {
        let mut bytes = vec![
            0x00, 0x07, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
        ];
        bytes.extend_from_slice(&[0xc0, 0x0c]); // points at itself
        bytes.extend_from_slice(&TYPE_A.to_be_bytes());
        bytes.extend_from_slice(&CLASS_IN.to_be_bytes());
        assert_eq!(Message::decode(&bytes), Err(WireError::PointerLoop));
    }

    #[test]
    fn garbage_is_an_error_not_a_panic() {
        for len in 0..12 {
            assert!(Message::decode(&vec![0xff; len]).is_err());
        }
    }
}
