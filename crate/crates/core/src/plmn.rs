//! PLMN identifier space and the standardized ePDG domain names derived
//! from it.
//!
//! 3GPP TS 23.003 places every operator's ePDG under
//! `epdg.epc.mnc{y}.mcc{x}.pub.3gppnetwork.org`, where the MCC is always
//! three decimal digits and the MNC is two or three. The MNC digit count is
//! significant: `mnc04` and `mnc004` are different domains, and at least one
//! real operator serves both. We therefore never zero-pad an MNC.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled MCC table (ITU E.212 derived), loadable at runtime from a custom
/// file with the same one-`mcc,iso2[,iso2...]`-per-line format.
pub const BUNDLED_MCC_TABLE: &str = include_str!("../data/mcc_countries.csv");

/// Bundled ISO 3166-1 alpha-2 country to continent mapping.
pub const BUNDLED_CONTINENT_TABLE: &str = include_str!("../data/continents.csv");

pub const EPDG_DOMAIN_SUFFIX: &str = "pub.3gppnetwork.org";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlmnError {
    #[error("MCC must be exactly 3 decimal digits, got {0:?}")]
    BadMcc(String),
    #[error("MNC must be 2 or 3 decimal digits, got {0:?}")]
    BadMnc(String),
}

/// Mobile network identity: MCC plus MNC with its digit count preserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "PlmnIdRepr", into = "PlmnIdRepr")]
pub struct PlmnId {
    mcc: String,
    mnc: String,
}

/// Serialized form; kept separate so construction always revalidates.
#[derive(Serialize, Deserialize)]
struct PlmnIdRepr {
    mcc: String,
    mnc: String,
}

impl TryFrom<PlmnIdRepr> for PlmnId {
    type Error = PlmnError;
    fn try_from(r: PlmnIdRepr) -> Result<Self, PlmnError> {
        PlmnId::new(&r.mcc, &r.mnc)
    }
}

impl From<PlmnId> for PlmnIdRepr {
    fn from(p: PlmnId) -> Self {
        PlmnIdRepr { mcc: p.mcc, mnc: p.mnc }
    }
}

impl PlmnId {
    pub fn new(mcc: &str, mnc: &str) -> Result<Self, PlmnError> {
        if mcc.len() != 3 || !mcc.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PlmnError::BadMcc(mcc.to_string()));
        }
        if !(mnc.len() == 2 || mnc.len() == 3) || !mnc.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PlmnError::BadMnc(mnc.to_string()));
        }
        Ok(PlmnId { mcc: mcc.to_string(), mnc: mnc.to_string() })
    }

    pub fn mcc(&self) -> &str {
        &self.mcc
    }

    pub fn mnc(&self) -> &str {
        &self.mnc
    }

    pub fn region(&self) -> Region {
        Region::from_mcc(&self.mcc)
    }
}

impl fmt::Display for PlmnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.mcc, self.mnc)
    }
}

/// Geographic region encoded in the first MCC digit. Digits 1 and 8 are not
/// allocated to a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    TestNetworks,
    Europe,
    NorthAmericaCaribbean,
    AsiaMiddleEast,
    AustraliaOceania,
    Africa,
    SouthCentralAmerica,
    Worldwide,
    Unspecified,
}

impl Region {
    pub fn from_mcc(mcc: &str) -> Region {
        match mcc.as_bytes().first() {
            Some(b'0') => Region::TestNetworks,
            Some(b'2') => Region::Europe,
            Some(b'3') => Region::NorthAmericaCaribbean,
            Some(b'4') => Region::AsiaMiddleEast,
            Some(b'5') => Region::AustraliaOceania,
            Some(b'6') => Region::Africa,
            Some(b'7') => Region::SouthCentralAmerica,
            Some(b'9') => Region::Worldwide,
            _ => Region::Unspecified,
        }
    }

    /// All regions in first-digit order, for stable report rows.
    pub const ALL: &'static [Region] = &[
        Region::TestNetworks,
        Region::Europe,
        Region::NorthAmericaCaribbean,
        Region::AsiaMiddleEast,
        Region::AustraliaOceania,
        Region::Africa,
        Region::SouthCentralAmerica,
        Region::Worldwide,
        Region::Unspecified,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Region::TestNetworks => "Test networks",
            Region::Europe => "Europe",
            Region::NorthAmericaCaribbean => "North America & Caribbean",
            Region::AsiaMiddleEast => "Asia, Middle East",
            Region::AustraliaOceania => "Australia, Oceania",
            Region::Africa => "Africa",
            Region::SouthCentralAmerica => "South & Central America",
            Region::Worldwide => "Worldwide",
            Region::Unspecified => "Unspecified",
        }
    }
}

/// Which flavor of the standardized ePDG name to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FqdnVariant {
    /// `epdg.epc.mnc{y}.mcc{x}.pub.3gppnetwork.org`
    Standard,
    /// `sos.` prefixed emergency ePDG name.
    Sos,
}

/// Builds the standardized ePDG FQDN for a PLMN. Lowercase, no trailing dot,
/// MNC rendered with its stored digit count.
pub fn epdg_fqdn(plmn: &PlmnId, variant: FqdnVariant) -> String {
    let prefix = match variant {
        FqdnVariant::Standard => "",
        FqdnVariant::Sos => "sos.",
    };
    format!("{prefix}epdg.epc.mnc{}.mcc{}.{EPDG_DOMAIN_SUFFIX}", plmn.mnc, plmn.mcc)
}

/// Inverse of [`epdg_fqdn`]: recovers the PLMN and variant from a domain
/// name, or `None` if the name is not a standardized ePDG name.
pub fn parse_epdg_fqdn(domain: &str) -> Option<(PlmnId, FqdnVariant)> {
    let domain = domain.strip_suffix('.').unwrap_or(domain);
    let (variant, rest) = match domain.strip_prefix("sos.") {
        Some(rest) => (FqdnVariant::Sos, rest),
        None => (FqdnVariant::Standard, domain),
    };
    let rest = rest.strip_prefix("epdg.epc.mnc")?;
    let (mnc, rest) = rest.split_once('.')?;
    let rest = rest.strip_prefix("mcc")?;
    let (mcc, suffix) = rest.split_once('.')?;
    if suffix != EPDG_DOMAIN_SUFFIX {
        return None;
    }
    PlmnId::new(mcc, mnc).ok().map(|p| (p, variant))
}

/// Iterates the complete PLMN space: 1000 MCCs x (100 two-digit + 1000
/// three-digit MNCs) = 1,100,000 combinations, in lexicographic order
/// (MCC ascending, then two-digit MNCs, then three-digit MNCs).
///
/// Unassigned codes are included on purpose: discovery has to cover the full
/// space, not just allocated identifiers.
pub fn enumerate_all(variant: FqdnVariant) -> impl Iterator<Item = (PlmnId, String)> {
    (0..1000u32).flat_map(move |mcc| {
        let mcc = format!("{mcc:03}");
        let two = (0..100u32).map(|m| format!("{m:02}"));
        let three = (0..1000u32).map(|m| format!("{m:03}"));
        two.chain(three).map(move |mnc| {
            let plmn = PlmnId { mcc: mcc.clone(), mnc };
            let fqdn = epdg_fqdn(&plmn, variant);
            (plmn, fqdn)
        })
    })
}

/// Number of combinations [`enumerate_all`] yields.
pub const PLMN_SPACE_SIZE: u64 = 1_100_000;

pub fn mcc_region(mcc: &str) -> Region {
    Region::from_mcc(mcc)
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("reading table: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// MCC to ISO country set mapping, loaded from a plain-text data file so the
/// table can be updated without code changes.
#[derive(Debug, Clone)]
pub struct MccCountryTable {
    entries: HashMap<String, BTreeSet<String>>,
    version: String,
    empty: BTreeSet<String>,
}

impl MccCountryTable {
    /// Loads the table bundled with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_MCC_TABLE).expect("bundled MCC table is well-formed")
    }

    pub fn from_path(path: &Path) -> Result<Self, TableError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut entries: HashMap<String, BTreeSet<String>> = HashMap::new();
        let mut version = String::from("unversioned");
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(v) = line.strip_prefix("# version:") {
                version = v.trim().to_string();
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let mcc = fields.next().unwrap_or_default().trim();
            if mcc.len() != 3 || !mcc.bytes().all(|b| b.is_ascii_digit()) {
                return Err(TableError::Parse {
                    line: idx + 1,
                    msg: format!("invalid MCC {mcc:?}"),
                });
            }
            let set = entries.entry(mcc.to_string()).or_default();
            for c in fields {
                let c = c.trim().to_ascii_uppercase();
                if c.len() != 2 || !c.bytes().all(|b| b.is_ascii_alphabetic()) {
                    return Err(TableError::Parse {
                        line: idx + 1,
                        msg: format!("invalid ISO code {c:?}"),
                    });
                }
                set.insert(c);
            }
        }
        Ok(MccCountryTable { entries, version, empty: BTreeSet::new() })
    }

    /// Countries assigned to an MCC. Unknown, test, and worldwide MCCs yield
    /// the empty set.
    pub fn countries(&self, mcc: &str) -> &BTreeSet<String> {
        self.entries.get(mcc).unwrap_or(&self.empty)
    }

    /// Every country that appears in the table.
    pub fn all_countries(&self) -> BTreeSet<String> {
        self.entries.values().flatten().cloned().collect()
    }

    /// MCCs whose country set contains `iso2`.
    pub fn mccs_for_country(&self, iso2: &str) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter(|(_, set)| set.contains(iso2))
            .map(|(mcc, _)| mcc.clone())
            .collect()
    }

    pub fn version(&self) -> &str {
        &self.version
    }
}

pub fn plmn_countries<'t>(mcc: &str, table: &'t MccCountryTable) -> &'t BTreeSet<String> {
    table.countries(mcc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fqdn_matches_standardized_form() {
        let plmn = PlmnId::new("262", "002").unwrap();
        assert_eq!(
            epdg_fqdn(&plmn, FqdnVariant::Standard),
            "epdg.epc.mnc002.mcc262.pub.3gppnetwork.org"
        );
        assert_eq!(
            epdg_fqdn(&plmn, FqdnVariant::Sos),
            "sos.epdg.epc.mnc002.mcc262.pub.3gppnetwork.org"
        );
    }

    #[test]
    fn two_digit_mnc_is_not_padded() {
        let plmn = PlmnId::new("640", "04").unwrap();
        assert_eq!(
            epdg_fqdn(&plmn, FqdnVariant::Standard),
            "epdg.epc.mnc04.mcc640.pub.3gppnetwork.org"
        );
    }

    #[test]
    fn mnc_digit_count_is_significant() {
        let two = PlmnId::new("640", "04").unwrap();
        let three = PlmnId::new("640", "004").unwrap();
        assert_ne!(two, three);
        assert_ne!(
            epdg_fqdn(&two, FqdnVariant::Standard),
            epdg_fqdn(&three, FqdnVariant::Standard)
        );
    }

    #[test]
    fn rejects_malformed_codes() {
        assert!(PlmnId::new("26", "002").is_err());
        assert!(PlmnId::new("2620", "002").is_err());
        assert!(PlmnId::new("262", "2").is_err());
        assert!(PlmnId::new("262", "0002").is_err());
        assert!(PlmnId::new("26a", "002").is_err());
        assert!(PlmnId::new("262", "0x2").is_err());
    }

    #[test]
    fn regions_follow_first_digit() {
        assert_eq!(mcc_region("262"), Region::Europe);
        assert_eq!(mcc_region("901"), Region::Worldwide);
        assert_eq!(mcc_region("100"), Region::Unspecified);
        assert_eq!(mcc_region("800"), Region::Unspecified);
        assert_eq!(mcc_region("001"), Region::TestNetworks);
        assert_eq!(mcc_region("310"), Region::NorthAmericaCaribbean);
        assert_eq!(mcc_region("405"), Region::AsiaMiddleEast);
        assert_eq!(mcc_region("505"), Region::AustraliaOceania);
        assert_eq!(mcc_region("640"), Region::Africa);
        assert_eq!(mcc_region("748"), Region::SouthCentralAmerica);
    }

    #[test]
    fn enumeration_order_and_membership() {
        let mut it = enumerate_all(FqdnVariant::Standard);
        let (first, fqdn) = it.next().unwrap();
        assert_eq!(first, PlmnId::new("000", "00").unwrap());
        assert_eq!(fqdn, "epdg.epc.mnc00.mcc000.pub.3gppnetwork.org");

        // 100th element of an MCC block is the first three-digit MNC.
        let tmobile = enumerate_all(FqdnVariant::Standard)
            .find(|(p, _)| p.mcc() == "310" && p.mnc() == "260")
            .unwrap();
        assert_eq!(tmobile.1, "epdg.epc.mnc260.mcc310.pub.3gppnetwork.org");
    }

    #[test]
    fn enumeration_is_complete_and_distinct() {
        let mut count = 0u64;
        let mut seen = std::collections::HashSet::with_capacity(1_100_000);
        for (_, fqdn) in enumerate_all(FqdnVariant::Standard) {
            count += 1;
            assert!(seen.insert(fqdn), "duplicate domain emitted");
        }
        assert_eq!(count, PLMN_SPACE_SIZE);
    }

    #[test]
    fn fqdn_round_trip() {
        for (plmn, fqdn) in enumerate_all(FqdnVariant::Sos).step_by(9173) {
            let (back, variant) = parse_epdg_fqdn(&fqdn).unwrap();
            assert_eq!(back, plmn);
            assert_eq!(variant, FqdnVariant::Sos);
        }
        assert_eq!(
            parse_epdg_fqdn("epdg.epc.mnc04.mcc640.pub.3gppnetwork.org"),
            Some((PlmnId::new("640", "04").unwrap(), FqdnVariant::Standard))
        );
        assert_eq!(parse_epdg_fqdn("www.example.com"), None);
        assert_eq!(parse_epdg_fqdn("epdg.epc.mnc4.mcc640.pub.3gppnetwork.org"), None);
    }

    #[test]
    fn bundled_table_lookups() {
        let table = MccCountryTable::bundled();
        assert_eq!(table.countries("262").iter().collect::<Vec<_>>(), ["DE"]);
        assert_eq!(table.countries("405").iter().collect::<Vec<_>>(), ["IN"]);
        assert!(table.countries("001").is_empty());
        assert!(table.countries("901").is_empty());
        assert!(table.mccs_for_country("DE").contains("262"));
    }

    #[test]
    fn table_parse_errors() {
        assert!(MccCountryTable::parse("26,DE").is_err());
        assert!(MccCountryTable::parse("262,GER").is_err());
        let ok = MccCountryTable::parse("# comment\n262,DE\n\n310,US,US\n").unwrap();
        assert_eq!(ok.countries("310").len(), 1);
    }
}
