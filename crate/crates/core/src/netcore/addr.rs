//! IPv4 addresses, prefixes and MAC addresses.
//!
//! All three serialize as their conventional text forms (dotted quad,
//! `a.b.c.d/len`, colon-separated hex) so they read naturally in topology
//! documents, dumps and traces.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use super::NetError;

/// An IPv4 address held as a host-order `u32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct IpAddress(pub u32);

impl IpAddress {
    pub const fn new(a: u8, b: u8, c: u8, d: u8) -> Self {
        IpAddress(u32::from_be_bytes([a, b, c, d]))
    }

    pub fn octets(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }
}

impl fmt::Display for IpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Ipv4Addr::from(self.0).fmt(f)
    }
}

impl FromStr for IpAddress {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains(':') {
            return Err(NetError::Ipv6Unsupported(s.to_string()));
        }
        s.parse::<Ipv4Addr>()
            .map(|a| IpAddress(u32::from(a)))
            .map_err(|_| NetError::BadAddress(s.to_string()))
    }
}

impl From<Ipv4Addr> for IpAddress {
    fn from(a: Ipv4Addr) -> Self {
        IpAddress(u32::from(a))
    }
}

/// An IPv4 prefix. Host bits below `len` are always zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    network: IpAddress,
    len: u8,
}

impl Prefix {
    /// Builds a prefix, rejecting lengths over 32 and set host bits.
    pub fn new(network: IpAddress, len: u8) -> Result<Self, NetError> {
        if len > 32 {
            return Err(NetError::BadPrefix(format!("{network}/{len}")));
        }
        if network.0 & !Self::mask_for(len) != 0 {
            return Err(NetError::HostBitsSet(format!("{network}/{len}")));
        }
        Ok(Prefix { network, len })
    }

    /// Builds a prefix, clearing any host bits.
    pub fn truncating(addr: IpAddress, len: u8) -> Self {
        let len = len.min(32);
        Prefix {
            network: IpAddress(addr.0 & Self::mask_for(len)),
            len,
        }
    }

    pub fn host(addr: IpAddress) -> Self {
        Prefix { network: addr, len: 32 }
    }

    pub const fn default_route() -> Self {
        Prefix {
            network: IpAddress(0),
            len: 0,
        }
    }

    pub fn network(&self) -> IpAddress {
        self.network
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_default(&self) -> bool {
        self.len == 0
    }

    pub fn mask(&self) -> u32 {
        Self::mask_for(self.len)
    }

    fn mask_for(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(len))
        }
    }

    pub fn contains(&self, addr: IpAddress) -> bool {
        addr.0 & self.mask() == self.network.0
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.len)
    }
}

impl FromStr for Prefix {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => (
                a,
                l.parse::<u8>()
                    .map_err(|_| NetError::BadPrefix(s.to_string()))?,
            ),
            None => (s, 32),
        };
        Prefix::new(addr.parse()?, len)
    }
}

/// A 48-bit Ethernet address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress(pub u64);

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress(0xffff_ffff_ffff);

    pub fn from_octets(o: [u8; 6]) -> Self {
        let mut v = 0u64;
        for b in o {
            v = (v << 8) | u64::from(b);
        }
        MacAddress(v)
    }

    pub fn octets(self) -> [u8; 6] {
        let b = self.0.to_be_bytes();
        [b[2], b[3], b[4], b[5], b[6], b[7]]
    }

    /// Group bit: least-significant bit of the first octet.
    pub fn is_multicast(self) -> bool {
        self.octets()[0] & 0x01 == 1
    }

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.octets();
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl FromStr for MacAddress {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NetError::BadMac(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(bad());
        }
        let mut o = [0u8; 6];
        for (slot, p) in o.iter_mut().zip(parts) {
            if p.len() != 2 {
                return Err(bad());
            }
            *slot = u8::from_str_radix(p, 16).map_err(|_| bad())?;
        }
        Ok(MacAddress::from_octets(o))
    }
}

macro_rules! text_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(de::Error::custom)
            }
        }
    };
}

text_serde!(IpAddress);
text_serde!(Prefix);
text_serde!(MacAddress);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn multicast_predicate() {
        assert!("01:00:5e:00:00:00".parse::<MacAddress>().unwrap().is_multicast());
        assert!(!"00:aa:bb:cc:dd:ee".parse::<MacAddress>().unwrap().is_multicast());
        assert!(MacAddress::BROADCAST.is_multicast());
    }

    #[test]
    fn prefix_rejects_host_bits() {
        assert!("10.0.0.1/8".parse::<Prefix>().is_err());
        assert!("10.0.0.0/33".parse::<Prefix>().is_err());
        let p: Prefix = "0.0.0.0/0".parse().unwrap();
        assert!(p.is_default());
        assert!(p.contains(IpAddress::new(8, 8, 8, 8)));
    }

    #[test]
    fn ipv6_literal_rejected() {
        assert!(matches!(
            "2001:db8::1".parse::<IpAddress>(),
            Err(NetError::Ipv6Unsupported(_))
        ));
    }

    #[test]
    fn mac_text_form() {
        let m: MacAddress = "02:00:00:0a:ff:01".parse().unwrap();
        assert_eq!(m.to_string(), "02:00:00:0a:ff:01");
        assert!("02:00:00:0a:ff".parse::<MacAddress>().is_err());
    }

    proptest! {
        #[test]
        fn dotted_quad_round_trip(v in any::<u32>()) {
            let a = IpAddress(v);
            prop_assert_eq!(a.to_string().parse::<IpAddress>().unwrap(), a);
        }

        #[test]
        fn truncating_prefix_contains_source(v in any::<u32>(), len in 0u8..=32) {
            let p = Prefix::truncating(IpAddress(v), len);
            prop_assert!(p.contains(IpAddress(v)));
            prop_assert_eq!(p.to_string().parse::<Prefix>().unwrap(), p);
        }
    }
}
