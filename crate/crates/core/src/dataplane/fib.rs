use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DataplaneError, Origin};
use crate::netcore::{IpAddress, Prefix};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextHop {
    Via { neighbor: IpAddress, out_if: String },
    Connected { out_if: String },
    Discard,
}

impl NextHop {
    pub fn out_if(&self) -> Option<&str> {
        match self {
            NextHop::Via { out_if, .. } | NextHop::Connected { out_if } => Some(out_if),
            NextHop::Discard => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FibEntry {
    pub prefix: Prefix,
    pub next_hop: NextHop,
    #[serde(default, skip_serializing_if = "Origin::is_config")]
    pub origin: Origin,
}

impl FibEntry {
    pub fn new(prefix: Prefix, next_hop: NextHop) -> Self {
        FibEntry {
            prefix,
            next_hop,
            origin: Origin::Config,
        }
    }
}

/// Longest-prefix-match table. One hash map per prefix length, probed from
/// /32 down to /0. At most one entry per exact prefix.
#[derive(Clone, Debug)]
pub struct Fib {
    entries: Vec<FibEntry>,
    by_len: Vec<HashMap<u32, usize>>,
    // bit n set when some entry has length n
    populated: u64,
}

impl Fib {
    pub fn new() -> Self {
        Fib {
            entries: Vec::new(),
            by_len: vec![HashMap::new(); 33],
            populated: 0,
        }
    }

    pub fn from_entries<I: IntoIterator<Item = FibEntry>>(entries: I) -> Result<Self, DataplaneError> {
        let mut fib = Fib::new();
        for e in entries {
            fib.insert(e)?;
        }
        Ok(fib)
    }

    pub fn insert(&mut self, entry: FibEntry) -> Result<(), DataplaneError> {
        let len = usize::from(entry.prefix.len());
        let key = entry.prefix.network().0;
        if self.by_len[len].contains_key(&key) {
            return Err(DataplaneError::DuplicatePrefix(entry.prefix));
        }
        self.by_len[len].insert(key, self.entries.len());
        self.populated |= 1 << len;
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[FibEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, dst: IpAddress) -> Option<&FibEntry> {
        let mut mask = self.populated;
        while mask != 0 {
            let len = 63 - mask.leading_zeros() as usize;
            mask &= !(1 << len);
            let key = Prefix::truncating(dst, len as u8).network().0;
            if let Some(&i) = self.by_len[len].get(&key) {
                return Some(&self.entries[i]);
            }
        }
        None
    }
}

impl Default for Fib {
    fn default() -> Self {
        Fib::new()
    }
}

/// Marker for a failed lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoRoute;

pub fn fib_lookup(fib: &Fib, dst: IpAddress) -> Result<&FibEntry, NoRoute> {
    fib.lookup(dst).ok_or(NoRoute)
}
