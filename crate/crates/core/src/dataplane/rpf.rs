use serde::{Deserialize, Serialize};

use super::fib::{Fib, NextHop};
use crate::netcore::IpAddress;

/// Reverse-path check applied to packets arriving on an interface.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpfMode {
    #[default]
    Off,
    Loose,
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpfVerdict {
    Pass,
    Fail,
}

/// Off always passes. Loose passes when the source has a usable route.
/// Strict additionally requires that route to leave through `in_if`.
pub fn rpf_check(mode: RpfMode, fib: &Fib, src: IpAddress, in_if: &str) -> RpfVerdict {
    let pass = match mode {
        RpfMode::Off => true,
        RpfMode::Loose => fib
            .lookup(src)
            .is_some_and(|e| e.next_hop != NextHop::Discard),
        RpfMode::Strict => fib
            .lookup(src)
            .and_then(|e| e.next_hop.out_if())
            .is_some_and(|out| out == in_if),
    };
    if pass {
        RpfVerdict::Pass
    } else {
        RpfVerdict::Fail
    }
}
