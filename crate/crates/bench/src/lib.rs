//! Inputs shared by the criterion benches.

use lab_core::dataplane::{Fib, FibEntry, NextHop};
use lab_core::{IpAddress, Prefix};

/// A FIB of `n` pseudo-random prefixes (xorshift, fixed seed).
pub fn synthetic_fib(n: usize) -> Fib {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut fib = Fib::new();
    while fib.len() < n {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let len = 8 + (state % 25) as u8;
        let prefix = Prefix::truncating(IpAddress(state as u32), len);
        let _ = fib.insert(FibEntry::new(prefix, NextHop::Discard));
    }
    fib
}
