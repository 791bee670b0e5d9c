//! Thread-local multiply-accumulate counter.
//!
//! Matrix products and the placeholder aggregation report their MACs here so a
//! forward pass can be audited against the closed-form cost model.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn add(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

pub fn reset() {
    MACS.with(|c| c.set(0));
}

pub fn count() -> u64 {
    MACS.with(Cell::get)
}

/// Runs `f` and returns its result with the MACs it performed on this thread.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = count();
    let out = f();
    (out, count() - before)
}
