//! Thread-local multiply-accumulate counter.
//!
//! Kernels that perform `a <- a + b * c` report how many they executed via
//! [`record`]. Counting is off unless a closure runs inside [`count`], so the
//! hot path pays one thread-local flag read.

use std::cell::Cell;

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static COUNT: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn record(n: u64) {
    ACTIVE.with(|a| {
        if a.get() {
            COUNT.with(|c| c.set(c.get() + n));
        }
    });
}

/// Runs `f` and returns its result along with the number of MACs executed on
/// this thread while it ran. Nested calls are not supported.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, u64) {
    COUNT.with(|c| c.set(0));
    ACTIVE.with(|a| a.set(true));
    let out = f();
    ACTIVE.with(|a| a.set(false));
    (out, COUNT.with(|c| c.get()))
}
