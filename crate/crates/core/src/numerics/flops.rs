//! Thread-local multiply counter. Forward kernels report the number of scalar
//! multiplications they execute; tests compare this against analytic cost models.

use std::cell::Cell;

thread_local! {
    static MULTIPLIES: Cell<u64> = const { Cell::new(0) };
}

pub fn reset() {
    MULTIPLIES.with(|c| c.set(0));
}

pub fn read() -> u64 {
    MULTIPLIES.with(|c| c.get())
}

#[inline]
pub fn record(n: u64) {
    MULTIPLIES.with(|c| c.set(c.get() + n));
}

/// Runs `f` and returns its result together with the multiplies it recorded.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = read();
    let out = f();
    (out, read() - before)
}
