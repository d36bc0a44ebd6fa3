//! Thread-local recycling pool for the large f64 buffers that a training
//! step allocates and frees in the same pattern every iteration. Reuse
//! keeps the step's working set in resident, cache-warm pages instead of
//! paying fresh-page costs on every operation.
//!
//! `acquire` returns a buffer with arbitrary (finite) contents for callers
//! that overwrite every element; `acquire_zeroed` clears it first. Both
//! are plain `Vec<f64>`s, so forgetting to release one is a leak of reuse,
//! never unsoundness.

use std::cell::RefCell;

const MAX_POOL_BYTES: usize = 768 << 20;

thread_local! {
    static POOL: RefCell<(Vec<Vec<f64>>, usize)> = const { RefCell::new((Vec::new(), 0)) };
}

/// A buffer of exactly `len` elements with unspecified (finite) contents.
pub fn acquire(len: usize) -> Vec<f64> {
    POOL.with(|p| {
        let (bufs, bytes) = &mut *p.borrow_mut();
        if let Some(i) = bufs.iter().position(|b| b.len() == len) {
            *bytes -= len * 8;
            return bufs.swap_remove(i);
        }
        vec![0.0; len]
    })
}

/// A zero-filled buffer of `len` elements.
pub fn acquire_zeroed(len: usize) -> Vec<f64> {
    let mut b = acquire(len);
    b.iter_mut().for_each(|v| *v = 0.0);
    b
}

/// Return a buffer for reuse. Buffers beyond the pool budget are dropped.
pub fn release(buf: Vec<f64>) {
    if buf.len() < 1024 {
        return;
    }
    POOL.with(|p| {
        let (bufs, bytes) = &mut *p.borrow_mut();
        if *bytes + buf.len() * 8 <= MAX_POOL_BYTES {
            *bytes += buf.len() * 8;
            bufs.push(buf);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acquire_reuses_released_buffers() {
        let mut a = acquire(4096);
        a[0] = 42.0;
        let ptr = a.as_ptr();
        release(a);
        let b = acquire(4096);
        assert_eq!(b.as_ptr(), ptr);
        let z = acquire_zeroed(4096);
        assert!(z.iter().all(|v| *v == 0.0));
        release(b);
        release(z);
    }
}
