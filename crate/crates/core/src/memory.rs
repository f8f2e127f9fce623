//! Heap accounting for the instantiation profiler.
//!
//! [`CountingAlloc`] wraps the system allocator and tracks live and peak
//! bytes per thread. A binary opts in with
//! `#[global_allocator] static A: CountingAlloc = CountingAlloc;`. Without it
//! the profiler falls back to the resident set size reported by the OS.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

pub struct CountingAlloc;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
    static SEEN: Cell<bool> = const { Cell::new(false) };
}

fn record(delta: isize) {
    // try_with: the slots may already be gone during thread teardown.
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|p| {
            if now > p.get() {
                p.set(now);
            }
        });
    });
    let _ = SEEN.try_with(|s| s.set(true));
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        record(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        p
    }
}

/// Whether [`CountingAlloc`] is the global allocator of this process.
pub fn counting_installed() -> bool {
    let probe = Box::new(0u64);
    std::hint::black_box(&probe);
    drop(probe);
    SEEN.with(Cell::get)
}

/// Live heap bytes allocated by the current thread.
pub fn live_bytes() -> isize {
    LIVE.with(Cell::get)
}

/// Restarts peak tracking from the current live value.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|p| p.set(live));
}

pub fn peak_bytes() -> isize {
    PEAK.with(Cell::get)
}

/// Resident set size of the process in bytes, if the OS reports it.
pub fn resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Measures memory attributable to `f` and its result, which stays alive
/// until the measurement is taken. Returns the result, the byte count and
/// the method used.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64, &'static str) {
    if counting_installed() {
        let base = live_bytes();
        reset_peak();
        let out = f();
        let peak = (peak_bytes() - base).max(0) as u64;
        (out, peak, "heap-counting-allocator")
    } else {
        let before = resident_bytes().unwrap_or(0);
        let out = f();
        let after = resident_bytes().unwrap_or(0);
        (out, after.saturating_sub(before), "proc-vmrss-delta")
    }
}
