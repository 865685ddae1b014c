//! Counting global allocator used as the benchmark's peak meter.
//!
//! Counters are per thread, so concurrent work on other threads does not
//! leak into a measurement. Install it in the binary that measures:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: xcaflow::meter::CountingAlloc = xcaflow::meter::CountingAlloc;
//! ```

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

use xcaflow_core::bench::PeakMeter;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
    static BASE: Cell<isize> = const { Cell::new(0) };
    static SEEN: Cell<bool> = const { Cell::new(false) };
}

fn record(delta: isize) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|p| p.set(p.get().max(now)));
    });
    let _ = SEEN.try_with(|s| s.set(true));
}

pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        record(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        p
    }
}

/// Meter over the calling thread's counters.
#[derive(Clone, Copy, Debug, Default)]
pub struct ThreadMeter;

impl ThreadMeter {
    /// Whether the counting allocator is installed in this process.
    pub fn active() -> bool {
        let v: Vec<u8> = Vec::with_capacity(1);
        drop(v);
        SEEN.with(|s| s.get())
    }
}

impl PeakMeter for ThreadMeter {
    fn reset(&self) {
        let live = LIVE.with(|l| l.get());
        BASE.with(|b| b.set(live));
        PEAK.with(|p| p.set(live));
    }

    fn peak_bytes(&self) -> usize {
        let (peak, base) = (PEAK.with(|p| p.get()), BASE.with(|b| b.get()));
        (peak - base).max(0) as usize
    }
}
