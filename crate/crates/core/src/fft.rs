//! Four-dimensional complex FFT over row-major arrays (axis 0 slowest).

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::exec;

/// Target number of samples handled by one work unit.
const UNIT_ELEMENTS: usize = 1 << 14;

pub struct Fft4 {
    grid: [usize; 4],
    forward: [Arc<dyn Fft<f64>>; 4],
    inverse: [Arc<dyn Fft<f64>>; 4],
}

impl Fft4 {
    fn build(grid: [usize; 4]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: std::array::from_fn(|a| planner.plan_fft_forward(grid[a])),
            inverse: std::array::from_fn(|a| planner.plan_fft_inverse(grid[a])),
        }
    }

    /// Shared plan for `grid`, built on first use.
    pub fn for_grid(grid: [usize; 4]) -> Arc<Fft4> {
        static CACHE: OnceLock<Mutex<HashMap<[usize; 4], Arc<Fft4>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(grid)
            .or_insert_with(|| Arc::new(Fft4::build(grid)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized transform with kernel exp(-2 pi i j k / g) (forward) or
    /// exp(+2 pi i j k / g) (inverse), applied in place.
    ///
    /// Each pass transforms the contiguous lines of the last axis and writes
    /// the result rotated so that the previous axis becomes last; four passes
    /// restore the original layout.
    pub fn process(&self, data: &mut [Complex64], direction: FftDirection) {
        assert_eq!(data.len(), self.len(), "buffer does not match FFT grid");
        let plans = match direction {
            FftDirection::Forward => &self.forward,
            FftDirection::Inverse => &self.inverse,
        };
        let mut spare = SPARE.with(|s| std::mem::take(&mut *s.borrow_mut()));
        spare.resize(data.len(), Complex64::default());
        let (mut cur, mut next) = (data, spare.as_mut_slice());
        for axis in (0..4).rev() {
            transform_and_rotate(cur, next, self.grid[axis], plans[axis].as_ref());
            std::mem::swap(&mut cur, &mut next);
        }
        SPARE.with(|s| *s.borrow_mut() = spare);
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.process(data, FftDirection::Forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.process(data, FftDirection::Inverse);
    }
}

thread_local! {
    static SPARE: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
}

/// Transforms every contiguous line of length `len` in `src`, then stores the
/// `len x rows` transpose of the `rows x len` result in `dst`.
fn transform_and_rotate(
    src: &mut [Complex64],
    dst: &mut [Complex64],
    len: usize,
    plan: &dyn Fft<f64>,
) {
    let rows = src.len() / len;
    let lines = (UNIT_ELEMENTS / len).max(1);
    let out = SharedMut(dst.as_mut_ptr());
    exec::for_each_chunk_mut(src, len * lines, |b, chunk| {
        if len > 1 {
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(chunk, &mut scratch);
        }
        let r0 = b * lines;
        let count = chunk.len() / len;
        for k in 0..len {
            // SAFETY: chunk b writes only dst[k * rows + r] for r in
            // r0..r0 + count, which are disjoint across chunks.
            unsafe {
                let row = out.get().add(k * rows + r0);
                for r in 0..count {
                    *row.add(r) = chunk[r * len + k];
                }
            }
        }
    });
}

#[derive(Clone, Copy)]
struct SharedMut(*mut Complex64);

impl SharedMut {
    fn get(self) -> *mut Complex64 {
        self.0
    }
}

unsafe impl Send for SharedMut {}
unsafe impl Sync for SharedMut {}
