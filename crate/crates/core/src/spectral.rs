//! Multi-dimensional FFTs on uniform grids of `[0, 2π)^d`, with a shared
//! plan cache.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;

fn plan(size: usize, inverse: bool) -> Plan {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Plan>)>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, plans) = &mut *guard;
    plans
        .entry((size, inverse))
        .or_insert_with(|| {
            if inverse {
                planner.plan_fft_inverse(size)
            } else {
                planner.plan_fft_forward(size)
            }
        })
        .clone()
}

/// Smallest `n ≥ min` whose prime factors are all 2 or 3; these sizes ran
/// fastest with rustfft in our measurements.
pub fn fast_size(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut r = n;
        for p in [2, 3] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return n;
        }
        n += 1;
    }
}

/// Unnormalized d-dimensional transform in place; `inverse` uses `e^{+i}`.
#[cfg(test)]
pub fn fft_nd(data: &mut [Complex64], d: usize, size: usize, inverse: bool) {
    fft_nd_banded(data, d, size, inverse, None);
}

/// As [`fft_nd`], exploiting a frequency band `|k| ≤ m` (bins `0..=m` and
/// `size-m..size` on each axis). For an inverse transform the input must
/// vanish outside the band; for a forward transform only outputs inside
/// the band are computed, the rest of `data` is left unspecified.
pub fn fft_nd_banded(data: &mut [Complex64], d: usize, size: usize, inverse: bool, band: Option<usize>) {
    debug_assert_eq!(data.len(), size.pow(d as u32));
    let fft = plan(size, inverse);
    let lines = line_plan(d, size, inverse, band);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut batch: Vec<Complex64> = Vec::with_capacity(data.len());
    for (axis, starts) in lines.iter().enumerate().rev() {
        let stride = size.pow((d - 1 - axis) as u32);
        if stride == 1 && starts.len() * size == data.len() {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        // lines with consecutive starts are moved together so that every
        // access to `data` reads a contiguous run
        let mut i = 0;
        while i < starts.len() {
            let first = starts[i];
            let mut run = 1;
            while i + run < starts.len() && run < RUN && starts[i + run] == first + run {
                run += 1;
            }
            batch.clear();
            batch.resize(run * size, Complex64::default());
            for k in 0..size {
                let row = &data[first + k * stride..first + k * stride + run];
                for (j, v) in row.iter().enumerate() {
                    batch[j * size + k] = *v;
                }
            }
            fft.process_with_scratch(&mut batch, &mut scratch);
            for k in 0..size {
                let row = &mut data[first + k * stride..first + k * stride + run];
                for (j, v) in row.iter_mut().enumerate() {
                    *v = batch[j * size + k];
                }
            }
            i += run;
        }
    }
}

/// Lines gathered per batch; the batch stays cache resident.
const RUN: usize = 32;

type LinePlan = Arc<Vec<Vec<usize>>>;

/// Start offsets of the lines transformed along each axis, in processing
/// order `d-1, …, 0`. When transforming axis `a` an inverse transform can
/// skip lines whose not-yet-transformed coordinates (axes `< a`) lie outside
/// the band; a forward transform can skip lines whose already-transformed
/// coordinates (axes `> a`) do.
fn line_plan(d: usize, size: usize, inverse: bool, band: Option<usize>) -> LinePlan {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize, bool, Option<usize>), LinePlan>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().expect("line plan cache poisoned").get(&(d, size, inverse, band)) {
        return p.clone();
    }
    let in_band = |c: usize| match band {
        Some(m) => c <= m || c + m >= size,
        None => true,
    };
    let total = size.pow(d as u32);
    let mut coords = vec![0usize; d];
    let plan: Vec<Vec<usize>> = (0..d)
        .map(|axis| {
            let stride = size.pow((d - 1 - axis) as u32);
            (0..total)
                .filter(|&i| (i / stride) % size == 0)
                .filter(|&i| {
                    let mut rem = i;
                    for c in coords.iter_mut().rev() {
                        *c = rem % size;
                        rem /= size;
                    }
                    (0..d).all(|ax| {
                        let pending = if inverse { ax < axis } else { ax > axis };
                        !pending || in_band(coords[ax])
                    })
                })
                .collect()
        })
        .collect();
    let plan = Arc::new(plan);
    cache
        .lock()
        .expect("line plan cache poisoned")
        .insert((d, size, inverse, band), plan.clone());
    plan
}

/// Unnormalized 1-D transform of every consecutive `size`-chunk of `data`.
pub fn fft_rows(data: &mut [Complex64], size: usize, inverse: bool) {
    let fft = plan(size, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
}

/// Maps every lattice index of a radius-`m` lattice to its flat grid bin.
pub fn bin_table(d: usize, m: i64, size: usize) -> Arc<Vec<usize>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, i64, usize), Arc<Vec<usize>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("bin table cache poisoned");
    guard
        .entry((d, m, size))
        .or_insert_with(|| Arc::new(compute_bin_table(d, m, size)))
        .clone()
}

fn compute_bin_table(d: usize, m: i64, size: usize) -> Vec<usize> {
    let side = (2 * m + 1) as usize;
    let len = side.pow(d as u32);
    let mut out = Vec::with_capacity(len);
    let mut coords = vec![0usize; d];
    for mut idx in 0..len {
        for c in coords.iter_mut().rev() {
            *c = idx % side;
            idx /= side;
        }
        let mut bin = 0usize;
        for &c in &coords {
            let n = c as i64 - m;
            bin = bin * size + n.rem_euclid(size as i64) as usize;
        }
        out.push(bin);
    }
    out
}
