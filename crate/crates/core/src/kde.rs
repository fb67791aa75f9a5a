//! Product-Gaussian kernel density estimation over (speed, vertical angle,
//! horizontal angle).
//!
//! The kernel has a diagonal covariance, so it factors into three
//! one-dimensional Gaussians with per-axis bandwidths. [`DensityEstimate`]
//! carries two evaluators over the same samples:
//!
//! * [`DensityEstimate::naive_density_at`] sums every kernel in sample order.
//! * [`DensityEstimate::density_at`] visits only the grid buckets around the
//!   query. Samples are bucketed in cells aligned to multiples of the cell
//!   edge, so every estimate fitted with the same bandwidth shares one cell
//!   geometry.
//!
//! The accelerated evaluator sums every sample in the cells that meet the
//! ball of radius `cutoff = GUARD_FACTOR * truncation_radius` around the
//! query, in bandwidth-scaled coordinates.
//! Each skipped sample contributes at most `exp(-cutoff^2 / 2)` of the kernel
//! peak; when that bound, summed over the skipped samples, is not below
//! `CERTIFY_REL_TOL` of the retained sum the evaluator falls back to the full
//! sum. The result is within `CERTIFY_REL_TOL` of the exact sum for every
//! query, near the data or far from it.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation radius in bandwidth units.
pub const DEFAULT_TRUNCATION_RADIUS: f64 = 6.0;

/// Lower bound applied to densities before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Samples are summed out to this multiple of the truncation radius.
pub const GUARD_FACTOR: f64 = 1.5;

/// Bound on the relative contribution of skipped samples.
pub const CERTIFY_REL_TOL: f64 = 1e-10;

/// Arguments below this are clamped.
pub(crate) const EXP_ARG_MIN: f64 = -700.0;

/// e^x for x in [−700, 0], branch-free so table loops vectorize. Relative
/// error stays within a few ulp.
#[inline(always)]
pub(crate) fn exp_neg(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series of e^r for |r| <= ln2 / 2, truncation error below 1e-17.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let ki = (t.to_bits() as i64).wrapping_sub(SHIFT.to_bits() as i64);
    p * f64::from_bits((ki.wrapping_add(1023) << 52) as u64)
}

const CELLS_PER_CUTOFF: f64 = 4.0;
const MAX_CELLS: usize = 1 << 22;

/// (2π)^(-3/2)
pub(crate) const GAUSS3_NORM: f64 = 0.063_493_635_934_240_97;

/// A batted-ball parameter vector: speed (mph), vertical and horizontal
/// angle (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct ParamVector {
    pub s: f64,
    pub v: f64,
    pub h: f64,
}

impl ParamVector {
    pub const fn new(s: f64, v: f64, h: f64) -> Self {
        Self { s, v, h }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.v.is_finite() && self.h.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s, self.v, self.h]
    }
}

impl From<[f64; 3]> for ParamVector {
    fn from([s, v, h]: [f64; 3]) -> Self {
        Self { s, v, h }
    }
}

impl From<ParamVector> for [f64; 3] {
    fn from(p: ParamVector) -> Self {
        p.to_array()
    }
}

impl std::ops::Sub for ParamVector {
    type Output = ParamVector;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.s - rhs.s, self.v - rhs.v, self.h - rhs.h)
    }
}

impl std::ops::Add for ParamVector {
    type Output = ParamVector;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.s + rhs.s, self.v + rhs.v, self.h + rhs.h)
    }
}

/// Per-axis kernel standard deviations (σ_s, σ_v, σ_h), all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct BandwidthVector {
    sigma_s: f64,
    sigma_v: f64,
    sigma_h: f64,
}

impl BandwidthVector {
    pub fn new(sigma_s: f64, sigma_v: f64, sigma_h: f64) -> Result<Self> {
        for (name, value) in [("sigma_s", sigma_s), ("sigma_v", sigma_v), ("sigma_h", sigma_h)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidBandwidth(format!("{name} = {value} must be positive")));
            }
        }
        Ok(Self { sigma_s, sigma_v, sigma_h })
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma_s
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    pub fn sigma_h(&self) -> f64 {
        self.sigma_h
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.sigma_s, self.sigma_v, self.sigma_h]
    }

    /// Kernel normalization (2π)^(-3/2) / (σ_s σ_v σ_h).
    pub fn kernel_norm(&self) -> f64 {
        GAUSS3_NORM / (self.sigma_s * self.sigma_v * self.sigma_h)
    }
}

impl TryFrom<[f64; 3]> for BandwidthVector {
    type Error = Error;
    fn try_from([s, v, h]: [f64; 3]) -> Result<Self> {
        Self::new(s, v, h)
    }
}

impl From<BandwidthVector> for [f64; 3] {
    fn from(bw: BandwidthVector) -> Self {
        bw.to_array()
    }
}

impl std::fmt::Display for BandwidthVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:.2},{:.2},{:.2})", self.sigma_s, self.sigma_v, self.sigma_h)
    }
}

/// The product-Gaussian kernel evaluated at offset `delta`.
pub fn kernel_eval(delta: ParamVector, bw: BandwidthVector) -> f64 {
    let zs = delta.s / bw.sigma_s;
    let zv = delta.v / bw.sigma_v;
    let zh = delta.h / bw.sigma_h;
    bw.kernel_norm() * (-0.5 * (zs * zs + zv * zv + zh * zh)).exp()
}

/// Mean kernel value over `samples`, summed in sample order.
pub(crate) fn naive_density(samples: &[ParamVector], x: ParamVector, bw: BandwidthVector) -> f64 {
    let total: f64 = samples.iter().map(|&p| kernel_eval(x - p, bw)).sum();
    total / samples.len() as f64
}

/// Uniform grid over raw coordinates. Samples are stored sorted by cell
/// (cells in x, y, z row-major order, input order within a cell) so that a
/// run of cells along z is one contiguous slice.
#[derive(Debug, Clone)]
pub(crate) struct GridIndex {
    cutoff: [f64; 3],
    inv_edge: [f64; 3],
    reach: [i64; 3],
    origin: [i64; 3],
    dims: [usize; 3],
    starts: Vec<u32>,
    coords: [Vec<f64>; 3],
}

impl GridIndex {
    /// Builds an index whose cell runs cover at least `cutoff[axis]` raw units
    /// around any query.
    pub(crate) fn build(samples: &[ParamVector], cutoff: [f64; 3]) -> Self {
        let mut edge = cutoff.map(|c| c / CELLS_PER_CUTOFF);
        loop {
            let inv_edge = edge.map(|e| 1.0 / e);
            let mut lo = [i64::MAX; 3];
            let mut hi = [i64::MIN; 3];
            for p in samples {
                let c = cell_of(p.to_array(), inv_edge);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            let dims: [usize; 3] = std::array::from_fn(|a| (hi[a] - lo[a] + 1) as usize);
            let cells = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            match cells {
                Some(cells) if cells <= MAX_CELLS => {
                    let reach = std::array::from_fn(|a| (cutoff[a] * inv_edge[a]).ceil() as i64);
                    return Self::fill(samples, cutoff, inv_edge, reach, lo, dims, cells);
                }
                _ => edge = edge.map(|e| e * 2.0),
            }
        }
    }

    fn fill(
        samples: &[ParamVector],
        cutoff: [f64; 3],
        inv_edge: [f64; 3],
        reach: [i64; 3],
        origin: [i64; 3],
        dims: [usize; 3],
        cells: usize,
    ) -> Self {
        let linear = |p: &ParamVector| {
            let c = cell_of(p.to_array(), inv_edge);
            let x = (c[0] - origin[0]) as usize;
            let y = (c[1] - origin[1]) as usize;
            let z = (c[2] - origin[2]) as usize;
            (x * dims[1] + y) * dims[2] + z
        };
        let ids: Vec<usize> = samples.iter().map(linear).collect();
        let mut starts = vec![0u32; cells + 1];
        for &id in &ids {
            starts[id + 1] += 1;
        }
        for i in 0..cells {
            starts[i + 1] += starts[i];
        }
        let mut cursor: Vec<u32> = starts[..cells].to_vec();
        let mut coords = [vec![0.0; samples.len()], vec![0.0; samples.len()], vec![0.0; samples.len()]];
        for (p, &id) in samples.iter().zip(&ids) {
            let slot = cursor[id] as usize;
            cursor[id] += 1;
            coords[0][slot] = p.s;
            coords[1][slot] = p.v;
            coords[2][slot] = p.h;
        }
        Self { cutoff, inv_edge, reach, origin, dims, starts, coords }
    }

    pub(crate) fn coords(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.coords[0], &self.coords[1], &self.coords[2])
    }

    /// Visits, in fixed scan order, the slices of sorted samples whose cells
    /// lie within `reach` cells of the query cell on every axis.
    #[inline(always)]
    pub(crate) fn for_each_run(&self, q: ParamVector, mut visit: impl FnMut(Range<usize>)) {
        let c = cell_of(q.to_array(), self.inv_edge);
        let span = |a: usize| -> Option<(usize, usize)> {
            let lo = (c[a] - self.reach[a] - self.origin[a]).max(0);
            let hi = (c[a] + self.reach[a] - self.origin[a]).min(self.dims[a] as i64 - 1);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        let (Some((x0, x1)), Some((y0, y1)), Some((z0, z1))) = (span(0), span(1), span(2)) else {
            return;
        };
        for x in x0..=x1 {
            for y in y0..=y1 {
                let row = (x * self.dims[1] + y) * self.dims[2];
                let start = self.starts[row + z0] as usize;
                let end = self.starts[row + z1 + 1] as usize;
                if start < end {
                    visit(start..end);
                }
            }
        }
    }

    /// Like [`Self::for_each_run`], restricted to cells that meet the
    /// ellipsoid with semi-axes `cutoff` around the query.
    #[inline(always)]
    pub(crate) fn for_each_run_in_ellipsoid(&self, q: ParamVector, mut visit: impl FnMut(Range<usize>)) {
        let q = q.to_array();
        let c = cell_of(q, self.inv_edge);
        // Squared gap from the query to cell `k` along `a`, in cutoff units.
        let gap2 = |a: usize, k: usize| {
            let edge = 1.0 / self.inv_edge[a];
            let lo = (k as i64 + self.origin[a]) as f64 * edge;
            let d = (lo - q[a]).max(q[a] - (lo + edge)).max(0.0) / self.cutoff[a];
            d * d
        };
        let span = |a: usize| -> Option<(usize, usize)> {
            let lo = (c[a] - self.reach[a] - self.origin[a]).max(0);
            let hi = (c[a] + self.reach[a] - self.origin[a]).min(self.dims[a] as i64 - 1);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        let (Some((x0, x1)), Some((y0, y1))) = (span(0), span(1)) else {
            return;
        };
        let zmax = self.dims[2] as i64 - 1;
        for x in x0..=x1 {
            let gx = gap2(0, x);
            if gx > 1.0 {
                continue;
            }
            for y in y0..=y1 {
                let gxy = gx + gap2(1, y);
                if gxy > 1.0 {
                    continue;
                }
                let half = (1.0 - gxy).sqrt() * self.cutoff[2];
                let z0 = (((q[2] - half) * self.inv_edge[2]).floor() as i64 - self.origin[2]).max(0);
                let z1 = (((q[2] + half) * self.inv_edge[2]).floor() as i64 - self.origin[2]).min(zmax);
                if z0 > z1 {
                    continue;
                }
                let row = (x * self.dims[1] + y) * self.dims[2];
                let start = self.starts[row + z0 as usize] as usize;
                let end = self.starts[row + z1 as usize + 1] as usize;
                if start < end {
                    visit(start..end);
                }
            }
        }
    }
}

fn cell_of(p: [f64; 3], inv_edge: [f64; 3]) -> [i64; 3] {
    std::array::from_fn(|a| (p[a] * inv_edge[a]).floor() as i64)
}

/// A kernel density estimate over a fixed sample set.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    samples: Vec<ParamVector>,
    bandwidth: BandwidthVector,
    truncation_radius: f64,
    inv_bw: [f64; 3],
    norm: f64,
    tail_bound: f64,
    index: GridIndex,
}

impl DensityEstimate {
    pub fn fit(samples: &[ParamVector], bandwidth: BandwidthVector, truncation_radius: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        if !(truncation_radius.is_finite() && truncation_radius > 0.0) {
            return Err(Error::InvalidBandwidth(format!(
                "truncation radius {truncation_radius} must be positive"
            )));
        }
        if let Some(bad) = samples.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidBandwidth(format!("non-finite sample {bad:?}")));
        }
        let sigma = bandwidth.to_array();
        let cutoff = GUARD_FACTOR * truncation_radius;
        let index = GridIndex::build(samples, sigma.map(|s| s * cutoff));
        Ok(Self {
            samples: samples.to_vec(),
            bandwidth,
            truncation_radius,
            inv_bw: sigma.map(|s| 1.0 / s),
            norm: bandwidth.kernel_norm(),
            tail_bound: (-0.5 * cutoff * cutoff).exp(),
            index,
        })
    }

    pub fn samples(&self) -> &[ParamVector] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn bandwidth(&self) -> BandwidthVector {
        self.bandwidth
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    /// Exact sum over every sample, in sample order.
    pub fn naive_density_at(&self, x: ParamVector) -> f64 {
        naive_density(&self.samples, x, self.bandwidth)
    }

    /// Accelerated evaluation through the grid index.
    pub fn density_at(&self, x: ParamVector) -> f64 {
        let (sum, counted) = self.truncated_sum(x);
        let skipped = (self.samples.len() - counted) as f64;
        if sum * CERTIFY_REL_TOL < skipped * self.tail_bound {
            return self.naive_density_at(x);
        }
        sum * self.norm / self.samples.len() as f64
    }

    /// Evaluates `density_at` for every query, in query order.
    pub fn density_batch(&self, queries: &[ParamVector]) -> Vec<f64> {
        queries.par_iter().map(|&q| self.density_at(q)).collect()
    }

    /// Sum of unnormalized kernels over the samples in the cells around `x`,
    /// and the number of such samples. Every sample within the cutoff box is
    /// among them.
    fn truncated_sum(&self, x: ParamVector) -> (f64, usize) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports AVX-512F, checked above.
            return unsafe { self.truncated_sum_avx512(x) };
        }
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked above.
            return unsafe { self.truncated_sum_avx2(x) };
        }
        self.truncated_sum_body(x)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn truncated_sum_avx512(&self, x: ParamVector) -> (f64, usize) {
        self.truncated_sum_body(x)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn truncated_sum_avx2(&self, x: ParamVector) -> (f64, usize) {
        self.truncated_sum_body(x)
    }

    #[inline(always)]
    fn truncated_sum_body(&self, x: ParamVector) -> (f64, usize) {
        let (xs, ys, zs) = self.index.coords();
        let q = x.to_array();
        let mut sum = 0.0;
        let mut counted = 0usize;
        self.index.for_each_run_in_ellipsoid(x, |run| {
            counted += run.len();
            sum += run_sum([&xs[run.clone()], &ys[run.clone()], &zs[run]], q, self.inv_bw);
        });
        (sum, counted)
    }
}

/// Σ exp(−|z|²/2) over one run of samples, z the bandwidth-scaled offset from
/// `q`. Eight partial sums so the loop vectorizes.
#[inline(always)]
fn run_sum(d: [&[f64]; 3], q: [f64; 3], inv: [f64; 3]) -> f64 {
    const LANES: usize = 8;
    let term = |s: f64, v: f64, h: f64| {
        let (du, dv, dw) = ((s - q[0]) * inv[0], (v - q[1]) * inv[1], (h - q[2]) * inv[2]);
        let arg = -0.5 * (du * du + dv * dv + dw * dw);
        let e = exp_neg(arg.max(EXP_ARG_MIN));
        if arg < EXP_ARG_MIN {
            0.0
        } else {
            e
        }
    };
    let [s, v, h] = d;
    let mut acc = [0.0; LANES];
    let (sc, vc, hc) = (s.chunks_exact(LANES), v.chunks_exact(LANES), h.chunks_exact(LANES));
    let (sr, vr, hr) = (sc.remainder(), vc.remainder(), hc.remainder());
    for ((s8, v8), h8) in sc.zip(vc).zip(hc) {
        for l in 0..LANES {
            acc[l] += term(s8[l], v8[l], h8[l]);
        }
    }
    let mut tail = 0.0;
    for ((&s1, &v1), &h1) in sr.iter().zip(vr).zip(hr) {
        tail += term(s1, v1, h1);
    }
    acc.iter().sum::<f64>() + tail
}
