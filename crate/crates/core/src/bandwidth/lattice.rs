//! Pseudo-log-likelihood scores for every point of a bandwidth lattice in one
//! pass over the validation points.
//!
//! For a validation point q the unnormalized kernel sum at bandwidth
//! (σ_s, σ_v, σ_h) is Σ_i a_i(σ_s) b_i(σ_v) c_i(σ_h), one Gaussian factor per
//! axis. The engine gathers the neighbors of q once, at the widest bandwidth
//! of the lattice, tabulates the per-axis factors for every lattice value and
//! contracts the three tables. Factors more than `truncation_radius`
//! bandwidths out are zero, so samples beyond the radius along any axis drop
//! out, as [`DensityEstimate::density_at`] allows. Neighbors are
//! ordered by the first v-index at which they count, so each σ_v reads a
//! prefix of the tables.
//!
//! Unlike the pointwise evaluator there is no guard band and no fallback to
//! the full sum, so scores agree with [`pseudo_log_likelihood`] to the
//! truncation error, about exp(−r²/2) relative. A validation point with no
//! training sample inside the radius scores the density floor.
//!
//! [`pseudo_log_likelihood`]: super::pseudo_log_likelihood
//!
//! [`DensityEstimate::density_at`]: crate::kde::DensityEstimate::density_at

use rayon::prelude::*;

use super::DropAccumulator;
use crate::error::{Error, Result};
use crate::kde::{exp_neg, BandwidthVector, GridIndex, ParamVector, DENSITY_FLOOR, EXP_ARG_MIN};

const NEIGHBOR_CHUNK: usize = 256;
const QUERY_CHUNK: usize = 8;
const QUERY_WAVE: usize = 64;

/// A rectilinear lattice of bandwidth vectors. Points are ordered s-major,
/// then v, then h, which is ascending lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    axes: [Vec<f64>; 3],
}

impl Lattice {
    pub fn new(s: Vec<f64>, v: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        for axis in [&s, &v, &h] {
            if axis.is_empty() {
                return Err(Error::InvalidSearch("empty lattice axis".into()));
            }
            if axis.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidSearch("lattice values must be positive".into()));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSearch("lattice axis must be strictly ascending".into()));
            }
        }
        Ok(Self { axes: [s, v, h] })
    }

    /// Points lo + k·step ≤ hi on every axis.
    pub fn regular(lo: BandwidthVector, hi: BandwidthVector, step: f64) -> Result<Self> {
        let lo = lo.to_array();
        let hi = hi.to_array();
        let axes: [Vec<f64>; 3] = std::array::from_fn(|a| axis_values(lo[a], hi[a], step, 0, usize::MAX));
        let [s, v, h] = axes;
        Self::new(s, v, h)
    }

    pub fn axes(&self) -> &[Vec<f64>; 3] {
        &self.axes
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.axes[0].len(), self.axes[1].len(), self.axes[2].len()]
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> BandwidthVector {
        let [_, nv, nh] = self.dims();
        let kh = index % nh;
        let kv = (index / nh) % nv;
        let ks = index / (nh * nv);
        BandwidthVector::new(self.axes[0][ks], self.axes[1][kv], self.axes[2][kh])
            .expect("lattice values are positive")
    }

    pub fn points(&self) -> impl Iterator<Item = BandwidthVector> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

/// lo + k·step for k in [k_min, k_max] with lo + k·step ≤ hi.
pub(crate) fn axis_values(lo: f64, hi: f64, step: f64, k_min: usize, k_max: usize) -> Vec<f64> {
    let slack = 1e-9 * step;
    (k_min..=k_max).map(|k| lo + k as f64 * step).take_while(|&x| x <= hi + slack).collect()
}

/// Scores every lattice point: fits on `train`, evaluates each validation
/// point, drops the `drop` smallest densities and sums the logs of the rest.
pub fn score_lattice(
    train: &[ParamVector],
    validation: &[ParamVector],
    lattice: &Lattice,
    drop: usize,
    truncation_radius: f64,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::EmptySamples);
    }
    if validation.len() <= drop {
        return Err(Error::ValidationTooSmall { len: validation.len(), drop });
    }
    if !(truncation_radius.is_finite() && truncation_radius > 0.0) {
        return Err(Error::InvalidSearch(format!("truncation radius {truncation_radius} must be positive")));
    }
    let engine = Engine::new(train, lattice, truncation_radius);
    let mut accumulators: Vec<DropAccumulator> = (0..lattice.len()).map(|_| DropAccumulator::new(drop)).collect();
    for wave in validation.chunks(QUERY_CHUNK * QUERY_WAVE) {
        let results: Vec<Vec<f64>> = wave
            .par_chunks(QUERY_CHUNK)
            .map(|queries| {
                let mut scratch = Scratch::default();
                let mut out = Vec::with_capacity(queries.len() * lattice.len());
                for &q in queries {
                    engine.log_densities(q, &mut scratch, &mut out);
                }
                out
            })
            .collect();
        for block in &results {
            for row in block.chunks_exact(lattice.len()) {
                for (acc, &x) in accumulators.iter_mut().zip(row) {
                    acc.push(x);
                }
            }
        }
    }
    Ok(accumulators.into_iter().map(DropAccumulator::finish).collect())
}

struct Engine<'a> {
    train: &'a [ParamVector],
    lattice: &'a Lattice,
    index: GridIndex,
    inv: [Vec<f64>; 3],
    inv_max: [f64; 3],
    cutoff: f64,
    norms: Vec<f64>,
    padded_h: usize,
}

#[derive(Default)]
struct Scratch {
    delta: Vec<[f64; 3]>,
    first_s: Vec<u32>,
    first_h: Vec<u32>,
    key: Vec<usize>,
    counts: Vec<usize>,
    order: Vec<usize>,
    prefix: Vec<usize>,
    sorted: [Vec<f64>; 3],
    sorted_first_s: Vec<u32>,
    sorted_first_h: Vec<u32>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    t: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(train: &'a [ParamVector], lattice: &'a Lattice, truncation_radius: f64) -> Self {
        let cutoff = truncation_radius;
        let axes = lattice.axes();
        let widest: [f64; 3] = std::array::from_fn(|a| *axes[a].last().expect("nonempty axis"));
        let index = GridIndex::build(train, widest.map(|s| s * cutoff));
        let inv: [Vec<f64>; 3] = std::array::from_fn(|a| axes[a].iter().map(|s| 1.0 / s).collect());
        let norms = lattice.points().map(|bw| bw.kernel_norm()).collect();
        Self {
            train,
            lattice,
            index,
            inv_max: widest.map(|s| 1.0 / s),
            inv,
            cutoff,
            norms,
            padded_h: axes[2].len().div_ceil(4) * 4,
        }
    }

    /// Appends ln(max(p̂(q), floor)) for every lattice point, in lattice order.
    fn log_densities(&self, q: ParamVector, sc: &mut Scratch, out: &mut Vec<f64>) {
        let [ns, nv, nh] = self.lattice.dims();
        let nhp = self.padded_h;
        let cut = self.cutoff;
        let (xs, ys, zs) = self.index.coords();

        sc.delta.clear();
        self.index.for_each_run(q, |run| {
            for k in run {
                let d = [xs[k] - q.s, ys[k] - q.v, zs[k] - q.h];
                if (0..3).all(|a| (d[a] * self.inv_max[a]).abs() <= cut) {
                    sc.delta.push(d);
                }
            }
        });
        let n = sc.delta.len();

        // Stable counting sort on (first v-index, first h-index, first s-index)
        // at which the neighbor counts. Each σ_v then reads a prefix, and
        // neighbors in one chunk tend to share their leading zero factors.
        let first = |axis: usize, d: f64| self.inv[axis].partition_point(|&iv| (d * iv).abs() > cut);
        sc.first_s.clear();
        sc.first_h.clear();
        sc.key.clear();
        for d in &sc.delta {
            let (fs, fv, fh) = (first(0, d[0]), first(1, d[1]), first(2, d[2]));
            sc.first_s.push(fs as u32);
            sc.first_h.push(fh as u32);
            sc.key.push((fv * nh + fh) * ns + fs);
        }
        let keys = nv * nh * ns;
        sc.counts.clear();
        sc.counts.resize(keys + 1, 0);
        for &k in &sc.key {
            sc.counts[k + 1] += 1;
        }
        for k in 0..keys {
            sc.counts[k + 1] += sc.counts[k];
        }
        sc.prefix.clear();
        sc.prefix.extend((1..=nv).map(|kv| sc.counts[kv * nh * ns]));
        sc.order.clear();
        sc.order.resize(n, 0);
        for (i, &k) in sc.key.iter().enumerate() {
            sc.order[sc.counts[k]] = i;
            sc.counts[k] += 1;
        }

        sc.sorted_first_s.clear();
        sc.sorted_first_h.clear();
        for axis in &mut sc.sorted {
            axis.clear();
        }
        for &i in &sc.order {
            let d = sc.delta[i];
            sc.sorted_first_s.push(sc.first_s[i]);
            sc.sorted_first_h.push(sc.first_h[i]);
            for (axis, &x) in sc.sorted.iter_mut().zip(&d) {
                axis.push(x);
            }
        }
        // Tables are built and contracted one chunk at a time so they stay
        // in cache.
        sc.a.clear();
        sc.a.resize(ns * NEIGHBOR_CHUNK, 0.0);
        sc.b.clear();
        sc.b.resize(nv * NEIGHBOR_CHUNK, 0.0);
        sc.c.clear();
        sc.c.resize(NEIGHBOR_CHUNK * nhp, 0.0);
        sc.t.clear();
        sc.t.resize(ns * nv * nhp, 0.0);
        let mut local_prefix = vec![0; nv];
        for start in (0..n).step_by(NEIGHBOR_CHUNK) {
            let end = (start + NEIGHBOR_CHUNK).min(n);
            let len = end - start;
            let d = [&sc.sorted[0][start..end], &sc.sorted[1][start..end], &sc.sorted[2][start..end]];
            fill_tables(&self.inv, cut, d, &mut sc.a[..ns * len], &mut sc.b[..nv * len], &mut sc.c[..len * nhp], nhp);
            for (local, &p) in local_prefix.iter_mut().zip(&sc.prefix) {
                *local = p.clamp(start, end) - start;
            }
            let tables = Tables {
                a: &sc.a[..ns * len],
                b: &sc.b[..nv * len],
                c: &sc.c[..len * nhp],
                prefix: &local_prefix,
                first_s: &sc.sorted_first_s[start..end],
                first_h: &sc.sorted_first_h[start..end],
                n: len,
                dims: [ns, nv, nhp],
            };
            contract(&mut sc.t, &tables);
        }

        let n_train = self.train.len() as f64;
        for ks in 0..ns {
            for kv in 0..nv {
                let row = &sc.t[(ks * nv + kv) * nhp..][..nh];
                for (kh, &sum) in row.iter().enumerate() {
                    let idx = (ks * nv + kv) * nh + kh;
                    let density = sum * self.norms[idx] / n_train;
                    out.push(density.max(DENSITY_FLOOR).ln());
                }
            }
        }
    }
}

fn fill_tables(inv: &[Vec<f64>; 3], cut: f64, d: [&[f64]; 3], a: &mut [f64], b: &mut [f64], c: &mut [f64], nhp: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports AVX-512F, checked above.
        unsafe { fill_tables_avx512(inv, cut, d, a, b, c, nhp) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked above.
        unsafe { fill_tables_avx2(inv, cut, d, a, b, c, nhp) };
        return;
    }
    fill_tables_body(inv, cut, d, a, b, c, nhp);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn fill_tables_avx512(inv: &[Vec<f64>; 3], cut: f64, d: [&[f64]; 3], a: &mut [f64], b: &mut [f64], c: &mut [f64], nhp: usize) {
    fill_tables_body(inv, cut, d, a, b, c, nhp);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_tables_avx2(inv: &[Vec<f64>; 3], cut: f64, d: [&[f64]; 3], a: &mut [f64], b: &mut [f64], c: &mut [f64], nhp: usize) {
    fill_tables_body(inv, cut, d, a, b, c, nhp);
}

/// a[ks][j], b[kv][j] and c[j][kh] for neighbors already in sorted order.
#[inline(always)]
fn fill_tables_body(inv: &[Vec<f64>; 3], cut: f64, d: [&[f64]; 3], a: &mut [f64], b: &mut [f64], c: &mut [f64], nhp: usize) {
    let n = d[0].len();
    if n == 0 {
        return;
    }
    for (table, axis) in [(a, 0), (b, 1)] {
        for (row, &iv) in table.chunks_exact_mut(n).zip(&inv[axis]) {
            for (out, &x) in row.iter_mut().zip(d[axis]) {
                *out = factor(x, iv, cut);
            }
        }
    }
    let nh = inv[2].len();
    for (row, &x) in c.chunks_exact_mut(nhp).zip(d[2]) {
        for (out, &iv) in row[..nh].iter_mut().zip(&inv[2]) {
            *out = factor(x, iv, cut);
        }
    }
}

#[inline(always)]
fn factor(d: f64, inv: f64, cut: f64) -> f64 {
    let z = d * inv;
    let e = exp_neg((-0.5 * z * z).max(EXP_ARG_MIN));
    if z.abs() > cut {
        0.0
    } else {
        e
    }
}

/// Per-axis factor tables of the neighbors of one query, in sorted order.
struct Tables<'s> {
    /// a[ks * n + j]
    a: &'s [f64],
    /// b[kv * n + j]
    b: &'s [f64],
    /// c[j * padded_h + kh]
    c: &'s [f64],
    /// Neighbors j < prefix[kv] have a nonzero v-factor at kv.
    prefix: &'s [usize],
    /// a[ks][j] is zero for ks < first_s[j].
    first_s: &'s [u32],
    /// c[j][kh] is zero for kh < first_h[j].
    first_h: &'s [u32],
    n: usize,
    dims: [usize; 3],
}

/// t[ks][kv][kh] += Σ_j a[ks][j] b[kv][j] c[j][kh] over j < prefix[kv].
fn contract(t: &mut [f64], tables: &Tables<'_>) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports AVX-512F, checked above.
        unsafe { contract_avx512(t, tables) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked above.
        unsafe { contract_avx2(t, tables) };
        return;
    }
    contract_body(t, tables);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn contract_avx512(t: &mut [f64], tables: &Tables<'_>) {
    contract_body(t, tables);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn contract_avx2(t: &mut [f64], tables: &Tables<'_>) {
    contract_body(t, tables);
}

/// Skipped terms are products with an exact zero factor, so pruning never
/// changes the sums.
#[inline(always)]
fn contract_body(t: &mut [f64], tables: &Tables<'_>) {
    let Tables { a, b, c, prefix, first_s, first_h, n, dims: [ns, nv, nhp] } = *tables;
    let mut start = 0;
    while start < n {
        let end = (start + NEIGHBOR_CHUNK).min(n);
        for kv in 0..nv {
            let stop = prefix[kv].min(end);
            if stop <= start {
                continue;
            }
            let min_s = first_s[start..stop].iter().min().copied().unwrap_or(0) as usize;
            let min_h = first_h[start..stop].iter().min().copied().unwrap_or(0) as usize;
            let block = Block {
                a,
                n,
                brow: &b[kv * n + start..kv * n + stop],
                cblock: &c[start * nhp..stop * nhp],
                start,
                nhp,
                row_stride: nv * nhp,
                row_base: kv * nhp,
            };
            let mut ks = min_s;
            while ks < ns {
                let rows = (ns - ks).min(ROWS);
                let mut lane = min_h / 4 * 4;
                while lane < nhp {
                    let blocks = ((nhp - lane) / 4).min(3);
                    match (rows, blocks) {
                        (4, 3) => block.run::<4, 3>(t, ks, lane),
                        (4, 2) => block.run::<4, 2>(t, ks, lane),
                        (4, _) => block.run::<4, 1>(t, ks, lane),
                        (3, 3) => block.run::<3, 3>(t, ks, lane),
                        (3, 2) => block.run::<3, 2>(t, ks, lane),
                        (3, _) => block.run::<3, 1>(t, ks, lane),
                        (2, 3) => block.run::<2, 3>(t, ks, lane),
                        (2, 2) => block.run::<2, 2>(t, ks, lane),
                        (2, _) => block.run::<2, 1>(t, ks, lane),
                        (_, 3) => block.run::<1, 3>(t, ks, lane),
                        (_, 2) => block.run::<1, 2>(t, ks, lane),
                        _ => block.run::<1, 1>(t, ks, lane),
                    }
                    lane += 4 * blocks;
                }
                ks += rows;
            }
        }
        start = end;
    }
}

/// σ_s rows accumulated together by one kernel call.
const ROWS: usize = 4;

/// One chunk of neighbors at one σ_v index.
struct Block<'s> {
    a: &'s [f64],
    n: usize,
    brow: &'s [f64],
    cblock: &'s [f64],
    start: usize,
    nhp: usize,
    row_stride: usize,
    row_base: usize,
}

impl Block<'_> {
    /// t[ks + r][kv][lane..lane + 4B] += Σ_j a[ks + r][j] b[kv][j] c[j][lane..], r < R.
    #[inline(always)]
    fn run<const R: usize, const B: usize>(&self, t: &mut [f64], ks: usize, lane: usize) {
        let len = self.brow.len();
        let arows: [&[f64]; R] = std::array::from_fn(|r| &self.a[(ks + r) * self.n + self.start..][..len]);
        let mut acc = [[[0.0f64; 4]; B]; R];
        for j in 0..len {
            let y = self.brow[j];
            let crow = &self.cblock[j * self.nhp + lane..][..4 * B];
            for r in 0..R {
                let w = arows[r][j] * y;
                for blk in 0..B {
                    for l in 0..4 {
                        acc[r][blk][l] += w * crow[blk * 4 + l];
                    }
                }
            }
        }
        for r in 0..R {
            let trow = &mut t[(ks + r) * self.row_stride + self.row_base + lane..][..4 * B];
            for blk in 0..B {
                for l in 0..4 {
                    trow[blk * 4 + l] += acc[r][blk][l];
                }
            }
        }
    }
}
