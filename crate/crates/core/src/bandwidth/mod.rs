//! Bandwidth selection by held-out pseudo-log-likelihood.
//!
//! Each validation set is scored against a model trained on every other
//! record. The best lattice point per set is kept and the per-set optima are
//! averaged componentwise.

mod lattice;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use lattice::{score_lattice, Lattice};

use crate::error::{Error, Result};
use crate::ingest::{BattedBallRecord, ValidationPartition};
use crate::kde::{BandwidthVector, DensityEstimate, ParamVector, DEFAULT_TRUNCATION_RADIUS, DENSITY_FLOOR};

/// Step of the first pass of a coarse-to-fine search.
pub const COARSE_STEP: f64 = 0.5;

/// Half-width of the refinement window around the coarse optimum.
pub const REFINE_HALF_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lo: BandwidthVector,
    pub hi: BandwidthVector,
    pub step: f64,
    pub outlier_drop: usize,
    pub truncation_radius: f64,
    pub coarse_to_fine: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lo: BandwidthVector::new(0.5, 0.5, 0.5).expect("positive"),
            hi: BandwidthVector::new(6.0, 6.0, 6.0).expect("positive"),
            step: 0.1,
            outlier_drop: 20,
            truncation_radius: DEFAULT_TRUNCATION_RADIUS,
            coarse_to_fine: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.lo.to_array(), self.hi.to_array());
        if (0..3).any(|a| lo[a] >= hi[a]) {
            return Err(Error::InvalidSearch(format!("lo {} must be below hi {}", self.lo, self.hi)));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidSearch(format!("step {} must be positive", self.step)));
        }
        if !(self.truncation_radius.is_finite() && self.truncation_radius > 0.0) {
            return Err(Error::InvalidSearch(format!(
                "truncation radius {} must be positive",
                self.truncation_radius
            )));
        }
        Ok(())
    }

    /// The full lattice lo + k·step ≤ hi.
    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::regular(self.lo, self.hi, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetOptimum {
    pub set_id: usize,
    pub bandwidth: BandwidthVector,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub per_set_optima: Vec<SetOptimum>,
    pub averaged: BandwidthVector,
}

impl fmt::Display for SearchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for opt in &self.per_set_optima {
            let [s, v, h] = opt.bandwidth.to_array();
            writeln!(f, "S{}: sigma=({s:.2},{v:.2},{h:.2}) logPL={:.6}", opt.set_id, opt.score)?;
        }
        let [s, v, h] = self.averaged.to_array();
        writeln!(f, "averaged: ({s:.2},{v:.2},{h:.2})")
    }
}

/// Sums pushed values, less the `drop` smallest.
#[derive(Debug, Clone)]
pub(crate) struct DropAccumulator {
    drop: usize,
    total: f64,
    smallest: BinaryHeap<TotalF64>,
}

#[derive(Debug, Clone, Copy)]
struct TotalF64(f64);

impl PartialEq for TotalF64 {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for TotalF64 {}
impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl DropAccumulator {
    pub(crate) fn new(drop: usize) -> Self {
        Self { drop, total: 0.0, smallest: BinaryHeap::with_capacity(drop + 1) }
    }

    pub(crate) fn push(&mut self, x: f64) {
        self.total += x;
        if self.drop == 0 {
            return;
        }
        if self.smallest.len() < self.drop {
            self.smallest.push(TotalF64(x));
        } else if let Some(top) = self.smallest.peek() {
            if x < top.0 {
                self.smallest.pop();
                self.smallest.push(TotalF64(x));
            }
        }
    }

    pub(crate) fn finish(self) -> f64 {
        let dropped: f64 = self.smallest.into_sorted_vec().iter().map(|x| x.0).sum();
        self.total - dropped
    }
}

/// Sum of ln p̂(x) over the validation points, less the `drop` smallest
/// densities, for an estimate fitted on `train`.
pub fn pseudo_log_likelihood(
    train: &[ParamVector],
    validation: &[ParamVector],
    bw: BandwidthVector,
    drop: usize,
    truncation_radius: f64,
) -> Result<f64> {
    if validation.len() <= drop {
        return Err(Error::ValidationTooSmall { len: validation.len(), drop });
    }
    let estimate = DensityEstimate::fit(train, bw, truncation_radius)?;
    let mut acc = DropAccumulator::new(drop);
    for p in estimate.density_batch(validation) {
        acc.push(p.max(DENSITY_FLOOR).ln());
    }
    Ok(acc.finish())
}

/// Index of the largest score; the first one wins ties.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Best lattice point for one train/validation split.
pub fn grid_search_one_set(
    train: &[ParamVector],
    validation: &[ParamVector],
    cfg: &SearchConfig,
) -> Result<(BandwidthVector, f64)> {
    cfg.validate()?;
    if cfg.coarse_to_fine && COARSE_STEP > cfg.step {
        let coarse = Lattice::regular(cfg.lo, cfg.hi, COARSE_STEP)?;
        let (center, _) = search_lattice(train, validation, &coarse, cfg)?;
        let fine = refine_lattice(cfg, center)?;
        return search_lattice(train, validation, &fine, cfg);
    }
    search_lattice(train, validation, &cfg.lattice()?, cfg)
}

fn search_lattice(
    train: &[ParamVector],
    validation: &[ParamVector],
    lattice: &Lattice,
    cfg: &SearchConfig,
) -> Result<(BandwidthVector, f64)> {
    let scores = score_lattice(train, validation, lattice, cfg.outlier_drop, cfg.truncation_radius)?;
    let best = argmax(&scores);
    Ok((lattice.point(best), scores[best]))
}

/// Points of the full lattice within REFINE_HALF_WIDTH of `center` on every axis.
fn refine_lattice(cfg: &SearchConfig, center: BandwidthVector) -> Result<Lattice> {
    let (lo, hi, c) = (cfg.lo.to_array(), cfg.hi.to_array(), center.to_array());
    let slack = 1e-9;
    let axes: [Vec<f64>; 3] = std::array::from_fn(|a| {
        let k_min = ((c[a] - REFINE_HALF_WIDTH - lo[a]) / cfg.step - slack).ceil().max(0.0) as usize;
        let k_max = ((c[a] + REFINE_HALF_WIDTH - lo[a]) / cfg.step + slack).floor().max(0.0) as usize;
        lattice::axis_values(lo[a], hi[a], cfg.step, k_min, k_max)
    });
    let [s, v, h] = axes;
    Lattice::new(s, v, h)
}

/// Componentwise mean.
pub fn average_bandwidths(optima: &[BandwidthVector]) -> Result<BandwidthVector> {
    if optima.is_empty() {
        return Err(Error::InvalidSearch("no bandwidths to average".into()));
    }
    let m = optima.len() as f64;
    let mean = |a: usize| optima.iter().map(|b| b.to_array()[a]).sum::<f64>() / m;
    BandwidthVector::new(mean(0), mean(1), mean(2))
}

/// Training and validation vectors for set `j` (0-based): validation is the
/// set itself, training is every record outside it.
pub fn split_for_set(
    records: &[BattedBallRecord],
    partition: &ValidationPartition,
    j: usize,
) -> (Vec<ParamVector>, Vec<ParamVector>) {
    let set = &partition.sets[j];
    let mut held_out = vec![false; records.len()];
    for &i in set {
        held_out[i] = true;
    }
    let train = records.iter().zip(&held_out).filter(|(_, &out)| !out).map(|(r, _)| r.params()).collect();
    let validation = set.iter().map(|&i| records[i].params()).collect();
    (train, validation)
}

pub fn select_bandwidth(
    records: &[BattedBallRecord],
    partition: &ValidationPartition,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let mut per_set_optima = Vec::with_capacity(partition.len());
    for j in 0..partition.len() {
        let (train, validation) = split_for_set(records, partition, j);
        let (bandwidth, score) = grid_search_one_set(&train, &validation, cfg)?;
        per_set_optima.push(SetOptimum { set_id: j + 1, bandwidth, score });
    }
    let averaged = average_bandwidths(&per_set_optima.iter().map(|o| o.bandwidth).collect::<Vec<_>>())?;
    Ok(SearchResult { per_set_optima, averaged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::naive_density;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn bw(s: f64, v: f64, h: f64) -> BandwidthVector {
        BandwidthVector::new(s, v, h).unwrap()
    }

    fn gaussian(n: usize, sd: f64, seed: u64) -> Vec<ParamVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| ParamVector::new(90.0 + d.sample(&mut rng), 10.0 + d.sample(&mut rng), 90.0 + d.sample(&mut rng)))
            .collect()
    }

    #[test]
    fn single_kernel_peak_log() {
        let x = [ParamVector::new(90.0, 10.0, 90.0)];
        let pl = pseudo_log_likelihood(&x, &x, bw(1.0, 1.0, 1.0), 0, 6.0).unwrap();
        assert!((pl - -2.756_815_6).abs() < 1e-6, "{pl}");
    }

    #[test]
    fn extreme_drop_keeps_largest() {
        let train = gaussian(100, 2.0, 1);
        let validation = gaussian(10, 2.0, 2);
        let b = bw(1.0, 1.0, 1.0);
        let largest = validation.iter().map(|&q| naive_density(&train, q, b)).fold(f64::MIN, f64::max);
        let pl = pseudo_log_likelihood(&train, &validation, b, 9, 6.0).unwrap();
        assert!((pl - largest.ln()).abs() < 1e-9);
        assert!(matches!(
            pseudo_log_likelihood(&train, &validation, b, 10, 6.0),
            Err(Error::ValidationTooSmall { len: 10, drop: 10 })
        ));
    }

    #[test]
    fn brute_force_drop_two() {
        let train = gaussian(100, 2.0, 3);
        let validation = gaussian(10, 2.0, 4);
        let b = bw(1.0, 1.0, 1.0);
        let mut dens: Vec<f64> = validation.iter().map(|&q| naive_density(&train, q, b)).collect();
        dens.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let expected: f64 = dens[2..].iter().map(|d| d.ln()).sum();
        let pl = pseudo_log_likelihood(&train, &validation, b, 2, 6.0).unwrap();
        assert!((pl - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn five_set_average() {
        let optima = [bw(2.0, 1.5, 2.2), bw(1.9, 1.5, 2.3), bw(2.0, 1.6, 2.0), bw(2.0, 1.6, 2.3), bw(2.2, 1.3, 2.2)];
        let avg = average_bandwidths(&optima).unwrap().to_array();
        for (got, want) in avg.iter().zip([2.02, 1.50, 2.20]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(format!("{}", average_bandwidths(&optima).unwrap()), "(2.02,1.50,2.20)");
        assert_eq!(average_bandwidths(&optima[..1]).unwrap(), optima[0]);
        assert!(average_bandwidths(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        let mut cfg = SearchConfig { step: 0.0, ..SearchConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = SearchConfig { hi: bw(6.0, 0.5, 6.0), ..SearchConfig::default() };
        assert!(cfg.validate().is_err());
        assert_eq!(SearchConfig::default().lattice().unwrap().len(), 56 * 56 * 56);
    }

    #[test]
    fn single_point_lattice() {
        let train = gaussian(50, 2.0, 5);
        let validation = gaussian(5, 2.0, 6);
        let cfg = SearchConfig { lo: bw(1.3, 1.1, 0.9), step: 100.0, outlier_drop: 0, ..SearchConfig::default() };
        let (best, _) = grid_search_one_set(&train, &validation, &cfg).unwrap();
        assert_eq!(best, bw(1.3, 1.1, 0.9));
    }

    #[test]
    fn exact_tie_prefers_lexicographically_smaller() {
        let q = ParamVector::new(90.0, 10.0, 90.0);
        let train = [q + ParamVector::new(2.0, 0.0, 0.0), q + ParamVector::new(0.0, 0.0, 2.0)];
        let lattice = Lattice::new(vec![0.5, 2.0], vec![1.0], vec![0.5, 2.0]).unwrap();
        let scores = score_lattice(&train, &[q], &lattice, 0, 6.0).unwrap();
        // (0.5, 1, 2) and (2, 1, 0.5) are mirror images of each other.
        assert_eq!(scores[1], scores[2]);
        assert!(scores[1] > scores[0] && scores[1] > scores[3]);
        assert_eq!(lattice.point(argmax(&scores)), bw(0.5, 1.0, 2.0));

        let a = pseudo_log_likelihood(&train, &[q], bw(0.5, 1.0, 2.0), 0, 6.0).unwrap();
        let b = pseudo_log_likelihood(&train, &[q], bw(2.0, 1.0, 0.5), 0, 6.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn isotropic_data_gives_near_equal_bandwidths() {
        let train = gaussian(4000, 2.0, 7);
        let validation = gaussian(400, 2.0, 8);
        let cfg = SearchConfig { lo: bw(0.2, 0.2, 0.2), hi: bw(3.0, 3.0, 3.0), step: 0.2, outlier_drop: 4, ..SearchConfig::default() };
        let (best, _) = grid_search_one_set(&train, &validation, &cfg).unwrap();
        let [s, v, h] = best.to_array();
        let mean = (s + v + h) / 3.0;
        for x in [s, v, h] {
            assert!((x - mean).abs() <= 0.3 + 1e-9, "{best}");
        }
    }

    #[test]
    fn coarse_to_fine_refines_around_coarse_optimum() {
        let train = gaussian(3000, 2.0, 9);
        let validation = gaussian(200, 2.0, 10);
        let cfg = SearchConfig { hi: bw(3.0, 3.0, 3.0), outlier_drop: 4, coarse_to_fine: true, ..SearchConfig::default() };
        let (best, score) = grid_search_one_set(&train, &validation, &cfg).unwrap();
        let coarse = Lattice::regular(cfg.lo, cfg.hi, COARSE_STEP).unwrap();
        let coarse_scores = score_lattice(&train, &validation, &coarse, 4, 6.0).unwrap();
        let center = coarse.point(argmax(&coarse_scores));
        assert!(score >= coarse_scores[argmax(&coarse_scores)]);
        for (x, c) in best.to_array().iter().zip(center.to_array()) {
            assert!((x - c).abs() <= REFINE_HALF_WIDTH + 1e-9);
            let k = (x - 0.5) / 0.1;
            assert!((k - k.round()).abs() < 1e-6);
        }
    }

    #[test]
    fn refine_window_is_clipped_to_bounds() {
        let cfg = SearchConfig::default();
        let lat = refine_lattice(&cfg, bw(0.5, 6.0, 2.0)).unwrap();
        assert_eq!(lat.dims(), [6, 6, 11]);
        assert!((lat.axes()[0][0] - 0.5).abs() < 1e-12);
        assert!((lat.axes()[1][5] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn report_format() {
        let result = SearchResult {
            per_set_optima: vec![SetOptimum { set_id: 1, bandwidth: bw(2.0, 1.5, 2.2), score: -10.5 }],
            averaged: bw(2.0, 1.5, 2.2),
        };
        assert_eq!(result.to_string(), "S1: sigma=(2.00,1.50,2.20) logPL=-10.500000\naveraged: (2.00,1.50,2.20)\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn drop_removes_next_smallest(seed in 0u64..1000, drop in 0usize..8) {
            let train = gaussian(80, 3.0, seed);
            let validation = gaussian(10, 3.0, seed + 5000);
            let b = bw(1.2, 0.9, 1.5);
            let est = DensityEstimate::fit(&train, b, 6.0).unwrap();
            let mut logs: Vec<f64> = validation.iter().map(|&q| est.density_at(q).max(DENSITY_FLOOR).ln()).collect();
            logs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let a = pseudo_log_likelihood(&train, &validation, b, drop, 6.0).unwrap();
            let c = pseudo_log_likelihood(&train, &validation, b, drop + 1, 6.0).unwrap();
            prop_assert!((a - c - logs[drop]).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn lattice_argmax_matches_direct_products(seed in 0u64..1000) {
            let train = gaussian(40, 2.5, seed);
            let validation = gaussian(6, 2.5, seed + 7000);
            let lattice = Lattice::new(vec![0.8, 1.6, 3.2], vec![0.8, 1.6, 3.2], vec![0.8, 1.6, 3.2]).unwrap();
            let scores = score_lattice(&train, &validation, &lattice, 1, 6.0).unwrap();
            let products: Vec<f64> = lattice
                .points()
                .map(|b| {
                    let mut d: Vec<f64> = validation.iter().map(|&q| naive_density(&train, q, b) * 1e4).collect();
                    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
                    d[1..].iter().product()
                })
                .collect();
            let best = argmax(&scores);
            let best_product = argmax(&products);
            prop_assert!(best == best_product || (products[best] - products[best_product]).abs() <= 1e-9 * products[best_product]);
        }

        #[test]
        fn exclusion_and_partition_of_records(n_extra in 0usize..30) {
            use crate::ingest::{build_validation_partition, Hand, OutcomeClass, Venue};
            let date = |d: u32| chrono::NaiveDate::from_ymd_opt(2014, 5, d).unwrap();
            let mut records = Vec::new();
            for (k, day) in [1u32, 7, 13, 19, 25, 2, 3].iter().cycle().take(14 + n_extra).enumerate() {
                records.push(BattedBallRecord {
                    ball_id: format!("b{k}"),
                    game_date: date(*day),
                    speed: 90.0,
                    vertical_angle: 10.0,
                    horizontal_angle: 45.0 + k as f64,
                    outcome: OutcomeClass::Out,
                    batter_id: "x".into(),
                    pitcher_id: "p".into(),
                    batter_hand: Hand::R,
                    fielding_team_id: "T".into(),
                    venue: Venue::Home,
                    is_bunt: false,
                });
            }
            let partition = build_validation_partition(&records, 5).unwrap();
            for j in 0..5 {
                let (train, validation) = split_for_set(&records, &partition, j);
                prop_assert_eq!(train.len() + validation.len(), records.len());
                for v in &validation {
                    prop_assert!(!train.contains(v));
                }
            }
        }
    }
}
