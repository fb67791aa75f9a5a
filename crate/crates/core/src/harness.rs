//! Timing harness: naive versus accelerated density evaluation on the same
//! samples and queries.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::filter_fair_contact;
use crate::kde::{BandwidthVector, DensityEstimate, ParamVector};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub samples: usize,
    pub queries: usize,
    pub bandwidth: BandwidthVector,
    pub build_secs: f64,
    pub naive_secs: f64,
    pub accelerated_secs: f64,
    pub speedup: f64,
    /// Largest |accelerated − naive| / naive over the queries.
    pub max_rel_err: f64,
}

impl fmt::Display for HarnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples={} queries={} sigma={}", self.samples, self.queries, self.bandwidth)?;
        writeln!(f, "build       {:>10.4} s", self.build_secs)?;
        writeln!(f, "naive       {:>10.4} s", self.naive_secs)?;
        writeln!(f, "accelerated {:>10.4} s", self.accelerated_secs)?;
        writeln!(f, "speedup     {:>10.2}x", self.speedup)?;
        writeln!(f, "max rel err {:>10.3e}", self.max_rel_err)
    }
}

/// Times both evaluators over `queries`, one thread each, after one untimed
/// warm-up query. Build time of the index is reported separately and not
/// charged to the accelerated evaluator.
pub fn compare_evaluators(
    samples: &[ParamVector],
    queries: &[ParamVector],
    bandwidth: BandwidthVector,
    truncation_radius: f64,
) -> Result<HarnessReport> {
    if queries.is_empty() {
        return Err(Error::InvalidSearch("harness needs at least one query".into()));
    }
    let t = Instant::now();
    let est = DensityEstimate::fit(samples, bandwidth, truncation_radius)?;
    let build_secs = t.elapsed().as_secs_f64();

    std::hint::black_box(est.naive_density_at(queries[0]));
    let t = Instant::now();
    let naive: Vec<f64> = queries.iter().map(|&q| est.naive_density_at(q)).collect();
    let naive_secs = t.elapsed().as_secs_f64();

    std::hint::black_box(est.density_at(queries[0]));
    let t = Instant::now();
    let fast: Vec<f64> = queries.iter().map(|&q| est.density_at(q)).collect();
    let accelerated_secs = t.elapsed().as_secs_f64();

    let max_rel_err = naive
        .iter()
        .zip(&fast)
        .map(|(&a, &b)| if a == 0.0 { if b == 0.0 { 0.0 } else { f64::INFINITY } } else { ((b - a) / a).abs() })
        .fold(0.0, f64::max);
    Ok(HarnessReport {
        samples: samples.len(),
        queries: queries.len(),
        bandwidth,
        build_secs,
        naive_secs,
        accelerated_secs,
        speedup: naive_secs / accelerated_secs.max(f64::MIN_POSITIVE),
        max_rel_err,
    })
}

/// Launch vectors drawn from the shipped defender league: `n_samples` for the
/// estimate and `n_queries` further ones to evaluate at.
pub fn league_workload(n_samples: usize, n_queries: usize, seed: u64) -> Result<(Vec<ParamVector>, Vec<ParamVector>)> {
    let mut cfg = SynthConfig::defender_league();
    cfg.seed = seed;
    let need = n_samples + n_queries;
    cfg.n = need + need / 4 + 16;
    loop {
        let points: Vec<ParamVector> = filter_fair_contact(generate(&cfg)?).iter().map(|r| r.params()).collect();
        if points.len() >= need {
            let queries = points[n_samples..need].to_vec();
            let mut samples = points;
            samples.truncate(n_samples);
            return Ok((samples, queries));
        }
        cfg.n *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_workload_agrees() {
        let (samples, queries) = league_workload(2000, 50, 7).unwrap();
        assert_eq!((samples.len(), queries.len()), (2000, 50));
        let bw = BandwidthVector::new(2.0, 1.5, 2.2).unwrap();
        let report = compare_evaluators(&samples, &queries, bw, 6.0).unwrap();
        assert!(report.max_rel_err < 1e-9, "{report}");
        assert!(report.speedup > 0.0);
        assert!(report.to_string().contains("speedup"));
    }

    #[test]
    fn empty_queries_rejected() {
        let bw = BandwidthVector::new(1.0, 1.0, 1.0).unwrap();
        let samples = [ParamVector::new(90.0, 10.0, 90.0)];
        assert!(compare_evaluators(&samples, &[], bw, 6.0).is_err());
    }

    #[test]
    fn workload_is_seeded() {
        assert_eq!(league_workload(100, 10, 3).unwrap(), league_workload(100, 10, 3).unwrap());
        assert_ne!(league_workload(100, 10, 3).unwrap().0, league_workload(100, 10, 4).unwrap().0);
    }
}
