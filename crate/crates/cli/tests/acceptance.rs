//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits nonzero when any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use ivbb_cli::{cmd_fit, cmd_score, cmd_synth, FitArgs};
use ivbb_core::{
    average_bandwidths, build_validation_partition, compare_evaluators, export_grid, filter_fair_contact, fit_model,
    generate, grid_search_one_set, league_workload, select_bandwidth, team_defense, AxisRange, BandwidthVector,
    BattedBallRecord, DensityEstimate, FixedAxis, Hand, OutcomeClass, OutcomeWeights, ParamVector, SearchConfig,
    SynthConfig, ValidationPartition, Venue,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn league(n: usize, seed: u64) -> Vec<BattedBallRecord> {
    let mut cfg = SynthConfig::defender_league();
    cfg.n = n;
    cfg.seed = seed;
    filter_fair_contact(generate(&cfg).expect("shipped config generates"))
}

fn c1_posterior_normalization() -> Outcome {
    let t = Instant::now();
    let records = league(25_000, 11);
    let right: Vec<_> = records.into_iter().filter(|r| r.batter_hand == Hand::R).take(10_000).collect();
    let bw = BandwidthVector::new(2.0, 1.5, 2.2).unwrap();
    let model = fit_model(&right, Hand::R, bw, OutcomeWeights::default(), &BTreeSet::new(), 6.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = ParamVector::new(rng.random_range(60.0..125.0), rng.random_range(-30.0..60.0), rng.random_range(45.0..135.0));
        let sum: f64 = model.posterior(x).probs.iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    let elapsed = t.elapsed();
    check(
        right.len() == 10_000 && worst < 1e-9 && within(elapsed, 30),
        format!("balls={} max|sum-1|={worst:.2e} (<1e-9) in {elapsed:.1?} (<30s)", right.len()),
    )
}

fn c2_kde_oracle() -> Outcome {
    let t = Instant::now();
    let (samples, queries) = league_workload(10_000, 1_000, 21).map_err(|e| e.to_string())?;
    let bw = BandwidthVector::new(2.0, 1.5, 2.2).unwrap();
    let est = DensityEstimate::fit(&samples, bw, 6.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for &q in &queries {
        let (fast, naive) = (est.density_at(q), est.naive_density_at(q));
        let diff = (fast - naive).abs();
        if !(diff <= 1e-9 * naive.abs() || diff <= 1e-300) {
            failures += 1;
        }
        if naive > 0.0 {
            worst = worst.max(diff / naive);
        }
    }
    let elapsed = t.elapsed();
    check(
        failures == 0 && within(elapsed, 60),
        format!("10000x1000 r=6 max rel err={worst:.2e} (<1e-9), failures={failures} in {elapsed:.1?} (<60s)"),
    )
}

fn c3_speedup() -> Outcome {
    let (samples, queries) = league_workload(100_000, 10_000, 31).map_err(|e| e.to_string())?;
    let bw = BandwidthVector::new(2.0, 1.5, 2.2).unwrap();
    let r = compare_evaluators(&samples, &queries, bw, 6.0).map_err(|e| e.to_string())?;
    check(
        r.speedup >= 5.0,
        format!(
            "100000x10000 naive={:.2}s accelerated={:.3}s speedup={:.1}x (>=5x)",
            r.naive_secs, r.accelerated_secs, r.speedup
        ),
    )
}

/// Exhaustive search with its own kernel: direct products of one-dimensional
/// normal densities, no truncation.
fn brute_force_argmax(train: &[ParamVector], validation: &[ParamVector], axes: [&[f64]; 3], drop: usize) -> BandwidthVector {
    let phi = |d: f64, s: f64| (-0.5 * (d / s) * (d / s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let mut best: Option<(f64, BandwidthVector)> = None;
    for &s in axes[0] {
        for &v in axes[1] {
            for &h in axes[2] {
                let mut logs: Vec<f64> = validation
                    .iter()
                    .map(|x| {
                        let p: f64 = train.iter().map(|y| phi(x.s - y.s, s) * phi(x.v - y.v, v) * phi(x.h - y.h, h)).sum::<f64>()
                            / train.len() as f64;
                        p.max(1e-300).ln()
                    })
                    .collect();
                logs.sort_by(f64::total_cmp);
                let score: f64 = logs[drop..].iter().sum();
                if best.map_or(true, |(b, _)| score > b) {
                    best = Some((score, BandwidthVector::new(s, v, h).unwrap()));
                }
            }
        }
    }
    best.unwrap().1
}

fn c4_brute_force_argmax() -> Outcome {
    let t = Instant::now();
    let points: Vec<ParamVector> = league(400, 41).iter().map(|r| r.params()).collect();
    let (train, validation) = (&points[..100], &points[100..110]);
    let cfg = SearchConfig {
        lo: BandwidthVector::new(1.0, 4.0, 4.0).unwrap(),
        hi: BandwidthVector::new(9.0, 12.0, 12.0).unwrap(),
        step: 2.0,
        outlier_drop: 2,
        truncation_radius: 6.0,
        coarse_to_fine: false,
    };
    let lattice = cfg.lattice().map_err(|e| e.to_string())?;
    let (got, _) = grid_search_one_set(train, validation, &cfg).map_err(|e| e.to_string())?;
    let axis = |lo: f64| -> Vec<f64> { (0..5).map(|i| lo + 2.0 * i as f64).collect() };
    let want = brute_force_argmax(train, validation, [&axis(1.0), &axis(4.0), &axis(4.0)], 2);
    let elapsed = t.elapsed();
    check(
        lattice.len() == 125 && got == want && within(elapsed, 10),
        format!("lattice={} search={got} exhaustive={want} in {elapsed:.1?} (<10s)", lattice.len()),
    )
}

/// h-locations of the ground-ball out components of one hand, from the
/// scenario itself.
fn ground_centers(cfg: &SynthConfig, hand: Hand) -> Vec<f64> {
    let out = &cfg.scenario(hand).unwrap().classes["OUT"];
    let mut c: Vec<f64> = out.components.iter().filter(|k| k.mean[1] < 10.0).map(|k| k.mean[2]).collect();
    c.sort_by(f64::total_cmp);
    c
}

/// Lowest point of the ground-row woba profile inside each center's zone;
/// zones split at the midpoints between neighboring centers.
fn zone_minima(profile: &[f64], h: &[f64], centers: &[f64]) -> Vec<f64> {
    (0..centers.len())
        .map(|z| {
            let lo = if z == 0 { f64::NEG_INFINITY } else { (centers[z - 1] + centers[z]) / 2.0 };
            let hi = if z + 1 == centers.len() { f64::INFINITY } else { (centers[z] + centers[z + 1]) / 2.0 };
            let mut best = (f64::INFINITY, f64::NAN);
            for (&p, &x) in profile.iter().zip(h) {
                if x >= lo && x <= hi && p < best.0 {
                    best = (p, x);
                }
            }
            best.1
        })
        .collect()
}

fn c5_estimator_consistency() -> Outcome {
    let t = Instant::now();
    let cfg = SynthConfig::defender_league();
    if cfg.n != 200_000 {
        return Err(format!("shipped config has n={}", cfg.n));
    }
    let records = filter_fair_contact(generate(&cfg).map_err(|e| e.to_string())?);
    let search = SearchConfig { coarse_to_fine: true, ..SearchConfig::default() };
    let weights = OutcomeWeights::default();
    let rows = AxisRange::new(-10.0, 45.0, 1.0).unwrap();
    let cols = AxisRange::new(45.0, 135.0, 1.0).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for hand in Hand::BOTH {
        let mine: Vec<_> = records.iter().filter(|r| r.batter_hand == hand).cloned().collect();
        let partition = build_validation_partition(&mine, 5).map_err(|e| e.to_string())?;
        let bw = select_bandwidth(&mine, &partition, &search).map_err(|e| e.to_string())?.averaged;
        let model = fit_model(&mine, hand, bw, weights, &BTreeSet::new(), search.truncation_radius).map_err(|e| e.to_string())?;
        let grid = export_grid(&model, FixedAxis::Speed, 93.0, rows, cols).map_err(|e| e.to_string())?;
        let cells = grid.axis1_values.len() * grid.axis2_values.len();
        let mut err = 0.0;
        for (i, &v) in grid.axis1_values.iter().enumerate() {
            for (k, &h) in grid.axis2_values.iter().enumerate() {
                let truth = cfg.true_woba(hand, ParamVector::new(93.0, v, h), &weights).map_err(|e| e.to_string())?;
                err += (grid.values[i][k] - truth).abs();
            }
        }
        let mae = err / cells as f64;
        let ground: Vec<usize> = (0..grid.axis1_values.len()).filter(|&i| grid.axis1_values[i] <= 10.0).collect();
        let profile: Vec<f64> = (0..grid.axis2_values.len())
            .map(|k| ground.iter().map(|&i| grid.values[i][k]).sum::<f64>() / ground.len() as f64)
            .collect();
        let centers = ground_centers(&cfg, hand);
        let minima = zone_minima(&profile, &grid.axis2_values, &centers);
        let off = minima.iter().zip(&centers).map(|(m, c)| (m - c).abs()).fold(0.0, f64::max);
        ok &= cells == 56 * 91 && mae < 0.02 && centers.len() == 4 && off <= 3.0;
        detail.push(format!("{hand}: sigma={bw} mae={mae:.4} minima={minima:?} centers={centers:?}"));
    }
    let elapsed = t.elapsed();
    ok &= within(elapsed, 15 * 60);
    check(ok, format!("{} (mae<0.02, |minimum-center|<=3) in {elapsed:.0?} (<15min)", detail.join("; ")))
}

fn c6_set_average() -> Outcome {
    let per_set = [(2.0, 1.5, 2.2), (1.9, 1.5, 2.3), (2.0, 1.6, 2.0), (2.0, 1.6, 2.3), (2.2, 1.3, 2.2)];
    let optima: Vec<_> = per_set.iter().map(|&(s, v, h)| BandwidthVector::new(s, v, h).unwrap()).collect();
    let avg = average_bandwidths(&optima).map_err(|e| e.to_string())?;
    let close = avg.to_array().iter().zip([2.02, 1.50, 2.20]).all(|(a, b)| (a - b).abs() < 1e-12);
    check(close && avg.to_string() == "(2.02,1.50,2.20)", format!("averaged={avg}"))
}

fn c7_defense_self_consistency() -> Outcome {
    const PER_TEAM: usize = 20_000;
    let t = Instant::now();
    let bw = BandwidthVector::new(2.0, 1.5, 2.2).unwrap();
    let no_hr = BTreeSet::from([OutcomeClass::HomeRun]);
    let fit_data = league(60_000, 71);
    let mut models = ivbb_core::ModelPair::default();
    for hand in Hand::BOTH {
        models.set(fit_model(&fit_data, hand, bw, OutcomeWeights::default(), &no_hr, 6.0).map_err(|e| e.to_string())?);
    }

    let mut cfg = SynthConfig::defender_league();
    cfg.seed = 72;
    cfg.teams = 4;
    cfg.n = 4 * PER_TEAM * 11 / 10;
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut season: Vec<BattedBallRecord> = Vec::new();
    for mut r in filter_fair_contact(generate(&cfg).map_err(|e| e.to_string())?) {
        let n = counts.entry(r.fielding_team_id.clone()).or_default();
        if *n == PER_TEAM {
            continue;
        }
        *n += 1;
        let probs = models.get(r.batter_hand).unwrap().posterior(r.params()).probs;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        r.outcome = OutcomeClass::Out;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                r.outcome = OutcomeClass::from_index(j).unwrap();
                break;
            }
        }
        season.push(r);
    }
    let full = counts.len() == 4 && counts.values().all(|&n| n == PER_TEAM);

    let rows = team_defense(&models, &season).map_err(|e| e.to_string())?;
    let worst = rows.iter().map(|r| r.d.abs()).fold(0.0, f64::max);
    for r in &mut season {
        r.venue = match r.venue {
            Venue::Home => Venue::Away,
            Venue::Away => Venue::Home,
        };
    }
    let swapped = team_defense(&models, &season).map_err(|e| e.to_string())?;
    let negated = rows.len() == swapped.len()
        && rows.iter().zip(&swapped).all(|(a, b)| match (a.d_ha, b.d_ha) {
            (Some(x), Some(y)) => x == -y,
            _ => false,
        });
    let elapsed = t.elapsed();
    check(
        full && worst < 0.01 && negated,
        format!("teams={} balls/team={PER_TEAM} max|d|={worst:.4} (<0.01) d_ha negated={negated} in {elapsed:.1?}", rows.len()),
    )
}

fn sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap_or_default();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn c8_determinism() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("league.csv");
    let mut sink = Vec::new();
    cmd_synth(None, Some(81), Some(20_000), &data, &mut sink).map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    for run in 0..2 {
        let bundle = dir.path().join(format!("model{run}.ivbb"));
        let report = dir.path().join(format!("report{run}.txt"));
        let scores = dir.path().join(format!("scores{run}.csv"));
        let args = FitArgs {
            input: data.clone(),
            out: bundle.clone(),
            report: Some(report.clone()),
            hand: None,
            step: Some(0.5),
            lo: Some(BandwidthVector::new(1.0, 1.0, 1.0).unwrap()),
            hi: Some(BandwidthVector::new(3.0, 3.0, 3.0).unwrap()),
            drop: None,
            radius: None,
            coarse_to_fine: false,
            bandwidth: None,
            exclude: Vec::new(),
            weights: None,
        };
        cmd_fit(&args, &mut Vec::new()).map_err(|e| e.to_string())?;
        let mut file = std::fs::File::create(&scores).map_err(|e| e.to_string())?;
        cmd_score(&bundle, &data, &mut file).map_err(|e| e.to_string())?;
        hashes.push([sha256(&bundle), sha256(&report), sha256(&scores)]);
    }
    let elapsed = t.elapsed();
    check(
        hashes[0] == hashes[1],
        format!("bundle {} report {} scores {} identical across reruns in {elapsed:.1?}", &hashes[0][0][..12], &hashes[0][1][..12], &hashes[0][2][..12]),
    )
}

fn c9_partition() -> Outcome {
    let records = league(30_000, 91);
    let months: BTreeSet<String> = records.iter().map(|r| r.game_date.format("%Y-%m").to_string()).collect();
    let ValidationPartition { sets, set_size } = build_validation_partition(&records, 5).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    let disjoint = sets.iter().flatten().all(|&i| seen.insert(i));
    let equal = sets.iter().all(|s| s.len() == set_size) && set_size > 0;
    let days_ok = sets.iter().enumerate().all(|(j, s)| s.iter().all(|&i| records[i].day_of_month() == 1 + 6 * j as u32));
    check(
        months.len() == 6 && sets.len() == 5 && disjoint && equal && days_ok,
        format!("months={} sets={} size={set_size} disjoint={disjoint} equal={equal} days {{1,7,13,19,25}}={days_ok}", months.len(), sets.len()),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1", "posterior normalization", c1_posterior_normalization),
        ("C2", "KDE oracle agreement", c2_kde_oracle),
        ("C3", "KDE speedup", c3_speedup),
        ("C4", "pseudolikelihood brute-force argmax", c4_brute_force_argmax),
        ("C5", "estimator consistency", c5_estimator_consistency),
        ("C6", "bandwidth averaging", c6_set_average),
        ("C7", "defense self-consistency", c7_defense_self_consistency),
        ("C8", "determinism", c8_determinism),
        ("C9", "partition correctness", c9_partition),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        match run() {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
