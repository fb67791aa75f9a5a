//! Synthetic batted-ball leagues drawn from per-outcome Gaussian mixtures.
//!
//! Each batter hand has a scenario: a prior per outcome class and, per class,
//! a mixture of axis-aligned Gaussians over (s, v, h). Records are drawn class
//! first, then component, then point, so the exact posterior of any launch
//! vector is known in closed form.
//!
//! Speed and vertical angle are redrawn until they fall inside the ingest
//! limits; the horizontal angle is left as drawn, so foul balls occur and are
//! removed by the fair-contact filter. [`SynthConfig::true_posterior`] uses the
//! untruncated mixtures, which is exact for components far from those limits.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BattedBallRecord, Hand, OutcomeClass, Venue, SPEED_MAX_MPH, SPEED_MIN_MPH};
use crate::kde::ParamVector;
use crate::valuation::OutcomeWeights;

const SUM_TOL: f64 = 1e-9;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    /// (s, v, h)
    pub mean: [f64; 3],
    pub sd: [f64; 3],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub prior: f64,
    pub components: Vec<Component>,
}

/// Outcome mixtures for one batter hand, keyed by outcome code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub classes: BTreeMap<String, ClassSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub teams: usize,
    pub batters: usize,
    pub pitchers: usize,
    /// Share of batters who hit left-handed.
    pub left_fraction: f64,
    #[serde(default)]
    pub bunt_fraction: f64,
    pub hands: BTreeMap<Hand, Scenario>,
}

impl SynthConfig {
    /// The league shipped with the crate: infielders and outfielders at fixed
    /// spray angles for each batter hand.
    pub fn defender_league() -> Self {
        serde_json::from_str(include_str!("../data/defender_league.json")).expect("bundled config parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSynth(msg));
        if self.end_date < self.start_date {
            return bad(format!("end_date {} precedes start_date {}", self.end_date, self.start_date));
        }
        if self.teams == 0 || self.batters == 0 || self.pitchers == 0 {
            return bad("teams, batters and pitchers must be positive".into());
        }
        for (name, f) in [("left_fraction", self.left_fraction), ("bunt_fraction", self.bunt_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} {f} outside [0, 1]"));
            }
        }
        let lefties = self.left_batters();
        for (hand, needed) in [(Hand::L, lefties > 0), (Hand::R, lefties < self.batters)] {
            if needed && !self.hands.contains_key(&hand) {
                return bad(format!("no scenario for hand {hand}"));
            }
        }
        for (hand, scenario) in &self.hands {
            scenario.validate().map_err(|e| match e {
                Error::InvalidSynth(msg) => Error::InvalidSynth(format!("hand {hand}: {msg}")),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Batters 0..left_batters() hit left-handed.
    pub fn left_batters(&self) -> usize {
        (self.batters as f64 * self.left_fraction).round() as usize
    }

    pub fn scenario(&self, hand: Hand) -> Result<&Scenario> {
        self.hands.get(&hand).ok_or(Error::InvalidSynth(format!("no scenario for hand {hand}")))
    }

    pub fn true_posterior(&self, hand: Hand, x: ParamVector) -> Result<[f64; 6]> {
        Ok(self.scenario(hand)?.true_posterior(x))
    }

    pub fn true_woba(&self, hand: Hand, x: ParamVector, weights: &OutcomeWeights) -> Result<f64> {
        Ok(weights.dot(&self.true_posterior(hand, x)?))
    }
}

impl Scenario {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSynth(msg));
        let mut total = 0.0;
        for (code, spec) in &self.classes {
            if OutcomeClass::from_code(code).is_none() {
                return bad(format!("unknown outcome '{code}'"));
            }
            if !(spec.prior.is_finite() && spec.prior >= 0.0) {
                return bad(format!("{code}: prior {} must be nonnegative", spec.prior));
            }
            total += spec.prior;
            if spec.prior > 0.0 && spec.components.is_empty() {
                return bad(format!("{code}: no components"));
            }
            let mut weights = 0.0;
            for c in &spec.components {
                if !(c.weight.is_finite() && c.weight >= 0.0) {
                    return bad(format!("{code}: component weight {} must be nonnegative", c.weight));
                }
                if c.mean.iter().any(|m| !m.is_finite()) {
                    return bad(format!("{code}: non-finite component mean"));
                }
                if c.sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad(format!("{code}: component sd must be positive"));
                }
                weights += c.weight;
            }
            if !spec.components.is_empty() && (weights - 1.0).abs() > SUM_TOL {
                return bad(format!("{code}: component weights sum to {weights}"));
            }
        }
        if (total - 1.0).abs() > SUM_TOL {
            return bad(format!("priors sum to {total}"));
        }
        Ok(())
    }

    /// (class, spec) pairs in class-index order.
    fn class_specs(&self) -> Vec<(OutcomeClass, &ClassSpec)> {
        let mut out: Vec<_> = self
            .classes
            .iter()
            .filter_map(|(code, spec)| OutcomeClass::from_code(code).map(|c| (c, spec)))
            .collect();
        out.sort_by_key(|(c, _)| *c);
        out
    }

    /// Exact posterior over outcome classes under the configured mixtures.
    pub fn true_posterior(&self, x: ParamVector) -> [f64; 6] {
        let p = x.to_array();
        // ln(π_j p_j(x)), combined with log-sum-exp.
        let mut logs = [f64::NEG_INFINITY; 6];
        for (class, spec) in self.class_specs() {
            if spec.prior <= 0.0 {
                continue;
            }
            let terms: Vec<f64> = spec
                .components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| {
                    let mut l = c.weight.ln();
                    for a in 0..3 {
                        let z = (p[a] - c.mean[a]) / c.sd[a];
                        l += -0.5 * z * z - c.sd[a].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    }
                    l
                })
                .collect();
            logs[class.index()] = spec.prior.ln() + log_sum_exp(&terms);
        }
        let total = log_sum_exp(&logs);
        logs.map(|l| if l == f64::NEG_INFINITY { 0.0 } else { (l - total).exp() })
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

struct HandSampler<'a> {
    classes: Vec<(OutcomeClass, &'a ClassSpec)>,
    class_index: WeightedIndex<f64>,
    component_index: Vec<WeightedIndex<f64>>,
}

impl<'a> HandSampler<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        let classes: Vec<_> = scenario.class_specs().into_iter().filter(|(_, s)| s.prior > 0.0).collect();
        let class_index = WeightedIndex::new(classes.iter().map(|(_, s)| s.prior))
            .map_err(|e| Error::InvalidSynth(e.to_string()))?;
        let component_index = classes
            .iter()
            .map(|(_, s)| WeightedIndex::new(s.components.iter().map(|c| c.weight)))
            .collect::<Result<_, _>>()
            .map_err(|e| Error::InvalidSynth(e.to_string()))?;
        Ok(Self { classes, class_index, component_index })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<(OutcomeClass, ParamVector)> {
        let k = self.class_index.sample(rng);
        let (class, spec) = self.classes[k];
        let comp = &spec.components[self.component_index[k].sample(rng)];
        let normal = |a: usize| Normal::new(comp.mean[a], comp.sd[a]).expect("validated sd");
        let redraw = |rng: &mut ChaCha8Rng, a: usize, lo: f64, hi: f64| -> Result<f64> {
            let dist = normal(a);
            for _ in 0..MAX_REDRAWS {
                let x = round4(dist.sample(rng));
                if x >= lo && x <= hi {
                    return Ok(x);
                }
            }
            Err(Error::InvalidSynth(format!("component mean {:?} lies outside the valid domain", comp.mean)))
        };
        let s = redraw(rng, 0, SPEED_MIN_MPH, SPEED_MAX_MPH)?;
        let v = redraw(rng, 1, -90.0, 90.0)?;
        let h = round4(normal(2).sample(rng));
        Ok((class, ParamVector::new(s, v, h)))
    }
}

/// Draws `cfg.n` records, ordered by game date.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<BattedBallRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samplers: BTreeMap<Hand, HandSampler<'_>> =
        cfg.hands.iter().map(|(h, s)| Ok((*h, HandSampler::new(s)?))).collect::<Result<_>>()?;
    let days = (cfg.end_date - cfg.start_date).num_days();
    let lefties = cfg.left_batters();
    let id_width = |n: usize| n.to_string().len();
    let (bw, pw, tw, gw) = (id_width(cfg.batters), id_width(cfg.pitchers), id_width(cfg.teams), id_width(cfg.n));

    let mut records = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let batter = rng.random_range(0..cfg.batters);
        let hand = if batter < lefties { Hand::L } else { Hand::R };
        let (outcome, p) = samplers[&hand].draw(&mut rng)?;
        let day = rng.random_range(0..=days);
        let pitcher = rng.random_range(0..cfg.pitchers);
        let team = rng.random_range(0..cfg.teams);
        let venue = if rng.random_bool(0.5) { Venue::Home } else { Venue::Away };
        let is_bunt = cfg.bunt_fraction > 0.0 && rng.random_bool(cfg.bunt_fraction);
        records.push(BattedBallRecord {
            ball_id: format!("g{:0gw$}", i + 1),
            game_date: cfg.start_date + Duration::days(day),
            speed: p.s,
            vertical_angle: p.v,
            horizontal_angle: p.h,
            outcome,
            batter_id: format!("B{:0bw$}", batter + 1),
            pitcher_id: format!("P{:0pw$}", pitcher + 1),
            batter_hand: hand,
            fielding_team_id: format!("T{:0tw$}", team + 1),
            venue,
            is_bunt,
        });
    }
    records.sort_by_key(|r| r.game_date);
    Ok(records)
}
