//! Player and team aggregates of intrinsic (I) and observed (O) values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BattedBallRecord, OutcomeClass, Venue};
use rayon::prelude::*;

use crate::valuation::{ball_posterior, fit_model, ModelPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallValuation {
    pub ball_id: String,
    pub intrinsic: f64,
    pub observed: f64,
    pub batter_id: String,
    pub pitcher_id: String,
    pub fielding_team_id: String,
    pub venue: Venue,
    pub far_field: bool,
}

/// Values every record under the model of its batter's hand. O(b) is the
/// weight of the recorded outcome in that model.
pub fn value_all(models: &ModelPair, records: &[BattedBallRecord]) -> Result<Vec<BallValuation>> {
    records
        .iter()
        .map(|r| {
            let model = models.get(r.batter_hand)?;
            let post = ball_posterior(models, r)?;
            Ok(BallValuation {
                ball_id: r.ball_id.clone(),
                intrinsic: model.weights().dot(&post.probs),
                observed: model.weights().get(r.outcome),
                batter_id: r.batter_id.clone(),
                pitcher_id: r.pitcher_id.clone(),
                fielding_team_id: r.fielding_team_id.clone(),
                venue: r.venue,
                far_field: post.far_field,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKey {
    Batter,
    Pitcher,
}

impl GroupKey {
    pub fn of(self, record: &BattedBallRecord) -> &str {
        match self {
            GroupKey::Batter => &record.batter_id,
            GroupKey::Pitcher => &record.pitcher_id,
        }
    }
}

/// Values each group's balls under models refitted on `training` minus that
/// group's own balls. Bandwidth, weights, exclusions and radius come from
/// `models`. Output follows the order of `records`.
pub fn value_leave_group_out(
    models: &ModelPair,
    training: &[BattedBallRecord],
    records: &[BattedBallRecord],
    key: GroupKey,
) -> Result<Vec<BallValuation>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(key.of(r)).or_default().push(i);
    }
    let groups: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
    let valued: Vec<Vec<(usize, BallValuation)>> = groups
        .par_iter()
        .map(|(id, idx)| {
            let rest: Vec<BattedBallRecord> = training.iter().filter(|r| key.of(r) != *id).cloned().collect();
            let mut refit = ModelPair::default();
            for m in models.iter() {
                if idx.iter().any(|&i| records[i].batter_hand == m.hand()) {
                    refit.set(fit_model(
                        &rest,
                        m.hand(),
                        m.bandwidth(),
                        m.weights(),
                        m.excluded_classes(),
                        m.truncation_radius(),
                    )?);
                }
            }
            let mine: Vec<BattedBallRecord> = idx.iter().map(|&i| records[i].clone()).collect();
            Ok(idx.iter().copied().zip(value_all(&refit, &mine)?).collect())
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<BallValuation>> = vec![None; records.len()];
    for (i, v) in valued.into_iter().flatten() {
        out[i] = Some(v);
    }
    Ok(out.into_iter().map(|v| v.expect("every record belongs to a group")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SortKey {
    IBar,
    Diff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group_id: String,
    pub count: usize,
    pub i_bar: f64,
    pub o_bar: f64,
    pub diff: f64,
}

impl AggregateRow {
    fn key(&self, sort: SortKey) -> f64 {
        match sort {
            SortKey::IBar => self.i_bar,
            SortKey::Diff => self.diff,
        }
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n, if n == 0 { f64::NAN } else { sum / n as f64 })
}

/// Per-group means over groups with at least `min_count` balls, sorted by the
/// sort key descending, then group id ascending.
pub fn aggregate(valuations: &[BallValuation], key: GroupKey, min_count: usize, sort: SortKey) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<&str, Vec<&BallValuation>> = BTreeMap::new();
    for v in valuations {
        let id = match key {
            GroupKey::Batter => v.batter_id.as_str(),
            GroupKey::Pitcher => v.pitcher_id.as_str(),
        };
        groups.entry(id).or_default().push(v);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_iter()
        .filter(|(_, balls)| balls.len() >= min_count.max(1))
        .map(|(id, balls)| {
            let (count, i_bar) = mean_of(balls.iter().map(|b| b.intrinsic));
            let (_, o_bar) = mean_of(balls.iter().map(|b| b.observed));
            AggregateRow { group_id: id.to_string(), count, i_bar, o_bar, diff: o_bar - i_bar }
        })
        .collect();
    sort_rows(&mut rows, sort, true);
    rows
}

fn sort_rows(rows: &mut [AggregateRow], sort: SortKey, descending: bool) {
    rows.sort_by(|a, b| {
        let by_value = a.key(sort).total_cmp(&b.key(sort));
        let by_value = if descending { by_value.reverse() } else { by_value };
        by_value.then_with(|| a.group_id.cmp(&b.group_id))
    });
}

/// Fixed-width text table: the `top_k` best rows by the sort key, then the
/// `bottom_k` worst in ascending order.
pub fn leaderboard_report(rows: &[AggregateRow], sort: SortKey, top_k: usize, bottom_k: usize) -> String {
    let id_width = rows.iter().map(|r| r.group_id.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let header = |out: &mut String, title: &str| {
        let _ = writeln!(out, "{title}");
        let _ = writeln!(out, "{:>4}  {:<id_width$}  {:>6}  {:>8}  {:>8}  {:>8}", "rank", "group_id", "count", "I_bar", "O_bar", "O-I");
    };
    let line = |out: &mut String, rank: usize, r: &AggregateRow| {
        let _ = writeln!(
            out,
            "{rank:>4}  {:<id_width$}  {:>6}  {:>8.4}  {:>8.4}  {:>8.4}",
            r.group_id, r.count, r.i_bar, r.o_bar, r.diff
        );
    };
    let mut best = rows.to_vec();
    sort_rows(&mut best, sort, true);
    if top_k > 0 {
        header(&mut out, &format!("top {top_k}"));
        for (i, r) in best.iter().take(top_k).enumerate() {
            line(&mut out, i + 1, r);
        }
    }
    if bottom_k > 0 {
        if top_k > 0 {
            out.push('\n');
        }
        let mut worst = rows.to_vec();
        sort_rows(&mut worst, sort, false);
        header(&mut out, &format!("bottom {bottom_k}"));
        for r in worst.iter().take(bottom_k) {
            let rank = best.iter().position(|b| b.group_id == r.group_id).map_or(0, |p| p + 1);
            line(&mut out, rank, r);
        }
    }
    out
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], mut out: W) -> Result<()> {
    writeln!(out, "group_id,count,i_bar,o_bar,diff")?;
    for r in rows {
        writeln!(out, "{},{},{:.4},{:.4},{:.4}", r.group_id, r.count, r.i_bar, r.o_bar, r.diff)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub team_id: String,
    pub count: usize,
    pub d: f64,
    pub d_home: Option<f64>,
    pub d_away: Option<f64>,
    /// None when the team has no balls in one of the venues.
    pub d_ha: Option<f64>,
}

#[derive(Default)]
struct Sums {
    n: usize,
    i: f64,
    o: f64,
}

impl Sums {
    fn add(&mut self, i: f64, o: f64) {
        self.n += 1;
        self.i += i;
        self.o += o;
    }

    fn d(&self) -> Option<f64> {
        (self.n > 0).then(|| self.i / self.n as f64 - self.o / self.n as f64)
    }
}

/// Contact-adjusted defense per fielding team over non-HR balls:
/// D = mean(I) − mean(O), split by venue, D_HA = D_home − D_away.
pub fn team_defense(models: &ModelPair, records: &[BattedBallRecord]) -> Result<Vec<DefenseRow>> {
    let mut any = false;
    for m in models.iter() {
        any = true;
        if !m.excluded_classes().contains(&OutcomeClass::HomeRun) {
            return Err(Error::DefenseRequiresNonHr);
        }
    }
    if !any {
        return Err(Error::DefenseRequiresNonHr);
    }
    let mut teams: BTreeMap<&str, [Sums; 3]> = BTreeMap::new();
    for r in records.iter().filter(|r| r.outcome != OutcomeClass::HomeRun) {
        let model = models.get(r.batter_hand)?;
        let i = model.woba(r.params());
        let o = model.weights().get(r.outcome);
        let sums = teams.entry(r.fielding_team_id.as_str()).or_default();
        sums[0].add(i, o);
        let venue = match r.venue {
            Venue::Home => 1,
            Venue::Away => 2,
        };
        sums[venue].add(i, o);
    }
    Ok(teams
        .into_iter()
        .map(|(team, [all, home, away])| {
            let (d_home, d_away) = (home.d(), away.d());
            DefenseRow {
                team_id: team.to_string(),
                count: all.n,
                d: all.d().unwrap_or(f64::NAN),
                d_home,
                d_away,
                d_ha: d_home.zip(d_away).map(|(h, a)| h - a),
            }
        })
        .collect())
}

pub fn write_defense_csv<W: Write>(rows: &[DefenseRow], mut out: W) -> Result<()> {
    let cell = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
    writeln!(out, "team_id,d,d_home,d_away,d_ha")?;
    for r in rows {
        writeln!(out, "{},{:.4},{},{},{}", r.team_id, r.d, cell(r.d_home), cell(r.d_away), cell(r.d_ha))?;
    }
    Ok(())
}
