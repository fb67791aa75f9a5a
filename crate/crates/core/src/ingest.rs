//! Batted-ball records: the data model, the delimited input format, the
//! fair-contact filter, handedness split and the day-of-month validation
//! partition used for bandwidth selection.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::ParamVector;

/// Exact column names of the input format, in canonical order.
pub const HEADER: [&str; 12] = [
    "ball_id",
    "game_date",
    "speed",
    "vertical_angle",
    "horizontal_angle",
    "outcome",
    "batter_id",
    "pitcher_id",
    "batter_hand",
    "fielding_team_id",
    "venue",
    "is_bunt",
];

/// Fair territory in horizontal angle, closed at both foul lines.
pub const FAIR_MIN_DEG: f64 = 45.0;
pub const FAIR_MAX_DEG: f64 = 135.0;

/// Speeds at or beyond these bounds are rejected at ingest.
pub const SPEED_MIN_MPH: f64 = 0.0;
pub const SPEED_MAX_MPH: f64 = 150.0;

/// Outcome of a batted ball. The discriminant is the fixed class index used
/// by weights, priors and posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeClass {
    Out = 0,
    Single = 1,
    Double = 2,
    Triple = 3,
    HomeRun = 4,
    ReachedOnError = 5,
}

impl OutcomeClass {
    pub const COUNT: usize = 6;
    pub const ALL: [OutcomeClass; 6] = [
        OutcomeClass::Out,
        OutcomeClass::Single,
        OutcomeClass::Double,
        OutcomeClass::Triple,
        OutcomeClass::HomeRun,
        OutcomeClass::ReachedOnError,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Code used in the input format.
    pub fn code(self) -> &'static str {
        match self {
            OutcomeClass::Out => "OUT",
            OutcomeClass::Single => "1B",
            OutcomeClass::Double => "2B",
            OutcomeClass::Triple => "3B",
            OutcomeClass::HomeRun => "HR",
            OutcomeClass::ReachedOnError => "ROE",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Side of the plate the batter hit from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hand {
    L,
    R,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::L, Hand::R];

    pub fn code(self) -> &'static str {
        match self {
            Hand::L => "L",
            Hand::R => "R",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "L" => Some(Hand::L),
            "R" => Some(Hand::R),
            _ => None,
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Whether the fielding team was at home.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Venue {
    Home,
    Away,
}

impl Venue {
    pub fn code(self) -> &'static str {
        match self {
            Venue::Home => "HOME",
            Venue::Away => "AWAY",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "HOME" => Some(Venue::Home),
            "AWAY" => Some(Venue::Away),
            _ => None,
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Venue::Home => Venue::Away,
            Venue::Away => Venue::Home,
        }
    }
}

/// One measured batted ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BattedBallRecord {
    pub ball_id: String,
    pub game_date: NaiveDate,
    /// Initial speed, mph.
    pub speed: f64,
    /// Launch angle above the field plane, degrees.
    pub vertical_angle: f64,
    /// Spray angle, degrees; 45 is the first-base line, 135 the third-base line.
    pub horizontal_angle: f64,
    pub outcome: OutcomeClass,
    pub batter_id: String,
    pub pitcher_id: String,
    pub batter_hand: Hand,
    pub fielding_team_id: String,
    /// Relative to the fielding team.
    pub venue: Venue,
    pub is_bunt: bool,
}

impl BattedBallRecord {
    pub fn params(&self) -> ParamVector {
        ParamVector::new(self.speed, self.vertical_angle, self.horizontal_angle)
    }

    pub fn day_of_month(&self) -> u32 {
        self.game_date.day()
    }
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: u64,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

/// Result of parsing an input file: accepted records plus one diagnostic per
/// rejected row.
#[derive(Debug, Clone, Default)]
pub struct ParsedDataset {
    pub records: Vec<BattedBallRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedDataset {
    pub fn rows_read(&self) -> usize {
        self.records.len() + self.diagnostics.len()
    }
}

/// Column positions resolved from the header line.
#[derive(Debug, Clone)]
struct ColumnMap {
    positions: [usize; 12],
}

impl ColumnMap {
    fn from_header(fields: &csv::StringRecord) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (pos, name) in fields.iter().enumerate() {
            let name = name.trim();
            if !HEADER.contains(&name) {
                return Err(Error::MalformedHeader(format!("unknown column '{name}'")));
            }
            if seen.insert(name, pos).is_some() {
                return Err(Error::MalformedHeader(format!("duplicate column '{name}'")));
            }
        }
        let mut positions = [0usize; 12];
        for (slot, name) in positions.iter_mut().zip(HEADER) {
            *slot = *seen
                .get(name)
                .ok_or_else(|| Error::MalformedHeader(format!("missing column '{name}'")))?;
        }
        Ok(Self { positions })
    }

    fn get<'a>(&self, row: &'a csv::StringRecord, column: usize) -> &'a str {
        row.get(self.positions[column]).unwrap_or("").trim()
    }
}

fn parse_real(value: &str, name: &str) -> Result<f64, String> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("invalid {name} '{value}'")),
    }
}

fn parse_row(map: &ColumnMap, row: &csv::StringRecord) -> Result<BattedBallRecord, String> {
    if row.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), row.len()));
    }
    let text = |column: usize| map.get(row, column);

    let ball_id = text(0).to_owned();
    if ball_id.is_empty() {
        return Err("empty ball_id".into());
    }
    let game_date = NaiveDate::parse_from_str(text(1), "%Y-%m-%d")
        .map_err(|_| format!("invalid game_date '{}'", text(1)))?;
    let speed = parse_real(text(2), "speed")?;
    if !(speed > SPEED_MIN_MPH && speed < SPEED_MAX_MPH) {
        return Err("speed out of range".into());
    }
    let vertical_angle = parse_real(text(3), "vertical_angle")?;
    if !(-90.0..=90.0).contains(&vertical_angle) {
        return Err("vertical_angle out of range".into());
    }
    let horizontal_angle = parse_real(text(4), "horizontal_angle")?;
    let outcome = OutcomeClass::from_code(text(5))
        .ok_or_else(|| format!("unknown outcome '{}'", text(5)))?;
    let batter_hand =
        Hand::from_code(text(8)).ok_or_else(|| format!("invalid batter_hand '{}'", text(8)))?;
    let venue = Venue::from_code(text(10)).ok_or_else(|| format!("invalid venue '{}'", text(10)))?;
    let is_bunt = match text(11) {
        "0" => false,
        "1" => true,
        other => return Err(format!("invalid is_bunt '{other}'")),
    };

    Ok(BattedBallRecord {
        ball_id,
        game_date,
        speed,
        vertical_angle,
        horizontal_angle,
        outcome,
        batter_id: text(6).to_owned(),
        pitcher_id: text(7).to_owned(),
        batter_hand,
        fielding_team_id: text(9).to_owned(),
        venue,
        is_bunt,
    })
}

/// Parses the comma-delimited input format. The header resolves the column
/// mapping; a bad header is fatal, bad rows are reported and skipped.
pub fn parse_dataset<R: Read>(source: R) -> Result<ParsedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);

    let mut rows = reader.records();
    let header = match rows.next() {
        Some(row) => row?,
        None => return Err(Error::MalformedHeader("input is empty".into())),
    };
    let map = ColumnMap::from_header(&header)?;

    let mut parsed = ParsedDataset::default();
    for row in rows {
        let row = match row {
            Ok(row) => row,
            Err(err) => {
                let line = err.position().map_or(0, |p| p.line());
                parsed.diagnostics.push(Diagnostic { line, reason: err.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&map, &row) {
            Ok(record) => parsed.records.push(record),
            Err(reason) => parsed.diagnostics.push(Diagnostic { line, reason }),
        }
    }
    Ok(parsed)
}

/// Writes records in the input format with the canonical header.
pub fn write_dataset<W: Write>(records: &[BattedBallRecord], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(HEADER)?;
    for r in records {
        writer.write_record([
            r.ball_id.as_str(),
            &r.game_date.format("%Y-%m-%d").to_string(),
            &format!("{:.4}", r.speed),
            &format!("{:.4}", r.vertical_angle),
            &format!("{:.4}", r.horizontal_angle),
            r.outcome.code(),
            &r.batter_id,
            &r.pitcher_id,
            r.batter_hand.code(),
            &r.fielding_team_id,
            r.venue.code(),
            if r.is_bunt { "1" } else { "0" },
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn is_fair_contact(record: &BattedBallRecord) -> bool {
    !record.is_bunt && (FAIR_MIN_DEG..=FAIR_MAX_DEG).contains(&record.horizontal_angle)
}

/// Keeps non-bunts with a horizontal angle in fair territory, preserving order.
pub fn filter_fair_contact(records: Vec<BattedBallRecord>) -> Vec<BattedBallRecord> {
    records.into_iter().filter(is_fair_contact).collect()
}

/// Partitions records by batter side, preserving order within each side.
pub fn split_by_handedness(
    records: Vec<BattedBallRecord>,
) -> (Vec<BattedBallRecord>, Vec<BattedBallRecord>) {
    records.into_iter().partition(|r| r.batter_hand == Hand::L)
}

/// Validation sets for bandwidth selection. Set `i` (1-based) holds indices of
/// records hit on day `6i - 5` of a month.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationPartition {
    pub sets: Vec<Vec<usize>>,
    pub set_size: usize,
}

impl ValidationPartition {
    /// Day of month feeding set `i` (1-based).
    pub fn day_for_set(i: usize) -> u32 {
        (6 * i - 5) as u32
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Builds `m` disjoint validation sets of equal size. Each day bucket is
/// truncated to the smallest bucket's count, keeping the earliest records in
/// input order.
pub fn build_validation_partition(
    records: &[BattedBallRecord],
    m: usize,
) -> Result<ValidationPartition> {
    if m == 0 {
        return Err(Error::InvalidSearch("need at least one validation set".into()));
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (idx, record) in records.iter().enumerate() {
        let day = record.day_of_month();
        if day % 6 == 1 {
            let set = (day as usize).div_ceil(6);
            if set <= m {
                buckets[set - 1].push(idx);
            }
        }
    }
    if let Some(empty) = buckets.iter().position(Vec::is_empty) {
        return Err(Error::EmptyValidationSet(empty + 1));
    }
    let set_size = buckets.iter().map(Vec::len).min().unwrap_or(0);
    for bucket in &mut buckets {
        bucket.truncate(set_size);
    }
    Ok(ValidationPartition { sets: buckets, set_size })
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn record(id: &str, day: u32, h: f64, hand: Hand, outcome: OutcomeClass) -> BattedBallRecord {
        BattedBallRecord {
            ball_id: id.into(),
            game_date: NaiveDate::from_ymd_opt(2014, 5, day).unwrap(),
            speed: 90.0,
            vertical_angle: 10.0,
            horizontal_angle: h,
            outcome,
            batter_id: "B1".into(),
            pitcher_id: "P1".into(),
            batter_hand: hand,
            fielding_team_id: "T1".into(),
            venue: Venue::Home,
            is_bunt: false,
        }
    }
}
