//! Outcome posteriors and expected run value of a launch vector.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BattedBallRecord, Hand, OutcomeClass};
use crate::kde::{BandwidthVector, DensityEstimate, ParamVector, DENSITY_FLOOR};

/// Relative slack allowed on the upper bound of a woba value.
const BOUND_SLACK: f64 = 1e-12;

/// Linear weights per outcome class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct OutcomeWeights {
    w: [f64; 6],
}

impl Default for OutcomeWeights {
    fn default() -> Self {
        Self { w: [0.000, 0.892, 1.283, 1.635, 2.135, 0.920] }
    }
}

impl OutcomeWeights {
    pub fn new(w: [f64; 6]) -> Result<Self> {
        if w[OutcomeClass::Out.index()] != 0.0 {
            return Err(Error::InvalidWeights(format!("weight of OUT must be 0, got {}", w[0])));
        }
        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {bad} must be finite and nonnegative")));
        }
        Ok(Self { w })
    }

    pub fn get(&self, class: OutcomeClass) -> f64 {
        self.w[class.index()]
    }

    pub fn as_array(&self) -> [f64; 6] {
        self.w
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    /// Σ_j w_j p_j.
    pub fn dot(&self, probs: &[f64; 6]) -> f64 {
        self.w.iter().zip(probs).map(|(w, p)| w * p).sum()
    }
}

impl TryFrom<[f64; 6]> for OutcomeWeights {
    type Error = Error;
    fn try_from(w: [f64; 6]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<OutcomeWeights> for [f64; 6] {
    fn from(w: OutcomeWeights) -> Self {
        w.w
    }
}

/// Outcome probabilities at one launch vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub probs: [f64; 6],
    /// The marginal density was below the floor; `probs` are the priors.
    pub far_field: bool,
}

/// A fitted per-hand model: class priors, one density per outcome class and
/// the marginal density, all sharing one bandwidth.
#[derive(Debug, Clone)]
pub struct ValuationModel {
    hand: Hand,
    priors: [f64; 6],
    conditionals: [Option<DensityEstimate>; 6],
    marginal: DensityEstimate,
    labels: Vec<OutcomeClass>,
    bandwidth: BandwidthVector,
    weights: OutcomeWeights,
    excluded_classes: BTreeSet<OutcomeClass>,
}

/// Fits the model for `hand` from the records of that hand.
pub fn fit_model(
    records: &[BattedBallRecord],
    hand: Hand,
    bw: BandwidthVector,
    weights: OutcomeWeights,
    excluded_classes: &BTreeSet<OutcomeClass>,
    truncation_radius: f64,
) -> Result<ValuationModel> {
    let labeled: Vec<(ParamVector, OutcomeClass)> =
        records.iter().filter(|r| r.batter_hand == hand).map(|r| (r.params(), r.outcome)).collect();
    if labeled.is_empty() {
        return Err(Error::NoRecordsForHand(hand));
    }
    ValuationModel::from_labeled(hand, &labeled, bw, weights, excluded_classes, truncation_radius)
}

impl ValuationModel {
    /// Fits from labeled launch vectors. Samples of excluded classes are
    /// dropped from every estimate.
    pub fn from_labeled(
        hand: Hand,
        labeled: &[(ParamVector, OutcomeClass)],
        bw: BandwidthVector,
        weights: OutcomeWeights,
        excluded_classes: &BTreeSet<OutcomeClass>,
        truncation_radius: f64,
    ) -> Result<Self> {
        let kept: Vec<(ParamVector, OutcomeClass)> =
            labeled.iter().copied().filter(|(_, c)| !excluded_classes.contains(c)).collect();
        if kept.is_empty() {
            return Err(Error::NoRecordsForHand(hand));
        }
        let samples: Vec<ParamVector> = kept.iter().map(|(p, _)| *p).collect();
        let labels: Vec<OutcomeClass> = kept.iter().map(|(_, c)| *c).collect();
        let marginal = DensityEstimate::fit(&samples, bw, truncation_radius)?;

        let n = kept.len() as f64;
        let mut priors = [0.0; 6];
        let mut conditionals: [Option<DensityEstimate>; 6] = Default::default();
        for class in OutcomeClass::ALL {
            let members: Vec<ParamVector> = kept.iter().filter(|(_, c)| *c == class).map(|(p, _)| *p).collect();
            if members.is_empty() {
                continue;
            }
            priors[class.index()] = members.len() as f64 / n;
            conditionals[class.index()] = Some(DensityEstimate::fit(&members, bw, truncation_radius)?);
        }
        Ok(Self {
            hand,
            priors,
            conditionals,
            marginal,
            labels,
            bandwidth: bw,
            weights,
            excluded_classes: excluded_classes.clone(),
        })
    }

    pub fn hand(&self) -> Hand {
        self.hand
    }

    pub fn priors(&self) -> [f64; 6] {
        self.priors
    }

    pub fn conditional(&self, class: OutcomeClass) -> Option<&DensityEstimate> {
        self.conditionals[class.index()].as_ref()
    }

    pub fn marginal(&self) -> &DensityEstimate {
        &self.marginal
    }

    /// Launch vectors used by the marginal, with their outcome classes.
    pub fn labeled_samples(&self) -> impl Iterator<Item = (ParamVector, OutcomeClass)> + '_ {
        self.marginal.samples().iter().copied().zip(self.labels.iter().copied())
    }

    pub fn bandwidth(&self) -> BandwidthVector {
        self.bandwidth
    }

    pub fn truncation_radius(&self) -> f64 {
        self.marginal.truncation_radius()
    }

    pub fn weights(&self) -> OutcomeWeights {
        self.weights
    }

    pub fn excluded_classes(&self) -> &BTreeSet<OutcomeClass> {
        &self.excluded_classes
    }

    /// P̂(R_j | x) = p̂(x | R_j) P̂(R_j) / p̂(x).
    pub fn posterior(&self, x: ParamVector) -> Posterior {
        let marginal = self.marginal.density_at(x);
        if marginal < DENSITY_FLOOR {
            return Posterior { probs: self.priors, far_field: true };
        }
        let mut probs = [0.0; 6];
        for (j, cond) in self.conditionals.iter().enumerate() {
            if let Some(est) = cond {
                probs[j] = est.density_at(x) * self.priors[j] / marginal;
            }
        }
        Posterior { probs, far_field: false }
    }

    pub fn woba(&self, x: ParamVector) -> f64 {
        self.weights.dot(&self.posterior(x).probs)
    }
}

/// One model per batter hand.
#[derive(Debug, Clone, Default)]
pub struct ModelPair {
    pub left: Option<ValuationModel>,
    pub right: Option<ValuationModel>,
}

impl ModelPair {
    pub fn get(&self, hand: Hand) -> Result<&ValuationModel> {
        match hand {
            Hand::L => self.left.as_ref(),
            Hand::R => self.right.as_ref(),
        }
        .ok_or(Error::MissingModel(hand))
    }

    pub fn set(&mut self, model: ValuationModel) {
        match model.hand {
            Hand::L => self.left = Some(model),
            Hand::R => self.right = Some(model),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ValuationModel> {
        self.left.iter().chain(self.right.iter())
    }
}

/// Posterior of a ball under the model for its batter's hand.
pub fn ball_posterior(models: &ModelPair, ball: &BattedBallRecord) -> Result<Posterior> {
    Ok(models.get(ball.batter_hand)?.posterior(ball.params()))
}

/// I(b): woba of the ball's launch vector under its batter's hand model.
pub fn intrinsic_value(models: &ModelPair, ball: &BattedBallRecord) -> Result<f64> {
    Ok(models.get(ball.batter_hand)?.woba(ball.params()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedAxis {
    Speed,
    Vertical,
}

impl FixedAxis {
    /// Label of the fixed axis and of the row axis.
    fn labels(self) -> (&'static str, &'static str) {
        match self {
            FixedAxis::Speed => ("s", "v"),
            FixedAxis::Vertical => ("v", "s"),
        }
    }
}

/// start, start + step, ... ≤ end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && step.is_finite()) {
            return Err(Error::InvalidRange(format!("{start}:{end}:{step} is not finite")));
        }
        if step <= 0.0 {
            return Err(Error::InvalidRange(format!("step {step} must be positive")));
        }
        if end < start {
            return Err(Error::InvalidRange(format!("empty range {start}:{end}")));
        }
        Ok(Self { start, end, step })
    }

    pub fn values(&self) -> Vec<f64> {
        let slack = 1e-9 * self.step;
        (0..).map(|k| self.start + k as f64 * self.step).take_while(|&x| x <= self.end + slack).collect()
    }

    fn check_within(&self, name: &str, lo: f64, hi: f64, open: bool) -> Result<()> {
        let (a, b) = (self.start, self.values().last().copied().unwrap_or(self.start));
        let inside = |x: f64| if open { x > lo && x < hi } else { x >= lo && x <= hi };
        if inside(a) && inside(b) {
            Ok(())
        } else {
            Err(Error::InvalidRange(format!("{name} range {a}..{b} outside {lo}..{hi}")))
        }
    }
}

impl std::str::FromStr for AxisRange {
    type Err = Error;

    /// `start:end:step`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| Error::InvalidRange(format!("bad number '{x}' in '{s}'")));
        match parts.as_slice() {
            [a, b, c] => Self::new(parse(a)?, parse(b)?, parse(c)?),
            _ => Err(Error::InvalidRange(format!("expected start:end:step, got '{s}'"))),
        }
    }
}

/// woba over a 2-D slice of launch space. Rows follow axis 1 (v when speed
/// is fixed, s when the vertical angle is fixed); columns follow h.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub fixed_axis: FixedAxis,
    pub fixed_value: f64,
    pub axis1: AxisRange,
    pub axis2: AxisRange,
    pub axis1_values: Vec<f64>,
    pub axis2_values: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub max_weight: f64,
    pub far_field_cells: usize,
}

pub fn export_grid(
    model: &ValuationModel,
    fixed_axis: FixedAxis,
    fixed_value: f64,
    axis1: AxisRange,
    axis2: AxisRange,
) -> Result<ValueGrid> {
    match fixed_axis {
        FixedAxis::Speed => {
            if !(fixed_value > 0.0 && fixed_value < 150.0) {
                return Err(Error::InvalidRange(format!("speed {fixed_value} outside (0, 150)")));
            }
            axis1.check_within("v", -90.0, 90.0, false)?;
        }
        FixedAxis::Vertical => {
            if !(-90.0..=90.0).contains(&fixed_value) {
                return Err(Error::InvalidRange(format!("vertical angle {fixed_value} outside [-90, 90]")));
            }
            axis1.check_within("s", 0.0, 150.0, true)?;
        }
    }
    axis2.check_within("h", 45.0, 135.0, false)?;

    let rows = axis1.values();
    let cols = axis2.values();
    let point = |a: f64, h: f64| match fixed_axis {
        FixedAxis::Speed => ParamVector::new(fixed_value, a, h),
        FixedAxis::Vertical => ParamVector::new(a, fixed_value, h),
    };
    let evaluated: Vec<(Vec<f64>, usize)> = rows
        .par_iter()
        .map(|&a| {
            let mut far = 0;
            let row = cols
                .iter()
                .map(|&h| {
                    let post = model.posterior(point(a, h));
                    far += usize::from(post.far_field);
                    model.weights.dot(&post.probs)
                })
                .collect();
            (row, far)
        })
        .collect();

    let max_weight = model.weights.max();
    let far_field_cells = evaluated.iter().map(|(_, f)| f).sum();
    let values: Vec<Vec<f64>> = evaluated.into_iter().map(|(r, _)| r).collect();
    for (row, a) in values.iter().zip(&rows) {
        for (&x, h) in row.iter().zip(&cols) {
            if !(x >= 0.0 && x <= max_weight * (1.0 + BOUND_SLACK)) {
                return Err(Error::OutOfBounds(format!("woba {x} at ({a}, {h}) outside [0, {max_weight}]")));
            }
        }
    }
    Ok(ValueGrid {
        fixed_axis,
        fixed_value,
        axis1,
        axis2,
        axis1_values: rows,
        axis2_values: cols,
        values,
        max_weight,
        far_field_cells,
    })
}

/// Axis value for CSV labels, free of accumulated step rounding.
fn axis_label(x: f64) -> String {
    let rounded = (x * 1e9).round() / 1e9;
    format!("{}", if rounded == 0.0 { 0.0 } else { rounded })
}

impl ValueGrid {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (_, row_label) = self.fixed_axis.labels();
        write!(out, "{row_label}\\h")?;
        for &h in &self.axis2_values {
            write!(out, ",{}", axis_label(h))?;
        }
        writeln!(out)?;
        for (a, row) in self.axis1_values.iter().zip(&self.values) {
            write!(out, "{}", axis_label(*a))?;
            for x in row {
                write!(out, ",{x:.6}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Plain grayscale PGM: 0 maps to black and the largest weight to white;
    /// the top row is the largest axis-1 value.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let (fixed, row_label) = self.fixed_axis.labels();
        writeln!(out, "P2")?;
        writeln!(out, "# woba {fixed}={} rows={row_label} descending cols=h ascending", axis_label(self.fixed_value))?;
        writeln!(out, "{} {}", self.axis2_values.len(), self.axis1_values.len())?;
        writeln!(out, "255")?;
        for row in self.values.iter().rev() {
            let pixels: Vec<String> = row
                .iter()
                .map(|x| {
                    let level = if self.max_weight > 0.0 { (x / self.max_weight * 255.0).round() } else { 0.0 };
                    format!("{}", level.clamp(0.0, 255.0) as u8)
                })
                .collect();
            writeln!(out, "{}", pixels.join(" "))?;
        }
        Ok(())
    }

    /// Column index of the smallest value in each row.
    pub fn row_argmins(&self) -> Vec<usize> {
        self.values
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, x) in row.iter().enumerate() {
                    if *x < row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

impl fmt::Display for FixedAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixedAxis::Speed => "speed",
            FixedAxis::Vertical => "vertical",
        })
    }
}
