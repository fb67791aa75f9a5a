//! Model bundle: one text file holding everything needed to rebuild both
//! hand models.
//!
//! ```text
//! IVBB1 format=1
//! {"models":[{"hand":"L","bandwidth":[...],...,"samples":[[s,v,h,j],...]}]}
//! ```
//!
//! A kernel density model is its samples plus the bandwidth, so the samples
//! are stored verbatim. Floats are written in shortest round-trip form; the
//! same models always produce the same bytes.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Hand, OutcomeClass};
use crate::kde::{BandwidthVector, ParamVector};
use crate::valuation::{ModelPair, OutcomeWeights, ValuationModel};

pub const BUNDLE_MAGIC: &str = "IVBB1";
pub const BUNDLE_FORMAT: u32 = 1;

const PRIOR_TOL: f64 = 1e-12;

/// Serialized form of one [`ValuationModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleModel {
    pub hand: Hand,
    pub bandwidth: BandwidthVector,
    pub truncation_radius: f64,
    pub weights: OutcomeWeights,
    /// Outcome codes.
    pub excluded_classes: Vec<String>,
    pub priors: [f64; 6],
    /// (s, v, h, class index)
    pub samples: Vec<(f64, f64, f64, u8)>,
    /// Bandwidth search report, when the bandwidth came from a search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub models: Vec<BundleModel>,
}

impl BundleModel {
    pub fn from_model(model: &ValuationModel, search_report: Option<String>) -> Self {
        Self {
            hand: model.hand(),
            bandwidth: model.bandwidth(),
            truncation_radius: model.truncation_radius(),
            weights: model.weights(),
            excluded_classes: model.excluded_classes().iter().map(|c| c.code().to_string()).collect(),
            priors: model.priors(),
            samples: model
                .labeled_samples()
                .map(|(p, c)| (p.s, p.v, p.h, c.index() as u8))
                .collect(),
            search_report,
        }
    }

    pub fn to_model(&self) -> Result<ValuationModel> {
        let excluded = self
            .excluded_classes
            .iter()
            .map(|code| OutcomeClass::from_code(code).ok_or_else(|| Error::Bundle(format!("unknown outcome '{code}'"))))
            .collect::<Result<BTreeSet<_>>>()?;
        let labeled = self
            .samples
            .iter()
            .map(|&(s, v, h, j)| {
                let class = OutcomeClass::from_index(j as usize)
                    .ok_or_else(|| Error::Bundle(format!("class index {j} out of range")))?;
                Ok((ParamVector::new(s, v, h), class))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = ValuationModel::from_labeled(
            self.hand,
            &labeled,
            self.bandwidth,
            self.weights,
            &excluded,
            self.truncation_radius,
        )?;
        if model.labeled_samples().count() != labeled.len() {
            return Err(Error::Bundle(format!("hand {}: samples of excluded classes present", self.hand)));
        }
        let drift = model.priors().iter().zip(&self.priors).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if drift > PRIOR_TOL {
            return Err(Error::Bundle(format!("hand {}: stored priors disagree with samples", self.hand)));
        }
        Ok(model)
    }
}

impl ModelBundle {
    pub fn new(models: &ModelPair) -> Self {
        Self { models: models.iter().map(|m| BundleModel::from_model(m, None)).collect() }
    }

    pub fn hands(&self) -> Vec<Hand> {
        self.models.iter().map(|m| m.hand).collect()
    }

    pub fn to_models(&self) -> Result<ModelPair> {
        let mut pair = ModelPair::default();
        for entry in &self.models {
            if pair.get(entry.hand).is_ok() {
                return Err(Error::Bundle(format!("hand {} appears twice", entry.hand)));
            }
            pair.set(entry.to_model()?);
        }
        if pair.left.is_none() && pair.right.is_none() {
            return Err(Error::Bundle("no models".into()));
        }
        Ok(pair)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{BUNDLE_MAGIC} format={BUNDLE_FORMAT}")?;
        serde_json::to_writer(&mut out, self)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let version = parse_header(header.trim_end())?;
        if version != BUNDLE_FORMAT {
            return Err(Error::BundleVersion { found: version, expected: BUNDLE_FORMAT });
        }
        Ok(serde_json::from_reader(input)?)
    }
}

fn parse_header(line: &str) -> Result<u32> {
    let rest = line
        .strip_prefix(BUNDLE_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Bundle(format!("missing {BUNDLE_MAGIC} header")))?;
    rest.strip_prefix("format=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Bundle(format!("malformed header '{line}'")))
}
