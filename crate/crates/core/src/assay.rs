//! Membrane-assay kinetics: percent difference to an untreated control,
//! peak and area summaries, and median-split mechanism categories.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceSeries {
    pub id: String,
    /// Minutes, strictly increasing.
    pub times: Vec<f64>,
    pub sample: Vec<f64>,
    pub control: Vec<f64>,
}

impl FluorescenceSeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n < 2 || self.sample.len() != n || self.control.len() != n {
            return Err(Error::Config(format!(
                "series {} needs at least 2 points with matching sample and control values",
                self.id
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("series {} has non-increasing time points", self.id)));
        }
        if let Some(c) = self.control.iter().find(|c| !(**c > 0.0)) {
            return Err(Error::Config(format!("series {} has non-positive control value {c}", self.id)));
        }
        Ok(())
    }
}

/// `100·(sample − control)/control` at every time point.
pub fn percent_difference(s: &FluorescenceSeries) -> Result<Vec<f64>> {
    s.validate()?;
    Ok(s.sample
        .iter()
        .zip(&s.control)
        .map(|(x, c)| 100.0 * (x - c) / c)
        .collect())
}

/// Trapezoid rule over an uneven grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// High peak, sustained.
    Potent,
    /// High peak, short-lived.
    Transient,
    /// Low peak, sustained.
    Gradual,
    Weak,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Potent => "potent",
            Self::Transient => "transient",
            Self::Gradual => "gradual",
            Self::Weak => "weak",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticSummary {
    pub id: String,
    /// Peak percent difference.
    pub max_rel: f64,
    /// Area under the percent-difference curve, %·min.
    pub auc: f64,
    pub category: Option<Category>,
}

pub fn summarize(s: &FluorescenceSeries) -> Result<KineticSummary> {
    let pd = percent_difference(s)?;
    Ok(KineticSummary {
        id: s.id.clone(),
        max_rel: pd.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        auc: trapezoid(&s.times, &pd),
        category: None,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub max_rel: f64,
    pub auc: f64,
}

/// Splits at the set's medians; values equal to a median count as low.
pub fn classify_quadrants(summaries: &[KineticSummary]) -> Result<(Vec<KineticSummary>, Medians)> {
    if summaries.len() < 2 {
        return Err(Error::EmptyInput("quadrant split needs at least 2 summaries".into()));
    }
    let m = Medians {
        max_rel: median(&summaries.iter().map(|s| s.max_rel).collect::<Vec<_>>()),
        auc: median(&summaries.iter().map(|s| s.auc).collect::<Vec<_>>()),
    };
    let out = summaries
        .iter()
        .map(|s| {
            let category = match (s.max_rel > m.max_rel, s.auc > m.auc) {
                (true, true) => Category::Potent,
                (true, false) => Category::Transient,
                (false, true) => Category::Gradual,
                (false, false) => Category::Weak,
            };
            KineticSummary {
                category: Some(category),
                ..s.clone()
            }
        })
        .collect();
    Ok((out, m))
}

/// Long-format input: `peptide_id, time_min, sample_fluor, control_fluor`,
/// with a header row. Series keep first-appearance order.
pub fn read_series<R: BufRead>(r: R) -> Result<Vec<FluorescenceSeries>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, FluorescenceSeries> = BTreeMap::new();
    let mut header_seen = false;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
        if !header_seen {
            header_seen = true;
            if fields.first() == Some(&"peptide_id") {
                continue;
            }
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("'{}' is not a number", fields[i]),
            })
        };
        let (t, x, c) = (num(1)?, num(2)?, num(3)?);
        let id = fields[0].to_string();
        let s = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            FluorescenceSeries {
                id,
                times: Vec::new(),
                sample: Vec::new(),
                control: Vec::new(),
            }
        });
        s.times.push(t);
        s.sample.push(x);
        s.control.push(c);
    }
    let out: Vec<FluorescenceSeries> = order.iter().filter_map(|id| by_id.remove(id)).collect();
    for s in &out {
        s.validate()?;
    }
    Ok(out)
}

pub fn write_summaries<W: Write>(mut w: W, summaries: &[KineticSummary]) -> Result<()> {
    writeln!(w, "peptide_id\tmax_rel\tauc\tcategory")?;
    for s in summaries {
        let cat = s.category.map_or_else(|| "NA".to_string(), |c| c.to_string());
        writeln!(w, "{}\t{:.6}\t{:.6}\t{cat}", s.id, s.max_rel, s.auc)?;
    }
    Ok(())
}
