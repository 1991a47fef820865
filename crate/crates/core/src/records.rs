//! Annotation records and their TSV / JSONL encodings.
//!
//! TSV columns, in order: id, sequence, length, hydrophobicity,
//! hydrophobic_moment, net_charge, isoelectric_point, mic_score, verdict,
//! reject_reasons, source, external_scores. Reasons are joined with `;`,
//! external scores are written as `name=value;...` sorted by name, and an
//! absent MIC score is an empty cell.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::physchem::PropertyVector;
use crate::seq::{Peptide, Source};
use crate::{Error, Result};

pub const TSV_COLUMNS: [&str; 12] = [
    "id",
    "sequence",
    "length",
    "hydrophobicity",
    "hydrophobic_moment",
    "net_charge",
    "isoelectric_point",
    "mic_score",
    "verdict",
    "reject_reasons",
    "source",
    "external_scores",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    Tsv,
    Jsonl,
}

impl RecordFormat {
    pub fn from_extension(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "tsv" => Some(Self::Tsv),
            "jsonl" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Kept,
    Rejected(Vec<String>),
}

impl Verdict {
    pub fn is_kept(&self) -> bool {
        matches!(self, Verdict::Kept)
    }

    pub fn reasons(&self) -> &[String] {
        match self {
            Verdict::Kept => &[],
            Verdict::Rejected(r) => r,
        }
    }

    /// `Kept` for an empty list, otherwise `Rejected`.
    pub fn from_reasons(reasons: Vec<String>) -> Self {
        if reasons.is_empty() {
            Verdict::Kept
        } else {
            Verdict::Rejected(reasons)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub peptide: Peptide,
    pub properties: PropertyVector,
    pub mic_score: Option<f64>,
    pub external_scores: BTreeMap<String, f64>,
    pub verdict: Verdict,
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    id: String,
    sequence: String,
    length: usize,
    hydrophobicity: f64,
    hydrophobic_moment: f64,
    net_charge: f64,
    isoelectric_point: f64,
    mic_score: Option<f64>,
    verdict: String,
    reject_reasons: Vec<String>,
    source: Source,
    #[serde(default)]
    external_scores: BTreeMap<String, f64>,
}

fn check_text(what: &str, s: &str, forbidden: &[char]) -> Result<()> {
    if let Some(c) = s.chars().find(|c| forbidden.contains(c) || *c == '\t' || *c == '\n' || *c == '\r') {
        return Err(Error::Encoding(format!("{what} '{s}' contains {c:?}")));
    }
    Ok(())
}

fn check_finite(id: &str, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Encoding(format!("record {id}: {name} is not finite")))
    }
}

impl AnnotationRecord {
    fn validate_for_output(&self) -> Result<()> {
        let id = self.peptide.id();
        check_text("id", id, &[])?;
        if let Verdict::Rejected(r) = &self.verdict {
            if r.is_empty() {
                return Err(Error::Encoding(format!("record {id}: rejected without reasons")));
            }
            for reason in r {
                if reason.is_empty() {
                    return Err(Error::Encoding(format!("record {id}: empty reject reason")));
                }
                check_text("reason", reason, &[';'])?;
            }
        }
        for (name, &v) in &self.external_scores {
            if name.is_empty() {
                return Err(Error::Encoding(format!("record {id}: empty score name")));
            }
            check_text("score name", name, &[';', '='])?;
            check_finite(id, name, v)?;
        }
        let p = &self.properties;
        for (name, v) in [
            ("hydrophobicity", p.hydrophobicity),
            ("hydrophobic_moment", p.hydrophobic_moment),
            ("net_charge", p.net_charge),
            ("isoelectric_point", p.isoelectric_point),
        ] {
            check_finite(id, name, v)?;
        }
        if let Some(s) = self.mic_score {
            check_finite(id, "mic_score", s)?;
        }
        Ok(())
    }

    fn to_json_row(&self) -> JsonRow {
        let p = &self.properties;
        JsonRow {
            id: self.peptide.id().to_string(),
            sequence: self.peptide.residues().to_string(),
            length: p.length,
            hydrophobicity: p.hydrophobicity,
            hydrophobic_moment: p.hydrophobic_moment,
            net_charge: p.net_charge,
            isoelectric_point: p.isoelectric_point,
            mic_score: self.mic_score,
            verdict: if self.verdict.is_kept() { "kept" } else { "rejected" }.into(),
            reject_reasons: self.verdict.reasons().to_vec(),
            source: self.peptide.source(),
            external_scores: self.external_scores.clone(),
        }
    }

    fn from_json_row(row: JsonRow, line: usize) -> Result<Self> {
        let peptide = Peptide::new(row.id, &row.sequence, row.source).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let verdict = parse_verdict(&row.verdict, row.reject_reasons, line)?;
        Ok(Self {
            peptide,
            properties: PropertyVector {
                length: row.length,
                hydrophobicity: row.hydrophobicity,
                hydrophobic_moment: row.hydrophobic_moment,
                net_charge: row.net_charge,
                isoelectric_point: row.isoelectric_point,
            },
            mic_score: row.mic_score,
            external_scores: row.external_scores,
            verdict,
        })
    }
}

fn parse_verdict(label: &str, reasons: Vec<String>, line: usize) -> Result<Verdict> {
    match (label, reasons.is_empty()) {
        ("kept", true) => Ok(Verdict::Kept),
        ("rejected", false) => Ok(Verdict::Rejected(reasons)),
        ("kept", false) => Err(Error::Parse {
            line,
            message: "kept record carries reject reasons".into(),
        }),
        ("rejected", true) => Err(Error::Parse {
            line,
            message: "rejected record has no reasons".into(),
        }),
        (other, _) => Err(Error::Parse {
            line,
            message: format!("unknown verdict '{other}'"),
        }),
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[AnnotationRecord], format: RecordFormat) -> Result<()> {
    for r in records {
        r.validate_for_output()?;
    }
    match format {
        RecordFormat::Tsv => {
            writeln!(w, "{}", TSV_COLUMNS.join("\t"))?;
            for r in records {
                let p = &r.properties;
                let scores: Vec<String> = r
                    .external_scores
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.peptide.id(),
                    r.peptide.residues(),
                    p.length,
                    p.hydrophobicity,
                    p.hydrophobic_moment,
                    p.net_charge,
                    p.isoelectric_point,
                    r.mic_score.map(|s| s.to_string()).unwrap_or_default(),
                    if r.verdict.is_kept() { "kept" } else { "rejected" },
                    r.verdict.reasons().join(";"),
                    r.peptide.source().as_str(),
                    scores.join(";"),
                )?;
            }
        }
        RecordFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut w, &r.to_json_row())?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn parse_f64(cell: &str, column: &str, line: usize) -> Result<f64> {
    cell.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: '{cell}' is not a number"),
    })
}

fn parse_tsv_line(line: &str, line_no: usize, columns: usize) -> Result<AnnotationRecord> {
    let cells: Vec<&str> = line.split('\t').collect();
    if cells.len() != columns {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {columns} columns, found {}", cells.len()),
        });
    }
    let get = |i: usize| cells.get(i).copied().unwrap_or("");
    let source = if columns > 10 {
        Source::parse(get(10)).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("unknown source '{}'", get(10)),
        })?
    } else {
        Source::External
    };
    let peptide = Peptide::new(get(0), get(1), source).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let length = get(2).parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("column length: '{}' is not an integer", get(2)),
    })?;
    let mic_score = match get(7) {
        "" => None,
        s => Some(parse_f64(s, "mic_score", line_no)?),
    };
    let reasons: Vec<String> = match get(9) {
        "" => Vec::new(),
        s => s.split(';').map(str::to_string).collect(),
    };
    let verdict = parse_verdict(get(8), reasons, line_no)?;
    let mut external_scores = BTreeMap::new();
    if columns > 11 && !get(11).is_empty() {
        for item in get(11).split(';') {
            let Some((k, v)) = item.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("external score '{item}' is not name=value"),
                });
            };
            if external_scores.insert(k.to_string(), parse_f64(v, k, line_no)?).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate external score '{k}'"),
                });
            }
        }
    }
    Ok(AnnotationRecord {
        peptide,
        properties: PropertyVector {
            length,
            hydrophobicity: parse_f64(get(3), "hydrophobicity", line_no)?,
            hydrophobic_moment: parse_f64(get(4), "hydrophobic_moment", line_no)?,
            net_charge: parse_f64(get(5), "net_charge", line_no)?,
            isoelectric_point: parse_f64(get(6), "isoelectric_point", line_no)?,
        },
        mic_score,
        external_scores,
        verdict,
    })
}

/// Reads records written by [`write_records`]. TSV input may omit the two
/// trailing columns (source then defaults to external).
pub fn read_records<R: BufRead>(r: R, format: RecordFormat) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    let mut columns = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            RecordFormat::Tsv => match columns {
                None => {
                    let header: Vec<&str> = line.split('\t').collect();
                    let n = header.len();
                    if !(10..=TSV_COLUMNS.len()).contains(&n) || header[..] != TSV_COLUMNS[..n] {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "unexpected TSV header".into(),
                        });
                    }
                    columns = Some(n);
                }
                Some(n) => out.push(parse_tsv_line(&line, line_no, n)?),
            },
            RecordFormat::Jsonl => {
                let row: JsonRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                out.push(AnnotationRecord::from_json_row(row, line_no)?);
            }
        }
    }
    Ok(out)
}
