//! Canonical peptide representation and FASTA handling.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The 20 canonical one-letter residue codes, in index order.
pub const ALPHABET: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

const fn build_index() -> [u8; 256] {
    let mut table = [u8::MAX; 256];
    let mut i = 0;
    while i < 20 {
        table[ALPHABET[i] as usize] = i as u8;
        i += 1;
    }
    table
}

static INDEX: [u8; 256] = build_index();

/// Alphabet index of an uppercase residue byte.
pub fn residue_index(b: u8) -> Option<usize> {
    match INDEX[b as usize] {
        u8::MAX => None,
        i => Some(i as usize),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Natural,
    GeneratedSft,
    GeneratedRl,
    #[default]
    External,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Natural => "natural",
            Source::GeneratedSft => "generated_sft",
            Source::GeneratedRl => "generated_rl",
            Source::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "natural" => Source::Natural,
            "generated_sft" => Source::GeneratedSft,
            "generated_rl" => Source::GeneratedRl,
            "external" => Source::External,
            _ => return None,
        })
    }
}

/// A non-empty sequence over the canonical alphabet.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Peptide {
    id: String,
    residues: String,
    source: Source,
}

impl Peptide {
    /// Validates `raw` (case-insensitive, whitespace ignored).
    pub fn new(id: impl Into<String>, raw: &str, source: Source) -> Result<Self> {
        let residues = normalise(raw)?;
        Ok(Self {
            id: id.into(),
            residues,
            source,
        })
    }

    /// Builds a peptide from alphabet indices.
    pub fn from_indices(id: impl Into<String>, indices: &[usize], source: Source) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySequence);
        }
        let residues = indices
            .iter()
            .map(|&i| {
                ALPHABET
                    .get(i)
                    .map(|&b| b as char)
                    .ok_or_else(|| Error::Config(format!("residue index {i} out of range")))
            })
            .collect::<Result<String>>()?;
        Ok(Self {
            id: id.into(),
            residues,
            source,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn residues(&self) -> &str {
        &self.residues
    }

    pub fn bytes(&self) -> &[u8] {
        self.residues.as_bytes()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.residues
            .bytes()
            .map(|b| residue_index(b).expect("validated residue"))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }
}

impl fmt::Display for Peptide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.residues)
    }
}

fn normalise(raw: &str) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars().filter(|c| !c.is_whitespace()) {
        let up = c.to_ascii_uppercase();
        if !up.is_ascii() || residue_index(up as u8).is_none() {
            return Err(Error::InvalidResidue {
                residue: c,
                position: out.len() + 1,
            });
        }
        out.push(up);
    }
    if out.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(out)
}

/// Uppercases, strips whitespace and checks every residue is canonical.
/// Error positions are 1-based in the stripped sequence.
pub fn validate_sequence(raw: &str) -> Result<Peptide> {
    Peptide::new("", raw, Source::External)
}

/// Parses FASTA text. Sequence bodies may wrap across lines; the record id is
/// the first whitespace-delimited token of the header.
pub fn parse_fasta(text: &str, source: Source) -> Result<Vec<Peptide>> {
    struct Pending {
        id: String,
        header_line: usize,
        body: String,
    }
    let finish = |p: Pending, out: &mut Vec<Peptide>| -> Result<()> {
        if p.body.is_empty() {
            return Err(Error::Parse {
                line: p.header_line,
                message: format!("record '{}' has an empty sequence", p.id),
            });
        }
        out.push(Peptide {
            id: p.id,
            residues: p.body,
            source,
        });
        Ok(())
    };

    let mut out = Vec::new();
    let mut current: Option<Pending> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            if let Some(p) = current.take() {
                finish(p, &mut out)?;
            }
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "header has no identifier".into(),
                });
            }
            current = Some(Pending {
                id,
                header_line: line_no,
                body: String::new(),
            });
        } else {
            let Some(p) = current.as_mut() else {
                return Err(Error::Parse {
                    line: line_no,
                    message: "sequence data before any '>' header".into(),
                });
            };
            for (col, c) in line.chars().enumerate() {
                if c.is_whitespace() {
                    continue;
                }
                let up = c.to_ascii_uppercase();
                if !up.is_ascii() || residue_index(up as u8).is_none() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("invalid residue '{c}' at column {}", col + 1),
                    });
                }
                p.body.push(up);
            }
        }
    }
    if let Some(p) = current.take() {
        finish(p, &mut out)?;
    }
    Ok(out)
}

pub fn write_fasta<W: Write>(mut w: W, peptides: &[Peptide]) -> Result<()> {
    for p in peptides {
        writeln!(w, ">{}", p.id)?;
        writeln!(w, "{}", p.residues)?;
    }
    Ok(())
}

/// Drops exact residue-string duplicates, keeping the first occurrence.
pub fn dedup_exact(peptides: Vec<Peptide>) -> Vec<Peptide> {
    let mut seen = HashSet::with_capacity(peptides.len());
    peptides
        .into_iter()
        .filter(|p| seen.insert(p.residues.clone()))
        .collect()
}
