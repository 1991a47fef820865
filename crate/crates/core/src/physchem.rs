//! Physicochemical descriptors: mean hydrophobicity, hydrophobic moment,
//! formal net charge and isoelectric point.

use serde::{Deserialize, Serialize};

use crate::seq::{residue_index, Peptide, ALPHABET};
use crate::{Error, Result};

/// Residue angle on the idealised α-helix wheel.
pub const HELIX_ANGLE_DEG: f64 = 100.0;

/// Eisenberg consensus hydropathy, indexed like [`ALPHABET`].
pub const EISENBERG: [f64; 20] = [
    0.62,  // A
    0.29,  // C
    -0.90, // D
    -0.74, // E
    1.19,  // F
    0.48,  // G
    -0.40, // H
    1.38,  // I
    -1.50, // K
    1.06,  // L
    0.64,  // M
    -0.78, // N
    0.12,  // P
    -0.85, // Q
    -2.53, // R
    -0.18, // S
    -0.05, // T
    1.08,  // V
    0.81,  // W
    0.26,  // Y
];

/// pKa values for the ionisable groups used by the isoelectric point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PkaSet {
    pub n_term: f64,
    pub c_term: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub h: f64,
    pub k: f64,
    pub r: f64,
    pub y: f64,
}

impl PkaSet {
    /// EMBOSS pKa table.
    pub fn emboss() -> Self {
        Self {
            n_term: 8.6,
            c_term: 3.6,
            c: 8.5,
            d: 3.9,
            e: 4.1,
            h: 6.5,
            k: 10.8,
            r: 12.5,
            y: 10.1,
        }
    }

    fn entries_mut(&mut self) -> [(&'static str, &mut f64); 9] {
        [
            ("n_term", &mut self.n_term),
            ("c_term", &mut self.c_term),
            ("C", &mut self.c),
            ("D", &mut self.d),
            ("E", &mut self.e),
            ("H", &mut self.h),
            ("K", &mut self.k),
            ("R", &mut self.r),
            ("Y", &mut self.y),
        ]
    }
}

/// Versioned hydropathy + pKa constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    pub version: String,
    pub hydropathy: [f64; 20],
    pub pka: PkaSet,
}

impl Default for ScaleTable {
    fn default() -> Self {
        Self {
            version: "eisenberg-consensus+emboss-pka/1".to_string(),
            hydropathy: EISENBERG,
            pka: PkaSet::emboss(),
        }
    }
}

impl ScaleTable {
    pub fn validate(&self) -> Result<()> {
        let mut pka = self.pka.clone();
        for (name, v) in pka.entries_mut() {
            if !(*v > 0.0 && *v < 14.0) {
                return Err(Error::Config(format!("pKa for {name} must lie in (0, 14), got {v}")));
            }
        }
        if self.hydropathy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("hydropathy values must be finite".into()));
        }
        Ok(())
    }

    /// Applies `key = value` overrides, one per line (`#` starts a comment).
    /// Keys are `hydropathy.<residue>`, `pka.<C|D|E|H|K|R|Y>`, `pka.n_term`,
    /// `pka.c_term` or `version`. All bad lines are reported together.
    pub fn with_overrides(mut self, text: &str) -> Result<Self> {
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key = value", i + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if key == "version" {
                self.version = value.to_string();
                continue;
            }
            let Ok(v) = value.parse::<f64>() else {
                problems.push(format!("line {}: '{value}' is not a number", i + 1));
                continue;
            };
            let applied = if let Some(res) = key.strip_prefix("hydropathy.") {
                match res.as_bytes() {
                    [b] => residue_index(b.to_ascii_uppercase())
                        .map(|idx| self.hydropathy[idx] = v)
                        .is_some(),
                    _ => false,
                }
            } else if let Some(group) = key.strip_prefix("pka.") {
                self.pka
                    .entries_mut()
                    .into_iter()
                    .find(|(name, _)| *name == group)
                    .map(|(_, slot)| *slot = v)
                    .is_some()
            } else {
                false
            };
            if !applied {
                problems.push(format!("line {}: unknown key '{key}'", i + 1));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn hydropathy_of(&self, residue: u8) -> f64 {
        self.hydropathy[residue_index(residue).expect("canonical residue")]
    }
}

/// The five descriptors fed to rewards and screening.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyVector {
    pub length: usize,
    pub hydrophobicity: f64,
    pub hydrophobic_moment: f64,
    pub net_charge: f64,
    pub isoelectric_point: f64,
}

impl PropertyVector {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.length as f64,
            self.hydrophobicity,
            self.hydrophobic_moment,
            self.net_charge,
            self.isoelectric_point,
        ]
    }
}

pub fn mean_hydrophobicity(p: &Peptide, scale: &ScaleTable) -> f64 {
    let total: f64 = p.indices().map(|i| scale.hydropathy[i]).sum();
    total / p.len() as f64
}

/// Mean hydrophobic moment on a helical wheel with `delta_deg` per residue,
/// indexing residues from 0.
pub fn hydrophobic_moment(p: &Peptide, scale: &ScaleTable, delta_deg: f64) -> f64 {
    let delta = delta_deg.to_radians();
    let (mut s, mut c) = (0.0, 0.0);
    for (n, i) in p.indices().enumerate() {
        let h = scale.hydropathy[i];
        let angle = n as f64 * delta;
        s += h * angle.sin();
        c += h * angle.cos();
    }
    (s * s + c * c).sqrt() / p.len() as f64
}

/// Formal charge: +1 per K, R, H and −1 per D, E. Termini are ignored.
pub fn net_charge(p: &Peptide) -> f64 {
    p.bytes()
        .iter()
        .map(|b| match b {
            b'K' | b'R' | b'H' => 1.0,
            b'D' | b'E' => -1.0,
            _ => 0.0,
        })
        .sum()
}

/// Continuous Henderson–Hasselbalch charge at `ph`, including both termini.
pub fn charge_at_ph(p: &Peptide, scale: &ScaleTable, ph: f64) -> f64 {
    let pka = &scale.pka;
    let pos = |pk: f64| 1.0 / (1.0 + 10f64.powf(ph - pk));
    let neg = |pk: f64| -1.0 / (1.0 + 10f64.powf(pk - ph));
    let mut counts = [0usize; 256];
    for &b in p.bytes() {
        counts[b as usize] += 1;
    }
    let n = |b: u8| counts[b as usize] as f64;
    pos(pka.n_term)
        + neg(pka.c_term)
        + n(b'K') * pos(pka.k)
        + n(b'R') * pos(pka.r)
        + n(b'H') * pos(pka.h)
        + n(b'D') * neg(pka.d)
        + n(b'E') * neg(pka.e)
        + n(b'C') * neg(pka.c)
        + n(b'Y') * neg(pka.y)
}

/// Bisection for the zero of [`charge_at_ph`] on [0, 14].
pub fn isoelectric_point(p: &Peptide, scale: &ScaleTable) -> f64 {
    const TOL: f64 = 1e-6;
    let (mut lo, mut hi) = (0.0_f64, 14.0_f64);
    if charge_at_ph(p, scale, lo) < 0.0 {
        return 0.0;
    }
    if charge_at_ph(p, scale, hi) > 0.0 {
        return 14.0;
    }
    let mut mid = 7.0;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let q = charge_at_ph(p, scale, mid);
        if q.abs() < TOL || hi - lo < 1e-12 {
            break;
        }
        if q > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mid
}

pub fn descriptor_vector(p: &Peptide, scale: &ScaleTable) -> PropertyVector {
    PropertyVector {
        length: p.len(),
        hydrophobicity: mean_hydrophobicity(p, scale),
        hydrophobic_moment: hydrophobic_moment(p, scale, HELIX_ANGLE_DEG),
        net_charge: net_charge(p),
        isoelectric_point: isoelectric_point(p, scale),
    }
}

/// Hydropathy scale as (residue, value) pairs, for reporting.
pub fn hydropathy_table(scale: &ScaleTable) -> Vec<(char, f64)> {
    ALPHABET
        .iter()
        .zip(scale.hydropathy)
        .map(|(&b, v)| (b as char, v))
        .collect()
}
