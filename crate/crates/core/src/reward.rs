//! Composite reward: activity term from the classifier score, clamped
//! physicochemical term, their convex mix, and batch post-processing.

use serde::{Deserialize, Serialize};

use crate::physchem::PropertyVector;
use crate::{Error, Result};

/// Weights d₁..d₅ of the property reward. No defaults are applied when
/// deserialising; every experiment config has to state them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyWeights {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
}

impl Default for PropertyWeights {
    fn default() -> Self {
        Self {
            d1: 1.0,
            d2: 1.0,
            d3: 0.1,
            d4: 0.1,
            d5: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClampRanges {
    pub hydrophobicity: [f64; 2],
    pub hydrophobic_moment: [f64; 2],
    pub net_charge: [f64; 2],
    pub isoelectric_point: [f64; 2],
}

impl Default for ClampRanges {
    fn default() -> Self {
        Self {
            hydrophobicity: [-0.5, 0.8],
            hydrophobic_moment: [0.0, 0.6],
            net_charge: [-5.0, 9.0],
            isoelectric_point: [8.0, 11.0],
        }
    }
}

fn default_beta() -> f64 {
    4.0
}
fn default_offset() -> f64 {
    0.35
}
fn default_breakpoint() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_breakpoint")]
    pub breakpoint: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub weights: PropertyWeights,
    #[serde(default)]
    pub clamps: ClampRanges,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta: default_beta(),
            offset: default_offset(),
            breakpoint: default_breakpoint(),
            lambda: default_lambda(),
            weights: PropertyWeights::default(),
            clamps: ClampRanges::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        let c = &self.clamps;
        for (name, [lo, hi]) in [
            ("hydrophobicity", c.hydrophobicity),
            ("hydrophobic_moment", c.hydrophobic_moment),
            ("net_charge", c.net_charge),
            ("isoelectric_point", c.isoelectric_point),
        ] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("clamp range for {name} has lower > upper")));
            }
        }
        Ok(())
    }
}

/// Per-term contributions d_k·clamp(p_k) and the constant d₅.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyTerms {
    pub hydrophobicity: f64,
    pub hydrophobic_moment: f64,
    pub net_charge: f64,
    pub isoelectric_point: f64,
    pub constant: f64,
}

impl PropertyTerms {
    pub fn total(&self) -> f64 {
        self.hydrophobicity + self.hydrophobic_moment + self.net_charge + self.isoelectric_point + self.constant
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub s: f64,
    pub r_mic: f64,
    pub r_property: f64,
    pub terms: PropertyTerms,
    pub r_total: f64,
}

/// (s − offset)·β below the breakpoint, 1 at or above it.
pub fn r_mic(s: f64, cfg: &RewardConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Config(format!("activity score {s} is outside [0, 1]")));
    }
    Ok(if s >= cfg.breakpoint {
        1.0
    } else {
        (s - cfg.offset) * cfg.beta
    })
}

pub fn property_terms(p: &PropertyVector, cfg: &RewardConfig) -> PropertyTerms {
    let w = &cfg.weights;
    let c = &cfg.clamps;
    let clamp = |v: f64, [lo, hi]: [f64; 2]| v.clamp(lo, hi);
    PropertyTerms {
        hydrophobicity: w.d1 * clamp(p.hydrophobicity, c.hydrophobicity),
        hydrophobic_moment: w.d2 * clamp(p.hydrophobic_moment, c.hydrophobic_moment),
        net_charge: w.d3 * clamp(p.net_charge, c.net_charge),
        isoelectric_point: w.d4 * clamp(p.isoelectric_point, c.isoelectric_point),
        constant: w.d5,
    }
}

pub fn r_property(p: &PropertyVector, cfg: &RewardConfig) -> f64 {
    property_terms(p, cfg).total()
}

/// λ·r_property + (1 − λ)·r_mic.
pub fn r_total(r_prop: f64, r_mic: f64, cfg: &RewardConfig) -> f64 {
    cfg.lambda * r_prop + (1.0 - cfg.lambda) * r_mic
}

pub fn breakdown(s: f64, p: &PropertyVector, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    let rm = r_mic(s, cfg)?;
    let terms = property_terms(p, cfg);
    let rp = terms.total();
    Ok(RewardBreakdown {
        s,
        r_mic: rm,
        r_property: rp,
        terms,
        r_total: r_total(rp, rm, cfg),
    })
}

/// Scaled and whitened rewards for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedRewards {
    pub scaled: Vec<f64>,
    pub whitened: Vec<f64>,
}

const SIGMA_FLOOR: f64 = 1e-12;

/// R̃ = R / max|R|, then R̄ = (R̃ − μ)/σ with the population standard
/// deviation. A batch with σ below 1e-12 whitens to all zeros.
pub fn process_rewards(rewards: &[f64]) -> Result<ProcessedRewards> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "reward processing needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::Config(format!("non-finite reward {bad}")));
    }
    let max_abs = rewards.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let scaled: Vec<f64> = if max_abs > 0.0 {
        rewards.iter().map(|r| r / max_abs).collect()
    } else {
        vec![0.0; rewards.len()]
    };
    let n = scaled.len() as f64;
    let mean = scaled.iter().sum::<f64>() / n;
    let sigma = (scaled.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    let whitened = if sigma < SIGMA_FLOOR {
        vec![0.0; scaled.len()]
    } else {
        scaled.iter().map(|r| (r - mean) / sigma).collect()
    };
    Ok(ProcessedRewards { scaled, whitened })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn props(h: f64, hm: f64, q: f64, pi: f64) -> PropertyVector {
        PropertyVector {
            length: 10,
            hydrophobicity: h,
            hydrophobic_moment: hm,
            net_charge: q,
            isoelectric_point: pi,
        }
    }

    #[test]
    fn r_mic_branches() {
        let c = RewardConfig::default();
        assert_eq!(r_mic(0.5, &c).unwrap(), 1.0);
        assert_eq!(r_mic(0.35, &c).unwrap(), 0.0);
        assert!((r_mic(0.10, &c).unwrap() + 1.0).abs() < 1e-12);
        assert!(r_mic(1.2, &c).is_err());
        assert!(r_mic(-0.1, &c).is_err());
    }

    #[test]
    fn r_property_clamps_and_constant() {
        let mut c = RewardConfig::default();
        let p = props(0.1, 0.3, 12.0, 9.0);
        assert_eq!(property_terms(&p, &c).net_charge, 0.1 * 9.0);
        c.weights = PropertyWeights {
            d1: 0.0,
            d2: 0.0,
            d3: 0.0,
            d4: 0.0,
            d5: 0.7,
        };
        for p in [p, props(-3.0, 2.0, -20.0, 1.0)] {
            assert_eq!(r_property(&p, &c), 0.7);
        }
    }

    #[test]
    fn r_total_mix() {
        let mut c = RewardConfig::default();
        assert_eq!(r_total(0.6, 1.0, &c), 0.8);
        c.lambda = 1.0;
        assert_eq!(r_total(0.6, 1.0, &c), 0.6);
        c.lambda = 0.0;
        assert_eq!(r_total(0.6, 1.0, &c), 1.0);
        c.lambda = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn process_examples() {
        let out = process_rewards(&[1.0, 2.0, 3.0]).unwrap();
        let expect = [1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in out.scaled.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = 1.5f64.sqrt();
        for (a, b) in out.whitened.iter().zip([-w, 0.0, w]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(process_rewards(&[2.0, 2.0, 2.0]).unwrap().whitened, vec![0.0; 3]);
        assert_eq!(process_rewards(&[0.0, 0.0]).unwrap().whitened, vec![0.0; 2]);
        assert!(process_rewards(&[1.0]).is_err());
        // All-negative batches keep their order after scaling.
        let neg = process_rewards(&[-1.0, -2.0, -4.0]).unwrap();
        assert!(neg.scaled[0] > neg.scaled[1] && neg.scaled[1] > neg.scaled[2]);
    }

    #[test]
    fn weights_are_mandatory_in_config() {
        let err = serde_json::from_str::<RewardConfig>(r#"{"beta": 4.0}"#);
        assert!(err.is_err());
        let ok: RewardConfig =
            serde_json::from_str(r#"{"weights": {"d1":1,"d2":1,"d3":0.1,"d4":0.1,"d5":0}}"#).unwrap();
        assert_eq!(ok, RewardConfig::default());
    }

    proptest! {
        #[test]
        fn r_mic_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let c = RewardConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(r_mic(lo, &c).unwrap() <= r_mic(hi, &c).unwrap());
        }

        #[test]
        fn whitening_moments_and_order(rs in proptest::collection::vec(-50.0f64..50.0, 2..64)) {
            let out = process_rewards(&rs).unwrap();
            let n = rs.len() as f64;
            let mean = out.whitened.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let spread = rs.iter().cloned().fold(f64::MIN, f64::max) - rs.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-6 {
                let sd = (out.whitened.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((sd - 1.0).abs() < 1e-6);
                for i in 0..rs.len() {
                    for j in 0..rs.len() {
                        if rs[i] < rs[j] {
                            prop_assert!(out.whitened[i] < out.whitened[j]);
                        }
                    }
                }
            }
        }

        #[test]
        fn argmax_survives_shared_property_shift(
            rp in proptest::collection::vec(-2.0f64..2.0, 2..10),
            rm in proptest::collection::vec(-1.4f64..1.0, 10),
            shift in -5.0f64..5.0,
        ) {
            let c = RewardConfig::default();
            let best = |shift: f64| {
                let totals: Vec<f64> = rp.iter().zip(&rm).map(|(p, m)| r_total(p + shift, *m, &c)).collect();
                let mut order: Vec<usize> = (0..totals.len()).collect();
                order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]));
                (order[0], totals[order[0]] - totals.get(order.get(1).copied().unwrap_or(order[0])).copied().unwrap_or(0.0))
            };
            let (a, gap) = best(0.0);
            let (b, _) = best(shift);
            // Near-ties can flip through rounding; only clear winners must agree.
            if gap.abs() > 1e-9 {
                prop_assert_eq!(a, b);
            }
        }
    }
}
