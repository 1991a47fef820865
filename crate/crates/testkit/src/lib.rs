//! Synthetic fixtures and independent reference computations for tests.
//!
//! Nothing in here depends on the production crates: fixtures are plain
//! strings and the oracles are written from first principles so they can
//! check the production code paths without sharing any logic with them.

#![allow(clippy::needless_range_loop)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RESIDUES: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

/// First-order Markov chain over residues with a state-independent stop
/// probability and a hard length cap (stop is forced once `max_len` residues
/// have been emitted).
#[derive(Clone, Debug)]
pub struct MarkovChain {
    pub initial: [f64; 20],
    pub transition: [[f64; 20]; 20],
    pub stop: f64,
    pub max_len: usize,
}

fn normalise(row: &mut [f64; 20]) {
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= z);
}

impl MarkovChain {
    /// Random chain where each row concentrates most mass on a few residues.
    pub fn random(seed: u64, stop: f64, max_len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw_row = |rng: &mut ChaCha8Rng| {
            let mut row = [0.02; 20];
            let mut idx: Vec<usize> = (0..20).collect();
            idx.shuffle(rng);
            for &j in idx.iter().take(4) {
                row[j] += rng.random_range(0.5..2.0);
            }
            normalise(&mut row);
            row
        };
        let initial = draw_row(&mut rng);
        let mut transition = [[0.0; 20]; 20];
        for row in transition.iter_mut() {
            *row = draw_row(&mut rng);
        }
        Self {
            initial,
            transition,
            stop,
            max_len,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let pick = |rng: &mut R, p: &[f64; 20]| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            19
        };
        let mut out = Vec::new();
        let mut state = pick(rng, &self.initial);
        out.push(RESIDUES[state]);
        while out.len() < self.max_len {
            if rng.random::<f64>() < self.stop {
                break;
            }
            state = pick(rng, &self.transition[state]);
            out.push(RESIDUES[state]);
        }
        String::from_utf8(out).expect("ascii")
    }

    pub fn corpus(&self, n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    /// Exact per-token perplexity of the chain's token stream, where every
    /// sequence is followed by one end token. Computed by propagating the
    /// alive-state distribution position by position.
    pub fn analytic_perplexity(&self) -> f64 {
        let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
        let mut cost: f64 = self.initial.iter().map(|&p| h(p)).sum();
        let mut tokens = 1.0;
        let mut alive = self.initial;
        for t in 1..=self.max_len {
            let mass: f64 = alive.iter().sum();
            tokens += mass;
            if t == self.max_len {
                break; // forced stop costs nothing
            }
            let mut next = [0.0; 20];
            for x in 0..20 {
                let mut step = h(self.stop);
                for y in 0..20 {
                    let p = (1.0 - self.stop) * self.transition[x][y];
                    step += h(p);
                    next[y] += alive[x] * p;
                }
                cost += alive[x] * step;
            }
            alive = next;
        }
        (cost / tokens).exp()
    }

    /// Long-run residue frequencies implied by the chain (pooled over
    /// positions of generated sequences), via the same propagation.
    pub fn expected_residue_frequency(&self) -> [f64; 20] {
        let mut freq = [0.0; 20];
        let mut alive = self.initial;
        for t in 1..=self.max_len {
            for i in 0..20 {
                freq[i] += alive[i];
            }
            if t == self.max_len {
                break;
            }
            let mut next = [0.0; 20];
            for x in 0..20 {
                for y in 0..20 {
                    next[y] += alive[x] * (1.0 - self.stop) * self.transition[x][y];
                }
            }
            alive = next;
        }
        normalise(&mut freq);
        freq
    }
}

/// Labeled peptides that are linearly separable by composition: actives are
/// cationic and hydrophobic, inactives anionic and polar.
pub fn separable_labeled_set(n_pos: usize, n_neg: usize, seed: u64) -> Vec<(String, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = b"KKKRRLLLWIFAV";
    let inactive = b"DDEEESSGGNQTP";
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for i in 0..(n_pos + n_neg) {
        let is_pos = i < n_pos;
        let len = rng.random_range(10..=40);
        let pool: &[u8] = if is_pos { active } else { inactive };
        let seq: Vec<u8> = (0..len)
            .map(|_| {
                // A little cross-contamination keeps the problem non-trivial.
                if rng.random::<f64>() < 0.15 {
                    RESIDUES[rng.random_range(0..20)]
                } else {
                    pool[rng.random_range(0..pool.len())]
                }
            })
            .collect();
        out.push((String::from_utf8(seq).expect("ascii"), is_pos));
    }
    out.shuffle(&mut rng);
    out
}

/// Random peptide over the canonical alphabet.
pub fn random_peptide<R: Rng + ?Sized>(rng: &mut R, len: usize) -> String {
    (0..len)
        .map(|_| RESIDUES[rng.random_range(0..20)] as char)
        .collect()
}

/// AUROC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half. O(n²).
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Fraction of lysine residues.
pub fn lysine_fraction(seq: &str) -> f64 {
    if seq.is_empty() {
        return 0.0;
    }
    seq.bytes().filter(|&b| b == b'K').count() as f64 / seq.len() as f64
}
