//! Pairwise alignment with BLOSUM62 and affine gaps: local alignment for
//! similarity search and global alignment for clustering identity.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::seq::{residue_index, Peptide};

const BLOSUM_ORDER: &[u8; 20] = b"ARNDCQEGHILKMFPSTWYV";

#[rustfmt::skip]
const BLOSUM62_RAW: [[i32; 20]; 20] = [
    [ 4, -1, -2, -2,  0, -1, -1,  0, -2, -1, -1, -1, -1, -2, -1,  1,  0, -3, -2,  0],
    [-1,  5,  0, -2, -3,  1,  0, -2,  0, -3, -2,  2, -1, -3, -2, -1, -1, -3, -2, -3],
    [-2,  0,  6,  1, -3,  0,  0,  0,  1, -3, -3,  0, -2, -3, -2,  1,  0, -4, -2, -3],
    [-2, -2,  1,  6, -3,  0,  2, -1, -1, -3, -4, -1, -3, -3, -1,  0, -1, -4, -3, -3],
    [ 0, -3, -3, -3,  9, -3, -4, -3, -3, -1, -1, -3, -1, -2, -3, -1, -1, -2, -2, -1],
    [-1,  1,  0,  0, -3,  5,  2, -2,  0, -3, -2,  1,  0, -3, -1,  0, -1, -2, -1, -2],
    [-1,  0,  0,  2, -4,  2,  5, -2,  0, -3, -3,  1, -2, -3, -1,  0, -1, -3, -2, -2],
    [ 0, -2,  0, -1, -3, -2, -2,  6, -2, -4, -4, -2, -3, -3, -2,  0, -2, -2, -3, -3],
    [-2,  0,  1, -1, -3,  0,  0, -2,  8, -3, -3, -1, -2, -1, -2, -1, -2, -2,  2, -3],
    [-1, -3, -3, -3, -1, -3, -3, -4, -3,  4,  2, -3,  1,  0, -3, -2, -1, -3, -1,  3],
    [-1, -2, -3, -4, -1, -2, -3, -4, -3,  2,  4, -2,  2,  0, -3, -2, -1, -2, -1,  1],
    [-1,  2,  0, -1, -3,  1,  1, -2, -1, -3, -2,  5, -1, -3, -1,  0, -1, -3, -2, -2],
    [-1, -1, -2, -3, -1,  0, -2, -3, -2,  1,  2, -1,  5,  0, -2, -1, -1, -1, -1,  1],
    [-2, -3, -3, -3, -2, -3, -3, -3, -1,  0,  0, -3,  0,  6, -4, -2, -2,  1,  3, -1],
    [-1, -2, -2, -1, -3, -1, -1, -2, -2, -3, -3, -1, -2, -4,  7, -1, -1, -4, -3, -2],
    [ 1, -1,  1,  0, -1,  0,  0,  0, -1, -2, -2,  0, -1, -2, -1,  4,  1, -3, -2, -2],
    [ 0, -1,  0, -1, -1, -1, -1, -2, -2, -1, -1, -1, -1, -2, -1,  1,  5, -2, -2,  0],
    [-3, -3, -4, -4, -2, -2, -3, -2, -2, -3, -2, -3, -1,  1, -4, -3, -2, 11,  2, -3],
    [-2, -2, -2, -3, -2, -1, -2, -3,  2, -1, -1, -2, -1,  3, -3, -2, -2,  2,  7, -1],
    [ 0, -3, -3, -3, -1, -2, -2, -3, -3,  3,  1, -2,  1, -1, -2, -2,  0, -3, -1,  4],
];

/// BLOSUM62 re-indexed to the crate's residue order.
pub fn blosum62() -> &'static [[i32; 20]; 20] {
    static TABLE: OnceLock<[[i32; 20]; 20]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let pos: Vec<usize> = BLOSUM_ORDER
            .iter()
            .map(|&b| residue_index(b).expect("canonical residue"))
            .collect();
        let mut out = [[0; 20]; 20];
        for (i, row) in BLOSUM62_RAW.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[pos[i]][pos[j]] = v;
            }
        }
        out
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scoring {
    /// A gap of length k costs `gap_open + k·gap_extend`.
    pub gap_open: i32,
    pub gap_extend: i32,
    /// Karlin–Altschul constants used for the bit-score conversion.
    pub lambda: f64,
    pub k: f64,
}

impl Default for Scoring {
    fn default() -> Self {
        Self {
            gap_open: 11,
            gap_extend: 1,
            lambda: 0.267,
            k: 0.041,
        }
    }
}

impl Scoring {
    /// S' = (λS − ln K) / ln 2.
    pub fn bits(&self, raw: i32) -> f64 {
        (self.lambda * raw as f64 - self.k.ln()) / std::f64::consts::LN_2
    }

    /// Approximate e-value m·n·2^(−S'); not comparable with dedicated
    /// search tools.
    pub fn evalue(&self, raw: i32, query_len: usize, db_len: usize) -> f64 {
        query_len as f64 * db_len as f64 * (-self.bits(raw)).exp2()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub score: i32,
    /// Exact matches over alignment columns, in percent.
    pub identity: f64,
    /// Alignment columns including gaps.
    pub length: usize,
    pub matches: usize,
    /// Half-open residue spans in query and target.
    pub query_span: (usize, usize),
    pub target_span: (usize, usize),
}

const NEG: i32 = i32::MIN / 4;

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    M,
    E,
    F,
}

struct Dp {
    cols: usize,
    m: Vec<i32>,
    e: Vec<i32>,
    f: Vec<i32>,
}

impl Dp {
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }
}

/// Fills M (ends in an aligned pair), E (gap in the query) and F (gap in
/// the target). `local` lets alignments start anywhere with score 0.
fn fill(q: &[usize], t: &[usize], sc: &Scoring, local: bool) -> Dp {
    let (n, m) = (q.len(), t.len());
    let cols = m + 1;
    let size = (n + 1) * cols;
    let mut dp = Dp {
        cols,
        m: vec![NEG; size],
        e: vec![NEG; size],
        f: vec![NEG; size],
    };
    let (open, ext) = (sc.gap_open, sc.gap_extend);
    let table = blosum62();
    dp.m[0] = 0;
    if !local {
        for j in 1..=m {
            dp.e[j] = -(open + ext * j as i32);
        }
        for i in 1..=n {
            let k = dp.at(i, 0);
            dp.f[k] = -(open + ext * i as i32);
        }
    }
    for i in 1..=n {
        for j in 1..=m {
            let d = dp.at(i - 1, j - 1);
            let best_prev = dp.m[d].max(dp.e[d]).max(dp.f[d]);
            let start = if local { 0 } else { NEG };
            let here = dp.at(i, j);
            dp.m[here] = table[q[i - 1]][t[j - 1]] + best_prev.max(start);
            let l = dp.at(i, j - 1);
            dp.e[here] = (dp.m[l].max(dp.f[l]) - open - ext).max(dp.e[l] - ext);
            let u = dp.at(i - 1, j);
            dp.f[here] = (dp.m[u].max(dp.e[u]) - open - ext).max(dp.f[u] - ext);
        }
    }
    dp
}

/// Walks back from `(i, j)` in `state`, counting columns and matches.
#[allow(clippy::too_many_arguments)]
fn traceback(
    dp: &Dp,
    q: &[usize],
    t: &[usize],
    sc: &Scoring,
    local: bool,
    mut i: usize,
    mut j: usize,
    mut state: State,
) -> (usize, usize, usize, usize) {
    let (open, ext) = (sc.gap_open, sc.gap_extend);
    let table = blosum62();
    let (mut cols, mut matches) = (0, 0);
    loop {
        if !local && i == 0 && j == 0 {
            break;
        }
        let here = dp.at(i, j);
        match state {
            State::M => {
                cols += 1;
                if q[i - 1] == t[j - 1] {
                    matches += 1;
                }
                let prev = dp.m[here] - table[q[i - 1]][t[j - 1]];
                let d = dp.at(i - 1, j - 1);
                i -= 1;
                j -= 1;
                if local && prev == 0 && dp.m[d].max(dp.e[d]).max(dp.f[d]) <= 0 {
                    break;
                }
                if !local && i == 0 && j == 0 {
                    break;
                }
                state = if dp.m[d] == prev {
                    State::M
                } else if dp.e[d] == prev {
                    State::E
                } else {
                    State::F
                };
            }
            State::E => {
                cols += 1;
                let v = dp.e[here];
                let l = dp.at(i, j - 1);
                j -= 1;
                if !local && j == 0 {
                    // Leading gap run along the first row.
                    cols += i;
                    i = 0;
                    continue;
                }
                state = if dp.e[l] - ext == v {
                    State::E
                } else if dp.m[l] - open - ext == v {
                    State::M
                } else {
                    State::F
                };
            }
            State::F => {
                cols += 1;
                let v = dp.f[here];
                let u = dp.at(i - 1, j);
                i -= 1;
                if !local && i == 0 {
                    cols += j;
                    j = 0;
                    continue;
                }
                state = if dp.f[u] - ext == v {
                    State::F
                } else if dp.m[u] - open - ext == v {
                    State::M
                } else {
                    State::E
                };
            }
        }
    }
    (cols, matches, i, j)
}

fn indices(p: &Peptide) -> Vec<usize> {
    p.indices().collect()
}

/// Best-scoring local alignment, or `None` when no pair scores above zero.
/// Ties keep the first optimum in row-major order.
pub fn align_local(query: &Peptide, target: &Peptide, sc: &Scoring) -> Option<Alignment> {
    let (q, t) = (indices(query), indices(target));
    let dp = fill(&q, &t, sc, true);
    let (mut best, mut at) = (0, (0, 0));
    for i in 1..=q.len() {
        for j in 1..=t.len() {
            let v = dp.m[dp.at(i, j)];
            if v > best {
                best = v;
                at = (i, j);
            }
        }
    }
    if best <= 0 {
        return None;
    }
    let (cols, matches, i0, j0) = traceback(&dp, &q, &t, sc, true, at.0, at.1, State::M);
    Some(Alignment {
        score: best,
        identity: 100.0 * matches as f64 / cols as f64,
        length: cols,
        matches,
        query_span: (i0, at.0),
        target_span: (j0, at.1),
    })
}

/// Optimal end-to-end alignment with end gaps charged like internal ones.
pub fn align_global(a: &Peptide, b: &Peptide, sc: &Scoring) -> Alignment {
    let (q, t) = (indices(a), indices(b));
    let dp = fill(&q, &t, sc, false);
    let end = dp.at(q.len(), t.len());
    let (score, state) = [(dp.m[end], State::M), (dp.e[end], State::E), (dp.f[end], State::F)]
        .into_iter()
        .fold((NEG, State::M), |acc, x| if x.0 > acc.0 { x } else { acc });
    let (cols, matches, _, _) = traceback(&dp, &q, &t, sc, false, q.len(), t.len(), state);
    Alignment {
        score,
        identity: 100.0 * matches as f64 / cols as f64,
        length: cols,
        matches,
        query_span: (0, q.len()),
        target_span: (0, t.len()),
    }
}

/// Global-alignment identity as a fraction in [0, 1].
pub fn global_identity(a: &Peptide, b: &Peptide, sc: &Scoring) -> f64 {
    align_global(a, b, sc).identity / 100.0
}
