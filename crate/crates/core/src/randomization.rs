//! Reference sets of complete-randomization assignments.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::check_design;
use crate::error::{Error, Result};

/// Largest number of assignments [`enumerate_assignments`] will produce.
pub const MAX_ENUMERATION: u64 = 1_000_000;

/// `m` simulated assignment vectors, each with exactly `n1` ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawSet {
    pub draws: Vec<Vec<u8>>,
    pub seed: u64,
    pub n1: usize,
}

impl DrawSet {
    /// Wraps an explicit list of assignments (e.g. a full enumeration).
    pub fn from_draws(draws: Vec<Vec<u8>>, seed: u64) -> Result<Self> {
        let first = draws
            .first()
            .ok_or_else(|| Error::InvalidArgument("a draw set needs at least one draw".into()))?;
        let n = first.len();
        let n1 = first.iter().filter(|&&v| v == 1).count();
        check_design(n, n1)?;
        for (k, dr) in draws.iter().enumerate() {
            if dr.len() != n || dr.iter().any(|&v| v > 1) || dr.iter().filter(|&&v| v == 1).count() != n1 {
                return Err(Error::InvalidArgument(format!("draw {k} is not a length-{n} vector with {n1} ones")));
            }
        }
        Ok(Self { draws, seed, n1 })
    }

    pub fn m(&self) -> usize {
        self.draws.len()
    }

    pub fn n(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    /// Appends the observed assignment as an extra reference draw.
    pub fn with_observed(mut self, z: &[u8]) -> Result<Self> {
        if z.len() != self.n() || z.iter().filter(|&&v| v == 1).count() != self.n1 {
            return Err(Error::InvalidArgument("observed assignment does not match the draw design".into()));
        }
        self.draws.push(z.to_vec());
        Ok(self)
    }

    /// Compact text form: a `# seed n1` line followed by one 0/1 string per draw.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.m() * (self.n() + 1) + 32);
        let _ = writeln!(s, "# seed={} n1={}", self.seed, self.n1);
        for d in &self.draws {
            s.extend(d.iter().map(|&v| if v == 1 { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty draw file".into()))?;
        let mut seed = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("seed=") {
                seed = v.parse::<u64>().ok();
            }
        }
        let seed = seed.ok_or_else(|| Error::InvalidArgument("draw file header lacks seed".into()))?;
        let draws = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        _ => Err(Error::InvalidArgument(format!("bad character `{c}` in draw file"))),
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_draws(draws, seed)
    }
}

/// Draws `m` independent uniform assignments with exactly `n1` treated units.
///
/// Each draw selects its treated units by a partial Fisher-Yates shuffle driven
/// by a ChaCha20 stream seeded from `seed`, so identical inputs give identical
/// draws on every platform.
pub fn draw_assignments(n: usize, n1: usize, m: usize, seed: u64) -> Result<DrawSet> {
    check_design(n, n1)?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let draws = (0..m)
        .map(|_| {
            for i in 0..n1 {
                let j = rng.gen_range(i..n);
                idx.swap(i, j);
            }
            let mut z = vec![0u8; n];
            for &i in &idx[..n1] {
                z[i] = 1;
            }
            z
        })
        .collect();
    Ok(DrawSet { draws, seed, n1 })
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All `C(n, n1)` assignments in ascending lexicographic order.
pub fn enumerate_assignments(n: usize, n1: usize) -> Result<Vec<Vec<u8>>> {
    let count = binomial(n, n1);
    if count > u128::from(MAX_ENUMERATION) {
        return Err(Error::TooManyAssignments { n, n1, limit: MAX_ENUMERATION });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = vec![0u8; n];
    fill(&mut cur, 0, n1, &mut out);
    Ok(out)
}

// Zeros before ones at each position yields ascending lexicographic order.
fn fill(cur: &mut Vec<u8>, pos: usize, ones_left: usize, out: &mut Vec<Vec<u8>>) {
    let n = cur.len();
    if pos == n {
        out.push(cur.clone());
        return;
    }
    if n - pos > ones_left {
        cur[pos] = 0;
        fill(cur, pos + 1, ones_left, out);
    }
    if ones_left > 0 {
        cur[pos] = 1;
        fill(cur, pos + 1, ones_left - 1, out);
        cur[pos] = 0;
    }
}
