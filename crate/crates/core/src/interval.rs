//! Sorted unions of disjoint closed intervals over the extended reals.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// Adjacent intervals closer than `MERGE_TOL * (1 + |endpoint|)` are merged.
pub const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "ext_real")]
    pub lo: f64,
    #[serde(with = "ext_real")]
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Self { lo, hi }
    }

    pub fn real_line() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// Closed intervals, sorted ascending, pairwise separated by more than the
/// merge tolerance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalUnion {
    intervals: Vec<Interval>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn real_line() -> Self {
        Self { intervals: vec![Interval::real_line()] }
    }

    /// Normalizes arbitrary pieces: sorts, then merges overlaps and
    /// tolerance-sized gaps.
    pub fn from_pieces<I: IntoIterator<Item = Interval>>(pieces: I) -> Self {
        let mut v: Vec<Interval> = pieces.into_iter().collect();
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut out: Vec<Interval> = Vec::with_capacity(v.len());
        for iv in v {
            match out.last_mut() {
                Some(last) if iv.lo <= last.hi || gap_is_negligible(last.hi, iv.lo) => {
                    if iv.hi > last.hi {
                        last.hi = iv.hi;
                    }
                }
                _ => out.push(iv),
            }
        }
        Self { intervals: out }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        // intervals are sorted, so a binary search on `hi` finds the candidate
        let i = self.intervals.partition_point(|iv| iv.hi < x);
        self.intervals.get(i).is_some_and(|iv| iv.contains(x))
    }

    pub fn is_bounded(&self) -> bool {
        self.intervals.iter().all(Interval::is_bounded)
    }

    /// Total length of the bounded pieces.
    pub fn finite_length(&self) -> f64 {
        self.intervals.iter().filter(|iv| iv.is_bounded()).map(|iv| iv.hi - iv.lo).sum()
    }

    /// Finite endpoints in ascending order.
    pub fn endpoints(&self) -> Vec<f64> {
        self.intervals.iter().flat_map(|iv| [iv.lo, iv.hi]).filter(|v| v.is_finite()).collect()
    }

    /// Distance from `x` to the nearest finite endpoint.
    pub fn distance_to_endpoint(&self, x: f64) -> f64 {
        self.endpoints().iter().map(|e| (e - x).abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::from_pieces(self.intervals.iter().chain(&other.intervals).copied())
    }
}

fn gap_is_negligible(left_hi: f64, right_lo: f64) -> bool {
    let scale = 1.0 + left_hi.abs().min(right_lo.abs());
    right_lo - left_hi <= MERGE_TOL * scale
}

/// Serializes `f64` as a JSON number, with infinities as `"-inf"` / `"inf"`.
pub mod ext_real {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("invalid extended real `{other}`"))),
            },
        }
    }
}

/// `Option<f64>` variant of [`ext_real`].
pub mod opt_ext_real {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => ext_real::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "ext_real")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
