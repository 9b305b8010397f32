//! Test inversion: the quantile envelope of the draw AR functions and the
//! confidence set `{beta : Delta^2(beta) <= quantile(beta)}`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar::{coeffs, coeffs_for_draw, RationalQuadratic};
use crate::data::ExperimentData;
use crate::error::{Error, Result};
use crate::estimators::{adjusted_wald, wald};
use crate::interval::{Interval, IntervalUnion, MERGE_TOL};
use crate::poly::{intersection_polynomial, intersections, is_identical, merge_close, nonpositivity_region};
use crate::randomization::DrawSet;

/// Relative tolerance for ties with the quantile on squared statistics.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fast,
    Baseline,
    Grid,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Fast => "fast",
            Algorithm::Baseline => "baseline",
            Algorithm::Grid => "grid",
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Rank of the empirical `1 - alpha` quantile among `m` values (1-based).
fn quantile_rank(m: usize, alpha: f64) -> usize {
    let target = 1.0 - alpha - 1e-12;
    (1..=m).find(|&k| k as f64 / m as f64 >= target).unwrap_or(m)
}

/// Smallest value `v` with `#{values <= v} / m >= 1 - alpha`.
pub fn quantile_value(values: &[f64], alpha: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty list");
    let r = quantile_rank(values.len(), alpha);
    let mut v = values.to_vec();
    let (_, q, _) = v.select_nth_unstable_by(r - 1, f64::total_cmp);
    *q
}

fn ties(v: f64, q: f64) -> bool {
    (v - q).abs() <= TIE_TOL * v.abs().max(q.abs())
}

/// Every index whose squared statistic at `beta` equals the quantile.
pub fn index_set(beta: f64, functions: &[RationalQuadratic], alpha: f64) -> Vec<usize> {
    let values: Vec<f64> = functions.iter().map(|f| f.eval(beta)).collect();
    let q = quantile_value(&values, alpha);
    values.iter().enumerate().filter(|(_, &v)| ties(v, q)).map(|(i, _)| i).collect()
}

/// Smallest member of [`index_set`].
fn realizing_index(beta: f64, functions: &[RationalQuadratic], rank: usize, buf: &mut Vec<f64>) -> usize {
    buf.clear();
    buf.extend(functions.iter().map(|f| f.eval(beta)));
    let values = buf.clone();
    let (_, q, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
    let q = *q;
    values.iter().position(|&v| ties(v, q)).expect("the quantile is one of the values")
}

/// AR functions of the draws, in draw order.
pub fn draw_functions(data: &ExperimentData, draws: &DrawSet, adjusted: bool) -> Result<Vec<RationalQuadratic>> {
    if draws.m() == 0 {
        return Err(Error::InvalidArgument("the draw set is empty".into()));
    }
    if draws.n() != data.n() {
        return Err(Error::InvalidArgument(format!(
            "draws have length {} but the data have {} units",
            draws.n(),
            data.n()
        )));
    }
    draws.draws.par_iter().enumerate().map(|(k, z)| coeffs_for_draw(data, z, adjusted, k)).collect()
}

/// Pairwise crossings of the draw functions.
#[derive(Debug, Clone, Default)]
pub struct RootTable {
    /// For each function, the sorted crossings with every distinct function.
    pub per_index: Vec<Vec<f64>>,
    /// All crossings, sorted, with near-coincident values merged.
    pub merged: Vec<f64>,
    pub num_pairs: usize,
}

pub fn root_table(functions: &[RationalQuadratic]) -> RootTable {
    let m = functions.len();
    // roots of pair (i, j) are always computed with i < j so both lists see
    // bitwise identical values
    let rows: Vec<Vec<(usize, Vec<f64>)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..m)
                .filter_map(|j| intersections(&functions[i], &functions[j]).map(|r| (j, r)))
                .filter(|(_, r)| !r.is_empty())
                .collect()
        })
        .collect();
    let mut per_index = vec![Vec::new(); m];
    let mut all = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        for (j, roots) in row {
            per_index[i].extend_from_slice(&roots);
            per_index[j].extend_from_slice(&roots);
            all.extend(roots);
        }
    }
    per_index.par_iter_mut().for_each(|v| v.sort_by(f64::total_cmp));
    all.par_sort_unstable_by(f64::total_cmp);
    RootTable { per_index, merged: merge_close(all), num_pairs: m * m.saturating_sub(1) / 2 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub interval: Interval,
    /// Draw index realizing the quantile on the interval.
    pub index: usize,
}

/// One segment per gap between consecutive crossings.
pub fn baseline_segments(functions: &[RationalQuadratic], crossings: &[f64], alpha: f64) -> Vec<Segment> {
    let rank = quantile_rank(functions.len(), alpha);
    let realize = |beta: f64| realizing_index(beta, functions, rank, &mut Vec::with_capacity(functions.len()));
    let k = crossings.len();
    if k == 0 {
        return vec![Segment { interval: Interval::real_line(), index: realize(0.0) }];
    }
    let mut bounds = Vec::with_capacity(k + 2);
    bounds.push(f64::NEG_INFINITY);
    bounds.extend_from_slice(crossings);
    bounds.push(f64::INFINITY);
    bounds
        .par_windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let at = match (lo.is_finite(), hi.is_finite()) {
                (false, _) => hi - 1.0,
                (_, false) => lo + 1.0,
                _ => 0.5 * (lo + hi),
            };
            Segment { interval: Interval::new(lo, hi), index: realize(at) }
        })
        .collect()
}

/// Walks only the crossings of the current realizing function, skipping
/// crossings between functions that do not realize the quantile.
pub fn fast_segments(functions: &[RationalQuadratic], table: &RootTable, alpha: f64) -> Vec<Segment> {
    let rank = quantile_rank(functions.len(), alpha);
    let mut buf = Vec::with_capacity(functions.len());
    let mut realize = |beta: f64| realizing_index(beta, functions, rank, &mut buf);
    let all = &table.merged;
    if all.is_empty() {
        return vec![Segment { interval: Interval::real_line(), index: realize(0.0) }];
    }
    let beyond = |x: f64| x + MERGE_TOL * (1.0 + x.abs());

    let mut out: Vec<Segment> = Vec::new();
    let push = |out: &mut Vec<Segment>, lo: f64, hi: f64, index: usize| match out.last_mut() {
        Some(last) if last.index == index => last.interval.hi = hi,
        _ => out.push(Segment { interval: Interval::new(lo, hi), index }),
    };
    let mut s = realize(all[0] - 1.0);
    let mut frontier = f64::NEG_INFINITY;
    loop {
        let own = &table.per_index[s];
        let threshold = if frontier.is_finite() { beyond(frontier) } else { f64::NEG_INFINITY };
        let pos = own.partition_point(|&r| r <= threshold);
        let Some(&e) = own.get(pos) else {
            push(&mut out, frontier, f64::INFINITY, s);
            break;
        };
        push(&mut out, frontier, e, s);
        let next = all.partition_point(|&r| r <= beyond(e));
        s = match all.get(next) {
            Some(&v) => realize(0.5 * (e + v)),
            None => realize(e + 1.0),
        };
        frontier = e;
    }
    out
}

/// `{beta : obs(beta) <= f_t(beta)}` on each segment, united.
pub fn invert(observed: &RationalQuadratic, functions: &[RationalQuadratic], segments: &[Segment]) -> Result<IntervalUnion> {
    let pieces: Vec<IntervalUnion> = segments
        .par_iter()
        .map(|seg| {
            let f = &functions[seg.index];
            if is_identical(observed, f) {
                return Ok(IntervalUnion::from_pieces([seg.interval]));
            }
            nonpositivity_region(&intersection_polynomial(observed, f), seg.interval)
        })
        .collect::<Result<_>>()?;
    Ok(IntervalUnion::from_pieces(pieces.iter().flat_map(|u| u.intervals().iter().copied())))
}

/// The piecewise quantile curve of the draw functions.
#[derive(Debug, Clone)]
pub struct QuantileEnvelope {
    pub alpha: f64,
    pub functions: Vec<RationalQuadratic>,
    /// Sorted distinct crossings of distinct functions.
    pub intersections: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl QuantileEnvelope {
    pub fn from_functions(functions: Vec<RationalQuadratic>, alpha: f64, algorithm: Algorithm) -> Result<Self> {
        check_alpha(alpha)?;
        if functions.is_empty() {
            return Err(Error::InvalidArgument("no draw functions".into()));
        }
        let table = root_table(&functions);
        Ok(Self::with_table(functions, &table, alpha, algorithm))
    }

    fn with_table(functions: Vec<RationalQuadratic>, table: &RootTable, alpha: f64, algorithm: Algorithm) -> Self {
        let segments = match algorithm {
            Algorithm::Fast => fast_segments(&functions, table, alpha),
            _ => baseline_segments(&functions, &table.merged, alpha),
        };
        Self { alpha, functions, intersections: table.merged.clone(), segments }
    }

    /// Quantile of the squared draw statistics at `beta`.
    pub fn quantile_at(&self, beta: f64) -> f64 {
        let values: Vec<f64> = self.functions.iter().map(|f| f.eval(beta)).collect();
        quantile_value(&values, self.alpha)
    }

    pub fn invert(&self, observed: &RationalQuadratic) -> Result<IntervalUnion> {
        invert(observed, &self.functions, &self.segments)
    }
}

/// Envelope with one segment per gap between crossings.
pub fn build_envelope(draws: &DrawSet, data: &ExperimentData, adjusted: bool, alpha: f64) -> Result<QuantileEnvelope> {
    QuantileEnvelope::from_functions(draw_functions(data, draws, adjusted)?, alpha, Algorithm::Baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsStats {
    pub num_pairs: usize,
    pub num_intersections: usize,
    pub num_segments: usize,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSetResult {
    pub intervals: IntervalUnion,
    pub alpha: f64,
    pub m: usize,
    pub adjusted: bool,
    #[serde(with = "crate::interval::opt_ext_real")]
    pub wald: Option<f64>,
    pub algorithm: Algorithm,
    pub stats: CsStats,
}

fn point_estimate(data: &ExperimentData, adjusted: bool) -> Option<f64> {
    let est = if adjusted { adjusted_wald(data) } else { wald(data) };
    est.ok().map(|e| e.value)
}

fn build_cs(data: &ExperimentData, draws: &DrawSet, alpha: f64, adjusted: bool, algorithm: Algorithm) -> Result<ConfidenceSetResult> {
    check_alpha(alpha)?;
    let start = Instant::now();
    let observed = coeffs(data, data.z(), adjusted)?;
    let functions = draw_functions(data, draws, adjusted)?;
    let table = root_table(&functions);
    let env = QuantileEnvelope::with_table(functions, &table, alpha, algorithm);
    let intervals = env.invert(&observed)?;
    Ok(ConfidenceSetResult {
        intervals,
        alpha,
        m: draws.m(),
        adjusted,
        wald: point_estimate(data, adjusted),
        algorithm,
        stats: CsStats {
            num_pairs: table.num_pairs,
            num_intersections: env.intersections.len(),
            num_segments: env.segments.len(),
            wall_time: start.elapsed().as_secs_f64(),
        },
    })
}

/// Inverts segment by segment over every gap between crossings.
pub fn build_cs_baseline(data: &ExperimentData, draws: &DrawSet, alpha: f64, adjusted: bool) -> Result<ConfidenceSetResult> {
    build_cs(data, draws, alpha, adjusted, Algorithm::Baseline)
}

/// Inverts over the segments on which the realizing draw is constant.
pub fn build_cs_fast(data: &ExperimentData, draws: &DrawSet, alpha: f64, adjusted: bool) -> Result<ConfidenceSetResult> {
    build_cs(data, draws, alpha, adjusted, Algorithm::Fast)
}

/// Either exact algorithm.
pub fn build_cs_with(
    data: &ExperimentData,
    draws: &DrawSet,
    alpha: f64,
    adjusted: bool,
    algorithm: Algorithm,
) -> Result<ConfidenceSetResult> {
    match algorithm {
        Algorithm::Grid => Err(Error::InvalidArgument("the grid search does not produce an interval list".into())),
        a => build_cs(data, draws, alpha, adjusted, a),
    }
}

/// Points `lo, lo + step, ...` up to `hi`.
pub fn grid_points(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!("grid bounds must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid step must be positive, got {step}")));
    }
    let count = ((hi - lo) / step * (1.0 + 1e-12)).floor() as usize;
    Ok((0..=count).map(|i| (lo + i as f64 * step).min(hi)).collect())
}

/// Pointwise membership by comparing the observed statistic with the quantile.
pub fn build_cs_grid(
    data: &ExperimentData,
    draws: &DrawSet,
    alpha: f64,
    adjusted: bool,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<Vec<(f64, bool)>> {
    check_alpha(alpha)?;
    let observed = coeffs(data, data.z(), adjusted)?;
    let functions = draw_functions(data, draws, adjusted)?;
    Ok(grid_membership(&observed, &functions, alpha, &grid_points(lo, hi, step)?))
}

pub fn grid_membership(observed: &RationalQuadratic, functions: &[RationalQuadratic], alpha: f64, grid: &[f64]) -> Vec<(f64, bool)> {
    grid.par_iter()
        .map(|&b| {
            let values: Vec<f64> = functions.iter().map(|f| f.eval(b)).collect();
            (b, observed.eval(b) <= quantile_value(&values, alpha))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::{Kind, Source};
    use crate::randomization::draw_assignments;
    use crate::testutil::random_data;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rq(num: [f64; 3], den: [f64; 3], k: usize) -> RationalQuadratic {
        RationalQuadratic { num, den, kind: Kind::Unadjusted, source: Source::Draw(k) }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile_value(&[1.0, 2.0, 3.0, 4.0], 0.25), 3.0);
        assert_eq!(quantile_value(&[5.0, 5.0, 5.0], 0.05), 5.0);
        let tenths: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(quantile_value(&tenths, 0.1), 0.9);
    }

    #[test]
    fn index_set_examples() {
        let fs: Vec<_> = [1.0, 4.0, 9.0, 16.0].iter().enumerate().map(|(k, &c)| rq([0.0, 0.0, c], [0.0, 0.0, 1.0], k)).collect();
        assert_eq!(index_set(0.3, &fs, 0.25), vec![2]);
        let dup = vec![fs[0], fs[2], fs[2], fs[3]];
        assert_eq!(index_set(0.0, &dup, 0.25), vec![1, 2]);
    }

    #[test]
    fn single_draw_gives_one_segment() {
        let f = rq([1.0, -2.0, 1.0], [1.0, 0.0, 1.0], 0);
        for alg in [Algorithm::Baseline, Algorithm::Fast] {
            let env = QuantileEnvelope::from_functions(vec![f], 0.05, alg).unwrap();
            assert!(env.intersections.is_empty());
            assert_eq!(env.segments, vec![Segment { interval: Interval::real_line(), index: 0 }]);
            assert_eq!(env.invert(&f).unwrap(), IntervalUnion::real_line());
        }
    }

    #[test]
    fn identical_draws_share_the_index_set() {
        let f = rq([1.0, -2.0, 1.0], [1.0, 0.0, 1.0], 0);
        let env = QuantileEnvelope::from_functions(vec![f, f], 0.05, Algorithm::Baseline).unwrap();
        assert_eq!(env.segments.len(), 1);
        assert_eq!(index_set(0.7, &env.functions, 0.05), vec![0, 1]);
    }

    #[test]
    fn spurious_crossing_is_skipped() {
        // f0 dominates; f1 and f2 cross at -1 and 1 beneath it
        let fs = vec![rq([1.0, 0.0, 10.0], [0.0, 0.0, 1.0], 0), rq([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 1), rq([0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 2)];
        let obs = rq([4.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0);
        let base = QuantileEnvelope::from_functions(fs.clone(), 0.05, Algorithm::Baseline).unwrap();
        let fast = QuantileEnvelope::from_functions(fs, 0.05, Algorithm::Fast).unwrap();
        assert_eq!(base.segments.len(), 3);
        assert_eq!(fast.segments.len(), 1);
        let (a, b) = (base.invert(&obs).unwrap(), fast.invert(&obs).unwrap());
        assert_eq!(a, b);
        let r = (10.0f64 / 3.0).sqrt();
        assert_eq!(a.len(), 1);
        assert!((a.intervals()[0].lo + r).abs() < 1e-12 && (a.intervals()[0].hi - r).abs() < 1e-12);
    }

    #[test]
    fn segment_index_realizes_quantile_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..10 {
            let data = random_data(&mut rng, 30, 15, trial % 3, 0.5);
            let draws = draw_assignments(30, 15, 4 + trial, 100 + trial as u64).unwrap();
            let env = build_envelope(&draws, &data, trial % 2 == 0, 0.25).unwrap();
            for seg in &env.segments {
                let Interval { lo, hi } = seg.interval;
                let pts: Vec<f64> = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => [0.25, 0.5, 0.75].iter().map(|t| lo + t * (hi - lo)).collect(),
                    (false, true) => vec![hi - 0.5, hi - 2.0, hi - 10.0],
                    (true, false) => vec![lo + 0.5, lo + 2.0, lo + 10.0],
                    _ => vec![-1.0, 0.0, 1.0],
                };
                for b in pts {
                    assert!(index_set(b, &env.functions, 0.25).contains(&seg.index), "trial {trial} beta {b}");
                }
            }
        }
    }

    #[test]
    fn fast_matches_baseline_and_contains_wald() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..12 {
            let data = random_data(&mut rng, 40, 20, [0, 2, 3][trial % 3], 0.6);
            let draws = draw_assignments(40, 20, 60, trial as u64).unwrap();
            let adjusted = trial % 2 == 1;
            let a = build_cs_baseline(&data, &draws, 0.1, adjusted).unwrap();
            let b = build_cs_fast(&data, &draws, 0.1, adjusted).unwrap();
            assert_eq!(a.intervals.len(), b.intervals.len());
            for (x, y) in a.intervals.endpoints().iter().zip(b.intervals.endpoints()) {
                assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()));
            }
            assert!(b.stats.num_segments <= a.stats.num_segments);
            if let Some(w) = a.wald {
                assert!(a.intervals.contains(w));
            }
        }
    }

    #[test]
    fn smaller_alpha_gives_larger_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_data(&mut rng, 40, 20, 2, 0.5);
        let draws = draw_assignments(40, 20, 80, 3).unwrap();
        let wide = build_cs_fast(&data, &draws, 0.05, true).unwrap().intervals;
        let narrow = build_cs_fast(&data, &draws, 0.25, true).unwrap().intervals;
        for b in (-400..=400).map(|i| i as f64 * 0.05) {
            if narrow.contains(b) {
                assert!(wide.contains(b) || wide.distance_to_endpoint(b) < 1e-9, "beta {b}");
            }
        }
    }

    #[test]
    fn max_quantile_with_observed_draw_covers_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_data(&mut rng, 20, 10, 0, 0.5);
        let m = 30;
        let draws = draw_assignments(20, 10, m, 4).unwrap().with_observed(data.z()).unwrap();
        let alpha = 1.0 / (2.0 * draws.m() as f64);
        let grid = build_cs_grid(&data, &draws, alpha, false, -5.0, 5.0, 0.1).unwrap();
        assert!(grid.iter().all(|&(_, inside)| inside));
    }

    #[test]
    fn grid_points_include_both_ends() {
        let g = grid_points(-1.0, 1.0, 0.001).unwrap();
        assert_eq!(g.len(), 2001);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(grid_points(1.0, 1.0, 0.1).is_err());
        assert!(grid_points(0.0, 1.0, 0.0).is_err());
    }
}
