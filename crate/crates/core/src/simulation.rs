//! Monte Carlo coverage study on a fixed finite population with heterogeneous
//! effects across compliance strata.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cs::{build_cs_fast, build_cs_with, Algorithm};
use crate::data::ExperimentData;
use crate::error::{Error, Result};
use crate::estimators::tsls_interval;
use crate::randomization::{draw_assignments, enumerate_assignments, DrawSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratum {
    AlwaysTaker,
    NeverTaker,
    Complier,
}

impl Stratum {
    /// `(d(0), d(1))`.
    pub fn takeups(self) -> (u8, u8) {
        match self {
            Stratum::AlwaysTaker => (1, 1),
            Stratum::NeverTaker => (0, 0),
            Stratum::Complier => (0, 1),
        }
    }
}

/// A finite population: potential takeups and outcomes for every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub n: usize,
    pub strata: Vec<Stratum>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub d0: Vec<u8>,
    pub d1: Vec<u8>,
    /// Mean of `y1 - y0` over compliers.
    pub late: f64,
    pub x: Option<DMatrix<f64>>,
}

impl PopulationSpec {
    /// Builds the population from strata and potential outcomes.
    pub fn from_parts(strata: Vec<Stratum>, y0: Vec<f64>, y1: Vec<f64>, x: Option<DMatrix<f64>>) -> Result<Self> {
        let n = strata.len();
        if y0.len() != n || y1.len() != n || x.as_ref().is_some_and(|x| x.nrows() != n) {
            return Err(Error::InvalidArgument("population components have different lengths".into()));
        }
        let (d0, d1): (Vec<u8>, Vec<u8>) = strata.iter().map(|s| s.takeups()).unzip();
        let (sum, count) = strata
            .iter()
            .zip(y0.iter().zip(&y1))
            .filter(|(s, _)| **s == Stratum::Complier)
            .fold((0.0, 0usize), |(s, c), (_, (a, b))| (s + (b - a), c + 1));
        if count == 0 {
            return Err(Error::InvalidStrataSplit("the population has no compliers".into()));
        }
        Ok(Self { n, strata, y0, y1, d0, d1, late: sum / count as f64, x })
    }

    pub fn count(&self, stratum: Stratum) -> usize {
        self.strata.iter().filter(|&&s| s == stratum).count()
    }
}

/// Population with `complier_count` compliers and the rest split between
/// always- and never-takers (an odd unit becomes an always-taker).
///
/// `y0 = tau_g + noise_sd * N(0, 1)` by stratum, `y1 = y0 + noise_sd * N(0, 1)`,
/// after which each stratum's effects are shifted to average exactly zero.
/// Covariates are `k` independent standard normals.
#[allow(clippy::too_many_arguments)]
pub fn make_population(
    n: usize,
    complier_count: usize,
    tau_a: f64,
    tau_c: f64,
    tau_n: f64,
    noise_sd: f64,
    k: usize,
    seed: u64,
) -> Result<PopulationSpec> {
    if complier_count == 0 || complier_count > n {
        return Err(Error::InvalidStrataSplit(format!("{complier_count} compliers among {n} units")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_sd must be a nonnegative number, got {noise_sd}")));
    }
    let rest = n - complier_count;
    let never = rest / 2;
    let always = rest - never;
    let mut strata = vec![Stratum::Complier; complier_count];
    strata.extend(std::iter::repeat_n(Stratum::AlwaysTaker, always));
    strata.extend(std::iter::repeat_n(Stratum::NeverTaker, never));

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let y0: Vec<f64> = strata
        .iter()
        .map(|s| {
            let tau = match s {
                Stratum::AlwaysTaker => tau_a,
                Stratum::Complier => tau_c,
                Stratum::NeverTaker => tau_n,
            };
            tau + noise_sd * normal()
        })
        .collect();
    let mut y1: Vec<f64> = y0.iter().map(|v| v + noise_sd * normal()).collect();
    for g in [Stratum::AlwaysTaker, Stratum::Complier, Stratum::NeverTaker] {
        let members: Vec<usize> = (0..n).filter(|&i| strata[i] == g).collect();
        if members.is_empty() {
            continue;
        }
        let shift = members.iter().map(|&i| y1[i] - y0[i]).sum::<f64>() / members.len() as f64;
        for &i in &members {
            y1[i] -= shift;
        }
    }
    let x = (k > 0).then(|| DMatrix::from_fn(n, k, |_, _| normal()));
    PopulationSpec::from_parts(strata, y0, y1, x)
}

/// Observed data for assignment `z`: `D = d(Z)`, `Y = y(D)`.
pub fn realize_experiment(pop: &PopulationSpec, z: &[u8]) -> Result<ExperimentData> {
    if z.len() != pop.n {
        return Err(Error::InvalidArgument(format!("assignment has length {} for {} units", z.len(), pop.n)));
    }
    let d: Vec<u8> = (0..pop.n).map(|i| if z[i] == 1 { pop.d1[i] } else { pop.d0[i] }).collect();
    let y: Vec<f64> = (0..pop.n).map(|i| if d[i] == 1 { pop.y1[i] } else { pop.y0[i] }).collect();
    ExperimentData::new(y, d, z.to_vec(), pop.x.clone(), true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Normal-approximation 2SLS interval, covariates entered additively.
    Tsls,
    RandomizationUnadjusted,
    RandomizationAdjusted,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Tsls => "2SLS",
            Method::RandomizationUnadjusted => "randomization (unadjusted)",
            Method::RandomizationAdjusted => "randomization (adjusted)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    covered: bool,
    length: f64,
    unbounded: bool,
    failed: bool,
    seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub coverage: f64,
    pub covered: usize,
    /// Mean total length of the bounded pieces, over simulations without errors.
    pub mean_length: f64,
    pub unbounded: usize,
    /// Simulations in which the method returned an error (counted as not covering).
    pub errors: usize,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub n1: usize,
    pub compliers: usize,
    pub n_sims: usize,
    pub m: usize,
    pub alpha: f64,
    pub seed: u64,
    pub late: f64,
    pub methods: Vec<MethodSummary>,
}

impl CoverageReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }

    /// Table with one row per statistic and one column per method.
    pub fn to_table(&self, with_timing: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "n={} n1={} compliers={} ({:.0}%) sims={} m={} alpha={} seed={}",
            self.n,
            self.n1,
            self.compliers,
            100.0 * self.compliers as f64 / self.n as f64,
            self.n_sims,
            self.m,
            self.alpha,
            self.seed
        );
        let _ = write!(s, "{:<26}", "");
        for m in &self.methods {
            let _ = write!(s, "{:>28}", m.method.label());
        }
        s.push('\n');
        let mut row = |name: &str, f: &dyn Fn(&MethodSummary) -> String| {
            let _ = write!(s, "{name:<26}");
            for m in &self.methods {
                let _ = write!(s, "{:>28}", f(m));
            }
            s.push('\n');
        };
        row("coverage", &|m| format!("{:.3}", m.coverage));
        row("mean finite length", &|m| format!("{:.3}", m.mean_length));
        row("unbounded", &|m| m.unbounded.to_string());
        row("errors", &|m| m.errors.to_string());
        if with_timing {
            row("mean time (s)", &|m| format!("{:.3}", m.mean_seconds));
        }
        s
    }
}

/// Seeds for simulation `index`: one for the true assignment, one for the
/// reference draws.
fn simulation_seeds(seed: u64, index: usize) -> (u64, u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (rng.next_u64(), rng.next_u64())
}

fn run_method(data: &ExperimentData, draws: &DrawSet, alpha: f64, late: f64, method: Method) -> Outcome {
    let start = Instant::now();
    let res = match method {
        Method::Tsls => tsls_interval(data, 1.0 - alpha, false).map(|w| (w.contains(late), w.hi() - w.lo(), false)),
        Method::RandomizationUnadjusted | Method::RandomizationAdjusted => {
            build_cs_fast(data, draws, alpha, method == Method::RandomizationAdjusted)
                .map(|r| (r.intervals.contains(late), r.intervals.finite_length(), !r.intervals.is_bounded()))
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    match res {
        Ok((covered, length, unbounded)) => Outcome { covered, length, unbounded, failed: false, seconds },
        Err(_) => Outcome { covered: false, length: 0.0, unbounded: false, failed: true, seconds },
    }
}

/// Repeats the experiment `n_sims` times on the fixed population and records
/// whether each method covers the population LATE.
pub fn run_coverage(
    pop: &PopulationSpec,
    n1: usize,
    n_sims: usize,
    m: usize,
    alpha: f64,
    methods: &[Method],
    seed: u64,
) -> Result<CoverageReport> {
    if n_sims == 0 {
        return Err(Error::InvalidArgument("n_sims must be at least 1".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    crate::data::check_design(pop.n, n1)?;
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();

    let outcomes: Vec<Vec<Outcome>> = (0..n_sims)
        .into_par_iter()
        .map(|i| -> Result<Vec<Outcome>> {
            let (z_seed, draw_seed) = simulation_seeds(seed, i);
            let z = draw_assignments(pop.n, n1, 1, z_seed)?.draws.remove(0);
            let data = realize_experiment(pop, &z)?;
            let draws = draw_assignments(pop.n, n1, m, draw_seed)?;
            Ok(methods.iter().map(|&meth| run_method(&data, &draws, alpha, pop.late, meth)).collect())
        })
        .collect::<Result<_>>()?;

    let summaries = methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let col: Vec<&Outcome> = outcomes.iter().map(|o| &o[j]).collect();
            let covered = col.iter().filter(|o| o.covered).count();
            let ok: Vec<&&Outcome> = col.iter().filter(|o| !o.failed).collect();
            MethodSummary {
                method,
                coverage: covered as f64 / n_sims as f64,
                covered,
                mean_length: if ok.is_empty() { 0.0 } else { ok.iter().map(|o| o.length).sum::<f64>() / ok.len() as f64 },
                unbounded: col.iter().filter(|o| o.unbounded).count(),
                errors: col.len() - ok.len(),
                mean_seconds: col.iter().map(|o| o.seconds).sum::<f64>() / n_sims as f64,
            }
        })
        .collect();
    Ok(CoverageReport {
        n: pop.n,
        n1,
        compliers: pop.count(Stratum::Complier),
        n_sims,
        m,
        alpha,
        seed,
        late: pop.late,
        methods: summaries,
    })
}

/// Fraction of all assignments whose confidence set misses `beta0`, for an
/// all-complier population with `y1 = y0 + beta0`, using the full enumeration
/// as both the assignment law and the reference set.
pub fn sharp_null_noncoverage(
    y0: &[f64],
    x: Option<DMatrix<f64>>,
    n1: usize,
    beta0: f64,
    alpha: f64,
    adjusted: bool,
) -> Result<f64> {
    let n = y0.len();
    let strata = vec![Stratum::Complier; n];
    let y1: Vec<f64> = y0.iter().map(|v| v + beta0).collect();
    let pop = PopulationSpec::from_parts(strata, y0.to_vec(), y1, x)?;
    let all = enumerate_assignments(n, n1)?;
    let reference = DrawSet::from_draws(all.clone(), 0)?;
    let misses = all
        .par_iter()
        .map(|z| -> Result<bool> {
            let data = realize_experiment(&pop, z)?;
            let cs = build_cs_with(&data, &reference, alpha, adjusted, Algorithm::Fast)?;
            Ok(!cs.intervals.contains(beta0))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(misses.iter().filter(|&&b| b).count() as f64 / all.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strata_split_follows_the_odd_unit_rule() {
        let p = make_population(100, 50, -2.0, -1.0, 0.0, 0.1, 3, 1).unwrap();
        assert_eq!((p.count(Stratum::AlwaysTaker), p.count(Stratum::NeverTaker)), (25, 25));
        let p = make_population(100, 5, -2.0, -1.0, 0.0, 0.1, 3, 1).unwrap();
        assert_eq!((p.count(Stratum::AlwaysTaker), p.count(Stratum::NeverTaker)), (48, 47));
        assert!(matches!(make_population(10, 0, 0.0, 0.0, 0.0, 0.1, 0, 1), Err(Error::InvalidStrataSplit(_))));
        assert!(matches!(make_population(10, 11, 0.0, 0.0, 0.0, 0.1, 0, 1), Err(Error::InvalidStrataSplit(_))));
    }

    #[test]
    fn effects_are_recentered_within_every_stratum() {
        for seed in 0..5 {
            let p = make_population(101, 17, -2.0, -1.0, 0.0, 0.1, 2, seed).unwrap();
            assert!(p.late.abs() <= 1e-12, "late {}", p.late);
            for g in [Stratum::AlwaysTaker, Stratum::NeverTaker] {
                let eff: Vec<f64> = (0..p.n).filter(|&i| p.strata[i] == g).map(|i| p.y1[i] - p.y0[i]).collect();
                assert!((eff.iter().sum::<f64>() / eff.len() as f64).abs() <= 1e-12);
            }
            assert!(p.d1.iter().zip(&p.d0).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn realization_follows_strata() {
        let strata = vec![Stratum::NeverTaker, Stratum::AlwaysTaker, Stratum::Complier, Stratum::Complier];
        let pop = PopulationSpec::from_parts(strata, vec![1.0, 2.0, 3.0, 4.0], vec![10.0, 20.0, 30.0, 40.0], None).unwrap();
        let data = realize_experiment(&pop, &[1, 0, 1, 0]).unwrap();
        assert_eq!(data.d(), &[0, 1, 1, 0]);
        assert_eq!(data.y(), &[1.0, 20.0, 30.0, 4.0]);
    }

    #[test]
    fn single_simulation_report() {
        let pop = make_population(30, 15, -2.0, -1.0, 0.0, 0.1, 1, 3).unwrap();
        let r = run_coverage(&pop, 15, 1, 40, 0.1, &[Method::RandomizationAdjusted], 9).unwrap();
        assert_eq!(r.methods.len(), 1);
        assert!(r.methods[0].coverage == 0.0 || r.methods[0].coverage == 1.0);
        assert!(run_coverage(&pop, 15, 0, 40, 0.1, &[Method::Tsls], 9).is_err());
    }

    #[test]
    fn coverage_is_reproducible() {
        let pop = make_population(40, 20, -2.0, -1.0, 0.0, 0.1, 2, 4).unwrap();
        let methods = [Method::Tsls, Method::RandomizationUnadjusted, Method::RandomizationAdjusted];
        let strip = |mut r: CoverageReport| {
            r.methods.iter_mut().for_each(|m| m.mean_seconds = 0.0);
            r
        };
        let a = strip(run_coverage(&pop, 20, 6, 30, 0.1, &methods, 11).unwrap());
        let b = strip(run_coverage(&pop, 20, 6, 30, 0.1, &methods, 11).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn sharp_null_small_enumeration_is_exact() {
        let y0 = [0.3, -1.2, 0.8, 2.1, -0.4, 1.7, 0.0, -0.9];
        for alpha in [0.1, 0.25] {
            let rate = sharp_null_noncoverage(&y0, None, 4, 0.7, alpha, false).unwrap();
            assert!(rate <= alpha + 1e-12, "alpha {alpha}: {rate}");
        }
    }
}
