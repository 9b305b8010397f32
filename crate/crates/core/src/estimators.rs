//! Point estimators and the normal-approximation 2SLS comparator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ExperimentData;
use crate::error::{Error, Result};
use crate::linalg::{inverse, lstsq, solve_square};

/// Compliance contrasts at or below this (relative) size make a ratio undefined.
pub const DEFINED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub value: f64,
    pub defined: bool,
    /// The takeup contrast in the denominator.
    pub denominator: f64,
    #[serde(default)]
    pub used_pseudo_inverse: bool,
}

fn ratio(num: f64, den: f64, scale: f64, used_pinv: bool, what: &str) -> Result<PointEstimate> {
    if !(den.abs() > DEFINED_TOL * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::UndefinedEstimate(format!("{what}: takeup contrast {den:e} is zero")));
    }
    Ok(PointEstimate { value: num / den, defined: true, denominator: den, used_pseudo_inverse: used_pinv })
}

fn arm_means(data: &ExperimentData, v: impl Fn(usize) -> f64) -> (f64, f64) {
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, &z) in data.z().iter().enumerate() {
        if z == 1 {
            s1 += v(i);
        } else {
            s0 += v(i);
        }
    }
    (s1 / data.n1() as f64, s0 / data.n0() as f64)
}

/// Ratio of the outcome difference in means to the takeup difference in means.
pub fn wald(data: &ExperimentData) -> Result<PointEstimate> {
    let (y1, y0) = arm_means(data, |i| data.y()[i]);
    let (d1, d0) = arm_means(data, |i| f64::from(data.d()[i]));
    ratio(y1 - y0, d1 - d0, d1.abs().max(d0.abs()), false, "wald")
}

/// Columns `(1, Z, Z x, (1 - Z) x)`.
fn interacted_instruments(data: &ExperimentData) -> DMatrix<f64> {
    let k = data.k();
    let z = data.z();
    DMatrix::from_fn(data.n(), 2 + 2 * k, |i, c| {
        let zi = f64::from(z[i]);
        match c {
            0 => 1.0,
            1 => zi,
            _ => {
                let j = (c - 2) % k;
                let xv = data.x().map_or(0.0, |x| x[(i, j)]);
                if c - 2 < k {
                    zi * xv
                } else {
                    (1.0 - zi) * xv
                }
            }
        }
    })
}

/// Ratio of covariate-adjusted outcome and takeup contrasts, each the
/// coefficient on `Z` in an interacted regression on `(1, Z, Z x, (1 - Z) x)`.
pub fn adjusted_wald(data: &ExperimentData) -> Result<PointEstimate> {
    let w = interacted_instruments(data);
    let rhs = DMatrix::from_fn(data.n(), 2, |i, c| if c == 0 { data.y()[i] } else { f64::from(data.d()[i]) });
    let fit = lstsq(&w, &rhs)?;
    let (d1, d0) = arm_means(data, |i| f64::from(data.d()[i]));
    ratio(fit.coef[(1, 0)], fit.coef[(1, 1)], d1.abs().max(d0.abs()), fit.used_pseudo_inverse, "adjusted wald")
}

/// Just-identified IV fit: coefficients and HC0 covariance.
struct IvFit {
    coef: DVector<f64>,
    cov: DMatrix<f64>,
}

fn iv_fit(y: &DVector<f64>, x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<IvFit> {
    let wx = w.tr_mul(x);
    let coef = solve_square(&wx, &w.tr_mul(y))?;
    let resid = y - x * &coef;
    let p = w.ncols();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..w.nrows() {
        let wi = w.row(i).transpose();
        meat += (&wi * wi.transpose()) * (resid[i] * resid[i]);
    }
    let bread = inverse(&wx)?;
    let cov = &bread * meat * bread.transpose();
    Ok(IvFit { coef, cov })
}

/// Regressors `(1, D, covariates)` and instruments `(1, Z, covariates)`; with
/// `interacted` the covariates enter as `Z x` and `(1 - Z) x`.
fn iv_design(data: &ExperimentData, interacted: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.n();
    let k = data.k();
    let mut w = if interacted {
        interacted_instruments(data)
    } else {
        DMatrix::from_fn(n, 2 + k, |i, c| match c {
            0 => 1.0,
            1 => f64::from(data.z()[i]),
            _ => data.x().unwrap()[(i, c - 2)],
        })
    };
    let x = {
        let mut x = w.clone();
        for i in 0..n {
            x[(i, 1)] = f64::from(data.d()[i]);
        }
        x
    };
    // first stage: the instruments only need Z in column 1
    w.set_column(1, &DVector::from_iterator(n, data.z().iter().map(|&v| f64::from(v))));
    (x, w)
}

fn first_stage_contrast(data: &ExperimentData, w: &DMatrix<f64>) -> Result<f64> {
    let dv = DMatrix::from_iterator(data.n(), 1, data.d().iter().map(|&v| f64::from(v)));
    let fit = lstsq(w, &dv)?;
    let (d1, d0) = arm_means(data, |i| f64::from(data.d()[i]));
    let c = fit.coef[(1, 0)];
    if !(c.abs() > DEFINED_TOL * d1.abs().max(d0.abs()).max(f64::MIN_POSITIVE)) {
        return Err(Error::UndefinedEstimate("first-stage takeup contrast is zero".into()));
    }
    Ok(c)
}

/// Coefficient on `D` in the just-identified IV regression with interacted
/// covariates.
pub fn iv_coefficient(data: &ExperimentData) -> Result<f64> {
    let (x, w) = iv_design(data, true);
    first_stage_contrast(data, &w)?;
    let y = DVector::from_column_slice(data.y());
    Ok(iv_fit(&y, &x, &w)?.coef[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvIdentity {
    pub adjusted_wald: f64,
    pub iv_coefficient: f64,
    pub max_abs_diff: f64,
}

/// Computes the adjusted Wald ratio and the IV coefficient by separate routes.
pub fn verify_iv_identity(data: &ExperimentData) -> Result<IvIdentity> {
    let aw = adjusted_wald(data)?.value;
    let iv = iv_coefficient(data)?;
    Ok(IvIdentity { adjusted_wald: aw, iv_coefficient: iv, max_abs_diff: (aw - iv).abs() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub center: f64,
    pub halfwidth: f64,
    pub level: f64,
}

impl WaldInterval {
    pub fn lo(&self) -> f64 {
        self.center - self.halfwidth
    }

    pub fn hi(&self) -> f64 {
        self.center + self.halfwidth
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo() <= x && x <= self.hi()
    }
}

/// Normal-approximation 2SLS interval with an HC0 standard error.
pub fn tsls_interval(data: &ExperimentData, level: f64, adjusted: bool) -> Result<WaldInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let (x, w) = iv_design(data, adjusted);
    first_stage_contrast(data, &w)?;
    let y = DVector::from_column_slice(data.y());
    let fit = iv_fit(&y, &x, &w)?;
    let se = fit.cov[(1, 1)].max(0.0).sqrt();
    let zq = normal_quantile(1.0 - (1.0 - level) / 2.0);
    Ok(WaldInterval { center: fit.coef[1], halfwidth: zq * se, level })
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against `erfc`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::direct_delta;
    use crate::testutil::random_data;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_compliance_wald_is_difference_in_means() {
        let z = vec![1, 1, 1, 0, 0, 0];
        let y = vec![1.0, 1.3, 0.7, 0.7, 1.0, 0.4];
        let data = ExperimentData::new(y, z.clone(), z, None, true).unwrap();
        let w = wald(&data).unwrap();
        assert_eq!(w.denominator, 1.0);
        assert!((w.value - 0.3).abs() < 1e-12);
        let ci = tsls_interval(&data, 0.95, false).unwrap();
        assert!((ci.center - 0.3).abs() < 1e-12);
        assert!((ci.hi() - ci.center - (ci.center - ci.lo())).abs() < 1e-12);
    }

    #[test]
    fn constant_takeup_is_undefined() {
        let data = ExperimentData::new(vec![1.0, 2.0, 3.0, 4.0], vec![1; 4], vec![1, 1, 0, 0], None, true).unwrap();
        assert!(matches!(wald(&data), Err(Error::UndefinedEstimate(_))));
        assert!(matches!(adjusted_wald(&data), Err(Error::UndefinedEstimate(_))));
        assert!(matches!(iv_coefficient(&data), Err(Error::UndefinedEstimate(_))));
        assert!(matches!(tsls_interval(&data, 0.95, false), Err(Error::UndefinedEstimate(_))));
    }

    #[test]
    fn wald_zeroes_the_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let data = random_data(&mut rng, 40, 20, 2, 0.6);
            let w = wald(&data).unwrap().value;
            assert!(direct_delta(&data, data.z(), w, false).unwrap().abs() < 1e-10);
            let aw = adjusted_wald(&data).unwrap().value;
            assert!(direct_delta(&data, data.z(), aw, true).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn zero_covariates_do_not_change_adjusted_wald() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = random_data(&mut rng, 30, 15, 0, 0.5);
        let data = ExperimentData::new(
            base.y().to_vec(),
            base.d().to_vec(),
            base.z().to_vec(),
            Some(DMatrix::zeros(30, 2)),
            true,
        )
        .unwrap();
        let a = adjusted_wald(&data).unwrap();
        assert!(a.used_pseudo_inverse);
        assert!((a.value - wald(&base).unwrap().value).abs() < 1e-10);
    }

    #[test]
    fn iv_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in [0, 1, 3] {
            let data = random_data(&mut rng, 50, 24, k, 0.5);
            let id = verify_iv_identity(&data).unwrap();
            assert!(id.max_abs_diff <= 1e-8 * (1.0 + id.adjusted_wald.abs()));
        }
        let data = random_data(&mut rng, 50, 24, 0, 0.5);
        let id = verify_iv_identity(&data).unwrap();
        assert!((id.iv_coefficient - wald(&data).unwrap().value).abs() < 1e-10);
    }

    #[test]
    fn normal_quantiles() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile(0.5)).abs() < 1e-15);
        assert!((normal_quantile(0.001) + 3.090232306167813).abs() < 1e-11);
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-12);
    }

    #[test]
    fn interval_scales_with_outcome_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = random_data(&mut rng, 80, 40, 2, 0.4);
        let scaled = ExperimentData::new(
            data.y().iter().map(|v| 2.5 * v).collect(),
            data.d().to_vec(),
            data.z().to_vec(),
            data.x().cloned(),
            true,
        )
        .unwrap();
        for adjusted in [false, true] {
            let a = tsls_interval(&data, 0.95, adjusted).unwrap();
            let b = tsls_interval(&scaled, 0.95, adjusted).unwrap();
            assert!((b.halfwidth - 2.5 * a.halfwidth).abs() < 1e-10 * b.halfwidth);
            assert!((b.center - 2.5 * a.center).abs() < 1e-10 * (1.0 + b.center.abs()));
        }
    }
}
