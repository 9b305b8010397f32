//! Anderson-Rubin statistics as rational-quadratic functions of the effect.
//!
//! For a fixed assignment vector the squared studentized statistic is
//! `(a b^2 + b b + c) / (d b^2 + e b + f)` in the hypothesized effect. The
//! numerator is the square of a linear contrast `t_d * beta - t_y`; the
//! denominator is a variance estimate, required to be positive on all of the
//! real line. [`direct_delta`] evaluates the same statistic from its defining
//! sums at a single point and serves as a cross-check for the coefficient path.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ExperimentData;
use crate::error::{Error, Result};
use crate::linalg::lstsq;

/// Relative floor for declaring the denominator strictly positive.
pub const POSITIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Unadjusted,
    Adjusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Observed,
    Draw(usize),
}

/// One squared AR function `num(beta) / den(beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalQuadratic {
    /// `(a, b, c)`: coefficients of `beta^2`, `beta`, `1`.
    pub num: [f64; 3],
    /// `(d, e, f)`.
    pub den: [f64; 3],
    pub kind: Kind,
    pub source: Source,
}

impl RationalQuadratic {
    /// Builds from the contrast pair `(t_y, t_d)` and the variance triple.
    pub fn from_contrasts(t_y: f64, t_d: f64, den: [f64; 3], kind: Kind, source: Source) -> Result<Self> {
        let rq = Self { num: [t_d * t_d, -2.0 * t_y * t_d, t_y * t_y], den, kind, source };
        rq.check_denominator()?;
        Ok(rq)
    }

    /// Minimum of the denominator over the real line must clear a relative floor.
    pub fn check_denominator(&self) -> Result<()> {
        let [d, e, f] = self.den;
        let scale = d.abs().max(e.abs()).max(f.abs()).max(1.0);
        let floor = POSITIVITY_TOL * scale;
        let min = if d > 0.0 {
            f - e * e / (4.0 * d)
        } else if d == 0.0 && e == 0.0 {
            f
        } else {
            f64::NEG_INFINITY
        };
        // Guard against d being a rounding-level positive number with e != 0.
        if !(min >= floor) || !min.is_finite() {
            return Err(Error::DegenerateVariance(format!(
                "{:?} denominator ({d:e}, {e:e}, {f:e}) has minimum {min:e}",
                self.source
            )));
        }
        Ok(())
    }

    pub fn num_at(&self, beta: f64) -> f64 {
        let [a, b, c] = self.num;
        (a * beta + b) * beta + c
    }

    pub fn den_at(&self, beta: f64) -> f64 {
        let [d, e, f] = self.den;
        (d * beta + e) * beta + f
    }

    /// Value of the squared statistic at `beta`.
    pub fn eval(&self, beta: f64) -> f64 {
        (self.num_at(beta) / self.den_at(beta)).max(0.0)
    }

    /// Both numerator and denominator multiplied by `s`; the same function.
    pub fn scaled(&self, s: f64) -> Self {
        Self { num: self.num.map(|v| v * s), den: self.den.map(|v| v * s), ..*self }
    }
}

/// Free-function form of [`RationalQuadratic::eval`].
pub fn evaluate_delta_sq(f: &RationalQuadratic, beta: f64) -> f64 {
    f.eval(beta)
}

fn check_assignment(data: &ExperimentData, z: &[u8]) -> Result<()> {
    let n1 = z.iter().filter(|&&v| v == 1).count();
    if z.len() != data.n() || n1 != data.n1() || z.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument(format!(
            "assignment must have length {} with {} ones",
            data.n(),
            data.n1()
        )));
    }
    Ok(())
}

fn split_indices(z: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let mut t = Vec::new();
    let mut c = Vec::new();
    for (i, &v) in z.iter().enumerate() {
        if v == 1 {
            t.push(i);
        } else {
            c.push(i);
        }
    }
    (t, c)
}

/// Within-arm centered moments `(sum yy, sum dd, sum yd, mean y, mean d)`.
fn arm_moments(y: &[f64], d: &[u8], idx: &[usize]) -> (f64, f64, f64, f64, f64) {
    let na = idx.len() as f64;
    let my = idx.iter().map(|&i| y[i]).sum::<f64>() / na;
    let md = idx.iter().map(|&i| f64::from(d[i])).sum::<f64>() / na;
    let (mut syy, mut sdd, mut syd) = (0.0, 0.0, 0.0);
    for &i in idx {
        let cy = y[i] - my;
        let cd = f64::from(d[i]) - md;
        syy += cy * cy;
        sdd += cd * cd;
        syd += cy * cd;
    }
    (syy, sdd, syd, my, md)
}

/// Closed-form coefficients of the unadjusted squared AR function for
/// assignment `z`, with `pi` taken from the observed design.
pub fn unadjusted_coeffs(data: &ExperimentData, z: &[u8]) -> Result<RationalQuadratic> {
    unadjusted_coeffs_with_source(data, z, Source::Observed)
}

pub(crate) fn unadjusted_coeffs_with_source(
    data: &ExperimentData,
    z: &[u8],
    source: Source,
) -> Result<RationalQuadratic> {
    check_assignment(data, z)?;
    let (treated, control) = split_indices(z);
    let pi = data.pi();
    let w = pi * (1.0 - pi);
    let (n1, n0) = (treated.len() as f64, control.len() as f64);
    let (syy1, sdd1, syd1, my1, md1) = arm_moments(data.y(), data.d(), &treated);
    let (syy0, sdd0, syd0, my0, md0) = arm_moments(data.y(), data.d(), &control);
    // n^-1 sum Y (Z - pi) equals pi (1 - pi) times the difference in means.
    let t_y = w * (my1 - my0);
    let t_d = w * (md1 - md0);
    let w2 = w * w;
    let d = w2 * (sdd1 / (n1 * n1) + sdd0 / (n0 * n0));
    let e = -2.0 * w2 * (syd1 / (n1 * n1) + syd0 / (n0 * n0));
    let f = w2 * (syy1 / (n1 * n1) + syy0 / (n0 * n0));
    RationalQuadratic::from_contrasts(t_y, t_d, [d, e, f], Kind::Unadjusted, source)
}

/// Rows of `x` (with a leading intercept column) for the given units.
fn arm_design(x: Option<&DMatrix<f64>>, idx: &[usize]) -> DMatrix<f64> {
    let k = x.map_or(0, |m| m.ncols());
    DMatrix::from_fn(idx.len(), k + 1, |r, c| if c == 0 { 1.0 } else { x.unwrap()[(idx[r], c - 1)] })
}

struct ArmProjection {
    /// `n_a^-1 1'(I - P_a) Y` and the same for `D`.
    t_y: f64,
    t_d: f64,
    /// Residual cross products from the full (intercept) projection.
    r_yy: f64,
    r_dd: f64,
    r_yd: f64,
}

fn arm_projection(data: &ExperimentData, idx: &[usize]) -> Result<ArmProjection> {
    let design = arm_design(data.x(), idx);
    let na = idx.len();
    let rhs = DMatrix::from_fn(na, 2, |r, c| if c == 0 { data.y()[idx[r]] } else { f64::from(data.d()[idx[r]]) });
    let fit = lstsq(&design, &rhs)?;
    let resid = &rhs - &design * &fit.coef;
    let k = design.ncols() - 1;
    let mut t = [0.0; 2];
    for (c, tc) in t.iter_mut().enumerate() {
        // 1'(I - P_a) v / n_a with P_a built from the intercept-zeroed design.
        let mut s = 0.0;
        for r in 0..na {
            let mut xg = 0.0;
            for j in 0..k {
                xg += design[(r, j + 1)] * fit.coef[(j + 1, c)];
            }
            s += rhs[(r, c)] - xg;
        }
        *tc = s / na as f64;
    }
    let (mut ryy, mut rdd, mut ryd) = (0.0, 0.0, 0.0);
    for r in 0..na {
        let (ey, ed) = (resid[(r, 0)], resid[(r, 1)]);
        ryy += ey * ey;
        rdd += ed * ed;
        ryd += ey * ed;
    }
    Ok(ArmProjection { t_y: t[0], t_d: t[1], r_yy: ryy, r_dd: rdd, r_yd: ryd })
}

/// Closed-form coefficients of the regression-adjusted squared AR function.
///
/// Each arm is regressed on an intercept and the (centered) covariates. With
/// no covariates the function coincides with [`unadjusted_coeffs`].
pub fn adjusted_coeffs(data: &ExperimentData, z: &[u8]) -> Result<RationalQuadratic> {
    adjusted_coeffs_with_source(data, z, Source::Observed)
}

pub(crate) fn adjusted_coeffs_with_source(
    data: &ExperimentData,
    z: &[u8],
    source: Source,
) -> Result<RationalQuadratic> {
    check_assignment(data, z)?;
    let (treated, control) = split_indices(z);
    let p1 = arm_projection(data, &treated)?;
    let p0 = arm_projection(data, &control)?;
    let (n1, n0) = (treated.len() as f64, control.len() as f64);
    let t_y = p1.t_y - p0.t_y;
    let t_d = p1.t_d - p0.t_d;
    let r_y = p1.r_yy / (n1 * n1) + p0.r_yy / (n0 * n0);
    let r_d = p1.r_dd / (n1 * n1) + p0.r_dd / (n0 * n0);
    let r_yd = p1.r_yd / (n1 * n1) + p0.r_yd / (n0 * n0);
    RationalQuadratic::from_contrasts(t_y, t_d, [r_d, -2.0 * r_yd, r_y], Kind::Adjusted, source)
}

/// Coefficients for either variant.
pub fn coeffs(data: &ExperimentData, z: &[u8], adjusted: bool) -> Result<RationalQuadratic> {
    if adjusted {
        adjusted_coeffs(data, z)
    } else {
        unadjusted_coeffs(data, z)
    }
}

pub(crate) fn coeffs_for_draw(data: &ExperimentData, z: &[u8], adjusted: bool, k: usize) -> Result<RationalQuadratic> {
    if adjusted {
        adjusted_coeffs_with_source(data, z, Source::Draw(k))
    } else {
        unadjusted_coeffs_with_source(data, z, Source::Draw(k))
    }
}

/// Per-arm OLS of `Y - beta D` on an intercept and the covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub phi0: f64,
    pub phi1: f64,
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub residuals: Vec<f64>,
    pub used_pseudo_inverse: bool,
}

pub fn fit_interacted_ols(data: &ExperimentData, z: &[u8], beta: f64) -> Result<OlsFit> {
    check_assignment(data, z)?;
    let (treated, control) = split_indices(z);
    let mut residuals = vec![0.0; data.n()];
    let mut used_pinv = false;
    let mut fit_arm = |idx: &[usize]| -> Result<(f64, Vec<f64>)> {
        let design = arm_design(data.x(), idx);
        let w = DMatrix::from_fn(idx.len(), 1, |r, _| data.y()[idx[r]] - beta * f64::from(data.d()[idx[r]]));
        let fit = lstsq(&design, &w)?;
        used_pinv |= fit.used_pseudo_inverse;
        let res = &w - &design * &fit.coef;
        for (r, &i) in idx.iter().enumerate() {
            residuals[i] = res[(r, 0)];
        }
        let gamma = (1..design.ncols()).map(|j| fit.coef[(j, 0)]).collect();
        Ok((fit.coef[(0, 0)], gamma))
    };
    let (phi1, gamma1) = fit_arm(&treated)?;
    let (phi0, gamma0) = fit_arm(&control)?;
    Ok(OlsFit { phi0, phi1, gamma0, gamma1, residuals, used_pseudo_inverse: used_pinv })
}

/// Signed studentized statistic at `beta`, assembled directly from its
/// defining sums rather than from the rational-quadratic coefficients.
pub fn direct_delta(data: &ExperimentData, z: &[u8], beta: f64, adjusted: bool) -> Result<f64> {
    check_assignment(data, z)?;
    let n = data.n() as f64;
    let (n1, n0) = (data.n1() as f64, data.n0() as f64);
    let w: Vec<f64> = data.y().iter().zip(data.d()).map(|(&y, &d)| y - beta * f64::from(d)).collect();
    let (tau, sigma2) = if adjusted {
        let fit = fit_interacted_ols(data, z, beta)?;
        let (mut s1, mut s0, mut v1, mut v0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..data.n() {
            let gamma = if z[i] == 1 { &fit.gamma1 } else { &fit.gamma0 };
            let xg: f64 = match data.x() {
                Some(x) => gamma.iter().enumerate().map(|(j, g)| x[(i, j)] * g).sum(),
                None => 0.0,
            };
            let e2 = fit.residuals[i] * fit.residuals[i];
            if z[i] == 1 {
                s1 += w[i] - xg;
                v1 += e2;
            } else {
                s0 += w[i] - xg;
                v0 += e2;
            }
        }
        (s1 / n1 - s0 / n0, v1 / (n1 * n1) + v0 / (n0 * n0))
    } else {
        let pi = data.pi();
        let tau = w.iter().zip(z).map(|(&wi, &zi)| wi * (f64::from(zi) - pi)).sum::<f64>() / n;
        let (mut m1, mut m0) = (0.0, 0.0);
        for (&wi, &zi) in w.iter().zip(z) {
            if zi == 1 {
                m1 += wi;
            } else {
                m0 += wi;
            }
        }
        m1 /= n1;
        m0 /= n0;
        let (mut v1, mut v0) = (0.0, 0.0);
        for (&wi, &zi) in w.iter().zip(z) {
            if zi == 1 {
                v1 += (wi - m1).powi(2);
            } else {
                v0 += (wi - m0).powi(2);
            }
        }
        let c = (pi * (1.0 - pi)).powi(2);
        (tau, c * v1 / (n1 * n1) + c * v0 / (n0 * n0))
    };
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateVariance(format!("zero variance estimate at beta = {beta}")));
    }
    Ok(tau / sigma2.sqrt())
}
