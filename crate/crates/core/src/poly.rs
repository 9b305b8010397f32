//! Polynomials of degree at most four: crossings of two AR functions,
//! real roots, and sublevel sets.

use crate::ar::RationalQuadratic;
use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalUnion};

/// Coefficients below this fraction of the largest are treated as zero when
/// deciding the degree.
pub const DEGREE_TOL: f64 = 1e-13;
/// Eigenvalues with `|im| <= IMAG_TOL * (1 + |re|)` count as real roots.
pub const IMAG_TOL: f64 = 1e-8;
/// Roots closer than `ROOT_MERGE_TOL * (1 + |root|)` are merged to their mean.
pub const ROOT_MERGE_TOL: f64 = 1e-9;
/// Relative tolerance for two rational quadratics being the same function.
pub const IDENTICAL_TOL: f64 = 1e-10;

/// `c[0] + c[1] x + ... + c[4] x^4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Poly4 {
    pub coeffs: [f64; 5],
    pub scale: f64,
}

impl Poly4 {
    pub fn new(coeffs: [f64; 5]) -> Self {
        let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        Self { coeffs, scale }
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
    }

    /// Degree after discarding relatively negligible leading terms; `None` for
    /// the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        if self.is_zero() {
            return None;
        }
        (0..5).rev().find(|&i| self.coeffs[i].abs() > DEGREE_TOL * self.scale)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn neg(&self) -> Self {
        Self { coeffs: self.coeffs.map(|c| -c), scale: self.scale }
    }

    /// Monic polynomial with the given roots (test and fixture helper).
    pub fn from_roots(roots: &[f64]) -> Self {
        assert!(roots.len() <= 4);
        let mut c = [0.0; 5];
        c[0] = 1.0;
        for (deg, &r) in roots.iter().enumerate() {
            for i in (0..=deg + 1).rev() {
                let lower = if i > 0 { c[i - 1] } else { 0.0 };
                c[i] = lower - r * c[i];
            }
        }
        Self::new(c)
    }
}

/// Ascending coefficients of the product of two quadratics given as
/// `(x^2, x, 1)` triples.
fn mul_quadratics(p: &[f64; 3], q: &[f64; 3]) -> [f64; 5] {
    let [p2, p1, p0] = *p;
    let [q2, q1, q0] = *q;
    [p0 * q0, p1 * q0 + p0 * q1, p2 * q0 + p1 * q1 + p0 * q2, p2 * q1 + p1 * q2, p2 * q2]
}

/// `num_f * den_g - num_g * den_f`; zero exactly where the two functions agree.
pub fn intersection_polynomial(f: &RationalQuadratic, g: &RationalQuadratic) -> Poly4 {
    cross_difference(f, g).0
}

/// The cross difference together with the scale of the two products.
fn cross_difference(f: &RationalQuadratic, g: &RationalQuadratic) -> (Poly4, f64) {
    let left = mul_quadratics(&f.num, &g.den);
    let right = mul_quadratics(&g.num, &f.den);
    let mut c = [0.0; 5];
    let mut scale = 0.0_f64;
    for i in 0..5 {
        c[i] = left[i] - right[i];
        scale = scale.max(left[i].abs()).max(right[i].abs());
    }
    (Poly4::new(c), scale)
}

/// True when the two rational quadratics are the same function.
pub fn is_identical(f: &RationalQuadratic, g: &RationalQuadratic) -> bool {
    let (p, scale) = cross_difference(f, g);
    p.coeffs.iter().all(|c| c.abs() <= IDENTICAL_TOL * scale)
}

/// Real crossings of two distinct functions; `None` when they are identical.
pub fn intersections(f: &RationalQuadratic, g: &RationalQuadratic) -> Option<Vec<f64>> {
    let (p, scale) = cross_difference(f, g);
    if p.coeffs.iter().all(|c| c.abs() <= IDENTICAL_TOL * scale) {
        return None;
    }
    Some(real_roots(&p).unwrap_or_default())
}

/// All real roots, ascending, with near-coincident roots merged.
///
/// Roots are eigenvalues of the companion matrix of the degree-trimmed monic
/// polynomial, each refined by a few Newton steps.
pub fn real_roots(p: &Poly4) -> Result<Vec<f64>> {
    let deg = p.degree().ok_or(Error::ZeroPolynomial)?;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = p.coeffs[deg];
    let mut h = [[0.0_f64; 4]; 4];
    for j in 0..deg {
        h[0][j] = -p.coeffs[deg - 1 - j] / lead;
    }
    for i in 1..deg {
        h[i][i - 1] = 1.0;
    }
    let eig = hessenberg_eigenvalues(&mut h, deg);

    let mut roots: Vec<f64> = eig
        .iter()
        .filter(|(re, im)| im.abs() <= IMAG_TOL * (1.0 + re.abs()))
        .map(|&(re, _)| polish(p, deg, re))
        .collect();
    roots.sort_by(f64::total_cmp);
    Ok(merge_close(roots))
}

fn polish(p: &Poly4, deg: usize, mut x: f64) -> f64 {
    let eval = |x: f64| -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for i in (0..=deg).rev() {
            dv = dv * x + v;
            v = v * x + p.coeffs[i];
        }
        (v, dv)
    };
    let (mut fx, _) = eval(x);
    for _ in 0..4 {
        let (v, dv) = eval(x);
        if v == 0.0 || dv == 0.0 {
            break;
        }
        let cand = x - v / dv;
        let (fc, _) = eval(cand);
        if !(fc.abs() < fx.abs()) {
            break;
        }
        x = cand;
        fx = fc;
    }
    x
}

/// Merges runs of sorted values whose consecutive gaps are within tolerance.
pub fn merge_close(sorted: Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut run_sum = 0.0;
    let mut run_len = 0usize;
    let mut prev = f64::NAN;
    for r in sorted {
        if run_len > 0 && (r - prev).abs() <= ROOT_MERGE_TOL * (1.0 + prev.abs()) {
            run_sum += r;
            run_len += 1;
        } else {
            if run_len > 0 {
                out.push(run_sum / run_len as f64);
            }
            run_sum = r;
            run_len = 1;
        }
        prev = r;
    }
    if run_len > 0 {
        out.push(run_sum / run_len as f64);
    }
    out
}

/// `{x in window : p(x) <= 0}`.
pub fn nonpositivity_region(p: &Poly4, window: Interval) -> Result<IntervalUnion> {
    let roots = real_roots(p)?;
    let mut cuts = vec![window.lo];
    cuts.extend(roots.iter().copied().filter(|&r| r > window.lo && r < window.hi));
    cuts.push(window.hi);

    let mut pieces = Vec::new();
    for w in cuts.windows(2) {
        let (u, v) = (w[0], w[1]);
        if p.eval(sample_point(u, v)) <= 0.0 {
            pieces.push(Interval::new(u, v));
        }
    }
    // p vanishes at each interior root, so every root belongs to the set.
    for &r in &cuts[1..cuts.len() - 1] {
        pieces.push(Interval::new(r, r));
    }
    // Finite window bounds can be members even when both neighbours are positive.
    for b in [window.lo, window.hi] {
        if b.is_finite() && p.eval(b) <= 0.0 {
            pieces.push(Interval::new(b, b));
        }
    }
    Ok(IntervalUnion::from_pieces(pieces))
}

/// An interior point of `(u, v)`, which may be unbounded on either side.
pub(crate) fn sample_point(u: f64, v: f64) -> f64 {
    match (u.is_finite(), v.is_finite()) {
        (true, true) => 0.5 * (u + v),
        (false, true) => v - 1.0 - v.abs(),
        (true, false) => u + 1.0 + u.abs(),
        (false, false) => 0.0,
    }
}

/// Eigenvalues `(re, im)` of the leading `n x n` block of an upper Hessenberg
/// matrix, by balancing followed by shifted QR iterations.
fn hessenberg_eigenvalues(a: &mut [[f64; 4]; 4], n: usize) -> Vec<(f64, f64)> {
    balance(a, n);
    let mut wr = [0.0; 4];
    let mut wi = [0.0; 4];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let sign = |x: f64, s: f64| if s >= 0.0 { x.abs() } else { -x.abs() };
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l > 0 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() <= f64::EPSILON * s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
            } else {
                let mut y = a[nu - 1][nu - 1];
                let mut w = a[nu][nu - 1] * a[nu - 1][nu];
                if l == nu - 1 {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        let z = p + sign(z, p);
                        wr[nu - 1] = x + z;
                        wr[nu] = x + z;
                        if z != 0.0 {
                            wr[nu] = x - w / z;
                        }
                        wi[nu - 1] = 0.0;
                        wi[nu] = 0.0;
                    } else {
                        wr[nu - 1] = x + p;
                        wr[nu] = x + p;
                        wi[nu - 1] = z;
                        wi[nu] = -z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        // Give up on this block: report its diagonal as complex noise.
                        for i in l..=nu {
                            wr[i] = a[i][i] + t;
                            wi[i] = f64::INFINITY;
                        }
                        nn = l as isize - 1;
                        break;
                    }
                    if its == 10 || its == 20 {
                        t += x;
                        for i in 0..=nu {
                            a[i][i] -= x;
                        }
                        let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let (mut p, mut q, mut r);
                    let mut m = nu - 2;
                    loop {
                        let z = a[m][m];
                        let rr = x - z;
                        let ss = y - z;
                        p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - rr - ss;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u <= f64::EPSILON * v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m..nu - 1 {
                        a[i + 2][i] = 0.0;
                        if i != m {
                            a[i + 2][i - 1] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nu {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = if k + 1 != nu { a[k + 2][k - 1] } else { 0.0 };
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nu {
                                let mut pp = a[k][j] + q * a[k + 1][j];
                                if k + 1 != nu {
                                    pp += r * a[k + 2][j];
                                    a[k + 2][j] -= pp * z;
                                }
                                a[k + 1][j] -= pp * y;
                                a[k][j] -= pp * x;
                            }
                            let mmin = if nu < k + 3 { nu } else { k + 3 };
                            for i in l..=mmin {
                                let mut pp = x * a[i][k] + y * a[i][k + 1];
                                if k + 1 != nu {
                                    pp += z * a[i][k + 2];
                                    a[i][k + 2] -= pp * r;
                                }
                                a[i][k + 1] -= pp * q;
                                a[i][k] -= pp;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 0 || l + 1 >= nn as usize {
                break;
            }
        }
    }
    (0..n).map(|i| (wr[i], wi[i])).collect()
}

/// Diagonal similarity scaling by powers of two so row and column norms match.
fn balance(a: &mut [[f64; 4]; 4], n: usize) {
    const RADIX: f64 = 2.0;
    const SQRDX: f64 = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= SQRDX;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= SQRDX;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for j in 0..n {
                        a[j][i] *= f;
                    }
                }
            }
        }
    }
}
