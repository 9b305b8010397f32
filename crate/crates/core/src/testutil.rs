//! Seeded random instances shared by unit and integration tests.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::ExperimentData;

/// A random experiment with `n` units, `n1` treated and `k` covariates.
///
/// Each unit is a complier with probability `compliance`, otherwise an
/// always- or never-taker. Outcomes depend on the stratum, the covariates and
/// a heterogeneous effect, plus continuous noise.
pub fn random_data<R: Rng>(rng: &mut R, n: usize, n1: usize, k: usize, compliance: f64) -> ExperimentData {
    let mut z = vec![0u8; n];
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    for &i in &idx[..n1] {
        z[i] = 1;
    }
    let xs: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
    let x = (k > 0).then(|| DMatrix::from_row_slice(n, k, &xs));
    let effect: f64 = rng.gen_range(-2.0..2.0);
    let mut d = vec![0u8; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let u: f64 = rng.gen();
        let (d0, d1) = if u < compliance {
            (0, 1)
        } else if u < compliance + (1.0 - compliance) / 2.0 {
            (1, 1)
        } else {
            (0, 0)
        };
        d[i] = if z[i] == 1 { d1 } else { d0 };
        let mut base: f64 = rng.sample::<f64, _>(StandardNormal) + 0.5 * f64::from(d0 + d1);
        for j in 0..k {
            base += 0.4 * (j as f64 + 1.0) * xs[i * k + j];
        }
        let tau = effect + 0.5 * rng.sample::<f64, _>(StandardNormal);
        y[i] = base + tau * f64::from(d[i]);
    }
    ExperimentData::new(y, d, z, x, true).expect("random instance is a valid design")
}
