//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the code under test except for plain data types.
#![allow(dead_code)]

use sigsurr::datagen::LabeledRecord;
use sigsurr::netmodel::{random_setting, SignalSetting};
use sigsurr::rng::mix_seed;

pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left_value: f64,
    pub right_value: f64,
}

fn sse(ys: &[f64]) -> f64 {
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| (y - m).powi(2)).sum()
}

fn mean(ys: &[f64]) -> f64 {
    ys.iter().sum::<f64>() / ys.len() as f64
}

fn median(ys: &[f64]) -> f64 {
    let mut v = ys.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Exhaustive search over every feature and every distinct threshold
/// (`x <= t` goes left) for the split with the least total squared error.
/// The first minimum in (feature, threshold) order wins.
pub fn brute_force_stump(x: &[Vec<f64>], y: &[f64]) -> Stump {
    let mut best: Option<(f64, Stump)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for &t in &values[..values.len() - 1] {
            let left: Vec<f64> = x.iter().zip(y).filter(|(r, _)| r[f] <= t).map(|(_, &v)| v).collect();
            let right: Vec<f64> = x.iter().zip(y).filter(|(r, _)| r[f] > t).map(|(_, &v)| v).collect();
            let total = sse(&left) + sse(&right);
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                best = Some((
                    total,
                    Stump {
                        feature: f,
                        threshold: t,
                        left_value: mean(&left),
                        right_value: mean(&right),
                    },
                ));
            }
        }
    }
    best.expect("at least one split").1
}

/// Medians of `y - base` on each side of a given split.
pub fn residual_medians(x: &[Vec<f64>], y: &[f64], base: f64, feature: usize, threshold: f64) -> (f64, f64) {
    let left: Vec<f64> = x.iter().zip(y).filter(|(r, _)| r[feature] <= threshold).map(|(_, &v)| v - base).collect();
    let right: Vec<f64> = x.iter().zip(y).filter(|(r, _)| r[feature] > threshold).map(|(_, &v)| v - base).collect();
    (median(&left), median(&right))
}

/// Ordinary least squares with an intercept column via Gaussian elimination
/// with partial pivoting on the normal equations. Returns
/// `[intercept, b_1, ..., b_d]`.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = x[0].len() + 1;
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &yv) in x.iter().zip(y) {
        let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..d {
            for j in 0..d {
                a[i][j] += z[i] * z[j];
            }
            a[i][d] += z[i] * yv;
        }
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=d {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..d).map(|i| a[i][d] / a[i][i]).collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Roots of the characteristic polynomial of a symmetric 3×3 matrix
/// (trigonometric solution of the cubic), descending.
pub fn eigenvalues_3x3(m: &[Vec<f64>]) -> Vec<f64> {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| (m[i][j] - if i == j { q } else { 0.0 }) / p).collect())
        .collect();
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    vec![e1, e2, e3]
}

/// Sample covariance (n - 1 denominator).
pub fn covariance(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

/// Σ of cyclic distances to a hidden target; optimum 0 at the target.
pub fn cyclic_target_fitness(target: &SignalSetting) -> impl Fn(&SignalSetting) -> f64 + Sync + '_ {
    move |s: &SignalSetting| {
        s.offsets()
            .iter()
            .zip(target.offsets())
            .map(|(&a, &b)| {
                let d = (i32::from(a) - i32::from(b)).abs();
                f64::from(d.min(120 - d))
            })
            .sum()
    }
}

/// Labeled records from an explicit function of the setting.
pub fn synthetic(n: usize, c: usize, seed: u64, f: impl Fn(&SignalSetting, u64) -> f64) -> Vec<LabeledRecord> {
    (0..n)
        .map(|i| {
            let setting = random_setting(c, mix_seed(seed, i as u64));
            let wait_s = f(&setting, mix_seed(seed ^ 0xABCD, i as u64));
            LabeledRecord { setting, wait_s }
        })
        .collect()
}

/// Uniform in [0, 1) from a 64-bit hash.
pub fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
