//! Surrogate error at optimizer-found settings, error along GA trajectories,
//! and PCA of where runs converge.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureMode;
use crate::ga::{Fitness, GaRunLog};
use crate::netmodel::SignalSetting;

/// `(predicted - simulated) / simulated`; negative means underestimation.
pub fn relative_error(predicted: f64, simulated: f64) -> Result<f64> {
    if !(simulated > 0.0) {
        return Err(Error::Domain(format!(
            "relative error needs a positive simulated value, got {simulated}"
        )));
    }
    Ok((predicted - simulated) / simulated)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub n: usize,
    pub mean_signed_rel: f64,
    pub mean_abs_rel: f64,
    pub max_abs_rel: f64,
    /// Fraction of pairs with prediction below simulation.
    pub frac_under: f64,
}

/// `pairs` are `(predicted, simulated)`.
pub fn summarize_errors(pairs: &[(f64, f64)]) -> Result<ErrorSummary> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut signed = 0.0;
    let mut abs = 0.0;
    let mut max = 0.0f64;
    let mut under = 0usize;
    for &(p, s) in pairs {
        let e = relative_error(p, s)?;
        signed += e;
        abs += e.abs();
        max = max.max(e.abs());
        if p < s {
            under += 1;
        }
    }
    let n = pairs.len() as f64;
    Ok(ErrorSummary {
        n: pairs.len(),
        mean_signed_rel: signed / n,
        mean_abs_rel: abs / n,
        max_abs_rel: max,
        frac_under: under as f64 / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimaEvaluation {
    pub summary: ErrorSummary,
    pub settings: Vec<SignalSetting>,
    /// `(predicted, simulated)` per setting.
    pub pairs: Vec<(f64, f64)>,
}

/// Labels a run's final-best settings with the oracle and compares them with
/// the model's predictions.
pub fn evaluate_optima(log: &GaRunLog, oracle: &dyn Fitness, model: &dyn Fitness) -> Result<OptimaEvaluation> {
    if log.final_best.is_empty() {
        return Err(Error::invalid("run has an empty final-best list"));
    }
    let settings: Vec<SignalSetting> = log.final_best.iter().map(|s| s.setting.clone()).collect();
    let simulated = oracle.evaluate(&settings)?;
    let predicted = model.evaluate(&settings)?;
    let pairs: Vec<(f64, f64)> = predicted.into_iter().zip(simulated).collect();
    Ok(OptimaEvaluation {
        summary: summarize_errors(&pairs)?,
        settings,
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub best: SignalSetting,
    pub surrogate: f64,
    pub oracle: f64,
    pub signed_rel: f64,
}

pub type TrajectoryErrorCurve = Vec<TrajectoryPoint>;

/// Oracle labels for every best-of-iteration setting, paired with the fitness
/// the GA saw.
pub fn trajectory_errors(log: &GaRunLog, oracle: &dyn Fitness) -> Result<TrajectoryErrorCurve> {
    if log.iterations.len() < 2 {
        return Err(Error::invalid("trajectory needs at least two iterations"));
    }
    let best = log.trajectory();
    // Elitism repeats the same best setting for many iterations.
    let mut distinct: Vec<SignalSetting> = best.clone();
    distinct.sort();
    distinct.dedup();
    let labels = oracle.evaluate(&distinct)?;
    let simulated: Vec<f64> = best
        .iter()
        .map(|s| labels[distinct.binary_search(s).expect("present")])
        .collect();
    log.iterations
        .iter()
        .zip(best)
        .zip(simulated)
        .enumerate()
        .map(|(iteration, ((it, best), oracle))| {
            Ok(TrajectoryPoint {
                iteration,
                best,
                surrogate: it.best_fitness,
                oracle,
                signed_rel: relative_error(it.best_fitness, oracle)?,
            })
        })
        .collect()
}

/// Mean |signed error| over the first and the last `window` points.
pub fn head_tail_abs_error(curve: &[TrajectoryPoint], window: usize) -> (f64, f64) {
    let w = window.min(curve.len()).max(1);
    let mean = |pts: &[TrajectoryPoint]| pts.iter().map(|p| p.signed_rel.abs()).sum::<f64>() / pts.len() as f64;
    (mean(&curve[..w]), mean(&curve[curve.len() - w..]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// k × D, one component per row.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// n × k.
    pub projected: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Principal components of the rows of `points` from the eigendecomposition of
/// the sample covariance. Each component is signed so that its entry of
/// largest magnitude is positive.
pub fn pca(points: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("pca needs at least two points"));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("points differ in dimension"));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::invalid(format!("k must lie in 1..={}", n.min(d))));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in &order[..k] {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    let explained_variance_ratio = eigenvalues
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let projected = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..d).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        components,
        eigenvalues,
        explained_variance_ratio,
        projected,
        mean,
    })
}

/// Maps projected coordinates back to the original space.
pub fn pca_reconstruct(result: &PcaResult) -> Vec<Vec<f64>> {
    result
        .projected
        .iter()
        .map(|coords| {
            let mut x = result.mean.clone();
            for (c, comp) in coords.iter().zip(&result.components) {
                for (xj, cj) in x.iter_mut().zip(comp) {
                    *xj += c * cj;
                }
            }
            x
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMap {
    pub mode: FeatureMode,
    pub pca: PcaResult,
    /// Source model of each projected point.
    pub labels: Vec<String>,
}

/// PCA (k = 2) of the best-per-iteration settings of several models' runs.
pub fn convergence_map(models: &[(String, Vec<&GaRunLog>)], mode: FeatureMode) -> Result<ConvergenceMap> {
    if models.len() < 2 {
        return Err(Error::invalid("convergence map needs at least two models"));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (name, logs) in models {
        for log in logs {
            for s in log.trajectory() {
                points.push(mode.features(&s));
                labels.push(name.clone());
            }
        }
    }
    Ok(ConvergenceMap {
        mode,
        pca: pca(&points, 2)?,
        labels,
    })
}

impl ConvergenceMap {
    /// Per-model centroid in PC space, in first-appearance order.
    pub fn centroids(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>, usize)> = Vec::new();
        for (label, p) in self.labels.iter().zip(&self.pca.projected) {
            let slot = match out.iter().position(|(l, _, _)| l == label) {
                Some(i) => i,
                None => {
                    out.push((label.clone(), vec![0.0; p.len()], 0));
                    out.len() - 1
                }
            };
            for (a, b) in out[slot].1.iter_mut().zip(p) {
                *a += b;
            }
            out[slot].2 += 1;
        }
        out.into_iter()
            .map(|(l, sum, n)| (l, sum.into_iter().map(|s| s / n as f64).collect()))
            .collect()
    }
}

/// Comma-separated table with a header row.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn optima_csv(eval: &OptimaEvaluation) -> String {
    let rows: Vec<Vec<String>> = eval
        .settings
        .iter()
        .zip(&eval.pairs)
        .map(|(s, &(p, o))| {
            vec![
                s.to_string().replace(',', " "),
                format!("{p:?}"),
                format!("{o:?}"),
                format!("{:?}", (p - o) / o),
            ]
        })
        .collect();
    csv_table(&["setting", "predicted", "simulated", "signed_rel"], &rows)
}

pub fn trajectory_csv(curve: &[TrajectoryPoint]) -> String {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| {
            vec![
                p.iteration.to_string(),
                p.best.to_string().replace(',', " "),
                format!("{:?}", p.surrogate),
                format!("{:?}", p.oracle),
                format!("{:?}", p.signed_rel),
            ]
        })
        .collect();
    csv_table(&["iteration", "best", "surrogate", "oracle", "signed_rel"], &rows)
}

pub fn convergence_csv(map: &ConvergenceMap) -> String {
    let rows: Vec<Vec<String>> = map
        .labels
        .iter()
        .zip(&map.pca.projected)
        .map(|(l, p)| vec![l.clone(), format!("{:?}", p[0]), format!("{:?}", p[1])])
        .collect();
    csv_table(&["model", "pc1", "pc2"], &rows)
}
