//! Genetic algorithm over offset vectors (minimization) with complete
//! per-iteration logging.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microsim::{batch_simulate, SimConfig};
use crate::netmodel::{random_setting_with, RoadNetwork, SignalSetting, CYCLE_S};
use crate::rng::{self, Rng};
use crate::surrogate::Predictor;

pub const LOG_FORMAT_VERSION: u32 = 1;

/// Number of distinct best settings kept per run.
pub const FINAL_BEST: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Tournament { k: usize },
    /// Fitness-proportional on `max - f` (uniform when all equal).
    Roulette,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrossoverKind {
    OnePoint,
    Uniform { p_swap: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MutationKind {
    ResetUniform,
    ShiftWrapped { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub iterations: usize,
    pub selection: Selection,
    pub crossover: CrossoverKind,
    pub crossover_rate: f64,
    /// Per-gene probability.
    pub mutation_rate: f64,
    pub mutation_kind: MutationKind,
    pub elitism: usize,
    pub seed: u64,
}

impl GaConfig {
    /// Defaults for settings of `n_intersections` genes.
    pub fn default_for(n_intersections: usize) -> Self {
        GaConfig {
            population: 120,
            iterations: 100,
            selection: Selection::Tournament { k: 3 },
            crossover: CrossoverKind::OnePoint,
            crossover_rate: 0.9,
            mutation_rate: 1.0 / n_intersections as f64,
            mutation_kind: MutationKind::ResetUniform,
            elitism: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.iterations == 0 {
            return Err(Error::invalid("population and iterations must be positive"));
        }
        if self.elitism > self.population {
            return Err(Error::invalid("elitism cannot exceed the population"));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.crossover_rate) || !unit.contains(&self.mutation_rate) {
            return Err(Error::invalid("crossover and mutation rates must lie in [0, 1]"));
        }
        if let Selection::Tournament { k } = self.selection {
            if k == 0 {
                return Err(Error::invalid("tournament size must be positive"));
            }
        }
        if let CrossoverKind::Uniform { p_swap } = self.crossover {
            if !unit.contains(&p_swap) {
                return Err(Error::invalid("p_swap must lie in [0, 1]"));
            }
        }
        if let MutationKind::ShiftWrapped { sigma } = self.mutation_kind {
            if !(sigma > 0.0) {
                return Err(Error::invalid("shift sigma must be positive"));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let sel = match self.selection {
            Selection::Tournament { k } => format!("tour{k}"),
            Selection::Roulette => "roul".into(),
        };
        let cx = match self.crossover {
            CrossoverKind::OnePoint => "1pt".to_string(),
            CrossoverKind::Uniform { p_swap } => format!("unif{p_swap}"),
        };
        let mk = match self.mutation_kind {
            MutationKind::ResetUniform => "reset".to_string(),
            MutationKind::ShiftWrapped { sigma } => format!("shift{sigma}"),
        };
        format!(
            "{sel}-{cx}-m{:.3}-{mk}-e{}-p{}",
            self.mutation_rate, self.elitism, self.population
        )
    }
}

/// The 20 configurations swept per model: selection × crossover × mutation
/// rate × mutation kind (16), plus four elitism/population variants of the
/// defaults.
pub fn config_grid(n_intersections: usize, iterations: usize) -> Vec<GaConfig> {
    let base = GaConfig {
        iterations,
        ..GaConfig::default_for(n_intersections)
    };
    let c = n_intersections as f64;
    let mut out = Vec::with_capacity(20);
    for selection in [Selection::Tournament { k: 3 }, Selection::Roulette] {
        for crossover in [CrossoverKind::OnePoint, CrossoverKind::Uniform { p_swap: 0.5 }] {
            for mutation_rate in [1.0 / c, (3.0 / c).min(1.0)] {
                for mutation_kind in [MutationKind::ResetUniform, MutationKind::ShiftWrapped { sigma: 10.0 }] {
                    out.push(GaConfig {
                        selection,
                        crossover,
                        mutation_rate,
                        mutation_kind,
                        ..base.clone()
                    });
                }
            }
        }
    }
    for (elitism, population) in [(1, 120), (6, 120), (2, 60), (2, 200)] {
        out.push(GaConfig {
            elitism,
            population,
            ..base.clone()
        });
    }
    out
}

/// Something the GA minimizes.
pub trait Fitness: Sync {
    fn id(&self) -> String;
    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>>;
}

/// Fitness from a closure.
pub struct FnFitness<F> {
    pub name: String,
    pub f: F,
}

impl<F: Fn(&SignalSetting) -> f64 + Sync> Fitness for FnFitness<F> {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        Ok(settings.iter().map(&self.f).collect())
    }
}

/// A metamodel as fitness.
pub struct SurrogateFitness<'a> {
    pub name: String,
    pub model: &'a dyn Predictor,
}

impl Fitness for SurrogateFitness<'_> {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        self.model.predict_batch(settings)
    }
}

/// The simulator as fitness.
pub struct OracleFitness<'a> {
    pub network: &'a RoadNetwork,
    pub config: &'a SimConfig,
    pub workers: usize,
}

impl Fitness for OracleFitness<'_> {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        Ok(batch_simulate(self.network, settings, self.config, self.workers)?
            .into_iter()
            .map(|r| r.total_red_wait_s as f64)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub population: Vec<SignalSetting>,
    pub fitness: Vec<f64>,
    pub best: SignalSetting,
    pub best_fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSetting {
    pub setting: SignalSetting,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaRunLog {
    pub config: GaConfig,
    pub fitness_id: String,
    pub n_intersections: usize,
    pub iterations: Vec<IterationLog>,
    /// Up to [`FINAL_BEST`] distinct settings, ascending fitness.
    pub final_best: Vec<ScoredSetting>,
    /// Distinct settings evaluated.
    pub evaluations: usize,
}

impl GaRunLog {
    pub fn best_fitness(&self) -> f64 {
        self.final_best[0].fitness
    }

    /// Best-of-iteration settings in order.
    pub fn trajectory(&self) -> Vec<SignalSetting> {
        self.iterations.iter().map(|it| it.best.clone()).collect()
    }

    /// True when best-of-iteration fitness never increases.
    pub fn is_elitist_monotone(&self) -> bool {
        self.iterations
            .windows(2)
            .all(|w| w[1].best_fitness <= w[0].best_fitness)
    }
}

/// Mutates each gene independently with probability `rate`.
pub fn mutate(setting: &SignalSetting, rate: f64, kind: MutationKind, rng: &mut Rng) -> SignalSetting {
    let mut out = setting.clone();
    if rate <= 0.0 {
        return out;
    }
    let normal = match kind {
        MutationKind::ShiftWrapped { sigma } => Some(Normal::new(0.0, sigma).expect("positive sigma")),
        MutationKind::ResetUniform => None,
    };
    for gene in out.offsets_mut() {
        if rng.random::<f64>() < rate {
            *gene = match &normal {
                None => rng.random_range(0..CYCLE_S as u8),
                Some(n) => wrap_shift(*gene, n.sample(rng).round() as i64),
            };
        }
    }
    out
}

/// `(gene + delta) mod 120`.
pub fn wrap_shift(gene: u8, delta: i64) -> u8 {
    (i64::from(gene) + delta).rem_euclid(i64::from(CYCLE_S)) as u8
}

pub fn crossover(
    a: &SignalSetting,
    b: &SignalSetting,
    kind: CrossoverKind,
    rng: &mut Rng,
) -> Result<(SignalSetting, SignalSetting)> {
    a.check_len(b.len())?;
    let c = a.len();
    match kind {
        CrossoverKind::OnePoint => {
            let cut = if c > 1 { rng.random_range(1..c) } else { 0 };
            one_point_at(a, b, cut)
        }
        CrossoverKind::Uniform { p_swap } => {
            let mut x = a.clone();
            let mut y = b.clone();
            for (gx, gy) in x.offsets_mut().iter_mut().zip(y.offsets_mut()) {
                if rng.random::<f64>() < p_swap {
                    std::mem::swap(gx, gy);
                }
            }
            Ok((x, y))
        }
    }
}

/// Swaps the suffixes starting at `cut` (`0..=C`).
pub fn one_point_at(
    a: &SignalSetting,
    b: &SignalSetting,
    cut: usize,
) -> Result<(SignalSetting, SignalSetting)> {
    a.check_len(b.len())?;
    if cut > a.len() {
        return Err(Error::invalid("cut beyond the setting length"));
    }
    let mut x = a.clone();
    let mut y = b.clone();
    x.offsets_mut()[cut..].copy_from_slice(&b.offsets()[cut..]);
    y.offsets_mut()[cut..].copy_from_slice(&a.offsets()[cut..]);
    Ok((x, y))
}

fn select(fitness: &[f64], selection: Selection, rng: &mut Rng) -> usize {
    let n = fitness.len();
    match selection {
        Selection::Tournament { k } => {
            let mut best = rng.random_range(0..n);
            for _ in 1..k {
                let j = rng.random_range(0..n);
                if fitness[j] < fitness[best] || (fitness[j] == fitness[best] && j < best) {
                    best = j;
                }
            }
            best
        }
        Selection::Roulette => {
            let max = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = fitness.iter().map(|f| max - f).sum();
            if !(total > 0.0) {
                return rng.random_range(0..n);
            }
            let mut target = rng.random::<f64>() * total;
            for (i, f) in fitness.iter().enumerate() {
                target -= max - f;
                if target < 0.0 {
                    return i;
                }
            }
            n - 1
        }
    }
}

/// Runs the GA. Iteration 0 is the random initial population; every
/// iteration evaluates its population (repeated genotypes are served from a
/// per-run cache), logs it, and breeds the next one: the `elitism` best
/// individuals are copied unchanged, the rest are children of selected
/// parents, crossed over with probability `crossover_rate` and then mutated.
pub fn ga_run(fitness: &dyn Fitness, n_intersections: usize, config: &GaConfig) -> Result<GaRunLog> {
    config.validate()?;
    if n_intersections == 0 {
        return Err(Error::invalid("settings need at least one gene"));
    }
    let mut rng = rng::seeded(config.seed);
    let mut cache: HashMap<SignalSetting, f64> = HashMap::new();
    let mut population: Vec<SignalSetting> = (0..config.population)
        .map(|_| random_setting_with(n_intersections, &mut rng))
        .collect();
    let mut iterations = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut fresh: Vec<SignalSetting> = Vec::new();
        for s in &population {
            if !cache.contains_key(s) && !fresh.contains(s) {
                fresh.push(s.clone());
            }
        }
        if !fresh.is_empty() {
            let values = fitness.evaluate(&fresh)?;
            for (s, v) in fresh.into_iter().zip(values) {
                if !v.is_finite() {
                    return Err(Error::NonFiniteFitness {
                        value: v,
                        setting: s.to_string(),
                    });
                }
                cache.insert(s, v);
            }
        }
        let values: Vec<f64> = population.iter().map(|s| cache[s]).collect();
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let best = order[0];
        iterations.push(IterationLog {
            population: population.clone(),
            fitness: values.clone(),
            best: population[best].clone(),
            best_fitness: values[best],
        });
        if it + 1 == config.iterations {
            break;
        }

        let mut next: Vec<SignalSetting> = order[..config.elitism]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        while next.len() < config.population {
            let a = &population[select(&values, config.selection, &mut rng)];
            let b = &population[select(&values, config.selection, &mut rng)];
            let (c1, c2) = if rng.random::<f64>() < config.crossover_rate {
                crossover(a, b, config.crossover, &mut rng)?
            } else {
                (a.clone(), b.clone())
            };
            next.push(mutate(&c1, config.mutation_rate, config.mutation_kind, &mut rng));
            if next.len() < config.population {
                next.push(mutate(&c2, config.mutation_rate, config.mutation_kind, &mut rng));
            }
        }
        population = next;
    }

    let evaluations = cache.len();
    let mut all: Vec<ScoredSetting> = cache
        .into_iter()
        .map(|(setting, fitness)| ScoredSetting { setting, fitness })
        .collect();
    all.sort_by(|a, b| a.fitness.total_cmp(&b.fitness).then_with(|| a.setting.cmp(&b.setting)));
    all.truncate(FINAL_BEST);

    Ok(GaRunLog {
        config: config.clone(),
        fitness_id: fitness.id(),
        n_intersections,
        iterations,
        final_best: all,
        evaluations,
    })
}

/// Indices of the `best_k` logs with the lowest final fitness (in rank order)
/// followed by `random_k` drawn uniformly from ranks `best_k+1 ..= 100`
/// (listed in rank order).
pub fn select_run_indices(
    logs: &[GaRunLog],
    best_k: usize,
    random_k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if logs.len() < best_k + random_k {
        return Err(Error::invalid(format!(
            "need at least {} runs, have {}",
            best_k + random_k,
            logs.len()
        )));
    }
    if logs.iter().any(|l| l.final_best.is_empty()) {
        return Err(Error::invalid("run without evaluated settings"));
    }
    let mut ranked: Vec<usize> = (0..logs.len()).collect();
    ranked.sort_by(|&a, &b| {
        logs[a]
            .best_fitness()
            .total_cmp(&logs[b].best_fitness())
            .then(a.cmp(&b))
    });
    let pool_end = ranked.len().min(100).max(best_k + random_k);
    let pool = &ranked[best_k..pool_end];
    let mut rng = rng::seeded(seed);
    let mut picks: Vec<usize> = sample(&mut rng, pool.len(), random_k).into_vec();
    picks.sort_unstable();
    let mut out = ranked[..best_k].to_vec();
    out.extend(picks.into_iter().map(|p| pool[p]));
    Ok(out)
}

pub fn select_runs<'a>(
    logs: &'a [GaRunLog],
    best_k: usize,
    random_k: usize,
    seed: u64,
) -> Result<Vec<&'a GaRunLog>> {
    Ok(select_run_indices(logs, best_k, random_k, seed)?
        .into_iter()
        .map(|i| &logs[i])
        .collect())
}

/// Line records of a persisted run: one header, one line per iteration, one
/// footer.
#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Header {
        format_version: u32,
        fitness_id: String,
        n_intersections: usize,
        config: GaConfig,
    },
    Iteration {
        index: usize,
        #[serde(flatten)]
        log: IterationLog,
    },
    Final {
        evaluations: usize,
        final_best: Vec<ScoredSetting>,
    },
}

impl GaRunLog {
    pub fn write_jsonl(&self, out: &mut impl Write) -> Result<()> {
        let mut line = |rec: &LogLine| -> Result<()> {
            serde_json::to_writer(&mut *out, rec)?;
            out.write_all(b"\n").map_err(|e| Error::io("<log>", e))
        };
        line(&LogLine::Header {
            format_version: LOG_FORMAT_VERSION,
            fitness_id: self.fitness_id.clone(),
            n_intersections: self.n_intersections,
            config: self.config.clone(),
        })?;
        for (index, log) in self.iterations.iter().enumerate() {
            line(&LogLine::Iteration {
                index,
                log: log.clone(),
            })?;
        }
        line(&LogLine::Final {
            evaluations: self.evaluations,
            final_best: self.final_best.clone(),
        })
    }

    pub fn read_jsonl(input: impl BufRead, origin: &str) -> Result<Self> {
        let mut header = None;
        let mut iterations = Vec::new();
        let mut footer = None;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.into(),
                line: i + 1,
                message,
            };
            let rec: LogLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            match rec {
                LogLine::Header {
                    format_version,
                    fitness_id,
                    n_intersections,
                    config,
                } => {
                    if format_version != LOG_FORMAT_VERSION {
                        return Err(err(format!("unsupported format_version {format_version}")));
                    }
                    header = Some((fitness_id, n_intersections, config));
                }
                LogLine::Iteration { index, log } => {
                    if index != iterations.len() {
                        return Err(err(format!("iteration {index} out of order")));
                    }
                    iterations.push(log);
                }
                LogLine::Final {
                    evaluations,
                    final_best,
                } => footer = Some((evaluations, final_best)),
            }
        }
        let (fitness_id, n_intersections, config) =
            header.ok_or_else(|| Error::Format(format!("{origin}: missing header record")))?;
        let (evaluations, final_best) =
            footer.ok_or_else(|| Error::Format(format!("{origin}: missing final record")))?;
        Ok(GaRunLog {
            config,
            fitness_id,
            n_intersections,
            iterations,
            final_best,
            evaluations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file), &path.display().to_string())
    }
}

/// Cyclic distance between two offsets.
pub fn cyclic_distance(a: u8, b: u8) -> u32 {
    let d = (i32::from(a) - i32::from(b)).unsigned_abs();
    d.min(CYCLE_S - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::random_setting;

    fn sum_fitness() -> FnFitness<impl Fn(&SignalSetting) -> f64 + Sync> {
        FnFitness {
            name: "sum".into(),
            f: |s: &SignalSetting| s.offsets().iter().map(|&o| f64::from(o)).sum(),
        }
    }

    #[test]
    fn minimizes_sum_of_offsets() {
        let cfg = GaConfig {
            population: 20,
            iterations: 50,
            elitism: 1,
            ..GaConfig::default_for(3)
        };
        let log = ga_run(&sum_fitness(), 3, &cfg).unwrap();
        assert!(log.best_fitness() <= 30.0, "{}", log.best_fitness());
        assert!(log.is_elitist_monotone());
        assert_eq!(log.iterations.len(), 50);
    }

    #[test]
    fn no_operators_no_change() {
        let cfg = GaConfig {
            population: 12,
            iterations: 5,
            elitism: 12,
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            ..GaConfig::default_for(4)
        };
        let log = ga_run(&sum_fitness(), 4, &cfg).unwrap();
        let mut first = log.iterations[0].population.clone();
        let mut last = log.iterations.last().unwrap().population.clone();
        first.sort();
        last.sort();
        assert_eq!(first, last);
    }

    #[test]
    fn deterministic_runs() {
        let cfg = GaConfig {
            population: 30,
            iterations: 10,
            seed: 5,
            ..GaConfig::default_for(5)
        };
        let a = ga_run(&sum_fitness(), 5, &cfg).unwrap();
        let b = ga_run(&sum_fitness(), 5, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn final_best_sorted_distinct() {
        let cfg = GaConfig {
            population: 40,
            iterations: 20,
            ..GaConfig::default_for(4)
        };
        let log = ga_run(&sum_fitness(), 4, &cfg).unwrap();
        assert_eq!(log.final_best.len(), FINAL_BEST);
        assert!(log.final_best.windows(2).all(|w| w[0].fitness <= w[1].fitness));
        let distinct: std::collections::HashSet<_> =
            log.final_best.iter().map(|s| &s.setting).collect();
        assert_eq!(distinct.len(), log.final_best.len());
    }

    #[test]
    fn non_finite_fitness_aborts() {
        let f = FnFitness {
            name: "nan".into(),
            f: |s: &SignalSetting| if s.offsets()[0] > 60 { f64::NAN } else { 1.0 },
        };
        let cfg = GaConfig {
            population: 20,
            iterations: 3,
            ..GaConfig::default_for(2)
        };
        assert!(matches!(ga_run(&f, 2, &cfg), Err(Error::NonFiniteFitness { .. })));
    }

    #[test]
    fn mutation_edges() {
        let mut rng = rng::seeded(1);
        let s = random_setting(10, 2);
        assert_eq!(mutate(&s, 0.0, MutationKind::ResetUniform, &mut rng), s);
        let m = mutate(&s, 1.0, MutationKind::ResetUniform, &mut rng);
        assert!(m.offsets().iter().all(|&o| o < 120));
        let m = mutate(&s, 1.0, MutationKind::ShiftWrapped { sigma: 30.0 }, &mut rng);
        assert!(m.offsets().iter().all(|&o| o < 120));
        assert_eq!(wrap_shift(119, 3), 2);
        assert_eq!(wrap_shift(0, -1), 119);
    }

    #[test]
    fn crossover_edges() {
        let mut rng = rng::seeded(3);
        let a = random_setting(6, 1);
        let b = random_setting(6, 2);
        let (x, y) = crossover(&a, &a, CrossoverKind::OnePoint, &mut rng).unwrap();
        assert_eq!((x, y), (a.clone(), a.clone()));
        assert_eq!(one_point_at(&a, &b, 0).unwrap(), (b.clone(), a.clone()));
        assert_eq!(one_point_at(&a, &b, 6).unwrap(), (a.clone(), b.clone()));
        assert!(crossover(&a, &random_setting(5, 0), CrossoverKind::OnePoint, &mut rng).is_err());
    }

    #[test]
    fn crossover_keeps_positions() {
        let mut rng = rng::seeded(4);
        for i in 0..1000 {
            let a = random_setting(7, 2 * i);
            let b = random_setting(7, 2 * i + 1);
            let kind = if i % 2 == 0 {
                CrossoverKind::OnePoint
            } else {
                CrossoverKind::Uniform { p_swap: 0.5 }
            };
            let (x, y) = crossover(&a, &b, kind, &mut rng).unwrap();
            for k in 0..7 {
                for child in [&x, &y] {
                    let g = child.offsets()[k];
                    assert!(g == a.offsets()[k] || g == b.offsets()[k]);
                }
            }
        }
    }

    fn fake_log(best: f64) -> GaRunLog {
        let s = random_setting(2, best as u64);
        GaRunLog {
            config: GaConfig::default_for(2),
            fitness_id: "x".into(),
            n_intersections: 2,
            iterations: Vec::new(),
            final_best: vec![ScoredSetting {
                setting: s,
                fitness: best,
            }],
            evaluations: 1,
        }
    }

    #[test]
    fn run_selection() {
        let logs: Vec<_> = (0..100).map(|i| fake_log(f64::from((i * 37) % 100))).collect();
        let idx = select_run_indices(&logs, 10, 10, 1).unwrap();
        assert_eq!(idx.len(), 20);
        let global = (0..100)
            .min_by(|&a, &b| logs[a].best_fitness().total_cmp(&logs[b].best_fitness()))
            .unwrap();
        assert!(idx.contains(&global));
        for &i in &idx[..10] {
            assert!(logs[i].best_fitness() < 10.0);
        }
        for &i in &idx[10..] {
            assert!(logs[i].best_fitness() >= 10.0);
        }
        assert_eq!(idx, select_run_indices(&logs, 10, 10, 1).unwrap());

        let all = select_runs(&logs[..5], 5, 0, 0).unwrap();
        assert_eq!(all.len(), 5);
        assert!(all.windows(2).all(|w| w[0].best_fitness() <= w[1].best_fitness()));
        assert!(select_run_indices(&logs[..5], 4, 2, 0).is_err());
    }

    #[test]
    fn grid_has_twenty_valid_configs() {
        let grid = config_grid(21, 100);
        assert_eq!(grid.len(), 20);
        for g in &grid {
            g.validate().unwrap();
            assert!(g.elitism >= 1);
        }
        let labels: std::collections::HashSet<_> = grid.iter().map(|g| g.label()).collect();
        assert_eq!(labels.len(), 20);
    }

    #[test]
    fn cache_matches_fresh_evaluation() {
        let f = sum_fitness();
        let cfg = GaConfig {
            population: 30,
            iterations: 10,
            ..GaConfig::default_for(5)
        };
        let log = ga_run(&f, 5, &cfg).unwrap();
        for it in &log.iterations {
            let fresh = f.evaluate(&it.population).unwrap();
            assert_eq!(fresh, it.fitness);
        }
    }

    #[test]
    fn log_round_trip() {
        let cfg = GaConfig {
            population: 10,
            iterations: 4,
            ..GaConfig::default_for(3)
        };
        let f = FnFitness {
            name: "noisy".into(),
            f: |s: &SignalSetting| s.offsets().iter().map(|&o| f64::from(o).sqrt() / 3.0).sum(),
        };
        let log = ga_run(&f, 3, &cfg).unwrap();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4 + 2);
        let back = GaRunLog::read_jsonl(&buf[..], "mem").unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn cyclic_distance_wraps() {
        assert_eq!(cyclic_distance(0, 119), 1);
        assert_eq!(cyclic_distance(10, 70), 60);
        assert_eq!(cyclic_distance(5, 5), 0);
    }
}
