//! Remedies for surrogate error at optimizer-found settings: averaging
//! several metamodels, and retraining on oracle labels of the settings the
//! optimizer converges to.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::analysis::{summarize_errors, ErrorSummary};
use crate::datagen::{dimension, LabeledRecord};
use crate::error::{Error, Result};
use crate::ga::{ga_run, Fitness, GaConfig, SurrogateFitness, LOG_FORMAT_VERSION};
use crate::netmodel::SignalSetting;
use crate::rng::mix_seed;
use crate::surrogate::{test_error, ModelSpec, Predictor, SurrogateModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    /// Drops `floor(fraction · n)` predictions from each end before averaging.
    TrimmedMean { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<SurrogateModel>,
    pub aggregation: Aggregation,
}

impl EnsembleModel {
    pub fn new(members: Vec<SurrogateModel>, aggregation: Aggregation) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("an ensemble needs at least one member"))?;
        let c = first.n_intersections();
        if members.iter().any(|m| m.n_intersections() != c) {
            return Err(Error::invalid("ensemble members disagree on the intersection count"));
        }
        if let Aggregation::TrimmedMean { fraction } = aggregation {
            if !(0.0..0.5).contains(&fraction) {
                return Err(Error::invalid("trimmed fraction must lie in [0, 0.5)"));
            }
        }
        Ok(EnsembleModel {
            members,
            aggregation,
        })
    }

    pub fn n_intersections(&self) -> usize {
        self.members[0].n_intersections()
    }

    fn aggregate(&self, mut values: Vec<f64>) -> f64 {
        match self.aggregation {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::TrimmedMean { fraction } => {
                values.sort_by(f64::total_cmp);
                let k = (fraction * values.len() as f64).floor() as usize;
                let kept = &values[k..values.len() - k];
                kept.iter().sum::<f64>() / kept.len() as f64
            }
        }
    }

    pub fn predict(&self, setting: &SignalSetting) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(setting))?[0])
    }

    pub fn predict_batch(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        let per_member: Vec<Vec<f64>> = self
            .members
            .iter()
            .map(|m| m.predict_batch(settings))
            .collect::<Result<_>>()?;
        Ok((0..settings.len())
            .map(|i| self.aggregate(per_member.iter().map(|p| p[i]).collect()))
            .collect())
    }
}

/// Averages member predictions; see [`EnsembleModel`].
pub fn ensemble_predict(ensemble: &EnsembleModel, setting: &SignalSetting) -> Result<f64> {
    ensemble.predict(setting)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Training-set size the round's model was fit on.
    pub train_size: usize,
    pub test_mean_abs_rel: f64,
    /// Error at the round's GA optima, measured before they are added.
    pub optima: ErrorSummary,
    pub labels_added: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearningReport {
    pub model: String,
    pub top_k: usize,
    pub rounds: Vec<RoundReport>,
}

pub struct ActiveLearningOutcome {
    pub report: ActiveLearningReport,
    /// Model of the last round.
    pub model: SurrogateModel,
    pub train: Vec<LabeledRecord>,
}

/// Repeatedly trains `spec`, optimizes it with the GA, labels the run's
/// `top_k` best settings with the oracle and adds the unseen ones to the
/// training set. Round `r` runs the GA with seed `mix_seed(ga.seed, r)`.
#[allow(clippy::too_many_arguments)]
pub fn active_learning(
    oracle: &dyn Fitness,
    spec: &ModelSpec,
    train: &[LabeledRecord],
    test: &[LabeledRecord],
    ga: &GaConfig,
    rounds: usize,
    top_k: usize,
) -> Result<ActiveLearningOutcome> {
    if rounds == 0 {
        return Err(Error::invalid("at least one round is required"));
    }
    if top_k == 0 || top_k > ga.population * ga.iterations {
        return Err(Error::invalid("top_k must lie in 1..=population·iterations"));
    }
    let c = dimension(train)?;
    let mut data = train.to_vec();
    let mut known: HashSet<SignalSetting> = data.iter().map(|r| r.setting.clone()).collect();
    let mut reports = Vec::with_capacity(rounds);
    let mut model = None;
    for round in 0..rounds {
        let m = spec.train(&data)?;
        let (test_mean_abs_rel, _) = test_error(&m, test)?;
        let config = GaConfig {
            seed: mix_seed(ga.seed, round as u64),
            ..ga.clone()
        };
        let fitness = SurrogateFitness {
            name: spec.label(),
            model: &m,
        };
        let log = ga_run(&fitness, c, &config)?;
        let settings: Vec<SignalSetting> = log
            .final_best
            .iter()
            .take(top_k)
            .map(|s| s.setting.clone())
            .collect();
        let simulated = oracle.evaluate(&settings)?;
        let predicted = fitness.evaluate(&settings)?;
        let pairs: Vec<(f64, f64)> = predicted.into_iter().zip(simulated.iter().copied()).collect();
        let optima = summarize_errors(&pairs)?;
        let train_size = data.len();
        let mut labels_added = 0;
        for (setting, wait_s) in settings.into_iter().zip(simulated) {
            if known.insert(setting.clone()) {
                data.push(LabeledRecord { setting, wait_s });
                labels_added += 1;
            }
        }
        reports.push(RoundReport {
            round,
            train_size,
            test_mean_abs_rel,
            optima,
            labels_added,
        });
        model = Some(m);
    }
    Ok(ActiveLearningOutcome {
        report: ActiveLearningReport {
            model: spec.label(),
            top_k,
            rounds: reports,
        },
        model: model.expect("at least one round"),
        train: data,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    Header {
        format_version: u32,
        model: String,
        top_k: usize,
    },
    Round(RoundReport),
}

impl ActiveLearningReport {
    /// Header line followed by one line per round.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&ReportLine::Header {
            format_version: LOG_FORMAT_VERSION,
            model: self.model.clone(),
            top_k: self.top_k,
        })?;
        out.push('\n');
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(&ReportLine::Round(r.clone()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut rounds = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                ReportLine::Header {
                    format_version,
                    model,
                    top_k,
                } => {
                    if format_version != LOG_FORMAT_VERSION {
                        return Err(Error::Format(format!("unsupported format_version {format_version}")));
                    }
                    header = Some((model, top_k));
                }
                ReportLine::Round(r) => rounds.push(r),
            }
        }
        let (model, top_k) = header.ok_or_else(|| Error::Format("missing header record".into()))?;
        Ok(ActiveLearningReport { model, top_k, rounds })
    }
}
