//! Common interface over the metamodel families and their on-disk format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledRecord;
use crate::error::{Error, Result};
use crate::gbt::{gbt_train, GbtModel, GbtSpec};
use crate::mitigation::EnsembleModel;
use crate::netmodel::SignalSetting;
use crate::nn::{nn_train, NnModel, NnSpec};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Anything that estimates the total red-wait seconds of a setting.
pub trait Predictor: Send + Sync {
    fn n_intersections(&self) -> usize;

    fn predict(&self, setting: &SignalSetting) -> Result<f64>;

    fn predict_batch(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        settings
            .iter()
            .enumerate()
            .map(|(i, s)| self.predict(s).map_err(|e| Error::at(i, e)))
            .collect()
    }
}

impl Predictor for NnModel {
    fn n_intersections(&self) -> usize {
        self.n_intersections
    }

    fn predict(&self, setting: &SignalSetting) -> Result<f64> {
        NnModel::predict(self, setting)
    }

    fn predict_batch(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        NnModel::predict_batch(self, settings)
    }
}

impl Predictor for GbtModel {
    fn n_intersections(&self) -> usize {
        self.n_intersections
    }

    fn predict(&self, setting: &SignalSetting) -> Result<f64> {
        GbtModel::predict(self, setting)
    }
}

/// Training recipe of either family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Nn(NnSpec),
    Gbt(GbtSpec),
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Nn(s) => s.label(),
            ModelSpec::Gbt(s) => s.label(),
        }
    }

    pub fn train(&self, data: &[LabeledRecord]) -> Result<SurrogateModel> {
        Ok(match self {
            ModelSpec::Nn(s) => SurrogateModel::Nn(nn_train(data, s)?),
            ModelSpec::Gbt(s) => SurrogateModel::Gbt(gbt_train(data, s)?),
        })
    }
}

/// The 16 default models: 8 networks followed by 8 boosted ensembles.
pub fn roster(seed: u64) -> Vec<ModelSpec> {
    crate::nn::roster_specs(seed)
        .into_iter()
        .map(ModelSpec::Nn)
        .chain(
            crate::gbt::roster_specs(crate::rng::mix_seed(seed, 1 << 40))
                .into_iter()
                .map(ModelSpec::Gbt),
        )
        .collect()
}

/// A trained metamodel of any family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "model", rename_all = "snake_case")]
pub enum SurrogateModel {
    Nn(NnModel),
    Gbt(GbtModel),
    Ensemble(EnsembleModel),
}

impl SurrogateModel {
    pub fn label(&self) -> String {
        match self {
            SurrogateModel::Nn(m) => m.spec.label(),
            SurrogateModel::Gbt(m) => m.spec.label(),
            SurrogateModel::Ensemble(e) => format!("ensemble-{}", e.members.len()),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            SurrogateModel::Nn(_) => "nn",
            SurrogateModel::Gbt(_) => "gbt",
            SurrogateModel::Ensemble(_) => "ensemble",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            label: self.label(),
            surrogate: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelFile = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        Ok(doc.surrogate)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    label: String,
    surrogate: SurrogateModel,
}

impl Predictor for SurrogateModel {
    fn n_intersections(&self) -> usize {
        match self {
            SurrogateModel::Nn(m) => m.n_intersections,
            SurrogateModel::Gbt(m) => m.n_intersections,
            SurrogateModel::Ensemble(e) => e.n_intersections(),
        }
    }

    fn predict(&self, setting: &SignalSetting) -> Result<f64> {
        match self {
            SurrogateModel::Nn(m) => m.predict(setting),
            SurrogateModel::Gbt(m) => m.predict(setting),
            SurrogateModel::Ensemble(e) => e.predict(setting),
        }
    }

    fn predict_batch(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        match self {
            SurrogateModel::Nn(m) => m.predict_batch(settings),
            SurrogateModel::Gbt(m) => Predictor::predict_batch(m, settings),
            SurrogateModel::Ensemble(e) => e.predict_batch(settings),
        }
    }
}

/// Mean absolute relative error `mean(|pred - y| / y)` and the per-record
/// predictions.
pub fn test_error(model: &dyn Predictor, data: &[LabeledRecord]) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let settings: Vec<SignalSetting> = data.iter().map(|r| r.setting.clone()).collect();
    let pred = model.predict_batch(&settings)?;
    let mut total = 0.0;
    for (p, r) in pred.iter().zip(data) {
        if !(r.wait_s > 0.0) {
            return Err(Error::Domain("relative error needs positive labels".into()));
        }
        total += (p - r.wait_s).abs() / r.wait_s;
    }
    Ok((total / data.len() as f64, pred))
}

/// Mean squared error of `pred` against the labels.
pub fn mse(pred: &[f64], data: &[LabeledRecord]) -> f64 {
    pred.iter()
        .zip(data)
        .map(|(p, r)| (p - r.wait_s).powi(2))
        .sum::<f64>()
        / data.len() as f64
}
