//! Periodic input encoding: each offset `x` becomes
//! `(cos(2πx/120), sin(2πx/120))`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::netmodel::{SignalSetting, CYCLE_S};

/// How a model consumes a setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// The C offsets as reals.
    Raw,
    /// The 2C-dimensional circular encoding.
    Encoded,
}

impl FeatureMode {
    pub fn width(self, n_intersections: usize) -> usize {
        match self {
            FeatureMode::Raw => n_intersections,
            FeatureMode::Encoded => 2 * n_intersections,
        }
    }

    /// Appends the features of `setting` to `out`.
    pub fn extend(self, setting: &SignalSetting, out: &mut Vec<f64>) {
        match self {
            FeatureMode::Raw => out.extend(setting.offsets().iter().map(|&o| f64::from(o))),
            FeatureMode::Encoded => {
                for &o in setting.offsets() {
                    let (s, c) = angle(o).sin_cos();
                    out.push(c);
                    out.push(s);
                }
            }
        }
    }

    pub fn features(self, setting: &SignalSetting) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width(setting.len()));
        self.extend(setting, &mut out);
        out
    }
}

fn angle(offset: u8) -> f64 {
    TAU * f64::from(offset) / f64::from(CYCLE_S)
}

/// Interleaved `(cos, sin)` pairs, one per offset, in input order.
pub fn encode(setting: &SignalSetting) -> Vec<f64> {
    FeatureMode::Encoded.features(setting)
}
