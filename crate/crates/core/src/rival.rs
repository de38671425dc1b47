//! Rival predictions and head-to-head probabilities.
//!
//! Rival attribute submissions are private, so rival scores are predicted by
//! one of three reference methods:
//!
//! - `carry_forward`: last published score plus bootstrapped year-over-year changes.
//! - `trend_extrapolation`: least-squares line over recent years, one year ahead,
//!   plus bootstrapped fit residuals.
//! - `model_based`: our own ensemble model applied to the rival's latest attributes.
//!
//! Win probabilities compare every member of our ensemble with every member
//! of the rival's; ties count one half, which makes `P(A > B) + P(B > A) = 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RankeeRecord, RankingSystemSpec, ScoreBounds, Subject};
use crate::predictor::{predict_final, EnsemblePrediction, ScoreModel, FINAL_SUBJECT};
use crate::scenario::Scenario;

/// Bins used for score densities over `[score_min, score_max]`.
pub const DENSITY_BINS: usize = 50;
pub const DEFAULT_TREND_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RivalMethod {
    CarryForward,
    TrendExtrapolation,
    ModelBased,
}

impl RivalMethod {
    pub const ALL: [RivalMethod; 3] = [
        RivalMethod::CarryForward,
        RivalMethod::TrendExtrapolation,
        RivalMethod::ModelBased,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RivalMethod::CarryForward => "carry_forward",
            RivalMethod::TrendExtrapolation => "trend_extrapolation",
            RivalMethod::ModelBased => "model_based",
        }
    }

    fn salt(&self) -> u64 {
        match self {
            RivalMethod::CarryForward => 0x9e37_79b9_7f4a_7c15,
            RivalMethod::TrendExtrapolation => 0xbf58_476d_1ce4_e5b9,
            RivalMethod::ModelBased => 0x94d0_49bb_1331_11eb,
        }
    }
}

impl fmt::Display for RivalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RivalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RivalMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown rival method `{s}` (expected carry_forward, trend_extrapolation or model_based)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RivalConfig {
    /// Years of history the trend line is fitted over.
    pub trend_window: usize,
    /// Seed for the residual bootstrap.
    pub seed: u64,
}

impl Default for RivalConfig {
    fn default() -> Self {
        Self {
            trend_window: DEFAULT_TREND_WINDOW,
            seed: 0,
        }
    }
}

/// Predicted ensembles for one rival under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RivalPrediction {
    pub rival_id: String,
    pub method: RivalMethod,
    pub indicators: BTreeMap<String, EnsemblePrediction>,
    pub final_prediction: EnsemblePrediction,
}

impl RivalPrediction {
    pub fn ensemble(&self, subject: &Subject) -> Result<&EnsemblePrediction> {
        match subject {
            Subject::Final => Ok(&self.final_prediction),
            Subject::Indicator(id) => self
                .indicators
                .get(id)
                .ok_or_else(|| Error::validation(format!("rival has no indicator `{id}`"))),
            Subject::Attribute(id) => Err(Error::validation(format!(
                "attribute `{id}` has no rival ensemble"
            ))),
        }
    }
}

/// Predicts one rival's indicator and final ensembles. The ensemble size is
/// the model's member count for every method.
pub fn predict_rival(
    rival_id: &str,
    method: RivalMethod,
    history: &[RankeeRecord],
    model: &dyn ScoreModel,
    spec: &RankingSystemSpec,
    config: &RivalConfig,
) -> Result<RivalPrediction> {
    let mut records: Vec<&RankeeRecord> =
        history.iter().filter(|r| r.rankee_id == rival_id).collect();
    records.sort_by_key(|r| r.year);
    let needed = match method {
        RivalMethod::TrendExtrapolation => 2,
        _ => 1,
    };
    if records.len() < needed {
        return Err(Error::InsufficientHistory {
            rival: rival_id.to_string(),
            method: method.to_string(),
            needed,
            found: records.len(),
        });
    }
    let m = model.member_count();
    let bounds = spec.score_bounds;

    if method == RivalMethod::ModelBased {
        let latest = records[records.len() - 1];
        let indicators = spec
            .indicators
            .iter()
            .map(|ind| {
                Ok((
                    ind.id.clone(),
                    model.predict_indicator(&ind.id, &latest.attribute_values)?,
                ))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let final_prediction = predict_final(&indicators, spec)?;
        return Ok(RivalPrediction {
            rival_id: rival_id.to_string(),
            method,
            indicators,
            final_prediction,
        });
    }

    // subject series in indicator order, then final
    let subjects: Vec<Subject> = spec
        .indicators
        .iter()
        .map(|i| Subject::Indicator(i.id.clone()))
        .chain(std::iter::once(Subject::Final))
        .collect();
    let series = subjects
        .iter()
        .map(|subject| {
            records
                .iter()
                .map(|r| {
                    r.subject_value(subject).ok_or_else(|| {
                        Error::schema(format!(
                            "rival `{rival_id}` year {} has no {subject} score",
                            r.year
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let years: Vec<f64> = records.iter().map(|r| r.year as f64).collect();

    // per subject: point forecast and the residual pool to bootstrap from
    let (centers, residuals): (Vec<f64>, Vec<Vec<f64>>) = match method {
        RivalMethod::CarryForward => series
            .iter()
            .map(|ys| {
                let changes = ys.windows(2).map(|w| w[1] - w[0]).collect();
                (ys[ys.len() - 1], changes)
            })
            .unzip(),
        RivalMethod::TrendExtrapolation => {
            let window = config.trend_window.max(2);
            let start = years.len().saturating_sub(window);
            let xs = &years[start..];
            let target = xs[xs.len() - 1] + 1.0;
            series
                .iter()
                .map(|ys| {
                    let ys = &ys[start..];
                    let (intercept, slope) = least_squares_line(xs, ys);
                    let fitted = xs.iter().zip(ys).map(|(x, y)| y - (intercept + slope * x));
                    (intercept + slope * target, fitted.collect())
                })
                .unzip()
        }
        RivalMethod::ModelBased => unreachable!("handled above"),
    };

    // one residual index per member, shared by every subject
    let pool = residuals[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ fnv1a(rival_id) ^ method.salt());
    let draws: Vec<Option<usize>> = (0..m)
        .map(|_| (pool > 0).then(|| rng.random_range(0..pool)))
        .collect();
    let mut ensembles = centers
        .iter()
        .zip(&residuals)
        .zip(&subjects)
        .map(|((center, res), subject)| {
            let members = draws
                .iter()
                .map(|d| bounds.clamp(center + d.map_or(0.0, |j| res[j])))
                .collect();
            EnsemblePrediction::new(subject_label(subject), members)
        })
        .collect::<Result<Vec<_>>>()?;

    let final_prediction = ensembles.pop().expect("final subject present");
    let indicators = spec
        .indicators
        .iter()
        .map(|i| i.id.clone())
        .zip(ensembles)
        .collect();
    Ok(RivalPrediction {
        rival_id: rival_id.to_string(),
        method,
        indicators,
        final_prediction,
    })
}

fn subject_label(subject: &Subject) -> String {
    match subject {
        Subject::Final => FINAL_SUBJECT.to_string(),
        other => other.id().to_string(),
    }
}

/// Ordinary least squares `y = a + b x`; `b = 0` when every x is equal.
fn least_squares_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Probability that our score beats the rival's, over all member pairs,
/// with ties counted as one half.
pub fn win_probability(ours: &EnsemblePrediction, rival: &EnsemblePrediction) -> f64 {
    let mut sorted = rival.members().to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the win count, so ties stay integral
    let doubled: u64 = ours
        .members()
        .iter()
        .map(|x| {
            let below = sorted.partition_point(|r| r < x) as u64;
            let at_or_below = sorted.partition_point(|r| r <= x) as u64;
            below + at_or_below
        })
        .sum();
    let pairs = 2 * ours.len() as u64 * rival.len() as u64;
    doubled as f64 / pairs as f64
}

/// Predictions for a set of rivals under several methods. Failures are kept
/// per (rival, method) so one method's error never hides the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RivalBoard {
    pub entries: Vec<BoardEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardEntry {
    pub rival_id: String,
    pub method: RivalMethod,
    pub prediction: Option<RivalPrediction>,
    pub error: Option<String>,
}

impl RivalBoard {
    pub fn rival_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !ids.contains(&e.rival_id.as_str()) {
                ids.push(&e.rival_id);
            }
        }
        ids
    }

    pub fn get(&self, rival_id: &str, method: RivalMethod) -> Option<&BoardEntry> {
        self.entries
            .iter()
            .find(|e| e.rival_id == rival_id && e.method == method)
    }

    /// Final-score ensembles of every rival that `method` could predict.
    pub fn finals(&self, method: RivalMethod) -> Vec<EnsemblePrediction> {
        self.entries
            .iter()
            .filter(|e| e.method == method)
            .filter_map(|e| e.prediction.as_ref())
            .map(|p| p.final_prediction.clone())
            .collect()
    }
}

pub fn predict_rivals(
    rival_ids: &[String],
    history: &[RankeeRecord],
    methods: &[RivalMethod],
    model: &dyn ScoreModel,
    spec: &RankingSystemSpec,
    config: &RivalConfig,
) -> RivalBoard {
    let entries = rival_ids
        .iter()
        .flat_map(|rival| methods.iter().map(move |m| (rival, *m)))
        .map(|(rival, method)| {
            match predict_rival(rival, method, history, model, spec, config) {
                Ok(p) => BoardEntry {
                    rival_id: rival.clone(),
                    method,
                    prediction: Some(p),
                    error: None,
                },
                Err(e) => BoardEntry {
                    rival_id: rival.clone(),
                    method,
                    prediction: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    RivalBoard { entries }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinProbabilityCell {
    pub rival_id: String,
    pub method: RivalMethod,
    pub subject: Subject,
    /// `None` when the method could not predict this rival.
    pub probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// One cell per (rival, method, subject); subjects are the indicators in
/// declaration order followed by the final score.
pub fn heatmap(
    scenario: &Scenario,
    board: &RivalBoard,
    spec: &RankingSystemSpec,
) -> Result<Vec<WinProbabilityCell>> {
    let subjects: Vec<Subject> = spec
        .indicators
        .iter()
        .map(|i| Subject::Indicator(i.id.clone()))
        .chain(std::iter::once(Subject::Final))
        .collect();
    let mut cells = Vec::with_capacity(board.entries.len() * subjects.len());
    for entry in &board.entries {
        for subject in &subjects {
            let (probability, error) = match &entry.prediction {
                Some(p) => (
                    Some(win_probability(scenario.ensemble(subject)?, p.ensemble(subject)?)),
                    None,
                ),
                None => (None, entry.error.clone()),
            };
            cells.push(WinProbabilityCell {
                rival_id: entry.rival_id.clone(),
                method: entry.method,
                subject: subject.clone(),
                probability,
                error,
            });
        }
    }
    Ok(cells)
}

/// Member histogram over the full score range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub subject: Subject,
    pub members: Vec<f64>,
    pub bin_edges: Vec<f64>,
    /// Fraction of members per bin; sums to 1.
    pub density: Vec<f64>,
    pub expected: f64,
}

/// Equal-width density over `bounds`, right-open bins except the last.
pub fn score_distribution(
    subject: Subject,
    ensemble: &EnsemblePrediction,
    bounds: ScoreBounds,
    bins: usize,
) -> ScoreDistribution {
    let bins = bins.max(1);
    let width = bounds.span() / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| bounds.min + i as f64 * width).collect();
    edges.push(bounds.max);
    let mut counts = vec![0usize; bins];
    for v in ensemble.members() {
        let idx = edges[1..bins].partition_point(|e| e <= v);
        counts[idx.min(bins - 1)] += 1;
    }
    let n = ensemble.len() as f64;
    ScoreDistribution {
        subject,
        members: ensemble.members().to_vec(),
        bin_edges: edges,
        density: counts.into_iter().map(|c| c as f64 / n).collect(),
        expected: ensemble.mean(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RivalExpectation {
    pub rival_id: String,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarAxis {
    pub subject: Subject,
    pub ours: ScoreDistribution,
    pub rivals: Vec<RivalExpectation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub highlighted: Option<ScoreDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPayload {
    pub scenario_id: u64,
    pub method: RivalMethod,
    pub highlight: Option<String>,
    pub axes: Vec<RadarAxis>,
}

/// Our per-subject distributions against every rival's expected value under
/// one method, plus the full distribution of the highlighted rival.
pub fn radar_data(
    scenario: &Scenario,
    board: &RivalBoard,
    method: RivalMethod,
    highlight: Option<&str>,
    spec: &RankingSystemSpec,
) -> Result<RadarPayload> {
    let rival_ids = board.rival_ids();
    if let Some(h) = highlight {
        if !rival_ids.contains(&h) {
            return Err(Error::validation(format!("unknown rival `{h}`")));
        }
    }
    let predictions = rival_ids
        .iter()
        .map(|id| {
            let entry = board
                .get(id, method)
                .ok_or_else(|| Error::validation(format!("rival `{id}` has no {method} prediction")))?;
            entry.prediction.as_ref().ok_or_else(|| {
                Error::validation(format!(
                    "{method} cannot predict rival `{id}`: {}",
                    entry.error.as_deref().unwrap_or("unknown error")
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let bounds = spec.score_bounds;
    let axes = spec
        .indicators
        .iter()
        .map(|i| Subject::Indicator(i.id.clone()))
        .chain(std::iter::once(Subject::Final))
        .map(|subject| {
            let ours = score_distribution(
                subject.clone(),
                scenario.ensemble(&subject)?,
                bounds,
                DENSITY_BINS,
            );
            let mut rivals = Vec::with_capacity(predictions.len());
            let mut highlighted = None;
            for p in &predictions {
                let e = p.ensemble(&subject)?;
                rivals.push(RivalExpectation {
                    rival_id: p.rival_id.clone(),
                    expected: e.mean(),
                });
                if highlight == Some(p.rival_id.as_str()) {
                    highlighted =
                        Some(score_distribution(subject.clone(), e, bounds, DENSITY_BINS));
                }
            }
            Ok(RadarAxis {
                subject,
                ours,
                rivals,
                highlighted,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RadarPayload {
        scenario_id: scenario.scenario_id,
        method,
        highlight: highlight.map(str::to_string),
        axes,
    })
}
