//! Ensemble score prediction.
//!
//! The reference model is a bootstrap ensemble of ridge-regularized linear
//! regressions, one ensemble per indicator. Member `i` of every indicator is
//! trained on the *same* bootstrap resample of history rows, so member `i`
//! across indicators forms one coherent draw and can be aggregated into
//! member `i` of the final-score ensemble.
//!
//! Other models can be plugged in by implementing [`ScoreModel`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RankeeRecord, RankingSystemSpec, ScoreBounds};

/// Subject id used for final-score ensembles.
pub const FINAL_SUBJECT: &str = "final";

/// M member predictions for one subject. Mean, min and max are always derived
/// from the members; they are serialized for consumers but never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EnsembleRepr", try_from = "EnsembleRepr")]
pub struct EnsemblePrediction {
    subject_id: String,
    members: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleRepr {
    subject_id: String,
    members: Vec<f64>,
    #[serde(default, skip_deserializing)]
    mean: f64,
    #[serde(default, skip_deserializing)]
    min: f64,
    #[serde(default, skip_deserializing)]
    max: f64,
}

impl From<EnsemblePrediction> for EnsembleRepr {
    fn from(e: EnsemblePrediction) -> Self {
        EnsembleRepr {
            mean: e.mean(),
            min: e.min(),
            max: e.max(),
            subject_id: e.subject_id,
            members: e.members,
        }
    }
}

impl TryFrom<EnsembleRepr> for EnsemblePrediction {
    type Error = Error;

    fn try_from(r: EnsembleRepr) -> Result<Self> {
        EnsemblePrediction::new(r.subject_id, r.members)
    }
}

impl EnsemblePrediction {
    pub fn new(subject_id: impl Into<String>, members: Vec<f64>) -> Result<Self> {
        let subject_id = subject_id.into();
        if members.is_empty() {
            return Err(Error::Contract(format!("ensemble `{subject_id}` has no members")));
        }
        if let Some(bad) = members.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "ensemble `{subject_id}` has non-finite member {bad}"
            )));
        }
        Ok(Self { subject_id, members })
    }

    pub fn constant(subject_id: impl Into<String>, value: f64, members: usize) -> Result<Self> {
        Self::new(subject_id, vec![value; members])
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn members(&self) -> &[f64] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.members.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.members.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Arithmetic mean, pinned into `[min, max]` against summation rounding.
    pub fn mean(&self) -> f64 {
        let mean = self.members.iter().sum::<f64>() / self.members.len() as f64;
        mean.clamp(self.min(), self.max())
    }

    /// Spread of the ensemble, `max - min`.
    pub fn uncertainty(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn clamped(mut self, bounds: ScoreBounds) -> Self {
        for m in &mut self.members {
            *m = bounds.clamp(*m);
        }
        self
    }

    #[cfg(test)]
    pub(crate) fn with_subject(mut self, subject_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self
    }
}

/// A model that yields member-indexed ensembles of indicator scores.
pub trait ScoreModel: Send + Sync {
    /// Ensemble size M; identical for every indicator.
    fn member_count(&self) -> usize;

    fn score_bounds(&self) -> ScoreBounds;

    /// Unclamped member predictions for one indicator.
    fn raw_members(&self, indicator_id: &str, attributes: &BTreeMap<String, f64>)
        -> Result<Vec<f64>>;

    /// Member predictions clamped to the score bounds, in member order.
    fn predict_indicator(
        &self,
        indicator_id: &str,
        attributes: &BTreeMap<String, f64>,
    ) -> Result<EnsemblePrediction> {
        let raw = self.raw_members(indicator_id, attributes)?;
        Ok(EnsemblePrediction::new(indicator_id, raw)?.clamped(self.score_bounds()))
    }

    /// Mean of the unclamped members.
    fn raw_mean(&self, indicator_id: &str, attributes: &BTreeMap<String, f64>) -> Result<f64> {
        let raw = self.raw_members(indicator_id, attributes)?;
        Ok(raw.iter().sum::<f64>() / raw.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Ensemble size M.
    pub members: usize,
    /// Ridge penalty λ on the slope coefficients (the intercept is not penalized).
    pub ridge: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            members: 100,
            ridge: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMember {
    pub intercept: f64,
    /// One coefficient per attribute of the owning indicator's group, same order.
    pub coefficients: Vec<f64>,
}

impl LinearMember {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorModel {
    pub indicator_id: String,
    pub attributes: Vec<String>,
    pub members: Vec<LinearMember>,
}

impl IndicatorModel {
    fn gather(&self, attributes: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        self.attributes
            .iter()
            .map(|id| {
                attributes.get(id).copied().ok_or_else(|| {
                    Error::schema(format!(
                        "indicator `{}` needs attribute `{id}`",
                        self.indicator_id
                    ))
                })
            })
            .collect()
    }

    /// Mean coefficient of `attribute` across members; 0 when it is not in the group.
    pub fn mean_coefficient(&self, attribute: &str) -> f64 {
        match self.attributes.iter().position(|a| a == attribute) {
            Some(j) => {
                self.members.iter().map(|m| m.coefficients[j]).sum::<f64>()
                    / self.members.len() as f64
            }
            None => 0.0,
        }
    }
}

/// Trained bootstrap-linear ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub config: FitConfig,
    pub training_years: Vec<i32>,
    pub training_rows: usize,
    pub score_bounds: ScoreBounds,
    /// Observed `[min, max]` per attribute over the training rows.
    pub attribute_ranges: BTreeMap<String, [f64; 2]>,
    pub indicators: Vec<IndicatorModel>,
}

impl EnsembleModel {
    pub fn indicator(&self, id: &str) -> Option<&IndicatorModel> {
        self.indicators.iter().find(|m| m.indicator_id == id)
    }

    fn require(&self, id: &str) -> Result<&IndicatorModel> {
        self.indicator(id)
            .ok_or_else(|| Error::schema(format!("model has no indicator `{id}`")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(input: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(input).map_err(|e| Error::from_json(e, input))?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let m = self.config.members;
        for ind in &self.indicators {
            if ind.members.len() != m {
                return Err(Error::Contract(format!(
                    "indicator `{}` has {} members, expected {m}",
                    ind.indicator_id,
                    ind.members.len()
                )));
            }
            for member in &ind.members {
                if member.coefficients.len() != ind.attributes.len()
                    || !member.intercept.is_finite()
                    || member.coefficients.iter().any(|c| !c.is_finite())
                {
                    return Err(Error::Contract(format!(
                        "indicator `{}` has a malformed member",
                        ind.indicator_id
                    )));
                }
            }
        }
        Ok(())
    }
}

impl ScoreModel for EnsembleModel {
    fn member_count(&self) -> usize {
        self.config.members
    }

    fn score_bounds(&self) -> ScoreBounds {
        self.score_bounds
    }

    fn raw_members(
        &self,
        indicator_id: &str,
        attributes: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>> {
        let ind = self.require(indicator_id)?;
        let x = ind.gather(attributes)?;
        Ok(ind.members.iter().map(|m| m.evaluate(&x)).collect())
    }
}

/// Fits one ridge member per bootstrap resample for every indicator.
///
/// Rows are pooled across rankees and years. Resample indices are drawn once
/// per member and shared by all indicators. Deterministic for a given seed.
pub fn fit(
    history: &[RankeeRecord],
    spec: &RankingSystemSpec,
    config: FitConfig,
) -> Result<EnsembleModel> {
    if config.members < 2 {
        return Err(Error::validation(format!(
            "ensemble size must be at least 2, got {}",
            config.members
        )));
    }
    if !(config.ridge.is_finite() && config.ridge >= 0.0) {
        return Err(Error::validation(format!(
            "ridge penalty must be finite and non-negative, got {}",
            config.ridge
        )));
    }

    // Per indicator: design rows (indexed like `history`) usable for that indicator.
    let mut designs = Vec::with_capacity(spec.indicators.len());
    for ind in &spec.indicators {
        let rows: Vec<Option<(Vec<f64>, f64)>> = history
            .iter()
            .map(|rec| {
                let y = *rec.indicator_scores.get(&ind.id)?;
                let x = ind
                    .group
                    .iter()
                    .map(|a| rec.attribute_values.get(a).copied())
                    .collect::<Option<Vec<f64>>>()?;
                Some((x, y))
            })
            .collect();
        let usable = rows.iter().filter(|r| r.is_some()).count();
        if usable < 2 {
            return Err(Error::Training {
                indicator: ind.id.clone(),
                reason: format!("needs at least 2 training rows, found {usable}"),
            });
        }
        designs.push(rows);
    }

    let n = history.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut members: Vec<Vec<LinearMember>> = vec![Vec::with_capacity(config.members); designs.len()];
    let mut sample = Vec::with_capacity(n);
    for _ in 0..config.members {
        sample.clear();
        sample.extend((0..n).map(|_| rng.random_range(0..n)));
        for (k, rows) in designs.iter().enumerate() {
            let mut picked: Vec<&(Vec<f64>, f64)> =
                sample.iter().filter_map(|&i| rows[i].as_ref()).collect();
            if picked.is_empty() {
                picked = rows.iter().flatten().collect();
            }
            let width = spec.indicators[k].group.len();
            members[k].push(ridge_fit(&picked, width, config.ridge));
        }
    }

    let indicators = spec
        .indicators
        .iter()
        .zip(members)
        .map(|(ind, members)| IndicatorModel {
            indicator_id: ind.id.clone(),
            attributes: ind.group.clone(),
            members,
        })
        .collect();

    let mut years: Vec<i32> = history.iter().map(|r| r.year).collect();
    years.sort_unstable();
    years.dedup();

    let mut attribute_ranges = BTreeMap::new();
    for attr in &spec.attributes {
        let values = history
            .iter()
            .filter_map(|r| r.attribute_values.get(&attr.id).copied());
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if lo.is_finite() {
            attribute_ranges.insert(attr.id.clone(), [lo, hi]);
        }
    }

    Ok(EnsembleModel {
        config,
        training_years: years,
        training_rows: n,
        score_bounds: spec.score_bounds,
        attribute_ranges,
        indicators,
    })
}

/// Ridge regression with an unpenalized intercept, solved on centered data.
///
/// The centered system `[X; sqrt(λ)·I] β = [y; 0]` goes through an SVD
/// least-squares solve, which returns the minimum-norm solution when the
/// design is rank deficient (constant columns, λ = 0).
fn ridge_fit(rows: &[&(Vec<f64>, f64)], width: usize, ridge: f64) -> LinearMember {
    let n = rows.len() as f64;
    let mut x_mean = vec![0.0; width];
    let mut y_mean = 0.0;
    for (x, y) in rows {
        for (m, v) in x_mean.iter_mut().zip(x) {
            *m += v;
        }
        y_mean += y;
    }
    x_mean.iter_mut().for_each(|m| *m /= n);
    y_mean /= n;

    let extra = if ridge > 0.0 { width } else { 0 };
    let mut a = DMatrix::<f64>::zeros(rows.len() + extra, width);
    let mut b = DVector::<f64>::zeros(rows.len() + extra);
    for (r, (x, y)) in rows.iter().enumerate() {
        for j in 0..width {
            a[(r, j)] = x[j] - x_mean[j];
        }
        b[r] = y - y_mean;
    }
    let penalty = ridge.sqrt();
    for j in 0..extra {
        a[(rows.len() + j, j)] = penalty;
    }

    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let cutoff = s_max * 1e-12 * (rows.len() + extra).max(width) as f64;
    let beta = if s_max > 0.0 {
        svd.solve(&b, cutoff).expect("u and v were computed")
    } else {
        DVector::zeros(width)
    };

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&x_mean)
            .map(|(c, m)| c * m)
            .sum::<f64>();
    LinearMember {
        intercept,
        coefficients,
    }
}

/// Member-aligned final-score ensemble: member `i` aggregates member `i` of every indicator.
pub fn predict_final(
    indicator_predictions: &BTreeMap<String, EnsemblePrediction>,
    spec: &RankingSystemSpec,
) -> Result<EnsemblePrediction> {
    if let Some(unknown) = indicator_predictions
        .keys()
        .find(|id| spec.indicator(id).is_none())
    {
        return Err(Error::schema(format!("unknown indicator `{unknown}`")));
    }
    let ordered = spec
        .indicators
        .iter()
        .map(|ind| {
            indicator_predictions
                .get(&ind.id)
                .ok_or_else(|| Error::schema(format!("missing prediction for `{}`", ind.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    final_from_ordered(&ordered, spec)
}

pub(crate) fn final_from_ordered(
    ordered: &[&EnsemblePrediction],
    spec: &RankingSystemSpec,
) -> Result<EnsemblePrediction> {
    let m = ordered[0].len();
    if let Some(odd) = ordered.iter().find(|e| e.len() != m) {
        return Err(Error::Contract(format!(
            "ensemble `{}` has {} members, expected {m}",
            odd.subject_id(),
            odd.len()
        )));
    }
    let mut scratch = vec![0.0; ordered.len()];
    let members = (0..m)
        .map(|i| {
            for (slot, e) in scratch.iter_mut().zip(ordered) {
                *slot = e.members[i];
            }
            spec.aggregate_ordered(&scratch)
        })
        .collect();
    EnsemblePrediction::new(FINAL_SUBJECT, members)
}

/// Histogram of predicted competition ranks over the M member draws.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankDistribution(pub BTreeMap<u32, usize>);

impl RankDistribution {
    /// Most frequent rank; the better (smaller) rank wins ties.
    pub fn modal(&self) -> Option<u32> {
        self.0
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(rank, _)| *rank)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn get(&self, rank: u32) -> usize {
        self.0.get(&rank).copied().unwrap_or(0)
    }
}

/// For each member index, our competition rank among all rankees' member scores.
pub fn predict_rank<'a>(
    our_final: &EnsemblePrediction,
    rival_finals: impl IntoIterator<Item = &'a EnsemblePrediction>,
) -> Result<RankDistribution> {
    let m = our_final.len();
    let rivals: Vec<&EnsemblePrediction> = rival_finals.into_iter().collect();
    if let Some(odd) = rivals.iter().find(|r| r.len() != m) {
        return Err(Error::Contract(format!(
            "rival ensemble has {} members, ours has {m}",
            odd.len()
        )));
    }
    let mut hist = BTreeMap::new();
    for (i, ours) in our_final.members.iter().enumerate() {
        let above = rivals.iter().filter(|r| r.members[i] > *ours).count();
        *hist.entry(above as u32 + 1).or_insert(0) += 1;
    }
    Ok(RankDistribution(hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{attr, ind};
    use crate::model::competition_ranks;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_oneof, proptest, Just};
    use rand_distr::{Distribution, Normal};

    fn one_attr_spec() -> RankingSystemSpec {
        RankingSystemSpec::new(
            vec![attr("x", 0.0, 100.0)],
            vec![ind("y", 1.0, &["x"])],
            ScoreBounds::default(),
        )
        .unwrap()
    }

    fn record(id: &str, year: i32, x: f64, y: f64) -> RankeeRecord {
        RankeeRecord {
            rankee_id: id.into(),
            year,
            attribute_values: [("x".to_string(), x)].into(),
            indicator_scores: [("y".to_string(), y)].into(),
            final_score: y,
            rank: 1,
        }
    }

    fn linear_history(n: usize) -> Vec<RankeeRecord> {
        (0..n)
            .map(|i| {
                let x = i as f64 * 2.0 + 1.0;
                record(&format!("r{i}"), 2020, x, 2.0 * x + 10.0)
            })
            .collect()
    }

    fn hand_model(members: Vec<(f64, f64)>) -> EnsembleModel {
        EnsembleModel {
            config: FitConfig {
                members: members.len(),
                ridge: 0.0,
                seed: 0,
            },
            training_years: vec![],
            training_rows: 0,
            score_bounds: ScoreBounds::default(),
            attribute_ranges: BTreeMap::new(),
            indicators: vec![IndicatorModel {
                indicator_id: "y".into(),
                attributes: vec!["x".into()],
                members: members
                    .into_iter()
                    .map(|(slope, intercept)| LinearMember {
                        intercept,
                        coefficients: vec![slope],
                    })
                    .collect(),
            }],
        }
    }

    fn at(x: f64) -> BTreeMap<String, f64> {
        [("x".to_string(), x)].into()
    }

    #[test]
    fn noiseless_fit_recovers_line_in_every_member() {
        let model = fit(
            &linear_history(30),
            &one_attr_spec(),
            FitConfig {
                members: 100,
                ridge: 0.0,
                seed: 3,
            },
        )
        .unwrap();
        for m in &model.indicators[0].members {
            assert!((m.coefficients[0] - 2.0).abs() < 1e-6, "{m:?}");
            assert!((m.intercept - 10.0).abs() < 1e-6, "{m:?}");
        }
        // fit -> predict reproduces targets before clamping
        let raw = model.raw_members("y", &at(20.0)).unwrap();
        assert!(raw.iter().all(|v| (v - 50.0).abs() < 1e-6));
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let cfg = FitConfig {
            members: 100,
            ridge: 1e-3,
            seed: 7,
        };
        let mut hist = linear_history(25);
        for (i, r) in hist.iter_mut().enumerate() {
            r.indicator_scores.insert("y".into(), 20.0 + (i * 7 % 11) as f64);
        }
        let a = fit(&hist, &one_attr_spec(), cfg).unwrap();
        let b = fit(&hist, &one_attr_spec(), cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = fit(&hist, &one_attr_spec(), FitConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noisy_fit_slope_mean_matches_generator() {
        // y = 3x + 5 + N(0,1), 200 rows, x spread over [0, 20]
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let hist: Vec<RankeeRecord> = (0..200)
            .map(|i| {
                let x = rng.random_range(0.0..20.0);
                record(&format!("r{i}"), 2020, x, 3.0 * x + 5.0 + noise.sample(&mut rng))
            })
            .collect();
        let model = fit(&hist, &one_attr_spec(), FitConfig::default()).unwrap();
        let mean_slope = model.indicators[0].mean_coefficient("x");
        assert!((mean_slope - 3.0).abs() < 0.1, "{mean_slope}");
    }

    #[test]
    fn constant_column_still_fits() {
        let hist: Vec<RankeeRecord> = (0..10)
            .map(|i| record(&format!("r{i}"), 2020, 5.0, 40.0 + i as f64))
            .collect();
        for ridge in [0.0, 1e-3] {
            let model = fit(
                &hist,
                &one_attr_spec(),
                FitConfig {
                    members: 10,
                    ridge,
                    seed: 1,
                },
            )
            .unwrap();
            for m in &model.indicators[0].members {
                assert!(m.coefficients[0].abs() < 1e-9, "{m:?}");
                assert!(m.intercept.is_finite());
            }
        }
    }

    #[test]
    fn fit_rejects_insufficient_rows_and_bad_config() {
        let err = fit(&linear_history(1), &one_attr_spec(), FitConfig::default()).unwrap_err();
        match err {
            Error::Training { indicator, .. } => assert_eq!(indicator, "y"),
            other => panic!("{other}"),
        }
        let cfg = FitConfig {
            members: 1,
            ..FitConfig::default()
        };
        assert!(fit(&linear_history(5), &one_attr_spec(), cfg).is_err());
        let cfg = FitConfig {
            ridge: -1.0,
            ..FitConfig::default()
        };
        assert!(fit(&linear_history(5), &one_attr_spec(), cfg).is_err());
    }

    #[test]
    fn predict_indicator_examples() {
        let model = hand_model(vec![(2.0, 10.0); 5]);
        let p = model.predict_indicator("y", &at(20.0)).unwrap();
        assert_eq!(p.members(), &[50.0; 5]);
        assert_eq!((p.min(), p.mean(), p.max()), (50.0, 50.0, 50.0));
        assert_eq!(p.uncertainty(), 0.0);

        // 2 * 63.75 + 10 = 137.5 -> clamped to 100
        let p = model.predict_indicator("y", &at(63.75)).unwrap();
        assert_eq!(p.members()[0], 100.0);

        let err = model.predict_indicator("y", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert!(model.predict_indicator("nope", &at(1.0)).is_err());
    }

    #[test]
    fn predict_final_examples() {
        let spec = RankingSystemSpec::new(
            vec![attr("x", 0.0, 1.0)],
            vec![ind("p", 0.5, &["x"]), ind("q", 0.5, &["x"])],
            ScoreBounds::default(),
        )
        .unwrap();
        let preds: BTreeMap<String, EnsemblePrediction> = [
            ("p".to_string(), EnsemblePrediction::new("p", vec![60.0, 70.0]).unwrap()),
            ("q".to_string(), EnsemblePrediction::new("q", vec![40.0, 30.0]).unwrap()),
        ]
        .into();
        let f = predict_final(&preds, &spec).unwrap();
        assert_eq!(f.members(), &[50.0, 50.0]);
        assert_eq!(f.subject_id(), FINAL_SUBJECT);

        let mut bad = preds.clone();
        bad.insert("q".into(), EnsemblePrediction::new("q", vec![1.0; 3]).unwrap());
        assert!(matches!(predict_final(&bad, &spec).unwrap_err(), Error::Contract(_)));
        bad.remove("q");
        assert!(matches!(predict_final(&bad, &spec).unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn predict_final_matches_elementwise_oracle() {
        let spec = RankingSystemSpec::new(
            vec![attr("x", 0.0, 1.0)],
            vec![
                ind("p", 0.25, &["x"]),
                ind("q", 0.35, &["x"]),
                ind("r", 0.4, &["x"]),
            ],
            ScoreBounds::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut preds = BTreeMap::new();
        for id in ["p", "q", "r"] {
            let members = (0..5).map(|_| rng.random_range(1.0..=100.0)).collect();
            preds.insert(id.to_string(), EnsemblePrediction::new(id, members).unwrap());
        }
        let f = predict_final(&preds, &spec).unwrap();
        for i in 0..5 {
            let oracle = 0.25 * preds["p"].members()[i]
                + 0.35 * preds["q"].members()[i]
                + 0.4 * preds["r"].members()[i];
            assert!((f.members()[i] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_rank_examples() {
        let ours = EnsemblePrediction::new("final", vec![90.0, 91.0, 92.0]).unwrap();
        let low = EnsemblePrediction::new("final", vec![10.0, 20.0, 30.0]).unwrap();
        let d = predict_rank(&ours, [&low, &low]).unwrap();
        assert_eq!(d.0, [(1, 3)].into());

        let d = predict_rank(&ours, [&ours]).unwrap();
        assert_eq!(d.0, [(1, 3)].into());

        let short = EnsemblePrediction::new("final", vec![1.0]).unwrap();
        assert!(matches!(predict_rank(&ours, [&short]).unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn predict_rank_hand_enumerated_draws() {
        // M = 4, three rivals.
        //  draw 0: ours 50 vs 60, 40, 50 -> one above -> rank 2
        //  draw 1: ours 70 vs 60, 40, 50 -> none above -> rank 1
        //  draw 2: ours 30 vs 60, 40, 50 -> three above -> rank 4
        //  draw 3: ours 45 vs 60, 45, 50 -> two above, one tie -> rank 3
        let ours = EnsemblePrediction::new("final", vec![50.0, 70.0, 30.0, 45.0]).unwrap();
        let r1 = EnsemblePrediction::new("final", vec![60.0; 4]).unwrap();
        let r2 = EnsemblePrediction::new("final", vec![40.0, 40.0, 40.0, 45.0]).unwrap();
        let r3 = EnsemblePrediction::new("final", vec![50.0; 4]).unwrap();
        let d = predict_rank(&ours, [&r1, &r2, &r3]).unwrap();
        assert_eq!(d.0, [(1, 1), (2, 1), (3, 1), (4, 1)].into());
        assert_eq!(d.modal(), Some(1));
        // cross-check each draw against the core ranking routine
        for i in 0..4 {
            let draw = [ours.members()[i], r1.members()[i], r2.members()[i], r3.members()[i]];
            let expected = competition_ranks(&draw)[0];
            assert_eq!(d.get(expected), 1);
        }
    }

    #[test]
    fn ensemble_json_carries_derived_stats() {
        let e = EnsemblePrediction::new("y", vec![48.0, 50.0, 52.0]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["mean"], 50.0);
        assert_eq!(v["min"], 48.0);
        assert_eq!(v["max"], 52.0);
        // stale derived fields in input are ignored
        let tampered = r#"{"subject_id":"y","members":[1,2,3],"mean":99,"min":0,"max":0}"#;
        let back: EnsemblePrediction = serde_json::from_str(tampered).unwrap();
        assert_eq!(back.mean(), 2.0);
        assert!(serde_json::from_str::<EnsemblePrediction>(r#"{"subject_id":"y","members":[]}"#)
            .is_err());
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let mut hist = linear_history(20);
        for (i, r) in hist.iter_mut().enumerate() {
            r.indicator_scores.insert("y".into(), 10.0 + (i as f64).sqrt() * 7.3);
        }
        let model = fit(&hist, &one_attr_spec(), FitConfig::default()).unwrap();
        let back = EnsembleModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, back);
    }

    proptest! {
        #[test]
        fn monotone_when_member_slopes_share_sign(
            slopes in proptest::collection::vec(0.01f64..5.0, 2..8),
            sign in prop_oneof![Just(1.0f64), Just(-1.0f64)],
            x in 0.0f64..40.0,
            step in 0.1f64..10.0,
        ) {
            let members = slopes.iter().map(|s| (s * sign, 30.0)).collect();
            let model = hand_model(members);
            let lo = model.raw_mean("y", &at(x)).unwrap();
            let hi = model.raw_mean("y", &at(x + step)).unwrap();
            prop_assert!((hi - lo) * sign > 0.0);
            let lo_members = model.raw_members("y", &at(x)).unwrap();
            let hi_members = model.raw_members("y", &at(x + step)).unwrap();
            for (a, b) in lo_members.iter().zip(&hi_members) {
                prop_assert!((b - a) * sign > 0.0);
            }
        }

        #[test]
        fn not_monotone_when_slopes_disagree(x in 0.0f64..40.0) {
            // slopes +1 and -3: the mean falls while member 0 rises
            let model = hand_model(vec![(1.0, 50.0), (-3.0, 50.0)]);
            let lo = model.raw_members("y", &at(x)).unwrap();
            let hi = model.raw_members("y", &at(x + 1.0)).unwrap();
            prop_assert!(hi[0] > lo[0]);
            prop_assert!(hi[1] < lo[1]);
        }

        #[test]
        fn final_members_ignore_map_insertion_order(
            p in proptest::collection::vec(1.0f64..100.0, 4),
            q in proptest::collection::vec(1.0f64..100.0, 4),
        ) {
            let spec = RankingSystemSpec::new(
                vec![attr("x", 0.0, 1.0)],
                vec![ind("p", 0.3, &["x"]), ind("q", 0.7, &["x"])],
                ScoreBounds::default(),
            ).unwrap();
            let ep = EnsemblePrediction::new("p", p).unwrap();
            let eq = EnsemblePrediction::new("q", q).unwrap();
            let mut forward = BTreeMap::new();
            forward.insert("p".to_string(), ep.clone());
            forward.insert("q".to_string(), eq.clone());
            let mut backward = BTreeMap::new();
            backward.insert("q".to_string(), eq);
            backward.insert("p".to_string(), ep);
            prop_assert_eq!(predict_final(&forward, &spec).unwrap(), predict_final(&backward, &spec).unwrap());
        }
    }
}
