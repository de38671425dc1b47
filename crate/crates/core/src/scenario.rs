//! Scenario generation, filtering, sorting and summaries.
//!
//! A scenario is one candidate submission: a value for every attribute, the
//! ensemble predictions it implies, and the resulting rank distribution.
//! Scenarios are generated as the cartesian product of per-attribute value
//! lists and evaluated against a baseline (last year's record); every delta
//! in this module is measured against that baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{relative_change, RankeeRecord, RankingSystemSpec, RelativeChange, Subject};
use crate::predictor::{
    final_from_ordered, predict_rank, EnsemblePrediction, RankDistribution, ScoreModel,
};

/// Default cap on the number of generated scenarios.
pub const DEFAULT_CAPACITY: usize = 100_000;
/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 20;

/// Candidate values for one attribute, strictly ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RangeRepr")]
pub struct AttributeRange {
    pub attribute_id: String,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
struct RangeRepr {
    attribute_id: String,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    min: Option<f64>,
    #[serde(default)]
    max: Option<f64>,
    #[serde(default)]
    step: Option<f64>,
}

impl TryFrom<RangeRepr> for AttributeRange {
    type Error = Error;

    fn try_from(r: RangeRepr) -> Result<Self> {
        match (r.values, r.min, r.max, r.step) {
            (Some(values), None, None, None) => AttributeRange::new(r.attribute_id, values),
            (None, Some(min), Some(max), Some(step)) => {
                AttributeRange::from_step(r.attribute_id, min, max, step)
            }
            _ => Err(Error::validation(format!(
                "range for `{}` needs either `values` or all of `min`, `max`, `step`",
                r.attribute_id
            ))),
        }
    }
}

impl AttributeRange {
    pub fn new(attribute_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let attribute_id = attribute_id.into();
        if values.is_empty() {
            return Err(Error::validation(format!("range for `{attribute_id}` is empty")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "range for `{attribute_id}` has a non-finite value"
            )));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(format!(
                "range for `{attribute_id}` must be strictly ascending"
            )));
        }
        Ok(Self {
            attribute_id,
            values,
        })
    }

    /// `min, min + step, ...` up to and including `max` (within rounding).
    pub fn from_step(attribute_id: impl Into<String>, min: f64, max: f64, step: f64) -> Result<Self> {
        let attribute_id = attribute_id.into();
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::validation(format!(
                "range for `{attribute_id}`: step must be positive, got {step}"
            )));
        }
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::validation(format!(
                "range for `{attribute_id}`: need min <= max, got [{min}, {max}]"
            )));
        }
        let count = ((max - min) / step + 1e-9).floor() as usize + 1;
        let values = (0..count).map(|k| min + k as f64 * step).collect();
        Self::new(attribute_id, values)
    }

    pub fn singleton(attribute_id: impl Into<String>, value: f64) -> Result<Self> {
        Self::new(attribute_id, vec![value])
    }
}

/// Text form: `id=v1,v2,v3` or `id=min:max:step`.
impl FromStr for AttributeRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (id, rest) = s
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("range `{s}` must look like `id=...`")))?;
        let id = id.trim();
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::validation(format!("range `{s}`: `{t}` is not a number")))
        };
        if rest.contains(':') {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::validation(format!(
                    "range `{s}` must be `id=min:max:step`"
                )));
            }
            Self::from_step(id, num(parts[0])?, num(parts[1])?, num(parts[2])?)
        } else {
            let values = rest.split(',').map(num).collect::<Result<Vec<_>>>()?;
            Self::new(id, values)
        }
    }
}

/// One evaluated candidate submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: u64,
    pub attribute_values: BTreeMap<String, f64>,
    pub attribute_deltas: BTreeMap<String, RelativeChange>,
    pub indicator_predictions: BTreeMap<String, EnsemblePrediction>,
    pub final_prediction: EnsemblePrediction,
    pub rank_distribution: RankDistribution,
}

impl Scenario {
    /// The ensemble for a score subject.
    pub fn ensemble(&self, subject: &Subject) -> Result<&EnsemblePrediction> {
        match subject {
            Subject::Indicator(id) => self
                .indicator_predictions
                .get(id)
                .ok_or_else(|| Error::validation(format!("scenario has no indicator `{id}`"))),
            Subject::Final => Ok(&self.final_prediction),
            Subject::Attribute(id) => Err(Error::validation(format!(
                "attribute `{id}` has no ensemble"
            ))),
        }
    }

    /// Attribute value, or ensemble mean for a score subject.
    pub fn key_value(&self, subject: &Subject) -> Result<f64> {
        match subject {
            Subject::Attribute(id) => self
                .attribute_values
                .get(id)
                .copied()
                .ok_or_else(|| Error::validation(format!("scenario has no attribute `{id}`"))),
            _ => Ok(self.ensemble(subject)?.mean()),
        }
    }
}

/// Lower and upper ensemble member deltas relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min_delta: f64,
    pub max_delta: f64,
}

impl Band {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.min_delta && value <= self.max_delta
    }
}

fn baseline_value(baseline: &RankeeRecord, subject: &Subject) -> Result<f64> {
    baseline
        .subject_value(subject)
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NoBaseline {
            subject: subject.to_string(),
        })
}

/// Scenario value minus baseline: the attribute value for attributes, the ensemble mean for scores.
pub fn mean_delta(scenario: &Scenario, subject: &Subject, baseline: &RankeeRecord) -> Result<f64> {
    Ok(scenario.key_value(subject)? - baseline_value(baseline, subject)?)
}

/// `(ensemble min - baseline, ensemble max - baseline)` for an indicator or the final score.
pub fn uncertainty_band(
    scenario: &Scenario,
    subject: &Subject,
    baseline: &RankeeRecord,
) -> Result<Band> {
    if !subject.is_score() {
        return Err(Error::validation(format!(
            "uncertainty band needs an indicator or final subject, got {subject}"
        )));
    }
    let e = scenario.ensemble(subject)?;
    let base = baseline_value(baseline, subject)?;
    Ok(Band {
        min_delta: e.min() - base,
        max_delta: e.max() - base,
    })
}

/// A baseline plus the scenarios evaluated against it, in a fixed order.
///
/// Scenarios are shared behind `Arc` so filtered and sorted views are cheap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub baseline: RankeeRecord,
    pub scenarios: Vec<Arc<Scenario>>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.scenarios.iter().map(|s| s.scenario_id).collect()
    }

    pub fn get(&self, scenario_id: u64) -> Option<&Arc<Scenario>> {
        self.scenarios.iter().find(|s| s.scenario_id == scenario_id)
    }

    fn with(&self, scenarios: Vec<Arc<Scenario>>) -> Self {
        Self {
            baseline: self.baseline.clone(),
            scenarios,
        }
    }
}

/// Enumerates the cartesian product of `ranges` and evaluates every combination.
///
/// Attributes without a range stay at their baseline value. The last declared
/// attribute varies fastest. `rival_finals` are the rivals' final-score
/// ensembles used for the rank distribution; they must share our ensemble size.
pub fn generate_scenarios(
    ranges: &[AttributeRange],
    baseline: &RankeeRecord,
    model: &dyn ScoreModel,
    spec: &RankingSystemSpec,
    rival_finals: &[EnsemblePrediction],
    cap: usize,
) -> Result<ScenarioSet> {
    if cap == 0 {
        return Err(Error::validation("scenario capacity must be at least 1"));
    }
    let axes = resolve_axes(ranges, baseline, spec)?;
    let count = axes
        .iter()
        .try_fold(1u128, |acc, v| acc.checked_mul(v.len() as u128))
        .unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::Capacity { count, cap });
    }
    let m = model.member_count();
    if let Some(odd) = rival_finals.iter().find(|r| r.len() != m) {
        return Err(Error::Contract(format!(
            "rival final ensemble has {} members, model has {m}",
            odd.len()
        )));
    }

    let scenarios = (0..count as usize)
        .into_par_iter()
        .map(|k| {
            let values = decode(k, &axes);
            evaluate(k as u64, values, baseline, model, spec, rival_finals).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScenarioSet {
        baseline: baseline.clone(),
        scenarios,
    })
}

/// Per-attribute value lists in spec order, validated against domains.
fn resolve_axes(
    ranges: &[AttributeRange],
    baseline: &RankeeRecord,
    spec: &RankingSystemSpec,
) -> Result<Vec<Vec<f64>>> {
    let mut by_id: BTreeMap<&str, &AttributeRange> = BTreeMap::new();
    for r in ranges {
        spec.require_attribute(&r.attribute_id)?;
        if by_id.insert(r.attribute_id.as_str(), r).is_some() {
            return Err(Error::validation(format!(
                "attribute `{}` has more than one range",
                r.attribute_id
            )));
        }
    }
    spec.attributes
        .iter()
        .map(|attr| {
            let values = match by_id.get(attr.id.as_str()) {
                Some(r) => r.values.clone(),
                None => vec![baseline_value(baseline, &Subject::Attribute(attr.id.clone()))?],
            };
            if let Some(v) = values.iter().find(|v| !attr.in_domain(**v)) {
                return Err(Error::validation(format!(
                    "attribute `{}`: value {v} outside domain [{}, {}]",
                    attr.id,
                    attr.domain_min(),
                    attr.domain_max()
                )));
            }
            Ok(values)
        })
        .collect()
}

/// Mixed-radix decode of the k-th combination; the last axis varies fastest.
fn decode(mut k: usize, axes: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; axes.len()];
    for (slot, axis) in out.iter_mut().zip(axes).rev() {
        *slot = axis[k % axis.len()];
        k /= axis.len();
    }
    out
}

fn evaluate(
    scenario_id: u64,
    values: Vec<f64>,
    baseline: &RankeeRecord,
    model: &dyn ScoreModel,
    spec: &RankingSystemSpec,
    rival_finals: &[EnsemblePrediction],
) -> Result<Scenario> {
    let attribute_values: BTreeMap<String, f64> = spec
        .attributes
        .iter()
        .map(|a| a.id.clone())
        .zip(values)
        .collect();
    let attribute_deltas = attribute_values
        .iter()
        .map(|(id, v)| {
            let subject = Subject::Attribute(id.clone());
            let change = relative_change(*v, baseline.attribute_values.get(id).copied(), &subject)?;
            Ok((id.clone(), change))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let ordered = spec
        .indicators
        .iter()
        .map(|ind| model.predict_indicator(&ind.id, &attribute_values))
        .collect::<Result<Vec<_>>>()?;
    let final_prediction = final_from_ordered(&ordered.iter().collect::<Vec<_>>(), spec)?;
    let rank_distribution = predict_rank(&final_prediction, rival_finals)?;
    let indicator_predictions = spec
        .indicators
        .iter()
        .map(|ind| ind.id.clone())
        .zip(ordered)
        .collect();

    Ok(Scenario {
        scenario_id,
        attribute_values,
        attribute_deltas,
        indicator_predictions,
        final_prediction,
        rank_distribution,
    })
}

/// Which number of a scenario a predicate looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Ensemble mean minus baseline (attribute value minus baseline for attributes).
    MeanDelta,
    /// Every member minus baseline must satisfy the comparison.
    MemberDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Comparison {
    Gt { bound: f64 },
    Ge { bound: f64 },
    Lt { bound: f64 },
    Le { bound: f64 },
    /// Inclusive on both ends.
    Between { lo: f64, hi: f64 },
}

impl Comparison {
    pub fn holds(&self, x: f64) -> bool {
        match *self {
            Comparison::Gt { bound } => x > bound,
            Comparison::Ge { bound } => x >= bound,
            Comparison::Lt { bound } => x < bound,
            Comparison::Le { bound } => x <= bound,
            Comparison::Between { lo, hi } => x >= lo && x <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub subject: Subject,
    pub measure: Measure,
    #[serde(flatten)]
    pub comparison: Comparison,
}

impl Predicate {
    pub fn new(subject: Subject, measure: Measure, comparison: Comparison) -> Self {
        Self {
            subject,
            measure,
            comparison,
        }
    }

    fn validate(&self, spec: &RankingSystemSpec) -> Result<()> {
        spec.check_subject(&self.subject)?;
        let bad = match self.comparison {
            Comparison::Between { lo, hi } => lo.is_nan() || hi.is_nan() || lo > hi,
            Comparison::Gt { bound }
            | Comparison::Ge { bound }
            | Comparison::Lt { bound }
            | Comparison::Le { bound } => bound.is_nan(),
        };
        if bad {
            return Err(Error::validation(format!("predicate `{self}` has invalid bounds")));
        }
        Ok(())
    }

    fn matches(&self, scenario: &Scenario, baseline: &RankeeRecord) -> Result<bool> {
        match (&self.subject, self.measure) {
            (Subject::Attribute(_), _) | (_, Measure::MeanDelta) => Ok(self
                .comparison
                .holds(mean_delta(scenario, &self.subject, baseline)?)),
            (_, Measure::MemberDelta) => {
                let base = baseline_value(baseline, &self.subject)?;
                Ok(scenario
                    .ensemble(&self.subject)?
                    .members()
                    .iter()
                    .all(|m| self.comparison.holds(m - base)))
            }
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let measure = match (&self.subject, self.measure) {
            (Subject::Attribute(_), _) => "delta",
            (_, Measure::MeanDelta) => "mean",
            (_, Measure::MemberDelta) => "member",
        };
        write!(f, "{} {measure}", self.subject)?;
        match self.comparison {
            Comparison::Gt { bound } => write!(f, ">{bound}"),
            Comparison::Ge { bound } => write!(f, ">={bound}"),
            Comparison::Lt { bound } => write!(f, "<{bound}"),
            Comparison::Le { bound } => write!(f, "<={bound}"),
            Comparison::Between { lo, hi } => write!(f, " in [{lo},{hi}]"),
        }
    }
}

/// Grammar: `<subject> [mean|member|delta] <op>`, where `<subject>` is
/// `attr:<id>`, `ind:<id>` or `final` and `<op>` is one of `>x`, `>=x`,
/// `<x`, `<=x` or `in [lo,hi]`. The measure defaults to `mean`.
impl FromStr for Predicate {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::validation(format!("filter `{}`: {why}", text.trim()));
        let s = text.trim();
        let subject_end = s
            .find(|c: char| c.is_whitespace() || matches!(c, '<' | '>'))
            .ok_or_else(|| bad("missing comparison"))?;
        let subject: Subject = s[..subject_end].parse()?;
        let mut rest = s[subject_end..].trim_start();

        let mut measure = Measure::MeanDelta;
        for (word, m) in [
            ("member", Measure::MemberDelta),
            ("mean", Measure::MeanDelta),
            ("delta", Measure::MeanDelta),
        ] {
            if let Some(after) = rest.strip_prefix(word) {
                measure = m;
                rest = after.trim_start();
                break;
            }
        }
        if matches!(subject, Subject::Attribute(_)) {
            measure = Measure::MeanDelta;
        }

        let number = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("`{}` is not a number", t.trim())))
        };
        let comparison = if let Some(r) = rest.strip_prefix(">=") {
            Comparison::Ge { bound: number(r)? }
        } else if let Some(r) = rest.strip_prefix("<=") {
            Comparison::Le { bound: number(r)? }
        } else if let Some(r) = rest.strip_prefix('>') {
            Comparison::Gt { bound: number(r)? }
        } else if let Some(r) = rest.strip_prefix('<') {
            Comparison::Lt { bound: number(r)? }
        } else if let Some(r) = rest.strip_prefix("in") {
            let inner = r
                .trim()
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| bad("`in` expects `[lo,hi]`"))?;
            let (lo, hi) = inner.split_once(',').ok_or_else(|| bad("`in` expects `[lo,hi]`"))?;
            Comparison::Between {
                lo: number(lo)?,
                hi: number(hi)?,
            }
        } else {
            return Err(bad("expected one of >, >=, <, <=, in"));
        };
        Ok(Predicate::new(subject, measure, comparison))
    }
}

/// Conjunction of predicates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioFilter {
    pub predicates: Vec<Predicate>,
}

impl ScenarioFilter {
    pub fn new(predicates: Vec<Predicate>) -> Self {
        Self { predicates }
    }

    pub fn validate(&self, spec: &RankingSystemSpec) -> Result<()> {
        self.predicates.iter().try_for_each(|p| p.validate(spec))
    }

    pub fn matches(&self, scenario: &Scenario, baseline: &RankeeRecord) -> Result<bool> {
        for p in &self.predicates {
            if !p.matches(scenario, baseline)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Predicates joined by `;`.
impl fmt::Display for ScenarioFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.predicates.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl FromStr for ScenarioFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let predicates = s
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { predicates })
    }
}

/// The scenarios satisfying every predicate, in their original order.
pub fn filter_scenarios(
    set: &ScenarioSet,
    filter: &ScenarioFilter,
    spec: &RankingSystemSpec,
) -> Result<ScenarioSet> {
    filter.validate(spec)?;
    let mut kept = Vec::new();
    for s in &set.scenarios {
        if filter.matches(s, &set.baseline)? {
            kept.push(Arc::clone(s));
        }
    }
    Ok(set.with(kept))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Asc,
    Desc,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asc" | "ascending" => Ok(Direction::Asc),
            "desc" | "descending" => Ok(Direction::Desc),
            other => Err(Error::validation(format!(
                "sort direction must be `asc` or `desc`, got `{other}`"
            ))),
        }
    }
}

/// Stable sort by attribute value or ensemble mean; ties keep their current order.
pub fn sort_scenarios(
    set: &ScenarioSet,
    key: &Subject,
    direction: Direction,
    spec: &RankingSystemSpec,
) -> Result<ScenarioSet> {
    spec.check_subject(key)?;
    let mut keyed = set
        .scenarios
        .iter()
        .map(|s| Ok((s.key_value(key)?, Arc::clone(s))))
        .collect::<Result<Vec<_>>>()?;
    match direction {
        Direction::Asc => keyed.sort_by(|a, b| a.0.total_cmp(&b.0)),
        Direction::Desc => keyed.sort_by(|a, b| b.0.total_cmp(&a.0)),
    }
    Ok(set.with(keyed.into_iter().map(|(_, s)| s).collect()))
}

/// Frequency of scenario deltas over equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub subject: Subject,
    pub scenario_count: usize,
    /// `bins + 1` ascending edges; a single `[d, d]` pair when every delta equals `d`.
    pub bin_edges: Vec<f64>,
    pub frequencies: Vec<usize>,
    /// Lowest and highest member delta over all summarized scenarios (scores only).
    pub band: Option<Band>,
}

/// Histogram of per-scenario deltas for one subject.
///
/// Bins are equal-width over `[min delta, max delta]`, right-open except the
/// last, which is closed.
pub fn summarize(
    set: &ScenarioSet,
    subject: &Subject,
    bins: usize,
    spec: &RankingSystemSpec,
) -> Result<HistogramSummary> {
    spec.check_subject(subject)?;
    if set.is_empty() {
        return Err(Error::validation("cannot summarize an empty scenario set"));
    }
    if bins == 0 {
        return Err(Error::validation("bin count must be at least 1"));
    }
    let deltas = collect_deltas(set, subject)?;
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edges = if lo == hi {
        vec![lo, hi]
    } else {
        let width = (hi - lo) / bins as f64;
        let mut e: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
        e.push(hi);
        e
    };
    histogram_with_edges(set, subject, &edges)
}

/// Histogram over caller-fixed edges. Deltas outside `[first, last]` are not counted.
pub fn histogram_with_edges(
    set: &ScenarioSet,
    subject: &Subject,
    edges: &[f64],
) -> Result<HistogramSummary> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::validation("bin edges must be at least two ascending values"));
    }
    let degenerate = edges.len() == 2 && edges[0] == edges[1];
    if !degenerate && edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("bin edges must be strictly ascending"));
    }
    let deltas = collect_deltas(set, subject)?;
    let bins = edges.len() - 1;
    let mut frequencies = vec![0usize; bins];
    let (first, last) = (edges[0], edges[bins]);
    for d in deltas {
        if d < first || d > last {
            continue;
        }
        // number of interior edges <= d
        let idx = edges[1..bins].partition_point(|e| *e <= d);
        frequencies[idx.min(bins - 1)] += 1;
    }

    let band = if subject.is_score() && !set.is_empty() {
        let mut band = Band {
            min_delta: f64::INFINITY,
            max_delta: f64::NEG_INFINITY,
        };
        for s in &set.scenarios {
            let b = uncertainty_band(s, subject, &set.baseline)?;
            band.min_delta = band.min_delta.min(b.min_delta);
            band.max_delta = band.max_delta.max(b.max_delta);
        }
        Some(band)
    } else {
        None
    };

    Ok(HistogramSummary {
        subject: subject.clone(),
        scenario_count: set.len(),
        bin_edges: edges.to_vec(),
        frequencies,
        band,
    })
}

fn collect_deltas(set: &ScenarioSet, subject: &Subject) -> Result<Vec<f64>> {
    set.scenarios
        .iter()
        .map(|s| mean_delta(s, subject, &set.baseline))
        .collect()
}

/// Flat per-scenario view used by listings and CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: u64,
    pub attributes: Vec<AttributeCell>,
    pub scores: Vec<ScoreCell>,
    pub modal_rank: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCell {
    pub attribute_id: String,
    pub value: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub subject: Subject,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub mean_delta: f64,
    pub band: Band,
}

/// Scores listed in indicator declaration order followed by the final score.
pub fn summarize_scenario(
    scenario: &Scenario,
    baseline: &RankeeRecord,
    spec: &RankingSystemSpec,
) -> Result<ScenarioSummary> {
    let attributes = spec
        .attributes
        .iter()
        .map(|a| {
            let subject = Subject::Attribute(a.id.clone());
            Ok(AttributeCell {
                attribute_id: a.id.clone(),
                value: scenario.key_value(&subject)?,
                delta: mean_delta(scenario, &subject, baseline)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = spec
        .indicators
        .iter()
        .map(|i| Subject::Indicator(i.id.clone()))
        .chain(std::iter::once(Subject::Final))
        .map(|subject| {
            let e = scenario.ensemble(&subject)?;
            Ok(ScoreCell {
                mean: e.mean(),
                min: e.min(),
                max: e.max(),
                mean_delta: mean_delta(scenario, &subject, baseline)?,
                band: uncertainty_band(scenario, &subject, baseline)?,
                subject,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioSummary {
        scenario_id: scenario.scenario_id,
        attributes,
        scores,
        modal_rank: scenario.rank_distribution.modal(),
    })
}

/// Full scenario objects as a JSON array.
pub fn export_json(set: &ScenarioSet) -> String {
    serde_json::to_string(&set.scenarios).expect("scenarios serialize")
}

/// One row per scenario: attribute values, per-indicator mean/min/max,
/// final mean/min/max and modal rank.
pub fn export_csv<W: Write>(set: &ScenarioSet, spec: &RankingSystemSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario_id".to_string()];
    header.extend(spec.attributes.iter().map(|a| format!("attr_{}", a.id)));
    for ind in &spec.indicators {
        for stat in ["mean", "min", "max"] {
            header.push(format!("ind_{}_{stat}", ind.id));
        }
    }
    header.extend(["final_mean", "final_min", "final_max", "modal_rank"].map(String::from));
    w.write_record(&header)?;

    for s in &set.scenarios {
        let mut row = vec![s.scenario_id.to_string()];
        for a in &spec.attributes {
            row.push(s.attribute_values[&a.id].to_string());
        }
        let ensembles = spec
            .indicators
            .iter()
            .map(|i| &s.indicator_predictions[&i.id])
            .chain(std::iter::once(&s.final_prediction));
        for e in ensembles {
            row.extend([e.mean(), e.min(), e.max()].map(|v| v.to_string()));
        }
        row.push(
            s.rank_distribution
                .modal()
                .map(|r| r.to_string())
                .unwrap_or_default(),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
