//! Ranking system definition and the deterministic score and rank arithmetic.
//!
//! A ranking system takes raw *attributes* about each rankee, groups them into
//! *indicators* scored on a bounded scale, and combines the indicator scores
//! into a *final score* by a weighted sum. Ranks follow competition ranking:
//! tied scores share the smallest rank of their block ("1224").

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of indicator weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Closed interval of admissible scores, serialized as `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ScoreBounds {
    pub min: f64,
    pub max: f64,
}

impl ScoreBounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

impl Default for ScoreBounds {
    fn default() -> Self {
        Self::new(1.0, 100.0)
    }
}

impl From<[f64; 2]> for ScoreBounds {
    fn from([min, max]: [f64; 2]) -> Self {
        Self { min, max }
    }
}

impl From<ScoreBounds> for [f64; 2] {
    fn from(b: ScoreBounds) -> Self {
        [b.min, b.max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub unit: String,
    /// `[domain_min, domain_max]` in attribute units.
    pub domain: [f64; 2],
}

impl AttributeSpec {
    pub fn domain_min(&self) -> f64 {
        self.domain[0]
    }

    pub fn domain_max(&self) -> f64 {
        self.domain[1]
    }

    pub fn domain_span(&self) -> f64 {
        self.domain[1] - self.domain[0]
    }

    pub fn in_domain(&self, value: f64) -> bool {
        value >= self.domain[0] && value <= self.domain[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub id: String,
    pub name: String,
    pub weight: f64,
    /// Attribute ids feeding this indicator.
    pub group: Vec<String>,
}

/// The full pipeline definition: attributes, indicator groups, weights and score bounds.
///
/// Construct through [`RankingSystemSpec::new`] or [`RankingSystemSpec::from_json`]
/// to get a validated value; the fields are public so tests can build
/// deliberately broken specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSystemSpec {
    pub attributes: Vec<AttributeSpec>,
    pub indicators: Vec<IndicatorSpec>,
    #[serde(default)]
    pub score_bounds: ScoreBounds,
}

impl RankingSystemSpec {
    pub fn new(
        attributes: Vec<AttributeSpec>,
        indicators: Vec<IndicatorSpec>,
        score_bounds: ScoreBounds,
    ) -> Result<Self> {
        let spec = Self {
            attributes,
            indicators,
            score_bounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(input: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(input).map_err(|e| Error::from_json(e, input))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Checks every structural invariant and reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let b = self.score_bounds;
        if !(b.min.is_finite() && b.max.is_finite() && b.min < b.max) {
            return Err(Error::validation(format!(
                "score_bounds must satisfy min < max, got [{}, {}]",
                b.min, b.max
            )));
        }
        if self.attributes.is_empty() {
            return Err(Error::validation("spec declares no attributes"));
        }
        if self.indicators.is_empty() {
            return Err(Error::validation("spec declares no indicators"));
        }

        let mut attr_ids = BTreeSet::new();
        for a in &self.attributes {
            if a.id.is_empty() {
                return Err(Error::validation("attribute id must not be empty"));
            }
            if !attr_ids.insert(a.id.as_str()) {
                return Err(Error::validation(format!("duplicate attribute id `{}`", a.id)));
            }
            let [lo, hi] = a.domain;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::validation(format!(
                    "attribute `{}`: domain must satisfy min < max, got [{lo}, {hi}]",
                    a.id
                )));
            }
        }

        let mut ind_ids = BTreeSet::new();
        let mut covered = BTreeSet::new();
        let mut weight_sum = 0.0;
        for ind in &self.indicators {
            if ind.id.is_empty() {
                return Err(Error::validation("indicator id must not be empty"));
            }
            if !ind_ids.insert(ind.id.as_str()) {
                return Err(Error::validation(format!("duplicate indicator id `{}`", ind.id)));
            }
            if !(0.0..=1.0).contains(&ind.weight) {
                return Err(Error::validation(format!(
                    "indicator `{}`: weight {} outside [0, 1]",
                    ind.id, ind.weight
                )));
            }
            weight_sum += ind.weight;
            if ind.group.is_empty() {
                return Err(Error::validation(format!(
                    "indicator `{}`: attribute group is empty",
                    ind.id
                )));
            }
            let mut seen = BTreeSet::new();
            for attr in &ind.group {
                if !attr_ids.contains(attr.as_str()) {
                    return Err(Error::validation(format!(
                        "indicator `{}`: group references undeclared attribute `{attr}`",
                        ind.id
                    )));
                }
                if !seen.insert(attr.as_str()) {
                    return Err(Error::validation(format!(
                        "indicator `{}`: attribute `{attr}` listed twice",
                        ind.id
                    )));
                }
                covered.insert(attr.as_str());
            }
        }
        if (weight_sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "indicator weights must sum to 1, got {weight_sum}"
            )));
        }
        if let Some(orphan) = self
            .attributes
            .iter()
            .find(|a| !covered.contains(a.id.as_str()))
        {
            return Err(Error::validation(format!(
                "attribute `{}` belongs to no indicator group",
                orphan.id
            )));
        }
        Ok(())
    }

    pub fn attribute(&self, id: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.id == id)
    }

    pub fn indicator(&self, id: &str) -> Option<&IndicatorSpec> {
        self.indicators.iter().find(|i| i.id == id)
    }

    pub fn attribute_index(&self, id: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.id == id)
    }

    pub fn indicator_index(&self, id: &str) -> Option<usize> {
        self.indicators.iter().position(|i| i.id == id)
    }

    pub fn require_attribute(&self, id: &str) -> Result<&AttributeSpec> {
        self.attribute(id)
            .ok_or_else(|| Error::validation(format!("unknown attribute `{id}`")))
    }

    pub fn require_indicator(&self, id: &str) -> Result<&IndicatorSpec> {
        self.indicator(id)
            .ok_or_else(|| Error::validation(format!("unknown indicator `{id}`")))
    }

    /// Checks that a subject refers to something this spec declares.
    pub fn check_subject(&self, subject: &Subject) -> Result<()> {
        match subject {
            Subject::Attribute(id) => self.require_attribute(id).map(|_| ()),
            Subject::Indicator(id) => self.require_indicator(id).map(|_| ()),
            Subject::Final => Ok(()),
        }
    }

    /// Weighted sum over scores listed in indicator declaration order, clamped to bounds.
    pub fn aggregate_ordered(&self, scores: &[f64]) -> f64 {
        debug_assert_eq!(scores.len(), self.indicators.len());
        let sum: f64 = self
            .indicators
            .iter()
            .zip(scores)
            .map(|(ind, s)| ind.weight * s)
            .sum();
        self.score_bounds.clamp(sum)
    }
}

/// What a delta, summary or probability is about.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Subject {
    Attribute(String),
    Indicator(String),
    Final,
}

impl Subject {
    pub fn kind(&self) -> SubjectKind {
        match self {
            Subject::Attribute(_) => SubjectKind::Attribute,
            Subject::Indicator(_) => SubjectKind::IndicatorScore,
            Subject::Final => SubjectKind::FinalScore,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Subject::Attribute(id) | Subject::Indicator(id) => id,
            Subject::Final => "final",
        }
    }

    pub fn is_score(&self) -> bool {
        !matches!(self, Subject::Attribute(_))
    }
}

/// Text form: `attr:<id>`, `ind:<id>` or `final`.
impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Attribute(id) => write!(f, "attr:{id}"),
            Subject::Indicator(id) => write!(f, "ind:{id}"),
            Subject::Final => f.write_str("final"),
        }
    }
}

impl FromStr for Subject {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "final" {
            return Ok(Subject::Final);
        }
        let (kind, id) = s.split_once(':').ok_or_else(|| {
            Error::validation(format!(
                "subject `{s}` must be `attr:<id>`, `ind:<id>` or `final`"
            ))
        })?;
        if id.is_empty() {
            return Err(Error::validation(format!("subject `{s}` has an empty id")));
        }
        match kind {
            "attr" | "attribute" => Ok(Subject::Attribute(id.to_string())),
            "ind" | "indicator" => Ok(Subject::Indicator(id.to_string())),
            _ => Err(Error::validation(format!(
                "subject kind `{kind}` must be `attr` or `ind`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Attribute,
    IndicatorScore,
    FinalScore,
}

/// One rankee-year of history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankeeRecord {
    pub rankee_id: String,
    pub year: i32,
    pub attribute_values: BTreeMap<String, f64>,
    pub indicator_scores: BTreeMap<String, f64>,
    pub final_score: f64,
    pub rank: u32,
}

impl RankeeRecord {
    /// Checks referential integrity against `spec` and that every score is in bounds.
    pub fn validate(&self, spec: &RankingSystemSpec) -> Result<()> {
        let bounds = spec.score_bounds;
        for (id, v) in &self.attribute_values {
            if spec.attribute(id).is_none() {
                return Err(Error::schema(format!(
                    "{}/{}: undeclared attribute `{id}`",
                    self.rankee_id, self.year
                )));
            }
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "{}/{}: attribute `{id}` is not finite",
                    self.rankee_id, self.year
                )));
            }
        }
        for (id, v) in &self.indicator_scores {
            if spec.indicator(id).is_none() {
                return Err(Error::schema(format!(
                    "{}/{}: undeclared indicator `{id}`",
                    self.rankee_id, self.year
                )));
            }
            if !bounds.contains(*v) {
                return Err(Error::validation(format!(
                    "{}/{}: indicator `{id}` score {v} outside [{}, {}]",
                    self.rankee_id, self.year, bounds.min, bounds.max
                )));
            }
        }
        if !bounds.contains(self.final_score) {
            return Err(Error::validation(format!(
                "{}/{}: final score {} outside [{}, {}]",
                self.rankee_id, self.year, self.final_score, bounds.min, bounds.max
            )));
        }
        if self.rank == 0 {
            return Err(Error::validation(format!(
                "{}/{}: rank must be positive",
                self.rankee_id, self.year
            )));
        }
        Ok(())
    }

    pub fn subject_value(&self, subject: &Subject) -> Option<f64> {
        match subject {
            Subject::Attribute(id) => self.attribute_values.get(id).copied(),
            Subject::Indicator(id) => self.indicator_scores.get(id).copied(),
            Subject::Final => Some(self.final_score),
        }
    }
}

/// A signed change of one subject against its previous-year value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub subject_kind: SubjectKind,
    pub subject_id: String,
    /// `current - baseline`.
    pub value: f64,
    pub baseline: f64,
}

impl RelativeChange {
    pub fn is_positive(&self) -> bool {
        self.value > 0.0
    }

    pub fn is_negative(&self) -> bool {
        self.value < 0.0
    }
}

/// Signed difference of `current` against the previous-year value.
///
/// A missing or non-finite baseline is an error rather than an implicit zero.
pub fn relative_change(
    current: f64,
    previous: Option<f64>,
    subject: &Subject,
) -> Result<RelativeChange> {
    let baseline = previous
        .filter(|p| p.is_finite())
        .ok_or_else(|| Error::NoBaseline {
            subject: subject.to_string(),
        })?;
    Ok(RelativeChange {
        subject_kind: subject.kind(),
        subject_id: subject.id().to_string(),
        value: current - baseline,
        baseline,
    })
}

/// Weighted linear aggregation of indicator scores into a final score.
///
/// Requires exactly one in-bounds score per declared indicator.
pub fn aggregate_final_score(
    indicator_scores: &BTreeMap<String, f64>,
    spec: &RankingSystemSpec,
) -> Result<f64> {
    if let Some(unknown) = indicator_scores
        .keys()
        .find(|id| spec.indicator(id).is_none())
    {
        return Err(Error::schema(format!("unknown indicator `{unknown}`")));
    }
    let mut ordered = Vec::with_capacity(spec.indicators.len());
    for ind in &spec.indicators {
        let score = *indicator_scores
            .get(&ind.id)
            .ok_or_else(|| Error::schema(format!("missing score for indicator `{}`", ind.id)))?;
        if !spec.score_bounds.contains(score) {
            return Err(Error::validation(format!(
                "indicator `{}` score {score} outside [{}, {}]",
                ind.id, spec.score_bounds.min, spec.score_bounds.max
            )));
        }
        ordered.push(score);
    }
    Ok(spec.aggregate_ordered(&ordered))
}

/// Competition ranks for a slice of scores: highest score gets 1, ties share
/// the smallest rank of their block.
pub fn competition_ranks(scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| descending(scores[a], scores[b]));
    let mut ranks = vec![0u32; scores.len()];
    let mut block_rank = 1u32;
    for (pos, &idx) in order.iter().enumerate() {
        if pos > 0 && scores[idx] != scores[order[pos - 1]] {
            block_rank = pos as u32 + 1;
        }
        ranks[idx] = block_rank;
    }
    ranks
}

fn descending(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Ranks rankees by final score with competition ranking.
pub fn rank_entities(final_scores: &BTreeMap<String, f64>) -> BTreeMap<String, u32> {
    let scores: Vec<f64> = final_scores.values().copied().collect();
    final_scores
        .keys()
        .cloned()
        .zip(competition_ranks(&scores))
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn attr(id: &str, lo: f64, hi: f64) -> AttributeSpec {
        AttributeSpec {
            id: id.into(),
            name: id.to_uppercase(),
            unit: String::new(),
            domain: [lo, hi],
        }
    }

    pub fn ind(id: &str, weight: f64, group: &[&str]) -> IndicatorSpec {
        IndicatorSpec {
            id: id.into(),
            name: id.to_uppercase(),
            weight,
            group: group.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Three attributes feeding two indicators.
    pub fn small_spec() -> RankingSystemSpec {
        RankingSystemSpec::new(
            vec![attr("a", 0.0, 100.0), attr("b", 0.0, 100.0), attr("c", 0.0, 50.0)],
            vec![ind("x", 0.6, &["a", "b"]), ind("y", 0.4, &["b", "c"])],
            ScoreBounds::default(),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn weights_spec(weights: &[f64]) -> RankingSystemSpec {
        let attrs = vec![attr("a", 0.0, 1.0)];
        let inds = weights
            .iter()
            .enumerate()
            .map(|(i, w)| ind(&format!("i{i}"), *w, &["a"]))
            .collect();
        RankingSystemSpec::new(attrs, inds, ScoreBounds::default()).unwrap()
    }

    fn scores(values: &[f64]) -> BTreeMap<String, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("i{i}"), *v))
            .collect()
    }

    #[test]
    fn aggregate_examples() {
        let s = weights_spec(&[0.5, 0.5]);
        assert_eq!(aggregate_final_score(&scores(&[60.0, 40.0]), &s).unwrap(), 50.0);
        let s = weights_spec(&[1.0]);
        assert_eq!(aggregate_final_score(&scores(&[73.2]), &s).unwrap(), 73.2);
        // 0.4*80 + 0.4*50 + 0.2*10 = 32 + 20 + 2
        let s = weights_spec(&[0.4, 0.4, 0.2]);
        let got = aggregate_final_score(&scores(&[80.0, 50.0, 10.0]), &s).unwrap();
        assert!((got - 54.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn aggregate_rejects_missing_and_unknown_ids() {
        let s = weights_spec(&[0.5, 0.5]);
        let err = aggregate_final_score(&scores(&[60.0]), &s).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
        let mut extra = scores(&[60.0, 40.0]);
        extra.insert("zz".into(), 10.0);
        assert!(matches!(
            aggregate_final_score(&extra, &s).unwrap_err(),
            Error::Schema(_)
        ));
    }

    #[test]
    fn rank_examples() {
        let m = |pairs: &[(&str, f64)]| -> BTreeMap<String, f64> {
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
        };
        let r = rank_entities(&m(&[("A", 90.0), ("B", 80.0), ("C", 70.0)]));
        assert_eq!(r["A"], 1);
        assert_eq!(r["B"], 2);
        assert_eq!(r["C"], 3);
        let r = rank_entities(&m(&[("A", 90.0), ("B", 90.0), ("C", 70.0)]));
        assert_eq!((r["A"], r["B"], r["C"]), (1, 1, 3));
    }

    #[test]
    fn rank_matches_sort_oracle_on_distinct_scores() {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut scores: Vec<f64> = (0..400).map(|i| i as f64 * 0.25 + 1.0).collect();
        scores.shuffle(&mut rng);
        let ranks = competition_ranks(&scores);
        let mut by_desc: Vec<usize> = (0..scores.len()).collect();
        by_desc.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        for (pos, idx) in by_desc.into_iter().enumerate() {
            assert_eq!(ranks[idx] as usize, pos + 1);
        }
    }

    #[test]
    fn relative_change_examples() {
        let s = Subject::Final;
        assert_eq!(relative_change(55.0, Some(50.0), &s).unwrap().value, 5.0);
        assert_eq!(relative_change(50.0, Some(50.0), &s).unwrap().value, 0.0);
        let c = relative_change(47.3, Some(51.1), &s).unwrap();
        assert!((c.value + 3.8).abs() < 1e-12);
        assert_eq!(c.value, 47.3 - 51.1);
        assert!(c.is_negative());
        assert!(matches!(
            relative_change(1.0, None, &s).unwrap_err(),
            Error::NoBaseline { .. }
        ));
    }

    #[test]
    fn spec_validation_catches_each_constraint() {
        let good = small_spec();
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.indicators[0].weight = 0.5;
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("sum to 1"), "{msg}");

        let mut bad = good.clone();
        bad.indicators[1].group.push("nope".into());
        assert!(bad.validate().unwrap_err().to_string().contains("undeclared"));

        let mut bad = good.clone();
        bad.attributes.push(attr("d", 0.0, 1.0));
        assert!(bad.validate().unwrap_err().to_string().contains("no indicator group"));

        let mut bad = good.clone();
        bad.score_bounds = ScoreBounds::new(100.0, 1.0);
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.attributes[0].domain = [5.0, 5.0];
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.indicators[0].group.clear();
        assert!(bad.validate().unwrap_err().to_string().contains("empty"));
    }

    #[test]
    fn spec_json_schema() {
        let json = r#"{
            "attributes": [{"id": "a", "name": "A", "unit": "n", "domain": [0, 10]}],
            "indicators": [{"id": "i", "name": "I", "weight": 1.0, "group": ["a"]}],
            "score_bounds": [1, 100]
        }"#;
        let spec = RankingSystemSpec::from_json(json).unwrap();
        assert_eq!(spec.score_bounds, ScoreBounds::new(1.0, 100.0));
        let again = RankingSystemSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn subject_text_form() {
        for s in ["attr:a", "ind:SFRI", "final"] {
            assert_eq!(s.parse::<Subject>().unwrap().to_string(), s);
        }
        assert!("bogus".parse::<Subject>().is_err());
        assert!("ind:".parse::<Subject>().is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_monotone_and_bounded(
            base in proptest::collection::vec(1.0f64..=100.0, 3),
            which in 0usize..3,
            bump in 0.0f64..50.0,
        ) {
            let s = weights_spec(&[0.4, 0.4, 0.2]);
            let before = aggregate_final_score(&scores(&base), &s).unwrap();
            let mut raised = base.clone();
            raised[which] = (raised[which] + bump).min(100.0);
            let after = aggregate_final_score(&scores(&raised), &s).unwrap();
            prop_assert!(after >= before);
            prop_assert!((1.0..=100.0).contains(&before));
        }

        #[test]
        fn ranks_invariant_under_increasing_transform(
            raw in proptest::collection::vec(0u8..40, 1..60),
        ) {
            let scores: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
            let transformed: Vec<f64> = scores.iter().map(|v| (v * 0.3).exp() + 7.0).collect();
            let ranks = competition_ranks(&scores);
            prop_assert_eq!(&ranks, &competition_ranks(&transformed));
            prop_assert!(ranks.contains(&1));
            prop_assert!(ranks.iter().all(|&r| r as usize <= scores.len()));
        }
    }
}
