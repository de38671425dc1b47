//! Attribute-to-indicator influence by perturbation.
//!
//! Influence of attribute `a` on indicator `i` at a scenario is the central
//! difference of the *unclamped* ensemble-mean prediction, expressed as score
//! points per attribute unit. A matrix over a selection of scenarios is
//! normalized by the largest magnitude in that selection, so shades are only
//! comparable within one selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RankingSystemSpec;
use crate::predictor::{EnsembleModel, ScoreModel};
use crate::scenario::Scenario;

/// Default perturbation: 1% of the attribute's observed range.
pub const DEFAULT_STEP_FRACTION: f64 = 0.01;

/// Per-attribute perturbation step δ in attribute units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPolicy {
    pub steps: BTreeMap<String, f64>,
}

impl DeltaPolicy {
    /// `fraction` of each attribute's observed range, falling back to the
    /// declared domain when the attribute was never observed or never varied.
    pub fn from_observed(
        spec: &RankingSystemSpec,
        observed: &BTreeMap<String, [f64; 2]>,
        fraction: f64,
    ) -> Self {
        let steps = spec
            .attributes
            .iter()
            .map(|a| {
                let span = observed
                    .get(&a.id)
                    .map(|[lo, hi]| hi - lo)
                    .filter(|s| *s > 0.0)
                    .unwrap_or_else(|| a.domain_span());
                (a.id.clone(), span * fraction)
            })
            .collect();
        Self { steps }
    }

    pub fn for_model(model: &EnsembleModel, spec: &RankingSystemSpec) -> Self {
        Self::from_observed(spec, &model.attribute_ranges, DEFAULT_STEP_FRACTION)
    }

    pub fn uniform(spec: &RankingSystemSpec, step: f64) -> Self {
        Self {
            steps: spec.attributes.iter().map(|a| (a.id.clone(), step)).collect(),
        }
    }

    pub fn step(&self, attribute_id: &str) -> Result<f64> {
        self.steps
            .get(attribute_id)
            .copied()
            .ok_or_else(|| Error::validation(format!("no perturbation step for `{attribute_id}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceFlag {
    /// One perturbation left the domain; a one-sided difference was used.
    OneSided,
    /// Both perturbations left the domain; the entry carries no influence.
    OutOfDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawInfluence {
    /// Score points per attribute unit.
    pub value: f64,
    pub flag: Option<InfluenceFlag>,
}

/// Finite-difference slope of the ensemble-mean prediction of `indicator_id`
/// with respect to `attribute_id`, evaluated at `attribute_values`.
///
/// Attributes outside the indicator's group give exactly 0.
pub fn attribute_influence(
    model: &dyn ScoreModel,
    spec: &RankingSystemSpec,
    attribute_values: &BTreeMap<String, f64>,
    indicator_id: &str,
    attribute_id: &str,
    step: f64,
) -> Result<RawInfluence> {
    let indicator = spec.require_indicator(indicator_id)?;
    let attr = spec.require_attribute(attribute_id)?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::validation(format!(
            "perturbation step for `{attribute_id}` must be positive, got {step}"
        )));
    }
    if !indicator.group.iter().any(|a| a == attribute_id) {
        return Ok(RawInfluence {
            value: 0.0,
            flag: None,
        });
    }
    let base = *attribute_values
        .get(attribute_id)
        .ok_or_else(|| Error::schema(format!("missing value for attribute `{attribute_id}`")))?;

    let mut point = attribute_values.clone();
    let mut mean_at = |v: f64| -> Result<f64> {
        point.insert(attribute_id.to_string(), v);
        model.raw_mean(indicator_id, &point)
    };
    let (up, down) = (base + step, base - step);
    match (attr.in_domain(up), attr.in_domain(down)) {
        (true, true) => Ok(RawInfluence {
            value: (mean_at(up)? - mean_at(down)?) / (2.0 * step),
            flag: None,
        }),
        (true, false) => Ok(RawInfluence {
            value: (mean_at(up)? - mean_at(base)?) / step,
            flag: Some(InfluenceFlag::OneSided),
        }),
        (false, true) => Ok(RawInfluence {
            value: (mean_at(base)? - mean_at(down)?) / step,
            flag: Some(InfluenceFlag::OneSided),
        }),
        (false, false) => Err(Error::Domain {
            attribute: attribute_id.to_string(),
            value: base,
            step,
            min: attr.domain_min(),
            max: attr.domain_max(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEntry {
    pub raw: f64,
    /// `raw / normalization_factor`, in `[-1, 1]`.
    pub normalized: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flag: Option<InfluenceFlag>,
}

/// Influence entries keyed scenario → indicator → attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    pub selection_id: String,
    pub selection: Vec<u64>,
    /// Largest `|raw|` over the selection; 0 when every entry is 0.
    pub normalization_factor: f64,
    pub entries: BTreeMap<u64, BTreeMap<String, BTreeMap<String, InfluenceEntry>>>,
}

impl InfluenceMatrix {
    pub fn entry(&self, scenario_id: u64, indicator_id: &str, attribute_id: &str) -> Option<&InfluenceEntry> {
        self.entries
            .get(&scenario_id)?
            .get(indicator_id)?
            .get(attribute_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &str, &str, &InfluenceEntry)> {
        self.entries.iter().flat_map(|(sid, inds)| {
            inds.iter().flat_map(move |(ind, attrs)| {
                attrs
                    .iter()
                    .map(move |(attr, e)| (*sid, ind.as_str(), attr.as_str(), e))
            })
        })
    }
}

/// Raw influence for every (scenario, indicator, attribute) triple of the
/// selection, normalized by the selection-wide maximum magnitude.
///
/// Entries whose perturbations both leave the domain are flagged and carry 0;
/// they never abort the matrix.
pub fn build_matrix(
    model: &dyn ScoreModel,
    scenarios: &[&Scenario],
    spec: &RankingSystemSpec,
    policy: &DeltaPolicy,
) -> Result<InfluenceMatrix> {
    if scenarios.is_empty() {
        return Err(Error::validation("influence selection is empty"));
    }
    let mut entries = BTreeMap::new();
    let mut factor = 0.0f64;
    for s in scenarios {
        let mut per_indicator = BTreeMap::new();
        for ind in &spec.indicators {
            let mut per_attr = BTreeMap::new();
            for attr in &spec.attributes {
                let step = policy.step(&attr.id)?;
                let entry = match attribute_influence(
                    model,
                    spec,
                    &s.attribute_values,
                    &ind.id,
                    &attr.id,
                    step,
                ) {
                    Ok(raw) => InfluenceEntry {
                        raw: raw.value,
                        normalized: 0.0,
                        flag: raw.flag,
                    },
                    Err(Error::Domain { .. }) => InfluenceEntry {
                        raw: 0.0,
                        normalized: 0.0,
                        flag: Some(InfluenceFlag::OutOfDomain),
                    },
                    Err(other) => return Err(other),
                };
                factor = factor.max(entry.raw.abs());
                per_attr.insert(attr.id.clone(), entry);
            }
            per_indicator.insert(ind.id.clone(), per_attr);
        }
        entries.insert(s.scenario_id, per_indicator);
    }

    if factor > 0.0 {
        for inds in entries.values_mut() {
            for attrs in inds.values_mut() {
                for e in attrs.values_mut() {
                    e.normalized = e.raw / factor;
                }
            }
        }
    }

    let selection: Vec<u64> = scenarios.iter().map(|s| s.scenario_id).collect();
    Ok(InfluenceMatrix {
        selection_id: selection
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
        selection,
        normalization_factor: factor,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainInfluencer {
    pub attribute_id: String,
    pub normalized: f64,
    /// Every attribute had zero influence; `attribute_id` is the first declared one.
    pub no_influence: bool,
}

/// Attribute with the largest `|normalized|` for one scenario and indicator;
/// ties go to the earlier declared attribute.
pub fn main_influencer(
    matrix: &InfluenceMatrix,
    scenario_id: u64,
    indicator_id: &str,
    spec: &RankingSystemSpec,
) -> Result<MainInfluencer> {
    let row = matrix
        .entries
        .get(&scenario_id)
        .and_then(|inds| inds.get(indicator_id))
        .ok_or_else(|| {
            Error::NotFound(format!(
                "no influence entries for scenario {scenario_id}, indicator `{indicator_id}`"
            ))
        })?;
    let mut best: Option<(&str, f64)> = None;
    for attr in &spec.attributes {
        let Some(e) = row.get(&attr.id) else { continue };
        match best {
            Some((_, v)) if e.normalized.abs() <= v.abs() => {}
            _ => best = Some((&attr.id, e.normalized)),
        }
    }
    let (attribute_id, normalized) =
        best.ok_or_else(|| Error::NotFound(format!("empty influence row for `{indicator_id}`")))?;
    Ok(MainInfluencer {
        attribute_id: attribute_id.to_string(),
        normalized,
        no_influence: normalized == 0.0,
    })
}
