//! Synthetic ranking histories.
//!
//! Real attribute submissions are confidential, so tests and demos run on
//! generated tables. Each rankee draws starting attributes uniformly over the
//! domain and drifts a little every year. Indicator scores follow a linear
//! form plus Gaussian noise, clamped to the score bounds; the final score and
//! yearly ranks come from the ranking system itself.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryTable;
use crate::model::{
    aggregate_final_score, competition_ranks, AttributeSpec, IndicatorSpec, RankeeRecord,
    RankingSystemSpec, ScoreBounds,
};

/// `score = intercept + Σ coefficient · attribute + N(0, noise_sd²)`, clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorGenerator {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub noise_sd: f64,
}

impl IndicatorGenerator {
    pub fn linear_form(&self, attributes: &BTreeMap<String, f64>) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .map(|(id, c)| c * attributes.get(id).copied().unwrap_or(0.0))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_rankees: usize,
    pub n_years: usize,
    pub start_year: i32,
    pub spec: RankingSystemSpec,
    pub generators: BTreeMap<String, IndicatorGenerator>,
    /// Year-over-year attribute drift, as a fraction of the domain span.
    pub drift: f64,
    pub seed: u64,
}

pub const DEFAULT_NOISE_SD: f64 = 2.0;
pub const DEFAULT_DRIFT: f64 = 0.03;
pub const DEFAULT_START_YEAR: i32 = 2019;

impl SyntheticConfig {
    /// A config whose generators map each indicator's attribute group onto
    /// roughly the middle 90% of the score range.
    pub fn new(spec: RankingSystemSpec, n_rankees: usize, n_years: usize, seed: u64) -> Self {
        let generators = spec
            .indicators
            .iter()
            .map(|ind| (ind.id.clone(), default_generator(&spec, ind)))
            .collect();
        Self {
            n_rankees,
            n_years,
            start_year: DEFAULT_START_YEAR,
            spec,
            generators,
            drift: DEFAULT_DRIFT,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        for g in self.generators.values_mut() {
            g.noise_sd = noise_sd;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_rankees == 0 || self.n_years == 0 {
            return Err(Error::validation("need at least one rankee and one year"));
        }
        if !(self.drift.is_finite() && self.drift >= 0.0) {
            return Err(Error::validation("drift must be finite and non-negative"));
        }
        for ind in &self.spec.indicators {
            if !self.generators.contains_key(&ind.id) {
                return Err(Error::schema(format!("no generator for indicator `{}`", ind.id)));
            }
        }
        for (id, g) in &self.generators {
            if self.spec.indicator(id).is_none() {
                return Err(Error::schema(format!("generator for undeclared indicator `{id}`")));
            }
            if !(g.noise_sd.is_finite() && g.noise_sd >= 0.0) {
                return Err(Error::validation(format!("indicator `{id}`: noise must be finite and non-negative")));
            }
            if !g.intercept.is_finite() {
                return Err(Error::validation(format!("indicator `{id}`: intercept is not finite")));
            }
            for (attr, c) in &g.coefficients {
                self.spec.require_attribute(attr)?;
                if !c.is_finite() {
                    return Err(Error::validation(format!("indicator `{id}`: coefficient for `{attr}` is not finite")));
                }
            }
        }
        Ok(())
    }
}

fn default_generator(spec: &RankingSystemSpec, ind: &IndicatorSpec) -> IndicatorGenerator {
    let bounds = spec.score_bounds;
    let share = 0.9 * bounds.span() / ind.group.len().max(1) as f64;
    let mut intercept = bounds.min + 0.05 * bounds.span();
    let mut coefficients = BTreeMap::new();
    for id in &ind.group {
        if let Some(a) = spec.attribute(id) {
            let span = a.domain_span();
            let c = if span > 0.0 { share / span } else { 0.0 };
            intercept -= c * a.domain_min();
            coefficients.insert(id.clone(), c);
        }
    }
    IndicatorGenerator {
        intercept,
        coefficients,
        noise_sd: DEFAULT_NOISE_SD,
    }
}

/// Generates a validated table. Rows are ordered by rankee, then year.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<HistoryTable> {
    config.validate()?;
    let spec = &config.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_rankees.to_string().len().max(3);

    // attributes[rankee][year]
    let trajectories: Vec<Vec<BTreeMap<String, f64>>> = (0..config.n_rankees)
        .map(|_| {
            let mut current: BTreeMap<String, f64> = spec
                .attributes
                .iter()
                .map(|a| (a.id.clone(), uniform(&mut rng, a)))
                .collect();
            let mut years = Vec::with_capacity(config.n_years);
            for y in 0..config.n_years {
                if y > 0 {
                    for a in &spec.attributes {
                        let step = Normal::new(0.0, config.drift * a.domain_span())
                            .map_err(|e| Error::validation(e.to_string()))?
                            .sample(&mut rng);
                        let v = current[&a.id] + step;
                        current.insert(a.id.clone(), v.clamp(a.domain_min(), a.domain_max()));
                    }
                }
                years.push(current.clone());
            }
            Ok(years)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<RankeeRecord> = Vec::with_capacity(config.n_rankees * config.n_years);
    for (r, years) in trajectories.iter().enumerate() {
        for (y, attrs) in years.iter().enumerate() {
            let mut indicator_scores = BTreeMap::new();
            for ind in &spec.indicators {
                let g = &config.generators[&ind.id];
                let mut score = g.linear_form(attrs);
                if g.noise_sd > 0.0 {
                    score += Normal::new(0.0, g.noise_sd)
                        .map_err(|e| Error::validation(e.to_string()))?
                        .sample(&mut rng);
                }
                indicator_scores.insert(ind.id.clone(), spec.score_bounds.clamp(score));
            }
            let final_score = aggregate_final_score(&indicator_scores, spec)?;
            rows.push(RankeeRecord {
                rankee_id: format!("R{:0width$}", r + 1),
                year: config.start_year + y as i32,
                attribute_values: attrs.clone(),
                indicator_scores,
                final_score,
                rank: 0,
            });
        }
    }

    for y in 0..config.n_years {
        let idx: Vec<usize> = (0..rows.len()).filter(|i| i % config.n_years == y).collect();
        let scores: Vec<f64> = idx.iter().map(|i| rows[*i].final_score).collect();
        for (i, rank) in idx.into_iter().zip(competition_ranks(&scores)) {
            rows[i].rank = rank;
        }
    }

    HistoryTable::from_rows(rows, spec, format!("synthetic(seed={})", config.seed))
}

fn uniform(rng: &mut ChaCha8Rng, a: &AttributeSpec) -> f64 {
    if a.domain_span() > 0.0 {
        rng.random_range(a.domain_min()..=a.domain_max())
    } else {
        a.domain_min()
    }
}

/// A six-indicator university ranking used by the demos and benchmarks.
pub fn demo_spec() -> RankingSystemSpec {
    let attr = |id: &str, name: &str, unit: &str, lo: f64, hi: f64| AttributeSpec {
        id: id.into(),
        name: name.into(),
        unit: unit.into(),
        domain: [lo, hi],
    };
    let ind = |id: &str, name: &str, weight: f64, group: &[&str]| IndicatorSpec {
        id: id.into(),
        name: name.into(),
        weight,
        group: group.iter().map(|s| s.to_string()).collect(),
    };
    RankingSystemSpec {
        attributes: vec![
            attr("acad_votes", "Academic survey nominations", "responses", 0.0, 20_000.0),
            attr("emp_votes", "Employer survey nominations", "responses", 0.0, 10_000.0),
            attr("faculty", "Academic staff", "FTE", 100.0, 6_000.0),
            attr("students", "Enrolled students", "FTE", 1_000.0, 60_000.0),
            attr("citations", "Citations over five years", "count", 0.0, 500_000.0),
            attr("intl_faculty", "International staff share", "%", 0.0, 100.0),
            attr("intl_students", "International student share", "%", 0.0, 100.0),
        ],
        indicators: vec![
            ind("AR", "Academic Reputation", 0.35, &["acad_votes"]),
            ind("ER", "Employer Reputation", 0.15, &["emp_votes"]),
            ind("SFRI", "Faculty Student Ratio", 0.20, &["faculty", "students"]),
            ind("CPF", "Citations per Faculty", 0.20, &["citations", "faculty"]),
            ind("IFRI", "International Faculty Ratio", 0.05, &["intl_faculty"]),
            ind("ISRI", "International Student Ratio", 0.05, &["intl_students"]),
        ],
        score_bounds: ScoreBounds::default(),
    }
}

/// Demo generators: like the defaults, but more students lower the
/// staff-ratio score.
pub fn demo_config(n_rankees: usize, n_years: usize, seed: u64) -> SyntheticConfig {
    let mut config = SyntheticConfig::new(demo_spec(), n_rankees, n_years, seed);
    if let Some(g) = config.generators.get_mut("SFRI") {
        let students = config.spec.attribute("students").map(|a| (a.domain_min(), a.domain_max()));
        if let (Some(c), Some((lo, hi))) = (g.coefficients.get_mut("students"), students) {
            // flip the slope around the domain so the score range is unchanged
            g.intercept += *c * (lo + hi);
            *c = -*c;
        }
    }
    config
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{read_history, write_history};
    use crate::model::fixtures::small_spec;

    #[test]
    fn seed_determines_output() {
        let a = generate_synthetic(&demo_config(30, 4, 42)).unwrap();
        let b = generate_synthetic(&demo_config(30, 4, 42)).unwrap();
        assert_eq!(a.rows, b.rows);
        let c = generate_synthetic(&demo_config(30, 4, 43)).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn noiseless_scores_equal_the_linear_form() {
        let config = SyntheticConfig::new(small_spec(), 20, 3, 5).with_noise(0.0);
        let t = generate_synthetic(&config).unwrap();
        for r in &t.rows {
            for (id, g) in &config.generators {
                let expected = config.spec.score_bounds.clamp(g.linear_form(&r.attribute_values));
                assert_eq!(r.indicator_scores[id], expected);
            }
        }
    }

    #[test]
    fn ranks_match_a_rerank_per_year() {
        let t = generate_synthetic(&demo_config(60, 5, 9)).unwrap();
        for year in t.years() {
            let mut rows: Vec<&RankeeRecord> = t.rows.iter().filter(|r| r.year == year).collect();
            rows.sort_by(|a, b| b.final_score.total_cmp(&a.final_score));
            for r in &rows {
                let better = rows.iter().filter(|o| o.final_score > r.final_score).count();
                assert_eq!(r.rank as usize, better + 1);
            }
        }
    }

    #[test]
    fn output_passes_load_validation() {
        let config = demo_config(40, 5, 1);
        let t = generate_synthetic(&config).unwrap();
        assert_eq!(t.len(), 200);
        assert!(t.gaps.is_empty());
        let mut csv = Vec::new();
        write_history(&t, &config.spec, &mut csv).unwrap();
        let back = read_history(csv.as_slice(), "synthetic", &config.spec).unwrap();
        assert_eq!(back.rows, t.rows);
    }

    #[test]
    fn scores_spread_over_the_range() {
        let t = generate_synthetic(&demo_config(200, 1, 3)).unwrap();
        let sfri: Vec<f64> = t.rows.iter().map(|r| r.indicator_scores["SFRI"]).collect();
        let lo = sfri.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sfri.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo > 30.0, "{lo}..{hi}");
    }

    #[test]
    fn demo_spec_is_valid() {
        let spec = demo_spec();
        spec.validate().unwrap();
        assert_eq!(spec.indicators.len(), 6);
        let g = &demo_config(1, 1, 0).generators["SFRI"];
        assert!(g.coefficients["students"] < 0.0);
        assert!(g.coefficients["faculty"] > 0.0);
    }

    #[test]
    fn config_errors() {
        let mut config = SyntheticConfig::new(small_spec(), 0, 3, 0);
        assert!(generate_synthetic(&config).is_err());
        config.n_rankees = 2;
        config.generators.remove("x");
        assert!(matches!(generate_synthetic(&config), Err(Error::Schema(_))));
        let mut config = SyntheticConfig::new(small_spec(), 2, 2, 0).with_noise(-1.0);
        assert!(generate_synthetic(&config).is_err());
        config = config.with_noise(1.0);
        config.generators.get_mut("x").unwrap().coefficients.insert("zz".into(), 1.0);
        assert!(generate_synthetic(&config).is_err());
    }
}
