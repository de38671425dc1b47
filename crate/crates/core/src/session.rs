//! Analysis sessions.
//!
//! A [`Session`] is the persisted, versioned record of one what-if analysis:
//! the ranking system, the baseline rankee-year, the trained model, the
//! attribute ranges, the rivals' histories and the ordered filter log.
//! Scenario sets are not stored; [`Analysis::open`] regenerates them, which
//! is deterministic, and replays the filter log against the counts recorded
//! when each filter was applied.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryTable;
use crate::influence::{build_matrix, DeltaPolicy, InfluenceMatrix};
use crate::model::{RankeeRecord, RankingSystemSpec, Subject};
use crate::predictor::{fit, EnsembleModel, FitConfig};
use crate::rival::{
    heatmap, predict_rivals, radar_data, RadarPayload, RivalBoard, RivalConfig, RivalMethod,
    WinProbabilityCell,
};
use crate::scenario::{
    filter_scenarios, generate_scenarios, sort_scenarios, summarize, summarize_scenario,
    AttributeRange, Direction, HistogramSummary, Scenario, ScenarioFilter, ScenarioSet,
    ScenarioSummary, DEFAULT_CAPACITY,
};

pub const SESSION_VERSION: u32 = 1;
pub const DEFAULT_PAGE_SIZE: usize = 100;

/// Which rankee-year the scenarios are measured against. Without a year the
/// rankee's latest recorded year is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRef {
    pub rankee_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

fn default_rank_method() -> RivalMethod {
    RivalMethod::CarryForward
}

/// Everything needed to start a session, besides the history table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub spec: RankingSystemSpec,
    pub baseline: BaselineRef,
    #[serde(default)]
    pub ranges: Vec<AttributeRange>,
    #[serde(default)]
    pub rivals: Vec<String>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    /// Method predicting the rivals that scenarios are ranked against.
    #[serde(default = "default_rank_method")]
    pub rank_method: RivalMethod,
    #[serde(default)]
    pub rival_config: RivalConfig,
}

impl SessionRequest {
    pub fn new(spec: RankingSystemSpec, baseline: BaselineRef) -> Self {
        Self {
            spec,
            baseline,
            ranges: Vec::new(),
            rivals: Vec::new(),
            fit: FitConfig::default(),
            capacity: DEFAULT_CAPACITY,
            rank_method: default_rank_method(),
            rival_config: RivalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RivalHistory {
    pub rival_id: String,
    pub history: Vec<RankeeRecord>,
}

/// A filter as applied, with the size of the subset it left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterLogEntry {
    pub filter: ScenarioFilter,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub version: u32,
    pub session_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub spec: RankingSystemSpec,
    pub baseline: RankeeRecord,
    pub model: EnsembleModel,
    pub ranges: Vec<AttributeRange>,
    pub capacity: usize,
    pub rank_method: RivalMethod,
    pub rival_config: RivalConfig,
    pub rivals: Vec<RivalHistory>,
    pub scenario_count: usize,
    pub filter_log: Vec<FilterLogEntry>,
}

impl Session {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    /// Parses a saved session. The version is checked before the body so an
    /// old file reports a migration error rather than a field mismatch.
    pub fn from_json(input: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(input).map_err(|e| Error::from_json(e, input))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .map(|v| v.min(u32::MAX as u64) as u32)
            .unwrap_or(0);
        if found != SESSION_VERSION {
            return Err(Error::Migration {
                found,
                expected: SESSION_VERSION,
            });
        }
        let session: Session =
            serde_json::from_str(input).map_err(|e| Error::from_json(e, input))?;
        session.spec.validate()?;
        Ok(session)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn rival_ids(&self) -> Vec<String> {
        self.rivals.iter().map(|r| r.rival_id.clone()).collect()
    }
}

/// One page of scenario summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub scenarios: Vec<ScenarioSummary>,
}

/// A session with its scenarios generated and filters applied.
#[derive(Debug, Clone)]
pub struct Analysis {
    session: Session,
    board: RivalBoard,
    /// `layers[0]` is the full set; each applied filter pushes its subset.
    layers: Vec<ScenarioSet>,
}

impl Analysis {
    /// Fits the model on `history`, predicts the rivals and generates scenarios.
    pub fn create(
        request: SessionRequest,
        history: &HistoryTable,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        let spec = request.spec;
        spec.validate()?;
        let baseline = match request.baseline.year {
            Some(year) => history.record(&request.baseline.rankee_id, year),
            None => history.latest(&request.baseline.rankee_id),
        }
        .cloned()
        .ok_or_else(|| {
            Error::NotFound(format!(
                "baseline rankee `{}`{} not in history",
                request.baseline.rankee_id,
                request.baseline.year.map(|y| format!(" year {y}")).unwrap_or_default()
            ))
        })?;

        let mut rivals = Vec::with_capacity(request.rivals.len());
        for id in &request.rivals {
            if *id == baseline.rankee_id {
                return Err(Error::validation(format!("rival `{id}` is the baseline rankee")));
            }
            if rivals.iter().any(|r: &RivalHistory| r.rival_id == *id) {
                return Err(Error::validation(format!("rival `{id}` listed twice")));
            }
            let rows = history.rankee_history(id);
            if rows.is_empty() {
                return Err(Error::NotFound(format!("rival `{id}` not in history")));
            }
            rivals.push(RivalHistory {
                rival_id: id.clone(),
                history: rows,
            });
        }

        let model = fit(&history.rows, &spec, request.fit)?;
        let session = Session {
            version: SESSION_VERSION,
            session_id: session_id.into(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            spec,
            baseline,
            model,
            ranges: request.ranges,
            capacity: request.capacity,
            rank_method: request.rank_method,
            rival_config: request.rival_config,
            rivals,
            scenario_count: 0,
            filter_log: Vec::new(),
        };
        let (board, all) = build(&session)?;
        let mut session = session;
        session.scenario_count = all.len();
        Ok(Self {
            session,
            board,
            layers: vec![all],
        })
    }

    /// Regenerates a saved session and replays its filter log, failing if
    /// any recorded count is not reproduced.
    pub fn open(session: Session) -> Result<Self> {
        let (board, all) = build(&session)?;
        if all.len() != session.scenario_count {
            return Err(Error::Replay(format!(
                "regenerated {} scenarios, session recorded {}",
                all.len(),
                session.scenario_count
            )));
        }
        let mut layers = vec![all];
        for (i, entry) in session.filter_log.iter().enumerate() {
            let next = filter_scenarios(&layers[i], &entry.filter, &session.spec)?;
            if next.len() != entry.matched {
                return Err(Error::Replay(format!(
                    "filter {} (`{}`) matched {}, session recorded {}",
                    i + 1,
                    entry.filter,
                    next.len(),
                    entry.matched
                )));
            }
            layers.push(next);
        }
        Ok(Self {
            session,
            board,
            layers,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn spec(&self) -> &RankingSystemSpec {
        &self.session.spec
    }

    pub fn board(&self) -> &RivalBoard {
        &self.board
    }

    pub fn all(&self) -> &ScenarioSet {
        &self.layers[0]
    }

    /// The subset left by every applied filter.
    pub fn current(&self) -> &ScenarioSet {
        self.layers.last().expect("full set always present")
    }

    /// Narrows the current subset and records the filter. Returns the new count.
    pub fn apply_filter(&mut self, filter: ScenarioFilter) -> Result<usize> {
        let next = filter_scenarios(self.current(), &filter, &self.session.spec)?;
        let matched = next.len();
        self.session.filter_log.push(FilterLogEntry { filter, matched });
        self.layers.push(next);
        Ok(matched)
    }

    /// Drops the most recent filter. Returns the restored count.
    pub fn undo_filter(&mut self) -> Result<usize> {
        if self.session.filter_log.pop().is_none() {
            return Err(Error::validation("no filter to undo"));
        }
        self.layers.pop();
        Ok(self.current().len())
    }

    /// The current subset, optionally narrowed further and sorted. Nothing is recorded.
    pub fn view(
        &self,
        filter: Option<&ScenarioFilter>,
        sort: Option<(&Subject, Direction)>,
    ) -> Result<ScenarioSet> {
        let mut set = match filter {
            Some(f) => filter_scenarios(self.current(), f, &self.session.spec)?,
            None => self.current().clone(),
        };
        if let Some((key, dir)) = sort {
            set = sort_scenarios(&set, key, dir, &self.session.spec)?;
        }
        Ok(set)
    }

    /// Summaries for one page (0-based) of `set`.
    pub fn page(&self, set: &ScenarioSet, page: usize, page_size: usize) -> Result<ScenarioPage> {
        if page_size == 0 {
            return Err(Error::validation("page size must be at least 1"));
        }
        let scenarios = set
            .scenarios
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|s| summarize_scenario(s, &set.baseline, &self.session.spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScenarioPage {
            total: set.len(),
            page,
            page_size,
            scenarios,
        })
    }

    pub fn summary(&self, subject: &Subject, bins: usize) -> Result<HistogramSummary> {
        summarize(self.current(), subject, bins, &self.session.spec)
    }

    pub fn scenario(&self, scenario_id: u64) -> Result<&Scenario> {
        let all = self.all();
        // ids are generation indices
        all.scenarios
            .get(scenario_id as usize)
            .filter(|s| s.scenario_id == scenario_id)
            .or_else(|| all.get(scenario_id))
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::NotFound(format!("scenario {scenario_id}")))
    }

    pub fn influence(&self, scenario_ids: &[u64]) -> Result<InfluenceMatrix> {
        let selection = scenario_ids
            .iter()
            .map(|id| self.scenario(*id))
            .collect::<Result<Vec<_>>>()?;
        let policy = DeltaPolicy::for_model(&self.session.model, &self.session.spec);
        build_matrix(&self.session.model, &selection, &self.session.spec, &policy)
    }

    pub fn heatmap(&self, scenario_id: u64) -> Result<Vec<WinProbabilityCell>> {
        heatmap(self.scenario(scenario_id)?, &self.board, &self.session.spec)
    }

    pub fn radar(
        &self,
        scenario_id: u64,
        method: RivalMethod,
        highlight: Option<&str>,
    ) -> Result<RadarPayload> {
        radar_data(
            self.scenario(scenario_id)?,
            &self.board,
            method,
            highlight,
            &self.session.spec,
        )
    }
}

/// Rival board under every method, and the full scenario set ranked against
/// the rivals as predicted by the session's rank method.
fn build(session: &Session) -> Result<(RivalBoard, ScenarioSet)> {
    let spec = &session.spec;
    let history: Vec<RankeeRecord> = session
        .rivals
        .iter()
        .flat_map(|r| r.history.iter().cloned())
        .collect();
    let board = predict_rivals(
        &session.rival_ids(),
        &history,
        &RivalMethod::ALL,
        &session.model,
        spec,
        &session.rival_config,
    );
    if let Some(failed) = board
        .entries
        .iter()
        .find(|e| e.method == session.rank_method && e.prediction.is_none())
    {
        return Err(Error::validation(format!(
            "rival `{}` cannot be ranked with {}: {}",
            failed.rival_id,
            session.rank_method,
            failed.error.as_deref().unwrap_or("no prediction")
        )));
    }
    let finals = board.finals(session.rank_method);
    let set = generate_scenarios(
        &session.ranges,
        &session.baseline,
        &session.model,
        spec,
        &finals,
        session.capacity,
    )?;
    Ok((board, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::small_spec;
    use crate::synth::{generate_synthetic, SyntheticConfig};

    fn history() -> HistoryTable {
        generate_synthetic(&SyntheticConfig::new(small_spec(), 12, 4, 8)).unwrap()
    }

    fn request() -> SessionRequest {
        let mut req = SessionRequest::new(
            small_spec(),
            BaselineRef { rankee_id: "R001".into(), year: None },
        );
        req.fit.members = 20;
        req.ranges = vec![
            AttributeRange::from_step("a", 0.0, 100.0, 10.0).unwrap(),
            AttributeRange::from_step("b", 0.0, 100.0, 20.0).unwrap(),
            AttributeRange::new("c", vec![5.0, 25.0, 45.0]).unwrap(),
        ];
        req.rivals = vec!["R002".into(), "R005".into(), "R009".into()];
        req
    }

    fn filters() -> Vec<ScenarioFilter> {
        ["ind:x mean>0", "final mean>=-5", "attr:c delta<=5"]
            .iter()
            .map(|f| f.parse().unwrap())
            .collect()
    }

    #[test]
    fn create_generates_product_count() {
        let a = Analysis::create(request(), &history(), "s1").unwrap();
        assert_eq!(a.session().scenario_count, 11 * 6 * 3);
        assert_eq!(a.current().len(), 198);
        assert_eq!(a.session().baseline.year, 2022);
        assert_eq!(a.board().entries.len(), 9);
        let s = a.scenario(17).unwrap();
        assert_eq!(s.rank_distribution.total(), 20);
    }

    #[test]
    fn fresh_round_trip_is_deep_equal() {
        let a = Analysis::create(request(), &history(), "s1").unwrap();
        let json = a.session().to_json();
        let back = Session::from_json(&json).unwrap();
        assert_eq!(&back, a.session());
        let reopened = Analysis::open(back).unwrap();
        assert_eq!(reopened.all(), a.all());
        assert_eq!(reopened.board(), a.board());
    }

    #[test]
    fn replay_reproduces_filter_counts() {
        let mut a = Analysis::create(request(), &history(), "s1").unwrap();
        let mut counts = Vec::new();
        for f in filters() {
            counts.push(a.apply_filter(f).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        a.session().save(&path).unwrap();
        let b = Analysis::open(Session::load(&path).unwrap()).unwrap();
        assert_eq!(b.current(), a.current());
        assert_eq!(
            b.session().filter_log.iter().map(|e| e.matched).collect::<Vec<_>>(),
            counts
        );
        // a one-shot oracle: all three filters at once over the full set
        let combined = ScenarioFilter::new(filters().into_iter().flat_map(|f| f.predicates).collect());
        let oracle: Vec<u64> = a
            .all()
            .scenarios
            .iter()
            .filter(|s| combined.matches(s, &a.all().baseline).unwrap())
            .map(|s| s.scenario_id)
            .collect();
        assert_eq!(b.current().ids(), oracle);
        assert_eq!(
            b.heatmap(oracle[0]).unwrap(),
            a.heatmap(oracle[0]).unwrap()
        );
    }

    #[test]
    fn tampered_count_is_a_replay_error() {
        let mut a = Analysis::create(request(), &history(), "s1").unwrap();
        a.apply_filter("ind:x mean>0".parse().unwrap()).unwrap();
        let mut s = a.session().clone();
        s.filter_log[0].matched += 1;
        assert!(matches!(Analysis::open(s), Err(Error::Replay(_))));
    }

    #[test]
    fn undo_restores_previous_subset() {
        let mut a = Analysis::create(request(), &history(), "s1").unwrap();
        let n = a.current().len();
        a.apply_filter("ind:x mean>0".parse().unwrap()).unwrap();
        a.apply_filter("ind:y mean>0".parse().unwrap()).unwrap();
        assert_eq!(a.undo_filter().unwrap(), a.session().filter_log[0].matched);
        assert_eq!(a.undo_filter().unwrap(), n);
        assert!(a.undo_filter().is_err());
    }

    #[test]
    fn version_mismatch_is_a_migration_error() {
        let a = Analysis::create(request(), &history(), "s1").unwrap();
        let json = a.session().to_json().replacen("\"version\": 1", "\"version\": 7", 1);
        assert!(matches!(
            Session::from_json(&json),
            Err(Error::Migration { found: 7, expected: 1 })
        ));
        assert!(matches!(
            Session::from_json("{\"session_id\": \"x\"}"),
            Err(Error::Migration { found: 0, .. })
        ));
    }

    #[test]
    fn corrupt_json_reports_byte_offset() {
        let a = Analysis::create(request(), &history(), "s1").unwrap();
        let json = a.session().to_json();
        let cut = json.len() / 2;
        let broken = format!("{}#{}", &json[..cut], &json[cut..]);
        match Session::from_json(&broken) {
            Err(Error::Parse { offset, .. }) => assert!(offset >= cut && offset <= cut + 1, "{offset} vs {cut}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn request_errors() {
        let h = history();
        let mut req = request();
        req.baseline.rankee_id = "nobody".into();
        assert!(matches!(Analysis::create(req, &h, "x"), Err(Error::NotFound(_))));
        let mut req = request();
        req.rivals.push("R001".into());
        assert!(Analysis::create(req, &h, "x").is_err());
        let mut req = request();
        req.rivals.push("ghost".into());
        assert!(matches!(Analysis::create(req, &h, "x"), Err(Error::NotFound(_))));
        let mut req = request();
        req.capacity = 10;
        assert!(matches!(Analysis::create(req, &h, "x"), Err(Error::Capacity { count: 198, cap: 10 })));
        let mut req = request();
        req.baseline.year = Some(2020);
        assert_eq!(Analysis::create(req, &h, "x").unwrap().session().baseline.year, 2020);
    }

    #[test]
    fn views_and_pages() {
        let a = Analysis::create(request(), &history(), "s1").unwrap();
        let sorted = a.view(None, Some((&Subject::Final, Direction::Desc))).unwrap();
        let means: Vec<f64> = sorted.scenarios.iter().map(|s| s.final_prediction.mean()).collect();
        assert!(means.windows(2).all(|w| w[0] >= w[1]));
        let p = a.page(&sorted, 1, 100).unwrap();
        assert_eq!((p.total, p.scenarios.len()), (198, 98));
        assert_eq!(p.scenarios[0].scenario_id, sorted.scenarios[100].scenario_id);
        assert!(a.page(&sorted, 5, 100).unwrap().scenarios.is_empty());
        let f: ScenarioFilter = "attr:a delta>0".parse().unwrap();
        assert!(a.view(Some(&f), None).unwrap().len() < 198);
        assert_eq!(a.current().len(), 198);
    }

    #[test]
    fn analysis_products() {
        let a = Analysis::create(request(), &history(), "s1").unwrap();
        let m = a.influence(&[0, 5, 100]).unwrap();
        assert_eq!(m.selection, vec![0, 5, 100]);
        assert!(a.influence(&[9999]).is_err());
        assert_eq!(a.heatmap(3).unwrap().len(), 3 * 3 * 3);
        let radar = a.radar(3, RivalMethod::ModelBased, Some("R005")).unwrap();
        assert_eq!(radar.axes.len(), 3);
        let h = a.summary(&Subject::Final, 10).unwrap();
        assert_eq!(h.frequencies.iter().sum::<usize>(), 198);
    }
}
