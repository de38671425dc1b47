//! Historic ranking tables and their CSV form.
//!
//! One row per rankee-year, columns in spec order:
//!
//! ```text
//! rankee_id,year,attr_<id>...,ind_<id>...,final_score,rank
//! ```
//!
//! Loading is all-or-nothing: the first bad row aborts with its line number
//! and column.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RankeeRecord, RankingSystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// Seconds since the Unix epoch.
    pub ingested_at: u64,
    pub row_count: usize,
}

/// A rankee with missing years between two recorded ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearGap {
    pub rankee_id: String,
    pub after: i32,
    pub before: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryTable {
    pub rows: Vec<RankeeRecord>,
    pub provenance: Provenance,
    pub gaps: Vec<YearGap>,
}

impl HistoryTable {
    /// Validates `rows` against `spec` and records year gaps.
    pub fn from_rows(
        rows: Vec<RankeeRecord>,
        spec: &RankingSystemSpec,
        source: impl Into<String>,
    ) -> Result<Self> {
        let source = source.into();
        let mut seen = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            check_record(row, spec).map_err(|e| Error::Ingest {
                source_name: source.clone(),
                row: i + 1,
                column: None,
                message: e.to_string(),
            })?;
            if let Some(first) = seen.insert((row.rankee_id.as_str(), row.year), i + 1) {
                return Err(Error::Ingest {
                    source_name: source.clone(),
                    row: i + 1,
                    column: None,
                    message: format!(
                        "duplicate ({}, {}), first seen at record {first}",
                        row.rankee_id, row.year
                    ),
                });
            }
        }
        let gaps = find_gaps(&rows);
        Ok(Self {
            provenance: Provenance {
                source,
                ingested_at: now(),
                row_count: rows.len(),
            },
            rows,
            gaps,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rankee_ids(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.rankee_id.as_str()).collect();
        set.into_iter().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.rows.iter().map(|r| r.year).collect();
        set.into_iter().collect()
    }

    pub fn record(&self, rankee_id: &str, year: i32) -> Option<&RankeeRecord> {
        self.rows
            .iter()
            .find(|r| r.rankee_id == rankee_id && r.year == year)
    }

    /// The rankee's rows in ascending year order.
    pub fn rankee_history(&self, rankee_id: &str) -> Vec<RankeeRecord> {
        let mut rows: Vec<RankeeRecord> = self
            .rows
            .iter()
            .filter(|r| r.rankee_id == rankee_id)
            .cloned()
            .collect();
        rows.sort_by_key(|r| r.year);
        rows
    }

    pub fn latest(&self, rankee_id: &str) -> Option<&RankeeRecord> {
        self.rows
            .iter()
            .filter(|r| r.rankee_id == rankee_id)
            .max_by_key(|r| r.year)
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Full-row check: every declared attribute and indicator present and in range.
fn check_record(row: &RankeeRecord, spec: &RankingSystemSpec) -> Result<()> {
    if row.rankee_id.is_empty() {
        return Err(Error::validation("empty rankee_id"));
    }
    row.validate(spec)?;
    for a in &spec.attributes {
        match row.attribute_values.get(&a.id) {
            None => return Err(Error::schema(format!("missing attribute `{}`", a.id))),
            Some(v) if !a.in_domain(*v) => {
                return Err(Error::validation(format!(
                    "attribute `{}` value {v} outside domain [{}, {}]",
                    a.id,
                    a.domain_min(),
                    a.domain_max()
                )))
            }
            _ => {}
        }
    }
    for i in &spec.indicators {
        if !row.indicator_scores.contains_key(&i.id) {
            return Err(Error::schema(format!("missing indicator `{}`", i.id)));
        }
    }
    Ok(())
}

fn find_gaps(rows: &[RankeeRecord]) -> Vec<YearGap> {
    let mut years: BTreeMap<&str, Vec<i32>> = BTreeMap::new();
    for r in rows {
        years.entry(&r.rankee_id).or_default().push(r.year);
    }
    let mut gaps = Vec::new();
    for (id, mut ys) in years {
        ys.sort_unstable();
        for w in ys.windows(2) {
            if w[1] - w[0] > 1 {
                gaps.push(YearGap {
                    rankee_id: id.to_string(),
                    after: w[0],
                    before: w[1],
                });
            }
        }
    }
    gaps
}

/// Canonical header for `spec`.
pub fn history_header(spec: &RankingSystemSpec) -> Vec<String> {
    let mut cols = vec!["rankee_id".to_string(), "year".to_string()];
    cols.extend(spec.attributes.iter().map(|a| format!("attr_{}", a.id)));
    cols.extend(spec.indicators.iter().map(|i| format!("ind_{}", i.id)));
    cols.push("final_score".into());
    cols.push("rank".into());
    cols
}

pub fn load_history(path: impl AsRef<Path>, spec: &RankingSystemSpec) -> Result<HistoryTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_history(file, &path.display().to_string(), spec)
}

pub fn read_history<R: Read>(
    reader: R,
    source_name: &str,
    spec: &RankingSystemSpec,
) -> Result<HistoryTable> {
    let ingest = |row: usize, column: Option<&str>, message: String| Error::Ingest {
        source_name: source_name.to_string(),
        row,
        column: column.map(str::to_string),
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let expected = history_header(spec);
    let header = rdr
        .headers()
        .map_err(|e| ingest(1, None, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(ingest(1, None, "missing header".into()));
    }
    for (i, want) in expected.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(ingest(1, Some(got), format!("expected column `{want}` at position {}", i + 1)))
            }
            None => return Err(ingest(1, Some(want), "missing column".into())),
        }
    }
    if header.len() > expected.len() {
        return Err(ingest(1, Some(&header[expected.len()]), "unexpected extra column".into()));
    }

    let n_attr = spec.attributes.len();
    let n_ind = spec.indicators.len();
    let mut rows = Vec::new();
    let mut seen: HashMap<(String, i32), usize> = HashMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            ingest(line, None, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let number = |idx: usize| -> Result<f64> {
            let col = &expected[idx];
            let v: f64 = record[idx]
                .parse()
                .map_err(|_| ingest(line, Some(col), format!("`{}` is not a number", &record[idx])))?;
            if !v.is_finite() {
                return Err(ingest(line, Some(col), "value is not finite".into()));
            }
            Ok(v)
        };

        let rankee_id = record[0].to_string();
        if rankee_id.is_empty() {
            return Err(ingest(line, Some("rankee_id"), "empty rankee_id".into()));
        }
        let year: i32 = record[1]
            .parse()
            .map_err(|_| ingest(line, Some("year"), format!("`{}` is not a year", &record[1])))?;
        let mut attribute_values = BTreeMap::new();
        for (k, a) in spec.attributes.iter().enumerate() {
            let v = number(2 + k)?;
            if !a.in_domain(v) {
                return Err(ingest(
                    line,
                    Some(&expected[2 + k]),
                    format!("{v} outside domain [{}, {}]", a.domain_min(), a.domain_max()),
                ));
            }
            attribute_values.insert(a.id.clone(), v);
        }
        let bounds = spec.score_bounds;
        let bounded = |idx: usize| -> Result<f64> {
            let v = number(idx)?;
            if !bounds.contains(v) {
                return Err(ingest(
                    line,
                    Some(&expected[idx]),
                    format!("score {v} outside bounds [{}, {}]", bounds.min, bounds.max),
                ));
            }
            Ok(v)
        };
        let mut indicator_scores = BTreeMap::new();
        for (k, ind) in spec.indicators.iter().enumerate() {
            indicator_scores.insert(ind.id.clone(), bounded(2 + n_attr + k)?);
        }
        let final_score = bounded(2 + n_attr + n_ind)?;
        let rank_idx = 3 + n_attr + n_ind;
        let rank: u32 = record[rank_idx]
            .parse()
            .ok()
            .filter(|r| *r >= 1)
            .ok_or_else(|| ingest(line, Some("rank"), format!("`{}` is not a positive rank", &record[rank_idx])))?;

        if let Some(first) = seen.insert((rankee_id.clone(), year), line) {
            return Err(ingest(
                line,
                None,
                format!("duplicate ({rankee_id}, {year}), first seen on line {first}"),
            ));
        }
        rows.push(RankeeRecord {
            rankee_id,
            year,
            attribute_values,
            indicator_scores,
            final_score,
            rank,
        });
    }

    let gaps = find_gaps(&rows);
    Ok(HistoryTable {
        provenance: Provenance {
            source: source_name.to_string(),
            ingested_at: now(),
            row_count: rows.len(),
        },
        rows,
        gaps,
    })
}

/// Writes the canonical CSV: spec column order, shortest round-trip floats.
pub fn write_history<W: Write>(
    table: &HistoryTable,
    spec: &RankingSystemSpec,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(history_header(spec))?;
    for r in &table.rows {
        let mut fields = vec![r.rankee_id.clone(), r.year.to_string()];
        for a in &spec.attributes {
            fields.push(fmt_value(r.attribute_values.get(&a.id))?);
        }
        for i in &spec.indicators {
            fields.push(fmt_value(r.indicator_scores.get(&i.id))?);
        }
        fields.push(r.final_score.to_string());
        fields.push(r.rank.to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_value(v: Option<&f64>) -> Result<String> {
    v.map(f64::to_string)
        .ok_or_else(|| Error::schema("row is missing a declared column"))
}

pub fn save_history(
    table: &HistoryTable,
    spec: &RankingSystemSpec,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_history(table, spec, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::small_spec;

    const HEADER: &str = "rankee_id,year,attr_a,attr_b,attr_c,ind_x,ind_y,final_score,rank\n";

    fn read(body: &str) -> Result<HistoryTable> {
        read_history(format!("{HEADER}{body}").as_bytes(), "t.csv", &small_spec())
    }

    fn ingest_location(err: Error) -> (usize, Option<String>) {
        match err {
            Error::Ingest { row, column, .. } => (row, column),
            other => panic!("expected ingest error, got {other}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let t = read("").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.provenance.row_count, 0);
    }

    #[test]
    fn reads_rows_in_order() {
        let t = read("u1,2020,1,2,3,50,60,54,1\nu2,2020,1.5,2,3,40,30,36,2\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.rows[1].attribute_values["a"], 1.5);
        assert_eq!(t.rows[0].indicator_scores["y"], 60.0);
        assert_eq!(t.rows[1].rank, 2);
    }

    #[test]
    fn final_score_above_bounds_names_row() {
        let err = read("u1,2020,1,2,3,50,60,54,1\nu2,2020,1,2,3,50,60,101,2\n").unwrap_err();
        assert_eq!(ingest_location(err), (3, Some("final_score".into())));
    }

    #[test]
    fn schema_mismatches_name_location() {
        let spec = small_spec();
        let err = read_history("rankee_id,year,attr_a,attr_c\n".as_bytes(), "t", &spec).unwrap_err();
        assert_eq!(ingest_location(err), (1, Some("attr_c".into())));
        let err = read("u1,2020,1,x,3,50,60,54,1\n").unwrap_err();
        assert_eq!(ingest_location(err), (2, Some("attr_b".into())));
        let err = read("u1,2020,1,2,3,50,60,54\n").unwrap_err();
        assert_eq!(ingest_location(err).0, 2);
        let err = read("u1,2020,1,2,300,50,60,54,1\n").unwrap_err();
        assert_eq!(ingest_location(err), (2, Some("attr_c".into())));
        let err = read("u1,2020,1,2,3,50,60,54,0\n").unwrap_err();
        assert_eq!(ingest_location(err), (2, Some("rank".into())));
        let err = read_history("".as_bytes(), "t", &spec).unwrap_err();
        assert_eq!(ingest_location(err).0, 1);
    }

    #[test]
    fn duplicate_rankee_year_fails_whole_load() {
        let err = read("u1,2020,1,2,3,50,60,54,1\nu2,2020,1,2,3,50,60,54,1\nu1,2020,1,2,3,50,60,54,1\n")
            .unwrap_err();
        assert_eq!(ingest_location(err).0, 4);
    }

    #[test]
    fn gaps_are_flagged_not_fatal() {
        let t = read("u1,2018,1,2,3,50,60,54,1\nu1,2021,1,2,3,50,60,54,1\nu1,2019,1,2,3,50,60,54,1\n")
            .unwrap();
        assert_eq!(
            t.gaps,
            vec![YearGap { rankee_id: "u1".into(), after: 2019, before: 2021 }]
        );
        assert_eq!(t.rankee_history("u1").iter().map(|r| r.year).collect::<Vec<_>>(), [2018, 2019, 2021]);
        assert_eq!(t.latest("u1").unwrap().year, 2021);
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text = format!(
            "{HEADER}u1,2020,1,2.25,3,50,60.125,54.05,1\nu2,2019,0.1,0.2,0.30000000000000004,1,100,36,2\n"
        );
        let spec = small_spec();
        let t = read_history(text.as_bytes(), "t", &spec).unwrap();
        let mut out = Vec::new();
        write_history(&t, &spec, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn from_rows_applies_the_same_checks() {
        let spec = small_spec();
        let t = read("u1,2020,1,2,3,50,60,54,1\n").unwrap();
        let mut rows = t.rows.clone();
        assert!(HistoryTable::from_rows(rows.clone(), &spec, "mem").is_ok());
        rows.push(rows[0].clone());
        assert!(matches!(
            HistoryTable::from_rows(rows.clone(), &spec, "mem"),
            Err(Error::Ingest { row: 2, .. })
        ));
        rows.pop();
        rows[0].attribute_values.remove("b");
        assert!(HistoryTable::from_rows(rows, &spec, "mem").is_err());
    }
}
