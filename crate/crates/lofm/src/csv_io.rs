//! CSV readers and writers for observations, importances and cohort tables.

use std::io::{Read, Write};

use lofm_core::ml::{ImportanceMap, ImportanceRejection};
use lofm_core::pipeline::{RowInput, CSV_HEADER};
use lofm_core::trust::{DotiTable, Ratio};

use crate::app::MetricsTable;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("bad header: expected `{expected}`, got `{got}`")]
    Header { expected: String, got: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(r)
}

fn check_header(got: &csv::StringRecord, expected: &[&str]) -> Result<(), CsvError> {
    if got.iter().ne(expected.iter().copied()) {
        return Err(CsvError::Header { expected: expected.join(","), got: got.iter().collect::<Vec<_>>().join(",") });
    }
    Ok(())
}

/// Reads the long observation format. Values stay as text so that parsing
/// and range checks happen (and get reported per line) in the pipeline.
/// A row with the wrong column count is passed on with blanks so it is
/// rejected there with its line number rather than failing the batch.
pub fn read_observations<R: Read>(r: R) -> Result<Vec<RowInput>, CsvError> {
    let mut rdr = reader(r);
    check_header(rdr.headers()?, &CSV_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        rows.push(RowInput {
            line,
            participant_id: get(0),
            date: get(1),
            metric_id: get(2),
            value: get(3),
            unit: get(4),
            source: get(5),
            coverage_pct: get(6),
        });
    }
    Ok(rows)
}

pub fn write_observations<W: Write>(w: W, data: &lofm_core::Dataset) -> Result<(), CsvError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CSV_HEADER)?;
    for o in data.observations() {
        wtr.write_record([
            o.participant_id.as_str(),
            &o.date.to_string(),
            &o.metric_id,
            &o.value.to_string(),
            lofm_core::registry::lookup(&o.metric_id).map_or("", |m| m.unit),
            &o.source,
            &o.coverage_pct.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `feature,importance` rows. Unparseable, negative and duplicate rows are
/// rejected individually; a missing or wrong header fails the whole file.
pub fn read_importances<R: Read>(r: R) -> Result<(ImportanceMap, Vec<ImportanceRejection>), CsvError> {
    let mut rdr = reader(r);
    if rdr.headers()?.is_empty() {
        return Ok((ImportanceMap::new(), Vec::new()));
    }
    check_header(rdr.headers()?, &["feature", "importance"])?;
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let feature = rec.get(0).unwrap_or("").to_string();
        match rec.get(1).unwrap_or("").parse::<f64>() {
            Ok(v) => entries.push((feature, v)),
            Err(_) => rejected.push(ImportanceRejection { feature, reason: "importance is not a number".into() }),
        }
    }
    let (map, mut more) = ImportanceMap::from_entries(entries);
    rejected.append(&mut more);
    Ok((map, rejected))
}

pub fn write_importances<W: Write>(w: W, map: &ImportanceMap) -> Result<(), CsvError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["feature", "importance"])?;
    for (f, v) in map.ranked() {
        wtr.write_record([f, &v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn ratio(r: Ratio) -> String {
    r.value().map_or_else(|| "undefined".to_string(), num)
}

pub fn metrics_csv(t: &MetricsTable) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let _ = wtr.write_record(["participant", "stage", "ml_mean", "rules_mean", "ratio"]);
    for r in &t.rows {
        let _ = wtr.write_record([
            &r.participant,
            &r.stage.to_string(),
            &num(r.ml_mean),
            &num(r.rules_mean),
            &ratio(r.ratio),
        ]);
    }
    String::from_utf8(wtr.into_inner().unwrap_or_default()).unwrap_or_default()
}

pub fn doti_csv(t: &DotiTable) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let _ = wtr.write_record(["endpoint", "model", "stage", "r2"]);
    for c in &t.cells {
        let _ = wtr.write_record([&c.endpoint.to_string(), &c.model.to_string(), &c.stage.to_string(), &ratio(c.r2)]);
    }
    for r in &t.relative {
        let _ = wtr.write_record([&r.endpoint.to_string(), "ml/rules", &r.stage.to_string(), &ratio(r.ratio)]);
    }
    String::from_utf8(wtr.into_inner().unwrap_or_default()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_header_is_checked() {
        let err = read_observations("participant,date\nP01,2024-01-01\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CsvError::Header { .. }));
    }

    #[test]
    fn observation_lines_count_the_header() {
        let text = "participant_id,date,metric_id,value,unit,source,coverage_pct\n\
                    P01,2024-01-01,tst_min,400,min,ring,95\n\
                    P01,2024-01-02,tst_min,410\n";
        let rows = read_observations(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].line, 2);
        assert_eq!(rows[1].line, 3);
        assert_eq!(rows[1].source, "");
    }

    #[test]
    fn negative_importance_is_rejected() {
        let text = "feature,importance\ncaffeine_mg,-1\nsteps,2.5\nalcohol_units,x\n";
        let (map, rejected) = read_importances(text.as_bytes()).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map.get("steps"), 2.5);
        assert_eq!(rejected.len(), 2);
        assert_eq!(rejected[0].feature, "alcohol_units");
        assert_eq!(rejected[1].feature, "caffeine_mg");
    }

    #[test]
    fn empty_importance_file_is_an_empty_map() {
        let (map, rejected) = read_importances("".as_bytes()).unwrap();
        assert!(map.is_empty() && rejected.is_empty());
    }

    #[test]
    fn importances_round_trip() {
        let (map, _) = ImportanceMap::from_entries([("a".to_string(), 0.125), ("b".to_string(), 3.0)]);
        let mut out = Vec::new();
        write_importances(&mut out, &map).unwrap();
        let (back, rejected) = read_importances(out.as_slice()).unwrap();
        assert!(rejected.is_empty());
        assert_eq!(back, map);
    }
}
