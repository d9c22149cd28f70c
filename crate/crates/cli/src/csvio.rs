//! Fixed-format CSV files. Every number is written with four decimals so
//! reruns are byte-identical.

use std::io::Write;
use std::path::Path;

use vanetloc::channel::{RssSample, SurveyDataset};
use vanetloc::nn::SweepTable;

use crate::HarnessError;

pub const SURVEY_HEADER: [&str; 5] = ["x_m", "rsu_id", "rss_dbm", "true_distance_m", "channel"];

pub const SWEEP_HEADER: [&str; 13] = [
    "rank", "hidden", "seed", "mse_test", "mse_all", "maxerr_test", "maxerr_all", "std_test", "std_all", "var_test",
    "var_all", "corr_test", "corr_all",
];

pub const TRACE_HEADER: [&str; 8] =
    ["t_s", "x_true_m", "x_est_m", "y_est_m", "source", "used_rsus", "quality_m", "abs_error_m"];

/// Four decimals, never a negative zero.
pub fn fmt4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{}: {e}", path.display()))
}

pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn survey_rows(survey: &SurveyDataset) -> Vec<Vec<String>> {
    survey
        .samples
        .iter()
        .map(|s| {
            let channel = survey.layout.rsu(&s.rsu_id).map(|r| r.channel.to_string()).unwrap_or_default();
            vec![
                fmt4(s.x_m),
                s.rsu_id.clone(),
                fmt4(s.rss_dbm),
                s.true_distance_m.map(fmt4).unwrap_or_default(),
                channel,
            ]
        })
        .collect()
}

pub fn write_survey(path: &Path, survey: &SurveyDataset) -> Result<(), HarnessError> {
    write_rows(path, &SURVEY_HEADER, &survey_rows(survey))
}

fn parse_f64(path: &Path, line: usize, column: &str, text: &str) -> Result<f64, HarnessError> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| io_err(path, format!("line {line}: bad {column} value {text:?}")))
}

/// Reads a survey CSV. Columns are located by name; `true_distance_m` may be
/// empty and `channel` may be absent.
pub fn read_survey(path: &Path) -> Result<Vec<RssSample>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = r.headers().map_err(|e| io_err(path, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| io_err(path, format!("missing column {name}")))
    };
    let (cx, cid, crss, cdist) = (col("x_m")?, col("rsu_id")?, col("rss_dbm")?, col("true_distance_m")?);
    let mut samples = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| io_err(path, e))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let dist = field(cdist).trim();
        samples.push(RssSample {
            x_m: parse_f64(path, line, "x_m", field(cx))?,
            rsu_id: field(cid).trim().to_string(),
            rss_dbm: parse_f64(path, line, "rss_dbm", field(crss))?,
            true_distance_m: if dist.is_empty() { None } else { Some(parse_f64(path, line, "true_distance_m", dist)?) },
        });
    }
    if samples.is_empty() {
        return Err(io_err(path, "no data rows"));
    }
    Ok(samples)
}

pub fn sweep_rows(table: &SweepTable) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                r.hidden.to_string(),
                r.seed.to_string(),
                fmt4(r.test.mse),
                fmt4(r.all.mse),
                fmt4(r.test.max_abs_error),
                fmt4(r.all.max_abs_error),
                fmt4(r.test.std_dev),
                fmt4(r.all.std_dev),
                fmt4(r.test.variance),
                fmt4(r.all.variance),
                fmt4(r.test.correlation),
                fmt4(r.all.correlation),
            ]
        })
        .collect()
}

/// Prints rows as an aligned text table.
pub fn print_table(out: &mut impl Write, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
    writeln!(out, "{}", line(header.to_vec()))?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_decimals_without_negative_zero() {
        assert_eq!(fmt4(-0.00001), "0.0000");
        assert_eq!(fmt4(-0.0), "0.0000");
        assert_eq!(fmt4(-1.23456), "-1.2346");
        assert_eq!(fmt4(200.0), "200.0000");
    }
}
