//! CSV and text formats on disk, plus atomic file writes.
//!
//! Scores: `sample_id,true_label,p_1,...,p_n`. Calibration membership: one
//! sample id per line. Prediction log:
//! `sample_id,set_signature,predicted_label,mode[,expert_id]` with the
//! signature dash-joined and empty for the empty set.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{AlphaRow, ArmAccuracyTable, RegretSummary, SizeRow};
use crate::bandit::Trajectory;
use crate::conformal::{signature_of, CalibrationSet, Sample, ScoreTable};
use crate::error::{Error, Result};
use crate::expert::{LogRecord, Mode, PredictionLog};

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

pub fn read_scores(path: &Path) -> Result<ScoreTable> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "true_label" {
        return Err(parse_err(
            path,
            1,
            "header must be sample_id,true_label,p_1,...,p_n",
        ));
    }
    let n_labels = header.len() - 2;
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("p_{}", i + 1) {
            return Err(parse_err(path, 1, format!("expected column p_{}, found {name:?}", i + 1)));
        }
    }
    let mut samples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        if rec.len() != n_labels + 2 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", n_labels + 2, rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty sample_id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate sample_id {id}")));
        }
        let true_label: usize = rec[1]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad true_label {:?}", &rec[1])))?;
        if true_label == 0 || true_label > n_labels {
            return Err(parse_err(path, line, format!("true_label {true_label} outside [1, {n_labels}]")));
        }
        let probs = rec
            .iter()
            .skip(2)
            .map(|f| {
                let p: f64 = f
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("bad probability {f:?}")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(parse_err(path, line, format!("probability {p} outside [0, 1]")));
                }
                Ok(p)
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample {
            id,
            probs,
            true_label,
        });
    }
    ScoreTable::new(n_labels, samples)
}

pub fn write_scores(path: &Path, table: &ScoreTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string(), "true_label".to_string()];
    header.extend((1..=table.n_labels()).map(|i| format!("p_{i}")));
    w.write_record(&header)?;
    for s in table.samples() {
        let mut row = vec![s.id.clone(), s.true_label.to_string()];
        row.extend(s.probs.iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    atomic_write(path, &finish(w)?)
}

/// Newline-delimited ids; blank lines are skipped.
pub fn read_calibration_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_calibration_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn parse_signature(path: &Path, line: u64, field: &str) -> Result<Vec<usize>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split('-')
        .map(|t| {
            t.parse()
                .map_err(|_| parse_err(path, line, format!("bad set signature {field:?}")))
        })
        .collect()
}

pub fn read_log(path: &Path) -> Result<PredictionLog> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let base = ["sample_id", "set_signature", "predicted_label", "mode"];
    let with_id = header.len() == 5 && &header[4] == "expert_id";
    if !(header.len() == 4 || with_id) || header.iter().zip(base).any(|(h, b)| h != b) {
        return Err(parse_err(
            path,
            1,
            "header must be sample_id,set_signature,predicted_label,mode[,expert_id]",
        ));
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        let predicted_label = rec[2]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad predicted_label {:?}", &rec[2])))?;
        let mode: Mode = rec[3]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad mode {:?}", &rec[3])))?;
        records.push(LogRecord {
            sample_id: rec[0].to_string(),
            set_signature: parse_signature(path, line, &rec[1])?,
            predicted_label,
            mode,
            expert_id: with_id.then(|| rec[4].to_string()),
        });
    }
    PredictionLog::new(records)
}

pub fn write_log(path: &Path, log: &PredictionLog) -> Result<()> {
    let with_id = log.records().iter().any(|r| r.expert_id.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id", "set_signature", "predicted_label", "mode"];
    if with_id {
        header.push("expert_id");
    }
    w.write_record(&header)?;
    for r in log.records() {
        let mut row = vec![
            r.sample_id.clone(),
            signature_of(&r.set_signature),
            r.predicted_label.to_string(),
            r.mode.as_str().to_string(),
        ];
        if with_id {
            row.push(r.expert_id.clone().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    atomic_write(path, &finish(w)?)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Trajectory rows; `alpha_index` is the 0-based arm in ascending α.
pub fn trajectory_csv(traj: &Trajectory, realization: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t",
        "algorithm",
        "realization",
        "alpha_index",
        "sample_id",
        "reward",
        "active_arms",
    ])?;
    for r in &traj.records {
        w.write_record([
            r.t.to_string(),
            traj.algorithm.name().to_string(),
            realization.to_string(),
            r.arm.to_string(),
            r.sample_id.clone(),
            (r.reward as u8).to_string(),
            r.active_arms.to_string(),
        ])?;
    }
    finish(w)
}

/// One realization's regret: `t,regret`, `t` from 1.
pub fn regret_csv(curve: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "regret"])?;
    for (t, r) in curve.iter().enumerate() {
        w.write_record([(t + 1).to_string(), r.to_string()])?;
    }
    finish(w)
}

/// Reads back a file written by [`regret_csv`].
pub fn read_regret(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let v = rec
            .get(1)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err(path, line, "bad regret row"))?;
        out.push(v);
    }
    Ok(out)
}

pub fn regret_summary_csv(summary: &RegretSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "mean", "stderr", "n"])?;
    for (t, (m, se)) in summary.mean.iter().zip(&summary.stderr).enumerate() {
        w.write_record([
            (t + 1).to_string(),
            m.to_string(),
            se.to_string(),
            summary.realizations.to_string(),
        ])?;
    }
    finish(w)
}

pub fn alpha_curve_csv(rows: &[AlphaRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "mean", "stderr", "n"])?;
    for r in rows {
        w.write_record([
            r.alpha.to_string(),
            r.mean.to_string(),
            r.stderr.to_string(),
            r.n.to_string(),
        ])?;
    }
    finish(w)
}

pub fn size_curve_csv(rows: &[SizeRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["set_size", "mean", "stderr", "n"])?;
    for r in rows {
        w.write_record([
            r.set_size.to_string(),
            r.mean.to_string(),
            r.stderr.to_string(),
            r.n.to_string(),
        ])?;
    }
    finish(w)
}

/// `alpha_index,alpha,accuracy,stderr`.
pub fn accuracy_table_csv(table: &ArmAccuracyTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha_index", "alpha", "accuracy", "stderr"])?;
    for (i, ((a, acc), se)) in table
        .alphas
        .iter()
        .zip(&table.accuracy)
        .zip(&table.stderr)
        .enumerate()
    {
        w.write_record([i.to_string(), a.to_string(), acc.to_string(), se.to_string()])?;
    }
    finish(w)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("{} has no file name", path.display())))?;
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Validated inputs for a run.
#[derive(Debug, Clone)]
pub struct Ingested {
    /// Every sample, calibration members included.
    pub table: ScoreTable,
    pub calibration: CalibrationSet,
    /// The table minus calibration members.
    pub pool: ScoreTable,
    pub log: Option<PredictionLog>,
}

pub fn ingest(scores: &Path, calibration: &Path, log: Option<&Path>) -> Result<Ingested> {
    let table = read_scores(scores)?;
    let ids = read_calibration_ids(calibration)?;
    let (calibration, pool) = table.split(&ids)?;
    let log = match log {
        Some(p) => {
            let log = read_log(p)?;
            log.validate_labels(table.n_labels())?;
            Some(log)
        }
        None => None,
    };
    Ok(Ingested {
        table,
        calibration,
        pool,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn scores_round_trip_and_unnormalized_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.csv",
            "sample_id,true_label,p_1,p_2\na,1,0.25,0.25\nb,2,0.1,0.9\n",
        );
        let t = read_scores(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("a").unwrap().probs, vec![0.25, 0.25]);
        let q = dir.path().join("out.csv");
        write_scores(&q, &t).unwrap();
        assert_eq!(read_scores(&q).unwrap().samples(), t.samples());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.csv",
            "sample_id,true_label,p_1,p_2\na,1,0.5,0.5\nb,2,0.1,x\n",
        );
        match read_scores(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write(
            dir.path(),
            "d.csv",
            "sample_id,true_label,p_1\na,1,0.5\na,1,0.5\n",
        );
        assert!(matches!(read_scores(&p), Err(Error::Parse { line: 3, .. })));
        let p = write(dir.path(), "h.csv", "id,label,p_1\n");
        assert!(matches!(read_scores(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "log.csv",
            "sample_id,set_signature,predicted_label,mode\na,1-3,3,strict\na,,2,lenient\n",
        );
        let log = read_log(&p).unwrap();
        assert_eq!(log.records()[0].set_signature, vec![1, 3]);
        assert!(log.records()[1].set_signature.is_empty());
        let q = dir.path().join("again.csv");
        write_log(&q, &log).unwrap();
        assert_eq!(read_log(&q).unwrap().records(), log.records());

        let bad = write(
            dir.path(),
            "bad.csv",
            "sample_id,set_signature,predicted_label,mode\na,1-3,3,sloppy\n",
        );
        assert!(matches!(read_log(&bad), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn ingest_excludes_calibration() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(
            dir.path(),
            "s.csv",
            "sample_id,true_label,p_1,p_2\na,1,0.9,0.1\nb,2,0.2,0.8\nc,1,0.6,0.4\n",
        );
        let c = write(dir.path(), "cal.txt", "b\n\n");
        let ing = ingest(&s, &c, None).unwrap();
        assert_eq!(ing.calibration.len(), 1);
        assert_eq!(ing.pool.len(), 2);
        assert!(ing.pool.get("b").is_none());
        let c = write(dir.path(), "bad.txt", "zzz\n");
        assert!(matches!(ingest(&s, &c, None), Err(Error::Validation(_))));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/f.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
