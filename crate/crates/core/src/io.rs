//! Plain-text file formats: matrices and samples as CSV, convergence traces
//! as CSV with a trailing status comment, existence verdicts as JSON lines.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cpmap::VectorTuple;
use crate::error::{Error, Result};
use crate::sinkhorn::{ConvergenceTrace, TraceRecord};
use crate::tyler::{ExistenceStatus, ExistenceVerdict};

pub const TRACE_HEADER: &str = "iter,f,grad_norm,step_dist";
const STATUS_PREFIX: &str = "#status=";

/// Numeric rows of a CSV file. Blank lines and lines starting with `#` are
/// skipped; `row` in errors is the 1-based line number.
pub fn read_rows<R: BufRead>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let row = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split(',')
            .map(|field| {
                let field = field.trim();
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row,
                        msg: format!("not a finite number: {field:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => {}
        }
        rows.push(values);
    }
    Ok(rows)
}

pub fn read_matrix<R: BufRead>(reader: R) -> Result<DMatrix<f64>> {
    let rows = read_rows(reader)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("matrix file has no rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| {
        rows[i][j]
    }))
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Samples, one per row; with `transpose` one per column.
pub fn read_vectors<R: BufRead>(reader: R, transpose: bool) -> Result<VectorTuple> {
    let rows = read_rows(reader)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("sample file has no rows".into()));
    }
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    if transpose {
        VectorTuple::from_columns(m)
    } else {
        VectorTuple::from_columns(m.transpose())
    }
}

pub fn write_vectors<W: Write>(w: W, x: &VectorTuple) -> Result<()> {
    write_matrix(w, &x.columns().transpose())
}

pub fn write_trace<W: Write>(mut w: W, trace: &ConvergenceTrace) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.records {
        writeln!(w, "{},{},{},{}", r.iter, r.f, r.grad_norm, r.step_dist)?;
    }
    writeln!(w, "{STATUS_PREFIX}{}", trace.status)?;
    Ok(())
}

pub fn read_trace<R: BufRead>(reader: R) -> Result<ConvergenceTrace> {
    let mut records = Vec::new();
    let mut status = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 {
            if line != TRACE_HEADER {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected header {TRACE_HEADER:?}"),
                });
            }
            continue;
        }
        if let Some(s) = line.strip_prefix(STATUS_PREFIX) {
            status = Some(s.parse()?);
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::Parse { row, msg };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("not a number: {s:?}")))
        };
        records.push(TraceRecord {
            iter: fields[0]
                .parse()
                .map_err(|_| bad(format!("bad iteration {:?}", fields[0])))?,
            f: num(fields[1])?,
            grad_norm: num(fields[2])?,
            step_dist: num(fields[3])?,
        });
    }
    let status = status.ok_or_else(|| Error::InvalidArgument("trace has no status line".into()))?;
    Ok(ConvergenceTrace { records, status })
}

/// One JSON line describing an existence verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub status: ExistenceStatus,
    pub indices: Vec<usize>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    /// `k n / p` for the witness subspace.
    pub kn_over_p: Option<f64>,
    pub exhaustive: bool,
}

impl VerdictRecord {
    pub fn new(verdict: &ExistenceVerdict, n: usize, p: usize) -> Self {
        let w = verdict.witness.as_ref();
        VerdictRecord {
            status: verdict.status,
            indices: w.map(|w| w.indices.clone()).unwrap_or_default(),
            k: w.map(|w| w.k),
            m: w.map(|w| w.m),
            kn_over_p: w.map(|w| w.threshold(n, p)),
            exhaustive: verdict.exhaustive,
        }
    }
}

pub fn write_verdict<W: Write>(mut w: W, record: &VerdictRecord) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writeln!(w, "{line}")?;
    Ok(())
}

pub fn read_verdicts<R: BufRead>(reader: R) -> Result<Vec<VerdictRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: idx + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::RunStatus;
    use crate::tyler::existence_check;

    #[test]
    fn vectors_round_trip_both_orientations() {
        let x = VectorTuple::from_rows(&[vec![1.0, -0.5], vec![0.1, 3.0], vec![2.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        write_vectors(&mut buf, &x).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "1,-0.5\n0.1,3\n2,2\n"
        );
        assert_eq!(read_vectors(&buf[..], false).unwrap(), x);
        let t = "1,0.1,2\n-0.5,3,2\n";
        assert_eq!(read_vectors(t.as_bytes(), true).unwrap(), x);
    }

    #[test]
    fn parse_errors_cite_the_row() {
        let err = read_vectors("1,0\n# comment\n1,x\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
        let err = read_vectors("1,0\n1,0,2\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
        assert!(read_vectors("".as_bytes(), false).is_err());
        assert!(matches!(
            read_vectors("1,0\n0,0\n".as_bytes(), false),
            Err(Error::AllZeroSample { index: 1 })
        ));
    }

    #[test]
    fn trace_round_trip() {
        let trace = ConvergenceTrace {
            records: vec![
                TraceRecord {
                    iter: 0,
                    f: 0.25,
                    grad_norm: 0.5,
                    step_dist: 0.0,
                },
                TraceRecord {
                    iter: 1,
                    f: 0.125,
                    grad_norm: 1e-9,
                    step_dist: 0.3,
                },
            ],
            status: RunStatus::Converged,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,f,grad_norm,step_dist\n0,0.25,0.5,0\n"));
        assert!(text.ends_with("#status=Converged\n"));
        assert_eq!(read_trace(&buf[..]).unwrap(), trace);
    }

    #[test]
    fn verdict_line() {
        let x = VectorTuple::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let record = VerdictRecord::new(&existence_check(&x, 16), 4, 2);
        let mut buf = Vec::new();
        write_verdict(&mut buf, &record).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.contains("\"status\":\"NoSolution\""), "{line}");
        assert!(line.contains("\"kn_over_p\":2.0"));
        assert_eq!(read_verdicts(&buf[..]).unwrap(), vec![record]);
    }
}
