//! Plain-text container for a problem instance.
//!
//! ```text
//! tsbl-problem 1
//! n 3
//! m 5
//! l 2
//! k 2
//! snr_db inf
//! seed 42
//! phi
//! <n lines of m values>
//! y
//! <n lines of l values>
//! x_gen                 (optional, with support)
//! <m lines of l values>
//! support
//! <k indices on one line>
//! ```
//!
//! Values are written in shortest round-trip form, so a write/read cycle
//! reproduces every entry bit for bit.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Result, SblError};
use crate::model::{GroundTruth, MmvProblem};

const MAGIC: &str = "tsbl-problem 1";

/// Header fields. `k` is the true support size (0 if unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemHeader {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub snr_db: f64,
    pub seed: u64,
}

fn fmt_err(msg: impl Into<String>) -> SblError {
    SblError::Format(msg.into())
}

fn write_matrix<W: Write>(w: &mut W, name: &str, x: &DMatrix<f64>) -> std::io::Result<()> {
    writeln!(w, "{name}")?;
    for row in x.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn write_problem<W: Write>(w: &mut W, problem: &MmvProblem, seed: u64) -> Result<()> {
    let io = |e: std::io::Error| fmt_err(e.to_string());
    let (k, snr) = match &problem.truth {
        Some(t) => (t.support.len(), t.snr_db),
        None => (0, f64::NAN),
    };
    writeln!(w, "{MAGIC}").map_err(io)?;
    for (key, v) in [
        ("n", problem.n()),
        ("m", problem.m()),
        ("l", problem.l()),
        ("k", k),
    ] {
        writeln!(w, "{key} {v}").map_err(io)?;
    }
    writeln!(w, "snr_db {snr:?}").map_err(io)?;
    writeln!(w, "seed {seed}").map_err(io)?;
    write_matrix(w, "phi", &problem.phi).map_err(io)?;
    write_matrix(w, "y", &problem.y).map_err(io)?;
    if let Some(t) = &problem.truth {
        write_matrix(w, "x_gen", &t.x_gen).map_err(io)?;
        writeln!(w, "support").map_err(io)?;
        let s: Vec<String> = t.support.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{}", s.join(" ")).map_err(io)?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<Option<String>> {
        loop {
            match self.inner.next() {
                None => return Ok(None),
                Some(Err(e)) => return Err(fmt_err(e.to_string())),
                Some(Ok(s)) => {
                    self.line_no += 1;
                    let t = s.trim();
                    if !t.is_empty() {
                        return Ok(Some(t.to_string()));
                    }
                }
            }
        }
    }

    fn expect_line(&mut self, what: &str) -> Result<String> {
        self.next_line()?
            .ok_or_else(|| fmt_err(format!("unexpected end of input, expected {what}")))
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.expect_line(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(fmt_err(format!("line {}: expected `{key}`", self.line_no)));
        }
        let v = parts
            .next()
            .ok_or_else(|| fmt_err(format!("line {}: missing value", self.line_no)))?;
        v.parse()
            .map_err(|_| fmt_err(format!("line {}: bad value `{v}` for {key}", self.line_no)))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let head = self.expect_line(name)?;
        if head != name {
            return Err(fmt_err(format!(
                "line {}: expected section `{name}`",
                self.line_no
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.expect_line(name)?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| fmt_err(format!("line {}: {e}", self.line_no)))?;
            if vals.len() != cols {
                return Err(fmt_err(format!(
                    "line {}: expected {cols} values, got {}",
                    self.line_no,
                    vals.len()
                )));
            }
            data.extend(vals);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}

pub fn read_problem<R: BufRead>(r: R) -> Result<(MmvProblem, ProblemHeader)> {
    let mut lines = Lines {
        inner: r.lines(),
        line_no: 0,
    };
    if lines.expect_line("header")? != MAGIC {
        return Err(fmt_err("missing `tsbl-problem 1` header"));
    }
    let header = ProblemHeader {
        n: lines.keyed("n")?,
        m: lines.keyed("m")?,
        l: lines.keyed("l")?,
        k: lines.keyed("k")?,
        snr_db: lines.keyed("snr_db")?,
        seed: lines.keyed("seed")?,
    };
    let phi = lines.matrix("phi", header.n, header.m)?;
    let y = lines.matrix("y", header.n, header.l)?;
    let mut problem = MmvProblem::new(phi, y)?;
    if lines.next_line()?.as_deref() == Some("x_gen") {
        let mut data = Vec::with_capacity(header.m * header.l);
        for _ in 0..header.m {
            let line = lines.expect_line("x_gen row")?;
            for t in line.split_whitespace() {
                data.push(t.parse::<f64>().map_err(|e| fmt_err(e.to_string()))?);
            }
        }
        if data.len() != header.m * header.l {
            return Err(fmt_err("x_gen has the wrong number of entries"));
        }
        let x_gen = DMatrix::from_row_slice(header.m, header.l, &data);
        if lines.expect_line("support")? != "support" {
            return Err(fmt_err("expected `support` after x_gen"));
        }
        let support = match lines.next_line()? {
            None => Vec::new(),
            Some(s) => s
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| fmt_err(e.to_string())))
                .collect::<Result<Vec<_>>>()?,
        };
        if support.len() != header.k {
            return Err(fmt_err(format!(
                "header says k={} but support has {}",
                header.k,
                support.len()
            )));
        }
        problem = problem.with_truth(GroundTruth {
            x_gen,
            support,
            snr_db: header.snr_db,
        })?;
    }
    Ok((problem, header))
}
