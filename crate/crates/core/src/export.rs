//! CSV artifacts. Every file starts with `#` comment lines echoing the
//! configuration hash and seed, followed by a header row.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::occs::TraceStep;
use crate::simlab::{CcdfCurve, PsdEstimate};
use crate::spectral::CMatrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn writer<W: Write>(mut out: W, prov: &Provenance, header: &[&str]) -> Result<csv::Writer<W>> {
    writeln!(out, "# config_hash={}", prov.config_hash)?;
    writeln!(out, "# seed={}", prov.seed)?;
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// Generic table with the provenance header, for run summaries and reports.
pub fn write_table<W, I, R>(out: W, prov: &Provenance, header: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut csv = writer(out, prov, header)?;
    for row in rows {
        csv.write_record(row)?;
    }
    finish(csv)
}

pub fn write_w_csv<W: Write>(out: W, w: &CMatrix, prov: &Provenance) -> Result<()> {
    let mut csv = writer(out, prov, &["row", "col", "re", "im"])?;
    for r in 0..w.nrows() {
        for c in 0..w.ncols() {
            let z = w[(r, c)];
            csv.write_record([r.to_string(), c.to_string(), z.re.to_string(), z.im.to_string()])?;
        }
    }
    finish(csv)
}

/// Reads a matrix written by [`write_w_csv`]. Missing entries are zero.
pub fn read_w_csv<R: Read>(input: R) -> Result<CMatrix> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).ok_or_else(|| Error::Io(format!("short record {record:?}")));
        let parse_err = |e: &dyn std::fmt::Display| Error::Io(format!("bad field in {record:?}: {e}"));
        let r: usize = field(0)?.parse().map_err(|e| parse_err(&e))?;
        let c: usize = field(1)?.parse().map_err(|e| parse_err(&e))?;
        let re: f64 = field(2)?.parse().map_err(|e| parse_err(&e))?;
        let im: f64 = field(3)?.parse().map_err(|e| parse_err(&e))?;
        entries.push((r, c, Complex64::new(re, im)));
    }
    let rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let cols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let mut m = DMatrix::zeros(rows, cols);
    for (r, c, z) in entries {
        m[(r, c)] = z;
    }
    Ok(m)
}

pub fn write_trace_csv<W: Write>(out: W, steps: &[TraceStep], prov: &Provenance) -> Result<()> {
    let mut csv = writer(out, prov, &["step", "chosen_index", "theta", "mean_cc_power", "p_oob_db"])?;
    for (i, s) in steps.iter().enumerate() {
        csv.write_record([
            i.to_string(),
            s.chosen.map(|k| k.to_string()).unwrap_or_default(),
            s.theta.to_string(),
            s.mean_cc_power.to_string(),
            s.p_oob_db.to_string(),
        ])?;
    }
    finish(csv)
}

pub fn write_psd_csv<W: Write>(out: W, psd: &PsdEstimate, prov: &Provenance) -> Result<()> {
    let mut csv = writer(out, prov, &["freq_norm", "psd_db"])?;
    for (f, p) in psd.freq.iter().zip(&psd.psd_db) {
        csv.write_record([f.to_string(), p.to_string()])?;
    }
    finish(csv)
}

/// Exports the curve at its sample points.
pub fn write_ccdf_csv<W: Write>(out: W, curve: &CcdfCurve, prov: &Provenance) -> Result<()> {
    let mut csv = writer(out, prov, &["papr_db", "ccdf"])?;
    for (x, p) in curve.papr_db.iter().zip(&curve.prob) {
        csv.write_record([x.to_string(), p.to_string()])?;
    }
    finish(csv)
}
