use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qtraj::stats::{EnsembleResult, Estimate};

use crate::error::CliError;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

/// File-system safe form of an observable name.
pub fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

pub fn series_csv(times: &[f64], estimates: &[Estimate], imaginary: bool) -> String {
    let mut out = String::from("time,mean,stderr,n_traj\n");
    for (t, e) in times.iter().zip(estimates) {
        let (mean, se) = if imaginary { (e.mean().im, e.stderr_im) } else { (e.mean().re, e.stderr_re) };
        writeln!(out, "{},{},{},{}", float(*t), float(mean), opt_float(se), e.n).expect("write to string");
    }
    out
}

/// One `<observable>.csv` per series holding real parts, plus
/// `<observable>_im.csv` when any imaginary part is nonzero.
pub fn write_ensemble(dir: &Path, res: &EnsembleResult) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, series) in res.observables.iter().zip(&res.estimates) {
        let stem = file_stem(name);
        let file = format!("{stem}.csv");
        fs::write(dir.join(&file), series_csv(&res.times, series, false))?;
        written.push(file);
        let complex = series.iter().any(|e| e.mean().im != 0.0 || e.stderr_im.is_some_and(|s| s != 0.0));
        if complex {
            let file = format!("{stem}_im.csv");
            fs::write(dir.join(&file), series_csv(&res.times, series, true))?;
            written.push(file);
        }
    }
    Ok(written)
}

/// A table of exact values: `time`, then `<name>` and `<name>_im` per
/// observable, then `purity`.
pub struct ExactTable {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// Indexed `[observable][time]`.
    pub values: Vec<Vec<qtraj::linalg::C64>>,
    pub purity: Vec<f64>,
}

pub const EXACT_FILE: &str = "exact.csv";

impl ExactTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for n in &self.names {
            write!(out, ",{n},{n}_im").expect("write to string");
        }
        out.push_str(",purity\n");
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&float(*t));
            for v in &self.values {
                write!(out, ",{},{}", float(v[k].re), float(v[k].im)).expect("write to string");
            }
            writeln!(out, ",{}", float(self.purity[k])).expect("write to string");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::MissingInput(format!("{EXACT_FILE}: {msg}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
        if header.len() < 2 || header[0] != "time" || header[header.len() - 1] != "purity" || !header.len().is_multiple_of(2) {
            return Err(bad("unexpected header".into()));
        }
        let names: Vec<String> = header[1..header.len() - 1].iter().step_by(2).map(|s| s.to_string()).collect();
        let mut table = ExactTable { times: Vec::new(), values: vec![Vec::new(); names.len()], names, purity: Vec::new() };
        for (row, line) in lines.enumerate() {
            let cells = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", row + 2)))?;
            if cells.len() != header.len() {
                return Err(bad(format!("row {} has {} cells, expected {}", row + 2, cells.len(), header.len())));
            }
            table.times.push(cells[0]);
            for (o, v) in table.values.iter_mut().enumerate() {
                v.push(qtraj::linalg::C64::new(cells[1 + 2 * o], cells[2 + 2 * o]));
            }
            table.purity.push(cells[cells.len() - 1]);
        }
        Ok(table)
    }

    pub fn series(&self, name: &str) -> Option<&[qtraj::linalg::C64]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qtraj::linalg::C64;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn exact_table_round_trips() {
        let t = ExactTable {
            times: vec![0.0, 0.5],
            names: vec!["P_e".into(), "sigma_plus".into()],
            values: vec![vec![C64::new(0.0, 0.0), C64::new(0.1, 0.0)], vec![C64::new(0.2, 0.3), C64::new(-0.1, 1e-3)]],
            purity: vec![1.0, 0.9],
        };
        let back = ExactTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back.times, t.times);
        assert_eq!(back.names, t.names);
        assert_eq!(back.values, t.values);
        assert_eq!(back.purity, t.purity);
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("hop_0_1"), "hop_0_1");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
