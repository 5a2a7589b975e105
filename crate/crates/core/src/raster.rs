//! Regular-grid covariate rasters in ESRI ASCII grid format.
//!
//! Row 0 of a [`Raster`] is the northernmost row, matching the file layout.
//! Cell lookup is nearest-cell (the containing cell); a position on the edge
//! shared by two cells belongs to the cell with the larger column index or the
//! cell further north.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Georeferencing for a grid of square cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterHeader {
    pub ncols: usize,
    pub nrows: usize,
    pub xll: f64,
    pub yll: f64,
    pub cellsize: f64,
    pub nodata: f64,
}

impl RasterHeader {
    pub fn new(ncols: usize, nrows: usize, xll: f64, yll: f64, cellsize: f64, nodata: f64) -> Result<Self> {
        let header = RasterHeader {
            ncols,
            nrows,
            xll,
            yll,
            cellsize,
            nodata,
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<()> {
        if self.ncols == 0 || self.nrows == 0 {
            return Err(Error::Stack("raster must have at least one row and column".into()));
        }
        if !(self.cellsize > 0.0) || !self.cellsize.is_finite() {
            return Err(Error::Stack(format!("cellsize must be positive, got {}", self.cellsize)));
        }
        if !self.xll.is_finite() || !self.yll.is_finite() {
            return Err(Error::Stack("corner coordinates must be finite".into()));
        }
        Ok(())
    }

    pub fn xmax(&self) -> f64 {
        self.xll + self.ncols as f64 * self.cellsize
    }

    pub fn ymax(&self) -> f64 {
        self.yll + self.nrows as f64 * self.cellsize
    }

    /// `(row, col)` of the cell containing `(x, y)`, or `None` outside the
    /// half-open extent `[xll, xmax) x [yll, ymax)`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= self.xll && x < self.xmax() && y >= self.yll && y < self.ymax()) {
            return None;
        }
        let col = ((x - self.xll) / self.cellsize).floor() as usize;
        let row_up = ((y - self.yll) / self.cellsize).floor() as usize;
        // guards against rounding right at the upper edge
        let col = col.min(self.ncols - 1);
        let row_up = row_up.min(self.nrows - 1);
        Some((self.nrows - 1 - row_up, col))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x = self.xll + (col as f64 + 0.5) * self.cellsize;
        let y = self.yll + ((self.nrows - 1 - row) as f64 + 0.5) * self.cellsize;
        (x, y)
    }

    /// Bitwise equality of the georeferencing fields.
    pub fn same_grid(&self, other: &RasterHeader) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.xll.to_bits() == other.xll.to_bits()
            && self.yll.to_bits() == other.yll.to_bits()
            && self.cellsize.to_bits() == other.cellsize.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    header: RasterHeader,
    values: Vec<f64>,
}

impl Raster {
    /// Builds a raster from row-major values (row 0 northernmost).
    pub fn new(header: RasterHeader, values: Vec<f64>) -> Result<Self> {
        header.validate()?;
        if values.len() != header.ncols * header.nrows {
            return Err(Error::Stack(format!(
                "expected {} values, got {}",
                header.ncols * header.nrows,
                values.len()
            )));
        }
        let raster = Raster { header, values };
        if let Some(v) = raster.values.iter().find(|v| !raster.is_nodata(**v) && !v.is_finite()) {
            return Err(Error::Stack(format!("non-finite cell value {v}")));
        }
        Ok(raster)
    }

    /// Raster with every cell set by `f(x, y)` evaluated at the cell center.
    pub fn from_fn(header: RasterHeader, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(header.ncols * header.nrows);
        for row in 0..header.nrows {
            for col in 0..header.ncols {
                let (x, y) = header.cell_center(row, col);
                values.push(f(x, y));
            }
        }
        Raster::new(header, values)
    }

    pub fn header(&self) -> &RasterHeader {
        &self.header
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.header.nodata || (v.is_nan() && self.header.nodata.is_nan())
    }

    /// Cell value, `None` for nodata.
    pub fn value_at(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.header.ncols + col];
        (!self.is_nodata(v)).then_some(v)
    }

    fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(move |v| !self.is_nodata(*v))
    }

    /// Returns the standardized layer and the `(mean, sd)` used, with the
    /// population (divide-by-n) standard deviation.
    pub fn standardize(&self) -> Result<(Raster, f64, f64)> {
        let n = self.valid_values().count();
        if n < 2 {
            return Err(Error::DegenerateLayer(format!("{n} valid cells")));
        }
        let mean = self.valid_values().sum::<f64>() / n as f64;
        let var = self.valid_values().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::DegenerateLayer(format!("all cells equal {mean}")));
        }
        let values = self
            .values
            .iter()
            .map(|&v| if self.is_nodata(v) { v } else { (v - mean) / sd })
            .collect();
        Ok((
            Raster {
                header: self.header,
                values,
            },
            mean,
            sd,
        ))
    }
}

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text)
}

const HEADER_KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];

/// Parses the text of an ESRI ASCII grid.
pub fn parse_ascii_grid(text: &str) -> Result<Raster> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut fields: [Option<f64>; 6] = [None; 6];
    let mut last_line = 0;

    for _ in 0..HEADER_KEYS.len() {
        let (lineno, line) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::parse(last_line + 1, "unexpected end of file in header"))?;
        last_line = lineno;
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or_default().to_ascii_lowercase();
        let slot = HEADER_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::parse(lineno, format!("unknown header key '{key}'")))?;
        if fields[slot].is_some() {
            return Err(Error::parse(lineno, format!("duplicate header key '{key}'")));
        }
        let value = tokens
            .next()
            .ok_or_else(|| Error::parse(lineno, format!("missing value for '{key}'")))?;
        if tokens.next().is_some() {
            return Err(Error::parse(lineno, format!("trailing tokens after '{key}'")));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| Error::parse(lineno, format!("non-numeric value '{value}' for '{key}'")))?;
        fields[slot] = Some(value);
    }

    let [ncols, nrows, xll, yll, cellsize, nodata] = fields.map(|f| f.unwrap_or(f64::NAN));
    let as_count = |v: f64, name: &str| -> Result<usize> {
        if v.fract() == 0.0 && (1.0..=1e8).contains(&v) {
            Ok(v as usize)
        } else {
            Err(Error::parse(last_line, format!("{name} must be a positive integer, got {v}")))
        }
    };
    let ncols = as_count(ncols, "ncols")?;
    let nrows = as_count(nrows, "nrows")?;
    if ncols.checked_mul(nrows).is_none_or(|n| n > 100_000_000) {
        return Err(Error::parse(last_line, "grid too large"));
    }
    let header = RasterHeader::new(ncols, nrows, xll, yll, cellsize, nodata)
        .map_err(|e| Error::parse(last_line, e.to_string()))?;

    let mut values = Vec::with_capacity(ncols * nrows);
    let mut rows_read = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == nrows {
            return Err(Error::parse(lineno, format!("more than {nrows} data rows")));
        }
        let before = values.len();
        for token in line.split_whitespace() {
            let v: f64 = token
                .parse()
                .map_err(|_| Error::parse(lineno, format!("non-numeric token '{token}'")))?;
            if !v.is_finite() && !(v.is_nan() && nodata.is_nan()) && v != nodata {
                return Err(Error::parse(lineno, format!("non-finite value '{token}'")));
            }
            values.push(v);
        }
        let count = values.len() - before;
        if count != ncols {
            return Err(Error::parse(
                lineno,
                format!("expected {ncols} values in row, found {count}"),
            ));
        }
        rows_read += 1;
    }
    if rows_read != nrows {
        return Err(Error::parse(
            last_line,
            format!("expected {nrows} data rows, found {rows_read}"),
        ));
    }
    Raster::new(header, values)
}

/// Formats a number with at most 10 significant digits, trimming trailing
/// zeros, in fixed notation for moderate exponents and scientific otherwise.
/// Values that would round past the largest finite `f64` are written exactly.
pub fn format_sig10(v: f64) -> String {
    let s = sig10(v);
    if v.is_finite() && !s.parse::<f64>().is_ok_and(f64::is_finite) {
        return format!("{v:e}");
    }
    s
}

fn sig10(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.9e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn ascii_grid_string(raster: &Raster) -> String {
    let h = raster.header();
    let mut out = String::new();
    writeln!(out, "ncols {}", h.ncols).unwrap();
    writeln!(out, "nrows {}", h.nrows).unwrap();
    // header fields round-trip exactly so rewritten grids still align
    writeln!(out, "xllcorner {}", h.xll).unwrap();
    writeln!(out, "yllcorner {}", h.yll).unwrap();
    writeln!(out, "cellsize {}", h.cellsize).unwrap();
    writeln!(out, "NODATA_value {}", h.nodata).unwrap();
    for row in raster.values().chunks(h.ncols) {
        let line: Vec<String> = row.iter().map(|v| format_sig10(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_ascii_grid(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ascii_grid_string(raster)).map_err(|e| Error::io(path, e))
}

/// Ordered covariate layers sharing one grid.
#[derive(Debug, Clone)]
pub struct CovariateStack {
    layers: Vec<(String, Raster)>,
    includes_intercept: bool,
}

impl CovariateStack {
    pub fn new(layers: Vec<(String, Raster)>, includes_intercept: bool) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Stack("a covariate stack needs at least one layer".into()))?;
        let header = *first.1.header();
        for (i, (name, raster)) in layers.iter().enumerate() {
            if layers[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::Stack(format!("duplicate layer name '{name}'")));
            }
            if !raster.header().same_grid(&header) {
                return Err(Error::Stack(format!("layer '{name}' is not on the same grid as '{}'", first.0)));
            }
        }
        Ok(CovariateStack {
            layers,
            includes_intercept,
        })
    }

    pub fn header(&self) -> &RasterHeader {
        self.layers[0].1.header()
    }

    pub fn layers(&self) -> &[(String, Raster)] {
        &self.layers
    }

    pub fn includes_intercept(&self) -> bool {
        self.includes_intercept
    }

    /// Length of the design vector.
    pub fn p(&self) -> usize {
        self.layers.len() + usize::from(self.includes_intercept)
    }

    /// Coefficient names in design-vector order.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.p());
        if self.includes_intercept {
            names.push("intercept".to_string());
        }
        names.extend(self.layers.iter().map(|(n, _)| n.clone()));
        names
    }

    /// Design vector for one cell; `None` when any layer is nodata there.
    pub fn cell_covariates(&self, row: usize, col: usize) -> Option<Vec<f64>> {
        let mut w = Vec::with_capacity(self.p());
        self.cell_covariates_into(row, col, &mut w).then_some(w)
    }

    fn cell_covariates_into(&self, row: usize, col: usize, w: &mut Vec<f64>) -> bool {
        w.clear();
        if self.includes_intercept {
            w.push(1.0);
        }
        for (_, raster) in &self.layers {
            match raster.value_at(row, col) {
                Some(v) => w.push(v),
                None => return false,
            }
        }
        true
    }

    /// True when `(x, y)` is inside the extent on a cell valid in every layer.
    pub fn is_valid(&self, x: f64, y: f64) -> bool {
        match self.header().cell_of(x, y) {
            Some((r, c)) => self.layers.iter().all(|(_, l)| l.value_at(r, c).is_some()),
            None => false,
        }
    }

    /// Covariate vector at a planar position (containing-cell lookup).
    pub fn extract(&self, x: f64, y: f64) -> Result<Vec<f64>> {
        let mut w = Vec::with_capacity(self.p());
        self.extract_into(x, y, &mut w)?;
        Ok(w)
    }

    /// As [`extract`](Self::extract), writing into a reusable buffer.
    pub fn extract_into(&self, x: f64, y: f64, w: &mut Vec<f64>) -> Result<()> {
        let (row, col) = self.header().cell_of(x, y).ok_or(Error::OutOfDomain { x, y })?;
        if self.cell_covariates_into(row, col, w) {
            Ok(())
        } else {
            Err(Error::NoData { x, y })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID_2X2: &str = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\nNODATA_value -9999\n1 2\n3 4\n";

    #[test]
    fn reads_small_grid() {
        let r = parse_ascii_grid(GRID_2X2).unwrap();
        assert_eq!(r.value_at(0, 1), Some(2.0));
        assert_eq!(r.value_at(1, 0), Some(3.0));
        assert_eq!(r.header().cellsize, 10.0);
    }

    #[test]
    fn header_keys_are_case_insensitive() {
        let text = GRID_2X2.replace("ncols", "NCOLS").replace("NODATA_value", "nodata_VALUE");
        assert!(parse_ascii_grid(&text).is_ok());
    }

    #[test]
    fn short_row_is_rejected_with_line_number() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n";
        match parse_ascii_grid(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_is_rejected() {
        let text = GRID_2X2.replace("3 4", "3 x");
        assert!(matches!(parse_ascii_grid(&text), Err(Error::Parse { line: 8, .. })));
    }

    #[test]
    fn missing_rows_and_bad_header() {
        let text = GRID_2X2.replace("3 4\n", "");
        assert!(parse_ascii_grid(&text).is_err());
        let text = GRID_2X2.replace("cellsize 10", "cellsize -1");
        assert!(parse_ascii_grid(&text).is_err());
        let text = GRID_2X2.replace("ncols 2", "ncols 2.5");
        assert!(parse_ascii_grid(&text).is_err());
    }

    #[test]
    fn write_read_write_is_byte_stable() {
        let text = "ncols 3\nnrows 1\nxllcorner 500000.25\nyllcorner 4100000\ncellsize 30\nNODATA_value -9999\n0.1234567891234 -9999 1e-12\n";
        let r = parse_ascii_grid(text).unwrap();
        let once = ascii_grid_string(&r);
        let twice = ascii_grid_string(&parse_ascii_grid(&once).unwrap());
        assert_eq!(once, twice);
        assert!(once.contains("0.1234567891 -9999 1e-12"));
    }

    #[test]
    fn sig10_formatting() {
        assert_eq!(format_sig10(2.0), "2");
        assert_eq!(format_sig10(-0.5), "-0.5");
        assert_eq!(format_sig10(1.0 / 3.0), "0.3333333333");
        assert_eq!(format_sig10(123456.789), "123456.789");
        assert_eq!(format_sig10(1.5e12), "1.5e12");
        assert_eq!(format_sig10(f64::MAX).parse::<f64>().unwrap(), f64::MAX);
    }

    fn grid(ncols: usize, nrows: usize, cellsize: f64) -> RasterHeader {
        RasterHeader::new(ncols, nrows, 100.0, 200.0, cellsize, -9999.0).unwrap()
    }

    #[test]
    fn extract_at_cell_center_and_edges() {
        let h = grid(3, 2, 10.0);
        let r = Raster::new(h, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let stack = CovariateStack::new(vec![("a".into(), r)], true).unwrap();
        // center of row 0 (north), col 2
        let (x, y) = h.cell_center(0, 2);
        assert_eq!(stack.extract(x, y).unwrap(), vec![1.0, 3.0]);
        // epsilon inside the west edge
        assert_eq!(stack.extract(100.0 + 1e-9, 205.0).unwrap(), vec![1.0, 4.0]);
        // shared edge x = 110 belongs to the right cell, y = 210 to the upper cell
        assert_eq!(stack.extract(110.0, 205.0).unwrap(), vec![1.0, 5.0]);
        assert_eq!(stack.extract(105.0, 210.0).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(stack.extract(130.0, 205.0), Err(Error::OutOfDomain { .. })));
        assert!(matches!(stack.extract(99.999, 205.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn extract_constant_raster_with_intercept() {
        let h = grid(4, 4, 5.0);
        let r = Raster::from_fn(h, |_, _| 7.0).unwrap();
        let stack = CovariateStack::new(vec![("c".into(), r)], true).unwrap();
        assert_eq!(stack.extract(111.0, 213.0).unwrap(), vec![1.0, 7.0]);
    }

    #[test]
    fn extract_nodata_reports_position() {
        let h = grid(2, 1, 1.0);
        let r = Raster::new(h, vec![-9999.0, 1.0]).unwrap();
        let stack = CovariateStack::new(vec![("a".into(), r)], false).unwrap();
        assert!(matches!(stack.extract(100.5, 200.5), Err(Error::NoData { x, .. }) if x == 100.5));
        assert!(!stack.is_valid(100.5, 200.5));
        assert!(stack.is_valid(101.5, 200.5));
    }

    #[test]
    fn same_cell_same_covariates() {
        let h = grid(5, 5, 3.0);
        let r = Raster::from_fn(h, |x, y| x * 0.1 - y).unwrap();
        let stack = CovariateStack::new(vec![("a".into(), r)], true).unwrap();
        for k in 0..30 {
            let dx = (k as f64) * 0.099;
            assert_eq!(stack.extract(106.0 + dx, 209.0).unwrap(), stack.extract(106.0, 209.0 + dx).unwrap());
        }
    }

    #[test]
    fn stack_rejects_duplicates_and_mismatched_grids() {
        let r = Raster::from_fn(grid(2, 2, 1.0), |_, _| 1.0).unwrap();
        let other = Raster::from_fn(grid(2, 2, 2.0), |_, _| 1.0).unwrap();
        assert!(CovariateStack::new(vec![("a".into(), r.clone()), ("a".into(), r.clone())], true).is_err());
        assert!(CovariateStack::new(vec![("a".into(), r), ("b".into(), other)], true).is_err());
    }

    #[test]
    fn standardize_two_cells() {
        let r = Raster::new(grid(2, 1, 1.0), vec![0.0, 2.0]).unwrap();
        let (s, mean, sd) = r.standardize().unwrap();
        assert_eq!(s.values(), &[-1.0, 1.0]);
        assert_eq!((mean, sd), (1.0, 1.0));
    }

    #[test]
    fn standardize_is_idempotent_and_preserves_nodata() {
        let vals: Vec<f64> = (0..100).map(|i| ((i * 37 % 101) as f64).sin() * 4.0 + 2.0).collect();
        let mut with_gap = vals.clone();
        with_gap[17] = -9999.0;
        let r = Raster::new(grid(10, 10, 1.0), with_gap).unwrap();
        let (s, _, _) = r.standardize().unwrap();
        assert_eq!(s.values()[17], -9999.0);
        let valid: Vec<f64> = s.values().iter().copied().filter(|v| *v != -9999.0).collect();
        let n = valid.len() as f64;
        let m = valid.iter().sum::<f64>() / n;
        let sd = (valid.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        let (s2, _, _) = s.standardize().unwrap();
        for (a, b) in s.values().iter().zip(s2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_constant_layer_fails() {
        let r = Raster::from_fn(grid(3, 3, 1.0), |_, _| 4.0).unwrap();
        assert!(matches!(r.standardize(), Err(Error::DegenerateLayer(_))));
    }
}
