//! Telemetry tracks and the moving-average motility pre-estimate.
//!
//! Units are fixed at ingestion: time in hours, positions in meters, motility
//! in square meters per hour.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};

/// Motility estimates below this value are clamped to it.
pub const DELTA_FLOOR: f64 = 1e-6;

pub const DEFAULT_WINDOW_HOURS: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// One displacement between consecutive fixes. `index` is the position of
/// the ending fix in the track, so steps are numbered `1..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub index: usize,
    pub prev: (f64, f64),
    pub curr: (f64, f64),
    pub dt: f64,
}

impl Step {
    pub fn squared_length(&self) -> f64 {
        let dx = self.curr.0 - self.prev.0;
        let dy = self.curr.1 - self.prev.1;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    fixes: Vec<Fix>,
    source_id: String,
}

impl Track {
    pub fn new(fixes: Vec<Fix>, source_id: impl Into<String>) -> Result<Self> {
        if fixes.len() < 3 {
            return Err(Error::InvalidTrack(format!(
                "a track needs at least 3 fixes, got {}",
                fixes.len()
            )));
        }
        for (k, f) in fixes.iter().enumerate() {
            if !(f.t.is_finite() && f.x.is_finite() && f.y.is_finite()) {
                return Err(Error::InvalidTrack(format!("fix {k} has a non-finite field")));
            }
        }
        for (k, pair) in fixes.windows(2).enumerate() {
            if pair[1].t == pair[0].t {
                return Err(Error::InvalidTrack(format!(
                    "duplicate timestamp {} at fixes {} and {}",
                    pair[0].t,
                    k,
                    k + 1
                )));
            }
            if pair[1].t < pair[0].t {
                return Err(Error::InvalidTrack(format!(
                    "timestamps decrease between fixes {} and {}",
                    k,
                    k + 1
                )));
            }
        }
        Ok(Track {
            fixes,
            source_id: source_id.into(),
        })
    }

    pub fn fixes(&self) -> &[Fix] {
        &self.fixes
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// The `n - 1` steps of the track in time order.
    pub fn steps(&self) -> Vec<Step> {
        self.fixes
            .windows(2)
            .enumerate()
            .map(|(k, pair)| Step {
                index: k + 1,
                prev: (pair[0].x, pair[0].y),
                curr: (pair[1].x, pair[1].y),
                dt: pair[1].t - pair[0].t,
            })
            .collect()
    }
}

/// Per-step homogenized motility, aligned with [`Track::steps`].
#[derive(Debug, Clone, PartialEq)]
pub struct MotilitySeries {
    pub delta_bar: Vec<f64>,
    pub window_hours: f64,
    pub n_i: Vec<usize>,
}

/// Moving-average motility estimate. For the step ending at `t_i`, averages
/// `|s(t_j) - s(t_{j-1})|^2 / (4 dt_j)` over every step `j` with
/// `|t_j - t_i| <= window_hours / 2`; the window is truncated at the track ends.
pub fn estimate_delta_bar(track: &Track, window_hours: f64) -> Result<MotilitySeries> {
    if !(window_hours > 0.0) || !window_hours.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "window_hours must be positive, got {window_hours}"
        )));
    }
    let steps = track.steps();
    let times: Vec<f64> = track.fixes()[1..].iter().map(|f| f.t).collect();
    let terms: Vec<f64> = steps.iter().map(|s| s.squared_length() / (4.0 * s.dt)).collect();
    let half = window_hours / 2.0;

    let mut delta_bar = Vec::with_capacity(steps.len());
    let mut n_i = Vec::with_capacity(steps.len());
    let mut lo = 0;
    let mut hi = 0;
    for &ti in &times {
        while ti - times[lo] > half {
            lo += 1;
        }
        while hi < times.len() && times[hi] - ti <= half {
            hi += 1;
        }
        let n = hi - lo;
        let mean = terms[lo..hi].iter().sum::<f64>() / n as f64;
        delta_bar.push(mean.max(DELTA_FLOOR));
        n_i.push(n);
    }
    Ok(MotilitySeries {
        delta_bar,
        window_hours,
        n_i,
    })
}

pub fn read_track(path: impl AsRef<Path>) -> Result<Track> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_track(&text, id)
}

#[derive(Clone, Copy, PartialEq)]
enum TimeFormat {
    Hours,
    Timestamp,
}

fn parse_time(token: &str) -> Option<(f64, TimeFormat)> {
    if let Ok(t) = token.parse::<f64>() {
        return Some((t, TimeFormat::Hours));
    }
    let seconds = if let Ok(dt) = DateTime::parse_from_rfc3339(token) {
        dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9
    } else {
        let naive = NaiveDateTime::parse_from_str(token, "%Y-%m-%dT%H:%M:%S%.f")
            .or_else(|_| NaiveDateTime::parse_from_str(token, "%Y-%m-%d %H:%M:%S%.f"))
            .ok()?
            .and_utc();
        naive.timestamp() as f64 + f64::from(naive.timestamp_subsec_nanos()) * 1e-9
    };
    Some((seconds / 3600.0, TimeFormat::Timestamp))
}

/// Parses telemetry CSV text with header `t,x,y`. `t` is either decimal
/// hours or ISO-8601 timestamps (UTC unless an offset is given), converted to
/// hours since the Unix epoch; one file uses one convention.
pub fn parse_track(text: &str, source_id: impl Into<String>) -> Result<Track> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["t", "x", "y"] {
        return Err(Error::parse(1, format!("expected header 't,x,y', found '{}'", cols.join(","))));
    }

    let mut fixes = Vec::new();
    let mut format = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::parse(line, format!("expected 3 fields, found {}", record.len())));
        }
        let (t, fmt) = parse_time(&record[0])
            .ok_or_else(|| Error::parse(line, format!("unparseable time '{}'", &record[0])))?;
        match format {
            None => format = Some(fmt),
            Some(f) if f != fmt => {
                return Err(Error::parse(line, "mixed numeric and timestamp time columns"))
            }
            _ => {}
        }
        let coord = |k: usize, name: &str| -> Result<f64> {
            record[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("non-numeric {name} '{}'", &record[k])))
        };
        if !t.is_finite() {
            return Err(Error::parse(line, "non-finite time"));
        }
        fixes.push(Fix {
            t,
            x: coord(1, "x")?,
            y: coord(2, "y")?,
        });
    }
    Track::new(fixes, source_id)
}

/// CSV text with header `t,x,y`, numbers printed in shortest round-trip form.
pub fn track_csv_string(track: &Track) -> String {
    let mut out = String::from("t,x,y\n");
    for f in track.fixes() {
        writeln!(out, "{},{},{}", f.t, f.x, f.y).unwrap();
    }
    out
}

pub fn write_track(track: &Track, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, track_csv_string(track)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track_from(points: &[(f64, f64, f64)]) -> Track {
        Track::new(
            points.iter().map(|&(t, x, y)| Fix { t, x, y }).collect(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let tr = parse_track("t,x,y\n0,0,0\n3,1,0\n7.5,1,1\n", "a").unwrap();
        assert_eq!(tr.len(), 3);
        let dts: Vec<f64> = tr.steps().iter().map(|s| s.dt).collect();
        assert_eq!(dts, vec![3.0, 4.5]);
    }

    #[test]
    fn rejects_bad_tracks() {
        let dup = parse_track("t,x,y\n0,0,0\n3,1,0\n3,1,1\n", "a");
        assert!(matches!(dup, Err(Error::InvalidTrack(m)) if m.contains("duplicate")));
        let back = parse_track("t,x,y\n0,0,0\n3,1,0\n2,1,1\n", "a");
        assert!(matches!(back, Err(Error::InvalidTrack(m)) if m.contains("decrease")));
        assert!(parse_track("t,x,y\n0,0,0\n3,1,0\n", "a").is_err());
        assert!(matches!(
            parse_track("t,x,y\n0,0,0\n3,abc,0\n4,1,1\n", "a"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_track("x,y,t\n0,0,0\n", "a").is_err());
    }

    #[test]
    fn parses_iso_timestamps() {
        let text = "t,x,y\n2019-01-01T00:00:00Z,0,0\n2019-01-01T03:00:00Z,1,0\n2019-01-01 06:30:00,1,1\n";
        let tr = parse_track(text, "iso").unwrap();
        let dts: Vec<f64> = tr.steps().iter().map(|s| s.dt).collect();
        assert!((dts[0] - 3.0).abs() < 1e-9 && (dts[1] - 3.5).abs() < 1e-9);
        assert!(parse_track("t,x,y\n0,0,0\n2019-01-01T03:00:00Z,1,0\n5,1,1\n", "m").is_err());
    }

    #[test]
    fn regular_150_fix_track() {
        let pts: Vec<(f64, f64, f64)> = (0..150).map(|k| (3.0 * k as f64, k as f64, 0.0)).collect();
        let tr = track_from(&pts);
        assert_eq!(tr.len(), 150);
        let steps = tr.steps();
        assert_eq!(steps.len(), 149);
        assert!(steps.iter().all(|s| s.dt == 3.0));
    }

    #[test]
    fn steps_pair_consecutive_fixes() {
        let tr = track_from(&[(0., 0., 0.), (1., 1., 0.), (2., 1., 1.)]);
        let s = tr.steps();
        assert_eq!((s[0].prev, s[0].curr), ((0., 0.), (1., 0.)));
        assert_eq!((s[1].prev, s[1].curr), ((1., 0.), (1., 1.)));
        assert_eq!(s[1].index, 2);
    }

    #[test]
    fn constant_displacement_delta_bar() {
        let pts: Vec<(f64, f64, f64)> = (0..20)
            .map(|k| (3.0 * k as f64, 60.0 * k as f64, 80.0 * k as f64))
            .collect();
        let tr = track_from(&pts);
        for window in [1.0, 10.0, 70.0, 1e6] {
            let m = estimate_delta_bar(&tr, window).unwrap();
            for d in &m.delta_bar {
                assert!((d - 10_000.0 / 12.0).abs() / (10_000.0 / 12.0) < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_window() {
        let tr = track_from(&[(0., 0., 0.), (1., 30., 40.), (10., 30., 40.)]);
        let m = estimate_delta_bar(&tr, 1.0).unwrap();
        assert_eq!(m.n_i, vec![1, 1]);
        assert_eq!(m.delta_bar[0], 625.0);
        // stationary step is floored
        assert_eq!(m.delta_bar[1], DELTA_FLOOR);
    }

    #[test]
    fn whole_track_window_is_uniform() {
        let tr = track_from(&[(0., 0., 0.), (1., 3., 1.), (2.5, 1., 1.), (4., 7., -2.)]);
        let m = estimate_delta_bar(&tr, 100.0).unwrap();
        assert!(m.n_i.iter().all(|&n| n == 3));
        assert!(m.delta_bar.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn rejects_nonpositive_window() {
        let tr = track_from(&[(0., 0., 0.), (1., 3., 1.), (2.5, 1., 1.)]);
        assert!(estimate_delta_bar(&tr, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tr = track_from(&[(0.1, 1.0 / 3.0, -2.5), (1.7, 3e5, 1e-7), (2.5, 1., 1.)]);
        let back = parse_track(&track_csv_string(&tr), "test").unwrap();
        assert_eq!(back, tr);
    }
}
