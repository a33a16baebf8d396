use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{Component, PowerSample, PowerSource, TelemetryError};

const TRACE_HEADER: &str = "timestamp_ms,component,watts";

/// Parses a power trace (`timestamp_ms,component,watts` CSV).
///
/// Timestamps must be non-decreasing per component. Errors carry the
/// 1-based line number of the offending row.
pub fn parse_trace(path: &Path, text: &str) -> Result<Vec<PowerSample<f64>>, TelemetryError> {
    let err = |line: usize, message: String| TelemetryError::TraceParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim().trim_start_matches('\u{feff}') == TRACE_HEADER => {}
        Some((_, header)) => {
            return Err(err(
                1,
                format!("expected header {TRACE_HEADER:?}, found {header:?}"),
            ))
        }
        None => return Err(err(1, "empty trace file".into())),
    }

    let mut samples = Vec::new();
    let mut last_ts: BTreeMap<Component, u64> = BTreeMap::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(
                line_no,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let timestamp_ms: u64 = fields[0]
            .parse()
            .map_err(|e| err(line_no, format!("bad timestamp_ms {:?}: {e}", fields[0])))?;
        let component: Component = fields[1].parse().map_err(|e| err(line_no, e))?;
        let watts: f64 = fields[2]
            .parse()
            .map_err(|e| err(line_no, format!("bad watts {:?}: {e}", fields[2])))?;
        if !watts.is_finite() || watts < 0.0 {
            return Err(err(
                line_no,
                format!("watts must be finite and >= 0, got {watts}"),
            ));
        }
        if let Some(&prev) = last_ts.get(&component) {
            if timestamp_ms < prev {
                return Err(err(
                    line_no,
                    format!("{component} timestamp {timestamp_ms} precedes {prev}"),
                ));
            }
        }
        last_ts.insert(component, timestamp_ms);
        samples.push(PowerSample::new(timestamp_ms, component, watts));
    }
    if samples.is_empty() {
        return Err(err(1, "trace contains no samples".into()));
    }
    Ok(samples)
}

pub fn read_trace(path: &Path) -> Result<Vec<PowerSample<f64>>, TelemetryError> {
    let text = std::fs::read_to_string(path).map_err(|source| TelemetryError::TraceIo {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(path, &text)
}

/// Replays a recorded trace, optionally looping it end to end.
///
/// Rows are released once the requested time passes their timestamp; rows
/// that are already time-ordered come out verbatim in file order.
#[derive(Debug, Clone)]
pub struct TraceReplay {
    path: PathBuf,
    rows: Vec<PowerSample<f64>>,
    cursor: usize,
    looping: bool,
    offset_ms: u64,
    span_ms: u64,
    interval_ms: u64,
}

impl TraceReplay {
    pub fn new(
        path: PathBuf,
        mut rows: Vec<PowerSample<f64>>,
        interval_ms: u64,
        looping: bool,
    ) -> Self {
        rows.sort_by_key(|s| s.timestamp_ms);
        let last = rows.last().map_or(0, |s| s.timestamp_ms);
        Self {
            path,
            rows,
            cursor: 0,
            looping,
            offset_ms: 0,
            span_ms: last + interval_ms.max(1),
            interval_ms,
        }
    }

    pub fn open(path: &Path, interval_ms: u64, looping: bool) -> Result<Self, TelemetryError> {
        let rows = read_trace(path)?;
        Ok(Self::new(path.to_path_buf(), rows, interval_ms, looping))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every remaining sample of a non-looping trace, in order.
    pub fn drain(&mut self) -> Vec<PowerSample<f64>> {
        let out: Vec<_> = self.rows[self.cursor..].to_vec();
        self.cursor = self.rows.len();
        out
    }
}

impl PowerSource for TraceReplay {
    fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    fn poll(&mut self, now_ms: u64) -> Result<Vec<PowerSample<f64>>, TelemetryError> {
        let mut out = Vec::new();
        loop {
            while let Some(row) = self.rows.get(self.cursor) {
                let ts = row.timestamp_ms + self.offset_ms;
                if ts >= now_ms {
                    return Ok(out);
                }
                out.push(PowerSample::new(ts, row.component, row.watts));
                self.cursor += 1;
            }
            if !self.looping {
                return Ok(out);
            }
            self.cursor = 0;
            self.offset_ms += self.span_ms;
        }
    }

    fn is_exhausted(&self) -> bool {
        !self.looping && self.cursor >= self.rows.len()
    }

    fn describe(&self) -> String {
        format!("trace_replay({})", self.path.display())
    }
}
