//! Tick CSV input and output, mid-quote construction and session splitting.
//!
//! The file schema is `ts_ms,bid,ask,trade_px,trade_sz` with empty fields
//! for absent values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TickSeries;

pub const TICK_HEADER: [&str; 5] = ["ts_ms", "bid", "ask", "trade_px", "trade_sz"];

/// Share of malformed rows above which loading aborts.
pub const MAX_MALFORMED_SHARE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub ts_ms: i64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    pub trade_px: Option<f64>,
    pub trade_sz: Option<f64>,
}

impl TickRecord {
    pub fn validate(&self) -> Result<()> {
        let quote = match (self.bid, self.ask) {
            (Some(b), Some(a)) => {
                if !(b > 0.0 && a > 0.0 && b.is_finite() && a.is_finite()) {
                    return Err(Error::Input(format!("non-positive quote at {}", self.ts_ms)));
                }
                if a < b {
                    return Err(Error::Input(format!("crossed quote at {}: bid {b} > ask {a}", self.ts_ms)));
                }
                true
            }
            (None, None) => false,
            _ => return Err(Error::Input(format!("one-sided quote at {}", self.ts_ms))),
        };
        if let Some(p) = self.trade_px {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Input(format!("non-positive trade price at {}", self.ts_ms)));
            }
        }
        if let Some(s) = self.trade_sz {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Input(format!("negative trade size at {}", self.ts_ms)));
            }
        }
        if !quote && self.trade_px.is_none() {
            return Err(Error::Input(format!("row at {} has neither quote nor trade", self.ts_ms)));
        }
        Ok(())
    }

    pub fn mid(&self) -> Option<f64> {
        match (self.bid, self.ask) {
            (Some(b), Some(a)) => Some(0.5 * (b + a)),
            _ => None,
        }
    }

    /// Traded notional, zero without a trade.
    pub fn notional(&self) -> f64 {
        match (self.trade_px, self.trade_sz) {
            (Some(p), Some(s)) => p * s,
            _ => 0.0,
        }
    }
}

fn parse_opt(field: &str) -> std::result::Result<Option<f64>, ()> {
    if field.is_empty() {
        Ok(None)
    } else {
        field.parse::<f64>().map(Some).map_err(|_| ())
    }
}

fn parse_row(rec: &csv::StringRecord) -> Option<TickRecord> {
    if rec.len() != 5 {
        return None;
    }
    let r = TickRecord {
        ts_ms: rec[0].parse().ok()?,
        bid: parse_opt(&rec[1]).ok()?,
        ask: parse_opt(&rec[2]).ok()?,
        trade_px: parse_opt(&rec[3]).ok()?,
        trade_sz: parse_opt(&rec[4]).ok()?,
    };
    r.validate().ok()?;
    Some(r)
}

/// Outcome of reading a tick file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTicks {
    pub records: Vec<TickRecord>,
    pub malformed: usize,
}

/// Parses tick CSV, sorting by timestamp (stable for equal timestamps).
pub fn read_ticks<R: Read>(r: R) -> Result<LoadedTicks> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        log::warn!("empty tick file");
        return Ok(LoadedTicks { records: Vec::new(), malformed: 0 });
    }
    if header.iter().map(str::trim).ne(TICK_HEADER.iter().copied()) {
        return Err(Error::Schema(format!("expected header {}, found {}", TICK_HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut records = Vec::new();
    let mut malformed = 0usize;
    for row in rdr.records() {
        match row.ok().as_ref().and_then(parse_row) {
            Some(r) => records.push(r),
            None => malformed += 1,
        }
    }
    let total = records.len() + malformed;
    if malformed > 0 {
        log::warn!("{malformed} of {total} tick rows malformed");
        if malformed as f64 > MAX_MALFORMED_SHARE * total as f64 {
            return Err(Error::Input(format!("{malformed} of {total} rows malformed, above the 0.1% limit")));
        }
    }
    if records.is_empty() {
        log::warn!("tick file has no records");
    }
    records.sort_by_key(|r| r.ts_ms);
    Ok(LoadedTicks { records, malformed })
}

pub fn load_ticks(path: &Path) -> Result<Vec<TickRecord>> {
    let f = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(read_ticks(BufReader::new(f))?.records)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes records in the tick schema; floats use the shortest exact
/// representation so a save/load cycle is lossless.
pub fn write_ticks<W: Write>(records: &[TickRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TICK_HEADER)?;
    for r in records {
        wtr.write_record([r.ts_ms.to_string(), fmt_opt(r.bid), fmt_opt(r.ask), fmt_opt(r.trade_px), fmt_opt(r.trade_sz)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_ticks(records: &[TickRecord], path: &Path) -> Result<()> {
    write_ticks(records, BufWriter::new(File::create(path)?))
}

/// Log mid-quote series, keeping only quotes that change the mid. Times are
/// seconds after `origin_ms`.
pub fn build_midquote(records: &[TickRecord], origin_ms: i64) -> Result<TickSeries<f64>> {
    let mut times = Vec::new();
    let mut levels = Vec::new();
    let mut last_mid = None;
    for r in records {
        if let Some(mid) = r.mid() {
            if last_mid != Some(mid) {
                times.push((r.ts_ms - origin_ms) as f64 / 1000.0);
                levels.push(mid.ln());
                last_mid = Some(mid);
            }
        }
    }
    if levels.is_empty() {
        return Err(Error::Input("no quotes to build a mid-quote series".into()));
    }
    TickSeries::new(origin_ms, times, levels)
}

/// Daily trading session in exchange-local clock time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionWindow {
    /// Seconds after local midnight.
    pub start_sec: u32,
    pub end_sec: u32,
    /// Local time minus UTC, in minutes.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl SessionWindow {
    pub fn validate(&self) -> Result<()> {
        if self.start_sec >= self.end_sec || self.end_sec > 86_400 {
            return Err(Error::Config(format!("session [{}, {}) is not a valid clock window", self.start_sec, self.end_sec)));
        }
        Ok(())
    }

    pub fn length_seconds(&self) -> f64 {
        (self.end_sec - self.start_sec) as f64
    }

    /// Local day number and milliseconds after local midnight.
    fn local(&self, ts_ms: i64) -> (i64, i64) {
        let local = ts_ms + self.utc_offset_minutes as i64 * 60_000;
        (local.div_euclid(86_400_000), local.rem_euclid(86_400_000))
    }

    /// Session open for the local day containing `ts_ms`, in epoch ms.
    pub fn open_ms(&self, day: i64) -> i64 {
        day * 86_400_000 + self.start_sec as i64 * 1000 - self.utc_offset_minutes as i64 * 60_000
    }

    /// Splits records into per-day sessions, keyed by local day number.
    pub fn split<'a>(&self, records: &'a [TickRecord]) -> BTreeMap<i64, Vec<&'a TickRecord>> {
        let mut days: BTreeMap<i64, Vec<&TickRecord>> = BTreeMap::new();
        let (lo, hi) = (self.start_sec as i64 * 1000, self.end_sec as i64 * 1000);
        for r in records {
            let (day, ms) = self.local(r.ts_ms);
            if ms >= lo && ms < hi {
                days.entry(day).or_default().push(r);
            }
        }
        days
    }
}
