//! Line-delimited JSON viewership traces: ingestion and synthesis.
//!
//! One record per line:
//! `{"channel_id": "...", "t": 1200, "bitrate_kbps": 2500, "viewers": 431}`

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{snap_to_ladder, ChannelId, BITRATE_LADDER_KBPS};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    channel_id: String,
    t: i64,
    bitrate_kbps: i64,
    viewers: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub channel_id: ChannelId,
    pub t: u64,
    /// Always a ladder value after ingestion.
    pub bitrate_kbps: u32,
    pub viewers: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceWindow {
    pub start: u64,
    pub records: Vec<TraceRecord>,
}

impl TraceWindow {
    /// The most recent sample of every channel in this window, in channel order.
    pub fn latest_per_channel(&self) -> Vec<&TraceRecord> {
        let mut latest: BTreeMap<&ChannelId, &TraceRecord> = BTreeMap::new();
        for r in &self.records {
            match latest.get(&r.channel_id) {
                Some(prev) if prev.t >= r.t => {}
                _ => {
                    latest.insert(&r.channel_id, r);
                }
            }
        }
        latest.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub window_secs: u64,
    /// Non-empty windows in start order.
    pub windows: Vec<TraceWindow>,
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn window(&self, start: u64) -> Option<&TraceWindow> {
        self.windows.iter().find(|w| w.start == start)
    }

    pub fn records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.windows.iter().flat_map(|w| w.records.iter())
    }
}

/// Reads a trace file and groups its records into windows of `window_secs`.
pub fn load_trace(path: &Path, window_secs: u64) -> Result<Trace, TraceError> {
    let file = std::fs::File::open(path)?;
    parse_trace(BufReader::new(file), window_secs)
}

/// Parses trace lines. Bitrates off the ladder are snapped down to the
/// nearest tier with a warning; anything below the lowest tier is an error.
pub fn parse_trace(reader: impl BufRead, window_secs: u64) -> Result<Trace, TraceError> {
    if window_secs == 0 {
        return Err(TraceError::ZeroWindow);
    }
    let mut warnings = Vec::new();
    let mut last_t: BTreeMap<ChannelId, u64> = BTreeMap::new();
    let mut windows: BTreeMap<u64, Vec<TraceRecord>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: line_no,
            column: e.column(),
            message: e.to_string(),
        })?;
        let invalid = |message: String| TraceError::Invalid { line: line_no, message };
        if raw.viewers < 0 {
            return Err(invalid(format!("viewers must be non-negative, got {}", raw.viewers)));
        }
        if raw.t < 0 {
            return Err(invalid(format!("timestamp must be non-negative, got {}", raw.t)));
        }
        if raw.channel_id.is_empty() {
            return Err(invalid("empty channel_id".into()));
        }
        let bitrate = u32::try_from(raw.bitrate_kbps)
            .ok()
            .and_then(snap_to_ladder)
            .ok_or_else(|| invalid(format!("bitrate {} is below the ladder", raw.bitrate_kbps)))?;
        if i64::from(bitrate) != raw.bitrate_kbps {
            let msg = format!(
                "line {line_no}: channel {} bitrate {} snapped to {bitrate}",
                raw.channel_id, raw.bitrate_kbps
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let t = raw.t as u64;
        let channel = ChannelId(raw.channel_id);
        if let Some(&prev) = last_t.get(&channel) {
            if t <= prev {
                return Err(invalid(format!(
                    "timestamps for channel {channel} must increase ({t} after {prev})"
                )));
            }
        }
        last_t.insert(channel.clone(), t);
        windows.entry(t / window_secs * window_secs).or_default().push(TraceRecord {
            channel_id: channel,
            t,
            bitrate_kbps: bitrate,
            viewers: raw.viewers as u64,
        });
    }
    Ok(Trace {
        window_secs,
        windows: windows.into_iter().map(|(start, records)| TraceWindow { start, records }).collect(),
        warnings,
    })
}

pub fn write_trace(trace: &Trace, mut out: impl Write) -> std::io::Result<()> {
    for r in trace.records() {
        writeln!(
            out,
            "{{\"channel_id\":{},\"t\":{},\"bitrate_kbps\":{},\"viewers\":{}}}",
            serde_json::to_string(r.channel_id.as_str()).expect("string serializes"),
            r.t,
            r.bitrate_kbps,
            r.viewers
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionModel {
    /// Every channel broadcasts in every window.
    AlwaysOn,
    /// Two-state on/off chain per channel with the given per-window
    /// probabilities of going offline and coming back online.
    OnOff { p_stop: f64, p_start: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    pub channels: usize,
    pub windows: usize,
    pub window_secs: u64,
    /// Zipf exponent of channel popularity.
    pub zipf_exponent: f64,
    pub mean_total_viewers: f64,
    /// Relative amplitude of the daily viewer cycle.
    pub diurnal_amplitude: f64,
    /// Sigma of the per-window log-normal noise on each channel's audience.
    pub noise_sigma: f64,
    pub session: SessionModel,
    /// Relative frequency of broadcast bitrates over the ladder tiers.
    pub bitrate_mix: [f64; 4],
    pub start_time: u64,
    pub seed: u64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            channels: 60,
            windows: 12,
            window_secs: 300,
            zipf_exponent: 1.0,
            mean_total_viewers: 6_000.0,
            diurnal_amplitude: 0.3,
            noise_sigma: 0.1,
            session: SessionModel::AlwaysOn,
            bitrate_mix: [0.1, 0.15, 0.3, 0.45],
            start_time: 0,
            seed: 0,
        }
    }
}

/// Generates a Zipf-popular synthetic trace, one sample per channel per window.
pub fn synthesize_trace(params: &TraceParams) -> Result<Trace, TraceError> {
    if params.window_secs == 0 {
        return Err(TraceError::ZeroWindow);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut ranks: Vec<usize> = (1..=params.channels).collect();
    ranks.shuffle(&mut rng);
    let popularity: Vec<f64> =
        ranks.iter().map(|&r| (r as f64).powf(-params.zipf_exponent)).collect();
    let pop_total: f64 = popularity.iter().sum();
    let mix_total: f64 = params.bitrate_mix.iter().sum();
    let bitrates: Vec<u32> = (0..params.channels)
        .map(|_| {
            let mut x = rng.random::<f64>() * mix_total;
            for (tier, w) in BITRATE_LADDER_KBPS.iter().zip(params.bitrate_mix) {
                if x < w {
                    return *tier;
                }
                x -= w;
            }
            BITRATE_LADDER_KBPS[3]
        })
        .collect();
    let noise = LogNormal::new(0.0, params.noise_sigma.max(0.0)).expect("valid sigma");
    let mut online = vec![true; params.channels];
    let day = 86_400.0;

    let mut windows = Vec::with_capacity(params.windows);
    for w in 0..params.windows {
        let start = params.start_time + w as u64 * params.window_secs;
        let phase = 2.0 * std::f64::consts::PI * (start as f64 / day);
        let total = params.mean_total_viewers * (1.0 + params.diurnal_amplitude * phase.sin());
        let mut records = Vec::new();
        for ch in 0..params.channels {
            if let SessionModel::OnOff { p_stop, p_start } = params.session {
                if w > 0 {
                    let flip = if online[ch] { p_stop } else { p_start };
                    if rng.random_bool(flip.clamp(0.0, 1.0)) {
                        online[ch] = !online[ch];
                    }
                }
            }
            let jitter = noise.sample(&mut rng);
            if !online[ch] {
                continue;
            }
            let viewers = (total * popularity[ch] / pop_total * jitter).round().max(0.0) as u64;
            records.push(TraceRecord {
                channel_id: ChannelId(format!("ch{:04}", ch + 1)),
                t: start,
                bitrate_kbps: bitrates[ch],
                viewers,
            });
        }
        windows.push(TraceWindow { start, records });
    }
    Ok(Trace { window_secs: params.window_secs, windows, warnings: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Trace, TraceError> {
        parse_trace(text.as_bytes(), 300)
    }

    #[test]
    fn three_valid_lines_window_by_300s() {
        let t = parse(
            r#"{"channel_id":"a","t":0,"bitrate_kbps":2500,"viewers":10}
{"channel_id":"b","t":20,"bitrate_kbps":400,"viewers":3}
{"channel_id":"a","t":300,"bitrate_kbps":2500,"viewers":12}"#,
        )
        .unwrap();
        assert_eq!(t.records().count(), 3);
        assert_eq!(t.windows.len(), 2);
        assert_eq!(t.windows[0].start, 0);
        assert_eq!(t.windows[0].records.len(), 2);
        assert_eq!(t.windows[1].start, 300);
    }

    #[test]
    fn negative_viewers_name_the_line() {
        let err = parse(
            r#"{"channel_id":"a","t":0,"bitrate_kbps":2500,"viewers":10}
{"channel_id":"b","t":0,"bitrate_kbps":400,"viewers":-1}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TraceError::Invalid { line: 2, .. }), "{err}");
    }

    #[test]
    fn off_ladder_bitrate_snaps_down_with_warning() {
        let t = parse(r#"{"channel_id":"a","t":0,"bitrate_kbps":2600,"viewers":1}"#).unwrap();
        assert_eq!(t.windows[0].records[0].bitrate_kbps, 2500);
        assert_eq!(t.warnings.len(), 1);
        assert!(parse(r#"{"channel_id":"a","t":0,"bitrate_kbps":100,"viewers":1}"#).is_err());
    }

    #[test]
    fn malformed_json_reports_line_and_column() {
        let err = parse("\n{\"channel_id\":\"a\",\"t\":x}").unwrap_err();
        match err {
            TraceError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn timestamps_must_increase_per_channel() {
        let err = parse(
            r#"{"channel_id":"a","t":300,"bitrate_kbps":400,"viewers":1}
{"channel_id":"a","t":300,"bitrate_kbps":400,"viewers":1}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TraceError::Invalid { line: 2, .. }));
    }

    #[test]
    fn synthetic_trace_round_trips_through_the_file_format() {
        let params = TraceParams {
            channels: 8,
            windows: 3,
            session: SessionModel::OnOff { p_stop: 0.2, p_start: 0.5 },
            seed: 4,
            ..TraceParams::default()
        };
        let trace = synthesize_trace(&params).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = parse_trace(&buf[..], 300).unwrap();
        assert_eq!(back.windows, trace.windows);
    }
}
