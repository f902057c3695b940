//! Sifted-key rates, QBER upper bounds and detection sampling over a pass.

mod montecarlo;
mod tally;
mod timing;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{Basis, Channel, ChannelMap, Intensity, IntensityMap};
use crate::config::{ReceiverConfig, SourceConfig};
use crate::error::{Error, Result};
use crate::link::detection_probability;

pub use montecarlo::{simulate_pass, simulate_pass_recording, tally_records, Mode, SimOptions, Simulation};
pub use tally::DetectionTally;
pub use timing::{gaussian_window_fraction, sync_histogram, temporal_filter, SyncFit, SYNC_MIN_PEAK_TO_FLOOR};

/// Error probability of a background click: the bit is a coin flip.
pub const BACKGROUND_ERROR: f64 = 0.5;

/// Background yield per sent pulse, `𝒩/(suppression·f)`.
pub fn background_yield(noise_total: f64, pulse_rate_hz: f64, suppression: f64) -> f64 {
    noise_total / (suppression * pulse_rate_hz)
}

/// Sifted bit rate of one intensity class.
pub fn sifted_rate(
    alpha: f64,
    p_alpha: f64,
    y0: f64,
    eta: &ChannelMap<f64>,
    rx: &ReceiverConfig,
    src: &SourceConfig,
) -> f64 {
    let clicks: f64 = Channel::ALL
        .iter()
        .map(|&c| rx.p_channel.get(c) * detection_probability(alpha, eta.get(c)))
        .sum();
    0.5 * src.pulse_rate_hz * p_alpha * (y0 + clicks)
}

/// Receiver plus transmitter error, capped at ½.
pub fn intrinsic_error_upper(e_rx: f64, e_tx_mean: f64) -> f64 {
    (e_rx + e_tx_mean).min(0.5)
}

/// Upper bound on erroneous sifted bits per second. The channel sum carries a
/// fixed ¼ weight, independent of the channel probabilities.
pub fn error_count_upper(
    alpha: f64,
    p_alpha: f64,
    y0: f64,
    e_det_upper: &ChannelMap<f64>,
    eta: &ChannelMap<f64>,
    src: &SourceConfig,
) -> f64 {
    let detector: f64 = Channel::ALL
        .iter()
        .map(|&c| e_det_upper.get(c) * detection_probability(alpha, eta.get(c)))
        .sum();
    0.5 * src.pulse_rate_hz * p_alpha * (BACKGROUND_ERROR * y0 + 0.25 * detector)
}

pub fn qber_upper(n_err: f64, r_sift: f64) -> Result<f64> {
    if r_sift == 0.0 {
        return Err(Error::DivisionByZero("sifted rate"));
    }
    Ok(n_err / r_sift)
}

/// Receiver noise rate `T·η̄ + C`, with η̄ weighted by the channel probabilities.
pub fn receiver_noise(eta: &ChannelMap<f64>, rx: &ReceiverConfig) -> f64 {
    let weight = rx.p_channel.sum();
    let eta_bar = Channel::ALL
        .iter()
        .map(|&c| rx.p_channel.get(c) * eta.get(c))
        .sum::<f64>()
        / weight;
    crate::link::noise_rate(eta_bar, rx)
}

/// Rates of one pass sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRates {
    pub y0: f64,
    pub rate: IntensityMap<f64>,
    pub errors: IntensityMap<f64>,
    pub qber_upper: IntensityMap<f64>,
}

/// Evaluate the sifted rate and error bound for every intensity at one sample.
pub fn sample_rates(
    eta: &ChannelMap<f64>,
    e_rx: &ChannelMap<f64>,
    rx: &ReceiverConfig,
    src: &SourceConfig,
) -> SampleRates {
    let y0 = background_yield(receiver_noise(eta, rx), src.pulse_rate_hz, rx.filter_suppression);
    let e_det = e_rx.map(|e| intrinsic_error_upper(e, src.tx_mean_error));
    let rate = IntensityMap::from_fn(|i| sifted_rate(src.mean_photon_number(i), src.probability(i), y0, eta, rx, src));
    let errors = IntensityMap::from_fn(|i| {
        error_count_upper(src.mean_photon_number(i), src.probability(i), y0, &e_det, eta, src)
    });
    let qber_upper = IntensityMap::from_fn(|i| qber_upper(errors.get(i), rate.get(i)).unwrap_or(0.0));
    SampleRates {
        y0,
        rate,
        errors,
        qber_upper,
    }
}

/// Receiver intrinsic error per channel over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicErrorSeries {
    pub t: Vec<f64>,
    pub e_rx: Vec<ChannelMap<f64>>,
}

impl IntrinsicErrorSeries {
    pub fn new(t: Vec<f64>, e_rx: Vec<ChannelMap<f64>>) -> Result<Self> {
        if t.len() != e_rx.len() {
            return Err(Error::DimensionMismatch(
                "time and error columns differ in length".into(),
            ));
        }
        if t.is_empty() {
            return Err(Error::Validation("intrinsic error series is empty".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("intrinsic error times must increase".into()));
        }
        if e_rx.iter().any(|m| m.iter().any(|(_, e)| !(0.0..=0.5).contains(&e))) {
            return Err(Error::Validation("intrinsic error outside [0, 0.5]".into()));
        }
        Ok(IntrinsicErrorSeries { t, e_rx })
    }

    /// Time-independent error, valid at any time.
    pub fn constant(e_rx: ChannelMap<f64>) -> Result<Self> {
        Self::new(vec![0.0], vec![e_rx])
    }

    /// Nearest-sample lookup; ties go to the earlier sample.
    pub fn at(&self, t: f64) -> ChannelMap<f64> {
        let k = self.t.partition_point(|&ti| ti < t);
        if k == 0 {
            return self.e_rx[0];
        }
        if k == self.t.len() {
            return self.e_rx[k - 1];
        }
        if t - self.t[k - 1] <= self.t[k] - t {
            self.e_rx[k - 1]
        } else {
            self.e_rx[k]
        }
    }

    /// Whether `[start, end]` lies within the series, allowing one spacing of slack.
    /// A single-sample series is treated as constant.
    pub fn covers(&self, start: f64, end: f64) -> bool {
        if self.t.len() == 1 {
            return true;
        }
        let slack = self.t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        start >= self.t[0] - slack && end <= self.t[self.t.len() - 1] + slack
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read(std::fs::File::open(path)?, path)
    }

    /// Parse `t_s,e_H,e_V,e_D,e_A`.
    pub fn read<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut cols = Vec::new();
        for name in ["t_s", "e_H", "e_V", "e_D", "e_A"] {
            cols.push(
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::MissingColumn(name.into()))?,
            );
        }
        let (mut t, mut e) = (Vec::new(), Vec::new());
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let mut v = [0.0; 5];
            for (slot, &c) in v.iter_mut().zip(&cols) {
                let raw = record.get(c).unwrap_or("");
                *slot = raw.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("cannot parse `{raw}` in column {}", &headers[c]),
                })?;
            }
            t.push(v[0]);
            e.push(ChannelMap {
                h: v[1],
                v: v[2],
                d: v[3],
                a: v[4],
            });
        }
        Self::new(t, e)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["t_s", "e_H", "e_V", "e_D", "e_A"])?;
        for (t, e) in self.t.iter().zip(&self.e_rx) {
            w.write_record([t, &e.h, &e.v, &e.d, &e.a].map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-sample sifted rates and QBER bounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SiftedRateSeries {
    pub t: Vec<f64>,
    /// Sifted bits/s per intensity.
    pub rate: Vec<IntensityMap<f64>>,
    /// Erroneous sifted bits/s per intensity.
    pub errors: Vec<IntensityMap<f64>>,
    pub qber_upper: Vec<IntensityMap<f64>>,
    pub y0: Vec<f64>,
}

impl SiftedRateSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push(&mut self, t: f64, r: &SampleRates) {
        self.t.push(t);
        self.rate.push(r.rate);
        self.errors.push(r.errors);
        self.qber_upper.push(r.qber_upper);
        self.y0.push(r.y0);
    }

    /// Integrated sifted bits of one intensity, each sample weighted by `dt`.
    pub fn total_bits(&self, intensity: Intensity, dt: f64) -> f64 {
        self.rate.iter().map(|r| r.get(intensity) * dt).sum()
    }

    pub fn total_errors(&self, intensity: Intensity, dt: f64) -> f64 {
        self.errors.iter().map(|r| r.get(intensity) * dt).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["t_s".to_string()];
        for prefix in ["rate", "errors", "qber_upper"] {
            for i in Intensity::ALL {
                header.push(format!("{prefix}_{i}"));
            }
        }
        header.push("y0".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k].to_string()];
            for m in [&self.rate[k], &self.errors[k], &self.qber_upper[k]] {
                row.extend(Intensity::ALL.iter().map(|&i| m.get(i).to_string()));
            }
            row.push(self.y0[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let map_cols = |prefix: &str| -> Result<Vec<usize>> {
            Intensity::ALL.iter().map(|i| col(&format!("{prefix}_{i}"))).collect()
        };
        let (ti, yi) = (col("t_s")?, col("y0")?);
        let groups = [map_cols("rate")?, map_cols("errors")?, map_cols("qber_upper")?];
        let mut out = SiftedRateSeries::default();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<f64> {
                let raw = record.get(i).unwrap_or("");
                raw.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("cannot parse `{raw}`"),
                })
            };
            let map = |cols: &[usize]| -> Result<IntensityMap<f64>> {
                let v = [field(cols[0])?, field(cols[1])?, field(cols[2])?];
                Ok(IntensityMap::from_fn(|i| v[i.index()]))
            };
            out.t.push(field(ti)?);
            out.rate.push(map(&groups[0])?);
            out.errors.push(map(&groups[1])?);
            out.qber_upper.push(map(&groups[2])?);
            out.y0.push(field(yi)?);
        }
        Ok(out)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv(std::fs::File::open(path)?, path)
    }
}

/// One detector click in the Monte Carlo record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub pulse_index: u64,
    pub channel: Channel,
    pub alice_basis: Basis,
    pub alice_bit: u8,
    pub bob_basis: Basis,
    pub bob_bit: u8,
    pub intensity: Intensity,
    pub timestamp_ns: f64,
}

impl DetectionRecord {
    pub fn is_consistent(&self) -> bool {
        self.bob_basis == self.channel.basis() && self.bob_bit == self.channel.bit() && self.alice_bit <= 1
    }
}

pub fn write_records<W: Write>(writer: W) -> Result<RecordWriter<W>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(writer);
    w.write_record([
        "pulse_index",
        "channel",
        "alice_basis",
        "alice_bit",
        "bob_basis",
        "bob_bit",
        "intensity",
        "timestamp_ns",
    ])?;
    Ok(RecordWriter { inner: w })
}

/// Streaming CSV writer for detection records.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn write(&mut self, record: &DetectionRecord) -> Result<()> {
        self.inner.serialize(record)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_records<R: Read>(reader: R, path: &Path) -> Result<Vec<DetectionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for name in [
        "pulse_index",
        "channel",
        "alice_basis",
        "alice_bit",
        "bob_basis",
        "bob_bit",
        "intensity",
        "timestamp_ns",
    ] {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::MissingColumn(name.into()));
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<DetectionRecord>() {
        let record = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        if !record.is_consistent() {
            return Err(Error::Validation(format!(
                "record for pulse {} has bob basis/bit inconsistent with channel {}",
                record.pulse_index, record.channel
            )));
        }
        out.push(record);
    }
    Ok(out)
}
