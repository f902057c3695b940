//! Parameter recovery from observed count series.
//!
//! Two fits are provided: extinction plus per-channel optical efficiency from
//! the four channel count rates, and (T, C, ϰ) from the out-of-window noise
//! rate. Both use the shared [`least_squares`] optimiser with Poisson-like
//! weights `1/max(counts, 1)`.

mod lm;
mod residuals;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use lm::{
    curve_fit, jacobian_central, jacobian_forward, jacobian_forward_step, least_squares, LsqOptions, LsqSolution,
};
pub use residuals::{count_residuals, noise_residuals, ResidualSeries};

use crate::channel::{Channel, ChannelMap};
use crate::config::{ReceiverConfig, SourceConfig};
use crate::error::{Error, Result};
use crate::geometry::{PassProfile, PassSample};
use crate::link::{atmospheric_transmittance, count_rate, geometric_efficiency};

pub const INIT_KAPPA: f64 = 0.3;
pub const INIT_ETA_OPT: f64 = 0.25;
/// Below this elevation span ϰ and a global η_opt scale are poorly separable.
pub const MIN_ELEVATION_SPAN_RAD: f64 = 15.0 * std::f64::consts::PI / 180.0;
const KAPPA_MAX: f64 = 5.0;
const ETA_MIN: f64 = 1e-6;

/// Observed count rates aligned with a pass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub t: Vec<f64>,
    pub counts: Vec<ChannelMap<f64>>,
    /// Out-of-window noise rate, when recorded.
    pub noise: Option<Vec<f64>>,
}

impl ObservationSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.counts.len() != self.t.len() || self.noise.as_ref().is_some_and(|n| n.len() != self.t.len()) {
            return Err(Error::DimensionMismatch("observation columns differ in length".into()));
        }
        let negative = self.counts.iter().any(|m| m.iter().any(|(_, v)| !(v >= 0.0)))
            || self.noise.iter().flatten().any(|v| !(*v >= 0.0));
        if negative {
            return Err(Error::Validation("counts >= 0 violated".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read(std::fs::File::open(path)?, path)
    }

    /// Parse `t_s,counts_H,counts_V,counts_D,counts_A[,noise]`.
    pub fn read<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let mut required = Vec::new();
        for name in ["t_s", "counts_H", "counts_V", "counts_D", "counts_A"] {
            required.push(col(name).ok_or_else(|| Error::MissingColumn(name.into()))?);
        }
        let noise_col = col("noise");
        let mut out = ObservationSeries {
            noise: noise_col.map(|_| Vec::new()),
            ..Default::default()
        };
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |i: usize| -> Result<f64> {
                let raw = record.get(i).unwrap_or("");
                raw.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("cannot parse `{raw}` in column {}", &headers[i]),
                })
            };
            out.t.push(parse(required[0])?);
            out.counts.push(ChannelMap {
                h: parse(required[1])?,
                v: parse(required[2])?,
                d: parse(required[3])?,
                a: parse(required[4])?,
            });
            if let (Some(c), Some(n)) = (noise_col, out.noise.as_mut()) {
                n.push(parse(c)?);
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["t_s", "counts_H", "counts_V", "counts_D", "counts_A"];
        if self.noise.is_some() {
            header.push("noise");
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let c = self.counts[i];
            let mut row = vec![
                self.t[i].to_string(),
                c.h.to_string(),
                c.v.to_string(),
                c.d.to_string(),
                c.a.to_string(),
            ];
            if let Some(n) = &self.noise {
                row.push(n[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of a model fit, emitted as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
    /// Unweighted RMS residual, counts/s.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Which count-rate parameters are free; fixed ones keep their receiver value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParams {
    pub kappa: bool,
    pub eta_opt: ChannelMap<bool>,
}

impl FreeParams {
    pub fn all() -> Self {
        FreeParams {
            kappa: true,
            eta_opt: ChannelMap::splat(true),
        }
    }
}

/// Match each observation to the profile sample at the same time.
fn align<'a>(t: &[f64], profile: &'a PassProfile) -> Result<Vec<&'a PassSample>> {
    let samples = profile.samples();
    let tol = 0.5 * profile.step_s().max(1e-9);
    t.iter()
        .map(|&ti| {
            let k = samples.partition_point(|s| s.t < ti - tol);
            samples
                .get(k)
                .filter(|s| (s.t - ti).abs() <= tol)
                .ok_or_else(|| Error::Validation(format!("observation at t={ti} has no pass sample")))
        })
        .collect()
}

fn span_warning(samples: &[&PassSample]) -> Option<String> {
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.elevation_rad), hi.max(s.elevation_rad))
    });
    (hi - lo < MIN_ELEVATION_SPAN_RAD).then(|| {
        format!(
            "elevation span {:.1}° below 15°: extinction and efficiency scale are ill-conditioned",
            (hi - lo).to_degrees()
        )
    })
}

/// Link efficiency of one channel with explicit ϰ and η_opt, unclamped.
fn link_eta(sample: &PassSample, rx: &ReceiverConfig, src: &SourceConfig, kappa: f64, eta_opt: f64) -> f64 {
    geometric_efficiency(rx, src, sample.range_m)
        * atmospheric_transmittance(kappa, sample.elevation_rad)
        * eta_opt
        * rx.eta_det
}

fn weight(observed: f64) -> f64 {
    1.0 / observed.max(1.0).sqrt()
}

/// Fit ϰ and the per-channel optical efficiencies to the four count series.
pub fn fit_count_rate(
    obs: &ObservationSeries,
    profile: &PassProfile,
    rx: &ReceiverConfig,
    src: &SourceConfig,
    free: FreeParams,
) -> Result<FitResult> {
    obs.validate()?;
    if obs.is_empty() {
        return Err(Error::FitFailed("empty observation series".into()));
    }
    let samples = align(&obs.t, profile)?;

    let mut names = Vec::new();
    let mut init = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    if free.kappa {
        names.push("kappa".to_string());
        init.push(INIT_KAPPA);
        lower.push(0.0);
        upper.push(KAPPA_MAX);
    }
    let free_channels: Vec<Channel> = Channel::ALL.into_iter().filter(|c| free.eta_opt.get(*c)).collect();
    for c in &free_channels {
        names.push(format!("eta_opt_{c}"));
        init.push(INIT_ETA_OPT);
        lower.push(ETA_MIN);
        upper.push(1.0);
    }
    if init.is_empty() {
        return Err(Error::FitFailed("no free parameters".into()));
    }

    let unpack = |p: &[f64]| -> (f64, ChannelMap<f64>) {
        let mut k = 0;
        let kappa = if free.kappa {
            k += 1;
            p[0]
        } else {
            rx.kappa
        };
        let mut eta = rx.eta_opt;
        for c in &free_channels {
            eta.set(*c, p[k]);
            k += 1;
        }
        (kappa, eta)
    };
    let predict = |p: &[f64], out: &mut dyn FnMut(f64, f64)| {
        let (kappa, eta) = unpack(p);
        for (s, counts) in samples.iter().zip(&obs.counts) {
            for c in Channel::ALL {
                let e = link_eta(s, rx, src, kappa, eta.get(c));
                out(count_rate(e, rx, src, c), counts.get(c));
            }
        }
    };
    let residuals = |p: &[f64]| {
        let mut r = Vec::with_capacity(4 * samples.len());
        predict(p, &mut |model, observed| r.push((model - observed) * weight(observed)));
        r
    };
    let opts = LsqOptions::bounded(lower, upper);
    let sol = least_squares(residuals, &init, &opts)?;

    let mut sq = 0.0;
    let mut n = 0usize;
    predict(&sol.params, &mut |model, observed| {
        sq += (model - observed).powi(2);
        n += 1;
    });
    let mut warnings: Vec<String> = span_warning(&samples).into_iter().collect();
    warnings.extend(bound_warnings(&names, &sol));
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FitResult {
        params: names.iter().cloned().zip(sol.params.iter().copied()).collect(),
        stderr: names.iter().cloned().zip(sol.stderr.iter().copied()).collect(),
        residual_rms: (sq / n as f64).sqrt(),
        iterations: sol.iterations,
        converged: sol.converged,
        warnings,
    })
}

fn bound_warnings(names: &[String], sol: &LsqSolution) -> Vec<String> {
    names
        .iter()
        .zip(&sol.at_bound)
        .filter(|(_, b)| **b)
        .map(|(n, _)| format!("parameter {n} at bound"))
        .collect()
}

/// Mean link efficiency over the receiver with one shared optical efficiency.
fn mean_eta_fixed(sample: &PassSample, rx: &ReceiverConfig, src: &SourceConfig, kappa: f64, eta_opt_total: f64) -> f64 {
    link_eta(sample, rx, src, kappa, eta_opt_total)
}

/// Fit `𝒩 = T·η(t) + C` with free (T, C, ϰ) to the out-of-window noise rate.
pub fn fit_noise(
    noise_series: &ObservationSeries,
    profile: &PassProfile,
    rx: &ReceiverConfig,
    src: &SourceConfig,
    fixed_eta_opt_total: f64,
) -> Result<FitResult> {
    noise_series.validate()?;
    let noise = noise_series
        .noise
        .as_ref()
        .ok_or_else(|| Error::MissingColumn("noise".into()))?;
    if noise.is_empty() {
        return Err(Error::FitFailed("empty noise series".into()));
    }
    if !(fixed_eta_opt_total > 0.0 && fixed_eta_opt_total <= 1.0) {
        return Err(Error::InvalidConfig(
            "fixed optical efficiency must lie in (0,1]".into(),
        ));
    }
    let samples = align(&noise_series.t, profile)?;

    // linear least squares for (T, C) at the initial ϰ
    let etas: Vec<f64> = samples
        .iter()
        .map(|s| mean_eta_fixed(s, rx, src, INIT_KAPPA, fixed_eta_opt_total))
        .collect();
    let (t0, c0) = linear_init(&etas, noise);

    let residuals = |p: &[f64]| -> Vec<f64> {
        samples
            .iter()
            .zip(noise)
            .map(|(s, &obs)| {
                let eta = mean_eta_fixed(s, rx, src, p[2], fixed_eta_opt_total);
                (p[0] * eta + p[1] - obs) * weight(obs)
            })
            .collect()
    };
    let scale_t = 1e3 * t0.max(1.0) + 1e9;
    let scale_c = 1e3 * c0.max(1.0) + 1e6;
    let opts = LsqOptions::bounded(vec![0.0, 0.0, 0.0], vec![scale_t, scale_c, KAPPA_MAX]);
    let sol = least_squares(residuals, &[t0, c0, INIT_KAPPA], &opts)?;

    let names = ["T".to_string(), "C".to_string(), "kappa".to_string()];
    let sq: f64 = samples
        .iter()
        .zip(noise)
        .map(|(s, &obs)| {
            let eta = mean_eta_fixed(s, rx, src, sol.params[2], fixed_eta_opt_total);
            (sol.params[0] * eta + sol.params[1] - obs).powi(2)
        })
        .sum();
    let mut warnings: Vec<String> = span_warning(&samples).into_iter().collect();
    warnings.extend(bound_warnings(&names, &sol));
    Ok(FitResult {
        params: names.iter().cloned().zip(sol.params.iter().copied()).collect(),
        stderr: names.iter().cloned().zip(sol.stderr.iter().copied()).collect(),
        residual_rms: (sq / noise.len() as f64).sqrt(),
        iterations: sol.iterations,
        converged: sol.converged,
        warnings,
    })
}

fn linear_init(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    (slope, (my - slope * mx).max(0.0))
}

/// Expected (or Poisson-sampled, when `seed` is given) per-channel count rates
/// over a pass under the receiver model. Rates are per second; sampling uses
/// the profile step as the integration time.
pub fn synthesize_observations(
    profile: &PassProfile,
    rx: &ReceiverConfig,
    src: &SourceConfig,
    seed: Option<u64>,
) -> ObservationSeries {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let dt = profile.step_s().max(f64::MIN_POSITIVE);
    let mut out = ObservationSeries {
        noise: Some(Vec::with_capacity(profile.len())),
        ..Default::default()
    };
    for s in profile.samples() {
        let etas = ChannelMap::from_fn(|c| link_eta(s, rx, src, rx.kappa, rx.eta_opt.get(c)).min(1.0));
        let mut counts = ChannelMap::from_fn(|c| count_rate(etas.get(c), rx, src, c));
        let mut noise = crate::link::noise_rate(etas.mean(), rx);
        if let Some(rng) = rng.as_mut() {
            counts = counts.map(|rate| poisson_rate(rng, rate, dt));
            noise = poisson_rate(rng, noise, dt);
        }
        out.t.push(s.t);
        out.counts.push(counts);
        out.noise.as_mut().unwrap().push(noise);
    }
    out
}

/// Noise series `T·η(t) + C` with a single receiver-wide optical efficiency.
pub fn synthesize_noise(
    profile: &PassProfile,
    rx: &ReceiverConfig,
    src: &SourceConfig,
    eta_opt_total: f64,
    seed: Option<u64>,
) -> ObservationSeries {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let dt = profile.step_s().max(f64::MIN_POSITIVE);
    let mut out = ObservationSeries {
        noise: Some(Vec::with_capacity(profile.len())),
        ..Default::default()
    };
    for s in profile.samples() {
        let eta = mean_eta_fixed(s, rx, src, rx.kappa, eta_opt_total);
        let mut n = crate::link::noise_rate(eta, rx);
        if let Some(rng) = rng.as_mut() {
            n = poisson_rate(rng, n, dt);
        }
        out.t.push(s.t);
        out.counts.push(ChannelMap::splat(0.0));
        out.noise.as_mut().unwrap().push(n);
    }
    out
}

fn poisson_rate(rng: &mut ChaCha8Rng, rate: f64, dt: f64) -> f64 {
    let mean = rate * dt;
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).map_or(mean, |d| d.sample(rng)) / dt
}
