//! Pass geometry: slant range and elevation time series.
//!
//! Passes are either generated from a circular orbit over a spherical Earth
//! or ingested from an ephemeris CSV (`t_s,elevation_deg,range_m`).

use std::f64::consts::FRAC_PI_2;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by the synthetic pass generator.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Standard gravitational parameter of the Earth, m³/s².
pub const EARTH_GM: f64 = 3.986_004_418e14;
/// Lowest elevation of the station's operating range.
pub const OPERATIONAL_MIN_ELEVATION_RAD: f64 = 20.0 * std::f64::consts::PI / 180.0;

const SPACING_TOL_S: f64 = 1e-9;
const EPHEMERIS_HEADER: [&str; 3] = ["t_s", "elevation_deg", "range_m"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassSample {
    /// Seconds since pass start.
    pub t: f64,
    /// Slant range, meters.
    pub range_m: f64,
    /// Elevation above the horizon, radians.
    pub elevation_rad: f64,
}

impl PassSample {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_m > 0.0) || !self.range_m.is_finite() {
            return Err(Error::Validation(format!(
                "range_m > 0 violated at t={} (range_m={})",
                self.t, self.range_m
            )));
        }
        if !(self.elevation_rad > 0.0 && self.elevation_rad <= FRAC_PI_2) {
            return Err(Error::Validation(format!(
                "0 < elevation_rad <= pi/2 violated at t={} (elevation_rad={})",
                self.t, self.elevation_rad
            )));
        }
        if !self.t.is_finite() {
            return Err(Error::Validation("t must be finite".into()));
        }
        Ok(())
    }
}

/// Uniformly sampled pass. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassProfile {
    samples: Vec<PassSample>,
    step_s: f64,
}

impl PassProfile {
    pub fn new(samples: Vec<PassSample>, step_s: f64) -> Result<Self> {
        for s in &samples {
            s.validate()?;
        }
        for w in samples.windows(2) {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) {
                return Err(Error::Validation(format!(
                    "samples strictly increasing in t violated at t={}",
                    w[1].t
                )));
            }
            if (dt - step_s).abs() > SPACING_TOL_S {
                return Err(Error::Validation(format!(
                    "uniform spacing equal to step_s violated at t={} (dt={dt}, step_s={step_s})",
                    w[1].t
                )));
            }
        }
        Ok(PassProfile { samples, step_s })
    }

    pub fn empty(step_s: f64) -> Self {
        PassProfile {
            samples: Vec::new(),
            step_s,
        }
    }

    pub fn samples(&self) -> &[PassSample] {
        &self.samples
    }

    pub fn step_s(&self) -> f64 {
        self.step_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Covered time span, counting each sample as one step wide.
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 * self.step_s
    }

    /// Elevation span in radians (max − min), zero for fewer than two samples.
    pub fn elevation_span_rad(&self) -> f64 {
        let (lo, hi) = self
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.elevation_rad), hi.max(s.elevation_rad))
            });
        if self.samples.len() < 2 {
            0.0
        } else {
            hi - lo
        }
    }

    /// Drop samples below `min_elevation_rad`. The remaining samples must
    /// still be contiguous.
    pub fn above_elevation(&self, min_elevation_rad: f64) -> Result<PassProfile> {
        let kept: Vec<PassSample> = self
            .samples
            .iter()
            .copied()
            .filter(|s| s.elevation_rad >= min_elevation_rad)
            .collect();
        PassProfile::new(kept, self.step_s)
    }
}

/// Circular orbit passing a ground station with a fixed cross-track offset.
///
/// Non-rotating spherical Earth; time zero is the moment of closest approach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularPass {
    pub altitude_m: f64,
    pub earth_radius_m: f64,
    pub peak_elevation_rad: f64,
    /// Earth-central angle between station and ground track at closest approach.
    pub cross_track_angle_rad: f64,
    /// Orbital angular rate, rad/s.
    pub angular_rate: f64,
}

impl CircularPass {
    pub fn new(altitude_m: f64, peak_elevation_rad: f64, earth_radius_m: f64) -> Result<Self> {
        if !(2e5..=2e6).contains(&altitude_m) {
            return Err(Error::InvalidGeometry(format!(
                "orbit altitude {altitude_m} m outside [2e5, 2e6]"
            )));
        }
        if !(earth_radius_m > 0.0) {
            return Err(Error::InvalidGeometry("earth radius must be positive".into()));
        }
        if !(peak_elevation_rad > 0.0 && peak_elevation_rad <= FRAC_PI_2) {
            return Err(Error::InvalidGeometry(format!(
                "peak elevation {peak_elevation_rad} rad outside (0, pi/2]"
            )));
        }
        let orbit_radius = earth_radius_m + altitude_m;
        let cross_track = central_angle(peak_elevation_rad, earth_radius_m, orbit_radius);
        Ok(CircularPass {
            altitude_m,
            earth_radius_m,
            peak_elevation_rad,
            cross_track_angle_rad: cross_track,
            angular_rate: (EARTH_GM / orbit_radius.powi(3)).sqrt(),
        })
    }

    fn orbit_radius(&self) -> f64 {
        self.earth_radius_m + self.altitude_m
    }

    /// Elevation at time `t` relative to closest approach.
    pub fn elevation_at(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.peak_elevation_rad;
        }
        let along = self.angular_rate * t;
        let cos_central = self.cross_track_angle_rad.cos() * along.cos();
        let central = cos_central.clamp(-1.0, 1.0).acos();
        (cos_central - self.earth_radius_m / self.orbit_radius()).atan2(central.sin())
    }

    pub fn range_at_elevation(&self, elevation_rad: f64) -> f64 {
        slant_range(elevation_rad, self.altitude_m, self.earth_radius_m)
    }

    /// Time from closest approach until the elevation falls to `elevation_rad`.
    pub fn time_to_elevation(&self, elevation_rad: f64) -> Result<f64> {
        if !(elevation_rad > 0.0 && elevation_rad < self.peak_elevation_rad) {
            return Err(Error::InvalidGeometry(format!(
                "elevation {elevation_rad} rad is not below the peak {}",
                self.peak_elevation_rad
            )));
        }
        let lambda = central_angle(elevation_rad, self.earth_radius_m, self.orbit_radius());
        let cos_along = lambda.cos() / self.cross_track_angle_rad.cos();
        if !(-1.0..=1.0).contains(&cos_along) {
            return Err(Error::InvalidGeometry(format!(
                "elevation {elevation_rad} rad unreachable for this pass"
            )));
        }
        Ok(cos_along.acos() / self.angular_rate)
    }
}

/// Earth-central angle between the station and the sub-satellite point when
/// the satellite is seen at `elevation_rad`.
fn central_angle(elevation_rad: f64, earth_radius_m: f64, orbit_radius_m: f64) -> f64 {
    (earth_radius_m * elevation_rad.cos() / orbit_radius_m).acos() - elevation_rad
}

/// Slant range for a satellite at `altitude_m` seen at `elevation_rad`.
pub fn slant_range(elevation_rad: f64, altitude_m: f64, earth_radius_m: f64) -> f64 {
    let rs = earth_radius_m * elevation_rad.sin();
    (rs * rs + altitude_m * altitude_m + 2.0 * earth_radius_m * altitude_m).sqrt() - rs
}

/// Circular-orbit pass whose elevation rises from `min_elevation_rad` to the
/// peak and back, sampled every `step_s` symmetrically about the peak.
pub fn synthetic_pass(
    orbit_altitude_m: f64,
    peak_elevation_rad: f64,
    min_elevation_rad: f64,
    step_s: f64,
    earth_radius_m: f64,
) -> Result<PassProfile> {
    if !(step_s > 0.0) || !step_s.is_finite() {
        return Err(Error::InvalidGeometry(format!("step {step_s} s must be positive")));
    }
    if !(min_elevation_rad > 0.0 && min_elevation_rad < peak_elevation_rad) {
        return Err(Error::InvalidGeometry(format!(
            "need 0 < min elevation ({min_elevation_rad}) < peak elevation ({peak_elevation_rad})"
        )));
    }
    let pass = CircularPass::new(orbit_altitude_m, peak_elevation_rad, earth_radius_m)?;
    let half = pass.time_to_elevation(min_elevation_rad)?;
    let k_max = ((half + SPACING_TOL_S) / step_s).floor() as i64;
    let samples = (-k_max..=k_max)
        .map(|k| {
            let t_rel = k as f64 * step_s;
            let elevation = snap_to_degree_grid(pass.elevation_at(t_rel));
            PassSample {
                t: (k + k_max) as f64 * step_s,
                range_m: pass.range_at_elevation(elevation),
                elevation_rad: elevation,
            }
        })
        .collect();
    PassProfile::new(samples, step_s)
}

/// Reference pass: 500 km circular orbit, 54° peak, a 220 s window centred
/// on closest approach, 1 s sampling.
pub fn reference_pass() -> PassProfile {
    let pass = CircularPass::new(500e3, 54f64.to_radians(), EARTH_RADIUS_M).expect("reference geometry is valid");
    let min_elevation = pass.elevation_at(110.0);
    synthetic_pass(500e3, 54f64.to_radians(), min_elevation, 1.0, EARTH_RADIUS_M).expect("reference geometry is valid")
}

/// Round-trip through degrees once so the value survives the ephemeris
/// CSV (which stores degrees) bit-exactly.
fn snap_to_degree_grid(rad: f64) -> f64 {
    rad.to_degrees().to_radians()
}

/// Degrees value whose conversion back to radians reproduces `rad` exactly,
/// when one exists within a few ulps of the direct conversion.
fn degrees_exact(rad: f64) -> f64 {
    let direct = rad.to_degrees();
    let mut up = direct;
    let mut down = direct;
    for _ in 0..8 {
        if up.to_radians() == rad {
            return up;
        }
        if down.to_radians() == rad {
            return down;
        }
        up = up.next_up();
        down = down.next_down();
    }
    direct
}

pub fn write_ephemeris<W: Write>(profile: &PassProfile, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(EPHEMERIS_HEADER)?;
    for s in profile.samples() {
        w.write_record([
            s.t.to_string(),
            degrees_exact(s.elevation_rad).to_string(),
            s.range_m.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_ephemeris(path: impl AsRef<Path>) -> Result<PassProfile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_ephemeris(file, path)
}

/// Parse an ephemeris CSV. Non-uniform input is resampled onto the smallest
/// time step present, linearly in range and elevation.
pub fn read_ephemeris<R: Read>(reader: R, path: &Path) -> Result<PassProfile> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 3];
    for (slot, name) in idx.iter_mut().zip(EPHEMERIS_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("cannot parse {name} `{raw}`"),
            })
        };
        let sample = PassSample {
            t: field(idx[0], "t_s")?,
            elevation_rad: field(idx[1], "elevation_deg")?.to_radians(),
            range_m: field(idx[2], "range_m")?,
        };
        sample.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    resample_uniform(samples)
}

fn resample_uniform(samples: Vec<PassSample>) -> Result<PassProfile> {
    if samples.len() < 2 {
        return PassProfile::new(samples, 0.0);
    }
    let mut min_step = f64::INFINITY;
    for w in samples.windows(2) {
        let dt = w[1].t - w[0].t;
        if !(dt > 0.0) {
            return Err(Error::Validation(format!(
                "samples strictly increasing in t violated at t={}",
                w[1].t
            )));
        }
        min_step = min_step.min(dt);
    }
    let step = samples[1].t - samples[0].t;
    let uniform = samples
        .windows(2)
        .all(|w| ((w[1].t - w[0].t) - step).abs() <= SPACING_TOL_S);
    if uniform {
        return PassProfile::new(samples, step);
    }
    let t0 = samples[0].t;
    let t_end = samples[samples.len() - 1].t;
    let n = ((t_end - t0) / min_step + SPACING_TOL_S).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 * min_step;
        while j + 2 < samples.len() && samples[j + 1].t < t {
            j += 1;
        }
        let (a, b) = (samples[j], samples[j + 1]);
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        out.push(PassSample {
            t,
            range_m: a.range_m + w * (b.range_m - a.range_m),
            elevation_rad: a.elevation_rad + w * (b.elevation_rad - a.elevation_rad),
        });
    }
    PassProfile::new(out, min_step)
}
