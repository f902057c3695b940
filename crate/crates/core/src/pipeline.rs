//! End-to-end pass run: geometry, rates, tally and key lengths.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{PassConfig, SimulationConfig};
use crate::error::{Error, Result};
use crate::geometry::{synthetic_pass, CircularPass, PassProfile, EARTH_RADIUS_M};
use crate::protocol::{simulate_pass, IntrinsicErrorSeries, Mode, SimOptions, Simulation};
use crate::security::{analyze, KeyReport};

/// Provenance embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    /// Input role → path as given on the command line.
    pub inputs: BTreeMap<String, String>,
    pub out_dir: Option<String>,
    pub config: Option<SimulationConfig>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: "satqkd".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            mode: None,
            seed: None,
            inputs: BTreeMap::new(),
            out_dir: None,
            config: None,
        }
    }
}

/// Replace `path` with `bytes` via a temporary file in the same directory.
/// The result is world-readable.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_mode(path, bytes, 0o644)
}

/// As [`write_atomic`], readable by the owner only.
pub fn write_atomic_private(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_mode(path, bytes, 0o600)
}

fn write_atomic_mode(path: &Path, bytes: &[u8], _mode: u32) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(_mode))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Synthetic pass described by the configuration, restricted to the
/// operational elevation range.
pub fn pass_from_config(pass: &PassConfig) -> Result<PassProfile> {
    let peak = pass.peak_elevation_deg.to_radians();
    let orbit = CircularPass::new(pass.altitude_m, peak, EARTH_RADIUS_M)?;
    let min_elevation = orbit.elevation_at(0.5 * pass.duration_s);
    synthetic_pass(pass.altitude_m, peak, min_elevation, pass.step_s, EARTH_RADIUS_M)?
        .above_elevation(pass.min_operational_elevation_deg.to_radians())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassRun {
    pub simulation: Simulation,
    pub report: KeyReport,
}

pub fn run_pass(
    cfg: &SimulationConfig,
    profile: &PassProfile,
    err: &IntrinsicErrorSeries,
    opts: &SimOptions,
) -> Result<PassRun> {
    cfg.validate()?;
    let simulation = simulate_pass(profile, &cfg.receiver, &cfg.source, err, opts)?;
    let report = analyze(&simulation.tally, &cfg.source, &cfg.security)?;
    Ok(PassRun { simulation, report })
}
