use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use satqkd::fitting::{
    count_residuals, fit_count_rate, fit_noise, noise_residuals, synthesize_observations, FitResult, FreeParams,
    ObservationSeries,
};
use satqkd::geometry::{read_ephemeris, write_ephemeris};
use satqkd::pipeline::{pass_from_config, write_atomic, RunManifest};
use satqkd::postproc::{otp_decrypt, otp_encrypt, BitString, KeyStore};
use satqkd::protocol::{
    read_records, simulate_pass, simulate_pass_recording, tally_records, write_records, DetectionTally,
    IntrinsicErrorSeries, Mode, SimOptions,
};
use satqkd::security::{analyze, KeyReport};
use satqkd::{Channel, ChannelMap, Error, Intensity, PassProfile, SimulationConfig};
use serde::Serialize;

use crate::output::{ensure_dir, open, read, write_csv, write_json, AtomicFile, Input};
use crate::{ConfigArgs, FitArgs, FitKind, KeyrateArgs, OtpAction, OtpArgs, OtpIo, SimulateArgs, SynthArgs};

/// 1 for configuration and input errors, 2 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Input>().is_some() {
        return 1;
    }
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::InvalidGeometry(_)
                | Error::InvalidConfig(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::MissingColumn(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidParams(_)
                | Error::KeyExhausted { .. }
                | Error::KeyFormat(_)
                | Error::SeedRequired
                | Error::Json(_)
                | Error::Csv(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<serde_json::Error>() {
            return 1;
        }
    }
    2
}

fn input(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Input(msg.into()))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Flags override the file, the file overrides built-in defaults.
fn load_config(a: &ConfigArgs, manifest: &mut RunManifest) -> Result<SimulationConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            manifest.inputs.insert("config".into(), path_str(p));
            let text = String::from_utf8(read(p)?).map_err(|_| input(format!("{} is not UTF-8", p.display())))?;
            SimulationConfig::from_json_str(&text).with_context(|| format!("loading {}", p.display()))?
        }
        None => SimulationConfig::reference(),
    };
    let s = &mut cfg.security;
    s.epsilon = a.epsilon.unwrap_or(s.epsilon);
    s.eta_z = a.eta_z.unwrap_or(s.eta_z);
    s.eta_x = a.eta_x.unwrap_or(s.eta_x);
    s.f_ec = a.f_ec.unwrap_or(s.f_ec);
    cfg.validate()?;
    manifest.config = Some(cfg.clone());
    Ok(cfg)
}

fn load_profile(
    ephemeris: Option<&Path>,
    cfg: &SimulationConfig,
    operational_only: bool,
    manifest: &mut RunManifest,
) -> Result<PassProfile> {
    match ephemeris {
        Some(p) => {
            manifest.inputs.insert("ephemeris".into(), path_str(p));
            let profile = read_ephemeris(open(p)?, p)?;
            if operational_only {
                Ok(profile.above_elevation(cfg.pass.min_operational_elevation_deg.to_radians())?)
            } else {
                Ok(profile)
            }
        }
        None => Ok(pass_from_config(&cfg.pass)?),
    }
}

fn start(command: &str, out_dir: &Path) -> Result<RunManifest> {
    ensure_dir(out_dir)?;
    let mut m = RunManifest::new(command);
    m.out_dir = Some(path_str(out_dir));
    Ok(m)
}

#[derive(Serialize)]
struct TallyFile<'a> {
    tally: &'a DetectionTally,
}

#[derive(Serialize)]
struct FitFile<'a> {
    kind: &'static str,
    fit: &'a FitResult,
}

fn summarize(r: &KeyReport) {
    println!(
        "sifted {:.0} bits (signal {:.0}), signal QBER {:.4}%, decoy key {:.0} bits, mismatch key {:.0} bits",
        r.sifted_total_bits,
        r.sifted_signal_bits,
        100.0 * r.qber_signal,
        r.decoy_key_bits,
        r.mismatch_key_bits
    );
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut manifest = start("simulate", &a.out_dir)?;
    manifest.mode = Some(a.mode);
    manifest.seed = a.seed;
    let cfg = load_config(&a.config, &mut manifest)?;
    let profile = load_profile(a.ephemeris.as_deref(), &cfg, true, &mut manifest)?;
    let err = match &a.errors {
        Some(p) => {
            manifest.inputs.insert("errors".into(), path_str(p));
            IntrinsicErrorSeries::read(open(p)?, p)?
        }
        None => IntrinsicErrorSeries::constant(cfg.intrinsic_error)?,
    };
    let opts = SimOptions {
        mode: a.mode,
        seed: a.seed,
        per_pulse: a.per_pulse,
    };
    if a.mode == Mode::MonteCarlo && a.seed.is_none() {
        return Err(Error::SeedRequired.into());
    }

    let sim = if a.mode == Mode::MonteCarlo && !a.no_records {
        let path = a.out_dir.join("detections.csv");
        let mut file = AtomicFile::create(&path)?;
        std::io::Write::write_all(&mut file, crate::output::manifest_comment(&manifest)?.as_bytes())?;
        let mut records = write_records(&mut file)?;
        let sim = simulate_pass_recording(&profile, &cfg.receiver, &cfg.source, &err, &opts, &mut |r| {
            records.write(r)
        })?;
        records.finish()?;
        file.commit()?;
        sim
    } else {
        simulate_pass(&profile, &cfg.receiver, &cfg.source, &err, &opts)?
    };
    let report = analyze(&sim.tally, &cfg.source, &cfg.security)?;

    write_csv(&a.out_dir.join("sifted_rates.csv"), &manifest, |w| {
        sim.series.write_csv(w)
    })?;
    write_json(
        &a.out_dir.join("tally.json"),
        &manifest,
        &TallyFile { tally: &sim.tally },
    )?;
    write_json(&a.out_dir.join("key_report.json"), &manifest, &report)?;
    write_json(&a.out_dir.join("manifest.json"), &manifest, &serde_json::Map::new())?;
    summarize(&report);
    Ok(())
}

fn load_tally(path: &Path) -> Result<DetectionTally> {
    let value: serde_json::Value =
        serde_json::from_slice(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let inner = value.get("tally").cloned().unwrap_or(value);
    serde_json::from_value(inner).with_context(|| format!("{} holds no detection tally", path.display()))
}

pub fn keyrate(a: KeyrateArgs) -> Result<()> {
    let mut manifest = start("keyrate", &a.out_dir)?;
    let cfg = load_config(&a.config, &mut manifest)?;
    let mut tally = match (&a.detections, &a.stats) {
        (Some(p), _) => {
            manifest.inputs.insert("detections".into(), path_str(p));
            manifest.seed = Some(a.seed);
            let sent = a
                .sent_pulses
                .ok_or_else(|| input("--sent-pulses is required with --detections"))?;
            if !(sent > 0.0) {
                return Err(input("--sent-pulses must be positive"));
            }
            let records = read_records(open(p)?, p)?;
            let mut t = tally_records(&records, &cfg.receiver, &cfg.source, a.seed)?;
            for i in Intensity::ALL {
                t.add_sent(i, sent * cfg.source.probability(i));
            }
            t
        }
        (None, Some(p)) => {
            manifest.inputs.insert("stats".into(), path_str(p));
            load_tally(p)?
        }
        (None, None) => return Err(input("one of --detections or --stats is required")),
    };
    if let Some(q) = a.qber {
        if !(0.0..=0.5).contains(&q) {
            return Err(input(format!("--qber {q} outside [0, 0.5]")));
        }
        tally.set_qber(Intensity::Signal, q);
        tally.set_qber(Intensity::Decoy, q);
    }
    let report = analyze(&tally, &cfg.source, &cfg.security)?;
    write_json(&a.out_dir.join("key_report.json"), &manifest, &report)?;
    summarize(&report);
    Ok(())
}

fn free_params(names: Option<&[String]>) -> Result<FreeParams> {
    let Some(names) = names else {
        return Ok(FreeParams::all());
    };
    let mut free = FreeParams {
        kappa: false,
        eta_opt: ChannelMap::splat(false),
    };
    for n in names {
        match n.trim() {
            "kappa" => free.kappa = true,
            other => {
                let c = other
                    .strip_prefix("eta_")
                    .and_then(|c| Channel::ALL.into_iter().find(|ch| ch.to_string() == c))
                    .ok_or_else(|| input(format!("unknown free parameter `{other}`")))?;
                free.eta_opt.set(c, true);
            }
        }
    }
    Ok(free)
}

pub fn fit(a: FitArgs) -> Result<()> {
    let mut manifest = start("fit", &a.out_dir)?;
    let cfg = load_config(&a.config, &mut manifest)?;
    manifest.inputs.insert("observations".into(), path_str(&a.observations));
    let obs = ObservationSeries::read(open(&a.observations)?, &a.observations)?;
    let profile = load_profile(a.ephemeris.as_deref(), &cfg, false, &mut manifest)?;
    let (rx, src) = (&cfg.receiver, &cfg.source);
    let (kind, fit, residuals) = match a.kind {
        FitKind::Counts => {
            let free = free_params(a.free.as_deref())?;
            let fit = fit_count_rate(&obs, &profile, rx, src, free)?;
            let r = count_residuals(&obs, &profile, rx, src, &fit)?;
            ("counts", fit, r)
        }
        FitKind::Noise => {
            if a.free.is_some() {
                bail!(Input("--free applies to the count fit only".into()));
            }
            let total = a.eta_opt_total.unwrap_or_else(|| rx.eta_opt.mean());
            let fit = fit_noise(&obs, &profile, rx, src, total)?;
            let r = noise_residuals(&obs, &profile, rx, src, total, &fit)?;
            ("noise", fit, r)
        }
    };
    write_json(
        &a.out_dir.join("fit_result.json"),
        &manifest,
        &FitFile { kind, fit: &fit },
    )?;
    write_csv(&a.out_dir.join("fit_residuals.csv"), &manifest, |w| residuals.write(w))?;
    for (name, v) in &fit.params {
        println!(
            "{name} = {v:.6} ± {:.6}",
            fit.stderr.get(name).copied().unwrap_or(f64::NAN)
        );
    }
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    if !fit.converged {
        log::warn!("fit did not converge in {} iterations", fit.iterations);
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut manifest = start("synth", &a.out_dir)?;
    manifest.seed = a.seed;
    let cfg = load_config(&a.config, &mut manifest)?;
    let profile = pass_from_config(&cfg.pass)?;
    let obs = synthesize_observations(&profile, &cfg.receiver, &cfg.source, a.seed);
    write_csv(&a.out_dir.join("ephemeris.csv"), &manifest, |w| {
        write_ephemeris(&profile, w)
    })?;
    write_csv(&a.out_dir.join("observations.csv"), &manifest, |w| obs.write(w))?;
    let mut text = serde_json::to_string_pretty(&cfg)?;
    text.push('\n');
    write_atomic(&a.out_dir.join("config.json"), text.as_bytes())?;
    Ok(())
}

fn open_store(path: &Path) -> Result<KeyStore> {
    if !path.is_file() {
        return Err(input(format!("key file {} not found", path.display())));
    }
    Ok(KeyStore::open(path)?)
}

fn otp_apply(io: &OtpIo, f: fn(&[u8], &BitString) -> satqkd::Result<Vec<u8>>) -> Result<()> {
    let data = read(&io.input)?;
    let mut store = open_store(&io.key_file)?;
    let needed = 8 * data.len();
    if needed > store.available_bits() {
        return Err(Error::KeyExhausted {
            needed: needed as u64,
            available: store.available_bits() as u64,
        }
        .into());
    }
    let start = store.spent_bits();
    let key = store.take(needed)?;
    let out = f(&data, &key)?;
    write_atomic(&io.output, &out).with_context(|| format!("writing {}", io.output.display()))?;
    log::info!(
        "consumed key bits {start}..{} of {}; {} remain",
        start + needed,
        store.len_bits(),
        store.available_bits()
    );
    Ok(())
}

pub fn otp(a: OtpArgs) -> Result<()> {
    match a.action {
        OtpAction::Keygen { key_file, bits, seed } => {
            if key_file.exists() {
                return Err(input(format!(
                    "{} exists; refusing to overwrite key material",
                    key_file.display()
                )));
            }
            KeyStore::create(&key_file, BitString::random(bits, seed))?;
            Ok(())
        }
        OtpAction::Encrypt(io) => otp_apply(&io, otp_encrypt),
        OtpAction::Decrypt(io) => otp_apply(&io, otp_decrypt),
    }
}
