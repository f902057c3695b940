//! Observed vs fitted series for plotting.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{align, link_eta, mean_eta_fixed, FitResult, ObservationSeries};
use crate::channel::Channel;
use crate::config::{ReceiverConfig, SourceConfig};
use crate::error::{Error, Result};
use crate::geometry::PassProfile;
use crate::link::count_rate;

/// Per-sample observed and model values of one or more named series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub names: Vec<String>,
    pub t: Vec<f64>,
    pub elevation_deg: Vec<f64>,
    /// `observed[k][j]` is series `names[j]` at sample `k`.
    pub observed: Vec<Vec<f64>>,
    pub model: Vec<Vec<f64>>,
}

impl ResidualSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Columns `t_s, elevation_deg`, then `obs_*, model_*, resid_*` per series.
    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["t_s".to_string(), "elevation_deg".to_string()];
        for n in &self.names {
            header.extend([format!("obs_{n}"), format!("model_{n}"), format!("resid_{n}")]);
        }
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k].to_string(), self.elevation_deg[k].to_string()];
            for j in 0..self.names.len() {
                let (o, m) = (self.observed[k][j], self.model[k][j]);
                row.extend([o.to_string(), m.to_string(), (o - m).to_string()]);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R, path: &Path) -> Result<Self> {
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
        let (ti, ei) = (col("t_s")?, col("elevation_deg")?);
        let names: Vec<String> = headers
            .iter()
            .filter_map(|h| h.strip_prefix("obs_").map(str::to_string))
            .collect();
        let cols: Vec<(usize, usize)> = names
            .iter()
            .map(|n| Ok((col(&format!("obs_{n}"))?, col(&format!("model_{n}"))?)))
            .collect::<Result<_>>()?;
        let mut out = ResidualSeries {
            names,
            ..Default::default()
        };
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
            out.t.push(field(ti)?);
            out.elevation_deg.push(field(ei)?);
            out.observed
                .push(cols.iter().map(|&(o, _)| field(o)).collect::<Result<_>>()?);
            out.model
                .push(cols.iter().map(|&(_, m)| field(m)).collect::<Result<_>>()?);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read(std::fs::File::open(path)?, path)
    }
}

/// Channel count rates against the model with the fitted ϰ and η_opt;
/// parameters absent from `fit` keep their receiver value.
pub fn count_residuals(
    obs: &ObservationSeries,
    profile: &PassProfile,
    rx: &ReceiverConfig,
    src: &SourceConfig,
    fit: &FitResult,
) -> Result<ResidualSeries> {
    let samples = align(&obs.t, profile)?;
    let kappa = fit.params.get("kappa").copied().unwrap_or(rx.kappa);
    let eta = |c: Channel| {
        fit.params
            .get(&format!("eta_opt_{c}"))
            .copied()
            .unwrap_or(rx.eta_opt.get(c))
    };
    let mut out = ResidualSeries {
        names: Channel::ALL.iter().map(|c| c.to_string()).collect(),
        ..Default::default()
    };
    for ((s, &t), counts) in samples.iter().zip(&obs.t).zip(&obs.counts) {
        out.t.push(t);
        out.elevation_deg.push(s.elevation_rad.to_degrees());
        out.observed.push(Channel::ALL.iter().map(|&c| counts.get(c)).collect());
        out.model.push(
            Channel::ALL
                .iter()
                .map(|&c| count_rate(link_eta(s, rx, src, kappa, eta(c)), rx, src, c))
                .collect(),
        );
    }
    Ok(out)
}

/// Noise rate against `T·η + C` with the fitted (T, C, ϰ).
pub fn noise_residuals(
    obs: &ObservationSeries,
    profile: &PassProfile,
    rx: &ReceiverConfig,
    src: &SourceConfig,
    eta_opt_total: f64,
    fit: &FitResult,
) -> Result<ResidualSeries> {
    let noise = obs.noise.as_ref().ok_or_else(|| Error::MissingColumn("noise".into()))?;
    let samples = align(&obs.t, profile)?;
    let p = |k: &str, default: f64| fit.params.get(k).copied().unwrap_or(default);
    let (t_coef, c_coef, kappa) = (p("T", rx.sat_noise_t), p("C", rx.bg_noise_c), p("kappa", rx.kappa));
    let mut out = ResidualSeries {
        names: vec!["noise".into()],
        ..Default::default()
    };
    for ((s, &t), &n) in samples.iter().zip(&obs.t).zip(noise) {
        out.t.push(t);
        out.elevation_deg.push(s.elevation_rad.to_degrees());
        out.observed.push(vec![n]);
        out.model
            .push(vec![t_coef * mean_eta_fixed(s, rx, src, kappa, eta_opt_total) + c_coef]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{fit_count_rate, synthesize_observations, FreeParams};
    use crate::geometry::reference_pass;

    #[test]
    fn noiseless_fit_has_zero_residuals_and_round_trips() {
        let (rx, src) = (ReceiverConfig::default(), SourceConfig::default());
        let profile = reference_pass();
        let obs = synthesize_observations(&profile, &rx, &src, None);
        let fit = fit_count_rate(&obs, &profile, &rx, &src, FreeParams::all()).unwrap();
        let r = count_residuals(&obs, &profile, &rx, &src, &fit).unwrap();
        assert_eq!(r.len(), obs.len());
        for (o, m) in r.observed.iter().flatten().zip(r.model.iter().flatten()) {
            assert!((o - m).abs() <= 1e-6 * o.abs().max(1.0));
        }
        let mut buf = Vec::new();
        r.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,elevation_deg,obs_H,model_H,resid_H"));
        assert_eq!(ResidualSeries::read(buf.as_slice(), Path::new("r")).unwrap(), r);
    }
}
