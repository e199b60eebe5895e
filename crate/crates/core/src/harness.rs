//! Experiment configuration, the analytic + Monte Carlo pipeline, and CSV output.
//!
//! Config files are plain `key = value` lines; `#` starts a comment.
//!
//! | key             | value                                                        |
//! |-----------------|--------------------------------------------------------------|
//! | `host`          | `ar1`, `ar1_modulated`, or `file`                            |
//! | `sigma2`, `rho` | AR(1) variance and correlation (`ar1`, `ar1_modulated`)      |
//! | `envelope`      | `ramp:<start>,<end>` or `values:<v1> <v2> ...` (modulated)   |
//! | `host_file`     | CSV covariance path (`file`); relative to the config file    |
//! | `n`             | dimension (optional for `file`, checked when given)          |
//! | `pw`            | watermark power budget                                       |
//! | `strategies`    | comma list of `white`, `matched`, `mismatched_ar1:<rho>`     |
//! | `r_targets`     | comma list of numbers or `removal` (the `γ = 1` point)       |
//! | `monte_carlo_m` | samples per cell, `0` for analytic only (default `0`)        |
//! | `seed`          | 64-bit seed (default `0`)                                    |

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::attack::{solve_attack, watermark_wiener};
use crate::covariance::{
    ar1_autocorr, modulate, read_covariance_csv, sample_ensemble_stream, toeplitz_from_autocorr,
    CovarianceMatrix, SampleBatch,
};
use crate::design::estimated_watermark_covariance;
use crate::error::{Error, Result};
use crate::wiener::FilterMatrix;

pub const CSV_HEADER: &str = "strategy,r0,gamma,E,D,E_mc,D_mc,r_mc,se_E,se_D,se_r";

const MC_CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeSpec {
    /// Linear ramp from `start` at index 0 to `end` at index `N − 1`.
    Ramp {
        start: f64,
        end: f64,
    },
    Values(Vec<f64>),
}

impl EnvelopeSpec {
    pub fn envelope(&self, n: usize) -> Result<Vec<f64>> {
        let env = match self {
            EnvelopeSpec::Ramp { start, end } => (0..n)
                .map(|i| {
                    if n == 1 {
                        *start
                    } else {
                        start + (end - start) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
            EnvelopeSpec::Values(v) => {
                if v.len() != n {
                    return Err(Error::Config(format!(
                        "envelope has {} values but n = {n}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if env.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("envelope entries must be positive".into()));
        }
        Ok(env)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HostModel {
    Ar1 {
        variance: f64,
        rho: f64,
    },
    Ar1Modulated {
        variance: f64,
        rho: f64,
        envelope: EnvelopeSpec,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    White,
    Matched,
    MismatchedAr1(f64),
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::White => "white".into(),
            Strategy::Matched => "matched".into(),
            Strategy::MismatchedAr1(rho) => format!("mismatched_ar1:{rho}"),
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token.trim() {
            "white" => Ok(Strategy::White),
            "matched" => Ok(Strategy::Matched),
            other => match other.strip_prefix("mismatched_ar1:") {
                Some(rho) => Ok(Strategy::MismatchedAr1(parse_f64("mismatched_ar1", rho)?)),
                None => Err(Error::Config(format!("unknown strategy {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RTarget {
    /// Correlation left by the pure Wiener removal attack (`γ = 1`).
    Removal,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub host: HostModel,
    /// Required for AR(1) hosts; optional consistency check for file hosts.
    pub n: Option<usize>,
    pub p_w: f64,
    pub strategies: Vec<Strategy>,
    pub r_targets: Vec<RTarget>,
    pub monte_carlo_m: usize,
    pub seed: u64,
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {:?}: {e}", value.trim())))
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn parse_envelope(value: &str) -> Result<EnvelopeSpec> {
    let value = value.trim();
    if let Some(rest) = value.strip_prefix("ramp:") {
        let parts = parse_list(rest, |s| parse_f64("envelope", s))?;
        if parts.len() != 2 {
            return Err(Error::Config("ramp envelope needs start,end".into()));
        }
        Ok(EnvelopeSpec::Ramp {
            start: parts[0],
            end: parts[1],
        })
    } else if let Some(rest) = value.strip_prefix("values:") {
        let v = rest
            .split_whitespace()
            .map(|s| parse_f64("envelope", s))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnvelopeSpec::Values(v))
    } else {
        Err(Error::Config(format!("unknown envelope spec {value:?}")))
    }
}

impl ExperimentConfig {
    /// Parse the key-value format. Relative `host_file` paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut host = None;
        let mut sigma2 = None;
        let mut rho = None;
        let mut envelope = None;
        let mut host_file = None;
        let mut n = None;
        let mut p_w = None;
        let mut strategies = None;
        let mut r_targets = None;
        let mut monte_carlo_m = 0usize;
        let mut seed = 0u64;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let value = value.trim();
            match key.trim() {
                "host" => host = Some(value.to_string()),
                "sigma2" => sigma2 = Some(parse_f64("sigma2", value)?),
                "rho" => rho = Some(parse_f64("rho", value)?),
                "envelope" => envelope = Some(parse_envelope(value)?),
                "host_file" => host_file = Some(PathBuf::from(value)),
                "n" => {
                    n =
                        Some(value.parse::<usize>().map_err(|e| {
                            Error::Config(format!("n: cannot parse {value:?}: {e}"))
                        })?)
                }
                "pw" => p_w = Some(parse_f64("pw", value)?),
                "strategies" => strategies = Some(parse_list(value, Strategy::parse)?),
                "r_targets" => {
                    r_targets = Some(parse_list(value, |s| {
                        if s == "removal" {
                            Ok(RTarget::Removal)
                        } else {
                            parse_f64("r_targets", s).map(RTarget::Value)
                        }
                    })?)
                }
                "monte_carlo_m" => {
                    monte_carlo_m = value.parse().map_err(|e| {
                        Error::Config(format!("monte_carlo_m: cannot parse {value:?}: {e}"))
                    })?
                }
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|e| Error::Config(format!("seed: cannot parse {value:?}: {e}")))?
                }
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }

        let missing = |k: &str| Error::Config(format!("missing key {k:?}"));
        let host = match host.as_deref() {
            Some("ar1") => HostModel::Ar1 {
                variance: sigma2.ok_or_else(|| missing("sigma2"))?,
                rho: rho.ok_or_else(|| missing("rho"))?,
            },
            Some("ar1_modulated") => HostModel::Ar1Modulated {
                variance: sigma2.ok_or_else(|| missing("sigma2"))?,
                rho: rho.ok_or_else(|| missing("rho"))?,
                envelope: envelope.ok_or_else(|| missing("envelope"))?,
            },
            Some("file") => {
                let path = host_file.ok_or_else(|| missing("host_file"))?;
                HostModel::File(match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path,
                })
            }
            Some(other) => return Err(Error::Config(format!("unknown host model {other:?}"))),
            None => return Err(missing("host")),
        };

        let config = ExperimentConfig {
            host,
            n,
            p_w: p_w.ok_or_else(|| missing("pw"))?,
            strategies: strategies.ok_or_else(|| missing("strategies"))?,
            r_targets: r_targets.ok_or_else(|| missing("r_targets"))?,
            monte_carlo_m,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_w > 0.0) || !self.p_w.is_finite() {
            return Err(Error::Config(format!(
                "pw must be positive, got {}",
                self.p_w
            )));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if self.r_targets.is_empty() {
            return Err(Error::Config("at least one r0 target is required".into()));
        }
        if self.monte_carlo_m == 1 {
            return Err(Error::Config(
                "monte_carlo_m must be 0 or at least 2 (standard errors need two samples)".into(),
            ));
        }
        match &self.host {
            HostModel::Ar1 { .. } | HostModel::Ar1Modulated { .. } => match self.n {
                Some(n) if n >= 1 => {}
                _ => return Err(Error::Config("n must be at least 1".into())),
            },
            HostModel::File(_) => {
                if self.n == Some(0) {
                    return Err(Error::Config("n must be at least 1".into()));
                }
            }
        }
        if let HostModel::Ar1Modulated { envelope, .. } = &self.host {
            envelope.envelope(self.n.unwrap_or(1))?;
        }
        Ok(())
    }

    pub fn host_covariance(&self) -> Result<CovarianceMatrix> {
        match &self.host {
            HostModel::Ar1 { variance, rho } => {
                toeplitz_from_autocorr(&ar1_autocorr(*variance, *rho, self.dim()?)?)
            }
            HostModel::Ar1Modulated {
                variance,
                rho,
                envelope,
            } => {
                let n = self.dim()?;
                let base = toeplitz_from_autocorr(&ar1_autocorr(*variance, *rho, n)?)?;
                modulate(&base, &envelope.envelope(n)?)
            }
            HostModel::File(path) => {
                let c = read_covariance_csv(path).map_err(|e| {
                    Error::Config(format!("cannot load host {}: {e}", path.display()))
                })?;
                if let Some(n) = self.n {
                    if n != c.dim() {
                        return Err(Error::Config(format!(
                            "host file is {}x{} but n = {n}",
                            c.dim(),
                            c.dim()
                        )));
                    }
                }
                Ok(c)
            }
        }
    }

    fn dim(&self) -> Result<usize> {
        self.n
            .ok_or_else(|| Error::Config("missing key \"n\"".into()))
    }
}

/// Watermark covariance for a strategy, rescaled to trace `N·p_w`.
pub fn build_strategy_covariance(
    strategy: &Strategy,
    c_x: &CovarianceMatrix,
    p_w: f64,
) -> Result<CovarianceMatrix> {
    if !(p_w > 0.0) || !p_w.is_finite() {
        return Err(Error::InvalidParam(format!(
            "watermark power must be positive, got {p_w}"
        )));
    }
    let n = c_x.dim();
    let raw = match strategy {
        Strategy::White => CovarianceMatrix::identity(n),
        Strategy::Matched => c_x.clone(),
        Strategy::MismatchedAr1(rho) => toeplitz_from_autocorr(&ar1_autocorr(p_w, *rho, n)?)?,
    };
    raw.with_trace(n as f64 * p_w)
}

/// Monte Carlo means and standard errors of the per-realization summands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloStats {
    pub residual_energy: f64,
    pub distortion: f64,
    pub correlation: f64,
    pub se_residual_energy: f64,
    pub se_distortion: f64,
    pub se_correlation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub strategy: String,
    pub r0: f64,
    pub gamma: f64,
    /// `(1/N)·E‖w − γHy‖²`; equals the removal-attack energy at `γ = 1`.
    pub residual_energy: f64,
    pub distortion: f64,
    pub monte_carlo: Option<MonteCarloStats>,
}

/// Residual watermark energy after `ŵ_γ = γ·H·y` is subtracted:
/// `(1/N)·[tr(C_w) − 2γ·tr(H C_w) + γ²·tr(C_ŵ)]`.
pub fn residual_energy_gamma(
    c_x: &CovarianceMatrix,
    c_w: &CovarianceMatrix,
    gamma: f64,
) -> Result<f64> {
    let h = watermark_wiener(c_x, c_w)?;
    let leverage = (h.matrix() * c_w.matrix()).trace();
    let c_what = estimated_watermark_covariance(c_x, c_w)?;
    Ok((c_w.trace() - 2.0 * gamma * leverage + gamma * gamma * c_what.trace()) / c_x.dim() as f64)
}

#[derive(Default)]
struct Moments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn standard_error(&self) -> f64 {
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

fn monte_carlo_cell(
    x: &SampleBatch,
    w: &SampleBatch,
    g: &FilterMatrix,
    h: &FilterMatrix,
    gamma: f64,
) -> MonteCarloStats {
    let n = x.dim();
    let m = x.count();
    let inv_n = 1.0 / n as f64;
    let (mut e, mut d, mut r) = (Moments::default(), Moments::default(), Moments::default());
    let gt = g.matrix().transpose();
    let ht = h.matrix().transpose() * gamma;
    let mut start = 0;
    while start < m {
        let rows = MC_CHUNK_ROWS.min(m - start);
        let xs = x.data().rows(start, rows);
        let ws = w.data().rows(start, rows);
        let ys: DMatrix<f64> = xs + ws;
        let yhat = &ys * &gt;
        let what = &ys * &ht;
        for i in 0..rows {
            let (mut ei, mut di, mut ri) = (0.0, 0.0, 0.0);
            for j in 0..n {
                let wij = ws[(i, j)];
                ei += (wij - what[(i, j)]).powi(2);
                di += (yhat[(i, j)] - xs[(i, j)]).powi(2);
                ri += yhat[(i, j)] * wij;
            }
            e.push(ei * inv_n);
            d.push(di * inv_n);
            r.push(ri * inv_n);
        }
        start += rows;
    }
    MonteCarloStats {
        residual_energy: e.mean,
        distortion: d.mean,
        correlation: r.mean,
        se_residual_energy: e.standard_error(),
        se_distortion: d.standard_error(),
        se_correlation: r.standard_error(),
    }
}

/// Run every (strategy, r0) cell. Rows come back in config order.
///
/// Host draws use substream 0 of the seed and the watermark for strategy `k`
/// uses substream `k + 1`, so results do not depend on execution order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    let c_x = config.host_covariance()?;
    let n = c_x.dim();
    let host_batch = if config.monte_carlo_m > 0 {
        Some(sample_ensemble_stream(
            &c_x,
            config.monte_carlo_m,
            config.seed,
            0,
        )?)
    } else {
        None
    };

    let per_strategy: Vec<Result<Vec<ExperimentRow>>> = config
        .strategies
        .par_iter()
        .enumerate()
        .map(|(k, strategy)| {
            let c_w = build_strategy_covariance(strategy, &c_x, config.p_w)?;
            let h = watermark_wiener(&c_x, &c_w)?;
            let leverage = (h.matrix() * c_w.matrix()).trace();
            let mark_batch = match host_batch {
                Some(_) => Some(sample_ensemble_stream(
                    &c_w,
                    config.monte_carlo_m,
                    config.seed,
                    k as u64 + 1,
                )?),
                None => None,
            };
            config
                .r_targets
                .iter()
                .map(|target| {
                    let r0 = match target {
                        RTarget::Removal => (c_w.trace() - leverage) / n as f64,
                        RTarget::Value(v) => *v,
                    };
                    let sol = solve_attack(&c_x, &c_w, r0)?;
                    let monte_carlo = match (&host_batch, &mark_batch) {
                        (Some(x), Some(w)) => Some(monte_carlo_cell(
                            x,
                            w,
                            &sol.attack,
                            &sol.estimator,
                            sol.gamma,
                        )),
                        _ => None,
                    };
                    Ok(ExperimentRow {
                        strategy: strategy.label(),
                        r0,
                        gamma: sol.gamma,
                        residual_energy: residual_energy_gamma(&c_x, &c_w, sol.gamma)?,
                        distortion: sol.distortion,
                        monte_carlo,
                    })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for block in per_strategy {
        rows.extend(block?);
    }
    Ok(rows)
}

fn fmt_num(v: f64) -> String {
    format!("{v:.15e}")
}

/// Render rows as CSV text (header plus one line per row).
pub fn format_csv(rows: &[ExperimentRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidParam("no rows to emit".into()));
    }
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let mut fields = vec![
            row.strategy.clone(),
            fmt_num(row.r0),
            fmt_num(row.gamma),
            fmt_num(row.residual_energy),
            fmt_num(row.distortion),
        ];
        match &row.monte_carlo {
            Some(mc) => fields.extend(
                [
                    mc.residual_energy,
                    mc.distortion,
                    mc.correlation,
                    mc.se_residual_energy,
                    mc.se_distortion,
                    mc.se_correlation,
                ]
                .map(fmt_num),
            ),
            None => fields.extend(std::iter::repeat_n(String::new(), 6)),
        }
        writeln!(out, "{}", fields.join(",")).expect("writing to String");
    }
    Ok(out)
}

/// Write rows as CSV to any sink.
pub fn emit_csv(rows: &[ExperimentRow], mut out: impl Write) -> Result<()> {
    out.write_all(format_csv(rows)?.as_bytes())?;
    Ok(())
}

/// Write rows to `path`. Nothing is created when `rows` is empty.
pub fn write_csv_file(rows: &[ExperimentRow], path: impl AsRef<Path>) -> Result<()> {
    let text = format_csv(rows)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse CSV produced by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ExperimentRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Parse("missing results header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(Error::Parse(format!("expected 11 fields, got {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            };
            let monte_carlo = if f[5..].iter().all(|s| s.is_empty()) {
                None
            } else {
                Some(MonteCarloStats {
                    residual_energy: num(f[5])?,
                    distortion: num(f[6])?,
                    correlation: num(f[7])?,
                    se_residual_energy: num(f[8])?,
                    se_distortion: num(f[9])?,
                    se_correlation: num(f[10])?,
                })
            };
            Ok(ExperimentRow {
                strategy: f[0].to_string(),
                r0: num(f[1])?,
                gamma: num(f[2])?,
                residual_energy: num(f[3])?,
                distortion: num(f[4])?,
                monte_carlo,
            })
        })
        .collect()
}
