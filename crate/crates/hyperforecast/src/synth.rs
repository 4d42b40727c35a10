//! Synthetic regime-switching series with a known generative law.
//!
//! Each regime is a stationary AR(2) process around its own level; a schedule
//! switches regimes over time, manufacturing controlled shift in the marginal
//! distribution of windows. Because the law is known, the minimum-MSE one-step
//! predictor is available in closed form and its RMSE (the noise level) is the
//! floor any model can be measured against. Models never see regime ids, only
//! the raw series.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::RawSeries;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One AR(2) regime: x_t = mu + phi1 (x_{t-1} - mu) + phi2 (x_{t-2} - mu) + noise.
#[derive(Debug, Clone, Copy)]
pub struct Regime {
    pub phi1: f64,
    pub phi2: f64,
    pub sigma: f64,
    pub mu: f64,
}

impl Regime {
    /// Stationarity triangle for AR(2).
    pub fn is_stationary(&self) -> bool {
        self.phi2.abs() < 1.0 && self.phi1 + self.phi2 < 1.0 && self.phi2 - self.phi1 < 1.0
    }

    /// Stationary variance of the process around mu.
    pub fn stationary_variance(&self) -> f64 {
        let (p1, p2, s2) = (self.phi1, self.phi2, self.sigma * self.sigma);
        s2 * (1.0 - p2) / ((1.0 + p2) * ((1.0 - p2) * (1.0 - p2) - p1 * p1))
    }

    pub fn stationary_std(&self) -> f64 {
        self.stationary_variance().sqrt()
    }

    /// Theoretical lag-1 autocorrelation.
    pub fn lag1_autocorrelation(&self) -> f64 {
        self.phi1 / (1.0 - self.phi2)
    }
}

/// Regime parameters plus a switching schedule covering [0, length).
#[derive(Debug, Clone)]
pub struct RegimeSpec {
    pub regimes: Vec<Regime>,
    /// (start index, regime id); starts strictly increasing, first is 0.
    pub schedule: Vec<(usize, usize)>,
    pub length: usize,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::config("length must be positive"));
        }
        if self.regimes.is_empty() {
            return Err(Error::config("at least one regime required"));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if !r.is_stationary() {
                return Err(Error::config(format!(
                    "regime {} (phi1={}, phi2={}) is not stationary",
                    i, r.phi1, r.phi2
                )));
            }
            if r.sigma < 0.0 {
                return Err(Error::config(format!("regime {} has negative sigma", i)));
            }
        }
        if self.schedule.is_empty() || self.schedule[0].0 != 0 {
            return Err(Error::config("schedule must start at index 0"));
        }
        for w in self.schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::config("schedule starts must be strictly increasing"));
            }
        }
        for &(start, id) in &self.schedule {
            if start >= self.length {
                return Err(Error::config(format!(
                    "schedule start {} beyond length {}",
                    start, self.length
                )));
            }
            if id >= self.regimes.len() {
                return Err(Error::config(format!("schedule names unknown regime {}", id)));
            }
        }
        Ok(())
    }

    /// Convenience: regimes alternating in fixed-size blocks.
    pub fn alternating(regimes: Vec<Regime>, block: usize, length: usize) -> Result<RegimeSpec> {
        if block == 0 {
            return Err(Error::config("block length must be positive"));
        }
        let n_regimes = regimes.len().max(1);
        let mut schedule = Vec::new();
        let mut start = 0;
        let mut id = 0;
        while start < length {
            schedule.push((start, id));
            id = (id + 1) % n_regimes;
            start += block;
        }
        let spec = RegimeSpec {
            regimes,
            schedule,
            length,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Regime id active at time t.
    pub fn regime_at(&self, t: usize) -> usize {
        let mut id = self.schedule[0].1;
        for &(start, r) in &self.schedule {
            if start <= t {
                id = r;
            } else {
                break;
            }
        }
        id
    }
}

/// Generate the series. Deterministic in (spec, seed). The recursion starts
/// at the first regime's level.
pub fn generate(spec: &RegimeSpec, seed: u64) -> Result<RawSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::numeric(e.to_string()))?;
    let mut values = Vec::with_capacity(spec.length);
    let first_mu = spec.regimes[spec.schedule[0].1].mu;
    let (mut prev1, mut prev2) = (first_mu, first_mu);
    for t in 0..spec.length {
        let r = &spec.regimes[spec.regime_at(t)];
        let noise = normal.sample(&mut rng) * r.sigma;
        let x = r.mu + r.phi1 * (prev1 - r.mu) + r.phi2 * (prev2 - r.mu) + noise;
        values.push(x);
        prev2 = prev1;
        prev1 = x;
    }
    RawSeries::new(
        Tensor::new(Shape::matrix(1, spec.length), values)?,
        None,
        Some(vec!["value".to_string()]),
    )
}

/// The minimum-MSE one-step prediction given the regime and the last two
/// values; its irreducible RMSE is the regime's noise level.
pub fn oracle_one_step(regime: &Regime, prev1: f64, prev2: f64) -> f64 {
    regime.mu + regime.phi1 * (prev1 - regime.mu) + regime.phi2 * (prev2 - regime.mu)
}

/// RMSE of the oracle predictor over [start, end) of a generated series,
/// using the true regime at every step. This is the floor a trained model is
/// compared against.
pub fn oracle_rmse(spec: &RegimeSpec, series: &RawSeries, start: usize, end: usize) -> Result<f64> {
    if start < 2 || end > series.len() || start >= end {
        return Err(Error::contract(format!(
            "oracle_rmse: bad range [{}, {}) for series of length {} (start >= 2 required)",
            start,
            end,
            series.len()
        )));
    }
    let mut sq_sum = 0.0;
    for t in start..end {
        let r = &spec.regimes[spec.regime_at(t)];
        let pred = oracle_one_step(r, series.value_at(0, t - 1), series.value_at(0, t - 2));
        let err = series.value_at(0, t) - pred;
        sq_sum += err * err;
    }
    Ok((sq_sum / (end - start) as f64).sqrt())
}

/// Mean pairwise distance between regime stationary distributions:
/// |mu_i - mu_j| + |std_i - std_j|, averaged over pairs. Orders benchmark
/// suites from mild to severe shift.
pub fn shift_severity(spec: &RegimeSpec) -> Result<f64> {
    let n = spec.regimes.len();
    if n < 2 {
        return Err(Error::contract("shift_severity needs at least two regimes"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&spec.regimes[i], &spec.regimes[j]);
            total += (a.mu - b.mu).abs() + (a.stationary_std() - b.stationary_std()).abs();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Per-regime and overall oracle RMSE, written next to generated series so
/// later evaluation has its baseline on hand.
pub fn write_oracle_sidecar(
    spec: &RegimeSpec,
    series: &RawSeries,
    path: &Path,
) -> Result<()> {
    let mut text = String::from("scope,oracle_rmse\n");
    let overall = oracle_rmse(spec, series, 2, series.len())?;
    let _ = writeln!(text, "overall,{}", overall);
    for id in 0..spec.regimes.len() {
        let mut sq = 0.0;
        let mut count = 0usize;
        for t in 2..series.len() {
            if spec.regime_at(t) == id {
                let r = &spec.regimes[id];
                let pred =
                    oracle_one_step(r, series.value_at(0, t - 1), series.value_at(0, t - 2));
                let e = series.value_at(0, t) - pred;
                sq += e * e;
                count += 1;
            }
        }
        if count > 0 {
            let _ = writeln!(text, "regime_{},{}", id, (sq / count as f64).sqrt());
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse a regime spec from key=value text:
///   length=6000
///   regimes=phi1,phi2,sigma,mu;phi1,phi2,sigma,mu;...
///   schedule=0:0;500:1;...        (or)   switch_every=500
pub fn parse_spec_text(text: &str, origin: &Path) -> Result<RegimeSpec> {
    let mut kv: HashMap<String, (String, usize)> = HashMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.display().to_string(),
            line: i + 1,
            message: format!("expected key=value, got '{}'", line),
        })?;
        kv.insert(key.trim().to_string(), (value.trim().to_string(), i + 1));
    }
    let err_at = |line: usize, message: String| Error::Parse {
        path: origin.display().to_string(),
        line,
        message,
    };
    let (length_str, length_line) = kv
        .get("length")
        .cloned()
        .ok_or_else(|| Error::data(format!("{}: missing key 'length'", origin.display())))?;
    let length: usize = length_str
        .parse()
        .map_err(|_| err_at(length_line, format!("length: invalid integer '{}'", length_str)))?;

    let (regimes_str, regimes_line) = kv
        .get("regimes")
        .cloned()
        .ok_or_else(|| Error::data(format!("{}: missing key 'regimes'", origin.display())))?;
    let mut regimes = Vec::new();
    for part in regimes_str.split(';') {
        let nums: Vec<&str> = part.split(',').map(|s| s.trim()).collect();
        if nums.len() != 4 {
            return Err(err_at(
                regimes_line,
                format!("regime '{}': expected phi1,phi2,sigma,mu", part),
            ));
        }
        let vals: Vec<f64> = nums
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| err_at(regimes_line, format!("regime value '{}' is not a number", s)))
            })
            .collect::<Result<_>>()?;
        regimes.push(Regime {
            phi1: vals[0],
            phi2: vals[1],
            sigma: vals[2],
            mu: vals[3],
        });
    }

    let spec = if let Some((sched_str, sched_line)) = kv.get("schedule") {
        let mut schedule = Vec::new();
        for part in sched_str.split(';') {
            let (s, r) = part.split_once(':').ok_or_else(|| {
                err_at(*sched_line, format!("schedule entry '{}': expected start:regime", part))
            })?;
            let start: usize = s.trim().parse().map_err(|_| {
                err_at(*sched_line, format!("schedule start '{}' is not an integer", s))
            })?;
            let id: usize = r.trim().parse().map_err(|_| {
                err_at(*sched_line, format!("schedule regime '{}' is not an integer", r))
            })?;
            schedule.push((start, id));
        }
        RegimeSpec {
            regimes,
            schedule,
            length,
        }
    } else if let Some((block_str, block_line)) = kv.get("switch_every") {
        let block: usize = block_str.parse().map_err(|_| {
            err_at(*block_line, format!("switch_every: invalid integer '{}'", block_str))
        })?;
        return RegimeSpec::alternating(regimes, block, length);
    } else {
        return Err(Error::data(format!(
            "{}: need either 'schedule' or 'switch_every'",
            origin.display()
        )));
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<RegimeSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
    parse_spec_text(&text, path)
}
