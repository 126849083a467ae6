//! Standardized feature vectors built from data available strictly before
//! the trading cutoff (one hour ahead of delivery).
//!
//! The registry is fixed: 19 named features across five domains plus a
//! trailing intercept that is always exactly 1. All record-based features are
//! computed from windows ending at `t - 1`, so perturbing any data at hours
//! `>= t` can never change the vector.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::market_data::{MarketRecord, PvRecord};

/// Feature domain tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Temporal,
    Forecast,
    Market,
    Weather,
    Volatility,
    Intercept,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Temporal => "temporal",
            Domain::Forecast => "forecast",
            Domain::Market => "market",
            Domain::Weather => "weather",
            Domain::Volatility => "volatility",
            Domain::Intercept => "intercept",
        }
    }
}

/// Fixed feature registry: (name, domain), intercept last.
pub const REGISTRY: [(&str, Domain); 20] = [
    ("hour_sin", Domain::Temporal),
    ("hour_cos", Domain::Temporal),
    ("doy_sin", Domain::Temporal),
    ("doy_cos", Domain::Temporal),
    ("forecast", Domain::Forecast),
    ("forecast_delta", Domain::Forecast),
    ("forecast_sigma", Domain::Forecast),
    ("da_price", Domain::Market),
    ("id_bid", Domain::Market),
    ("id_ask", Domain::Market),
    ("spread", Domain::Market),
    ("imbalance_price", Domain::Market),
    ("ghi", Domain::Weather),
    ("cloud_cover", Domain::Weather),
    ("temp_2m", Domain::Weather),
    ("price_vol", Domain::Volatility),
    ("bid_depth", Domain::Volatility),
    ("ask_depth", Domain::Volatility),
    ("depth_total", Domain::Volatility),
    ("intercept", Domain::Intercept),
];

/// Dimension of the feature vector (intercept included).
pub const DIM: usize = REGISTRY.len();

/// Index of a registry feature by name; panics on unknown names (registry is
/// a compile-time constant, so callers pass literals).
pub fn index_of(name: &str) -> usize {
    REGISTRY
        .iter()
        .position(|(n, _)| *n == name)
        .unwrap_or_else(|| panic!("unknown feature '{name}'"))
}

/// Forecast column used as the policy's generation signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastHorizon {
    /// One-hour-ahead forecast (the last update before the cutoff).
    H1,
    /// Five-hour-ahead forecast.
    H5,
    /// Day-ahead (24 h) forecast.
    DayAhead,
}

impl ForecastHorizon {
    /// Horizon length in hours.
    pub fn hours(self) -> usize {
        match self {
            ForecastHorizon::H1 => 1,
            ForecastHorizon::H5 => 5,
            ForecastHorizon::DayAhead => 24,
        }
    }

    /// Read this horizon's forecast for delivery hour `t` from issue-indexed
    /// records: the value issued at `t - horizon`.
    ///
    /// `pv` must be indexable at `t - horizon` relative to `base` (the
    /// timestamp of `pv[0]`).
    pub fn forecast_for(self, pv: &[PvRecord], base: u64, t: u64) -> Option<f64> {
        let h = self.hours() as u64;
        if t < base + h {
            return None;
        }
        let idx = (t - h - base) as usize;
        let rec = pv.get(idx)?;
        Some(match self {
            ForecastHorizon::H1 => rec.forecast_1h,
            ForecastHorizon::H5 => rec.forecast_5h,
            ForecastHorizon::DayAhead => rec.forecast_da,
        })
    }
}

/// A single standardized (or raw) feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, name: &str) -> f64 {
        self.values[index_of(name)]
    }
}

/// Minimum window length (hours of history before the delivery hour).
pub const MIN_WINDOW: usize = 24;

fn population_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    var.max(0.0).sqrt()
}

/// Build the raw (un-normalized) feature vector for delivery hour `t`.
///
/// `market` and `pv` are aligned windows whose last record is hour `t - 1`;
/// at least [`MIN_WINDOW`] rows are required. Temporal encodings use the
/// delivery hour itself; everything else comes from the window.
pub fn build_features(
    market: &[MarketRecord],
    pv: &[PvRecord],
    t: u64,
    horizon: ForecastHorizon,
) -> Result<FeatureVector> {
    if market.len() < MIN_WINDOW || pv.len() < MIN_WINDOW {
        return Err(CoreError::Window(format!(
            "need >= {MIN_WINDOW} hours of history before hour {t}, got {}",
            market.len().min(pv.len())
        )));
    }
    if market.len() != pv.len() {
        return Err(CoreError::Input("market/pv window length mismatch".into()));
    }
    let last = market.len() - 1;
    if market[last].timestamp + 1 != t || pv[last].timestamp + 1 != t {
        return Err(CoreError::Input(format!(
            "window must end at t-1 = {}, got {}",
            t - 1,
            market[last].timestamp
        )));
    }
    let base = pv[0].timestamp;

    let tau = 2.0 * std::f64::consts::PI;
    let hour = (t % 24) as f64;
    let doy = ((t / 24) % 365) as f64;

    // Latest forecast of delivery t at the configured horizon. The issuing
    // row sits inside the window for every horizon >= 1 h.
    let forecast = horizon
        .forecast_for(pv, base, t)
        .ok_or_else(|| CoreError::Window(format!("no {horizon:?} forecast for hour {t}")))?;

    // Latest revision of the delivery-t forecast: 1 h view minus 5 h view.
    let f1 = ForecastHorizon::H1.forecast_for(pv, base, t);
    let f5 = ForecastHorizon::H5.forecast_for(pv, base, t);
    let forecast_delta = match (f1, f5) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    };

    // Rolling std of recent 1 h-ahead forecast errors, lagged one hour: an
    // error for delivery s needs g_act(s) plus the forecast issued at s-1,
    // and the most recent delivery (t-1) is excluded.
    let errs = (1..last).map(|i| pv[i - 1].forecast_1h - pv[i].g_act);
    let take = errs.clone().count().min(MIN_WINDOW);
    let skip = errs.clone().count() - take;
    let forecast_sigma = population_std(errs.skip(skip));

    let m_last = &market[last];
    let p_last = &pv[last];

    // Rolling 24 h std of the day-ahead price over the window tail.
    let pv_take = market.len().min(MIN_WINDOW);
    let price_vol = population_std(
        market[market.len() - pv_take..].iter().map(|r| r.p_da),
    );

    let mut values = vec![0.0; DIM];
    values[index_of("hour_sin")] = (tau * hour / 24.0).sin();
    values[index_of("hour_cos")] = (tau * hour / 24.0).cos();
    values[index_of("doy_sin")] = (tau * doy / 365.0).sin();
    values[index_of("doy_cos")] = (tau * doy / 365.0).cos();
    values[index_of("forecast")] = forecast;
    values[index_of("forecast_delta")] = forecast_delta;
    values[index_of("forecast_sigma")] = forecast_sigma;
    values[index_of("da_price")] = m_last.p_da;
    values[index_of("id_bid")] = m_last.p_id_bid;
    values[index_of("id_ask")] = m_last.p_id_ask;
    values[index_of("spread")] = m_last.p_id_ask - m_last.p_id_bid;
    values[index_of("imbalance_price")] = m_last.p_im;
    values[index_of("ghi")] = p_last.ghi;
    values[index_of("cloud_cover")] = p_last.cloud_cover;
    values[index_of("temp_2m")] = p_last.temp_2m;
    values[index_of("price_vol")] = price_vol;
    values[index_of("bid_depth")] = m_last.bid_depth;
    values[index_of("ask_depth")] = m_last.ask_depth;
    values[index_of("depth_total")] = m_last.bid_depth + m_last.ask_depth;
    values[index_of("intercept")] = 1.0;

    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(CoreError::Input(format!(
                "non-finite feature '{}' at hour {t}",
                REGISTRY[i].0
            )));
        }
    }
    Ok(FeatureVector { values })
}

/// Train-set standardization: per-feature mean and std, intercept excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns whose population std falls below this are treated as constant and
/// given unit std so they normalize to zero.
const STD_FLOOR: f64 = 1e-8;

/// Fit a normalizer on a training feature matrix (rows = hours).
pub fn fit_normalizer(rows: &[FeatureVector]) -> Result<Normalizer> {
    if rows.len() < 2 {
        return Err(CoreError::Input(format!(
            "need >= 2 training rows to fit a normalizer, got {}",
            rows.len()
        )));
    }
    let d = rows[0].dim();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d - 1];
    let mut std = vec![0.0; d - 1];
    for j in 0..d - 1 {
        let m = rows.iter().map(|r| r.values[j]).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|r| (r.values[j] - m) * (r.values[j] - m))
            .sum::<f64>()
            / n;
        mean[j] = m;
        let s = var.max(0.0).sqrt();
        std[j] = if s < STD_FLOOR { 1.0 } else { s };
    }
    Ok(Normalizer { mean, std })
}

/// Apply a fitted normalizer; the intercept is never altered.
pub fn apply_normalizer(norm: &Normalizer, x: &FeatureVector) -> FeatureVector {
    let d = x.dim();
    debug_assert_eq!(norm.mean.len(), d - 1);
    let mut values = Vec::with_capacity(d);
    for j in 0..d - 1 {
        values.push((x.values[j] - norm.mean[j]) / norm.std[j]);
    }
    values.push(x.values[d - 1]);
    FeatureVector { values }
}
