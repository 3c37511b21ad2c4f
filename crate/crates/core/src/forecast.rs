//! Persistence forecasts and a simple PV maximum-power-potential model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("latest sample is {age_s} s old, limit is {limit_s} s")]
    StaleData { age_s: u64, limit_s: u64 },
    #[error("no sample available")]
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample<T> {
    /// Global horizontal irradiance, W/m².
    pub ghi: T,
    /// Air temperature, °C.
    pub air_temp: T,
    /// Seconds since midnight.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvModel {
    pub panel_area_m2: f64,
    /// Module efficiency at 25 °C.
    pub efficiency: f64,
    /// Relative power change per °C of cell temperature (negative).
    pub temp_coeff: f64,
    pub dc_ac_derate: f64,
    /// Cell temperature rise per W/m² of irradiance.
    #[serde(default = "default_cell_rise")]
    pub cell_rise: f64,
    pub s_max_va: f64,
}

fn default_cell_rise() -> f64 {
    0.03
}

impl PvModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.efficiency > 0.0 && self.efficiency < 1.0) {
            return Err(format!("efficiency {} outside (0, 1)", self.efficiency));
        }
        if !(self.dc_ac_derate > 0.0 && self.dc_ac_derate <= 1.0) {
            return Err(format!("derate {} outside (0, 1]", self.dc_ac_derate));
        }
        if !(self.panel_area_m2 >= 0.0 && self.s_max_va > 0.0) {
            return Err("panel area and rating must be positive".into());
        }
        Ok(())
    }
}

/// Persistence: the forecast for the next interval is the latest value,
/// provided it is at most two sample periods old.
pub fn persistence_forecast<T: Copy>(latest: Option<(u64, T)>, now: u64, period_s: u64) -> Result<T, ForecastError> {
    let (ts, value) = latest.ok_or(ForecastError::Missing)?;
    let age_s = now.saturating_sub(ts);
    let limit_s = 2 * period_s;
    if age_s > limit_s {
        return Err(ForecastError::StaleData { age_s, limit_s });
    }
    Ok(value)
}

/// MPP in W: `ghi · area · eff · (1 + coeff·(t_cell − 25)) · derate`,
/// clamped to `[0, s_max]`.
pub fn mpp_from_weather<T: Scalar>(model: &PvModel, w: &WeatherSample<T>) -> T {
    let ghi = w.ghi.max(T::zero());
    let cell = w.air_temp + ghi * T::lit(model.cell_rise);
    let temp_factor = T::one() + T::lit(model.temp_coeff) * (cell - T::lit(25.0));
    let p = ghi * T::lit(model.panel_area_m2 * model.efficiency * model.dc_ac_derate) * temp_factor;
    p.max(T::zero()).min(T::lit(model.s_max_va))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PvModel {
        PvModel {
            panel_area_m2: 100.0,
            efficiency: 0.2,
            temp_coeff: -0.004,
            dc_ac_derate: 0.65,
            cell_rise: 0.03,
            s_max_va: 20_000.0,
        }
    }

    #[test]
    fn persistence_returns_latest() {
        assert_eq!(persistence_forecast(Some((10, 800.0)), 11, 1), Ok(800.0));
        assert_eq!(persistence_forecast(Some((10, -3.2e3)), 12, 1), Ok(-3.2e3));
        assert_eq!(persistence_forecast(Some((10, 1.0)), 13, 1), Err(ForecastError::StaleData { age_s: 3, limit_s: 2 }));
        assert_eq!(persistence_forecast::<f64>(None, 13, 1), Err(ForecastError::Missing));
    }

    #[test]
    fn night_gives_zero() {
        let w = WeatherSample { ghi: 0.0, air_temp: 15.0, timestamp: 0 };
        assert_eq!(mpp_from_weather(&model(), &w), 0.0);
    }

    #[test]
    fn reference_conditions() {
        // area·eff·derate = 13 W per W/m²; cell at 25 °C
        let mut m = model();
        m.cell_rise = 0.0;
        let w = WeatherSample { ghi: 1000.0, air_temp: 25.0, timestamp: 0 };
        assert!((mpp_from_weather::<f64>(&m, &w) - 13_000.0).abs() < 1e-9);
    }

    #[test]
    fn clamped_to_rating() {
        let mut m = model();
        m.s_max_va = 5_000.0;
        let w = WeatherSample { ghi: 1200.0, air_temp: -20.0, timestamp: 0 };
        assert_eq!(mpp_from_weather(&m, &w), 5_000.0);
    }
}
