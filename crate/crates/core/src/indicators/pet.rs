//! Daily reference evapotranspiration, FAO-56 Penman–Monteith form with soil
//! heat flux G = 0 and wind assumed measured at 2 m.

use std::f64::consts::PI;

use crate::ingest::DailyWeather;

const SOLAR_CONSTANT: f64 = 0.0820; // MJ m-2 min-1
const STEFAN_BOLTZMANN: f64 = 4.903e-9; // MJ K-4 m-2 day-1
const ALBEDO: f64 = 0.23;

/// Saturation vapour pressure (kPa) at `t` °C.
pub fn sat_vapour_pressure(t: f64) -> f64 {
    0.6108 * (17.27 * t / (t + 237.3)).exp()
}

/// Slope of the saturation vapour pressure curve (kPa/°C).
pub fn svp_slope(t: f64) -> f64 {
    4098.0 * sat_vapour_pressure(t) / (t + 237.3).powi(2)
}

/// Atmospheric pressure (kPa) at elevation `z` metres.
pub fn atmospheric_pressure(z: f64) -> f64 {
    101.3 * ((293.0 - 0.0065 * z) / 293.0).powf(5.26)
}

pub fn psychrometric_constant(pressure_kpa: f64) -> f64 {
    0.665e-3 * pressure_kpa
}

/// Extraterrestrial radiation (MJ m-2 day-1).
pub fn extraterrestrial_radiation(latitude_deg: f64, day_of_year: u32) -> f64 {
    let phi = latitude_deg.to_radians();
    let j = day_of_year as f64;
    let dr = 1.0 + 0.033 * (2.0 * PI * j / 365.0).cos();
    let decl = 0.409 * (2.0 * PI * j / 365.0 - 1.39).sin();
    let ws = (-phi.tan() * decl.tan()).clamp(-1.0, 1.0).acos();
    24.0 * 60.0 / PI
        * SOLAR_CONSTANT
        * dr
        * (ws * phi.sin() * decl.sin() + phi.cos() * decl.cos() * ws.sin())
}

/// Combination equation given its already computed terms.
#[allow(clippy::too_many_arguments)]
pub fn reference_et0(
    slope: f64,
    gamma: f64,
    net_radiation: f64,
    soil_heat: f64,
    tmean: f64,
    wind2: f64,
    es: f64,
    ea: f64,
) -> f64 {
    let radiative = 0.408 * slope * (net_radiation - soil_heat);
    let aerodynamic = gamma * 900.0 / (tmean + 273.0) * wind2 * (es - ea);
    (radiative + aerodynamic) / (slope + gamma * (1.0 + 0.34 * wind2))
}

/// PET in mm/day, clamped at zero.
pub fn pet_penman_monteith(
    day: &DailyWeather,
    latitude_deg: f64,
    day_of_year: u32,
    elevation: f64,
) -> f64 {
    let gamma = psychrometric_constant(atmospheric_pressure(elevation));
    let es = 0.5 * (sat_vapour_pressure(day.tmax) + sat_vapour_pressure(day.tmin));
    let ea = day.rhum / 100.0 * es;

    let ra = extraterrestrial_radiation(latitude_deg, day_of_year);
    let rso = (0.75 + 2e-5 * elevation) * ra;
    let rs = day.radiation;
    let rns = (1.0 - ALBEDO) * rs;
    let rel_shortwave = if rso > 0.0 { (rs / rso).min(1.0) } else { 0.0 };
    let tmax_k = day.tmax + 273.16;
    let tmin_k = day.tmin + 273.16;
    let rnl = STEFAN_BOLTZMANN
        * 0.5
        * (tmax_k.powi(4) + tmin_k.powi(4))
        * (0.34 - 0.14 * ea.max(0.0).sqrt())
        * (1.35 * rel_shortwave - 0.35);
    let rn = rns - rnl;

    reference_et0(svp_slope(day.tmean), gamma, rn, 0.0, day.tmean, day.wind, es, ea).max(0.0)
}
