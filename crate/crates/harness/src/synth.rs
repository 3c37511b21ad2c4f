//! Deterministic generator of the bundled clear-sky scenario: a 14-bus LV
//! feeder, two PV plants, three uncontrollable buses and a day of 1 s
//! weather, load and slack-voltage profiles.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use voltguard_core::grid::{BranchSpec, BusKind, BusSpec, NetworkModel};

use crate::profiles::{DayProfiles, Profile};
use crate::HarnessError;

pub const DAY_S: u64 = 86_400;
pub const PROFILE_SEED: u64 = 20_220_718;
const HOUR: f64 = 3600.0;

/// Radial 400 V feeder: an eight-segment trunk B01..B09 and two laterals,
/// B03-B10-B11 and B04-B12-B13-B14.
pub fn feeder() -> NetworkModel {
    let s_base_va = 1.0e5;
    let v_base_v = 400.0;
    let buses = (0..14)
        .map(|i| BusSpec {
            index: i,
            name: format!("B{:02}", i + 1),
            kind: if i == 0 { BusKind::Slack } else { BusKind::Pq },
            base_kv: 0.4,
        })
        .collect();
    let cable = |from: usize, to: usize, r_km: f64, x_km: f64, len_m: f64, amp: f64| BranchSpec {
        from,
        to,
        r_ohm: r_km * len_m / 1000.0,
        x_ohm: x_km * len_m / 1000.0,
        ampacity_a: amp,
    };
    let mut branches: Vec<BranchSpec> = (0..8).map(|i| cable(i, i + 1, 0.206, 0.080, 40.0, 270.0)).collect();
    for (f, t) in [(2, 9), (9, 10), (3, 11), (11, 12), (12, 13)] {
        branches.push(cable(f, t, 0.284, 0.083, 35.0, 215.0));
    }
    NetworkModel { schema_version: 1, name: "lv-feeder-14".into(), s_base_va, v_base_v, buses, branches }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Clear-sky irradiance with small per-second fluctuation, W/m².
fn weather(rng: &mut ChaCha8Rng) -> Profile {
    let mut ghi = Vec::with_capacity(DAY_S as usize);
    let mut temp = Vec::with_capacity(DAY_S as usize);
    let mut haze = 0.0f64;
    for t in 0..DAY_S {
        let h = t as f64 / HOUR;
        let s = (PI * (h - 5.5) / 15.0).sin();
        let clear = if s > 0.0 { 900.0 * s.powf(1.3) } else { 0.0 };
        haze = 0.995 * haze + 0.0007 * normal(rng);
        let flicker = 0.004 * normal(rng);
        ghi.push((clear * (1.0 + haze + flicker)).max(0.0));
        let warm = (PI * (h - 8.0) / 14.0).sin().max(0.0);
        temp.push(16.0 + 12.0 * warm + 0.05 * normal(rng));
    }
    Profile { kind: "weather".into(), start_s: 0, columns: vec!["ghi".into(), "temp".into()], data: vec![ghi, temp] }
}

/// Residential demand in W (positive): base, morning and evening peaks, a
/// random walk and appliance switching.
fn residential(rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(DAY_S as usize);
    let mut walk = 0.0f64;
    let mut appliance = 0.0f64;
    let mut hold = 0u64;
    for t in 0..DAY_S {
        let h = t as f64 / HOUR;
        let shape = 0.6
            + 0.5 * (-((h - 7.5) / 1.2).powi(2)).exp()
            + 0.3 * (-((h - 12.5) / 1.5).powi(2)).exp()
            + 1.0 * (-((h - 19.5) / 2.0).powi(2)).exp();
        walk = (0.999 * walk + 0.01 * normal(rng)).clamp(-0.3, 0.3);
        if hold == 0 {
            appliance = if rng.random::<f64>() < 0.3 { 0.4 + 0.8 * rng.random::<f64>() } else { 0.0 };
            hold = rng.random_range(60..900);
        }
        hold -= 1;
        out.push(scale * (shape + walk + appliance).max(0.1));
    }
    out
}

/// Small commercial site with a battery that toggles between charging and
/// discharging every 10 to 60 s.
fn battery_site(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(DAY_S as usize);
    let mut sign = 1.0;
    let mut hold = 0u64;
    for t in 0..DAY_S {
        let h = t as f64 / HOUR;
        if hold == 0 {
            sign = -sign;
            hold = rng.random_range(10..=60);
        }
        hold -= 1;
        let base = 3000.0 + 2000.0 * (-((h - 13.0) / 4.0).powi(2)).exp();
        out.push(base + 5000.0 * sign);
    }
    out
}

/// Reactive demand in var: a drifting power factor around 0.95 plus motor
/// loads switching independently of the active demand.
fn reactive(rng: &mut ChaCha8Rng, p: &[f64], motor_var: f64) -> Vec<f64> {
    let mut pf_drift = 0.0f64;
    let mut motor = 0.0;
    let mut hold = 0u64;
    p.iter()
        .map(|&p| {
            pf_drift = (0.999 * pf_drift + 0.0005 * normal(rng)).clamp(-0.04, 0.03);
            let pf: f64 = 0.95 + pf_drift;
            if hold == 0 {
                motor = if rng.random::<f64>() < 0.5 { motor_var * rng.random::<f64>() } else { 0.0 };
                hold = rng.random_range(20..300);
            }
            hold -= 1;
            p * (1.0 - pf * pf).sqrt() / pf + motor
        })
        .collect()
}

fn loads(rng: &mut ChaCha8Rng) -> Profile {
    let demand = [("B03", residential(rng, 2500.0), 1500.0), ("B05", battery_site(rng), 3000.0), ("B14", residential(rng, 2000.0), 1500.0)];
    let mut columns = Vec::new();
    let mut data = Vec::new();
    for (bus, d, motor) in demand {
        let q = reactive(rng, &d, motor);
        columns.push(format!("{bus}_p"));
        columns.push(format!("{bus}_q"));
        data.push(d.iter().map(|&p| -p).collect());
        data.push(q.iter().map(|&q| -q).collect());
    }
    Profile { kind: "loads".into(), start_s: 0, columns, data }
}

/// Upstream voltage: low overnight, rising between 09:00 and 11:00, tap
/// changes at 12:00 and 15:00, declining in the evening.
fn slack(rng: &mut ChaCha8Rng) -> Profile {
    let ramp = |h: f64, a: f64, b: f64| ((h - a) / (b - a)).clamp(0.0, 1.0);
    let mut v = Vec::with_capacity(DAY_S as usize);
    let mut wander = 0.0f64;
    for t in 0..DAY_S {
        let h = t as f64 / HOUR;
        let shape = 1.015 + 0.017 * ramp(h, 9.0, 11.0) - 0.008 * ramp(h, 12.0, 12.02) + 0.006 * ramp(h, 12.02, 15.0)
            - 0.006 * ramp(h, 15.0, 15.02)
            - 0.008 * ramp(h, 17.0, 21.0);
        wander = 0.998 * wander + 0.00004 * normal(rng);
        v.push(shape + wander);
    }
    Profile { kind: "slack".into(), start_s: 0, columns: vec!["v".into()], data: vec![v] }
}

/// The bundled day profiles for the load buses B03, B05 and B14.
pub fn clear_sky_profiles() -> DayProfiles {
    let mut rng = ChaCha8Rng::seed_from_u64(PROFILE_SEED);
    let w = weather(&mut rng);
    let l = loads(&mut rng);
    let s = slack(&mut rng);
    let buses: Vec<String> = ["B03", "B05", "B14"].iter().map(|b| b.to_string()).collect();
    DayProfiles::new(w, l, s, &buses, Path::new("loads.csv")).expect("generated profiles are consistent")
}

pub const CLEAR_SKY_TOML: &str = r#"schema_version = 1
name = "clear-sky"
seed = 18072022
network = "network.json"

[profiles]
weather = "weather.csv"
loads = "loads.csv"
slack = "slack.csv"

[[plants]]
name = "PV2"
bus = "B09"
s_max_va = 40000.0
pf_min = 0.9
reactive_capable = true
pv = { panel_area_m2 = 250.0, efficiency = 0.2, temp_coeff = -0.004, dc_ac_derate = 0.9 }

[[plants]]
name = "PV1"
bus = "B11"
s_max_va = 30000.0
pf_min = 0.9
reactive_capable = false
pv = { panel_area_m2 = 190.0, efficiency = 0.2, temp_coeff = -0.004, dc_ac_derate = 0.9 }

[[uncontrollable]]
bus = "B03"

[[uncontrollable]]
bus = "B05"

[[uncontrollable]]
bus = "B14"

[timing]
sample_period_s = 1
window_samples = 300
control_period_s = 30

[noise]
voltage_class = 0.2
power_class = 0.5

[estimation]
alpha = 0.99
forgetting = "selective"
tau_min = 0.0001

[control]
v_min = 0.96
v_max = 1.04
v_margin = 0.005
"#;

/// Writes the bundled scenario (config, network and profiles) into `dir`.
pub fn write_clear_sky(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))
    };
    write("scenario.toml", CLEAR_SKY_TOML)?;
    write("network.json", &(feeder().to_json_string() + "\n"))?;
    let prof = clear_sky_profiles();
    for (p, name, decimals) in [
        (&prof.weather, "weather.csv", &[2usize, 2][..]),
        (&prof.loads, "loads.csv", &[1, 1, 1, 1, 1, 1][..]),
        (&prof.slack, "slack.csv", &[6][..]),
    ] {
        let path = dir.join(name);
        p.write(&path, decimals).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}
