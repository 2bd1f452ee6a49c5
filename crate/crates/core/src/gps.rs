//! GPS kinematics: five readings to an 18-element motion feature vector.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{MinMaxScaler, WINDOW_LEN};
use crate::error::{Error, Result};

/// Mean Earth radius used by the local projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const FEATURE_LEN: usize = 18;
/// Path lengths and durations below this are treated as zero.
const TINY: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpsReading {
    pub lat: f64,
    pub lon: f64,
    pub timestamp_ms: i64,
}

impl GpsReading {
    pub fn validate(&self) -> Result<()> {
        if !(self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0) {
            return Err(Error::Range(format!("lat {} / lon {} outside valid degrees", self.lat, self.lon)));
        }
        Ok(())
    }
}

/// Position part of a per-frame GPS file: one `lat,lon` line.
pub fn write_fix<W: Write>(lat: f64, lon: f64, w: &mut W) -> Result<()> {
    writeln!(w, "{lat},{lon}")?;
    Ok(())
}

pub fn read_fix<R: Read>(r: &mut R) -> Result<(f64, f64)> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    let line = s.trim();
    let parse = |v: Option<&str>| {
        v.and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Data(format!("expected `lat,lon`, found `{line}`")))
    };
    let mut parts = line.split(',');
    let fix = (parse(parts.next())?, parse(parts.next())?);
    if parts.next().is_some() {
        return Err(Error::Data(format!("expected `lat,lon`, found `{line}`")));
    }
    Ok(fix)
}

pub fn load_reading(path: &Path, timestamp_ms: i64) -> Result<GpsReading> {
    let (lat, lon) = crate::binfmt::load(path, read_fix)?;
    let reading = GpsReading { lat, lon, timestamp_ms };
    reading.validate()?;
    Ok(reading)
}

/// Equirectangular projection about `origin`, meters east and north.
pub fn to_local_xy(readings: &[GpsReading], origin: &GpsReading) -> Result<Vec<[f64; 2]>> {
    origin.validate()?;
    let cos0 = origin.lat.to_radians().cos();
    readings
        .iter()
        .map(|r| {
            r.validate()?;
            Ok([
                EARTH_RADIUS_M * (r.lon - origin.lon).to_radians() * cos0,
                EARTH_RADIUS_M * (r.lat - origin.lat).to_radians(),
            ])
        })
        .collect()
}

/// Inverse of [`to_local_xy`]: `(lat, lon)` degrees of a local point.
pub fn from_local_xy(xy: [f64; 2], origin_lat: f64, origin_lon: f64) -> (f64, f64) {
    let lat = origin_lat + (xy[1] / EARTH_RADIUS_M).to_degrees();
    let lon = origin_lon + (xy[0] / (EARTH_RADIUS_M * origin_lat.to_radians().cos())).to_degrees();
    (lat, lon)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Feature layout: `d1..d4`, net displacement, path length, `s1..s4`, heading changes
/// `a1..a3`, accelerations `acc1..acc3`, mean angular velocity, curvature.
pub fn extract_gps_features(readings: &[GpsReading]) -> Result<[f64; FEATURE_LEN]> {
    if readings.len() != WINDOW_LEN {
        return Err(Error::Arity(format!("need {WINDOW_LEN} GPS readings, got {}", readings.len())));
    }
    let xy = to_local_xy(readings, &readings[0])?;
    let times: Vec<i64> = readings.iter().map(|r| r.timestamp_ms).collect();
    features_from_xy(&xy, &times)
}

/// [`extract_gps_features`] on already-projected planar positions.
pub fn features_from_xy(xy: &[[f64; 2]], timestamps_ms: &[i64]) -> Result<[f64; FEATURE_LEN]> {
    if xy.len() != WINDOW_LEN || timestamps_ms.len() != WINDOW_LEN {
        return Err(Error::Arity(format!(
            "need {WINDOW_LEN} positions and timestamps, got {} and {}",
            xy.len(),
            timestamps_ms.len()
        )));
    }
    if let Some(w) = timestamps_ms.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Timing(format!("timestamps must increase, got {} then {}", w[0], w[1])));
    }
    let n = WINDOW_LEN - 1;
    let dist = |a: &[f64; 2], b: &[f64; 2]| (b[0] - a[0]).hypot(b[1] - a[1]);
    let d: Vec<f64> = xy.windows(2).map(|w| dist(&w[0], &w[1])).collect();
    let dt: Vec<f64> = timestamps_ms.windows(2).map(|w| (w[1] - w[0]) as f64 / 1000.0).collect();
    let s: Vec<f64> = d.iter().zip(&dt).map(|(d, t)| d / t).collect();

    let mut headings = Vec::with_capacity(n);
    let mut last = 0.0;
    for (w, &len) in xy.windows(2).zip(&d) {
        if len > 0.0 {
            last = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
        }
        headings.push(last);
    }
    let turns: Vec<f64> = headings.windows(2).map(|h| wrap_angle(h[1] - h[0])).collect();
    let acc: Vec<f64> = (0..n - 1).map(|j| (s[j + 1] - s[j]) / ((dt[j] + dt[j + 1]) / 2.0)).collect();

    let net = dist(&xy[0], &xy[n]);
    let path: f64 = d.iter().sum();
    let total_turn: f64 = turns.iter().map(|a| a.abs()).sum();
    let mean_dt = dt.iter().sum::<f64>() / n as f64;
    let omega = total_turn / turns.len() as f64 / mean_dt;
    // Heading changes sit at interior vertices, so the turning is spread over the path
    // between the first and last interval midpoints.
    let arc = path - (d[0] + d[n - 1]) / 2.0;
    let kappa = if arc < TINY { 0.0 } else { total_turn / arc };

    let mut out = [0.0; FEATURE_LEN];
    out[..4].copy_from_slice(&d);
    out[4] = net;
    out[5] = path;
    out[6..10].copy_from_slice(&s);
    out[10..13].copy_from_slice(&turns);
    out[13..16].copy_from_slice(&acc);
    out[16] = omega;
    out[17] = kappa;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite GPS feature".into()));
    }
    Ok(out)
}

/// Min-max scales a feature vector with a scaler fitted on training vectors, clamping
/// to `[0, 1]`.
pub fn normalize_gps(features: &[f64], scaler: &MinMaxScaler) -> Result<Vec<f64>> {
    scaler.apply_clamped(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fit_scaler;

    const T: [i64; 5] = [0, 300, 600, 900, 1200];

    #[test]
    fn projection_examples() {
        let o = GpsReading {
            lat: 0.0,
            lon: 10.0,
            timestamp_ms: 0,
        };
        assert_eq!(to_local_xy(&[o], &o).unwrap(), [[0.0, 0.0]]);
        let north = GpsReading {
            lat: 1e-5f64.to_degrees(),
            ..o
        };
        assert!((to_local_xy(&[north], &o).unwrap()[0][1] - 63.71).abs() < 1e-9);
        let e = GpsReading { lon: 10.001, ..o };
        let w = GpsReading { lon: 9.999, ..o };
        let xy = to_local_xy(&[e, w], &o).unwrap();
        assert!((xy[0][0] + xy[1][0]).abs() < 1e-6);
        assert!(to_local_xy(&[GpsReading { lat: 91.0, ..o }], &o).is_err());
    }

    #[test]
    fn inverse_projection_round_trips() {
        let (lat, lon) = from_local_xy([12.5, -7.25], 42.0, -93.6);
        let o = GpsReading {
            lat: 42.0,
            lon: -93.6,
            timestamp_ms: 0,
        };
        let xy = to_local_xy(&[GpsReading { lat, lon, timestamp_ms: 0 }], &o).unwrap()[0];
        assert!((xy[0] - 12.5).abs() < 1e-6 && (xy[1] + 7.25).abs() < 1e-6);
    }

    #[test]
    fn stationary_is_all_zero() {
        assert_eq!(features_from_xy(&[[3.0, 4.0]; 5], &T).unwrap(), [0.0; 18]);
    }

    #[test]
    fn constant_velocity_east() {
        let xy: Vec<[f64; 2]> = (0..5).map(|i| [0.3 * i as f64, 0.0]).collect();
        let f = features_from_xy(&xy, &T).unwrap();
        let expect = [
            0.3, 0.3, 0.3, 0.3, 1.2, 1.2, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        for (a, b) in f.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn quarter_circle_curvature() {
        for radius in [5.0, 20.0, 100.0] {
            let xy: Vec<[f64; 2]> = (0..5)
                .map(|i| {
                    let a = PI / 2.0 * i as f64 / 4.0;
                    [radius * a.cos(), radius * a.sin()]
                })
                .collect();
            let f = features_from_xy(&xy, &T).unwrap();
            assert!((f[17] * radius - 1.0).abs() < 0.05, "kappa {} for R={radius}", f[17]);
        }
    }

    #[test]
    fn timing_and_arity_errors() {
        assert!(matches!(features_from_xy(&[[0.0; 2]; 5], &[0, 300, 300, 600, 900]), Err(Error::Timing(_))));
        assert!(matches!(features_from_xy(&[[0.0; 2]; 4], &T[..4]), Err(Error::Arity(_))));
        let r = GpsReading {
            lat: 1.0,
            lon: 1.0,
            timestamp_ms: 0,
        };
        assert!(matches!(extract_gps_features(&[r; 3]), Err(Error::Arity(_))));
    }

    #[test]
    fn zero_length_interval_reuses_heading() {
        let xy = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 2.0]];
        let f = features_from_xy(&xy, &T).unwrap();
        assert_eq!(f[10], 0.0);
        assert!((f[11] - PI / 2.0).abs() < 1e-12);
        assert_eq!(f[12], 0.0);
    }

    #[test]
    fn normalization_clamps() {
        let s = fit_scaler(&[vec![0.0; 18], vec![2.0; 18]]).unwrap();
        assert_eq!(normalize_gps(&[0.0; 18], &s).unwrap(), vec![0.0; 18]);
        assert_eq!(normalize_gps(&[2.0; 18], &s).unwrap(), vec![1.0; 18]);
        assert_eq!(normalize_gps(&[5.0; 18], &s).unwrap(), vec![1.0; 18]);
        assert!(normalize_gps(&[0.0; 18], &MinMaxScaler::unfitted()).is_err());
    }

    #[test]
    fn fix_file_round_trip() {
        let mut buf = Vec::new();
        write_fix(42.123456789012, -93.000000000001, &mut buf).unwrap();
        assert_eq!(read_fix(&mut buf.as_slice()).unwrap(), (42.123456789012, -93.000000000001));
        assert!(read_fix(&mut &b"1.0"[..]).is_err());
    }
}
