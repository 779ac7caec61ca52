//! Synthetic VLBI array: stations on a spherical Earth tracking a source
//! through Earth rotation, with an elevation cut and SEFD-based noise.

use std::f64::consts::PI;

use super::ForwardError;

const EARTH_RADIUS_M: f64 = 6.371e6;

#[derive(Clone, Debug, PartialEq)]
pub struct Station {
    pub name: String,
    pub lat_deg: f64,
    /// East-positive longitude.
    pub lon_deg: f64,
    /// System equivalent flux density, Jy.
    pub sefd: f64,
}

impl Station {
    pub fn new(name: &str, lat_deg: f64, lon_deg: f64, sefd: f64) -> Self {
        Self {
            name: name.to_string(),
            lat_deg,
            lon_deg,
            sefd,
        }
    }

    fn position(&self) -> [f64; 3] {
        let (lat, lon) = (self.lat_deg.to_radians(), self.lon_deg.to_radians());
        [
            EARTH_RADIUS_M * lat.cos() * lon.cos(),
            EARTH_RADIUS_M * lat.cos() * lon.sin(),
            EARTH_RADIUS_M * lat.sin(),
        ]
    }

    /// Elevation (radians) of a source at declination `dec` when the
    /// Greenwich hour angle is `gha`.
    fn elevation(&self, gha: f64, dec: f64) -> f64 {
        let lat = self.lat_deg.to_radians();
        let h = gha + self.lon_deg.to_radians();
        (lat.sin() * dec.sin() + lat.cos() * dec.cos() * h.cos()).asin()
    }
}

/// Nine sites at roughly the locations of the current mm-VLBI telescopes,
/// with rounded sensitivities.
pub fn default_stations() -> Vec<Station> {
    vec![
        Station::new("ALMA", -23.03, -67.75, 90.0),
        Station::new("APEX", -23.01, -67.76, 3500.0),
        Station::new("LMT", 18.99, -97.31, 600.0),
        Station::new("SMA", 19.82, -155.48, 4900.0),
        Station::new("JCMT", 19.82, -155.48, 6000.0),
        Station::new("SMT", 32.70, -109.89, 5000.0),
        Station::new("PV", 37.07, -3.39, 1400.0),
        Station::new("SPT", -89.99, -45.0, 5000.0),
        Station::new("GLT", 76.53, -68.69, 5000.0),
    ]
}

/// `σ = c √(SEFD_a SEFD_b)`.
pub fn thermal_sigma(sefd_a: f64, sefd_b: f64, c: f64) -> f64 {
    c * (sefd_a * sefd_b).sqrt()
}

/// One baseline measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverageRow {
    /// Hours.
    pub t: f64,
    pub a: usize,
    pub b: usize,
    /// Spatial frequency, wavelengths.
    pub u: f64,
    pub v: f64,
    /// Thermal noise std per real component, Jy.
    pub sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UVCoverage {
    pub rows: Vec<CoverageRow>,
}

impl UVCoverage {
    pub fn new(rows: Vec<CoverageRow>) -> Result<Self, ForwardError> {
        for (i, r) in rows.iter().enumerate() {
            if r.a == r.b {
                return Err(ForwardError::InvalidCoverage(format!(
                    "row {i}: baseline joins station {} to itself",
                    r.a
                )));
            }
            if !(r.sigma > 0.0) || !r.u.is_finite() || !r.v.is_finite() || !r.t.is_finite() {
                return Err(ForwardError::InvalidCoverage(format!(
                    "row {i}: sigma must be positive and coordinates finite"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn uv(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.u, r.v)).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigma).collect()
    }

    /// Number of distinct stations referenced (largest index + 1).
    pub fn n_stations(&self) -> usize {
        self.rows.iter().map(|r| r.a.max(r.b) + 1).max().unwrap_or(0)
    }
}

/// Observation settings for [`synthesize_coverage`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArraySpec {
    pub stations: Vec<Station>,
    pub declination_deg: f64,
    pub wavelength_m: f64,
    /// Greenwich hour angle at the first scan, hours.
    pub start_hour: f64,
    pub duration_hours: f64,
    pub n_scans: usize,
    pub elevation_cut_deg: f64,
    /// Proportionality constant `c` of [`thermal_sigma`].
    pub sigma_scale: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            stations: default_stations(),
            declination_deg: 12.39,
            wavelength_m: 1.3e-3,
            start_hour: 0.0,
            duration_hours: 24.0,
            n_scans: 96,
            elevation_cut_deg: 15.0,
            sigma_scale: 2e-6,
        }
    }
}

/// Baselines between every pair of stations above the elevation cut at
/// each scan, stations ordered `a < b`.
pub fn synthesize_coverage(spec: &ArraySpec) -> Result<UVCoverage, ForwardError> {
    if spec.stations.len() < 2 || spec.n_scans == 0 || !(spec.wavelength_m > 0.0) {
        return Err(ForwardError::InvalidCoverage(
            "array needs two stations, one scan and a positive wavelength".into(),
        ));
    }
    if spec.stations.iter().any(|s| !(s.sefd >= 0.0)) || !(spec.sigma_scale > 0.0) {
        return Err(ForwardError::InvalidCoverage(
            "SEFDs must be non-negative and the noise scale positive".into(),
        ));
    }
    let dec = spec.declination_deg.to_radians();
    let cut = spec.elevation_cut_deg.to_radians();
    let pos: Vec<[f64; 3]> = spec.stations.iter().map(Station::position).collect();
    let step = if spec.n_scans > 1 {
        spec.duration_hours / spec.n_scans as f64
    } else {
        0.0
    };
    let mut rows = Vec::new();
    for k in 0..spec.n_scans {
        let t = spec.start_hour + k as f64 * step;
        let gha = t * 2.0 * PI / 24.0;
        let up: Vec<bool> = spec
            .stations
            .iter()
            .map(|s| s.elevation(gha, dec) >= cut)
            .collect();
        for a in 0..pos.len() {
            for b in a + 1..pos.len() {
                if !(up[a] && up[b]) {
                    continue;
                }
                let bl: Vec<f64> = (0..3).map(|i| (pos[b][i] - pos[a][i]) / spec.wavelength_m).collect();
                let (sh, ch) = gha.sin_cos();
                let u = sh * bl[0] + ch * bl[1];
                let v = -dec.sin() * ch * bl[0] + dec.sin() * sh * bl[1] + dec.cos() * bl[2];
                let sigma = thermal_sigma(spec.stations[a].sefd, spec.stations[b].sefd, spec.sigma_scale);
                if sigma > 0.0 {
                    rows.push(CoverageRow { t, a, b, u, v, sigma });
                }
            }
        }
    }
    UVCoverage::new(rows)
}
