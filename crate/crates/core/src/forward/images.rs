//! Synthetic test images. Sizes are fractions of the field of view, so the
//! same call works at any resolution.

use std::f64::consts::PI;

use super::grid::ImageGrid;

/// Smooth step: 1 inside radius `r`, 0 outside, edge width `soft`.
fn soft_disk(dist: f64, r: f64, soft: f64) -> f64 {
    1.0 / (1.0 + ((dist - r) / soft).exp())
}

fn normalize(mut img: Vec<f64>, total: f64) -> Vec<f64> {
    let sum: f64 = img.iter().sum();
    if sum > 0.0 {
        img.iter_mut().for_each(|v| *v *= total / sum);
    }
    img
}

/// Pixel centres in fov units, `(x, y)` with `x` along columns.
fn unit_coords(grid: &ImageGrid) -> impl Iterator<Item = (f64, f64)> + '_ {
    (0..grid.m).flat_map(move |row| {
        (0..grid.m).map(move |col| {
            let (l, m) = grid.pixel(row, col);
            (l / grid.fov, m / grid.fov)
        })
    })
}

/// Bright crescent: a disk with an off-centre disk removed.
pub fn crescent(grid: &ImageGrid, total_flux: f64) -> Vec<f64> {
    let (outer, inner, shift, soft) = (0.17, 0.12, 0.04, 0.02);
    let img = unit_coords(grid)
        .map(|(x, y)| {
            let d_out = (x * x + y * y).sqrt();
            let d_in = ((x - shift).powi(2) + y * y).sqrt();
            (soft_disk(d_out, outer, soft) - soft_disk(d_in, inner, soft)).max(0.0)
        })
        .collect();
    normalize(img, total_flux)
}

/// Gaussian ring with brightness `1 + a cos(φ − φ₀)`.
pub fn asymmetric_ring(
    grid: &ImageGrid,
    total_flux: f64,
    radius: f64,
    width: f64,
    asymmetry: f64,
    angle: f64,
) -> Vec<f64> {
    let img = unit_coords(grid)
        .map(|(x, y)| {
            let r = (x * x + y * y).sqrt();
            let phi = y.atan2(x);
            (-(r - radius).powi(2) / (2.0 * width * width)).exp() * (1.0 + asymmetry * (phi - angle).cos())
        })
        .collect();
    normalize(img, total_flux)
}

/// Circular Gaussian centred at `(cx, cy)`.
pub fn gaussian_blob(grid: &ImageGrid, total_flux: f64, sigma: f64, center: (f64, f64)) -> Vec<f64> {
    let img = unit_coords(grid)
        .map(|(x, y)| (-((x - center.0).powi(2) + (y - center.1).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    normalize(img, total_flux)
}

/// Ellipse `(value, cx, cy, a, b, rotation)` in `[-1, 1]²` coordinates.
type Ellipse = (f64, f64, f64, f64, f64, f64);

/// Knee-like phantom on `[-1, 1]²`: soft tissue, femur and tibia with
/// marrow, cartilage bands and a patella; values in `[0, 1]`.
pub fn knee_phantom(m: usize) -> Vec<f64> {
    let parts: [Ellipse; 9] = [
        (0.25, 0.0, 0.0, 0.62, 0.9, 0.0),    // soft tissue
        (0.45, 0.0, -0.42, 0.4, 0.38, 0.0),  // femur
        (-0.2, 0.0, -0.45, 0.28, 0.28, 0.0), // femoral marrow
        (0.45, 0.0, 0.45, 0.36, 0.36, 0.0),  // tibia
        (-0.2, 0.0, 0.48, 0.24, 0.26, 0.0),  // tibial marrow
        (0.3, -0.2, -0.02, 0.18, 0.05, 0.15), // medial cartilage
        (0.3, 0.2, 0.02, 0.18, 0.05, -0.15), // lateral cartilage
        (0.35, 0.5, -0.3, 0.08, 0.16, 0.3),  // patella
        (0.15, -0.35, 0.2, 0.08, 0.2, -0.2), // vessel
    ];
    let soft = 1.5 / m as f64;
    let mut img = vec![0.0; m * m];
    for row in 0..m {
        for col in 0..m {
            let x = (2.0 * col as f64 + 1.0) / m as f64 - 1.0;
            let y = (2.0 * row as f64 + 1.0) / m as f64 - 1.0;
            let mut v = 0.0;
            for &(val, cx, cy, a, b, rot) in &parts {
                let (s, c) = (rot * PI).sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = (c * dx + s * dy) / a;
                let w = (-s * dx + c * dy) / b;
                let rho = (u * u + w * w).sqrt();
                v += val * soft_disk(rho, 1.0, soft / a.min(b));
            }
            img[row * m + col] = v.clamp(0.0, 1.0);
        }
    }
    img
}
