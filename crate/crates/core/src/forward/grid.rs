use super::ForwardError;

/// Radians per micro-arcsecond.
pub const RAD_PER_UAS: f64 = std::f64::consts::PI / (180.0 * 3600.0 * 1e6);

/// Square `M × M` pixel grid. Images are stored row-major; columns run
/// along `l` and rows along `m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageGrid {
    pub m: usize,
    /// Field of view: radians for interferometry, 1.0 for MRI.
    pub fov: f64,
}

impl ImageGrid {
    pub fn new(m: usize, fov: f64) -> Result<Self, ForwardError> {
        if m < 2 {
            return Err(ForwardError::InvalidGrid(format!("M = {m}, need at least 2")));
        }
        if !(fov > 0.0 && fov.is_finite()) {
            return Err(ForwardError::InvalidGrid(format!("field of view {fov} must be positive")));
        }
        Ok(Self { m, fov })
    }

    /// Grid with the field of view given in micro-arcseconds.
    pub fn from_uas(m: usize, fov_uas: f64) -> Result<Self, ForwardError> {
        Self::new(m, fov_uas * RAD_PER_UAS)
    }

    pub fn dim(&self) -> usize {
        self.m * self.m
    }

    pub fn spacing(&self) -> f64 {
        self.fov / self.m as f64
    }

    /// Coordinate of pixel index `i`; index `M/2` sits at the origin.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.m / 2) as f64) * self.spacing()
    }

    /// `(l, m)` of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> (f64, f64) {
        (self.coord(col), self.coord(row))
    }

    pub fn check_image(&self, x: &[f64]) -> Result<(), ForwardError> {
        if x.len() != self.dim() {
            return Err(ForwardError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}
