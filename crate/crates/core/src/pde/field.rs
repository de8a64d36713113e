use crate::error::{Error, Result};

/// Temperature samples `u[i, j]` on a uniform `Nx x Ny` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    values: Vec<f64>,
}

impl TemperatureField {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, values: Vec<f64>) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Config(format!("grid must be at least 3x3, got {nx}x{ny}")));
        }
        if values.len() != nx * ny {
            return Err(Error::shape(
                "temperature_field",
                format!("{nx}x{ny} grid with {} values", values.len()),
            ));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be positive, got dx={dx} dy={dy}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite temperature at ({}, {})",
                pos / ny,
                pos % ny
            )));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            values,
        })
    }

    pub fn from_fn(nx: usize, ny: usize, dx: f64, dy: f64, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..nx * ny).map(|k| f(k / ny, k % ny)).collect();
        Self::new(nx, ny, dx, dy, values)
    }

    /// Interior nodes of a Dirichlet square of side `length`: node `(i, j)`
    /// sits at `((i+1) dx, (j+1) dy)` with `dx = length / (nx+1)`.
    pub fn dirichlet_from_fn(
        nx: usize,
        ny: usize,
        length: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let dx = length / (nx + 1) as f64;
        let dy = length / (ny + 1) as f64;
        Self::from_fn(nx, ny, dx, dy, |i, j| f((i + 1) as f64 * dx, (j + 1) as f64 * dy))
    }

    /// `amplitude * sin(m pi x / L) sin(n pi y / L)` on Dirichlet interior
    /// nodes.
    pub fn sine_mode(nx: usize, ny: usize, length: f64, m: usize, n: usize, amplitude: f64) -> Result<Self> {
        let pi = std::f64::consts::PI;
        Self::dirichlet_from_fn(nx, ny, length, |x, y| {
            amplitude * (m as f64 * pi * x / length).sin() * (n as f64 * pi * y / length).sin()
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ny + j]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.dx == other.dx && self.dy == other.dy
    }

    /// `a * self + b * other` on matching grids.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::shape(
                "combine",
                format!(
                    "grid {}x{} (dx={}, dy={}) vs {}x{} (dx={}, dy={})",
                    self.nx, self.ny, self.dx, self.dy, other.nx, other.ny, other.dx, other.dy
                ),
            ));
        }
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(u, v)| a * u + b * v)
                .collect(),
        ))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        let d = self.combine(1.0, other, -1.0)?;
        Ok(d.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    /// `||self - other||_2 / ||other||_2`.
    pub fn relative_l2(&self, reference: &Self) -> Result<f64> {
        let d = self.combine(1.0, reference, -1.0)?;
        let num: f64 = d.values.iter().map(|v| v * v).sum();
        let den: f64 = reference.values.iter().map(|v| v * v).sum();
        Ok((num / den).sqrt())
    }
}
