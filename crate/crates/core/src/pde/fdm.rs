use super::TemperatureField;
use crate::error::{Error, Result};
use crate::tensor::PaddingMode;

/// Explicit-scheme parameters with four one-sided diffusivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdmConfig {
    /// Weight of the `u[i+1, j] - u[i, j]` difference.
    pub alpha_x1: f64,
    /// Weight of the `u[i-1, j] - u[i, j]` difference.
    pub alpha_x2: f64,
    /// Weight of the `u[i, j+1] - u[i, j]` difference.
    pub alpha_y1: f64,
    /// Weight of the `u[i, j-1] - u[i, j]` difference.
    pub alpha_y2: f64,
    pub dt: f64,
    pub steps: usize,
    pub boundary: PaddingMode,
    /// Skip the stability check.
    pub allow_unstable: bool,
}

impl FdmConfig {
    /// Classical anisotropic case: `alpha_x1 = alpha_x2 = ax`,
    /// `alpha_y1 = alpha_y2 = ay`.
    pub fn anisotropic(ax: f64, ay: f64, dt: f64, steps: usize, boundary: PaddingMode) -> Self {
        Self {
            alpha_x1: ax,
            alpha_x2: ax,
            alpha_y1: ay,
            alpha_y2: ay,
            dt,
            steps,
            boundary,
            allow_unstable: false,
        }
    }

    pub fn isotropic(alpha: f64, dt: f64, steps: usize, boundary: PaddingMode) -> Self {
        Self::anisotropic(alpha, alpha, dt, steps, boundary)
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn alphas(&self) -> [f64; 4] {
        [self.alpha_x1, self.alpha_x2, self.alpha_y1, self.alpha_y2]
    }

    /// `dt (ax1 + ax2) / dx^2 + dt (ay1 + ay2) / dy^2`; the centre
    /// coefficient of the update is `1 - ratio`.
    pub fn stability_ratio(&self, dx: f64, dy: f64) -> f64 {
        self.dt * (self.alpha_x1 + self.alpha_x2) / (dx * dx)
            + self.dt * (self.alpha_y1 + self.alpha_y2) / (dy * dy)
    }

    pub fn validate(&self, dx: f64, dy: f64) -> Result<()> {
        if self.alphas().iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Config(format!(
                "diffusivities must be finite and non-negative, got {:?}",
                self.alphas()
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let ratio = self.stability_ratio(dx, dy);
        if ratio > 1.0 && !self.allow_unstable {
            return Err(Error::Stability { ratio });
        }
        Ok(())
    }
}

fn step_unchecked(field: &TemperatureField, cfg: &FdmConfig) -> TemperatureField {
    let (nx, ny) = (field.nx(), field.ny());
    let rx1 = cfg.dt * cfg.alpha_x1 / (field.dx() * field.dx());
    let rx2 = cfg.dt * cfg.alpha_x2 / (field.dx() * field.dx());
    let ry1 = cfg.dt * cfg.alpha_y1 / (field.dy() * field.dy());
    let ry2 = cfg.dt * cfg.alpha_y2 / (field.dy() * field.dy());
    let b = cfg.boundary;
    let at = |i: isize, j: isize| -> f64 {
        match (b.resolve(i, nx), b.resolve(j, ny)) {
            (Some(i), Some(j)) => field.get(i, j),
            _ => 0.0,
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx as isize {
        for j in 0..ny as isize {
            let u = field.get(i as usize, j as usize);
            out.push(
                u + rx1 * (at(i + 1, j) - u)
                    + rx2 * (at(i - 1, j) - u)
                    + ry1 * (at(i, j + 1) - u)
                    + ry2 * (at(i, j - 1) - u),
            );
        }
    }
    field.with_values(out)
}

/// One explicit update of every grid point.
pub fn fdm_step(field: &TemperatureField, cfg: &FdmConfig) -> Result<TemperatureField> {
    cfg.validate(field.dx(), field.dy())?;
    Ok(step_unchecked(field, cfg))
}

/// `cfg.steps` successive applications of [`fdm_step`].
pub fn fdm_solve(field: &TemperatureField, cfg: &FdmConfig) -> Result<TemperatureField> {
    cfg.validate(field.dx(), field.dy())?;
    let mut u = field.clone();
    for _ in 0..cfg.steps {
        u = step_unchecked(&u, cfg);
    }
    Ok(u)
}

/// `max |solve(a u1 + b u2) - a solve(u1) - b solve(u2)|`.
pub fn superposition_check(
    u1: &TemperatureField,
    u2: &TemperatureField,
    a: f64,
    b: f64,
    cfg: &FdmConfig,
) -> Result<f64> {
    let mixed = fdm_solve(&u1.combine(a, u2, b)?, cfg)?;
    let separate = fdm_solve(u1, cfg)?.combine(a, &fdm_solve(u2, cfg)?, b)?;
    mixed.max_abs_diff(&separate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(n: usize) -> TemperatureField {
        TemperatureField::from_fn(n, n, 1.0, 1.0, |i, j| if i == n / 2 && j == n / 2 { 1.0 } else { 0.0 })
            .unwrap()
    }

    #[test]
    fn constant_field_is_steady() {
        let f = TemperatureField::from_fn(6, 5, 0.5, 0.25, |_, _| 2.5).unwrap();
        for boundary in [PaddingMode::Periodic, PaddingMode::Replicate] {
            let cfg = FdmConfig {
                alpha_x1: 0.01,
                alpha_x2: 0.02,
                alpha_y1: 0.005,
                alpha_y2: 0.0,
                dt: 1.0,
                steps: 1,
                boundary,
                allow_unstable: false,
            };
            assert_eq!(fdm_step(&f, &cfg).unwrap(), f);
        }
    }

    #[test]
    fn zero_diffusivity_is_identity() {
        let f = TemperatureField::from_fn(4, 4, 1.0, 1.0, |i, j| (i * 4 + j) as f64).unwrap();
        for boundary in [PaddingMode::Periodic, PaddingMode::Replicate, PaddingMode::Zero] {
            let cfg = FdmConfig::isotropic(0.0, 0.3, 7, boundary);
            assert_eq!(fdm_solve(&f, &cfg).unwrap(), f);
        }
    }

    #[test]
    fn impulse_spreads_one_tenth_to_each_neighbour() {
        let cfg = FdmConfig::isotropic(1.0, 0.1, 1, PaddingMode::Periodic);
        let out = fdm_step(&impulse(5), &cfg).unwrap();
        assert!((out.get(2, 2) - 0.6).abs() < 1e-15);
        for (i, j) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert!((out.get(i, j) - 0.1).abs() < 1e-15);
        }
        assert_eq!(out.get(0, 0), 0.0);
        assert!((out.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unstable_step_reports_ratio() {
        let cfg = FdmConfig::isotropic(1.0, 0.3, 1, PaddingMode::Periodic);
        match fdm_step(&impulse(5), &cfg) {
            Err(Error::Stability { ratio }) => assert!((ratio - 1.2).abs() < 1e-12),
            other => panic!("expected stability error, got {other:?}"),
        }
        let unsafe_cfg = FdmConfig {
            allow_unstable: true,
            ..cfg
        };
        assert!(fdm_step(&impulse(5), &unsafe_cfg).is_ok());
    }

    #[test]
    fn rejects_negative_diffusivity() {
        let mut cfg = FdmConfig::isotropic(0.1, 0.1, 1, PaddingMode::Zero);
        cfg.alpha_y2 = -0.1;
        assert!(matches!(fdm_step(&impulse(5), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn superposition_with_unit_combination_is_exact() {
        let u1 = TemperatureField::from_fn(5, 6, 1.0, 1.0, |i, j| ((i * 7 + j * 3) % 5) as f64).unwrap();
        let u2 = TemperatureField::from_fn(5, 6, 1.0, 1.0, |i, j| (i as f64 - j as f64).sin()).unwrap();
        let cfg = FdmConfig::isotropic(0.2, 0.5, 10, PaddingMode::Replicate);
        assert_eq!(superposition_check(&u1, &u2, 1.0, 0.0, &cfg).unwrap(), 0.0);
        let bad = TemperatureField::from_fn(5, 5, 1.0, 1.0, |_, _| 0.0).unwrap();
        assert!(superposition_check(&u1, &bad, 1.0, 1.0, &cfg).is_err());
    }
}
