use std::f64::consts::PI;

use super::TemperatureField;
use crate::error::{Error, Result};

/// Truncated double sine series on a square Dirichlet domain of side `L`:
/// `u(x, y, t) = sum B_mn sin(m pi x / L) sin(n pi y / L) exp(-k (m^2 + n^2) pi^2 t / L^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSolution {
    /// `coeffs[(m-1) * n_modes + (n-1)] = B_mn`.
    coeffs: Vec<f64>,
    m_modes: usize,
    n_modes: usize,
    length: f64,
    diffusivity: f64,
}

impl FourierSolution {
    pub fn new(coeffs: Vec<f64>, m_modes: usize, n_modes: usize, length: f64, diffusivity: f64) -> Result<Self> {
        if coeffs.len() != m_modes * n_modes {
            return Err(Error::shape(
                "FourierSolution::new",
                format!("{} coefficients for {m_modes}x{n_modes} modes", coeffs.len()),
            ));
        }
        if !(length > 0.0 && length.is_finite()) || !(diffusivity >= 0.0 && diffusivity.is_finite()) {
            return Err(Error::Config(format!(
                "need L > 0 and k >= 0, got L={length}, k={diffusivity}"
            )));
        }
        Ok(Self {
            coeffs,
            m_modes,
            n_modes,
            length,
            diffusivity,
        })
    }

    pub fn m_modes(&self) -> usize {
        self.m_modes
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `B_mn` with 1-based mode numbers.
    pub fn coefficient(&self, m: usize, n: usize) -> f64 {
        assert!((1..=self.m_modes).contains(&m) && (1..=self.n_modes).contains(&n));
        self.coeffs[(m - 1) * self.n_modes + (n - 1)]
    }

    /// Decay factor of mode `(m, n)` after time `t`.
    pub fn decay(&self, m: usize, n: usize, t: f64) -> f64 {
        let q = (m * m + n * n) as f64 * PI * PI / (self.length * self.length);
        (-self.diffusivity * q * t).exp()
    }

    /// The solution at time `t` re-expressed as coefficients at time 0.
    pub fn advanced(&self, t: f64) -> Self {
        let mut out = self.clone();
        for m in 1..=self.m_modes {
            for n in 1..=self.n_modes {
                out.coeffs[(m - 1) * self.n_modes + (n - 1)] *= self.decay(m, n, t);
            }
        }
        out
    }
}

fn sine_table(modes: usize, points: usize) -> Vec<f64> {
    let denom = (points + 1) as f64;
    let mut t = Vec::with_capacity(modes * points);
    for m in 1..=modes {
        for i in 0..points {
            t.push((m as f64 * PI * (i + 1) as f64 / denom).sin());
        }
    }
    t
}

/// Type-I discrete sine transform of a Dirichlet interior grid, by direct
/// summation.
pub fn fit_fourier(
    field: &TemperatureField,
    length: f64,
    m_modes: usize,
    n_modes: usize,
    diffusivity: f64,
) -> Result<FourierSolution> {
    let (nx, ny) = (field.nx(), field.ny());
    if m_modes == 0 || n_modes == 0 || m_modes > nx || n_modes > ny {
        return Err(Error::Config(format!(
            "{m_modes}x{n_modes} modes outside the Nyquist limit 1..={nx} x 1..={ny} of the grid"
        )));
    }
    let (ex, ey) = (length / (nx + 1) as f64, length / (ny + 1) as f64);
    let spacing_ok = |d: f64, e: f64| (d - e).abs() <= 1e-9 * e;
    if !spacing_ok(field.dx(), ex) || !spacing_ok(field.dy(), ey) {
        return Err(Error::Config(format!(
            "grid spacing ({}, {}) does not match a Dirichlet square of side {length}: expected ({ex}, {ey})",
            field.dx(),
            field.dy()
        )));
    }
    let sx = sine_table(m_modes, nx);
    let sy = sine_table(n_modes, ny);
    // Contract along y first: partial[i][n] = sum_j u_ij sin(n pi (j+1)/(ny+1)).
    let mut partial = vec![0.0; nx * n_modes];
    for i in 0..nx {
        for n in 0..n_modes {
            partial[i * n_modes + n] = (0..ny).map(|j| field.get(i, j) * sy[n * ny + j]).sum();
        }
    }
    let scale = 4.0 / ((nx + 1) * (ny + 1)) as f64;
    let mut coeffs = vec![0.0; m_modes * n_modes];
    for m in 0..m_modes {
        for n in 0..n_modes {
            let s: f64 = (0..nx).map(|i| sx[m * nx + i] * partial[i * n_modes + n]).sum();
            coeffs[m * n_modes + n] = scale * s;
        }
    }
    FourierSolution::new(coeffs, m_modes, n_modes, length, diffusivity)
}

/// Sums the retained modes at time `t` on the interior nodes of an
/// `nx x ny` Dirichlet grid.
pub fn eval_fourier(sol: &FourierSolution, t: f64, nx: usize, ny: usize) -> Result<TemperatureField> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("evaluation time must be >= 0, got {t}")));
    }
    let b = sol.advanced(t);
    let (mm, nn) = (sol.m_modes, sol.n_modes);
    let sx = sine_table(mm, nx);
    let sy = sine_table(nn, ny);
    let mut values = vec![0.0; nx * ny];
    for i in 0..nx {
        for m in 0..mm {
            let bx = sx[m * nx + i];
            for n in 0..nn {
                let c = b.coeffs[m * nn + n] * bx;
                for j in 0..ny {
                    values[i * ny + j] += c * sy[n * ny + j];
                }
            }
        }
    }
    let dx = sol.length / (nx + 1) as f64;
    let dy = sol.length / (ny + 1) as f64;
    TemperatureField::new(nx, ny, dx, dy, values)
}
