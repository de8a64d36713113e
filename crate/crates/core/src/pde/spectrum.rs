use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::gelu_scalar;

/// Pointwise map applied to a sampled mode before its spectrum is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Identity,
    Square,
    Gelu,
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Identity => v,
            Nonlinearity::Square => v * v,
            Nonlinearity::Gelu => gelu_scalar(v),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Square => "square",
            Nonlinearity::Gelu => "gelu",
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Nonlinearity::Identity),
            "square" => Ok(Nonlinearity::Square),
            "gelu" => Ok(Nonlinearity::Gelu),
            other => Err(Error::Config(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

/// Energies of a periodic 2-D field indexed by non-negative frequency pairs
/// `(p, q)`, with `+p` and `-p` folded together. Frequency `p` means
/// `p` half-periods over the length `L`, so `sin(m pi x / L)` sits at `m`.
///
/// Energies are normalized so that they sum to the mean square of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    px: usize,
    py: usize,
    energy: Vec<f64>,
}

impl Spectrum {
    /// Largest `p` and `q` represented.
    pub fn extent(&self) -> (usize, usize) {
        (self.px - 1, self.py - 1)
    }

    pub fn energy(&self, p: usize, q: usize) -> f64 {
        if p < self.px && q < self.py {
            self.energy[p * self.py + q]
        } else {
            0.0
        }
    }

    pub fn dc(&self) -> f64 {
        self.energy[0]
    }

    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    pub fn off_dc_total(&self) -> f64 {
        self.total() - self.dc()
    }

    /// `((p, q), energy)` for every pair, DC included.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let py = self.py;
        self.energy.iter().enumerate().map(move |(k, &e)| ((k / py, k % py), e))
    }

    pub fn peak(&self) -> f64 {
        self.energy.iter().cloned().fold(0.0, f64::max)
    }

    /// Pairs whose energy exceeds `rel * peak`, strongest first.
    pub fn support(&self, rel: f64) -> Vec<(usize, usize)> {
        let cut = rel * self.peak();
        let mut pairs: Vec<_> = self.iter().filter(|(_, e)| *e > cut).collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        pairs.into_iter().map(|(pq, _)| pq).collect()
    }

    /// Off-DC energy carried by `pairs`, divided by all off-DC energy.
    pub fn off_dc_fraction_on(&self, pairs: &[(usize, usize)]) -> f64 {
        let on: f64 = pairs.iter().filter(|&&pq| pq != (0, 0)).map(|&(p, q)| self.energy(p, q)).sum();
        on / self.off_dc_total()
    }

    /// Energy outside `pairs` and outside DC.
    pub fn energy_outside(&self, pairs: &[(usize, usize)]) -> f64 {
        self.iter()
            .filter(|(pq, _)| *pq != (0, 0) && !pairs.contains(pq))
            .map(|(_, e)| e)
            .sum()
    }
}

fn axis_dft(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut c = Vec::with_capacity(n * n);
    let mut s = Vec::with_capacity(n * n);
    for k in 0..n {
        for x in 0..n {
            // Reduce k*x mod n first so the angle stays in [0, 2 pi).
            let a = 2.0 * PI * ((k * x) % n) as f64 / n as f64;
            c.push(a.cos());
            s.push(-a.sin());
        }
    }
    (c, s)
}

/// Folded power spectrum of a periodic `nx x ny` real sample grid, by a
/// direct separable DFT.
pub fn field_spectrum(nx: usize, ny: usize, values: &[f64]) -> Result<Spectrum> {
    if nx == 0 || ny == 0 || values.len() != nx * ny {
        return Err(Error::shape(
            "field_spectrum",
            format!("{} values for a {nx}x{ny} grid", values.len()),
        ));
    }
    let (cy, sy) = axis_dft(ny);
    let mut rr = vec![0.0; nx * ny];
    let mut ri = vec![0.0; nx * ny];
    for i in 0..nx {
        let row = &values[i * ny..(i + 1) * ny];
        for q in 0..ny {
            let (c, s) = (&cy[q * ny..(q + 1) * ny], &sy[q * ny..(q + 1) * ny]);
            rr[i * ny + q] = row.iter().zip(c).map(|(u, c)| u * c).sum();
            ri[i * ny + q] = row.iter().zip(s).map(|(u, s)| u * s).sum();
        }
    }
    let (cx, sx) = axis_dft(nx);
    let (px, py) = (nx / 2 + 1, ny / 2 + 1);
    let mut energy = vec![0.0; px * py];
    let norm = ((nx * ny) as f64).powi(2);
    for p in 0..nx {
        for q in 0..ny {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..nx {
                let (c, s) = (cx[p * nx + i], sx[p * nx + i]);
                let (a, b) = (rr[i * ny + q], ri[i * ny + q]);
                re += c * a - s * b;
                im += c * b + s * a;
            }
            let fp = p.min(nx - p);
            let fq = q.min(ny - q);
            energy[fp * py + fq] += (re * re + im * im) / norm;
        }
    }
    Ok(Spectrum { px, py, energy })
}

/// Spectrum of `f(sin(m pi x / L) sin(n pi y / L))` sampled on
/// `resolution` points per axis over the period `2L`.
pub fn harmonic_spectrum(
    mode_m: usize,
    mode_n: usize,
    length: f64,
    nonlinearity: Nonlinearity,
    resolution: usize,
) -> Result<Spectrum> {
    let need = 4 * mode_m.max(mode_n);
    if mode_m == 0 || mode_n == 0 {
        return Err(Error::Config("mode numbers start at 1".into()));
    }
    if resolution < need {
        return Err(Error::Config(format!(
            "resolution {resolution} aliases mode ({mode_m}, {mode_n}): need at least {need}"
        )));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::Config(format!("domain length must be positive, got {length}")));
    }
    let dx = 2.0 * length / resolution as f64;
    let mut values = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let sx = (mode_m as f64 * PI * i as f64 * dx / length).sin();
        for j in 0..resolution {
            let sy = (mode_n as f64 * PI * j as f64 * dx / length).sin();
            values.push(nonlinearity.apply(sx * sy));
        }
    }
    field_spectrum(resolution, resolution, &values)
}
