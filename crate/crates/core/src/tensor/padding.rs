use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// How out-of-range neighbours are supplied at grid edges.
///
/// Shared by the neural stencil/convolution ops and the PDE solvers so both
/// sides of every oracle comparison see identical boundary semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PaddingMode {
    /// Edge value is repeated (insulated boundary).
    Replicate,
    /// Indices wrap around (torus).
    Periodic,
    /// Out-of-range neighbours read as zero (homogeneous Dirichlet).
    Zero,
}

impl PaddingMode {
    /// Maps a possibly out-of-range index onto `0..n`, or `None` when the
    /// neighbour is the zero ghost value.
    #[inline]
    pub fn resolve(self, idx: isize, n: usize) -> Option<usize> {
        let n_i = n as isize;
        if (0..n_i).contains(&idx) {
            return Some(idx as usize);
        }
        match self {
            PaddingMode::Zero => None,
            PaddingMode::Replicate => Some(idx.clamp(0, n_i - 1) as usize),
            PaddingMode::Periodic => Some(idx.rem_euclid(n_i) as usize),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PaddingMode::Replicate => "replicate",
            PaddingMode::Periodic => "periodic",
            PaddingMode::Zero => "zero",
        }
    }
}

impl fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "replicate" => Ok(PaddingMode::Replicate),
            "periodic" => Ok(PaddingMode::Periodic),
            "zero" | "dirichlet" => Ok(PaddingMode::Zero),
            other => Err(Error::Config(format!("unknown boundary mode '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_each_mode() {
        assert_eq!(PaddingMode::Zero.resolve(-1, 4), None);
        assert_eq!(PaddingMode::Zero.resolve(4, 4), None);
        assert_eq!(PaddingMode::Replicate.resolve(-1, 4), Some(0));
        assert_eq!(PaddingMode::Replicate.resolve(5, 4), Some(3));
        assert_eq!(PaddingMode::Periodic.resolve(-1, 4), Some(3));
        assert_eq!(PaddingMode::Periodic.resolve(4, 4), Some(0));
        for mode in [PaddingMode::Zero, PaddingMode::Replicate, PaddingMode::Periodic] {
            assert_eq!(mode.resolve(2, 4), Some(2));
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("Periodic".parse::<PaddingMode>().unwrap(), PaddingMode::Periodic);
        assert_eq!("dirichlet".parse::<PaddingMode>().unwrap(), PaddingMode::Zero);
        assert!("reflect".parse::<PaddingMode>().is_err());
    }
}
