//! Property suites over the solvers and layers, reported as a table of
//! measured values against fixed bounds.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcheck::{check_inputs, check_params, random_projection, sample_elements, GradCheckConfig, GradCheckReport};
use crate::hc::{HcLayer, KMode};
use crate::model::{build_model, ModelConfig};
use crate::params::{ParamId, ParamStore};
use crate::pde::{
    eval_fourier, fdm_solve, fdm_step, field_spectrum, fit_fourier, harmonic_spectrum, superposition_check, FdmConfig,
    Nonlinearity, TemperatureField,
};
use crate::ra::{Activation, RaLayer};
use crate::tensor::{PaddingMode, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Conservation,
    Convergence,
    Spectrum,
    Superposition,
    All,
}

impl Suite {
    pub const EACH: [Suite; 5] = [
        Suite::Oracle,
        Suite::Conservation,
        Suite::Convergence,
        Suite::Spectrum,
        Suite::Superposition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Conservation => "conservation",
            Suite::Convergence => "convergence",
            Suite::Spectrum => "spectrum",
            Suite::Superposition => "superposition",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within { target: f64, tol: f64 },
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
            Bound::Within { target, tol } => (v - target).abs() <= tol,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b:e}"),
            Bound::AtLeast(b) => write!(f, ">= {b:e}"),
            Bound::Within { target, tol } => write!(f, "{target} +- {tol}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: &'static str,
    pub value: f64,
    pub bound: Bound,
    pub detail: String,
}

impl Check {
    fn new(suite: Suite, name: &'static str, value: f64, bound: Bound) -> Self {
        Self {
            suite,
            name,
            value,
            bound,
            detail: String::new(),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.bound.holds(self.value)
    }
}

/// Runs one suite, or all of them.
pub fn run(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::All => {
            let mut out = Vec::new();
            for s in Suite::EACH {
                out.extend(run(s)?);
            }
            Ok(out)
        }
        Suite::Oracle => oracle_suite(),
        Suite::Conservation => conservation_suite(),
        Suite::Convergence => convergence_suite(),
        Suite::Spectrum => spectrum_suite(),
        Suite::Superposition => superposition_suite(),
    }
}

/// Evolves the unit `(1,1)` mode on an `n x n` Dirichlet grid of side `L`
/// with isotropic diffusivity 1 to time `t` at `dt = ratio * dx^2`
/// (rounded so the steps land exactly on `t`).
pub fn evolve_unit_mode(n: usize, length: f64, t: f64, ratio: f64) -> Result<(TemperatureField, FdmConfig)> {
    let u0 = TemperatureField::sine_mode(n, n, length, 1, 1, 1.0)?;
    let dx = u0.dx();
    let steps = (t / (ratio * dx * dx)).ceil() as usize;
    let cfg = FdmConfig::isotropic(1.0, t / steps as f64, steps, PaddingMode::Zero);
    Ok((fdm_solve(&u0, &cfg)?, cfg))
}

/// Amplitude of the unit mode after FDM integration to `t = 0.5` with
/// `L = pi`, where the continuous solution has decayed by `e^-1`.
pub fn decay_amplitude(n: usize) -> Result<f64> {
    let (u, _) = evolve_unit_mode(n, PI, 0.5, 0.2)?;
    Ok(fit_fourier(&u, PI, 1, 1, 1.0)?.coefficient(1, 1))
}

/// Relative L2 distance between FDM and the Fourier series at the `e^-1`
/// time on an `n x n` grid.
pub fn fdm_fourier_error(n: usize) -> Result<f64> {
    let (u, _) = evolve_unit_mode(n, PI, 0.5, 0.2)?;
    let u0 = TemperatureField::sine_mode(n, n, PI, 1, 1, 1.0)?;
    let sol = fit_fourier(&u0, PI, 1, 1, 1.0)?;
    u.relative_l2(&eval_fourier(&sol, 0.5, n, n)?)
}

/// Time-discretization order: error of the unit mode against the
/// semi-discrete solution `exp(-lambda_h t)` (which carries the same
/// spatial error), for `steps` and `2 steps` on a fixed grid.
pub fn time_order(n: usize, t: f64, steps: usize) -> Result<f64> {
    let u0 = TemperatureField::sine_mode(n, n, PI, 1, 1, 1.0)?;
    let dx = u0.dx();
    let lambda_h = 2.0 * 4.0 / (dx * dx) * (dx / 2.0).sin().powi(2);
    let reference = (-lambda_h * t).exp();
    let err = |steps: usize| -> Result<f64> {
        let cfg = FdmConfig::isotropic(1.0, t / steps as f64, steps, PaddingMode::Zero);
        let u = fdm_solve(&u0, &cfg)?;
        Ok((fit_fourier(&u, PI, 1, 1, 1.0)?.coefficient(1, 1) - reference).abs())
    };
    Ok((err(steps)? / err(2 * steps)?).log2())
}

/// Space order at `dt = 0.2 dx^2`: max-norm error against the continuous
/// solution for `n` and `2n + 1` interior points (spacing halved).
pub fn space_order(n: usize, t: f64) -> Result<f64> {
    let err = |n: usize| -> Result<f64> {
        let (u, _) = evolve_unit_mode(n, PI, t, 0.2)?;
        let exact = TemperatureField::sine_mode(n, n, PI, 1, 1, (-2.0 * t).exp())?;
        u.max_abs_diff(&exact)
    };
    Ok((err(n)? / err(2 * n + 1)?).log2())
}

fn random_field(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> Result<TemperatureField> {
    TemperatureField::from_fn(nx, ny, 1.0, 1.0, |_, _| 0.0).and_then(|f| {
        let v: Vec<f64> = (0..nx * ny).map(|_| rng.gen_range(-1.0..1.0)).collect();
        TemperatureField::new(nx, ny, f.dx(), f.dy(), v)
    })
}

/// Largest elementwise gap between a single-channel HC layer with fixed
/// `k` and one FDM step, over `draws` random non-negative stencils, `k`
/// values and boundary modes.
pub fn hc_fdm_gap(draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = [PaddingMode::Periodic, PaddingMode::Replicate, PaddingMode::Zero];
    let mut worst = 0.0f64;
    for d in 0..draws {
        let (nx, ny) = (rng.gen_range(3..10), rng.gen_range(3..10));
        let w: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let wsum: f64 = w.iter().sum();
        let k = rng.gen_range(0.0..1.0) / wsum;
        let boundary = modes[d % 3];
        let field = random_field(&mut rng, nx, ny)?;

        let mut store = ParamStore::<f64>::new();
        let layer = HcLayer::new(&mut store, "hc", 1, KMode::Fixed(k));
        store.get_mut(layer.w_id()).data_mut().copy_from_slice(&w);
        let z = Tensor::new(vec![1, nx, ny], field.values().to_vec())?;
        let out = layer.apply(&store, &z, boundary)?;

        let cfg = FdmConfig {
            alpha_x1: w[0],
            alpha_x2: w[1],
            alpha_y1: w[2],
            alpha_y2: w[3],
            dt: k,
            steps: 1,
            boundary,
            allow_unstable: false,
        };
        let reference = fdm_step(&field, &cfg)?;
        for (a, b) in out.data().iter().zip(reference.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

fn relative_drift(before: f64, after: f64) -> f64 {
    (after - before).abs() / before.abs().max(f64::MIN_POSITIVE)
}

/// Relative drift of the spatial sum after `steps` periodic FDM steps.
pub fn fdm_sum_drift(steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..12 * 10).map(|_| rng.gen_range(0.5..2.0)).collect();
    let u = TemperatureField::new(12, 10, 0.5, 0.4, v)?;
    let cfg = FdmConfig {
        alpha_x1: 0.01,
        alpha_x2: 0.03,
        alpha_y1: 0.02,
        alpha_y2: 0.005,
        dt: 1.0,
        steps,
        boundary: PaddingMode::Periodic,
        allow_unstable: false,
    };
    Ok(relative_drift(u.sum(), fdm_solve(&u, &cfg)?.sum()))
}

/// Largest per-channel relative drift of the spatial sum after `steps`
/// applications of an input-dependent HC layer with periodic boundary.
pub fn hc_sum_drift(steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (3, 8, 6);
    let mut store = ParamStore::<f64>::new();
    let layer = HcLayer::new(&mut store, "hc", c, KMode::InputDependent);
    for v in store.get_mut(layer.w_id()).data_mut() {
        *v = rng.gen_range(0.0..0.25);
    }
    let (kw, kb) = layer.k_linear_ids().expect("input-dependent layer");
    for id in [kw, kb] {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let z0 = Tensor::from_fn([c, h, w], |_| rng.gen_range(0.5..2.0));
    let sums = |t: &Tensor<f64>| -> Vec<f64> { t.data().chunks(h * w).map(|p| p.iter().sum()).collect() };
    let mut z = z0.clone();
    for _ in 0..steps {
        z = layer.apply(&store, &z, PaddingMode::Periodic)?;
    }
    Ok(sums(&z0)
        .iter()
        .zip(sums(&z))
        .map(|(&a, b)| relative_drift(a, b))
        .fold(0.0, f64::max))
}

/// Largest violation of the discrete maximum principle over `steps`
/// stable steps (positive when `max` grows or `min` shrinks).
pub fn max_principle_violation(boundary: PaddingMode, steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = random_field(&mut rng, 9, 11)?;
    let cfg = FdmConfig {
        alpha_x1: 0.1,
        alpha_x2: 0.3,
        alpha_y1: 0.2,
        alpha_y2: 0.35,
        dt: 1.0,
        steps: 1,
        boundary,
        allow_unstable: false,
    };
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        let next = fdm_step(&u, &cfg)?;
        worst = worst.max(next.max() - u.max()).max(u.min() - next.min());
        u = next;
    }
    Ok(worst)
}

/// FDM linearity residual for random fields and coefficients.
pub fn superposition_residual(steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u1 = random_field(&mut rng, 16, 12)?;
    let u2 = random_field(&mut rng, 16, 12)?;
    let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let cfg = FdmConfig {
        alpha_x1: 0.1,
        alpha_x2: 0.2,
        alpha_y1: 0.15,
        alpha_y2: 0.05,
        dt: 1.0,
        steps,
        boundary: PaddingMode::Replicate,
        allow_unstable: false,
    };
    superposition_check(&u1, &u2, a, b, &cfg)
}

/// Pairs listed for the square of mode (1,1): `sin^2 a sin^2 b` expands to
/// cosines at twice the input frequency.
pub const SQUARE_PAIRS: [(usize, usize); 3] = [(0, 2), (2, 0), (2, 2)];

/// Samples `sin(pi x / L) sin(pi y / L)` on the `2L`-periodic grid as a
/// `[C, n, n]` tensor with the same mode in every channel.
pub fn mode_tensor(channels: usize, n: usize) -> Tensor<f64> {
    Tensor::from_fn([channels, n, n], |k| {
        let (i, j) = ((k / n) % n, k % n);
        (PI * 2.0 * i as f64 / n as f64).sin() * (PI * 2.0 * j as f64 / n as f64).sin()
    })
}

/// Mean energy on the doubled pairs over the expanded RA features of the
/// unit mode, relative to the input's peak energy.
pub fn ra_doubled_energy_ratio(use_filter: bool, seed: u64) -> Result<f64> {
    let (c, n) = (2, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let ra = RaLayer::new(&mut store, "ra", c, 4 * c, use_filter, &mut rng);
    let z = mode_tensor(c, n);
    let feats = ra.apply_features(&store, &z)?;
    let input_peak = field_spectrum(n, n, &z.data()[..n * n])?.peak();
    let mut total = 0.0;
    for ch in feats.data().chunks(n * n) {
        let s = field_spectrum(n, n, ch)?;
        total += SQUARE_PAIRS.iter().map(|&(p, q)| s.energy(p, q)).sum::<f64>();
    }
    Ok(total / (ra.hidden() as f64) / input_peak)
}

/// Energy of the RA term outside `(1,1)` and DC, summed over output
/// channels, relative to the input's peak energy.
pub fn ra_term_new_energy_ratio(use_filter: bool, seed: u64) -> Result<f64> {
    let (c, n) = (2, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let ra = RaLayer::new(&mut store, "ra", c, 4 * c, use_filter, &mut rng);
    let z = mode_tensor(c, n);
    let term = ra.apply_term(&store, &z)?;
    let input_peak = field_spectrum(n, n, &z.data()[..n * n])?.peak();
    let mut total = 0.0;
    for ch in term.data().chunks(n * n) {
        total += field_spectrum(n, n, ch)?.energy_outside(&[(1, 1)]);
    }
    Ok(total / input_peak)
}

/// Superposition residual of an RA term with identity activation and no
/// filter, which must be affine: `T(a x + b y) - a T(x) - b T(y) - (1-a-b) T(0)`.
pub fn ra_linearity_residual(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let ra = RaLayer::new(&mut store, "ra", 3, 12, false, &mut rng).with_activation(Activation::Identity);
    for id in [ra.expand_ids().1, ra.contract_ids().1] {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let x = Tensor::from_fn([3, 5, 4], |_| rng.gen_range(-2.0..2.0));
    let y = Tensor::from_fn([3, 5, 4], |_| rng.gen_range(-2.0..2.0));
    let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let mix = Tensor::new(
        vec![3, 5, 4],
        x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
    )?;
    let t = |z: &Tensor<f64>| ra.apply_term(&store, z);
    let (tm, tx, ty, t0) = (t(&mix)?, t(&x)?, t(&y)?, t(&Tensor::zeros([3, 5, 4]))?);
    let mut worst = 0.0f64;
    for k in 0..tm.len() {
        let r = tm.data()[k] - a * tx.data()[k] - b * ty.data()[k] - (1.0 - a - b) * t0.data()[k];
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

fn oracle_suite() -> Result<Vec<Check>> {
    let s = Suite::Oracle;
    let e1 = (-1.0f64).exp();
    let amp = decay_amplitude(31)?;
    Ok(vec![
        Check::new(s, "decay_to_inverse_e", (amp - e1).abs() / e1, Bound::AtMost(1e-2))
            .with_detail(format!("amplitude {amp:.6} vs e^-1 {e1:.6}")),
        Check::new(s, "fdm_fourier_rel_l2_64", fdm_fourier_error(64)?, Bound::AtMost(1e-2)),
        Check::new(s, "hc_layer_vs_fdm_step", hc_fdm_gap(20, 3)?, Bound::AtMost(1e-12))
            .with_detail("20 random stencils, k and boundaries"),
    ])
}

fn conservation_suite() -> Result<Vec<Check>> {
    let s = Suite::Conservation;
    Ok(vec![
        Check::new(s, "fdm_periodic_sum_drift", fdm_sum_drift(100, 5)?, Bound::AtMost(1e-12)),
        Check::new(s, "hc_periodic_sum_drift", hc_sum_drift(100, 6)?, Bound::AtMost(1e-12)),
        Check::new(
            s,
            "max_principle_periodic",
            max_principle_violation(PaddingMode::Periodic, 50, 7)?,
            Bound::AtMost(1e-15),
        ),
        Check::new(
            s,
            "max_principle_replicate",
            max_principle_violation(PaddingMode::Replicate, 50, 8)?,
            Bound::AtMost(1e-15),
        ),
    ])
}

fn convergence_suite() -> Result<Vec<Check>> {
    let s = Suite::Convergence;
    Ok(vec![
        Check::new(s, "time_order", time_order(16, 0.5, 100)?, Bound::Within { target: 1.0, tol: 0.3 })
            .with_detail("16x16 grid, 100 vs 200 steps"),
        Check::new(s, "space_order", space_order(15, 0.5)?, Bound::Within { target: 2.0, tol: 0.3 })
            .with_detail("15 vs 31 interior points, dt = 0.2 dx^2"),
    ])
}

fn spectrum_suite() -> Result<Vec<Check>> {
    let s = Suite::Spectrum;
    let sq = harmonic_spectrum(1, 1, 1.0, Nonlinearity::Square, 32)?;
    let found: Vec<String> = sq
        .support(1e-10)
        .into_iter()
        .map(|(p, q)| format!("({p},{q})"))
        .collect();
    let stray = sq.energy_outside(&SQUARE_PAIRS) / sq.peak();
    let gelu = harmonic_spectrum(1, 1, 1.0, Nonlinearity::Gelu, 32)?;
    let ident = harmonic_spectrum(1, 1, 1.0, Nonlinearity::Identity, 32)?;
    Ok(vec![
        Check::new(s, "square_on_doubled_pairs", sq.off_dc_fraction_on(&SQUARE_PAIRS), Bound::AtLeast(0.999))
            .with_detail(format!("support {}", found.join(" "))),
        Check::new(s, "square_stray_energy", stray, Bound::AtMost(1e-10)),
        Check::new(
            s,
            "gelu_new_frequencies",
            gelu.energy_outside(&[(1, 1)]) / gelu.total(),
            Bound::AtLeast(1e-3),
        ),
        Check::new(s, "identity_stays_single", ident.energy_outside(&[(1, 1)]) / ident.peak(), Bound::AtMost(1e-10)),
        Check::new(s, "ra_doubled_pairs_filter", ra_doubled_energy_ratio(true, 12)?, Bound::AtLeast(1e-3)),
        Check::new(s, "ra_doubled_pairs_plain", ra_doubled_energy_ratio(false, 12)?, Bound::AtLeast(1e-3)),
        Check::new(s, "ra_identity_is_linear", ra_linearity_residual(13)?, Bound::AtMost(1e-12)),
    ])
}

fn superposition_suite() -> Result<Vec<Check>> {
    let s = Suite::Superposition;
    let f = TemperatureField::sine_mode(9, 9, 1.0, 2, 1, 1.0)?;
    let g = TemperatureField::sine_mode(9, 9, 1.0, 1, 3, 1.0)?;
    let cfg = FdmConfig::isotropic(0.001, 0.5, 100, PaddingMode::Zero);
    Ok(vec![
        Check::new(s, "fdm_linearity_100_steps", superposition_residual(100, 21)?, Bound::AtMost(1e-10)),
        Check::new(s, "fdm_unit_combination", superposition_check(&f, &g, 1.0, 0.0, &cfg)?, Bound::AtMost(0.0)),
    ])
}

/// What a finite-difference gradient check covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    /// Every differentiable tensor operation.
    Ops,
    /// The heat-conduction layer in all three `k` modes.
    HcLayer,
    /// The refinement layer with and without its filter.
    RaLayer,
    /// The nano backbone end to end on a sample of its parameters.
    Model,
}

impl GradTarget {
    pub const EACH: [GradTarget; 4] = [GradTarget::Ops, GradTarget::HcLayer, GradTarget::RaLayer, GradTarget::Model];

    pub fn as_str(self) -> &'static str {
        match self {
            GradTarget::Ops => "ops",
            GradTarget::HcLayer => "hc-layer",
            GradTarget::RaLayer => "ra-layer",
            GradTarget::Model => "model",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            GradTarget::Model => 1e-4,
            _ => 1e-5,
        }
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTarget::EACH
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown gradcheck target {s:?}")))
    }
}

fn randomize_store(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn check_op<F>(cfg: &GradCheckConfig, shapes: &[&[usize]], rng: &mut ChaCha8Rng, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| Tensor::from_fn(s.to_vec(), |_| rng.gen_range(-2.0..2.0)))
        .collect();
    let seed = rng.gen();
    check_inputs(cfg, &inputs, |t, v| {
        let out = f(t, v)?;
        random_projection(t, out, seed)
    })
}

/// Runs the gradient check of one target on `f64` with inputs drawn from
/// `seed`, at the target's tolerance.
pub fn gradcheck_target(target: GradTarget, seed: u64) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig::default().with_rel_tol(target.tolerance());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    match target {
        GradTarget::Ops => {
            let r = &mut rng;
            let mut all = vec![
                check_op(&cfg, &[&[4, 5], &[5, 3]], r, |t, v| t.matmul(v[0], v[1]))?,
                check_op(&cfg, &[&[3, 4], &[3, 4]], r, |t, v| t.add(v[0], v[1]))?,
                check_op(&cfg, &[&[3, 4], &[3, 4]], r, |t, v| t.sub(v[0], v[1]))?,
                check_op(&cfg, &[&[3, 4], &[3, 4]], r, |t, v| t.mul(v[0], v[1]))?,
                check_op(&cfg, &[&[2, 5]], r, |t, v| Ok(t.scale(v[0], -1.3)))?,
                check_op(&cfg, &[&[2, 5]], r, |t, v| Ok(t.sigmoid(v[0])))?,
                check_op(&cfg, &[&[2, 5]], r, |t, v| Ok(t.gelu(v[0])))?,
                check_op(&cfg, &[&[2, 6]], r, |t, v| t.reshape(v[0], &[4, 3]))?,
                check_op(&cfg, &[&[2, 6]], r, |t, v| Ok(t.sum(v[0])))?,
                check_op(&cfg, &[&[3, 5], &[5]], r, |t, v| t.add_row_bias(v[0], v[1]))?,
                check_op(&cfg, &[&[2, 3, 4, 5]], r, |t, v| t.global_avg_pool(v[0]))?,
                check_op(&cfg, &[&[3, 6]], r, |t, v| t.softmax_cross_entropy(v[0], &[5, 0, 2]))?,
                check_op(&cfg, &[&[2, 3, 4, 4], &[3, 5], &[5]], r, |t, v| t.channel_linear(v[0], v[1], Some(v[2])))?,
                check_op(&cfg, &[&[2, 3, 4, 8], &[12, 4], &[4]], r, |t, v| t.patch_embed(v[0], v[1], Some(v[2]), 2))?,
                check_op(&cfg, &[&[2, 3, 4, 4], &[2, 3]], r, |t, v| t.scale_channels(v[0], v[1]))?,
                check_op(&cfg, &[&[2, 4, 3, 3], &[4], &[4]], r, |t, v| t.channel_norm(v[0], v[1], v[2], 1e-6))?,
            ];
            for mode in [PaddingMode::Replicate, PaddingMode::Periodic, PaddingMode::Zero] {
                all.push(check_op(&cfg, &[&[2, 3, 6, 5], &[3, 3, 3]], r, |t, v| {
                    t.depthwise_conv2d(v[0], v[1], mode)
                })?);
                all.push(check_op(&cfg, &[&[2, 3, 5, 6], &[3, 4]], r, |t, v| t.heat_stencil(v[0], v[1], mode))?);
            }
            all.iter().for_each(|x| report.merge(x));
        }
        GradTarget::HcLayer => {
            for mode in [KMode::Fixed(0.4), KMode::Learnable, KMode::InputDependent] {
                let mut store = ParamStore::new();
                let hc = HcLayer::new(&mut store, "hc", 3, mode);
                randomize_store(&mut store, &mut rng, 1.0);
                let z = store.add("z", Tensor::from_fn([3, 6, 6], |_| rng.gen_range(-1.0..1.0)));
                let targets = sample_elements(&store, usize::MAX, 0);
                let proj = rng.gen();
                report.merge(&check_params(&cfg, &store, &targets, |g| {
                    let zv = g.param(z);
                    let out = hc.forward(g, zv, PaddingMode::Replicate)?;
                    random_projection(g, out, proj)
                })?);
            }
        }
        GradTarget::RaLayer => {
            for use_filter in [true, false] {
                let mut store = ParamStore::new();
                let ra = RaLayer::new(&mut store, "ra", 2, 8, use_filter, &mut rng);
                randomize_store(&mut store, &mut rng, 0.7);
                let z = store.add("z", Tensor::from_fn([2, 4, 4], |_| rng.gen_range(-1.0..1.0)));
                let targets = sample_elements(&store, usize::MAX, 0);
                let proj = rng.gen();
                report.merge(&check_params(&cfg, &store, &targets, |g| {
                    let zv = g.param(z);
                    let out = ra.forward(g, zv)?;
                    random_projection(g, out, proj)
                })?);
            }
        }
        GradTarget::Model => {
            let model = build_model::<f64>(&ModelConfig::nano(), seed)?;
            let x = Tensor::from_fn([2, 1, 32, 32], |_| rng.gen_range(-1.0..1.0));
            let labels = [rng.gen_range(0..10), rng.gen_range(0..10)];
            let targets = sample_elements(&model.store, 200, rng.gen());
            report = check_params(&cfg, &model.store, &targets, |g| {
                let xv = g.input(x.clone());
                model.net.loss(g, xv, &labels)
            })?;
        }
    }
    Ok(report)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders checks as `suite,check,value,bound,status,detail` lines.
pub fn format_table(checks: &[Check]) -> String {
    let mut s = String::from("suite,check,value,bound,status,detail\n");
    for c in checks {
        s.push_str(&format!(
            "{},{},{:e},{},{},{}\n",
            c.suite.as_str(),
            c.name,
            c.value,
            c.bound,
            if c.passed() { "PASS" } else { "FAIL" },
            csv_field(&c.detail)
        ));
    }
    s
}
