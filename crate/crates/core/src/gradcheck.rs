//! Central finite-difference gradient checking in `f64`.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum relative error `|a - n| / max(|a|, |n|)`.
    pub rel_tol: f64,
    /// Elements with `|analytic|` below this are compared absolutely
    /// against the same bound.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
        }
    }
}

impl GradCheckConfig {
    pub fn with_rel_tol(mut self, tol: f64) -> Self {
        self.rel_tol = tol;
        self
    }

    /// Returns `(passed, error)`; `error` is relative unless the analytic
    /// value falls under the absolute floor.
    pub fn compare(&self, analytic: f64, numeric: f64) -> (bool, f64) {
        let diff = (analytic - numeric).abs();
        if analytic.abs() < self.abs_floor {
            (diff <= self.abs_floor, diff)
        } else {
            let rel = diff / analytic.abs().max(numeric.abs());
            (rel <= self.rel_tol, rel)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest relative error among elements compared relatively.
    pub max_rel_err: f64,
    /// Largest absolute error among elements under the floor.
    pub max_abs_err: f64,
    /// `(analytic, numeric)` of the worst relatively-compared element.
    pub worst: Option<(f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    fn record(&mut self, cfg: &GradCheckConfig, analytic: f64, numeric: f64) {
        let (ok, err) = cfg.compare(analytic, numeric);
        self.checked += 1;
        if !ok {
            self.failures += 1;
        }
        if analytic.abs() < cfg.abs_floor {
            self.max_abs_err = self.max_abs_err.max(err);
        } else if err >= self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some((analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// Reduces a tensor-valued output to a scalar with fixed pseudo-random
/// weights in `[-1, 1]`, so every output element contributes a distinct
/// cotangent.
pub fn random_projection(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let weights = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let wv = tape.input(weights);
    let prod = tape.mul(out, wv)?;
    Ok(tape.sum(prod))
}

fn scalar_value(tape: &Tape<f64>, v: Var) -> f64 {
    tape.value(v)[0]
}

/// Checks the gradient of a scalar function of several input tensors with
/// respect to every element of every input.
pub fn check_inputs<F>(cfg: &GradCheckConfig, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(scalar_value(&tape, out))
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[which].len()];
        let analytic = grads.get(*v).unwrap_or(&zeros).to_vec();
        for (e, &a) in analytic.iter().enumerate() {
            let orig = work[which].data()[e];
            work[which].data_mut()[e] = orig + cfg.step;
            let up = eval(&work)?;
            work[which].data_mut()[e] = orig - cfg.step;
            let down = eval(&work)?;
            work[which].data_mut()[e] = orig;
            report.record(cfg, a, (up - down) / (2.0 * cfg.step));
        }
    }
    Ok(report)
}

/// Checks the gradient of a parameterized scalar loss with respect to the
/// listed `(parameter, element)` pairs.
pub fn check_params<F>(
    cfg: &GradCheckConfig,
    store: &ParamStore<f64>,
    targets: &[(ParamId, usize)],
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut graph = Graph::new(store);
    let out = loss(&mut graph)?;
    let grads = graph.backward(out)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut graph = Graph::new(s);
        let out = loss(&mut graph)?;
        Ok(scalar_value(&graph, out))
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for &(id, e) in targets {
        let a = grads.get(id).map_or(0.0, |g| g[e]);
        let orig = work.get(id).data()[e];
        work.get_mut(id).data_mut()[e] = orig + cfg.step;
        let up = eval(&work)?;
        work.get_mut(id).data_mut()[e] = orig - cfg.step;
        let down = eval(&work)?;
        work.get_mut(id).data_mut()[e] = orig;
        report.record(cfg, a, (up - down) / (2.0 * cfg.step));
    }
    Ok(report)
}

/// Picks `count` distinct `(parameter, element)` pairs uniformly over all
/// scalars in the store (or all of them if the store is smaller).
pub fn sample_elements<T: crate::tensor::Real>(
    store: &ParamStore<T>,
    count: usize,
    seed: u64,
) -> Vec<(ParamId, usize)> {
    let all: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |e| (id, e)))
        .collect();
    if all.len() <= count {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, all.len(), count)
        .into_iter()
        .map(|i| all[i])
        .collect()
}
