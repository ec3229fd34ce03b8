//! Finite-difference gradient oracles and the derivative-check protocol.
//!
//! The harness compares hand-derived gradients against numeric differences
//! of the loss. The protocol builds a fresh random convolution instance per
//! run, checks a chosen gradient target (input data, full filters, or
//! tracked weights), and aggregates normalized percent errors:
//!
//! ```text
//! err% = 100 · ‖g_analytic − g_numeric‖₂ / max(‖g_numeric‖₂, 1e-12)
//! ```
//!
//! Both the proposed spectral-domain gradients and the naive variants that
//! skip the forward transform are evaluated on bit-identical instances, so
//! their errors are directly comparable.

use std::sync::Arc;

use ndarray::{Array1, Array3};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::conv;
use crate::error::{Error, Result};
use crate::interp;
use crate::spectral::SpectralBasis;

const NORM_FLOOR: f64 = 1e-12;

/// Normalized percent error between an analytic and a numeric gradient.
pub fn percent_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        diff_sq += (a - n) * (a - n);
        ref_sq += n * n;
    }
    100.0 * diff_sq.sqrt() / ref_sq.sqrt().max(NORM_FLOOR)
}

/// Largest per-coordinate deviation.
pub fn max_abs_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
}

/// Differencing scheme for the numeric gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffScheme {
    Central,
    Forward,
}

/// Central finite differences of `loss_fn` at `point`, one coordinate at a
/// time: `(L(x + h·e) − L(x − h·e)) / 2h`.
pub fn finite_difference_grad<F>(loss_fn: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    numeric_grad(loss_fn, point, step, DiffScheme::Central)
}

/// Numeric gradient with a selectable scheme.
pub fn numeric_grad<F>(loss_fn: F, point: &[f64], step: f64, scheme: DiffScheme) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::invalid_argument("step must be positive"));
    }
    let mut x = point.to_vec();
    let base = match scheme {
        DiffScheme::Central => 0.0,
        DiffScheme::Forward => checked_loss(&loss_fn, &x)?,
    };
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let saved = x[i];
        let g = match scheme {
            DiffScheme::Central => {
                x[i] = saved + step;
                let plus = checked_loss(&loss_fn, &x)?;
                x[i] = saved - step;
                let minus = checked_loss(&loss_fn, &x)?;
                (plus - minus) / (2.0 * step)
            }
            DiffScheme::Forward => {
                x[i] = saved + step;
                let plus = checked_loss(&loss_fn, &x)?;
                (plus - base) / step
            }
        };
        x[i] = saved;
        grad.push(g);
    }
    Ok(grad)
}

/// Central difference of the loss along an arbitrary direction; the analytic
/// counterpart is `g · direction`.
pub fn directional_derivative<F>(
    loss_fn: F,
    point: &[f64],
    direction: &[f64],
    step: f64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::invalid_argument("step must be positive"));
    }
    if direction.len() != point.len() {
        return Err(Error::invalid_argument("direction length mismatch"));
    }
    let plus: Vec<f64> = point
        .iter()
        .zip(direction)
        .map(|(x, d)| x + step * d)
        .collect();
    let minus: Vec<f64> = point
        .iter()
        .zip(direction)
        .map(|(x, d)| x - step * d)
        .collect();
    Ok((checked_loss(&loss_fn, &plus)? - checked_loss(&loss_fn, &minus)?) / (2.0 * step))
}

fn checked_loss<F>(loss_fn: &F, x: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let v = loss_fn(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical("finite-difference loss evaluation", None))
    }
}

/// Which gradient the protocol checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    /// Gradient with respect to the input signals.
    Data,
    /// Gradient with respect to the full interpolated multipliers.
    Filters,
    /// Gradient with respect to the tracked weights (through the spline).
    Tracked,
}

impl GradTarget {
    pub fn name(&self) -> &'static str {
        match self {
            GradTarget::Data => "data",
            GradTarget::Filters => "filters",
            GradTarget::Tracked => "tracked",
        }
    }
}

/// Which backward formulation produced the analytic gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradVariant {
    Proposed,
    Naive,
}

impl GradVariant {
    pub fn name(&self) -> &'static str {
        match self {
            GradVariant::Proposed => "proposed",
            GradVariant::Naive => "naive",
        }
    }
}

/// Shared configuration of the derivative-check protocol.
#[derive(Clone)]
pub struct ProtocolSetup {
    pub basis: Arc<SpectralBasis>,
    pub samples: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub step: f64,
    pub scheme: DiffScheme,
}

/// Aggregated outcome of one (target, variant, tracked-count) cell.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub target: GradTarget,
    pub variant: GradVariant,
    pub tracked: usize,
    pub runs: usize,
    pub mean_pct_error: f64,
    pub std_pct_error: f64,
    /// Worst per-coordinate deviation across all runs.
    pub max_abs_error: f64,
    pub per_run_pct: Vec<f64>,
    /// Runs that failed numerically and were excluded from the statistics.
    pub failed_runs: usize,
}

impl GradCheckReport {
    fn from_runs(
        target: GradTarget,
        variant: GradVariant,
        tracked: usize,
        per_run_pct: Vec<f64>,
        max_abs_error: f64,
        failed_runs: usize,
    ) -> Self {
        let runs = per_run_pct.len();
        let mean = if runs > 0 {
            per_run_pct.iter().sum::<f64>() / runs as f64
        } else {
            f64::NAN
        };
        let std = if runs > 1 {
            let var = per_run_pct
                .iter()
                .map(|&e| (e - mean) * (e - mean))
                .sum::<f64>()
                / (runs - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        GradCheckReport {
            target,
            variant,
            tracked,
            runs,
            mean_pct_error: mean,
            std_pct_error: std,
            max_abs_error,
            per_run_pct,
            failed_runs,
        }
    }
}

struct RunOutcome {
    pct_proposed: f64,
    pct_naive: f64,
    max_abs_proposed: f64,
    max_abs_naive: f64,
}

/// One protocol run: build a random instance, differentiate the quadratic
/// loss numerically over the target tensor, and score both analytic
/// formulations against the shared numeric gradient.
fn check_single_run(
    setup: &ProtocolSetup,
    target: GradTarget,
    tracked: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RunOutcome> {
    let basis = &setup.basis;
    let n = basis.n();
    let (s_ct, i_ct, o_ct) = (setup.samples, setup.in_channels, setup.out_channels);
    let normal = StandardNormal;
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| normal.sample(rng)).collect() };

    let f = Array3::from_shape_vec((s_ct, i_ct, n), draw(s_ct * i_ct * n)).unwrap();
    let k_hat =
        Array3::from_shape_vec((i_ct, o_ct, tracked), draw(i_ct * o_ct * tracked)).unwrap();
    let t = Array3::from_shape_vec((s_ct, o_ct, n), draw(s_ct * o_ct * n)).unwrap();
    let interp = interp::build_interpolator(tracked, n)?;
    let k = interp::interpolate_filters(&interp, &k_hat.view())?;
    let bias = Array1::zeros(o_ct);

    let loss_of_y = |y: &Array3<f64>| -> f64 {
        y.iter()
            .zip(t.iter())
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum()
    };

    let y = conv::conv_forward(basis, &f.view(), &k.view(), &bias.view())?;
    let dy = &y - &t;

    let (analytic_proposed, analytic_naive, numeric): (Vec<f64>, Vec<f64>, Vec<f64>) = match target
    {
        GradTarget::Data => {
            let proposed = conv::conv_backward_data(basis, &dy.view(), &k.view())?;
            let naive = conv::naive_backward_data(basis, &dy.view(), &k.view())?;
            let flat: Vec<f64> = f.iter().cloned().collect();
            let loss_fn = |x: &[f64]| -> Result<f64> {
                let fx = Array3::from_shape_vec((s_ct, i_ct, n), x.to_vec()).unwrap();
                let y = conv::conv_forward(basis, &fx.view(), &k.view(), &bias.view())?;
                Ok(loss_of_y(&y))
            };
            let numeric = numeric_grad(loss_fn, &flat, setup.step, setup.scheme)?;
            (
                proposed.iter().cloned().collect(),
                naive.iter().cloned().collect(),
                numeric,
            )
        }
        GradTarget::Filters => {
            let proposed = conv::conv_backward_filters(basis, &dy.view(), &f.view())?;
            let naive = conv::naive_backward_filters(basis, &dy.view(), &f.view())?;
            let flat: Vec<f64> = k.iter().cloned().collect();
            let loss_fn = |x: &[f64]| -> Result<f64> {
                let kx = Array3::from_shape_vec((i_ct, o_ct, n), x.to_vec()).unwrap();
                let y = conv::conv_forward(basis, &f.view(), &kx.view(), &bias.view())?;
                Ok(loss_of_y(&y))
            };
            let numeric = numeric_grad(loss_fn, &flat, setup.step, setup.scheme)?;
            (
                proposed.iter().cloned().collect(),
                naive.iter().cloned().collect(),
                numeric,
            )
        }
        GradTarget::Tracked => {
            let dk_proposed = conv::conv_backward_filters(basis, &dy.view(), &f.view())?;
            let dk_naive = conv::naive_backward_filters(basis, &dy.view(), &f.view())?;
            let proposed = interp::project_filter_grads(&interp, &dk_proposed.view())?;
            let naive = interp::project_filter_grads(&interp, &dk_naive.view())?;
            let flat: Vec<f64> = k_hat.iter().cloned().collect();
            let loss_fn = |x: &[f64]| -> Result<f64> {
                let hx = Array3::from_shape_vec((i_ct, o_ct, tracked), x.to_vec()).unwrap();
                let kx = interp::interpolate_filters(&interp, &hx.view())?;
                let y = conv::conv_forward(basis, &f.view(), &kx.view(), &bias.view())?;
                Ok(loss_of_y(&y))
            };
            let numeric = numeric_grad(loss_fn, &flat, setup.step, setup.scheme)?;
            (
                proposed.iter().cloned().collect(),
                naive.iter().cloned().collect(),
                numeric,
            )
        }
    };

    Ok(RunOutcome {
        pct_proposed: percent_error(&analytic_proposed, &numeric),
        pct_naive: percent_error(&analytic_naive, &numeric),
        max_abs_proposed: max_abs_error(&analytic_proposed, &numeric),
        max_abs_naive: max_abs_error(&analytic_naive, &numeric),
    })
}

fn run_cell(
    setup: &ProtocolSetup,
    target: GradTarget,
    tracked: usize,
    runs: usize,
    seed: u64,
) -> (GradCheckReport, GradCheckReport) {
    // Independent runs execute in parallel; each owns a generator derived
    // from (seed, run index), so aggregation is order-independent.
    let outcomes: Vec<Result<RunOutcome>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            check_single_run(setup, target, tracked, &mut rng)
        })
        .collect();
    let mut proposed = Vec::with_capacity(runs);
    let mut naive = Vec::with_capacity(runs);
    let mut max_p: f64 = 0.0;
    let mut max_n: f64 = 0.0;
    let mut failures = 0;
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                proposed.push(o.pct_proposed);
                naive.push(o.pct_naive);
                max_p = max_p.max(o.max_abs_proposed);
                max_n = max_n.max(o.max_abs_naive);
            }
            Err(_) => failures += 1,
        }
    }
    (
        GradCheckReport::from_runs(
            target,
            GradVariant::Proposed,
            tracked,
            proposed,
            max_p,
            failures,
        ),
        GradCheckReport::from_runs(target, GradVariant::Naive, tracked, naive, max_n, failures),
    )
}

use rand::SeedableRng;

/// Runs the derivative-check protocol for one target and one variant over a
/// sweep of tracked-weight counts.
pub fn run_protocol(
    setup: &ProtocolSetup,
    target: GradTarget,
    variant: GradVariant,
    m_values: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<GradCheckReport>> {
    if runs == 0 {
        return Err(Error::invalid_argument("runs must be positive"));
    }
    let mut reports = Vec::new();
    for &m in m_values {
        if m < 1 || m > setup.basis.n() {
            return Err(Error::invalid_argument(format!(
                "tracked count {m} out of range for basis size {}",
                setup.basis.n()
            )));
        }
        let (p, n) = run_cell(setup, target, m, runs, seed);
        reports.push(match variant {
            GradVariant::Proposed => p,
            GradVariant::Naive => n,
        });
    }
    Ok(reports)
}

/// Side-by-side comparison: both formulations of every requested target are
/// scored on bit-identical instances (shared per-run seeds).
pub fn compare_variants(
    setup: &ProtocolSetup,
    targets: &[GradTarget],
    m_values: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<GradCheckReport>> {
    if runs == 0 {
        return Err(Error::invalid_argument("runs must be positive"));
    }
    let mut reports = Vec::new();
    for &target in targets {
        for &m in m_values {
            if m < 1 || m > setup.basis.n() {
                return Err(Error::invalid_argument(format!(
                    "tracked count {m} out of range for basis size {}",
                    setup.basis.n()
                )));
            }
            let (p, n) = run_cell(setup, target, m, runs, seed);
            reports.push(p);
            reports.push(n);
        }
    }
    Ok(reports)
}
