//! Generalized linear model objectives (ridge, sparse logistic), partial
//! gradients computed from the token aggregate, the proximal step, smoothness
//! estimation, and the high-precision reference solvers that produce the
//! optimum used by the suboptimality metric.

use rand::Rng;

use crate::data::FeatureDataset;
use crate::linalg::{axpy, dot, norm2, Matrix};
use crate::rngstream::{child_stream, DOMAIN_SOLVER};
use crate::{Error, Result};

/// Iteration cap for the reference solvers.
pub const SOLVER_ITERATION_CAP: usize = 1_000_000;
/// Iteration cap for the power-iteration smoothness estimate.
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Loss selection: ridge regression or L1-regularized logistic regression.
///
/// The nonsmooth L1 weight is handled by the proximal step, never by the
/// gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlmSpec {
    /// `||X theta - y||^2 / 2 + alpha ||theta||^2 / 2`
    SquaredL2 { alpha: f64 },
    /// `sum_n [softplus(z_n) - y_n z_n] + beta ||theta||_1`, labels in {0,1}
    LogisticL1 { beta: f64 },
}

impl GlmSpec {
    pub fn validate(&self) -> Result<()> {
        let w = match self {
            GlmSpec::SquaredL2 { alpha } => alpha,
            GlmSpec::LogisticL1 { beta } => beta,
        };
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::InvalidInput(format!(
                "regularization weight {w} must be finite and nonnegative"
            )));
        }
        Ok(())
    }

    /// Weight of the L1 term handled by the prox (zero for ridge).
    pub fn l1_weight(&self) -> f64 {
        match self {
            GlmSpec::SquaredL2 { .. } => 0.0,
            GlmSpec::LogisticL1 { beta } => *beta,
        }
    }
}

/// Per-client parameter blocks plus the fusion block, which stays empty for
/// generalized linear models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    blocks: Vec<Vec<f64>>,
    fusion: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(block_dims: &[usize]) -> Self {
        ModelParams {
            blocks: block_dims.iter().map(|&d| vec![0.0; d]).collect(),
            fusion: Vec::new(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.blocks[k]
    }

    pub fn set_block(&mut self, k: usize, values: Vec<f64>) {
        debug_assert_eq!(self.blocks[k].len(), values.len());
        self.blocks[k] = values;
    }

    pub fn fusion(&self) -> &[f64] {
        &self.fusion
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Concatenate all blocks into one flat vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn from_flat(block_dims: &[usize], flat: &[f64]) -> Result<Self> {
        if block_dims.iter().sum::<usize>() != flat.len() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector of {} entries for dims {:?}",
                flat.len(),
                block_dims
            )));
        }
        let mut blocks = Vec::with_capacity(block_dims.len());
        let mut lo = 0;
        for &d in block_dims {
            blocks.push(flat[lo..lo + d].to_vec());
            lo += d;
        }
        Ok(ModelParams {
            blocks,
            fusion: Vec::new(),
        })
    }
}

/// Overflow-safe sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `ln(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    if z >= 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Gradient of the per-sample loss with respect to the aggregate `z`:
/// `z - y` for ridge, `sigmoid(z) - y` for logistic.
pub fn residual_grad(spec: &GlmSpec, z: &[f64], y_sub: &[f64]) -> Result<Vec<f64>> {
    if z.len() != y_sub.len() {
        return Err(Error::ShapeMismatch(format!(
            "aggregate length {} vs {} labels",
            z.len(),
            y_sub.len()
        )));
    }
    Ok(match spec {
        GlmSpec::SquaredL2 { .. } => z.iter().zip(y_sub).map(|(a, b)| a - b).collect(),
        GlmSpec::LogisticL1 { .. } => z
            .iter()
            .zip(y_sub)
            .map(|(&zi, &yi)| {
                // Exact 0/1 labels get cancellation-free branches: s(z) - 1
                // is -s(-z), which stays accurate deep in the tails.
                if yi == 1.0 {
                    -sigmoid(-zi)
                } else if yi == 0.0 {
                    sigmoid(zi)
                } else {
                    sigmoid(zi) - yi
                }
            })
            .collect(),
    })
}

/// Block-`k` gradient of the smooth part, computed from the token aggregate:
/// `loss_scale * Xk^T residual_grad(z)` plus `alpha * theta_k` for ridge.
///
/// `loss_scale` is `N/B` for mini-batches so the stochastic gradient stays
/// unbiased; the regularizer term is never scaled.
pub fn partial_gradient(
    spec: &GlmSpec,
    xk: &Matrix,
    z: &[f64],
    theta_k: &[f64],
    y_sub: &[f64],
    loss_scale: f64,
) -> Result<Vec<f64>> {
    if xk.rows() != z.len() {
        return Err(Error::ShapeMismatch(format!(
            "block has {} rows, aggregate has {}",
            xk.rows(),
            z.len()
        )));
    }
    if xk.cols() != theta_k.len() {
        return Err(Error::ShapeMismatch(format!(
            "block has {} cols, params have {}",
            xk.cols(),
            theta_k.len()
        )));
    }
    let resid = residual_grad(spec, z, y_sub)?;
    let mut grad = xk.matvec_t(&resid)?;
    if loss_scale != 1.0 {
        for g in &mut grad {
            *g *= loss_scale;
        }
    }
    if let GlmSpec::SquaredL2 { alpha } = spec {
        axpy(*alpha, theta_k, &mut grad);
    }
    Ok(grad)
}

/// Plain coordinate-descent step `theta - eta * grad`.
pub fn cd_step(theta_k: &[f64], grad_k: &[f64], eta: f64) -> Vec<f64> {
    debug_assert_eq!(theta_k.len(), grad_k.len());
    theta_k
        .iter()
        .zip(grad_k)
        .map(|(t, g)| t - eta * g)
        .collect()
}

/// Componentwise soft threshold `sign(v) * max(|v| - threshold, 0)`.
pub fn prox_l1(v: &[f64], threshold: f64) -> Vec<f64> {
    debug_assert!(threshold >= 0.0);
    v.iter()
        .map(|&x| x.signum() * (x.abs() - threshold).max(0.0))
        .collect()
}

fn aggregate(ds: &FeatureDataset, theta: &ModelParams) -> Result<Vec<f64>> {
    let mut z = vec![0.0; ds.num_samples()];
    for k in 0..ds.num_blocks() {
        let part = ds.block(k).matvec(theta.block(k))?;
        for (zi, pi) in z.iter_mut().zip(part) {
            *zi += pi;
        }
    }
    Ok(z)
}

/// Full-batch objective value, regularizer included. This is simulator-level
/// observability: no single client can evaluate the regularized objective.
pub fn evaluate(spec: &GlmSpec, ds: &FeatureDataset, theta: &ModelParams) -> Result<f64> {
    if theta.block_dims() != ds.block_dims() {
        return Err(Error::ShapeMismatch(
            "parameter blocks do not match dataset blocks".into(),
        ));
    }
    let z = aggregate(ds, theta)?;
    let y = ds.labels();
    Ok(match spec {
        GlmSpec::SquaredL2 { alpha } => {
            let fit: f64 = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0;
            let reg: f64 = theta.blocks.iter().flatten().map(|t| t * t).sum::<f64>();
            fit + alpha * reg / 2.0
        }
        GlmSpec::LogisticL1 { beta } => {
            let fit: f64 = z.iter().zip(y).map(|(zi, yi)| softplus(*zi) - yi * zi).sum();
            let reg: f64 = theta.blocks.iter().flatten().map(|t| t.abs()).sum();
            fit + beta * reg
        }
    })
}

/// Flat full-batch gradient of the smooth part (data fit plus the ridge
/// term); the L1 term is excluded.
pub fn full_gradient(spec: &GlmSpec, ds: &FeatureDataset, theta: &ModelParams) -> Result<Vec<f64>> {
    let z = aggregate(ds, theta)?;
    let resid = residual_grad(spec, &z, ds.labels())?;
    let mut flat = Vec::with_capacity(ds.num_features());
    for k in 0..ds.num_blocks() {
        let mut g = ds.block(k).matvec_t(&resid)?;
        if let GlmSpec::SquaredL2 { alpha } = spec {
            axpy(*alpha, theta.block(k), &mut g);
        }
        flat.extend(g);
    }
    Ok(flat)
}

/// Norm of the minimal-norm subgradient: for ridge this is the gradient norm,
/// for logistic+L1 each coordinate is shrunk by the attainable subgradient.
pub fn optimality_measure(spec: &GlmSpec, ds: &FeatureDataset, theta: &ModelParams) -> Result<f64> {
    let smooth = full_gradient(spec, ds, theta)?;
    let beta = spec.l1_weight();
    if beta == 0.0 {
        return Ok(norm2(&smooth));
    }
    let flat = theta.flatten();
    let reduced: Vec<f64> = smooth
        .iter()
        .zip(&flat)
        .map(|(&g, &t)| {
            if t != 0.0 {
                g + beta * t.signum()
            } else {
                g.signum() * (g.abs() - beta).max(0.0)
            }
        })
        .collect();
    Ok(norm2(&reduced))
}

/// Smoothness-constant estimate and its provenance.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessInfo {
    /// Upper curvature bound: `lambda_max(X^T X) + alpha` for ridge,
    /// `lambda_max(X^T X) / 4` for logistic.
    pub l: f64,
    pub iterations: usize,
    /// Final eigen-residual `||X^T X v - lambda v||` of the unit iterate.
    pub residual: f64,
}

/// Estimate the smoothness constant by power iteration on `X^T X`.
pub fn smoothness_constant(spec: &GlmSpec, ds: &FeatureDataset) -> Result<SmoothnessInfo> {
    let (lambda, iterations, residual) = gram_lambda_max(ds, 1e-8, POWER_ITERATION_CAP)?;
    let l = match spec {
        GlmSpec::SquaredL2 { alpha } => lambda + alpha,
        GlmSpec::LogisticL1 { .. } => lambda / 4.0,
    };
    if l <= 0.0 {
        return Err(Error::InvalidInput(
            "smoothness constant came out nonpositive; is the design matrix zero?".into(),
        ));
    }
    Ok(SmoothnessInfo {
        l,
        iterations,
        residual,
    })
}

/// Largest eigenvalue of `X^T X` via power iteration with a fixed seeded
/// start vector. Returns `(lambda, iterations, residual)`.
fn gram_lambda_max(ds: &FeatureDataset, tol: f64, cap: usize) -> Result<(f64, usize, f64)> {
    let d = ds.num_features();
    let mut rng = child_stream(0, DOMAIN_SOLVER, 0, 0);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
    let norm = norm2(&v);
    for x in &mut v {
        *x /= norm;
    }
    let gram_apply = |v: &[f64]| -> Result<Vec<f64>> {
        let theta = ModelParams::from_flat(ds.block_dims(), v)?;
        let z = aggregate(ds, &theta)?;
        let mut out = Vec::with_capacity(d);
        for k in 0..ds.num_blocks() {
            out.extend(ds.block(k).matvec_t(&z)?);
        }
        Ok(out)
    };
    let mut lambda = 0.0f64;
    for it in 1..=cap {
        let w = gram_apply(&v)?;
        let next_lambda = dot(&v, &w);
        let wnorm = norm2(&w);
        if wnorm == 0.0 {
            // X^T X v vanished: the matrix is zero on this vector; treat the
            // spectrum as zero.
            return Ok((0.0, it, 0.0));
        }
        let mut next = w.clone();
        for x in &mut next {
            *x /= wnorm;
        }
        let converged = (next_lambda - lambda).abs() <= tol * next_lambda.abs().max(1.0);
        lambda = next_lambda;
        v = next;
        if converged && it > 1 {
            let w = gram_apply(&v)?;
            let mut resid = w;
            axpy(-lambda, &v, &mut resid);
            return Ok((lambda, it, norm2(&resid)));
        }
    }
    Err(Error::PowerIteration(cap))
}

/// Output of [`solve_reference`].
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub theta: ModelParams,
    pub f_star: f64,
    /// Optimality certificate: final CG residual norm (ridge) or final
    /// proximal-gradient-mapping norm (logistic).
    pub certificate: f64,
    pub iterations: usize,
}

/// High-precision reference optimum: conjugate gradient on the ridge normal
/// equations, or accelerated proximal gradient for logistic+L1, run until the
/// optimality measure drops below `tol`.
pub fn solve_reference(spec: &GlmSpec, ds: &FeatureDataset, tol: f64) -> Result<ReferenceSolution> {
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    spec.validate()?;
    match spec {
        GlmSpec::SquaredL2 { alpha } => solve_ridge_cg(ds, *alpha, tol).map(|s| ReferenceSolution {
            f_star: evaluate(spec, ds, &s.theta).expect("shapes fixed"),
            ..s
        }),
        GlmSpec::LogisticL1 { beta } => {
            solve_logistic_fista(ds, *beta, tol).map(|s| ReferenceSolution {
                f_star: evaluate(spec, ds, &s.theta).expect("shapes fixed"),
                ..s
            })
        }
    }
}

fn solve_ridge_cg(ds: &FeatureDataset, alpha: f64, tol: f64) -> Result<ReferenceSolution> {
    let dims = ds.block_dims();
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let theta = ModelParams::from_flat(dims, v)?;
        let z = aggregate(ds, &theta)?;
        let mut out = Vec::with_capacity(v.len());
        for k in 0..ds.num_blocks() {
            out.extend(ds.block(k).matvec_t(&z)?);
        }
        axpy(alpha, v, &mut out);
        Ok(out)
    };
    let mut b = Vec::with_capacity(ds.num_features());
    for k in 0..ds.num_blocks() {
        b.extend(ds.block(k).matvec_t(ds.labels())?);
    }
    let stop = tol * (1.0 + norm2(&b));
    let mut x = vec![0.0; b.len()];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    while rs.sqrt() > stop {
        if iterations >= SOLVER_ITERATION_CAP {
            return Err(Error::IterationCap(SOLVER_ITERATION_CAP));
        }
        let ap = apply(&p)?;
        let step = rs / dot(&p, &ap);
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        let rs_next = dot(&r, &r);
        let ratio = rs_next / rs;
        rs = rs_next;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + ratio * *pi;
        }
        iterations += 1;
    }
    Ok(ReferenceSolution {
        theta: ModelParams::from_flat(dims, &x)?,
        f_star: 0.0,
        certificate: rs.sqrt(),
        iterations,
    })
}

fn solve_logistic_fista(ds: &FeatureDataset, beta: f64, tol: f64) -> Result<ReferenceSolution> {
    let dims = ds.block_dims();
    let spec = GlmSpec::LogisticL1 { beta };
    let l = smoothness_constant(&spec, ds)?.l;
    let step = 1.0 / l;
    let grad = |flat: &[f64]| -> Result<Vec<f64>> {
        let theta = ModelParams::from_flat(dims, flat)?;
        full_gradient(&spec, ds, &theta)
    };
    let value = |flat: &[f64]| -> Result<f64> {
        let theta = ModelParams::from_flat(dims, flat)?;
        evaluate(&spec, ds, &theta)
    };
    let prox_step = |flat: &[f64], g: &[f64]| -> Vec<f64> {
        let moved: Vec<f64> = flat.iter().zip(g).map(|(x, gi)| x - step * gi).collect();
        prox_l1(&moved, step * beta)
    };
    let mapping_norm = |flat: &[f64], next: &[f64]| -> f64 {
        flat.iter()
            .zip(next)
            .map(|(x, nx)| ((x - nx) * l).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let d = ds.num_features();
    let mut x = vec![0.0; d];
    let mut v = x.clone();
    let mut momentum = 1.0f64;
    let mut f_prev = value(&x)?;
    for it in 1..=SOLVER_ITERATION_CAP {
        let g = grad(&v)?;
        let mut x_next = prox_step(&v, &g);
        // Gradient mapping at v: distance moved by the prox step, times L.
        let mut certificate = mapping_norm(&v, &x_next);
        if certificate <= tol {
            return Ok(ReferenceSolution {
                theta: ModelParams::from_flat(dims, &x_next)?,
                f_star: 0.0,
                certificate,
                iterations: it,
            });
        }
        let mut f_next = value(&x_next)?;
        if f_next > f_prev {
            // Momentum overshot: restart from x with a plain prox step,
            // accepting it even if rounding noise reports a tiny increase.
            momentum = 1.0;
            let gx = grad(&x)?;
            x_next = prox_step(&x, &gx);
            certificate = mapping_norm(&x, &x_next);
            if certificate <= tol {
                return Ok(ReferenceSolution {
                    theta: ModelParams::from_flat(dims, &x_next)?,
                    f_star: 0.0,
                    certificate,
                    iterations: it,
                });
            }
            f_next = value(&x_next)?;
        }
        let momentum_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let blend = (momentum - 1.0) / momentum_next;
        v = x_next
            .iter()
            .zip(&x)
            .map(|(nx, ox)| nx + blend * (nx - ox))
            .collect();
        x = x_next;
        f_prev = f_next;
        momentum = momentum_next;
    }
    Err(Error::IterationCap(SOLVER_ITERATION_CAP))
}
