//! The token state machine.
//!
//! A token carries the aggregate `z = sum_k X_k theta_k` restricted to the
//! active sample set, plus the fusion parameters (empty for GLMs). The
//! aggregate is kept consistent with the model by exact additive updates as
//! blocks change, and can always be rebuilt from scratch server-side.

use crate::data::{BatchIndices, FeatureDataset};
use crate::linalg::{norm2, Matrix};
use crate::objective::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    z: Vec<f64>,
    theta0: Vec<f64>,
    active: BatchIndices,
}

impl Token {
    /// Zero aggregate over `m` active samples; consistent iff every model
    /// block is zero, which the engine enforces at run start. Starting from
    /// any other model requires [`recompute`].
    pub fn init_zero(m: usize) -> Result<Token> {
        if m == 0 {
            return Err(Error::InvalidInput("token needs at least one sample".into()));
        }
        Ok(Token {
            z: vec![0.0; m],
            theta0: Vec::new(),
            active: BatchIndices::full(m),
        })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn active_samples(&self) -> &BatchIndices {
        &self.active
    }

    /// Shift the aggregate by `Xk_rows (theta_new - theta_old)` after a block
    /// update; additivity keeps the token consistent by induction.
    pub fn apply_block_delta(
        &mut self,
        xk_rows: &Matrix,
        theta_old: &[f64],
        theta_new: &[f64],
    ) -> Result<()> {
        if xk_rows.rows() != self.z.len() {
            return Err(Error::ShapeMismatch(format!(
                "block rows {} vs aggregate length {}",
                xk_rows.rows(),
                self.z.len()
            )));
        }
        if theta_old.len() != xk_rows.cols() || theta_new.len() != xk_rows.cols() {
            return Err(Error::ShapeMismatch(format!(
                "block has {} cols, params have {}/{}",
                xk_rows.cols(),
                theta_old.len(),
                theta_new.len()
            )));
        }
        let delta: Vec<f64> = theta_new
            .iter()
            .zip(theta_old)
            .map(|(n, o)| n - o)
            .collect();
        let shift = xk_rows.matvec(&delta)?;
        for (zi, si) in self.z.iter_mut().zip(shift) {
            *zi += si;
        }
        Ok(())
    }
}

/// Rebuild the aggregate from scratch over the batch rows; this is the
/// server-side ground truth the consistency invariant compares against.
pub fn recompute(ds: &FeatureDataset, theta: &ModelParams, batch: &BatchIndices) -> Result<Token> {
    if theta.block_dims() != ds.block_dims() {
        return Err(Error::ShapeMismatch(
            "parameter blocks do not match dataset blocks".into(),
        ));
    }
    if batch.num_samples() != ds.num_samples() {
        return Err(Error::ShapeMismatch(format!(
            "batch drawn from {} samples, dataset has {}",
            batch.num_samples(),
            ds.num_samples()
        )));
    }
    let mut z = vec![0.0; batch.len()];
    for k in 0..ds.num_blocks() {
        let xk = ds.block(k);
        let tk = theta.block(k);
        if batch.is_full() {
            for (zi, vi) in z.iter_mut().zip(xk.matvec(tk)?) {
                *zi += vi;
            }
        } else {
            for (zi, &row) in z.iter_mut().zip(batch.indices()) {
                *zi += crate::linalg::dot(xk.row(row), tk);
            }
        }
    }
    Ok(Token {
        z,
        theta0: theta.fusion().to_vec(),
        active: batch.clone(),
    })
}

/// Componentwise mean of the aggregates (and of the fusion block when
/// nonempty). All tokens must share the same active sample set.
pub fn average(tokens: &[Token]) -> Result<Token> {
    let first = tokens
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot average zero tokens".into()))?;
    if tokens
        .iter()
        .any(|t| t.active != first.active || t.z.len() != first.z.len())
    {
        return Err(Error::MismatchedActiveSets);
    }
    let gamma = tokens.len() as f64;
    let mut z = vec![0.0; first.z.len()];
    for t in tokens {
        for (zi, &v) in z.iter_mut().zip(&t.z) {
            *zi += v;
        }
    }
    for zi in &mut z {
        *zi /= gamma;
    }
    let mut theta0 = vec![0.0; first.theta0.len()];
    for t in tokens {
        for (oi, &v) in theta0.iter_mut().zip(&t.theta0) {
            *oi += v;
        }
    }
    for oi in &mut theta0 {
        *oi /= gamma;
    }
    Ok(Token {
        z,
        theta0,
        active: first.active.clone(),
    })
}

/// Relative distance between the token aggregate and a from-scratch
/// recomputation (unit floor on the denominator).
pub fn consistency_error(
    tok: &Token,
    ds: &FeatureDataset,
    theta: &ModelParams,
) -> Result<f64> {
    let truth = recompute(ds, theta, &tok.active)?;
    let diff: Vec<f64> = tok
        .z
        .iter()
        .zip(&truth.z)
        .map(|(a, b)| a - b)
        .collect();
    Ok(norm2(&diff) / norm2(&truth.z).max(1.0))
}
