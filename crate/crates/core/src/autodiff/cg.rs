use super::AutodiffError;

/// Outcome of a damped Krylov solve of `(H + damping I) x = rhs`.
#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual norm `||(H + damping I) x - rhs||` (recurrence estimate).
    pub residual_norm: f64,
    pub converged: bool,
    /// Residual norm after each iteration, starting with `||rhs||`.
    pub residual_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `(H + damping I) x = rhs` given only products `v -> H v`.
///
/// Uses the conjugate-residual variant of conjugate gradients: one operator
/// application per iteration like plain CG, but each iterate minimizes the
/// residual norm over the Krylov space, so the residual history is
/// non-increasing on symmetric positive definite systems.
///
/// Stops when `||r|| <= tol * ||rhs||` or after `max_iter` iterations. A
/// non-finite intermediate aborts with the iteration index.
pub fn cg_solve<F>(
    mut hvp: F,
    rhs: &[f64],
    damping: f64,
    max_iter: usize,
    tol: f64,
) -> Result<CgSolution, AutodiffError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, AutodiffError>,
{
    if !(damping >= 0.0) || !damping.is_finite() {
        return Err(AutodiffError::InvalidArgument(format!(
            "damping must be a finite non-negative number, got {damping}"
        )));
    }
    let n = rhs.len();
    let mut apply = |v: &[f64], iteration: usize| -> Result<Vec<f64>, AutodiffError> {
        let mut out = hvp(v)?;
        if out.len() != n {
            return Err(AutodiffError::LengthMismatch {
                expected: n,
                actual: out.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += damping * x;
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::SolverNonFinite { iteration });
        }
        Ok(out)
    };

    let rhs_norm = norm(rhs);
    let target = tol * rhs_norm;
    let mut x = vec![0.0; n];
    let mut history = vec![rhs_norm];
    if rhs_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual_norm: 0.0,
            converged: true,
            residual_history: history,
        });
    }

    let mut r = rhs.to_vec();
    let mut ar = apply(&r, 0)?;
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut r_ar = dot(&r, &ar);
    let mut residual = rhs_norm;

    for it in 1..=max_iter {
        let ap_ap = dot(&ap, &ap);
        if !(r_ar > 0.0) || !(ap_ap > 0.0) {
            // lost positive definiteness or exact breakdown
            break;
        }
        let alpha = r_ar / ap_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = norm(&r);
        if !residual.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::SolverNonFinite { iteration: it });
        }
        history.push(residual);
        if residual <= target {
            return Ok(CgSolution {
                x,
                iterations: it,
                residual_norm: residual,
                converged: true,
                residual_history: history,
            });
        }
        ar = apply(&r, it)?;
        let r_ar_next = dot(&r, &ar);
        let beta = r_ar_next / r_ar;
        r_ar = r_ar_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
            ap[i] = ar[i] + beta * ap[i];
        }
    }

    Ok(CgSolution {
        x,
        iterations: history.len() - 1,
        residual_norm: residual,
        converged: residual <= target,
        residual_history: history,
    })
}
