//! Box-constrained derivative-free search (Nelder-Mead) and damped
//! Gauss-Newton least squares with finite-difference Jacobians. Shared by
//! the WLS calibrator and the GP hyperparameter searches.

/// Finite-difference step per coordinate: `max(1e-6, 1e-6 * |x|)`.
pub(crate) fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

pub(crate) fn clamp_to_box(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SearchResult {
    pub x: Vec<f64>,
    pub evals: usize,
    pub iterations: usize,
}

/// Nelder-Mead with candidates clamped into `[lo, hi]`.
///
/// Stops when the simplex f-spread falls below `ftol * (1 + |f_best|)`, the
/// simplex diameter falls below `xtol`, or the evaluation budget runs out.
pub(crate) fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_evals: usize,
    ftol: f64,
    xtol: f64,
) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut x0 = x0.to_vec();
    clamp_to_box(&mut x0, lo, hi);
    let f0 = eval(&x0, &mut evals);
    if max_evals <= 1 || dim == 0 {
        return SearchResult {
            x: x0,
            evals,
            iterations: 0,
        };
    }

    // Initial simplex: perturb each coordinate by 5% of the box width,
    // flipping direction when that would leave the box.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.clone(), f0));
    for i in 0..dim {
        if evals >= max_evals {
            break;
        }
        let width = hi[i] - lo[i];
        let mut step = 0.05 * width.max(1e-12);
        if x0[i] + step > hi[i] {
            step = -step;
        }
        let mut x = x0.clone();
        x[i] = (x[i] + step).clamp(lo[i], hi[i]);
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    while simplex.len() < dim + 1 {
        simplex.push(simplex[0].clone());
    }

    let mut iterations = 0usize;
    while evals < max_evals {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;

        let spread = (worst - best).abs();
        if spread <= ftol * (1.0 + best.abs()) {
            break;
        }
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter <= xtol {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for i in 0..dim {
                centroid[i] += x[i];
            }
        }
        for c in &mut centroid {
            *c /= dim as f64;
        }

        let blend = |alpha: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + alpha * (c - w))
                .collect();
            clamp_to_box(&mut x, lo, hi);
            x
        };

        let xr = blend(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            if evals < max_evals {
                let xe = blend(2.0);
                let fe = eval(&xe, &mut evals);
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else {
                simplex[dim] = (xr, fr);
            }
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let xc = blend(-0.5);
            let fc = if evals < max_evals {
                eval(&xc, &mut evals)
            } else {
                f64::INFINITY
            };
            if fc < simplex[dim].1 {
                simplex[dim] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].0.clone();
                for v in simplex[1..].iter_mut() {
                    for (vi, bi) in v.0.iter_mut().zip(&best_x) {
                        *vi = bi + 0.5 * (*vi - bi);
                    }
                    if evals >= max_evals {
                        break;
                    }
                    v.1 = eval(&v.0, &mut evals);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    SearchResult {
        x: simplex[0].0.clone(),
        evals,
        iterations,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LsqResult {
    pub x: Vec<f64>,
    pub sse: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt on a residual vector with central-difference
/// Jacobians, steps projected into `[lo, hi]`.
pub(crate) fn levenberg_marquardt<F>(
    residuals: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iters: usize,
    grad_tol_rel: f64,
    step_tol: f64,
) -> LsqResult
where
    F: Fn(&[f64], &mut Vec<f64>),
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    clamp_to_box(&mut x, lo, hi);

    let mut r = Vec::new();
    residuals(&x, &mut r);
    let n_res = r.len();
    let sse_of = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut sse = sse_of(&r);

    let mut lambda = 1e-3;
    let mut iterations = 0usize;
    let mut last_step = f64::INFINITY;

    let mut r_plus = vec![0.0; n_res];
    let mut r_minus = vec![0.0; n_res];
    let mut jac = vec![0.0; n_res * dim]; // column-major

    for _ in 0..max_iters {
        iterations += 1;

        // Central-difference Jacobian of the residual vector.
        for j in 0..dim {
            let h = fd_step(x[j]);
            let saved = x[j];
            x[j] = (saved + h).min(hi[j]);
            let h_up = x[j] - saved;
            residuals(&x, &mut r_plus);
            x[j] = (saved - h).max(lo[j]);
            let h_dn = saved - x[j];
            residuals(&x, &mut r_minus);
            x[j] = saved;
            let denom = h_up + h_dn;
            for i in 0..n_res {
                jac[j * n_res + i] = if denom > 0.0 {
                    (r_plus[i] - r_minus[i]) / denom
                } else {
                    0.0
                };
            }
        }

        // g = J^T r ; gradient of SSE is 2 g.
        let mut g = vec![0.0; dim];
        for j in 0..dim {
            let col = &jac[j * n_res..(j + 1) * n_res];
            g[j] = col.iter().zip(&r).map(|(a, b)| a * b).sum();
        }
        let grad_norm = 2.0 * g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= grad_tol_rel * (1.0 + sse.abs()) {
            break;
        }

        // Normal equations J^T J + lambda * diag(J^T J).
        let mut jtj = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in a..dim {
                let ca = &jac[a * n_res..(a + 1) * n_res];
                let cb = &jac[b * n_res..(b + 1) * n_res];
                let dot = ca.iter().zip(cb).map(|(p, q)| p * q).sum::<f64>();
                jtj[a * dim + b] = dot;
                jtj[b * dim + a] = dot;
            }
        }

        let mut improved = false;
        for _ in 0..8 {
            let mut a = nalgebra::DMatrix::from_fn(dim, dim, |i, j| jtj[i * dim + j]);
            for d in 0..dim {
                let diag = jtj[d * dim + d];
                a[(d, d)] = diag + lambda * diag.max(1e-12);
            }
            let rhs = nalgebra::DVector::from_fn(dim, |i, _| -g[i]);
            let Some(chol) = nalgebra::Cholesky::new(a) else {
                lambda *= 4.0;
                continue;
            };
            let delta = chol.solve(&rhs);
            let mut x_new = x.clone();
            for i in 0..dim {
                x_new[i] += delta[i];
            }
            clamp_to_box(&mut x_new, lo, hi);
            residuals(&x_new, &mut r_plus);
            let sse_new = sse_of(&r_plus);
            if sse_new < sse {
                last_step = x_new
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                x = x_new;
                std::mem::swap(&mut r, &mut r_plus);
                sse = sse_new;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }

        if !improved || last_step <= step_tol {
            break;
        }
    }

    LsqResult {
        x,
        sse,
        iterations,
    }
}
