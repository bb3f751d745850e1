//! Shared oracle machinery for integration tests: independent brute-force
//! solvers the transport implementation is checked against.
//!
//! Everything here works on the primal transport plan directly (softmax-
//! parametrized rows, gradient descent, augmented Lagrangians, exhaustive
//! LP vertex enumeration) and never touches the dual block-descent code
//! paths under test.

#![allow(dead_code)]

/// Quadratic tap-distance cost matrix.
pub fn cost_matrix(n: usize, cost_scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            (0..n)
                .map(|l| {
                    let d = cost_scale * (k as f64 - l as f64);
                    d * d
                })
                .collect()
        })
        .collect()
}

/// Entropy contribution `m ln m - m + 1` summed over every entry of an
/// n x n plan whose rows with zero mass are implicit zeros.
pub fn plan_entropy(plan: &[Vec<f64>], n: usize) -> f64 {
    let mut acc = 0.0;
    let mut counted = 0usize;
    for row in plan {
        for &m in row {
            counted += 1;
            if m <= 0.0 {
                acc += 1.0;
            } else {
                acc += m * m.ln() - m + 1.0;
            }
        }
    }
    acc + (n * n - counted) as f64
}

pub fn plan_cost(plan: &[Vec<f64>], cost: &[Vec<f64>]) -> f64 {
    plan.iter()
        .zip(cost.iter())
        .map(|(pr, cr)| pr.iter().zip(cr.iter()).map(|(m, c)| m * c).sum::<f64>())
        .sum()
}

pub fn col_sums(plan: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n];
    for row in plan {
        for (l, &m) in row.iter().enumerate() {
            c[l] += m;
        }
    }
    c
}

/// Minimizes `sum cost_w[k][l]*M[k][l] + ent_w*D(M) + col_pen(M^T 1)` over
/// plans whose row sums equal `row_mass`, by gradient descent with
/// backtracking on a per-row softmax parametrization. Rows with zero mass
/// stay identically zero.
///
/// `col_pen_grad` writes the derivative of the column penalty with respect
/// to each column sum.
pub fn minimize_over_plans(
    row_mass: &[f64],
    cost_w: &[Vec<f64>],
    ent_w: f64,
    col_pen: &dyn Fn(&[f64]) -> f64,
    col_pen_grad: &dyn Fn(&[f64], &mut [f64]),
    max_iters: usize,
) -> Vec<Vec<f64>> {
    minimize_over_plans_warm(
        row_mass, cost_w, ent_w, col_pen, col_pen_grad, max_iters, None,
    )
    .0
}

/// As [`minimize_over_plans`], with optional initial logits; returns the
/// plan and the final logits for warm-starting an outer loop.
#[allow(clippy::type_complexity)]
pub fn minimize_over_plans_warm(
    row_mass: &[f64],
    cost_w: &[Vec<f64>],
    ent_w: f64,
    col_pen: &dyn Fn(&[f64]) -> f64,
    col_pen_grad: &dyn Fn(&[f64], &mut [f64]),
    max_iters: usize,
    init_logits: Option<Vec<Vec<f64>>>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = row_mass.len();
    let active: Vec<usize> = (0..n).filter(|&k| row_mass[k] > 0.0).collect();
    let mut logits = match init_logits {
        Some(z) if z.len() == active.len() => z,
        _ => vec![vec![0.0f64; n]; active.len()],
    };

    let realize = |logits: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut plan = vec![vec![0.0; n]; n];
        for (ai, &k) in active.iter().enumerate() {
            let z = &logits[ai];
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
            for l in 0..n {
                plan[k][l] = row_mass[k] * (z[l] - zmax).exp() / sum;
            }
        }
        plan
    };

    let objective = |logits: &Vec<Vec<f64>>| -> f64 {
        let plan = realize(logits);
        let c = col_sums(&plan, n);
        plan_cost(&plan, cost_w) + ent_w * plan_entropy(&plan, n) + col_pen(&c)
    };

    let mut f = objective(&logits);
    let mut step = 0.1;
    let mut grad = vec![vec![0.0f64; n]; active.len()];
    let mut pen_grad = vec![0.0f64; n];
    for _ in 0..max_iters {
        let plan = realize(&logits);
        let c = col_sums(&plan, n);
        col_pen_grad(&c, &mut pen_grad);
        // dF/dM, then chain through the softmax Jacobian row by row.
        let mut gnorm = 0.0f64;
        for (ai, &k) in active.iter().enumerate() {
            let mut row_dot = 0.0;
            let mut dm = vec![0.0f64; n];
            for l in 0..n {
                let m = plan[k][l].max(1e-300);
                dm[l] = cost_w[k][l] + ent_w * m.ln() + pen_grad[l];
                row_dot += plan[k][l] / row_mass[k] * dm[l];
            }
            for l in 0..n {
                grad[ai][l] = plan[k][l] * (dm[l] - row_dot);
                gnorm = gnorm.max(grad[ai][l].abs());
            }
        }
        if gnorm < 1e-12 {
            break;
        }
        // Backtracking line search.
        let mut improved = false;
        while step > 1e-18 {
            let trial: Vec<Vec<f64>> = logits
                .iter()
                .zip(grad.iter())
                .map(|(zr, gr)| zr.iter().zip(gr.iter()).map(|(z, g)| z - step * g).collect())
                .collect();
            let ft = objective(&trial);
            if ft < f {
                logits = trial;
                f = ft;
                improved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let plan = realize(&logits);
    (plan, logits)
}

/// Brute-force proximal oracle: jointly minimizes
/// `theta*<C,M> + theta*eps*D(M) + 1/2||u - h||^2` over plans with row sums
/// `h0_sq` and the column constraint `M^T 1 >= h^2`, returning the optimal
/// `h`. The inner `h` given column sums has the closed form
/// `h_k = sign(u_k) * min(|u_k|, sqrt(c_k))`, which turns the column
/// constraint into a smooth penalty.
pub struct ProxOracleResult {
    pub h: Vec<f64>,
    pub plan: Vec<Vec<f64>>,
    pub objective: f64,
}

pub fn prox_oracle(
    u: &[f64],
    h0: &[f64],
    theta: f64,
    eps: f64,
    cost_scale: f64,
    max_iters: usize,
) -> ProxOracleResult {
    let n = u.len();
    let cost = cost_matrix(n, cost_scale);
    let cost_w: Vec<Vec<f64>> = cost
        .iter()
        .map(|row| row.iter().map(|c| theta * c).collect())
        .collect();
    let h0_sq: Vec<f64> = h0.iter().map(|v| v * v).collect();
    let u_abs: Vec<f64> = u.iter().map(|v| v.abs()).collect();

    let col_pen = {
        let u_abs = u_abs.clone();
        move |c: &[f64]| -> f64 {
            c.iter()
                .zip(u_abs.iter())
                .map(|(&ci, &ua)| {
                    let r = ci.max(0.0).sqrt();
                    if r < ua {
                        0.5 * (ua - r) * (ua - r)
                    } else {
                        0.0
                    }
                })
                .sum()
        }
    };
    let col_pen_grad = {
        let u_abs = u_abs.clone();
        move |c: &[f64], out: &mut [f64]| {
            for l in 0..c.len() {
                let r = c[l].max(1e-300).sqrt();
                out[l] = if r < u_abs[l] {
                    0.5 * (1.0 - u_abs[l] / r)
                } else {
                    0.0
                };
            }
        }
    };

    let plan = minimize_over_plans(
        &h0_sq,
        &cost_w,
        theta * eps,
        &col_pen,
        &col_pen_grad,
        max_iters,
    );
    let c = col_sums(&plan, n);
    let h: Vec<f64> = u
        .iter()
        .zip(c.iter())
        .map(|(&ui, &ci)| ui.signum() * ui.abs().min(ci.max(0.0).sqrt()))
        .collect();
    let objective = plan_cost(&plan, &cost_w)
        + theta * eps * plan_entropy(&plan, n)
        + 0.5
            * h.iter()
                .zip(u.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
    ProxOracleResult { h, plan, objective }
}

/// Augmented-Lagrangian oracle for the transport regularizer value
/// `S(h, h0)`: minimizes `<C,M> + eps*D(M)` over row-fixed plans subject to
/// column sums covering `h^2`, by outer multiplier updates around the same
/// softmax descent.
pub fn s_value_oracle(
    h: &[f64],
    h0: &[f64],
    eps: f64,
    cost_scale: f64,
    inner_iters: usize,
) -> f64 {
    let n = h.len();
    let cost = cost_matrix(n, cost_scale);
    let h_sq: Vec<f64> = h.iter().map(|v| v * v).collect();
    let h0_sq: Vec<f64> = h0.iter().map(|v| v * v).collect();
    let mut rho = 10.0f64;
    let mut nu = vec![0.0f64; n];
    let mut plan = Vec::new();
    let mut logits = None;
    for round in 0..40 {
        let col_pen = {
            let h_sq = h_sq.clone();
            let nu = nu.clone();
            move |c: &[f64]| -> f64 {
                c.iter()
                    .zip(h_sq.iter())
                    .zip(nu.iter())
                    .map(|((ci, hs), nk)| {
                        let t = (nk / rho + hs - ci).max(0.0);
                        0.5 * rho * (t * t - (nk / rho) * (nk / rho))
                    })
                    .sum()
            }
        };
        let col_pen_grad = {
            let h_sq = h_sq.clone();
            let nu = nu.clone();
            move |c: &[f64], out: &mut [f64]| {
                for l in 0..c.len() {
                    out[l] = -(nu[l] + rho * (h_sq[l] - c[l])).max(0.0);
                }
            }
        };
        let (p, z) = minimize_over_plans_warm(
            &h0_sq,
            &cost,
            eps,
            &col_pen,
            &col_pen_grad,
            inner_iters,
            logits.take(),
        );
        plan = p;
        logits = Some(z);
        let c = col_sums(&plan, n);
        let mut max_violation = 0.0f64;
        for l in 0..n {
            let v = (h_sq[l] - c[l]).max(0.0);
            max_violation = max_violation.max(v);
            nu[l] = (nu[l] + rho * (h_sq[l] - c[l])).max(0.0);
        }
        if max_violation < 1e-12 && round > 2 {
            break;
        }
        if round % 4 == 3 {
            rho = (rho * 4.0).min(1e5);
        }
    }
    plan_cost(&plan, &cost) + eps * plan_entropy(&plan, n)
}

/// Exact minimum of `<C, M>` over `M >= 0` with `M 1 = a` and `M^T 1 >= b`,
/// by exhaustive vertex enumeration of the slack-form polytope. Only
/// sensible for tiny n.
pub fn transport_lp_oracle(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> Option<f64> {
    let n = a.len();
    let n_vars = n * n + n; // plan entries then column slacks
    let n_cons = 2 * n; // row equalities then column equalities with slack
    // Constraint matrix A x = rhs.
    let mut amat = vec![vec![0.0f64; n_vars]; n_cons];
    let mut rhs = vec![0.0f64; n_cons];
    for k in 0..n {
        for l in 0..n {
            amat[k][k * n + l] = 1.0;
        }
        rhs[k] = a[k];
    }
    for l in 0..n {
        for k in 0..n {
            amat[n + l][k * n + l] = 1.0;
        }
        amat[n + l][n * n + l] = -1.0;
        rhs[n + l] = b[l];
    }

    let mut best: Option<f64> = None;
    let mut basis = vec![0usize; n_cons];
    enumerate_bases(n_vars, n_cons, 0, 0, &mut basis, &mut |basis| {
        // Solve the 2n x 2n basic system by Gaussian elimination.
        let mut m: Vec<Vec<f64>> = (0..n_cons)
            .map(|r| {
                let mut row: Vec<f64> = basis.iter().map(|&c| amat[r][c]).collect();
                row.push(rhs[r]);
                row
            })
            .collect();
        for col in 0..n_cons {
            let pivot = (col..n_cons)
                .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
                .unwrap();
            if m[pivot][col].abs() < 1e-11 {
                return;
            }
            m.swap(col, pivot);
            for r in 0..n_cons {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for cc in col..=n_cons {
                        m[r][cc] -= f * m[col][cc];
                    }
                }
            }
        }
        let mut value = 0.0;
        for (i, &var) in basis.iter().enumerate() {
            let x = m[i][n_cons] / m[i][i];
            if x < -1e-9 {
                return;
            }
            if var < n * n {
                value += cost[var / n][var % n] * x.max(0.0);
            }
        }
        best = Some(match best {
            None => value,
            Some(b) => b.min(value),
        });
    });
    best
}

fn enumerate_bases(
    n_vars: usize,
    k: usize,
    start: usize,
    depth: usize,
    basis: &mut Vec<usize>,
    visit: &mut dyn FnMut(&Vec<usize>),
) {
    if depth == k {
        visit(basis);
        return;
    }
    for v in start..n_vars {
        basis[depth] = v;
        enumerate_bases(n_vars, k, v + 1, depth + 1, basis, visit);
    }
}

/// Dense Cholesky solve of `G x = b` for symmetric positive definite G;
/// test-grade least-squares oracle.
pub fn cholesky_solve(g: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut l = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = g[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                l[i][j] = s.max(1e-300).sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}
