use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::CostMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UotConfig {
    /// Entropic regularisation.
    pub epsilon: f64,
    /// Strength of the KL penalty on both marginals.
    pub rho: f64,
    pub max_iterations: usize,
    /// Bound on the max absolute change of log-scalings.
    pub tolerance: f64,
}

impl Default for UotConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            rho: 1.0,
            max_iterations: 1000,
            tolerance: 1e-6,
        }
    }
}

impl UotConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.epsilon.is_finite()
            && self.rho > 0.0
            && self.rho.is_finite()
            && self.tolerance > 0.0
            && self.max_iterations >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid solver config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub scale_id: usize,
    pub plan: Array2<f64>,
    pub total_mass: f64,
    /// `π 1 − a`.
    pub row_residuals: Vec<f64>,
    /// `πᵀ 1 − b`.
    pub col_residuals: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl TransportPlan {
    pub fn shape(&self) -> (usize, usize) {
        self.plan.dim()
    }

    fn from_plan(
        scale_id: usize,
        plan: Array2<f64>,
        a: &[f64],
        b: &[f64],
        iterations_used: usize,
        converged: bool,
    ) -> Self {
        let (n, m) = plan.dim();
        let mut row_residuals = vec![0.0; n];
        let mut col_residuals = vec![0.0; m];
        let mut total_mass = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..m {
                s += plan[[i, j]];
                total_mass += plan[[i, j]];
            }
            row_residuals[i] = s - a[i];
        }
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..n {
                s += plan[[i, j]];
            }
            col_residuals[j] = s - b[j];
        }
        Self {
            scale_id,
            plan,
            total_mass,
            row_residuals,
            col_residuals,
            iterations_used,
            converged,
        }
    }
}

/// Dual potentials in cost units: `u = exp(f/ε)`, `v = exp(g/ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Unbalanced entropic transport by log-domain scaling iterations:
/// `u ← (a ⊘ K v)^κ`, `v ← (b ⊘ Kᵀ u)^κ` with `κ = ρ / (ρ + ε)` and the Gibbs
/// kernel `K = diag(a) exp(−c/ε) diag(b)` taken relative to the product of
/// the marginals, restricted to the mask. The plan is `diag(u) K diag(v)`.
pub fn solve_unbalanced(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &UotConfig,
) -> Result<TransportPlan> {
    solve_unbalanced_warm(cost, a, b, cfg, None).map(|(p, _)| p)
}

/// [`solve_unbalanced`] starting from given potentials (e.g. the solution
/// at a larger ε), also returning the final potentials.
pub fn solve_unbalanced_warm(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &UotConfig,
    warm: Option<&DualPotentials>,
) -> Result<(TransportPlan, DualPotentials)> {
    cfg.validate()?;
    let (n, m) = cost.shape();
    validate_inputs(cost, a, b)?;
    if let Some(w) = warm {
        if w.f.len() != n || w.g.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "warm start {}x{} vs cost {n}x{m}",
                w.f.len(),
                w.g.len()
            )));
        }
    }

    let c: Vec<f64> = cost.values.iter().copied().collect();
    let mask: Vec<bool> = cost.mask.iter().copied().collect();
    let transposed = prefer_transposed(&c, &mask, a, b, n, m);

    let problem = if transposed {
        Problem {
            n: m,
            m: n,
            c: transpose(&c, n, m),
            mask: transpose(&mask, n, m),
            a: b.to_vec(),
            b: a.to_vec(),
        }
    } else {
        Problem {
            n,
            m,
            c,
            mask,
            a: a.to_vec(),
            b: b.to_vec(),
        }
    };
    let warm = warm.map(|w| {
        if transposed {
            (w.g.clone(), w.f.clone())
        } else {
            (w.f.clone(), w.g.clone())
        }
    });
    let sol = problem.solve(cfg, warm);

    let (plan, row_res, col_res, pots) = if transposed {
        (
            sol.plan.t().to_owned(),
            sol.col_residuals,
            sol.row_residuals,
            DualPotentials { f: sol.g, g: sol.f },
        )
    } else {
        (
            sol.plan,
            sol.row_residuals,
            sol.col_residuals,
            DualPotentials { f: sol.f, g: sol.g },
        )
    };
    Ok((
        TransportPlan {
            scale_id: cost.scale_id,
            plan,
            total_mass: sol.total_mass,
            row_residuals: row_res,
            col_residuals: col_res,
            iterations_used: sol.iterations,
            converged: sol.converged,
        },
        pots,
    ))
}

/// Solves on the admissible support, then rescales so the total mass matches
/// an unmasked solve of the same problem. A fully admissible mask reduces to
/// [`solve_unbalanced`].
pub fn solve_masked(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &UotConfig,
) -> Result<TransportPlan> {
    let masked = solve_unbalanced(cost, a, b, cfg)?;
    if cost.mask.iter().all(|m| *m) {
        return Ok(masked);
    }
    let open = CostMatrix::new(cost.scale_id, cost.values.clone());
    let reference = solve_unbalanced(&open, a, b, cfg)?;
    if !(masked.total_mass > 0.0) {
        return Ok(masked);
    }
    let scale = reference.total_mass / masked.total_mass;
    let plan = masked.plan.mapv(|v| v * scale);
    Ok(TransportPlan::from_plan(
        cost.scale_id,
        plan,
        a,
        b,
        masked.iterations_used.max(reference.iterations_used),
        masked.converged && reference.converged,
    ))
}

fn validate_inputs(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<()> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("cost matrix is empty".into()));
    }
    if a.len() != n || b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "cost {n}x{m} vs marginals {} and {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(v) = a.iter().chain(b).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidMarginals(format!(
            "marginal weights must be positive and finite, found {v}"
        )));
    }
    if let Some(v) = cost.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidCost(format!("non-finite cost entry {v}")));
    }
    if let Some(v) = cost.values.iter().find(|v| **v < 0.0) {
        return Err(Error::InvalidCost(format!("negative cost entry {v}")));
    }
    if !cost.mask.iter().any(|m| *m) {
        return Err(Error::EmptyAdmissibleSet);
    }
    Ok(())
}

fn transpose<T: Copy>(x: &[T], n: usize, m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..m {
        for i in 0..n {
            out.push(x[i * m + j]);
        }
    }
    out
}

/// Canonical orientation: fewer rows first, then the lexicographically
/// smaller of (a, b, c, mask) and its transpose. The solver only ever sees the
/// canonical problem, so transposed inputs give bit-identical transposed plans.
fn prefer_transposed(c: &[f64], mask: &[bool], a: &[f64], b: &[f64], n: usize, m: usize) -> bool {
    if n != m {
        return n > m;
    }
    let cmp_f = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    let mut ord = cmp_f(a, b);
    let mut k = 0;
    while ord == Ordering::Equal && k < n * m {
        let (i, j) = (k / m, k % m);
        ord = c[i * m + j].total_cmp(&c[j * m + i]);
        k += 1;
    }
    k = 0;
    while ord == Ordering::Equal && k < n * m {
        let (i, j) = (k / m, k % m);
        ord = mask[i * m + j].cmp(&mask[j * m + i]);
        k += 1;
    }
    ord == Ordering::Greater
}

struct Problem {
    n: usize,
    m: usize,
    c: Vec<f64>,
    mask: Vec<bool>,
    a: Vec<f64>,
    b: Vec<f64>,
}

struct Solution {
    plan: Array2<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    total_mass: f64,
    row_residuals: Vec<f64>,
    col_residuals: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// `−κ ε · LSE_k(log w_k + (pot_k − c_k)/ε)` over admissible entries, or
/// `None` when nothing is admissible. The own-side marginal cancels against
/// the kernel's product-measure factor.
#[inline]
fn scaling_update(
    costs: &[f64],
    mask: &[bool],
    pot: &[f64],
    log_w: &[f64],
    eps: f64,
    kappa: f64,
) -> Option<f64> {
    let mut max = f64::NEG_INFINITY;
    for (k, ok) in mask.iter().enumerate() {
        if *ok {
            max = max.max(log_w[k] + (pot[k] - costs[k]) / eps);
        }
    }
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for (k, ok) in mask.iter().enumerate() {
        if *ok {
            sum += (log_w[k] + (pot[k] - costs[k]) / eps - max).exp();
        }
    }
    Some(-kappa * eps * (max + sum.ln()))
}

/// Moves the potentials along `(f + λ, g − λ)`, which leaves the plan
/// unchanged, to the dual optimum along that direction:
/// `λ = ρ/2 · log(⟨a, e^{−f/ρ}⟩ / ⟨b, e^{−g/ρ}⟩)`. Without it the gauge mode
/// decays only at rate `κ` per sweep, which stalls when `ρ ≫ ε`. The fixed
/// point is unchanged. Rows and columns with no admissible entry are left
/// at zero.
fn translate(
    f: &mut [f64],
    g: &mut [f64],
    log_a: &[f64],
    log_b: &[f64],
    row_live: &[bool],
    col_live: &[bool],
    rho: f64,
) {
    let lse = |pot: &[f64], log_w: &[f64], live: &[bool]| {
        let terms: Vec<f64> = (0..pot.len())
            .filter(|&k| live[k])
            .map(|k| log_w[k] - pot[k] / rho)
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    };
    let lambda = 0.5 * rho * (lse(f, log_a, row_live) - lse(g, log_b, col_live));
    if !lambda.is_finite() {
        return;
    }
    for (v, live) in f.iter_mut().zip(row_live) {
        if *live {
            *v += lambda;
        }
    }
    for (v, live) in g.iter_mut().zip(col_live) {
        if *live {
            *v -= lambda;
        }
    }
}

impl Problem {
    fn solve(&self, cfg: &UotConfig, warm: Option<(Vec<f64>, Vec<f64>)>) -> Solution {
        let (n, m) = (self.n, self.m);
        let eps = cfg.epsilon;
        let kappa = cfg.rho / (cfg.rho + eps);
        let ct = transpose(&self.c, n, m);
        let mask_t = transpose(&self.mask, n, m);
        let log_a: Vec<f64> = self.a.iter().map(|v| v.ln()).collect();
        let log_b: Vec<f64> = self.b.iter().map(|v| v.ln()).collect();

        let row_live: Vec<bool> = (0..n).map(|i| self.mask[i * m..(i + 1) * m].contains(&true)).collect();
        let col_live: Vec<bool> = (0..m).map(|j| mask_t[j * n..(j + 1) * n].contains(&true)).collect();

        let (mut f, mut g) = warm.unwrap_or_else(|| (vec![0.0; n], vec![0.0; m]));
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let (f_prev, g_prev) = (f.clone(), g.clone());
            for i in 0..n {
                let row = i * m..(i + 1) * m;
                f[i] = scaling_update(&self.c[row.clone()], &self.mask[row], &g, &log_b, eps, kappa)
                    .unwrap_or(0.0);
            }
            for j in 0..m {
                let col = j * n..(j + 1) * n;
                g[j] = scaling_update(&ct[col.clone()], &mask_t[col], &f, &log_a, eps, kappa)
                    .unwrap_or(0.0);
            }
            translate(&mut f, &mut g, &log_a, &log_b, &row_live, &col_live, cfg.rho);
            let change = f
                .iter()
                .zip(&f_prev)
                .chain(g.iter().zip(&g_prev))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if !change.is_finite() {
                break;
            }
            if change / eps < cfg.tolerance {
                converged = true;
                break;
            }
        }

        let mut plan = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                if self.mask[i * m + j] {
                    plan[[i, j]] =
                        (log_a[i] + log_b[j] + (f[i] + g[j] - self.c[i * m + j]) / eps).exp();
                }
            }
        }
        let tp = TransportPlan::from_plan(0, plan, &self.a, &self.b, iterations, converged);
        Solution {
            plan: tp.plan,
            f,
            g,
            total_mass: tp.total_mass,
            row_residuals: tp.row_residuals,
            col_residuals: tp.col_residuals,
            iterations,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(epsilon: f64, rho: f64) -> UotConfig {
        UotConfig {
            epsilon,
            rho,
            max_iterations: 20_000,
            tolerance: 1e-10,
        }
    }

    #[test]
    fn zero_cost_uniform_is_outer_product() {
        for (eps, rho) in [(0.05, 1.0), (1.0, 0.3), (0.01, 100.0), (3.0, 1e-2)] {
            let c = CostMatrix::new(0, Array2::zeros((2, 2)));
            let p = solve_unbalanced(&c, &[0.5, 0.5], &[0.5, 0.5], &cfg(eps, rho)).unwrap();
            for x in p.plan.iter() {
                assert!((x - 0.25).abs() < 1e-12, "eps {eps} rho {rho}: {:?}", p.plan);
            }
        }
        let c = CostMatrix::new(0, Array2::zeros((2, 3)));
        let a = [0.3, 0.7];
        let b = [0.2, 0.3, 0.5];
        let p = solve_unbalanced(&c, &a, &b, &cfg(0.2, 2.0)).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((p.plan[[i, j]] - a[i] * b[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cheap_diagonal_assignment() {
        let c = CostMatrix::new(0, array![[0.0, 1.0], [1.0, 0.0]]);
        let p = solve_unbalanced(&c, &[0.5, 0.5], &[0.5, 0.5], &cfg(0.01, 100.0)).unwrap();
        let want = array![[0.5, 0.0], [0.0, 0.5]];
        for (x, w) in p.plan.iter().zip(want.iter()) {
            assert!((x - w).abs() < 1e-3, "{:?}", p.plan);
        }
        assert!(p.converged);
    }

    #[test]
    fn expensive_single_pair_destroys_mass() {
        let c = CostMatrix::new(0, array![[10.0]]);
        let p = solve_unbalanced(&c, &[1.0], &[1.0], &cfg(0.1, 0.1)).unwrap();
        assert!(p.total_mass < 0.1, "mass {}", p.total_mass);
    }

    #[test]
    fn input_validation() {
        let c = CostMatrix::new(0, array![[0.0, 1.0]]);
        let u = UotConfig::default();
        assert!(matches!(
            solve_unbalanced(&c, &[0.0], &[0.5, 0.5], &u),
            Err(Error::InvalidMarginals(_))
        ));
        assert!(matches!(
            solve_unbalanced(&c, &[1.0], &[0.5], &u),
            Err(Error::ShapeMismatch(_))
        ));
        let nan = CostMatrix::new(0, array![[f64::NAN, 1.0]]);
        assert!(matches!(
            solve_unbalanced(&nan, &[1.0], &[0.5, 0.5], &u),
            Err(Error::InvalidCost(_))
        ));
        let inf = CostMatrix::new(0, array![[f64::INFINITY, 1.0]]);
        assert!(matches!(
            solve_unbalanced(&inf, &[1.0], &[0.5, 0.5], &u),
            Err(Error::InvalidCost(_))
        ));
        let bad = UotConfig { epsilon: 0.0, ..u };
        assert!(matches!(
            solve_unbalanced(&c, &[1.0], &[0.5, 0.5], &bad),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn masked_entries_carry_no_mass_and_total_is_preserved() {
        let values = array![[0.3, 0.1, 0.9], [0.5, 0.2, 0.05]];
        let mask = array![[true, false, true], [false, true, true]];
        let c = CostMatrix::with_mask(0, values.clone(), mask.clone()).unwrap();
        let a = [0.5, 0.5];
        let b = [1.0 / 3.0; 3];
        let u = cfg(0.05, 1.0);
        let p = solve_masked(&c, &a, &b, &u).unwrap();
        for (x, ok) in p.plan.iter().zip(mask.iter()) {
            if !ok {
                assert_eq!(*x, 0.0);
            }
        }
        let open = solve_unbalanced(&CostMatrix::new(0, values), &a, &b, &u).unwrap();
        assert!((p.total_mass - open.total_mass).abs() < 1e-12);
        assert!((p.plan.sum() - open.total_mass).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row_gets_zero_mass() {
        let c = CostMatrix::with_mask(
            0,
            array![[0.2, 0.4], [0.1, 0.3]],
            array![[false, false], [true, true]],
        )
        .unwrap();
        let p = solve_unbalanced(&c, &[0.5, 0.5], &[0.5, 0.5], &cfg(0.1, 1.0)).unwrap();
        assert_eq!(p.plan.row(0).sum(), 0.0);
        assert!(p.plan.row(1).sum() > 0.0);
        assert!(p.plan.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn transposed_problem_gives_transposed_plan() {
        let values = array![[0.3, 0.1, 0.9], [0.5, 0.2, 0.05]];
        let c = CostMatrix::new(0, values.clone());
        let ct = CostMatrix::new(0, values.t().to_owned());
        let a = [0.4, 0.6];
        let b = [0.2, 0.3, 0.5];
        let u = cfg(0.05, 1.0);
        let p = solve_unbalanced(&c, &a, &b, &u).unwrap();
        let q = solve_unbalanced(&ct, &b, &a, &u).unwrap();
        assert_eq!(p.plan.t(), q.plan);

        let sq = array![[0.3, 0.1], [0.7, 0.2]];
        let p = solve_unbalanced(&CostMatrix::new(0, sq.clone()), &[0.3, 0.7], &[0.5, 0.5], &u)
            .unwrap();
        let q = solve_unbalanced(&CostMatrix::new(0, sq.t().to_owned()), &[0.5, 0.5], &[0.3, 0.7], &u)
            .unwrap();
        assert_eq!(p.plan.t(), q.plan);
    }

    #[test]
    fn small_epsilon_large_cost_stays_finite() {
        let values = Array2::from_shape_fn((4, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * 1000.0);
        let c = CostMatrix::new(0, values);
        let p = solve_unbalanced(&c, &[0.25; 4], &[0.2; 5], &UotConfig {
            epsilon: 1e-3,
            ..UotConfig::default()
        })
        .unwrap();
        assert!(p.plan.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(p.total_mass.is_finite());
    }

    #[test]
    fn non_convergence_is_reported() {
        let c = CostMatrix::new(0, array![[0.0, 1.0], [1.0, 0.0]]);
        let p = solve_unbalanced(&c, &[0.5, 0.5], &[0.5, 0.5], &UotConfig {
            epsilon: 0.001,
            rho: 1e4,
            max_iterations: 1,
            tolerance: 1e-12,
        })
        .unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations_used, 1);
    }
}
