//! Space-time lattice, initial data and the discrete continuity equation.
//!
//! Cells are `I_i × J_j` with `i = 1..N_Δt` (time) and `j = 1..N_Δx` (space);
//! in code both indices are zero-based. Densities `u` and fluxes `w` are
//! `N_Δt × N_Δx` matrices; `w[(i, j)]` is the flux through the left edge of
//! cell `j`, so the balance of cell `j` reads
//!
//! ```text
//! (u[i][j] − u[i−1][j]) Δx + (w[i][j+1] − w[i][j]) Δt = 0
//! ```
//!
//! with `j + 1` wrapping to column 0 on the last cell. Column 0 is pinned to
//! zero, which closes both ends of the interval.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    n_t: usize,
    n_x: usize,
}

impl GridSpec {
    pub fn new(n_t: usize, n_x: usize) -> Result<Self> {
        if n_t == 0 || n_x == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs positive subdivisions, got N_t={n_t}, N_x={n_x}"
            )));
        }
        Ok(Self { n_t, n_x })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_t as f64
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    /// Number of unpinned fluxes, `N_Δt (N_Δx − 1)`.
    pub fn n_free(&self) -> usize {
        self.n_t * (self.n_x - 1)
    }

    /// Cell centres `(j − 1/2) Δx`.
    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_x)
            .map(|j| (j as f64 + 0.5) / self.n_x as f64)
            .collect()
    }

    /// `Δx Σ_j u_j`.
    pub fn mass(&self, u: &[f64]) -> f64 {
        self.dx() * u.iter().sum::<f64>()
    }
}

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial datum on `[0, 1]`.
#[derive(Clone)]
pub enum InitialProfile {
    Function(ProfileFn),
    /// Samples on the uniform nodes `k / (n − 1)`, linearly interpolated.
    Table(Vec<f64>),
}

impl InitialProfile {
    pub fn function<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::Function(Arc::new(f))
    }
}

impl fmt::Debug for InitialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Function(_) => f.write_str("InitialProfile::Function(..)"),
            Self::Table(v) => f
                .debug_tuple("InitialProfile::Table")
                .field(&v.len())
                .finish(),
        }
    }
}

const GAUSS_NODES: usize = 16;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GAUSS_NODES;
        let mut rule = Vec::with_capacity(n);
        for k in 0..n {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for l in 2..=n {
                    let p2 = ((2 * l - 1) as f64 * x * p1 - (l - 1) as f64 * p0) / l as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        rule
    })
}

/// Cell averages `(1/Δx) ∫_{J_j} u0`. Callables use 16-point Gauss-Legendre
/// per cell; tables are integrated exactly as piecewise linear functions.
pub fn cell_average(u0: &InitialProfile, n_x: usize) -> Vec<f64> {
    let dx = 1.0 / n_x as f64;
    match u0 {
        InitialProfile::Function(f) => {
            let rule = gauss_legendre();
            (0..n_x)
                .map(|j| {
                    let mid = (j as f64 + 0.5) * dx;
                    0.5 * rule
                        .iter()
                        .map(|&(x, w)| w * f(mid + 0.5 * dx * x))
                        .sum::<f64>()
                })
                .collect()
        }
        InitialProfile::Table(v) => (0..n_x)
            .map(|j| table_integral(v, j as f64 * dx, (j + 1) as f64 * dx) / dx)
            .collect(),
    }
}

/// Exact integral of the piecewise linear interpolant of `v` over `[a, b]`.
fn table_integral(v: &[f64], a: f64, b: f64) -> f64 {
    if v.len() == 1 {
        return v[0] * (b - a);
    }
    let segs = v.len() - 1;
    let h = 1.0 / segs as f64;
    let at = |x: f64| {
        let s = (x / h).clamp(0.0, segs as f64);
        let k = (s.floor() as usize).min(segs - 1);
        let t = s - k as f64;
        v[k] * (1.0 - t) + v[k + 1] * t
    };
    let first = ((a / h).floor() as usize).min(segs - 1);
    let mut total = 0.0;
    let mut k = first;
    while k < segs {
        let lo = a.max(k as f64 * h);
        let hi = b.min((k + 1) as f64 * h);
        if hi > lo {
            total += 0.5 * (hi - lo) * (at(lo) + at(hi));
        }
        if (k + 1) as f64 * h >= b {
            break;
        }
        k += 1;
    }
    total
}

fn check_epsilon(epsilon: f64, support: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Precondition(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    if support.is_finite() && !(epsilon < 0.5 * support) {
        return Err(Error::Precondition(format!(
            "epsilon {epsilon} must be below M/2 = {}",
            0.5 * support
        )));
    }
    Ok(())
}

/// `û + ε` for `M = ∞`, `û + ε (1 − 2û/M)` for finite `M`.
pub fn regularize_initial(u_hat: &[f64], epsilon: f64, support: f64) -> Result<Vec<f64>> {
    check_epsilon(epsilon, support)?;
    u_hat
        .iter()
        .map(|&u| {
            if !(u >= 0.0) || (support.is_finite() && u > support) {
                return Err(Error::Precondition(format!(
                    "initial value {u} outside [0, {support}]"
                )));
            }
            Ok(if support.is_finite() {
                u + epsilon * (1.0 - 2.0 * u / support)
            } else {
                u + epsilon
            })
        })
        .collect()
}

/// Result of [`deregularize`]: values and the total absolute clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct Deregularized {
    pub values: Vec<f64>,
    /// `Σ_j |clamped_j − raw_j|` (not weighted by `Δx`).
    pub clamped: f64,
}

/// Inverse of [`regularize_initial`], clamped to `[0, M]`.
pub fn deregularize(u: &[f64], epsilon: f64, support: f64) -> Result<Deregularized> {
    check_epsilon(epsilon, support)?;
    let mut clamped = 0.0;
    let values = u
        .iter()
        .map(|&z| {
            let raw = if support.is_finite() {
                (z - epsilon) / (1.0 - 2.0 * epsilon / support)
            } else {
                z - epsilon
            };
            let c = raw.clamp(0.0, support);
            clamped += (c - raw).abs();
            c
        })
        .collect();
    Ok(Deregularized { values, clamped })
}

fn check_flux(w: &DMatrix<f64>, grid: &GridSpec) -> Result<()> {
    if w.nrows() != grid.n_t() || w.ncols() != grid.n_x() {
        return Err(shape_err(
            format!("{}x{}", grid.n_t(), grid.n_x()),
            format!("{}x{}", w.nrows(), w.ncols()),
        ));
    }
    Ok(())
}

/// Densities induced by the fluxes through the discrete continuity equation.
pub fn march_density(init_row: &[f64], w: &DMatrix<f64>, grid: &GridSpec) -> Result<DMatrix<f64>> {
    check_flux(w, grid)?;
    if init_row.len() != grid.n_x() {
        return Err(shape_err(grid.n_x(), init_row.len()));
    }
    if let Some(i) = (0..grid.n_t()).find(|&i| w[(i, 0)] != 0.0) {
        return Err(Error::Precondition(format!(
            "boundary flux w[{i}, 0] must vanish, got {}",
            w[(i, 0)]
        )));
    }
    Ok(march_unchecked(init_row, w, grid))
}

pub(crate) fn march_unchecked(init_row: &[f64], w: &DMatrix<f64>, grid: &GridSpec) -> DMatrix<f64> {
    let (n_t, n_x) = (grid.n_t(), grid.n_x());
    let r = grid.dt() / grid.dx();
    let mut u = DMatrix::zeros(n_t, n_x);
    for i in 0..n_t {
        for j in 0..n_x {
            let prev = if i == 0 { init_row[j] } else { u[(i - 1, j)] };
            let right = w[(i, (j + 1) % n_x)];
            u[(i, j)] = prev - r * (right - w[(i, j)]);
        }
    }
    u
}

/// Largest absolute violation over every equation of the discrete continuity
/// system, including the pinned boundary fluxes.
pub fn ce_residual(
    init_row: &[f64],
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
    grid: &GridSpec,
) -> Result<f64> {
    check_flux(w, grid)?;
    check_flux(u, grid)?;
    if init_row.len() != grid.n_x() {
        return Err(shape_err(grid.n_x(), init_row.len()));
    }
    let (n_t, n_x) = (grid.n_t(), grid.n_x());
    let (dt, dx) = (grid.dt(), grid.dx());
    let mut worst: f64 = 0.0;
    for i in 0..n_t {
        for j in 0..n_x {
            let prev = if i == 0 { init_row[j] } else { u[(i - 1, j)] };
            let eq = (u[(i, j)] - prev) * dx + (w[(i, (j + 1) % n_x)] - w[(i, j)]) * dt;
            worst = worst.max(eq.abs());
        }
        worst = worst.max(w[(i, 0)].abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_flux(grid: &GridSpec, rng: &mut StdRng, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(grid.n_t(), grid.n_x(), |_, j| {
            if j == 0 {
                0.0
            } else {
                rng.random_range(-scale..scale)
            }
        })
    }

    #[test]
    fn grid_steps() {
        let g = GridSpec::new(2, 300).unwrap();
        assert_eq!(g.dt() * g.n_t() as f64, 1.0);
        assert_eq!(g.dx() * g.n_x() as f64, 1.0);
        assert_eq!(g.n_free(), 598);
        assert!(GridSpec::new(0, 3).is_err());
        assert_eq!(GridSpec::new(1, 2).unwrap().centers(), vec![0.25, 0.75]);
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let rule = gauss_legendre();
        assert_eq!(rule.len(), 16);
        let w: f64 = rule.iter().map(|r| r.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
        // ∫_{-1}^{1} x^30 = 2/31, exact for a 16-point rule.
        let i: f64 = rule.iter().map(|&(x, w)| w * x.powi(30)).sum();
        assert!((i - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn cell_average_examples() {
        let one = InitialProfile::function(|_| 1.0);
        assert!(cell_average(&one, 7)
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));

        // sin(8πx)/(8π) takes equal values on all quarter points.
        let cosine = InitialProfile::function(|x| (8.0 * PI * x).cos() + 1.0);
        for v in cell_average(&cosine, 4) {
            assert!((v - 1.0).abs() < 1e-14, "{v}");
        }

        // 2 ∫_0^{1/2} (x − 1/2)^4 dx + 0.001 = 2 (1/2)^5 / 5 + 0.001 = 0.0135.
        let film = InitialProfile::function(|x| (x - 0.5).powi(4) + 0.001);
        for v in cell_average(&film, 2) {
            assert!((v - 0.0135).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn cell_average_matches_antiderivative() {
        let f = InitialProfile::function(|x| (8.0 * PI * x).cos() + 1.0);
        let anti = |x: f64| x + (8.0 * PI * x).sin() / (8.0 * PI);
        for n in [3usize, 25, 50, 300] {
            let avg = cell_average(&f, n);
            let dx = 1.0 / n as f64;
            for (j, v) in avg.iter().enumerate() {
                let exact = (anti((j + 1) as f64 * dx) - anti(j as f64 * dx)) / dx;
                assert!((v - exact).abs() < 1e-13, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn table_average_is_exact_for_linear_pieces() {
        // Hat: 0 → 1 → 0 on nodes 0, 1/2, 1.
        let hat = InitialProfile::Table(vec![0.0, 1.0, 0.0]);
        let avg = cell_average(&hat, 4);
        let expected = [0.25, 0.75, 0.75, 0.25];
        for (a, e) in avg.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        // Cells straddling nodes.
        let avg3 = cell_average(&hat, 3);
        let mass: f64 = avg3.iter().sum::<f64>() / 3.0;
        assert!((mass - 0.5).abs() < 1e-15);
        assert!((avg3[1] - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn regularize_examples() {
        assert!((regularize_initial(&[0.5], 0.1, f64::INFINITY).unwrap()[0] - 0.6).abs() < 1e-16);
        assert_eq!(regularize_initial(&[0.5], 0.1, 1.0).unwrap(), vec![0.5]);
        let b = regularize_initial(&[0.0, 1.0], 0.1, 1.0).unwrap();
        assert!((b[0] - 0.1).abs() < 1e-16 && (b[1] - 0.9).abs() < 1e-16);
        assert!(regularize_initial(&[0.5], 1.2, f64::INFINITY).is_err());
        assert!(regularize_initial(&[-0.5], 0.1, f64::INFINITY).is_err());
        assert!(regularize_initial(&[1.5], 0.1, 1.0).is_err());
        assert!(regularize_initial(&[0.5], 0.6, 1.0).is_err());
    }

    #[test]
    fn deregularize_examples() {
        let d = deregularize(&[0.6], 0.1, f64::INFINITY).unwrap();
        assert!((d.values[0] - 0.5).abs() < 1e-15 && d.clamped == 0.0);
        assert_eq!(deregularize(&[0.5], 0.1, 1.0).unwrap().values, vec![0.5]);
        let c = deregularize(&[0.05, 0.97], 0.1, 1.0).unwrap();
        assert_eq!(c.values, vec![0.0, 1.0]);
        assert!(c.clamped > 0.0);
    }

    #[test]
    fn regularization_round_trip() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let eps = rng.random_range(1e-12..0.3);
            let finite = rng.random_bool(0.5);
            let m = if finite {
                rng.random_range(0.7..3.0)
            } else {
                f64::INFINITY
            };
            let hi = if finite { m } else { 5.0 };
            let u: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..hi)).collect();
            let reg = regularize_initial(&u, eps, m).unwrap();
            let back = deregularize(&reg, eps, m).unwrap();
            let again = regularize_initial(&back.values, eps, m).unwrap();
            for (a, b) in again.iter().zip(&reg) {
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
            }
            for (a, b) in back.values.iter().zip(&u) {
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn march_zero_flux_freezes_density() {
        let g = GridSpec::new(3, 4).unwrap();
        let init = [0.1, 0.2, 0.3, 0.4];
        let u = march_density(&init, &DMatrix::zeros(3, 4), &g).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(u[(i, j)], init[j]);
            }
        }
    }

    #[test]
    fn march_two_cell_hand_solve() {
        // Δt = 1, Δx = 1/2: u11 = a − 2s, u12 = b + 2s.
        let g = GridSpec::new(1, 2).unwrap();
        let (a, b, s) = (0.7, 0.4, 0.1);
        let w = DMatrix::from_row_slice(1, 2, &[0.0, s]);
        let u = march_density(&[a, b], &w, &g).unwrap();
        assert!((u[(0, 0)] - (a - 2.0 * s)).abs() < 1e-15);
        assert!((u[(0, 1)] - (b + 2.0 * s)).abs() < 1e-15);
    }

    #[test]
    fn march_rejects_bad_input() {
        let g = GridSpec::new(1, 2).unwrap();
        let w = DMatrix::from_row_slice(1, 2, &[0.1, 0.0]);
        assert!(march_density(&[1.0, 1.0], &w, &g).is_err());
        assert!(march_density(&[1.0], &DMatrix::zeros(1, 2), &g).is_err());
        assert!(march_density(&[1.0, 1.0], &DMatrix::zeros(2, 2), &g).is_err());
    }

    #[test]
    fn ce_residual_examples() {
        let g = GridSpec::new(2, 5).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let init: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..1.5)).collect();
        let w = random_flux(&g, &mut rng, 0.1);
        let mut u = march_density(&init, &w, &g).unwrap();
        assert!(ce_residual(&init, &u, &w, &g).unwrap() <= 1e-15);
        let mass0 = g.mass(&init);
        for i in 0..2 {
            let row: Vec<f64> = u.row(i).iter().copied().collect();
            assert!((g.mass(&row) - mass0).abs() < 1e-15);
        }
        let delta = 1e-3;
        u[(1, 2)] += delta;
        let r = ce_residual(&init, &u, &w, &g).unwrap();
        assert!((r - delta * g.dx()).abs() < 1e-15);

        let zero = DMatrix::zeros(2, 5);
        let frozen = DMatrix::from_fn(2, 5, |_, j| init[j]);
        assert_eq!(ce_residual(&init, &frozen, &zero, &g).unwrap(), 0.0);
    }

    fn mirror(u: &DMatrix<f64>, w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n_t, n_x) = (u.nrows(), u.ncols());
        let um = DMatrix::from_fn(n_t, n_x, |i, j| u[(i, n_x - 1 - j)]);
        let wm = DMatrix::from_fn(n_t, n_x, |i, j| if j == 0 { 0.0 } else { -w[(i, n_x - j)] });
        (um, wm)
    }

    proptest! {
        #[test]
        fn mass_is_conserved(n_t in 1usize..5, n_x in 1usize..12, seed in any::<u64>()) {
            let g = GridSpec::new(n_t, n_x).unwrap();
            let mut rng = StdRng::seed_from_u64(seed);
            let init: Vec<f64> = (0..n_x).map(|_| rng.random_range(0.0..3.0)).collect();
            let w = random_flux(&g, &mut rng, 1.0);
            let u = march_density(&init, &w, &g).unwrap();
            let m0 = g.mass(&init);
            for i in 0..n_t {
                let row: Vec<f64> = u.row(i).iter().copied().collect();
                prop_assert!((g.mass(&row) - m0).abs() <= 1e-13 * m0.max(1.0));
            }
        }

        #[test]
        fn march_is_affine(n_t in 1usize..4, n_x in 2usize..10, seed in any::<u64>()) {
            let g = GridSpec::new(n_t, n_x).unwrap();
            let mut rng = StdRng::seed_from_u64(seed);
            let init: Vec<f64> = (0..n_x).map(|_| rng.random_range(0.0..3.0)).collect();
            let w1 = random_flux(&g, &mut rng, 1.0);
            let w2 = random_flux(&g, &mut rng, 1.0);
            let a = march_density(&init, &(&w1 + &w2), &g).unwrap()
                - march_density(&init, &w2, &g).unwrap();
            let b = march_density(&vec![0.0; n_x], &w1, &g).unwrap();
            prop_assert!((a - b).amax() <= 1e-12);
        }

        #[test]
        fn mirror_preserves_feasibility(n_t in 1usize..4, n_x in 2usize..10, seed in any::<u64>()) {
            let g = GridSpec::new(n_t, n_x).unwrap();
            let mut rng = StdRng::seed_from_u64(seed);
            let init: Vec<f64> = (0..n_x).map(|_| rng.random_range(0.0..3.0)).collect();
            let w = random_flux(&g, &mut rng, 1.0);
            let u = march_density(&init, &w, &g).unwrap();
            let (um, wm) = mirror(&u, &w);
            let init_m: Vec<f64> = init.iter().rev().copied().collect();
            prop_assert!(ce_residual(&init_m, &um, &wm, &g).unwrap() <= 1e-13);
        }
    }
}
