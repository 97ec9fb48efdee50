//! Random load vectors and random boundary functions: Gaussian load sampling,
//! uniform sphere directions, Fourier-series boundary randomization with
//! truncation diagnostics and the nonnegativity bound on the coefficient
//! standard deviation.
//!
//! All samplers derive one RNG stream per (seed, index) pair, so parallel
//! generation is order-independent and a seed pins every draw bitwise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// One ChaCha stream per (seed, tag, index); tags keep independent purposes
/// (loads, sphere, coefficients) from sharing draws.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha12Rng {
    let mut s = [0u8; 32];
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut mix = |v: u64| {
        state = state.wrapping_add(v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state ^= state >> 31;
        state
    };
    let words = [mix(tag), mix(index), mix(seed), mix(index.wrapping_mul(0x100_0193))];
    for (i, w) in words.iter().enumerate() {
        s[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha12Rng::from_seed(s)
}

/// Standard normal draw (Box-Muller, one value per pair of uniforms).
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub const TAG_LOADS: u64 = 1;
pub const TAG_SPHERE: u64 = 2;
pub const TAG_COEFFS: u64 = 3;

/// Gaussian load model b ~ N(mu, Sigma) with a stored Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianLoadModel {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Lower-triangular L with L L^T = Sigma.
    pub factor: DMatrix<f64>,
}

impl GaussianLoadModel {
    pub fn new(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        let n = mean.len();
        if covariance.len() != n || covariance.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariance.len(),
            });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| covariance[i][j]);
        let chol = nalgebra::Cholesky::new(cov.clone()).ok_or(Error::CholeskyFailure)?;
        let factor = chol.l();
        let recon = &factor * factor.transpose() - &cov;
        if recon.amax() > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::CholeskyFailure);
        }
        Ok(GaussianLoadModel {
            mean: DVector::from_vec(mean),
            covariance: cov,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sampled loads in row-major (sample, dim) layout; negative draws are kept
/// and only counted, they fail feasibility downstream.
#[derive(Debug, Clone)]
pub struct LoadSamples {
    pub data: Vec<f64>,
    pub n_dims: usize,
    pub negative_count: usize,
}

impl LoadSamples {
    pub fn len(&self) -> usize {
        if self.n_dims == 0 {
            0
        } else {
            self.data.len() / self.n_dims
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_dims..(i + 1) * self.n_dims]
    }
}

/// Draw `count` load vectors x_i = mu + L z_i.
pub fn sample_loads(model: &GaussianLoadModel, count: usize, seed: u64) -> LoadSamples {
    let n = model.dim();
    let mut data = vec![0.0; count * n];
    let mut negative = 0usize;
    for i in 0..count {
        let mut rng = stream_rng(seed, TAG_LOADS, i as u64);
        let z = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
        let x = &model.mean + &model.factor * z;
        let row = &mut data[i * n..(i + 1) * n];
        for (slot, value) in row.iter_mut().zip(x.iter()) {
            *slot = *value;
        }
        if row.iter().any(|&v| v < 0.0) {
            negative += 1;
        }
    }
    LoadSamples {
        data,
        n_dims: n,
        negative_count: negative,
    }
}

/// Uniform directions on S^{n-1}. For n = 1 the sphere itself, {-1, +1}, is
/// returned and `count` is ignored.
pub fn sphere_sample(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n >= 1);
    if n == 1 {
        return vec![vec![-1.0], vec![1.0]];
    }
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, TAG_SPHERE, i as u64);
            loop {
                let v: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    return v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect()
}

/// Orthonormal basis psi_m(t) = sqrt(2/T) sin((pi/2 + m pi) t / T).
pub fn fourier_basis(m: usize, t: f64, horizon: f64) -> f64 {
    let omega = (std::f64::consts::FRAC_PI_2 + m as f64 * std::f64::consts::PI) / horizon;
    (2.0 / horizon).sqrt() * (omega * t).sin()
}

/// Default Simpson resolution for coefficient quadrature. 2001 points leave
/// ~1e-7 residuals in the high-frequency Gram entries; this resolution keeps
/// them below 1e-10.
pub const QUADRATURE_POINTS: usize = 20001;

/// Composite Simpson over [0, horizon]; `points` must be odd.
pub fn simpson<F: Fn(f64) -> f64>(f: F, horizon: f64, points: usize) -> f64 {
    assert!(points >= 3 && points % 2 == 1);
    let h = horizon / (points - 1) as f64;
    let mut acc = f(0.0) + f(horizon);
    for k in 1..points - 1 {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / 3.0
}

/// Coefficients a0_m = ∫ b_D psi_m dt for m = 0..=n_terms of an already
/// offset-free function.
pub fn fourier_coefficients<F: Fn(f64) -> f64>(
    shifted: F,
    horizon: f64,
    n_terms: usize,
) -> Vec<f64> {
    (0..=n_terms)
        .map(|m| {
            simpson(
                |t| shifted(t) * fourier_basis(m, t, horizon),
                horizon,
                QUADRATURE_POINTS,
            )
        })
        .collect()
}

/// Which truncation criterion to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationKind {
    L2,
    LInf,
}

#[derive(Debug, Clone, Copy)]
pub struct TruncationReport {
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Truncation error of the reconstructed series against the shifted function.
/// L2: squared error vs. theta * squared norm; LInf: grid sup vs.
/// theta * (sup - inf) of the shifted function.
pub fn truncation_error<F: Fn(f64) -> f64>(
    shifted: F,
    coeffs: &[f64],
    horizon: f64,
    kind: TruncationKind,
    theta: f64,
) -> TruncationReport {
    let recon = |t: f64| -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(m, a)| a * fourier_basis(m, t, horizon))
            .sum()
    };
    match kind {
        TruncationKind::L2 => {
            let err = simpson(
                |t| {
                    let d = shifted(t) - recon(t);
                    d * d
                },
                horizon,
                QUADRATURE_POINTS,
            );
            let norm = simpson(|t| shifted(t) * shifted(t), horizon, QUADRATURE_POINTS);
            let threshold = theta * norm;
            TruncationReport {
                value: err,
                threshold,
                pass: err <= threshold,
            }
        }
        TruncationKind::LInf => {
            let grid = 2001;
            let mut sup_err = 0.0f64;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for k in 0..grid {
                let t = horizon * k as f64 / (grid - 1) as f64;
                let b = shifted(t);
                lo = lo.min(b);
                hi = hi.max(b);
                sup_err = sup_err.max((b - recon(t)).abs());
            }
            let threshold = theta * (hi - lo);
            TruncationReport {
                value: sup_err,
                threshold,
                pass: sup_err <= threshold,
            }
        }
    }
}

/// Per-node randomized boundary: offset + sum_m a_m a0_m psi_m with
/// a_m ~ N(1, sigma^2).
#[derive(Debug, Clone)]
pub struct FourierBoundaryModel {
    pub offset: f64,
    pub sigma: f64,
    pub coeffs: Vec<f64>,
    pub horizon: f64,
}

impl FourierBoundaryModel {
    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    /// Deterministic truncated reconstruction (all a_m = 1).
    pub fn deterministic(&self, t: f64) -> f64 {
        self.offset
            + self
                .coeffs
                .iter()
                .enumerate()
                .map(|(m, a)| a * fourier_basis(m, t, self.horizon))
                .sum::<f64>()
    }
}

/// A set of per-node boundary models sharing one horizon. `correlation` is the
/// cross-node correlation of the coefficient multipliers a_{m,k}; the default
/// 0 keeps nodes independent.
#[derive(Debug, Clone)]
pub struct FourierBoundarySet {
    pub nodes: Vec<FourierBoundaryModel>,
    pub correlation: f64,
}

impl FourierBoundarySet {
    pub fn independent(nodes: Vec<FourierBoundaryModel>) -> Self {
        FourierBoundarySet {
            nodes,
            correlation: 0.0,
        }
    }

    /// Coefficient covariance between nodes j and k (for one shared index m).
    pub fn coeff_cov(&self, j: usize, k: usize) -> f64 {
        let sj = self.nodes[j].sigma;
        let sk = self.nodes[k].sigma;
        if j == k {
            sj * sj
        } else {
            self.correlation * sj * sk
        }
    }
}

/// One realization: the coefficient multipliers per node and term.
#[derive(Debug, Clone)]
pub struct BoundaryRealization {
    pub draws: Vec<Vec<f64>>,
}

impl BoundaryRealization {
    pub fn evaluate(&self, set: &FourierBoundarySet, node: usize, t: f64) -> f64 {
        let model = &set.nodes[node];
        model.offset
            + self.draws[node]
                .iter()
                .zip(&model.coeffs)
                .enumerate()
                .map(|(m, (a, a0))| a * a0 * fourier_basis(m, t, model.horizon))
                .sum::<f64>()
    }
}

/// Draw realization `index` of the boundary set.
pub fn sample_boundary(set: &FourierBoundarySet, seed: u64, index: u64) -> BoundaryRealization {
    let mut rng = stream_rng(seed, TAG_COEFFS, index);
    let rho = set.correlation.clamp(0.0, 1.0);
    let max_terms = set.nodes.iter().map(|m| m.n_terms()).max().unwrap_or(0);
    let shared: Vec<f64> = (0..max_terms)
        .map(|_| {
            if rho > 0.0 {
                standard_normal(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    let draws = set
        .nodes
        .iter()
        .map(|model| {
            (0..model.n_terms())
                .map(|m| {
                    let z = standard_normal(&mut rng);
                    let g = if rho > 0.0 {
                        rho.sqrt() * shared[m] + (1.0 - rho).sqrt() * z
                    } else {
                        z
                    };
                    1.0 + model.sigma * g
                })
                .collect()
        })
        .collect();
    BoundaryRealization { draws }
}

/// Largest coefficient standard deviation that keeps the 3-sigma worst case
/// of the randomized series nonnegative at the grid argmin of b_D.
/// Returns +inf when every basis term vanishes there.
pub fn sigma_nonneg_bound<F: Fn(f64) -> f64>(
    coeffs: &[f64],
    offsetful: F,
    horizon: f64,
    grid_points: usize,
) -> f64 {
    let mut best_t = 0.0;
    let mut best_v = f64::INFINITY;
    for k in 0..grid_points {
        let t = horizon * k as f64 / (grid_points - 1) as f64;
        let v = offsetful(t);
        if v < best_v {
            best_v = v;
            best_t = t;
        }
    }
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (m, a0) in coeffs.iter().enumerate() {
        let term = a0 * fourier_basis(m, best_t, horizon);
        if term >= 0.0 {
            pos += term;
        } else {
            neg += term;
        }
    }
    let denom = 3.0 * (pos - neg);
    if denom == 0.0 {
        return f64::INFINITY;
    }
    best_v / denom
}

/// Gaussian law of the boundary values evaluated at per-node times tau_k:
/// mean_k = deterministic_k(tau_k), cov from the coefficient covariance.
pub fn evaluated_load_distribution(
    set: &FourierBoundarySet,
    times: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.nodes.len();
    assert_eq!(times.len(), n);
    let mean = DVector::from_fn(n, |k, _| set.nodes[k].deterministic(times[k]));
    let cov = DMatrix::from_fn(n, n, |j, k| {
        let mj = &set.nodes[j];
        let mk = &set.nodes[k];
        let terms = mj.n_terms().min(mk.n_terms());
        let c = set.coeff_cov(j, k);
        (0..terms)
            .map(|m| {
                c * mj.coeffs[m]
                    * mk.coeffs[m]
                    * fourier_basis(m, times[j], mj.horizon)
                    * fourier_basis(m, times[k], mk.horizon)
            })
            .sum()
    });
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_samples_are_seed_deterministic() {
        let model = GaussianLoadModel::new(vec![4.0], vec![vec![0.25]]).unwrap();
        let a = sample_loads(&model, 100, 7);
        let b = sample_loads(&model, 100, 7);
        assert_eq!(a.data, b.data);
        let c = sample_loads(&model, 100, 8);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn degenerate_spread_collapses_to_mean() {
        let model = GaussianLoadModel::new(vec![4.0], vec![vec![1e-300]]).unwrap();
        let s = sample_loads(&model, 50, 1);
        for i in 0..50 {
            assert!((s.row(i)[0] - 4.0).abs() < 1e-140);
        }
    }

    #[test]
    fn sample_moments_match_model() {
        let model = GaussianLoadModel::new(vec![4.0], vec![vec![0.25]]).unwrap();
        let n = 50_000;
        let s = sample_loads(&model, n, 3);
        let mean = s.data.iter().sum::<f64>() / n as f64;
        let var = s.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 4.0).abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn singular_covariance_is_rejected() {
        assert!(matches!(
            GaussianLoadModel::new(vec![0.0, 0.0], vec![vec![1.0, 2.0], vec![2.0, 1.0]]),
            Err(Error::CholeskyFailure)
        ));
    }

    #[test]
    fn sphere_n1_is_exact() {
        let s = sphere_sample(1, 1000, 5);
        assert_eq!(s, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn sphere_samples_are_unit_and_centered() {
        let s = sphere_sample(2, 10_000, 11);
        let mut mean = [0.0f64; 2];
        for v in &s {
            let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            mean[0] += v[0];
            mean[1] += v[1];
        }
        for m in mean {
            assert!((m / 10_000.0).abs() < 0.05);
        }
    }

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        // acceptance property (g): Gram matrix within 1e-8 of identity
        for &horizon in &[4.0, 10.0] {
            for m1 in (0..=30).step_by(6) {
                for m2 in (0..=30).step_by(6) {
                    let gram = simpson(
                        |t| fourier_basis(m1, t, horizon) * fourier_basis(m2, t, horizon),
                        horizon,
                        QUADRATURE_POINTS,
                    );
                    let expect = f64::from(m1 == m2);
                    assert!(
                        (gram - expect).abs() < 1e-8,
                        "m1={m1} m2={m2} T={horizon}: {gram}"
                    );
                }
            }
        }
    }

    #[test]
    fn coefficients_recover_a_basis_function() {
        let horizon = 4.0;
        let coeffs = fourier_coefficients(|t| fourier_basis(3, t, horizon), horizon, 10);
        for (m, a) in coeffs.iter().enumerate() {
            let expect = f64::from(m == 3);
            assert!((a - expect).abs() < 1e-8, "m={m}: {a}");
        }
        let zero = fourier_coefficients(|_| 0.0, horizon, 10);
        assert!(zero.iter().all(|a| a.abs() < 1e-14));
    }

    #[test]
    fn truncation_criteria_on_example_boundary() {
        let horizon = 4.0;
        let shifted = |t: f64| -2.0 * (2.0 * t).sin();
        let coeffs = fourier_coefficients(shifted, horizon, 30);
        let l2 = truncation_error(shifted, &coeffs, horizon, TruncationKind::L2, 0.01);
        assert!(l2.pass, "L2 truncation should pass: {l2:?}");
        // a single term cannot carry the function
        let l2_bad = truncation_error(shifted, &coeffs[..1], horizon, TruncationKind::L2, 0.01);
        assert!(!l2_bad.pass);
        // full finite series reproduces itself exactly
        let exact = truncation_error(
            |t| fourier_basis(2, t, horizon),
            &[0.0, 0.0, 1.0],
            horizon,
            TruncationKind::L2,
            0.01,
        );
        assert!(exact.pass && exact.value < 1e-12);
        let linf = truncation_error(shifted, &coeffs, horizon, TruncationKind::LInf, 0.05);
        assert!(linf.pass, "{linf:?}");
    }

    fn example3_set() -> FourierBoundarySet {
        let horizon = 4.0;
        let coeffs = fourier_coefficients(|t| -2.0 * (2.0 * t).sin(), horizon, 30);
        FourierBoundarySet::independent(vec![FourierBoundaryModel {
            offset: 5.0,
            sigma: 0.25,
            coeffs,
            horizon,
        }])
    }

    #[test]
    fn zero_sigma_realization_is_deterministic() {
        let mut set = example3_set();
        set.nodes[0].sigma = 0.0;
        let r = sample_boundary(&set, 9, 0);
        for t in [0.0, 1.2, 3.9] {
            assert!((r.evaluate(&set, 0, t) - set.nodes[0].deterministic(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn realizations_differ_across_indices_and_bracket_the_mean() {
        let set = example3_set();
        let a = sample_boundary(&set, 9, 0);
        let b = sample_boundary(&set, 9, 1);
        assert_ne!(a.draws, b.draws);
        // ensemble mean within 1% of the deterministic reconstruction
        let n = 10_000;
        let grid: Vec<f64> = (0..41).map(|k| 4.0 * k as f64 / 40.0).collect();
        let mut acc = vec![0.0; grid.len()];
        for i in 0..n {
            let r = sample_boundary(&set, 42, i);
            for (slot, &t) in acc.iter_mut().zip(&grid) {
                *slot += r.evaluate(&set, 0, t);
            }
        }
        for (slot, &t) in acc.iter().zip(&grid) {
            let mean = slot / n as f64;
            let det = set.nodes[0].deterministic(t);
            assert!(
                (mean - det).abs() < 0.01 * det.abs().max(1.0),
                "t={t}: {mean} vs {det}"
            );
        }
    }

    #[test]
    fn clamped_draws_stay_nonnegative_when_sigma_below_bound() {
        let set = example3_set();
        let model = &set.nodes[0];
        let sigma_max = sigma_nonneg_bound(
            &model.coeffs,
            |t| -2.0 * (2.0 * t).sin() + 5.0,
            model.horizon,
            101,
        );
        assert!(sigma_max >= 0.25, "paper uses sigma=0.25, got {sigma_max}");
        let mut clamped_set = set.clone();
        clamped_set.nodes[0].sigma = sigma_max;
        for i in 0..200 {
            let mut r = sample_boundary(&clamped_set, 4, i);
            for a in &mut r.draws[0] {
                *a = a.clamp(1.0 - 3.0 * sigma_max, 1.0 + 3.0 * sigma_max);
            }
            for k in 0..101 {
                let t = 4.0 * k as f64 / 100.0;
                assert!(r.evaluate(&clamped_set, 0, t) >= -1e-9, "i={i} t={t}");
            }
        }
    }

    #[test]
    fn sigma_bound_edge_cases() {
        // interior min of zero forces sigma_max = 0
        let coeffs = fourier_coefficients(|t| (t - 0.5).abs(), 1.0, 15);
        let s = sigma_nonneg_bound(&coeffs, |t| (t - 0.5).abs(), 1.0, 101);
        assert_eq!(s, 0.0);
        // all basis terms vanish at the argmin -> +inf sentinel
        let s = sigma_nonneg_bound(&[0.0, 0.0], |_| 1.0, 1.0, 11);
        assert!(s.is_infinite());
        // single positive-signed coefficient: denominator is 3 * a0 * psi
        let t_min = 0.3;
        let s = sigma_nonneg_bound(&[2.0], |t| 1.0 + (t - t_min) * (t - t_min), 1.0, 101);
        let denom = 3.0 * 2.0 * fourier_basis(0, t_min, 1.0);
        assert!((s - 1.0 / denom).abs() < 1e-3, "s={s}");
    }

    #[test]
    fn evaluated_distribution_matches_sampling() {
        let set = example3_set();
        let tau = 3.8;
        let (mean, cov) = evaluated_load_distribution(&set, &[tau]);
        // variance formula vs a large sample
        let n = 1_000_000u64;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for i in 0..n {
            let r = sample_boundary(&set, 21, i);
            let v = r.evaluate(&set, 0, tau);
            acc += v;
            acc2 += v * v;
        }
        let m = acc / n as f64;
        let v = acc2 / n as f64 - m * m;
        assert!((m - mean[0]).abs() < 5e-3 * mean[0].abs());
        assert!(
            (v - cov[(0, 0)]).abs() < 0.01 * cov[(0, 0)],
            "sampled {v} vs formula {}",
            cov[(0, 0)]
        );
        // sigma = 0 kills the covariance
        let mut frozen = set.clone();
        frozen.nodes[0].sigma = 0.0;
        let (_, cov0) = evaluated_load_distribution(&frozen, &[tau]);
        assert_eq!(cov0[(0, 0)], 0.0);
    }
}
