//! Optimal steering from the stationarity condition `dH/dbeta = 0`.
//!
//! With `delta > 0` the stationarity condition is transcendental and can have
//! several zeros on `[0, 2pi]`. Its extrema (zeros of `d2H/dbeta2`) are the
//! roots of a quadratic in `tan(beta / 2)`, so splitting the circle at those
//! extrema leaves intervals on which the residual is monotone. Each interval
//! holds at most one zero, found by bisection; the zero with the lowest
//! Hamiltonian wins. With regularization the Hamiltonian is not periodic in
//! beta, so the interval ends `0` and `2pi` also compete: when one of them
//! beats every zero it is returned even though it is not stationary.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use arrayvec::ArrayVec;

use crate::dynamics::{hamiltonian, regularization};
use crate::error::SteeringError;
use crate::problem::{Costate, ProblemConfig, State};

/// Residual magnitude below which a point counts as a zero.
pub const STATIONARITY_TOL: f64 = 1e-10;
/// Bracket width at which bisection stops.
pub const BISECTION_TOL: f64 = 1e-12;
pub const BISECTION_MAX_ITER: usize = 200;
const DEGENERATE_LEADING: f64 = 1e-14;
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SteeringSolution {
    pub beta: f64,
    pub residual: f64,
    pub hamiltonian_value: f64,
    /// Every angle that was compared: the stationary ones plus, with
    /// regularization, both interval ends.
    pub candidates: Vec<f64>,
}

/// Coefficients shared by the residual and its derivative at one state.
#[derive(Clone, Copy, Debug)]
struct Coeffs {
    /// Thrust acceleration `T / m`.
    acc: f64,
    pu: f64,
    pv: f64,
    /// Regularization curvature `delta exp(1-r) / (r-1+eps)`.
    weight: f64,
}

impl Coeffs {
    fn new(x: &State, p: &Costate, cfg: &ProblemConfig) -> Self {
        Self {
            acc: cfg.nondim_thrust / x.m,
            pu: p.pu,
            pv: p.pv,
            weight: regularization(x.r, FRAC_PI_2, &cfg.reg).weight,
        }
    }

    #[inline]
    fn residual(&self, beta: f64) -> f64 {
        let (s, c) = beta.sin_cos();
        self.acc * (-self.pu * s + self.pv * c) + self.weight * (beta - FRAC_PI_2)
    }

    #[inline]
    fn slope(&self, beta: f64) -> f64 {
        let (s, c) = beta.sin_cos();
        self.acc * (-self.pu * c - self.pv * s) + self.weight
    }

    /// The beta-dependent part of the Hamiltonian.
    #[inline]
    fn h_part(&self, beta: f64) -> f64 {
        let (s, c) = beta.sin_cos();
        let off = beta - FRAC_PI_2;
        self.acc * (self.pu * c + self.pv * s) + 0.5 * self.weight * off * off
    }
}

/// `dH/dbeta`.
pub fn stationarity_residual(x: &State, p: &Costate, beta: f64, cfg: &ProblemConfig) -> f64 {
    Coeffs::new(x, p, cfg).residual(beta)
}

/// `d2H/dbeta2`, the derivative of [`stationarity_residual`].
pub fn residual_slope(x: &State, p: &Costate, beta: f64, cfg: &ProblemConfig) -> f64 {
    Coeffs::new(x, p, cfg).slope(beta)
}

fn wrap(beta: f64) -> f64 {
    let b = beta.rem_euclid(TAU);
    if b == TAU {
        0.0
    } else {
        b
    }
}

fn critical_angles_of(c: &Coeffs) -> ArrayVec<f64, 3> {
    // (k + a p_u) x^2 - 2 a p_v x + (k - a p_u) = 0 with x = tan(beta/2)
    let qa = c.weight + c.acc * c.pu;
    let qb = -2.0 * c.acc * c.pv;
    let qc = c.weight - c.acc * c.pu;
    let mut out = ArrayVec::new();
    let to_angle = |x: f64| wrap(2.0 * x.atan());
    if qa.abs() < DEGENERATE_LEADING {
        if qb != 0.0 {
            out.push(to_angle(-qc / qb));
        }
        // tan(beta/2) -> infinity
        out.push(PI);
        return out;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return out;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (qb + qb.signum() * sq);
    if q == 0.0 {
        // qb == 0 and disc == 0 means qc == 0: double root at zero
        out.push(0.0);
        return out;
    }
    out.push(to_angle(q / qa));
    out.push(to_angle(qc / q));
    out
}

/// Stationary points of the residual (extrema of `dH/dbeta`) in `[0, 2pi)`.
pub fn critical_angles(x: &State, p: &Costate, cfg: &ProblemConfig) -> Vec<f64> {
    critical_angles_of(&Coeffs::new(x, p, cfg)).to_vec()
}

fn bisect(c: &Coeffs, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    let mut best = (lo, f_lo.abs());
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = c.residual(mid);
        if f_mid.abs() < best.1 {
            best = (mid, f_mid.abs());
        }
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        // keep splitting past the angular tolerance until the residual is
        // comfortably below the zero threshold
        if hi - lo < BISECTION_TOL && best.1 < 1e-2 * STATIONARITY_TOL {
            break;
        }
    }
    best.0
}

/// All zeros of the stationarity residual on `[0, 2pi]`, in increasing order.
fn zeros_of(c: &Coeffs) -> ArrayVec<f64, 8> {
    let mut knots: ArrayVec<f64, 5> = ArrayVec::new();
    knots.push(0.0);
    let mut crit = critical_angles_of(c);
    crit.as_mut_slice().sort_by(f64::total_cmp);
    for a in crit {
        if a > 0.0 && a < TAU && a - knots.last().copied().unwrap_or(0.0) > 0.0 {
            knots.push(a);
        }
    }
    knots.push(TAU);

    let values: ArrayVec<f64, 5> = knots.iter().map(|&b| c.residual(b)).collect();
    let mut zeros: ArrayVec<f64, 8> = ArrayVec::new();
    let push = |z: f64, zeros: &mut ArrayVec<f64, 8>| {
        if zeros.last().is_none_or(|&last| z - last > 1e-9) {
            zeros.push(z);
        }
    };
    for i in 0..knots.len() {
        if values[i].abs() < STATIONARITY_TOL {
            push(knots[i], &mut zeros);
        }
        if i + 1 < knots.len() {
            let (fa, fb) = (values[i], values[i + 1]);
            if fa.abs() >= STATIONARITY_TOL && fb.abs() >= STATIONARITY_TOL && (fa < 0.0) != (fb < 0.0) {
                push(bisect(c, knots[i], knots[i + 1], fa), &mut zeros);
            }
        }
    }
    zeros
}

/// Zeros plus, when the Hamiltonian is not periodic, the interval ends.
fn candidates_of(c: &Coeffs) -> ArrayVec<f64, 10> {
    let mut out: ArrayVec<f64, 10> = zeros_of(c).into_iter().collect();
    if c.weight > 0.0 && !out.is_empty() {
        for end in [0.0, TAU] {
            if !out.contains(&end) {
                out.push(end);
            }
        }
    }
    out
}

/// Picks the Hamiltonian-minimizing candidate; ties go to the angle nearest `pi/2`.
fn select(c: &Coeffs, zeros: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &z in zeros {
        let h = c.h_part(z);
        best = match best {
            None => Some((z, h)),
            Some((bz, bh)) => {
                if h < bh - TIE_TOL || ((h - bh).abs() <= TIE_TOL && (z - FRAC_PI_2).abs() < (bz - FRAC_PI_2).abs()) {
                    Some((z, h))
                } else {
                    Some((bz, bh))
                }
            }
        };
    }
    best.map(|(z, _)| z)
}

fn validate(c: &Coeffs) -> Result<(), SteeringError> {
    if !(c.acc.is_finite() && c.pu.is_finite() && c.pv.is_finite() && c.weight.is_finite()) {
        return Err(SteeringError::NonFinite);
    }
    if c.pu == 0.0 && c.pv == 0.0 && c.weight == 0.0 {
        return Err(SteeringError::Undefined);
    }
    Ok(())
}

/// Optimal steering angle only; the allocation-free path used by the
/// integrators.
pub fn optimal_beta(x: &State, p: &Costate, cfg: &ProblemConfig) -> Result<f64, SteeringError> {
    let c = Coeffs::new(x, p, cfg);
    validate(&c)?;
    select(&c, &candidates_of(&c)).ok_or(SteeringError::NoStationary)
}

pub fn optimal_steering(x: &State, p: &Costate, cfg: &ProblemConfig) -> Result<SteeringSolution, SteeringError> {
    let c = Coeffs::new(x, p, cfg);
    validate(&c)?;
    let candidates = candidates_of(&c);
    let beta = select(&c, &candidates).ok_or(SteeringError::NoStationary)?;
    Ok(SteeringSolution {
        beta,
        residual: c.residual(beta),
        hamiltonian_value: hamiltonian(x, p, beta, cfg),
        candidates: candidates.to_vec(),
    })
}

/// Closed-form minimizer when there is no regularization: thrust opposite
/// the primer vector `(p_u, p_v)`.
pub fn primer_angle(pu: f64, pv: f64) -> f64 {
    wrap((-pv).atan2(-pu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(delta: f64) -> ProblemConfig {
        ProblemConfig::lunar_default().with_delta(delta).unwrap()
    }

    fn ang_dist(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(TAU);
        d.min(TAU - d)
    }

    const X1: State = State::new(1.0, 0.0, 0.0, 1.0);

    #[test]
    fn residual_examples() {
        let c0 = cfg(0.0);
        assert_eq!(stationarity_residual(&X1, &Costate::new(0.0, 1.0, 0.0, 0.0), 0.0, &c0), 0.0);
        let p = Costate::new(0.0, 0.6, -0.8, 0.0);
        let beta = (-0.8f64).atan2(0.6);
        assert!(stationarity_residual(&X1, &p, beta, &c0).abs() < 1e-15);

        let c = cfg(1e-5);
        let x = State::new(1.001, 0.0, 0.0, 0.8);
        let p = Costate::new(0.0, 0.7, 0.2, 0.0);
        let expect = -(c.nondim_thrust / 0.8) * 0.7;
        assert!((stationarity_residual(&x, &p, FRAC_PI_2, &c) - expect).abs() < 1e-15);
    }

    #[test]
    fn critical_angles_degenerate_linear() {
        let c0 = cfg(0.0);
        let p = Costate::new(0.0, 0.0, 1.0, 0.0);
        let crit = critical_angles(&X1, &p, &c0);
        assert_eq!(crit, vec![0.0, PI]);
        for b in crit {
            assert!(residual_slope(&X1, &p, b, &c0).abs() < 1e-15);
        }
    }

    #[test]
    fn critical_angles_unit_pu() {
        let c0 = cfg(0.0);
        let p = Costate::new(0.0, 1.0, 0.0, 0.0);
        let mut crit = critical_angles(&X1, &p, &c0);
        crit.sort_by(f64::total_cmp);
        assert_eq!(crit.len(), 2);
        assert!((crit[0] - FRAC_PI_2).abs() < 1e-15);
        assert!((crit[1] - 3.0 * FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn critical_angles_cover_grid_extrema() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        for k in 0..50 {
            let c = cfg(if k % 2 == 0 { 0.0 } else { 1e-5 });
            let x = State::new(1.0 + 10f64.powf(rng.gen_range(-5.0..-1.0)), 0.0, 0.0, rng.gen_range(0.5..1.0));
            let p = Costate::new(0.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let crit = critical_angles(&x, &p, &c);
            let f: Vec<f64> = (0..=n).map(|i| stationarity_residual(&x, &p, TAU * i as f64 / n as f64, &c)).collect();
            for i in 1..n {
                let is_ext = (f[i] - f[i - 1]) * (f[i + 1] - f[i]) < 0.0;
                if is_ext {
                    let b = TAU * i as f64 / n as f64;
                    let near = crit.iter().any(|&a| ang_dist(a, b) < 1e-3);
                    assert!(near, "extremum at {b} missing from {crit:?}");
                }
            }
        }
    }

    #[test]
    fn axis_aligned_primer() {
        let c0 = cfg(0.0);
        let s = optimal_steering(&X1, &Costate::new(0.0, 0.0, 1.0, 0.0), &c0).unwrap();
        assert!((s.beta - 3.0 * FRAC_PI_2).abs() < 1e-11, "{}", s.beta);
        let s = optimal_steering(&X1, &Costate::new(0.0, 1.0, 0.0, 0.0), &c0).unwrap();
        assert!((s.beta - PI).abs() < 1e-11, "{}", s.beta);
        assert!(s.candidates.len() >= 2);
    }

    #[test]
    fn unregularized_matches_primer() {
        let c0 = cfg(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let x = State::new(1.0 + rng.gen_range(0.0..0.02), rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..0.2), rng.gen_range(0.4..1.0));
            let p = Costate::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0);
            let s = optimal_steering(&x, &p, &c0).unwrap();
            assert!(ang_dist(s.beta, primer_angle(p.pu, p.pv)) < 1e-9);
            assert!(s.residual.abs() < STATIONARITY_TOL);
        }
    }

    #[test]
    fn interval_end_wins_when_no_zero_is_lower() {
        // forward-pointing thrust with a strong pull toward pi/2: H is
        // lowest at beta = 0, where it is not stationary
        let c = cfg(1e-5);
        let x = State::new(1.0 + 1.63e-4, 0.5, 0.0, 0.7);
        let p = Costate::new(0.0, -6.27e-2, 8.438e-2, 0.0);
        let sol = optimal_steering(&x, &p, &c).unwrap();
        assert!(sol.candidates.contains(&0.0) && sol.candidates.contains(&TAU));
        let n = 200_000;
        let grid_min = (0..=n).map(|i| hamiltonian(&x, &p, TAU * i as f64 / n as f64, &c)).fold(f64::INFINITY, f64::min);
        assert!(sol.hamiltonian_value <= grid_min + 1e-15, "{} vs {grid_min}", sol.hamiltonian_value);
        assert_eq!(sol.beta, 0.0);
        assert!(sol.residual.abs() > STATIONARITY_TOL);
        assert_eq!(optimal_beta(&x, &p, &c).unwrap(), 0.0);
    }

    #[test]
    fn regularized_matches_grid_argmin() {
        let c = cfg(1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        for _ in 0..20 {
            let x = State::new(1.0 + 10f64.powf(rng.gen_range(-4.0..-1.0)), 0.0, 0.0, rng.gen_range(0.5..1.0));
            let p = Costate::new(0.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let s = optimal_steering(&x, &p, &c).unwrap();
            let (mut gb, mut gh) = (0.0, f64::INFINITY);
            for i in 0..=n {
                let b = TAU * i as f64 / n as f64;
                let h = hamiltonian(&x, &p, b, &c);
                if h < gh {
                    gh = h;
                    gb = b;
                }
            }
            assert!(s.hamiltonian_value <= gh + 1e-12);
            assert!((s.beta - gb).abs() <= TAU / n as f64, "{} vs {}", s.beta, gb);
        }
    }

    #[test]
    fn vanishing_delta_is_continuous() {
        let c = cfg(1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let x = State::new(1.0 + rng.gen_range(1e-2..0.05), 0.2, -0.1, rng.gen_range(0.5..1.0));
            let p = Costate::new(0.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            if p.pu.hypot(p.pv) < 1e-2 {
                continue;
            }
            let s = optimal_steering(&x, &p, &c).unwrap();
            assert!(ang_dist(s.beta, primer_angle(p.pu, p.pv)) < 1e-5);
        }
    }

    #[test]
    fn surface_approach_forces_vertical() {
        let c = cfg(1e-5);
        let p = Costate::new(0.0, -0.6, 0.3, 0.0);
        let mut last = f64::INFINITY;
        for e in 2..=6 {
            let x = State::new(1.0 + 10f64.powi(-e), 0.0, 0.0, 0.6);
            let s = optimal_steering(&x, &p, &c).unwrap();
            let dev = (s.beta - FRAC_PI_2).abs();
            assert!(dev < last, "not monotone at 1e-{e}: {dev} >= {last}");
            last = dev;
        }
        let s = optimal_steering(&State::new(1.0, 0.0, 0.0, 0.6), &p, &c).unwrap();
        assert!((s.beta - FRAC_PI_2).abs() < 1e-2);
        assert!((s.beta - FRAC_PI_2).abs() < last);
    }

    #[test]
    fn degenerate_inputs() {
        let c0 = cfg(0.0);
        assert_eq!(optimal_steering(&X1, &Costate::new(1.0, 0.0, 0.0, 0.0), &c0), Err(SteeringError::Undefined));
        // with regularization the zero primer vector still has a unique answer
        let c = cfg(1e-5);
        let x = State::new(1.01, 0.0, 0.0, 1.0);
        let s = optimal_steering(&x, &Costate::default(), &c).unwrap();
        assert!((s.beta - FRAC_PI_2).abs() < 1e-12);
        let bad = Costate::new(0.0, f64::NAN, 0.0, 0.0);
        assert_eq!(optimal_steering(&x, &bad, &c), Err(SteeringError::NonFinite));
    }

    #[test]
    fn tangency_counts_as_zero() {
        // delta = 0, p_v = 0: the residual is zero at both interval ends
        let c0 = cfg(0.0);
        let s = optimal_steering(&X1, &Costate::new(0.0, -1.0, 0.0, 0.0), &c0).unwrap();
        assert!(ang_dist(s.beta, 0.0) < 1e-12);
    }
}
