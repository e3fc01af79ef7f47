//! Digital beamforming over an arbitrary effective channel via uplink-downlink
//! SINR duality.
//!
//! The dual uplink problem is solved by cyclic self-SINR maximization: the
//! receive directions are the MMSE (max-SINR) filters for the current uplink
//! powers, and the powers are re-allocated by water-filling over the resulting
//! effective gains. The converged dual solution is mapped back to downlink
//! powers through the coupling system, and the final beamformer is scaled to
//! the transmit power budget.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, PartialEq)]
pub enum DualityError {
    #[error("total power must be positive (got {0})")]
    BadPower(f64),
    #[error("effective gain {0} is negative")]
    NegativeGain(f64),
    #[error("downlink coupling matrix is singular")]
    SingularCoupling,
}

/// Options for the cyclic solver.
///
/// The stop criterion is the infinity-norm change of the uplink power vector;
/// the total power is constant under exact water-filling, so progress is
/// measured on the allocation itself.
#[derive(Debug, Clone, Copy)]
pub struct CssmOpts {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CssmOpts {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 200,
        }
    }
}

/// Converged dual uplink state.
#[derive(Debug, Clone)]
pub struct DualState {
    /// Unit-norm receive directions, one per user.
    pub directions: Vec<DVector<C64>>,
    /// Uplink powers `q_k`, summing to the budget.
    pub uplink_powers: Vec<f64>,
    /// Water level `nu` of the final power allocation.
    pub water_level: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Dual objective `sum log2(1 + SINR_ul)` after each iteration.
    pub objective_trace: Vec<f64>,
}

/// Interference-plus-noise covariance seen by user `k` on the uplink.
fn uplink_covariance(
    eff_channels: &[DVector<C64>],
    uplink_powers: &[f64],
    noise_var: f64,
    k: usize,
) -> DMatrix<C64> {
    let dim = eff_channels[k].len();
    let mut m = DMatrix::identity(dim, dim) * C64::new(noise_var, 0.0);
    for (j, h) in eff_channels.iter().enumerate() {
        if j != k && uplink_powers[j] > 0.0 {
            m += (h * h.adjoint()) * C64::new(uplink_powers[j], 0.0);
        }
    }
    m
}

/// Max-SINR (MMSE) receive direction for user `k`, normalized to unit norm.
///
/// The noise term keeps the covariance invertible for any powers.
pub fn max_sinr_direction(
    eff_channels: &[DVector<C64>],
    uplink_powers: &[f64],
    noise_vars: &[f64],
    k: usize,
) -> DVector<C64> {
    let m = uplink_covariance(eff_channels, uplink_powers, noise_vars[k], k);
    let x = m
        .lu()
        .solve(&eff_channels[k])
        .expect("covariance with noise term is invertible");
    let n = x.norm();
    if n > 0.0 {
        x / C64::new(n, 0.0)
    } else {
        // Zero effective channel: any unit vector is max-SINR; pick e_0.
        let mut e = DVector::zeros(eff_channels[k].len());
        e[0] = C64::new(1.0, 0.0);
        e
    }
}

/// Effective gain `eps_k = h~_k^H (sum_{j!=k} q_j h~_j h~_j^H + sigma^2 I)^{-1} h~_k`.
pub fn effective_gain(
    eff_channels: &[DVector<C64>],
    uplink_powers: &[f64],
    noise_vars: &[f64],
    k: usize,
) -> f64 {
    let m = uplink_covariance(eff_channels, uplink_powers, noise_vars[k], k);
    let x = m
        .lu()
        .solve(&eff_channels[k])
        .expect("covariance with noise term is invertible");
    eff_channels[k].dotc(&x).re
}

/// Water-filling: `q_k = (1/nu - 1/eps_k)^+` with `nu` chosen so the powers
/// sum to `total_power`.
///
/// Uses the sorted active-set closed form, which satisfies the power budget
/// and the KKT conditions exactly. Nonpositive gains receive zero power.
/// Returns `(q, nu)`.
pub fn waterfill(gains: &[f64], total_power: f64) -> Result<(Vec<f64>, f64), DualityError> {
    if !(total_power > 0.0) {
        return Err(DualityError::BadPower(total_power));
    }
    for &g in gains {
        if g < 0.0 {
            return Err(DualityError::NegativeGain(g));
        }
    }
    let mut order: Vec<usize> = (0..gains.len()).filter(|&k| gains[k] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap());
    if order.is_empty() {
        return Err(DualityError::NegativeGain(0.0));
    }

    // Largest active set m with water level above 1/eps of its weakest member.
    let mut inv_sum = 0.0;
    let mut level = 0.0;
    let mut active = 0;
    for (m, &k) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[k];
        let candidate = (total_power + inv_sum) / (m + 1) as f64; // 1/nu
        if candidate > 1.0 / gains[k] {
            level = candidate;
            active = m + 1;
        } else {
            break;
        }
    }
    debug_assert!(active > 0);

    let mut q = vec![0.0; gains.len()];
    for &k in order.iter().take(active) {
        q[k] = level - 1.0 / gains[k];
    }
    Ok((q, 1.0 / level))
}

/// Dual uplink SINRs of an arbitrary `(directions, powers)` state, via the
/// Rayleigh-quotient form.
pub fn uplink_sinrs(
    eff_channels: &[DVector<C64>],
    state: &DualState,
    noise_vars: &[f64],
) -> Vec<f64> {
    (0..eff_channels.len())
        .map(|k| {
            let f = &state.directions[k];
            let signal = state.uplink_powers[k] * f.dotc(&eff_channels[k]).norm_sqr();
            let mut denom = noise_vars[k] * f.norm_squared();
            for (j, h) in eff_channels.iter().enumerate() {
                if j != k {
                    denom += state.uplink_powers[j] * f.dotc(h).norm_sqr();
                }
            }
            signal / denom
        })
        .collect()
}

/// Cyclic self-SINR maximization on the dual uplink.
///
/// Alternates max-SINR directions (all users) and water-filled powers until
/// the power vector stops moving or `max_iters` is hit. The last state is
/// returned either way, flagged by `converged`.
pub fn cssm_solve(
    eff_channels: &[DVector<C64>],
    noise_vars: &[f64],
    total_power: f64,
    opts: &CssmOpts,
) -> Result<DualState, DualityError> {
    let k_users = eff_channels.len();
    let mut q = vec![total_power / k_users as f64; k_users];
    let mut directions = vec![DVector::zeros(eff_channels[0].len()); k_users];
    let mut water_level = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut objective_trace = Vec::new();

    for iter in 0..opts.max_iters {
        let mut gains = vec![0.0; k_users];
        for k in 0..k_users {
            let m = uplink_covariance(eff_channels, &q, noise_vars[k], k);
            let x = m
                .lu()
                .solve(&eff_channels[k])
                .expect("covariance with noise term is invertible");
            gains[k] = eff_channels[k].dotc(&x).re.max(0.0);
            let n = x.norm();
            directions[k] = if n > 0.0 {
                &x / C64::new(n, 0.0)
            } else {
                max_sinr_direction(eff_channels, &q, noise_vars, k)
            };
        }
        let (q_new, nu) = waterfill(&gains, total_power)?;
        water_level = nu;
        let diff = q
            .iter()
            .zip(&q_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = q_new;
        iterations = iter + 1;

        let state_now = DualState {
            directions: directions.clone(),
            uplink_powers: q.clone(),
            water_level,
            converged: false,
            iterations,
            objective_trace: Vec::new(),
        };
        let obj: f64 = uplink_sinrs(eff_channels, &state_now, noise_vars)
            .iter()
            .map(|s| (1.0 + s).log2())
            .sum();
        objective_trace.push(obj);

        if diff < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(DualState {
        directions,
        uplink_powers: q,
        water_level,
        converged,
        iterations,
        objective_trace,
    })
}

/// Map the dual solution back to downlink beamformers.
///
/// Builds the coupling matrix with off-diagonals `-|h~_i^H f_j|^2` and
/// diagonals `|h~_i^H f_i|^2 / SINR_i_ul`, solves `B p = sigma_vec` (row i is
/// user i's downlink SINR equation; the transposed system is the uplink one
/// and would just return the uplink powers), and returns the unnormalized
/// matrix whose k-th column is `sqrt(p_k) f_k`. Users with zero uplink power
/// get zero columns.
pub fn downlink_power_map(
    dual: &DualState,
    eff_channels: &[DVector<C64>],
    noise_vars: &[f64],
) -> Result<DMatrix<C64>, DualityError> {
    let k_users = eff_channels.len();
    let dim = eff_channels[0].len();
    let sinrs = uplink_sinrs(eff_channels, dual, noise_vars);
    let support: Vec<usize> = (0..k_users).filter(|&k| sinrs[k] > 0.0).collect();

    let n = support.len();
    let mut coupling = DMatrix::zeros(n, n);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            let gain = eff_channels[i].dotc(&dual.directions[j]).norm_sqr();
            coupling[(a, b)] = if i == j { gain / sinrs[i] } else { -gain };
        }
    }
    let sigma = DVector::from_iterator(n, support.iter().map(|&k| noise_vars[k]));
    let p = coupling
        .lu()
        .solve(&sigma)
        .ok_or(DualityError::SingularCoupling)?;
    if p.iter().any(|x| !x.is_finite()) {
        return Err(DualityError::SingularCoupling);
    }

    let mut f_bb = DMatrix::zeros(dim, k_users);
    for (a, &k) in support.iter().enumerate() {
        let col = &dual.directions[k] * C64::new(p[a].max(0.0).sqrt(), 0.0);
        f_bb.set_column(k, &col);
    }
    Ok(f_bb)
}

/// Scale `F_BB` so that `||F_RF F_BB||_F^2 = P` exactly.
pub fn normalize_to_power(
    f_rf: &DMatrix<C64>,
    f_bb_raw: &DMatrix<C64>,
    total_power: f64,
) -> DMatrix<C64> {
    let norm = (f_rf * f_bb_raw).norm();
    if norm == 0.0 {
        return f_bb_raw.clone();
    }
    f_bb_raw * C64::new(total_power.sqrt() / norm, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_eff(rng: &mut StdRng, k: usize, dim: usize) -> Vec<DVector<C64>> {
        (0..k)
            .map(|_| {
                DVector::from_fn(dim, |_, _| {
                    C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 2.0
                })
            })
            .collect()
    }

    #[test]
    fn single_user_direction_is_matched_filter() {
        let mut rng = StdRng::seed_from_u64(1);
        let eff = random_eff(&mut rng, 1, 4);
        let f = max_sinr_direction(&eff, &[1.0], &[1.0], 0);
        let mf = &eff[0] / C64::new(eff[0].norm(), 0.0);
        // Equal up to a unit phase.
        assert!((f.dotc(&mf).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn orthogonal_channels_decouple_directions() {
        let mut e1 = DVector::zeros(3);
        e1[0] = C64::new(2.0, 0.0);
        let mut e2 = DVector::zeros(3);
        e2[1] = C64::new(0.0, 1.5);
        let eff = vec![e1.clone(), e2.clone()];
        for k in 0..2 {
            let f = max_sinr_direction(&eff, &[0.7, 0.3], &[1.0, 1.0], k);
            let target = &eff[k] / C64::new(eff[k].norm(), 0.0);
            assert!((f.dotc(&target).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn direction_beats_random_probes() {
        let mut rng = StdRng::seed_from_u64(2);
        let eff = random_eff(&mut rng, 3, 4);
        let q = [0.5, 1.2, 0.8];
        let noise = [1.0, 0.7, 1.3];
        let k = 1;
        let f_star = max_sinr_direction(&eff, &q, &noise, k);
        let sinr_of = |f: &DVector<C64>| {
            let sig = q[k] * f.dotc(&eff[k]).norm_sqr();
            let mut den = noise[k] * f.norm_squared();
            for j in 0..3 {
                if j != k {
                    den += q[j] * f.dotc(&eff[j]).norm_sqr();
                }
            }
            sig / den
        };
        let best = sinr_of(&f_star);
        for _ in 0..10_000 {
            let probe = DVector::from_fn(4, |_, _| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            assert!(sinr_of(&probe) <= best * (1.0 + 1e-9));
        }
    }

    #[test]
    fn waterfill_equal_gains_split_evenly() {
        let (q, _) = waterfill(&[2.0, 2.0, 2.0], 3.0).unwrap();
        for x in q {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn waterfill_starves_weak_user_at_low_power() {
        let (q, nu) = waterfill(&[1e9, 1e-6], 0.01).unwrap();
        assert!((q[0] - 0.01).abs() < 1e-9);
        assert_eq!(q[1], 0.0);
        assert!(1e-6 <= nu);
    }

    #[test]
    fn waterfill_matches_bisection_oracle() {
        // Independent route: bisection on the water level.
        let gains = [4.0, 2.0, 1.0];
        let p = 1.0;
        let (q, _) = waterfill(&gains, p).unwrap();
        let total =
            |level: f64| -> f64 { gains.iter().map(|g| (level - 1.0 / g).max(0.0)).sum() };
        let (mut lo, mut hi) = (0.0, 1.0 / gains[2] + p);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let level = 0.5 * (lo + hi);
        for (k, g) in gains.iter().enumerate() {
            assert!((q[k] - (level - 1.0 / g).max(0.0)).abs() < 1e-9);
        }
        assert!((q.iter().sum::<f64>() - p).abs() < 1e-12);
    }

    #[test]
    fn waterfill_rejects_nonpositive_power() {
        assert!(matches!(
            waterfill(&[1.0], 0.0).unwrap_err(),
            DualityError::BadPower(_)
        ));
    }

    #[test]
    fn waterfill_kkt_conditions() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.gen_range(1..6);
            let gains: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 10.0 + 1e-3).collect();
            let p = rng.gen::<f64>() * 5.0 + 0.1;
            let (q, nu) = waterfill(&gains, p).unwrap();
            assert!((q.iter().sum::<f64>() - p).abs() < 1e-9);
            for i in 0..k {
                if q[i] > 0.0 {
                    let expect = 1.0 / nu - 1.0 / gains[i];
                    assert!((q[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
                } else {
                    assert!(gains[i] <= nu * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn single_user_duality_is_exact() {
        let mut rng = StdRng::seed_from_u64(4);
        let eff = random_eff(&mut rng, 1, 3);
        let noise = [0.9];
        let state = cssm_solve(&eff, &noise, 2.0, &CssmOpts::default()).unwrap();
        assert!(state.converged);
        let ul = uplink_sinrs(&eff, &state, &noise);
        let f_bb = downlink_power_map(&state, &eff, &noise).unwrap();
        let identity = DMatrix::identity(3, 3);
        let dl = metrics::sinr_from(&eff, &noise, &identity, &f_bb, 0);
        assert!((dl - ul[0]).abs() < 1e-8 * (1.0 + ul[0]));
        // p_1 = sigma^2 SINR / |h^H f|^2
        let p1 = f_bb.column(0).norm_squared();
        let expect = noise[0] * ul[0] / eff[0].dotc(&state.directions[0]).norm_sqr();
        assert!((p1 - expect).abs() < 1e-8 * (1.0 + expect));
    }

    #[test]
    fn orthogonal_users_have_diagonal_coupling() {
        let mut e1 = DVector::zeros(2);
        e1[0] = C64::new(1.5, 0.0);
        let mut e2 = DVector::zeros(2);
        e2[1] = C64::new(1.0, 0.5);
        let eff = vec![e1, e2];
        let noise = [1.0, 0.6];
        let state = cssm_solve(&eff, &noise, 3.0, &CssmOpts::default()).unwrap();
        let ul = uplink_sinrs(&eff, &state, &noise);
        let f_bb = downlink_power_map(&state, &eff, &noise).unwrap();
        for k in 0..2 {
            if ul[k] > 0.0 {
                let p = f_bb.column(k).norm_squared();
                let expect = noise[k] * ul[k] / eff[k].dotc(&state.directions[k]).norm_sqr();
                assert!((p - expect).abs() < 1e-8 * (1.0 + expect));
            }
        }
    }

    #[test]
    fn downlink_sinrs_match_uplink_sinrs() {
        let mut rng = StdRng::seed_from_u64(5);
        for trial in 0..50 {
            let eff = random_eff(&mut rng, 3, 4);
            let noise = [1.0, 0.8, 1.2];
            let state = cssm_solve(&eff, &noise, 4.0, &CssmOpts::default()).unwrap();
            let ul = uplink_sinrs(&eff, &state, &noise);
            let f_bb = downlink_power_map(&state, &eff, &noise).unwrap();
            let identity = DMatrix::identity(4, 4);
            for k in 0..3 {
                let dl = metrics::sinr_from(&eff, &noise, &identity, &f_bb, k);
                assert!(
                    (dl - ul[k]).abs() < 1e-8 * (1.0 + ul[k]),
                    "trial {trial} user {k}: dl {dl} vs ul {}",
                    ul[k]
                );
            }
        }
    }

    #[test]
    fn uniform_noise_preserves_total_power_under_duality() {
        // 1^T B^{-1} sigma = 1^T B^{-T} sigma requires sigma proportional to
        // the all-ones vector, so the preservation identity is asserted for
        // uniform noise only.
        let mut rng = StdRng::seed_from_u64(15);
        for trial in 0..50 {
            let eff = random_eff(&mut rng, 3, 4);
            let noise = [1.0, 1.0, 1.0];
            let state = cssm_solve(&eff, &noise, 4.0, &CssmOpts::default()).unwrap();
            let f_bb = downlink_power_map(&state, &eff, &noise).unwrap();
            let p_total: f64 = (0..3).map(|k| f_bb.column(k).norm_squared()).sum();
            let q_total: f64 = state.uplink_powers.iter().sum();
            assert!(
                (p_total - q_total).abs() < 1e-6 * (1.0 + q_total),
                "trial {trial}: p {p_total} vs q {q_total}"
            );
        }
    }

    #[test]
    fn cssm_objective_trace_settles() {
        // The alternation is not a joint conditional maximizer: water-filling
        // treats the effective gains as fixed, so the true uplink objective
        // can dip by up to a few 1e-3 relative mid-run. The contract is that
        // dips stay bounded and the trace has settled once the power vector
        // converges.
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..50 {
            let eff = random_eff(&mut rng, 3, 4);
            let noise = [1.0, 1.0, 1.0];
            let state = cssm_solve(&eff, &noise, 5.0, &CssmOpts::default()).unwrap();
            let tr = &state.objective_trace;
            for w in tr.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-2 * (1.0 + w[0].abs()),
                    "trace dipped: {} -> {}",
                    w[0],
                    w[1]
                );
            }
            if state.converged && tr.len() >= 2 {
                let last = tr[tr.len() - 1];
                let prev = tr[tr.len() - 2];
                assert!((last - prev).abs() < 1e-5 * (1.0 + last.abs()));
            }
        }
    }

    #[test]
    fn normalize_hits_power_budget() {
        let mut rng = StdRng::seed_from_u64(7);
        let f_rf = DMatrix::from_fn(6, 3, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let f_bb = DMatrix::from_fn(3, 2, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let scaled = normalize_to_power(&f_rf, &f_bb, 3.7);
        assert!((metrics::transmit_power(&f_rf, &scaled) - 3.7).abs() < 1e-10 * 3.7);
    }
}
