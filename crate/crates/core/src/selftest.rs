//! Quick oracle checks runnable from the command line.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::channel::{one_ring_covariance, path_loss_db, GainTable};
use crate::clustering::{opportunistic_init, opportunistic_track};
use crate::combining::{lsfd_weights, uplink_sinr, EffectiveGainStats};
use crate::geometry::{generate_deployment, wrap_distance, DeploymentConfig, Point};
use crate::linalg::{trace_re, CMat, CVec};
use crate::pilot::mmse_estimate;
use crate::quadrature::bessel_j0;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail: detail.into(),
    }
}

fn bessel() -> CheckOutcome {
    let err = (bessel_j0(30.542_040_179_424_37) + 0.013_346_033_556_389_29).abs();
    check("bessel_j0", err < 1e-13, format!("error {err:e}"))
}

fn path_loss() -> CheckOutcome {
    let a = path_loss_db(100.0, 0.0);
    let b = path_loss_db(0.5f64.max(1.0), 0.0);
    check(
        "path_loss",
        (a + 110.0).abs() < 1e-12 && (b + 34.0).abs() < 1e-12,
        format!("100 m: {a} dB, clamped: {b} dB"),
    )
}

fn torus() -> CheckOutcome {
    let d = wrap_distance(Point::new(50.0, 50.0), Point::new(950.0, 50.0), 1000.0);
    check("wrap_distance", (d - 100.0).abs() < 1e-9, format!("{d} m"))
}

fn covariance_trace() -> CheckOutcome {
    match one_ring_covariance(2.5e-9, 0.3, 10f64.to_radians(), 8, 0.5) {
        Ok(c) => {
            let rel = (trace_re(&c.r) - 8.0 * 2.5e-9).abs() / (8.0 * 2.5e-9);
            check("one_ring_trace", rel < 1e-9, format!("relative trace error {rel:e}"))
        }
        Err(e) => check("one_ring_trace", false, e.to_string()),
    }
}

fn scalar_mmse() -> CheckOutcome {
    let (beta, p, tau, noise) = (2.0, 0.5, 4usize, 1.0);
    let r = CMat::from_element(1, 1, Complex64::new(beta, 0.0));
    let y = CVec::from_element(1, Complex64::new(0.7, -0.2));
    match mmse_estimate(&r, &[(&r, p)], &y, tau, p, noise) {
        Ok(est) => {
            let s = (tau as f64 * p).sqrt();
            let want = s * beta / (tau as f64 * p * beta + noise);
            let err = (est.h_hat[0] - y[0] * want).norm();
            check("scalar_mmse", err < 1e-12, format!("error {err:e}"))
        }
        Err(e) => check("scalar_mmse", false, e.to_string()),
    }
}

fn lsfd_scale_invariance() -> CheckOutcome {
    let mut rng = SimRng::seed_from_u64(11);
    let l = 3;
    let rand_vec = |rng: &mut SimRng| {
        CVec::from_fn(l, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    };
    let mean_own = rand_vec(&mut rng);
    let other = rand_vec(&mut rng);
    let diag = |m: &CVec| CMat::from_fn(l, l, |i, j| if i == j { m[i] * m[i].conj() * 1.5 } else { m[i] * m[j].conj() });
    let stats = EffectiveGainStats {
        ue: 0,
        num_orus: l,
        support: (0..l).collect(),
        interferers: vec![0, 1],
        second_moments: vec![diag(&mean_own), diag(&other)],
        mean_gains: vec![mean_own, other],
        noise_diag: vec![0.3, 0.2, 0.1],
        max_rel_stderr: 0.0,
        draws: 0,
    };
    let powers = [0.1, 0.1];
    let result = lsfd_weights(&stats, &powers).and_then(|a| {
        let base = uplink_sinr(&a, &stats, &powers)?.sinr;
        let scaled = uplink_sinr(&(a * Complex64::new(-3.0, 2.0)), &stats, &powers)?.sinr;
        Ok((scaled - base).abs() / base)
    });
    match result {
        Ok(rel) => check("lsfd_scale_invariance", rel < 1e-10, format!("relative deviation {rel:e}")),
        Err(e) => check("lsfd_scale_invariance", false, e.to_string()),
    }
}

fn tracking_invariants() -> CheckOutcome {
    let cfg = DeploymentConfig {
        num_orus: 16,
        num_odus: 4,
        num_ues: 10,
        antennas_per_oru: 2,
        ..DeploymentConfig::default()
    };
    let mut rng = SimRng::seed_from_u64(5);
    let topology = match generate_deployment(&cfg, &mut rng) {
        Ok(t) => t,
        Err(e) => return check("tracking_invariants", false, e.to_string()),
    };
    let mut gains = GainTable::from_fn(16, 10, |_, _| rng.random_range(-120.0..-60.0));
    let mut state = match opportunistic_init(&gains, &topology, 2, 9) {
        Ok(s) => s,
        Err(e) => return check("tracking_invariants", false, e.to_string()),
    };
    for t in 1..=200 {
        for g in gains.db.iter_mut() {
            *g += rng.random_range(-3.0..3.0);
        }
        opportunistic_track(&mut state, &gains, &topology, 2.0, 2, 9, t);
        if let Err(msg) = state.check_invariants(Some(2)) {
            return check("tracking_invariants", false, format!("step {t}: {msg}"));
        }
    }
    check("tracking_invariants", true, "200 steps")
}

/// Runs every check; the run passes when all of them do.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        bessel(),
        path_loss(),
        torus(),
        covariance_trace(),
        scalar_mmse(),
        lsfd_scale_invariance(),
        tracking_invariants(),
    ]
}
