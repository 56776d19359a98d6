//! Acceptance suite. Each test prints one `PASS [n]` or `FAIL [n]` line
//! (written straight to stderr so it shows even when output is captured)
//! and then asserts the criterion.

mod common;

use std::io::Write;
use std::sync::Arc;

use esc_core::analysis::{
    equilibrium, linearize_averaged, lyapunov_v, lyapunov_vdot, practical_stability_scan, EnergyParams,
    SamplingRegion, ScanConfig, ScanFlow,
};
use esc_core::averaging::{omega_ladder, symmetric_product_check, AveragedSystem};
use esc_core::controller::{ClosedLoop, ControllerGains, SystemState};
use esc_core::geometry::{se3_element, so3_exp, GroupElement};
use esc_core::objective::{Paraboloid, Se3Distance};
use esc_core::plant::{double_integrator, example_inertia, example_mass, kirchhoff_plant, OpenLoop, PlantModel};
use esc_core::scenario::{builtin, Setup};
use esc_core::signals::{default_shaping, gram_matrix, lambda_matrix, make_harmonic_bank, BankVariant, DEFAULT_QUADRATURE_POINTS};
use esc_core::sim::{integrate, integrate_with, step_size_for, IntegrateOptions, State, Trajectory};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("{} [{n:>2}] {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn check(n: u32, pass: bool, detail: String) {
    report(n, pass, &detail);
    assert!(pass, "criterion {n}: {detail}");
}

fn rigid_body() -> PlantModel {
    kirchhoff_plant(example_inertia(), example_mass(), Arc::new(Se3Distance::default())).unwrap()
}

fn planar() -> PlantModel {
    double_integrator(2, 0.0, Arc::new(Paraboloid::planar_source())).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> GroupElement {
    let axis = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
    let pos = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
    se3_element(&so3_exp(&axis), &pos)
}

fn setup(name: &str) -> Setup {
    builtin(name).unwrap().build().unwrap()
}

fn closed_loop_run(name: &str, t_end: f64) -> (Setup, Trajectory) {
    let scenario = builtin(name).unwrap();
    let setup = scenario.build().unwrap();
    let field = ClosedLoop::new(&setup.plant, &setup.controller).unwrap();
    let step = step_size_for(scenario.gains.omega, scenario.steps_per_period).unwrap();
    let traj = integrate(&field, setup.initial.to_state(), scenario.t0, t_end, step).unwrap();
    (setup, traj)
}

#[test]
fn criterion_01_dither_contract() {
    let banks = [
        ("canonical", BankVariant::Canonical, 6),
        ("fig1", BankVariant::PlanarQuadrature, 2),
        ("fig2", BankVariant::DescendingHarmonics, 6),
    ];
    let mut worst_gram = 0.0_f64;
    let mut worst_lambda = 0.0_f64;
    for (_, variant, m) in banks {
        let bank = make_harmonic_bank(m, variant).unwrap();
        let id = DMatrix::<f64>::identity(m, m);
        worst_gram = worst_gram.max((gram_matrix(&bank, DEFAULT_QUADRATURE_POINTS).unwrap() - &id).amax());
        worst_lambda = worst_lambda.max((lambda_matrix(&bank) - id * 0.5).amax());
    }
    check(
        1,
        worst_gram <= 1e-8 && worst_lambda <= 1e-8,
        format!("dither contract: max |Gram − I| = {worst_gram:.1e}, max |Λ − ½I| = {worst_lambda:.1e}"),
    );
}

#[test]
fn criterion_02_mu_vanishes() {
    let kirchhoff = rigid_body().mu().amax();
    let flat = planar().mu().amax();
    check(
        2,
        kirchhoff <= 1e-10 && flat == 0.0,
        format!("μ = 0: rigid body max |μ| = {kirchhoff:.1e}, flat plant max |μ| = {flat:e}"),
    );
}

#[test]
fn criterion_03_kinetic_energy_conserved() {
    let plant = rigid_body();
    let (j, m) = (example_inertia(), example_mass());
    // ½(Ω·JΩ + V·MV) from the raw body velocity
    let raw_energy = |v: &DVector<f64>| {
        let xi = plant.algebra_velocity(v);
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let vel = Vector3::new(xi[3], xi[4], xi[5]);
        0.5 * (omega.dot(&(j * omega)) + vel.dot(&(m * vel)))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let mut worst = 0.0_f64;
    for _ in 0..3 {
        let v = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let start = State::new(random_pose(&mut rng), v.clone());
        let e0 = raw_energy(&v);
        let traj = integrate_with(
            &OpenLoop { plant: &plant },
            start,
            0.0,
            100.0,
            1e-3,
            &IntegrateOptions { thin: 100, energy: None },
        )
        .unwrap();
        assert!(traj.fault.is_none());
        for s in &traj.states {
            worst = worst.max((raw_energy(&s.x) - e0).abs() / e0);
        }
    }
    check(3, worst <= 1e-6, format!("open-loop kinetic energy relative drift {worst:.1e} over t ∈ [0, 100]"));
}

#[test]
fn criterion_04_specialization_equivalence() {
    let planar = common::planar_oracle_error(2024);
    let body = common::rigid_body_oracle_error(2025);
    check(
        4,
        planar <= 1e-12 && body <= 1e-12,
        format!(
            "generic RHS vs component oracles ({} states each): planar {planar:.1e}, rigid body {body:.1e}",
            common::STATES
        ),
    );
}

#[test]
fn criterion_05_symmetric_product_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let shaping = default_shaping();
    let body = rigid_body();
    let flat = planar();
    let gains = [
        ControllerGains::new(1.0, 1.0, 1.0, 0.5, 1.0, 30.0).unwrap(),
        ControllerGains::new(0.15, 0.13, 0.13, 0.13, 1.0, 5.0).unwrap(),
    ];
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let eta = rng.random_range(-1.0..4.0);
        let gains = &gains[k % 2];
        let flat_g = GroupElement::from_slice(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        worst = worst.max(symmetric_product_check(&flat, gains, &shaping, &flat_g, eta));
        let pose = random_pose(&mut rng);
        worst = worst.max(symmetric_product_check(&body, gains, &shaping, &pose, eta));
    }
    check(5, worst <= 1e-4, format!("symmetric-product residual {worst:.1e} at 50 states per plant"));
}

#[test]
fn criterion_06_averaging_error_shrinks() {
    let scenario = builtin("fig1-untuned").unwrap();
    let setup = scenario.build().unwrap();
    let omegas = [30.0, 60.0, 120.0];
    let ladder = omega_ladder(
        &setup.plant,
        &setup.controller,
        &setup.initial,
        0.0,
        10.0,
        &omegas,
        scenario.steps_per_period,
    )
    .unwrap();
    let errors: Vec<f64> = ladder.iter().map(|p| p.sup_error).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    let pass = ladder.iter().all(|p| p.fault.is_none()) && ratios.iter().all(|&r| r <= 0.8);
    check(
        6,
        pass,
        format!(
            "averaging error for ω = {omegas:?}: [{}], ratios {ratios:.3?}",
            errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

#[test]
fn criterion_07_lyapunov_decrease() {
    let mut worst_increase = 0.0_f64;
    for name in ["fig1-untuned", "fig1-tuned"] {
        let scenario = builtin(name).unwrap();
        let setup = scenario.build().unwrap();
        let plant = &setup.plant;
        let gains = setup.controller.gains;
        let params =
            EnergyParams::new(plant, gains, setup.controller.shaping.clone(), setup.g_star.clone().unwrap()).unwrap();
        let closed = ClosedLoop::new(plant, &setup.controller).unwrap();
        let start = closed.to_tilde(scenario.t0, &setup.initial);
        let field = AveragedSystem::new(plant, &gains, &setup.controller.shaping);
        let step = step_size_for(gains.omega(), scenario.steps_per_period).unwrap();
        let traj = integrate(&field, start.to_state(), scenario.t0, scenario.t_end, step).unwrap();
        let v: Vec<f64> = traj
            .states
            .iter()
            .map(|s| lyapunov_v(&params, plant, &SystemState::from_state(s).unwrap()))
            .collect();
        for w in v.windows(2) {
            worst_increase = worst_increase.max(w[1] - w[0]);
        }
    }

    let plant = planar();
    let shaping = default_shaping();
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let gain_sets = [
        ControllerGains::new(1.0, 1.0, 1.0, 0.5, 1.0, 30.0).unwrap(),
        ControllerGains::new(1.3, 0.7, 1.2, 0.7, 1.0, 30.0).unwrap(),
    ];
    let params: Vec<EnergyParams> = gain_sets
        .iter()
        .map(|g| EnergyParams::new(&plant, *g, shaping.clone(), GroupElement::from_slice(&[0.0, 0.0])).unwrap())
        .collect();
    let mut worst_vdot = f64::NEG_INFINITY;
    let vec2 = |rng: &mut ChaCha8Rng, r: f64| DVector::from_fn(2, |_, _| rng.random_range(-r..r));
    for k in 0..10_000 {
        let x = SystemState::new(
            GroupElement::new(vec2(&mut rng, 3.0)),
            vec2(&mut rng, 3.0),
            vec2(&mut rng, 3.0),
            rng.random_range(-2.0..5.0),
        );
        worst_vdot = worst_vdot.max(lyapunov_vdot(&params[k % 2], &plant, &x));
    }
    check(
        7,
        worst_increase <= 1e-8 && worst_vdot <= 1e-12,
        format!(
            "V along averaged fig1 runs: max step increase {worst_increase:.1e}; max V̇ on 10⁴ flat states {worst_vdot:.3e}"
        ),
    );
}

/// Mean of `x` over a sliding window of `width` samples, centred where
/// possible.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Sign changes of `x` that cross from below `−band` to above `band` or back.
fn sign_changes(x: &[f64], band: f64) -> Vec<usize> {
    let mut last = 0_i8;
    let mut changes = Vec::new();
    for (i, &value) in x.iter().enumerate() {
        let s = if value > band {
            1
        } else if value < -band {
            -1
        } else {
            continue;
        };
        if last != 0 && s != last {
            changes.push(i);
        }
        last = s;
    }
    changes
}

/// Period with the largest discrete-Fourier amplitude of the mean-removed
/// signal, scanned over `[lo, hi]`.
fn dominant_period(t: &[f64], x: &[f64], lo: f64, hi: f64) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut best = (0.0, lo);
    let steps = 2000;
    for k in 0..=steps {
        let period = lo + (hi - lo) * k as f64 / steps as f64;
        let w = 2.0 * std::f64::consts::PI / period;
        let (c, s) = t.iter().zip(x).fold((0.0, 0.0), |(c, s), (&ti, &xi)| {
            (c + (xi - mean) * (w * ti).cos(), s + (xi - mean) * (w * ti).sin())
        });
        let amp = c * c + s * s;
        if amp > best.0 {
            best = (amp, period);
        }
    }
    best.1
}

#[test]
fn criterion_08_fig1_reproduction() {
    const BALL: f64 = 0.25;
    const BAND: f64 = 0.02;
    let horizon = 40.0;
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["fig1-untuned", "fig1-tuned"] {
        let scenario = builtin(name).unwrap();
        let (_, traj) = closed_loop_run(name, horizon);
        let g1: Vec<f64> = traj.states.iter().map(|s| s.g.coords()[0]).collect();
        let radius: Vec<f64> = traj.states.iter().map(|s| s.g.coords().norm()).collect();
        let entry = radius.iter().rposition(|&r| r > BALL).map_or(0, |i| i + 1);
        let entered = entry < radius.len();
        let entry_time = traj.times.get(entry).copied().unwrap_or(f64::INFINITY);
        // averaging over one dither period strips the fast ripple
        let slow = moving_average(&g1, scenario.steps_per_period);
        let changes = sign_changes(&slow, BAND).len();
        if name == "fig1-untuned" {
            let period = dominant_period(&traj.times, &slow, 2.0, 20.0);
            let ok = entered && changes >= 3 && (4.0..=6.0).contains(&period);
            pass &= ok;
            lines.push(format!(
                "untuned: |g| ≤ {BALL} from t = {entry_time:.2}, {changes} sign changes of g¹, dominant period {period:.2} (want [4, 6])"
            ));
        } else {
            let ok = entered && changes <= 1;
            pass &= ok;
            lines.push(format!("tuned: |g| ≤ {BALL} from t = {entry_time:.2}, {changes} sign changes of g¹"));
        }
    }
    check(8, pass, format!("fig1: {}", lines.join("; ")));
}

#[test]
fn criterion_09_fig2_reproduction() {
    let results: Vec<(String, f64, f64, f64)> = ["fig2-untuned", "fig2-tuned"]
        .iter()
        .map(|name| {
            let (_, traj) = closed_loop_run(name, 300.0);
            assert!(traj.fault.is_none(), "{name}: {:?}", traj.fault);
            assert!((traj.times.last().unwrap() - 300.0).abs() < 1e-9);
            (name.to_string(), traj.outputs[0], *traj.outputs.last().unwrap(), traj.max_defect())
        })
        .collect();
    let pass = results.iter().all(|(_, y0, y1, defect)| *y1 < 0.1 * y0 && *defect <= 1e-6);
    let detail: Vec<String> = results
        .iter()
        .map(|(n, y0, y1, d)| format!("{n}: ψ {y0:.4} → {y1:.2e}, max defect {d:.1e}"))
        .collect();
    check(9, pass, format!("fig2: {}", detail.join("; ")));
}

#[test]
fn criterion_10_eigenvalue_tuning() {
    let lin: Vec<_> = ["fig1-untuned", "fig1-tuned"]
        .iter()
        .map(|name| {
            let s = setup(name);
            let x_star = equilibrium(&s.plant, s.g_star.clone().unwrap());
            linearize_averaged(&s.plant, &s.controller.gains, &s.controller.shaping, &x_star).unwrap()
        })
        .collect();
    let (untuned, tuned) = (&lin[0], &lin[1]);
    let pass = untuned.max_real_part() < 0.0
        && tuned.max_real_part() < 0.0
        && tuned.max_oscillation_ratio() < untuned.max_oscillation_ratio();
    check(
        10,
        pass,
        format!(
            "linearized averaged system: max Re {:.3} / {:.3}, max |Im/Re| untuned {:.3} > tuned {:.3}",
            untuned.max_real_part(),
            tuned.max_real_part(),
            untuned.max_oscillation_ratio(),
            tuned.max_oscillation_ratio()
        ),
    );
}

#[test]
fn criterion_11_practical_stability_trend() {
    let s = setup("fig1-untuned");
    let g_star = s.g_star.clone().unwrap();
    let params = EnergyParams::new(&s.plant, s.controller.gains, s.controller.shaping.clone(), g_star.clone()).unwrap();
    let x_star = equilibrium(&s.plant, g_star);
    let scan = |flow| {
        let config = ScanConfig {
            epsilons: vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.2],
            omegas: vec![30.0, 60.0, 120.0],
            samples: 4,
            phases: 2,
            horizon: 60.0,
            region: SamplingRegion::Ball { radius: 0.1 },
            seed: 1,
            flow,
            steps_per_period: 100,
        };
        practical_stability_scan(&s.plant, &s.controller, &x_star, &config, Some(&params)).unwrap()
    };
    let averaged = scan(ScanFlow::Averaged);
    let closed = scan(ScanFlow::ClosedLoop);
    let smallest: Vec<Option<f64>> = closed.summaries.iter().map(|m| m.smallest_passing_epsilon).collect();
    let pass = averaged.all_pass() && closed.epsilon_nonincreasing() && smallest.iter().all(Option::is_some);
    check(
        11,
        pass,
        format!(
            "stability scan: averaged flow passes {}/{} cells; closed-loop smallest ε along ω = [30, 60, 120]: {smallest:?}",
            averaged.cells.iter().filter(|c| c.passes_all()).count(),
            averaged.cells.len()
        ),
    );
}
