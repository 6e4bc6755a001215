use vve_core::sim::engine::{Env, EnvConfig};
use vve_core::sim::integrator::IntegratorKind;
use vve_core::sim::plant::{Actuation, Plant, PlantState};
use vve_core::tire::TireParams;
use vve_core::vehicle::VehicleParams;
use vve_core::wheel::WheelParams;

/// Slalom with a speed change: steering sine plus drive then brake, held
/// piecewise constant over 10 ms so every step size sees the same input.
fn maneuver(dt: f64, kind: IntegratorKind) -> (f64, f64) {
    let p = Plant::new(VehicleParams::default(), TireParams::default(), WheelParams::default(), 0.9);
    let mut s = PlantState::at_speed(0.0, 0.0, 0.0, 15.0);
    let per_hold = (0.01 / dt).round() as usize;
    for j in 0..1000 {
        let t = j as f64 * 0.01;
        let act = Actuation {
            delta_f: 0.04 * (0.8 * t).sin(),
            drive_r: if j < 500 { 600.0 } else { 0.0 },
            brake_f: if j >= 500 { 900.0 } else { 0.0 },
            brake_r: if j >= 500 { 700.0 } else { 0.0 },
            ..Default::default()
        };
        for i in 0..per_hold {
            s = p.advance(&s, &act, dt, kind, t + i as f64 * dt).unwrap();
        }
    }
    (s.vehicle.x, s.vehicle.y)
}

fn err(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[test]
fn position_error_shrinks_when_step_halves() {
    let reference = maneuver(6.25e-5, IntegratorKind::Rk4);
    let rk4 = err(maneuver(1e-3, IntegratorKind::Rk4), reference) / err(maneuver(5e-4, IntegratorKind::Rk4), reference);
    assert!(rk4 >= 4.0, "rk4 ratio {rk4}");
    let euler =
        err(maneuver(1e-3, IntegratorKind::Euler), reference) / err(maneuver(5e-4, IntegratorKind::Euler), reference);
    assert!((1.8..2.4).contains(&euler), "euler ratio {euler}");
}

#[test]
fn identical_seed_identical_episode() {
    let run = || {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        env.reset(11).unwrap();
        let mut out = Vec::new();
        for k in 0..400 {
            let r = env.step([4, 4, 1, 2][k % 4]).unwrap();
            out.push((env.world.plant, r.reward.to_bits()));
            if r.terminal.is_some() {
                break;
            }
        }
        out
    };
    assert_eq!(run(), run());
}
