use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vve_core::vehicle::{
    resultant_loads, state_derivative, ControlInput, DynamicRates, TireForces, VehicleParams, VehicleState,
};

/// Body-frame resultants rotated into the velocity frame by hand.
fn composed(s: &VehicleState, f: &TireForces, u: &ControlInput, f_load: f64, p: &VehicleParams) -> (DynamicRates, [f64; 3]) {
    let l = resultant_loads(f, u, f_load, p).unwrap();
    let (sb, cb) = s.beta.sin_cos();
    let mv = p.m * s.v;
    let rates = DynamicRates {
        beta_dot: (-sb * l.sum_fx + cb * l.sum_fy) / mv - s.r,
        v_dot: (cb * l.sum_fx + sb * l.sum_fy) / p.m,
        r_dot: l.sum_mz / p.i_z,
    };
    // Size of the largest term in each row, so a near-cancelling sum is
    // judged against what it cancelled.
    let mag = |v: [f64; 4]| v.iter().map(|x| x.abs()).sum::<f64>();
    let forces = [f.f_xf, f.f_xr, f.f_yf, f.f_yr];
    let scale = [
        (mag(forces) + f_load) / mv + s.r.abs(),
        (mag(forces) + f_load) / p.m,
        ((p.l_f + p.l_r) * mag(forces) + u.m_zd.abs()) / p.i_z,
    ];
    (rates, scale)
}

fn random_case(rng: &mut ChaCha8Rng) -> (VehicleState, TireForces, ControlInput, f64) {
    let s = VehicleState {
        beta: rng.gen_range(-0.4..0.4),
        v: rng.gen_range(1.0..45.0),
        r: rng.gen_range(-1.5..1.5),
        ..Default::default()
    };
    let f = TireForces {
        f_xf: rng.gen_range(-9000.0..9000.0),
        f_xr: rng.gen_range(-9000.0..9000.0),
        f_yf: rng.gen_range(-9000.0..9000.0),
        f_yr: rng.gen_range(-9000.0..9000.0),
    };
    let u = ControlInput {
        delta_f: rng.gen_range(-0.6..0.6),
        delta_r: rng.gen_range(-0.2..0.2),
        m_zd: rng.gen_range(-3000.0..3000.0),
        ..Default::default()
    };
    (s, f, u, rng.gen_range(0.0..1500.0))
}

#[test]
fn derivative_matches_resultant_composition() {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (s, f, u, f_load) = random_case(&mut rng);
        let got = state_derivative(&s, &f, &u, f_load, &p).unwrap();
        let (want, scale) = composed(&s, &f, &u, f_load, &p);
        for (k, (a, b)) in [(got.beta_dot, want.beta_dot), (got.v_dot, want.v_dot), (got.r_dot, want.r_dot)]
            .into_iter()
            .enumerate()
        {
            worst = worst.max((a - b).abs() / b.abs().max(scale[k]));
        }
    }
    assert!(worst <= 1e-12, "worst relative error {worst:e}");
}

#[test]
fn straight_cruise_only_feels_road_load() {
    let p = VehicleParams::default();
    let s = VehicleState { v: 20.0, ..Default::default() };
    let d = state_derivative(&s, &TireForces::default(), &ControlInput::default(), 300.0, &p).unwrap();
    assert_eq!(d.beta_dot, 0.0);
    assert_eq!(d.r_dot, 0.0);
    assert!((d.v_dot + 300.0 / p.m).abs() < 1e-15);
}

#[test]
fn below_v_eps_is_a_singularity() {
    let p = VehicleParams::default();
    let s = VehicleState { v: 0.2, ..Default::default() };
    assert!(state_derivative(&s, &TireForces::default(), &ControlInput::default(), 0.0, &p).is_err());
}
