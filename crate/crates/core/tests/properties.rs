use dgf_core::control::{
    closed_loop_poly, control_step, design, simulate_linear_loop, ControllerState, OperatingPoint,
    PowerLimits,
};
use dgf_core::harness::{preset, run_map, run_scenario, PathKind, PowerMode};
use dgf_core::lti::{
    first_order_from_discrete, zoh_discretize, ContinuousFirstOrder, DiscreteTransferFunction,
    Polynomial,
};
use dgf_core::optics::{
    beam_radius, chain_matrix, power_in_disk, propagate, GaussianBeam, OpticalElement,
    FIBER_WAVELENGTH,
};
use dgf_core::plant::{
    classify, write_trajectory_csv, HistoryPoint, PlantModel, ProcessState, ScenarioConfig,
    Thresholds,
};
use dgf_core::sensing::{
    hottest_n, hottest_n_mean, render_frame, roi_mean, Background, HotSpot, RoiSpec, ThermalFrame,
    PIXEL_PITCH_MM,
};
use dgf_core::sysid::{fit_first_order, fit_percent, gen_prbs};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn poly() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 1..6)
}

fn small_frame(width: usize, height: usize, values: Vec<f64>) -> ThermalFrame {
    ThermalFrame {
        width,
        height,
        pitch_mm: PIXEL_PITCH_MM,
        values,
        timestamp: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zoh_round_trip(k in 0.1..50.0f64, tau in 0.05..10.0f64, dt in 0.01..1.0f64) {
        prop_assume!(tau / dt <= 100.0);
        let m = ContinuousFirstOrder::new(k, tau).unwrap();
        let back = first_order_from_discrete(&zoh_discretize(&m, dt).unwrap()).unwrap();
        prop_assert!(rel(back.gain, k) < 1e-12, "{} vs {}", back.gain, k);
        prop_assert!(rel(back.time_constant, tau) < 1e-12, "{} vs {}", back.time_constant, tau);
    }

    #[test]
    fn zoh_preserves_dc_gain(k in -50.0..50.0f64, tau in 0.05..10.0f64, dt in 0.01..1.0f64) {
        prop_assume!(k.abs() > 1e-3);
        let d = zoh_discretize(&ContinuousFirstOrder::new(k, tau).unwrap(), dt).unwrap();
        prop_assert!(rel(d.dc_gain(), k) < 1e-12);
    }

    #[test]
    fn simulate_is_linear(
        num in prop::collection::vec(-2.0..2.0f64, 1..3),
        p1 in -0.9..0.9f64,
        p2 in -0.9..0.9f64,
        u1 in prop::collection::vec(-100.0..100.0f64, 40),
        u2 in prop::collection::vec(-100.0..100.0f64, 40),
    ) {
        let den = Polynomial::monic_linear(p1).mul(&Polynomial::monic_linear(p2));
        let tf = DiscreteTransferFunction::new(Polynomial::new(num), den, 0.1).unwrap();
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let (y1, y2, y) = (tf.simulate(&u1).unwrap(), tf.simulate(&u2).unwrap(), tf.simulate(&sum).unwrap());
        for k in 0..y.len() {
            prop_assert!((y[k] - y1[k] - y2[k]).abs() < 1e-9 * (1.0 + y1[k].abs() + y2[k].abs()));
        }
    }

    #[test]
    fn polynomial_product_evaluates_as_product(a in poly(), b in poly(), xs in prop::collection::vec(-2.0..2.0f64, 5)) {
        let (pa, pb) = (Polynomial::new(a.clone()), Polynomial::new(b.clone()));
        let prod = pa.mul(&pb);
        let bound = |c: &[f64], x: f64| c.iter().fold(0.0, |acc, v| acc * x.abs() + v.abs());
        for x in xs {
            let scale = bound(&a, x) * bound(&b, x);
            prop_assert!((prod.eval(x) - pa.eval(x) * pb.eval(x)).abs() <= 1e-9 * scale.max(1e-300));
        }
    }

    #[test]
    fn ray_matrices_keep_unit_determinant(
        elements in prop::collection::vec((0usize..2, 0.01..0.5f64, prop::bool::ANY), 1..6),
    ) {
        let chain: Vec<OpticalElement> = elements
            .iter()
            .map(|&(kind, v, neg)| match kind {
                0 => OpticalElement::FreeSpace { length: v },
                _ => OpticalElement::ThinLens { focal_length: if neg { -(v + 0.04) } else { v + 0.04 } },
            })
            .collect();
        for el in &chain {
            prop_assert!((el.matrix().determinant() - 1.0).abs() < 1e-12);
        }
        prop_assert!((chain_matrix(&chain).determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_lens_focus_matches_analytic_waist(diameter in 0.01..0.06f64, f in 0.05..0.5f64) {
        let input = GaussianBeam::collimated(FIBER_WAVELENGTH, diameter).unwrap();
        let out = propagate(&input, &[OpticalElement::ThinLens { focal_length: f }]).unwrap();
        let analytic = FIBER_WAVELENGTH * f / (std::f64::consts::PI * diameter / 2.0);
        prop_assert!(rel(out.waist_radius, analytic) < 0.005);
    }

    #[test]
    fn beam_radius_is_even_and_increasing(z in 1e-9..0.02f64, dz in 1e-7..1e-3f64) {
        let b = GaussianBeam::dgf_focus();
        prop_assert_eq!(beam_radius(&b, z), beam_radius(&b, -z));
        prop_assert!(beam_radius(&b, z + dz) > beam_radius(&b, z));
    }

    #[test]
    fn field_grid_is_even_in_x(x in 0.0..3.0f64, z in 3.0..10.0f64) {
        use dgf_core::optics::{intensity, IntensityQuery};
        let b = GaussianBeam::dgf_focus();
        let at = |r: f64| intensity(&IntensityQuery { power: 40.0, radial_offset: r * 1e-3, axial_distance: z * 1e-3 }, &b);
        prop_assert_eq!(at(x), at(-x));
    }

    #[test]
    fn seeded_hot_spots_render_identically(seed in any::<u64>(), sigma in 0.0..5.0f64) {
        let spot = HotSpot { x_mm: 40.0, y_mm: 30.0, peak: 900.0, radius_mm: 1.0 };
        let bg = Background::uniform(550.0);
        let a = render_frame(&spot, &bg, sigma, seed, 3.2).unwrap();
        let b = render_frame(&spot, &bg, sigma, seed, 3.2).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn centred_disk_power_matches_closed_form(radius_mm in 0.1..2.0f64, z_mm in 3.0..10.0f64) {
        let b = GaussianBeam::dgf_focus();
        let w = b.radius_at(z_mm * 1e-3);
        let r = radius_mm * 1e-3;
        let exact = 1.0 - (-2.0 * r * r / (w * w)).exp();
        let got = power_in_disk(&b, 1.0, z_mm * 1e-3, r, 0.0).unwrap();
        prop_assert!(rel(got, exact) < 1e-4, "{got} vs {exact}");
    }

    #[test]
    fn disk_power_falls_with_offset(a in 0.0..2.0f64, b in 0.0..2.0f64) {
        let beam = GaussianBeam::dgf_focus();
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        let p = |o: f64| power_in_disk(&beam, 1.0, 4e-3, 0.5e-3, o * 1e-3).unwrap();
        prop_assert!(p(far) <= p(near) + 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steady_state_is_affine_in_power(
        df in 3.0..10.0f64,
        layer in 1usize..20,
        corner in 0.0..5.0f64,
        diameter in 0.85..1.5f64,
        l1 in 0.0..100.0f64,
        dl in -50.0..50.0f64,
    ) {
        let mut c = ScenarioConfig { distance_from_focus: df, ..Default::default() };
        c.corner.amplitude = 0.2;
        c.layer.jump = 8.0;
        c.layer.slope = 10.0;
        let model = PlantModel::reference(c).unwrap();
        let mut s = ProcessState::at_rest(800.0, diameter);
        s.layer = layer;
        s.corner_distance = corner;
        let eff = model.effective_params(&s);
        let lhs = eff.steady_state(l1 + dl) - eff.steady_state(l1);
        prop_assert!((lhs - eff.gain * dl).abs() < 1e-9);
    }

    #[test]
    fn steady_state_rises_with_power_and_focus(
        cutoff in 0.0..30.0f64,
        extra in 0.0..60.0f64,
        dl in 0.0..20.0f64,
        df in 3.0..10.0f64,
        ddf in 0.0..3.0f64,
    ) {
        let l = cutoff + extra;
        let at = |df: f64, l: f64| {
            let c = ScenarioConfig { distance_from_focus: df, cutoff_power: cutoff, ..Default::default() };
            PlantModel::reference(c).unwrap().effective_params(&ProcessState::at_rest(800.0, 1.0)).steady_state(l)
        };
        prop_assert!(at(df, l + dl) >= at(df, l));
        let far = (df + ddf).min(10.0);
        prop_assert!(at(far, l) <= at(df, l) + 1e-9);
    }

    #[test]
    fn classification_is_deterministic(temps in prop::collection::vec(600.0..1400.0f64, 1..200)) {
        let h: Vec<HistoryPoint> = temps
            .iter()
            .enumerate()
            .map(|(k, &t)| HistoryPoint { time: k as f64 * 0.1, temperature: t, position: k as f64 * 0.05 })
            .collect();
        let th = Thresholds::default();
        let a = classify(&h, &th).unwrap();
        let b = classify(&h.clone(), &th).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.failure_time.is_some(), a.classification.is_failure());
        prop_assert_eq!(a.failure_position.is_some(), a.classification.is_failure());
    }

    #[test]
    fn hottest_n_matches_full_sort(
        w in 1usize..12,
        h in 1usize..12,
        seed_values in prop::collection::vec(0u8..6, 144),
        n in 1usize..40,
    ) {
        let values: Vec<f64> = seed_values[..w * h].iter().map(|&v| 800.0 + f64::from(v)).collect();
        prop_assume!(n <= values.len());
        let frame = small_frame(w, h, values.clone());
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        order.truncate(n);
        prop_assert_eq!(hottest_n(&frame, n).unwrap(), order);
    }

    #[test]
    fn hottest_n_mean_ignores_pixel_order(
        values in prop::collection::vec(prop::sample::select(vec![700.0, 800.0, 850.0, 900.0]), 64),
        perm in Just((0..64usize).collect::<Vec<_>>()).prop_shuffle(),
        n in 1usize..64,
    ) {
        let a = small_frame(8, 8, values.clone());
        let b = small_frame(8, 8, perm.iter().map(|&i| values[i]).collect());
        prop_assert!((hottest_n_mean(&a, n).unwrap() - hottest_n_mean(&b, n).unwrap()).abs() < 1e-9);
        let full = values.iter().sum::<f64>() / 64.0;
        prop_assert!((hottest_n_mean(&a, 64).unwrap() - full).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn roi_reading_follows_integer_shifts(
        x in 20.0..70.0f64,
        y in 20.0..50.0f64,
        dc in -20i32..20,
        dr in -20i32..20,
        radius in 0.5..3.0f64,
    ) {
        let bg = Background::uniform(550.0);
        let p = PIXEL_PITCH_MM;
        let read = |x: f64, y: f64| {
            let frame = render_frame(&HotSpot { x_mm: x, y_mm: y, peak: 950.0, radius_mm: radius }, &bg, 0.0, 0, 0.0).unwrap();
            roi_mean(&frame, &RoiSpec::at_pixel_of(x, y, 0.9)).unwrap()
        };
        let a = read(x, y);
        let b = read(x + f64::from(dc) * p, y + f64::from(dr) * p);
        prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn roi_reading_falls_as_spot_leaves(d1 in 0.0..5.0f64, d2 in 0.0..5.0f64, angle in 0.0..std::f64::consts::TAU) {
        let bg = Background::uniform(550.0);
        let roi = RoiSpec::at_pixel_of(47.0, 35.0, 0.9);
        let centre = ((roi.center_px.0 + 0.5) * PIXEL_PITCH_MM, (roi.center_px.1 + 0.5) * PIXEL_PITCH_MM);
        let read = |d: f64| {
            let spot = HotSpot { x_mm: centre.0 + d * angle.cos(), y_mm: centre.1 + d * angle.sin(), peak: 950.0, radius_mm: 1.0 };
            roi_mean(&render_frame(&spot, &bg, 0.0, 0, 0.0).unwrap(), &roi).unwrap()
        };
        let (near, far) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(read(far) <= read(near) + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noise_free_identification_recovers_parameters(k in 1.0..25.0f64, tau in 0.2..2.0f64, seed in any::<u64>()) {
        let dt = 0.1;
        let (b, p) = (k * (1.0 - (-dt / tau).exp()), (-dt / tau).exp());
        let u = gen_prbs(30.0, 60.0, 0.3, 80.0, dt, seed).unwrap().samples;
        let mut y = vec![700.0 + k * u[0]];
        for j in 1..u.len() {
            let prev = y[j - 1];
            y.push(p * prev + b * u[j - 1] + (1.0 - p) * 700.0);
        }
        let m = fit_first_order(&u, &y, dt).unwrap();
        prop_assert!(rel(m.gain, k) < 1e-6, "{} vs {k}", m.gain);
        prop_assert!(rel(m.time_constant, tau) < 1e-6, "{} vs {tau}", m.time_constant);
    }

    #[test]
    fn fit_percent_ignores_common_affine_maps(
        y in prop::collection::vec(-50.0..50.0f64, 20),
        noise in prop::collection::vec(-5.0..5.0f64, 20),
        a in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 10.0]),
        c in -100.0..100.0f64,
    ) {
        let yhat: Vec<f64> = y.iter().zip(&noise).map(|(v, n)| v + n).collect();
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-3));
        let f = fit_percent(&y, &yhat).unwrap();
        let map = |v: &[f64]| v.iter().map(|x| a * x + c).collect::<Vec<_>>();
        let g = fit_percent(&map(&y), &map(&yhat)).unwrap();
        prop_assert!((f - g).abs() < 1e-8, "{f} vs {g}");
    }

    #[test]
    fn prbs_autocorrelation_peaks_at_zero_lag(seed in any::<u64>(), dwell in 0.1..0.5f64) {
        let dt = 0.1;
        let u = gen_prbs(30.0, 60.0, dwell, 200.0, dt, seed).unwrap().samples;
        let m = u.iter().sum::<f64>() / u.len() as f64;
        let x: Vec<f64> = u.iter().map(|v| v - m).collect();
        let r = |lag: usize| x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / (x.len() - lag) as f64;
        let r0 = r(0);
        let start = (dwell / dt).ceil() as usize;
        for lag in start.max(1)..start + 30 {
            prop_assert!(r(lag).abs() < r0, "lag {lag}: {} vs {r0}", r(lag));
        }
    }

    #[test]
    fn commands_stay_within_limits(
        lo in 0.0..50.0f64,
        span in 1.0..450.0f64,
        steps in prop::collection::vec((600.0..1200.0f64, prop::option::of(0.0..2000.0f64)), 1..80),
    ) {
        let limits = PowerLimits { min: lo, max: lo + span };
        let plant = DiscreteTransferFunction::first_order(0.6304, 0.8296, 0.1).unwrap();
        let d = design(&plant, &[0.1, 0.5356], limits, OperatingPoint::NOMINAL).unwrap();
        let mut s = ControllerState::reset(&d);
        for (tr, meas) in steps {
            let (cmd, next) = control_step(&d, &s, tr, tr, meas.unwrap_or(f64::NAN)).unwrap();
            prop_assert!(cmd >= limits.min && cmd <= limits.max, "{cmd}");
            s = next;
        }
    }

    #[test]
    fn random_stable_designs_place_roots_inside_unit_circle(
        k in 0.5..20.0f64,
        tau in 0.1..5.0f64,
        t1 in 0.05..3.0f64,
        t2 in 0.05..3.0f64,
    ) {
        let plant = zoh_discretize(&ContinuousFirstOrder::new(k, tau).unwrap(), 0.1).unwrap();
        let d = design(&plant, &[t1, t2], PowerLimits::LASER, OperatingPoint::NOMINAL).unwrap();
        let cl = closed_loop_poly(&d).unwrap();
        for r in cl.roots().unwrap() {
            prop_assert!(r.norm() < 1.0, "{r}");
        }
    }

    #[test]
    fn constant_disturbances_are_rejected(offset in -60.0..60.0f64) {
        let plant = DiscreteTransferFunction::first_order(0.6304, 0.8296, 0.1).unwrap();
        let d = design(&plant, &[0.1, 0.5356], PowerLimits::LASER, OperatingPoint::NOMINAL).unwrap();
        let n = 300;
        let reference = vec![888.0; n];
        let trace = simulate_linear_loop(&d, 0.6304, 0.8296, &reference, &vec![offset; n], &[]).unwrap();
        prop_assert!(trace.error[n - 1].abs() < 1e-6, "{}", trace.error[n - 1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn map_temperatures_rise_with_power_and_fall_with_offset(
        l_min in 17.0..40.0f64,
        l_step in 2.0..15.0f64,
        df_min in 3.0..6.0f64,
        df_step in 0.5..1.5f64,
        seed in any::<u64>(),
    ) {
        let mut s = preset("map").unwrap();
        s.config.seed = seed;
        s.map.l_min = l_min;
        s.map.l_max = l_min + 3.0 * l_step;
        s.map.l_step = l_step;
        s.map.df_min = df_min;
        s.map.df_max = (df_min + 3.0 * df_step).min(10.0);
        s.map.df_step = df_step;
        let m = run_map(&s).unwrap();
        for idf in 0..m.dfs.len() {
            for ip in 0..m.powers.len() {
                let t = m.cell(ip, idf).max_temperature;
                if ip > 0 {
                    prop_assert!(t >= m.cell(ip - 1, idf).max_temperature);
                }
                if idf > 0 {
                    prop_assert!(t <= m.cell(ip, idf - 1).max_temperature);
                }
            }
        }
    }

    #[test]
    fn seeded_runs_write_identical_csv(seed in any::<u64>(), watts in 15.0..40.0f64) {
        let mut s = preset("track-df3-ol-20").unwrap();
        s.config.seed = seed;
        s.power.mode = PowerMode::Constant;
        s.power.watts = watts;
        s.path.kind = PathKind::Track;
        s.path.length = 20.0;
        let csv = |s| {
            let mut buf = Vec::new();
            write_trajectory_csv(&mut buf, &run_scenario(s).unwrap().record.rows).unwrap();
            buf
        };
        prop_assert_eq!(csv(&s), csv(&s));
    }
}
