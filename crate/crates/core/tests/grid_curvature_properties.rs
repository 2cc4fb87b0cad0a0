use curvlab_core::curvature::{bound_check, riemann_ricci, DEFAULT_TAIL};
use curvlab_core::grid::{convolve, finite_diff, Axis, DiffScheme};
use curvlab_core::*;
use proptest::prelude::*;

const N: usize = 32;

fn field(values: Vec<f64>) -> PeriodicGridField {
    PeriodicGridField::from_data(N, Rank::Scalar, values).unwrap()
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, N * N)
}

fn eps() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![1.0 / 16.0, 3.0 / 32.0, 1.0 / 8.0, 0.2])
}

fn close(a: &PeriodicGridField, b: &PeriodicGridField, tol: f64) -> bool {
    a.sup_distance(b).unwrap() <= tol * (1.0 + a.sup_norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_is_linear(a in values(), b in values(), s in -3.0f64..3.0, t in -3.0f64..3.0, e in eps()) {
        let k = Kernel::mollifier(N, e).unwrap();
        let (fa, fb) = (field(a), field(b));
        let combo = fa.zip_map(&fb, |x, y| s * x + t * y).unwrap();
        let lhs = convolve(&combo, &k).unwrap();
        let rhs = convolve(&fa, &k).unwrap().zip_map(&convolve(&fb, &k).unwrap(), |x, y| s * x + t * y).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-13));
    }

    #[test]
    fn convolution_commutes_with_differences(a in values(), e in eps(), axis in prop::sample::select(vec![Axis::X, Axis::Y])) {
        let k = Kernel::mollifier(N, e).unwrap();
        let f = field(a);
        for scheme in [DiffScheme::Central2, DiffScheme::Central4] {
            let lhs = finite_diff(&convolve(&f, &k).unwrap(), axis, scheme).unwrap();
            let rhs = convolve(&finite_diff(&f, axis, scheme).unwrap(), &k).unwrap();
            prop_assert!(close(&lhs, &rhs, 1e-12));
        }
    }

    #[test]
    fn repeated_convolution_matches_composed_stencil(a in values(), e1 in eps(), e2 in eps()) {
        let (k1, k2) = (Kernel::mollifier(N, e1).unwrap(), Kernel::mollifier(N, e2).unwrap());
        let f = field(a);
        let twice = convolve(&convolve(&f, &k1).unwrap(), &k2).unwrap();
        let once = k1.stencil().compose(k2.stencil()).apply(&f).unwrap();
        prop_assert!(twice.sup_distance(&once).unwrap() <= 1e-12);
    }

    #[test]
    fn convolution_is_translation_equivariant(a in values(), e in eps(), di in -40isize..40, dj in -40isize..40) {
        let k = Kernel::mollifier(N, e).unwrap();
        let f = field(a);
        let lhs = convolve(&f.shifted(di, dj), &k).unwrap();
        let rhs = convolve(&f, &k).unwrap().shifted(di, dj);
        prop_assert!(lhs.sup_distance(&rhs).unwrap() <= 1e-15);
    }

    #[test]
    fn convolution_preserves_positivity(a in prop::collection::vec(0.0f64..1.0, N * N), e in eps(), sparse in any::<bool>()) {
        // Sparse inputs probe the kernel tails.
        let a: Vec<f64> = if sparse { a.iter().map(|v| if *v > 0.9 { *v } else { 0.0 }).collect() } else { a };
        let out = convolve(&field(a), &Kernel::mollifier(N, e).unwrap()).unwrap();
        prop_assert!(out.min_value() >= 0.0);
    }

    #[test]
    fn ricci_quadratic_form_is_frame_independent(
        amp in 0.01f64..0.1,
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0,
        node in 0usize..(N * N),
    ) {
        let frame = Mat2::new(a, b, c, d);
        prop_assume!(frame.det().abs() > 0.1);
        let u = FieldExpr::parse(&format!("{amp}*sin(2*pi*x)*cos(2*pi*y)")).unwrap();
        let s = SmoothedMetric::new(&MetricModel::conformal(u).unwrap().sample(N).unwrap(), 1.0 / 8.0).unwrap();
        let ric = riemann_ricci(&s, true).unwrap().ric.unwrap().matrix(node % N, node / N);
        let x = [0.3, -1.1];
        // Components in the new frame, x = A x', and the transformed tensor A^T Ric A.
        let inv = frame.inverse().unwrap();
        let xp = inv.apply(x);
        let ric_p = frame.transpose() * ric * frame;
        let scale = 1.0 + ric.max_abs() * (x[0] * x[0] + x[1] * x[1]);
        prop_assert!((ric.quad(x) - ric_p.quad(xp)).abs() <= 1e-10 * scale);
    }
}

#[test]
fn ricci_is_proportional_to_metric_in_two_dimensions() {
    for expr in ["0.05*sin(2*pi*x)*sin(2*pi*y)", "0.1*cos(2*pi*x) + 0.03*sin(4*pi*y)"] {
        let m = MetricModel::conformal(FieldExpr::parse(expr).unwrap())
            .unwrap()
            .sample(64)
            .unwrap();
        let f = riemann_ricci(&SmoothedMetric::new(&m, 1.0 / 16.0).unwrap(), true).unwrap();
        assert!(
            f.proportionality_residual <= 1e-6,
            "{expr}: {}",
            f.proportionality_residual
        );
    }
    let g = MetricModel::components(
        FieldExpr::parse("1 + 0.2*sin(2*pi*x)^2").unwrap(),
        FieldExpr::parse("0.1*cos(2*pi*y)").unwrap(),
        FieldExpr::parse("1 + 0.1*sin(2*pi*(x+y))^2").unwrap(),
    )
    .unwrap()
    .sample(64)
    .unwrap();
    let f = riemann_ricci(&SmoothedMetric::new(&g, 1.0 / 16.0).unwrap(), true).unwrap();
    assert!(f.proportionality_residual <= 1e-6);
}

#[test]
fn bound_verdicts_are_monotone_in_k() {
    let m = MetricModel::conformal(FieldExpr::parse("0.05*sin(2*pi*x)*sin(2*pi*y)").unwrap())
        .unwrap()
        .sample(64)
        .unwrap();
    let eps = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let deltas = [0.02, 0.1, 0.5];
    let ks = [-6.0, -4.5, -4.3, -4.0, -3.0, 0.0];
    let reports: Vec<_> = ks
        .iter()
        .map(|k| bound_check(&m, *k, &deltas, &eps, DEFAULT_TAIL).unwrap())
        .collect();
    for (hi, rh) in reports.iter().enumerate() {
        for rl in &reports[..hi] {
            for (vh, vl) in rh.verdicts.iter().zip(&rl.verdicts) {
                assert!(!vh.holds || vl.holds, "verdict at larger K holds but smaller K fails");
            }
        }
    }
    assert!(reports[0].all_hold() && !reports[5].all_hold());
}

#[test]
fn smoothed_metric_band_and_volume_converge() {
    let m = MetricModel::conformal(FieldExpr::parse("0.2*sin(2*pi*x)*sin(2*pi*y)").unwrap())
        .unwrap()
        .sample(128)
        .unwrap();
    let vol = m.volume().unwrap();
    let mut last = f64::INFINITY;
    for eps in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let s = SmoothedMetric::new(&m, eps).unwrap();
        let delta = s.equivalence_band().unwrap();
        assert!(delta < last);
        last = delta;
        // Sampled unit vectors at every node stay inside the band.
        let sampled = m.sampled().unwrap();
        for j in 0..128 {
            for i in 0..128 {
                for th in [0.0f64, 0.7, 1.9, 2.6] {
                    let v = [th.cos(), th.sin()];
                    let (ge, g) = (s.g().matrix(i, j).quad(v), sampled.g.matrix(i, j).quad(v));
                    assert!(ge >= (1.0 - delta) * g - 1e-14 && ge <= (1.0 + delta) * g + 1e-14);
                }
            }
        }
        assert!((s.volume() - vol).abs() <= 2.0 * delta * vol);
    }
    assert!(last < 0.01);
}
