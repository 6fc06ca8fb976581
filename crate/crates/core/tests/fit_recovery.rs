use ncm_core::fitcore::{
    finite_difference_gradient, fit_sinusoid, least_squares, CenteredGaussian, FitModel, Line, LorentzianSum,
};
use proptest::prelude::*;

fn sample<M: FitModel>(m: &M, x: &[f64], p: &[f64]) -> Vec<f64> {
    x.iter().map(|&xi| m.value(xi, p)).collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

fn jacobian_agrees<M: FitModel>(m: &M, x: &[f64], p: &[f64]) -> bool {
    let mut g = vec![0.0; p.len()];
    x.iter().all(|&xi| {
        assert!(m.gradient(xi, p, &mut g));
        let fd = finite_difference_gradient(m, xi, p);
        let scale = g.iter().chain(&fd).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        g.iter().zip(&fd).all(|(a, b)| (a - b).abs() <= 1e-6 * scale)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn line_is_recovered(slope in -5.0f64..5.0, icpt in -3.0f64..3.0) {
        let x = linspace(0.0, 2.0, 9);
        let y = sample(&Line, &x, &[slope, icpt]);
        let r = least_squares(&Line, &x, &y, &[0.0, 0.0]).unwrap();
        prop_assert!(r.residual_norm <= 1e-8);
        prop_assert!((r.params[0] - slope).abs() <= 1e-8 && (r.params[1] - icpt).abs() <= 1e-8);
        prop_assert!(jacobian_agrees(&Line, &x, &[slope, icpt]));
    }

    #[test]
    fn sinusoid_is_recovered(amp in 0.2f64..1.0, freq in 0.5f64..4.0, phase in -3.0f64..3.0, offset in -0.5f64..0.5) {
        let t = linspace(0.0, 3.0, 301);
        let y: Vec<f64> = t.iter().map(|&ti| amp * (2.0 * std::f64::consts::PI * freq * ti + phase).cos() + offset).collect();
        let fit = fit_sinusoid(&t, &y).unwrap();
        let r = fit.result.clone().unwrap();
        prop_assert!(r.residual_norm <= 1e-8, "{}", r.residual_norm);
        prop_assert!((fit.frequency - freq).abs() <= 1e-8);
        prop_assert!((fit.amplitude - amp).abs() <= 1e-8);
        prop_assert!(jacobian_agrees(&ncm_core::fitcore::Sinusoid, &t[..20], &r.params));
    }

    #[test]
    fn centered_gaussian_is_recovered(h in 0.5f64..1.5, sigma in 0.3f64..3.0) {
        let x = linspace(0.0, 4.0, 15);
        let y = sample(&CenteredGaussian, &x, &[h, sigma]);
        let r = least_squares(&CenteredGaussian, &x, &y, &[1.0, 1.0]).unwrap();
        prop_assert!(r.residual_norm <= 1e-8);
        prop_assert!((r.params[0] - h).abs() <= 1e-7 && (r.params[1].abs() - sigma).abs() <= 1e-7);
        prop_assert!(jacobian_agrees(&CenteredGaussian, &x, &[h, sigma]));
    }

    #[test]
    fn lorentzian_triplet_is_recovered(
        side in 1.5f64..4.0,
        width in 0.3f64..0.6,
        a in prop::array::uniform3(0.05f64..1.0),
    ) {
        // MHz and photons/MHz
        let m = LorentzianSum { peaks: 3 };
        let truth = [-side, width, a[0], 0.0, width, a[1], side, width, a[2]];
        let x = linspace(-10.0, 10.0, 401);
        let y = sample(&m, &x, &truth);
        // perturbed start: centers off by 0.2, widths and areas off by 30%
        let init: Vec<f64> = truth
            .chunks_exact(3)
            .flat_map(|t| [t[0] + 0.2, 1.3 * t[1], 0.7 * t[2]])
            .collect();
        let r = least_squares(&m, &x, &y, &init).unwrap();
        prop_assert!(r.residual_norm <= 1e-8, "{}", r.residual_norm);
        let mut found: Vec<&[f64]> = r.params.chunks_exact(3).collect();
        found.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (q, t) in found.iter().zip(truth.chunks_exact(3)) {
            // (γ, A) and (−γ, −A) give the same curve
            let s = q[1].signum();
            prop_assert!((q[0] - t[0]).abs() <= 1e-6, "{:?}", r.params);
            prop_assert!((s * q[1] - t[1]).abs() <= 1e-6 && (s * q[2] - t[2]).abs() <= 1e-6, "{:?}", r.params);
        }
        prop_assert!(jacobian_agrees(&m, &x, &truth));
    }
}
