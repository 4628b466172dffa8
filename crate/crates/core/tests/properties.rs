use proptest::prelude::*;
use tcspc_sketch::estimate::{fit_histogram_mle, fit_histogram_nlsf, fit_sketch, FitContext};
use tcspc_sketch::fisher::{
    allocate_knots, design_knots, fisher_cdf, fisher_density, uniform_knots, Aggregation, FisherDensity,
    FisherSettings, KnotMode,
};
use tcspc_sketch::fxp::{build_fxp_lut, dequantize_q8_8, fxp_accumulate};
use tcspc_sketch::metrics::{mae, rmse, scalar_metrics, ssim_map, Map2};
use tcspc_sketch::model::{build_irf, expected_counts, model_curve, DecayParams, IrfSpec, ParamRanges, TimeAxis};
use tcspc_sketch::phasor::{phasor_from_histogram, phasor_from_timestamps};
use tcspc_sketch::sketch::{sketch_from_histogram, sketch_from_timestamps, sketch_matrix, SplineBasis};
use tcspc_sketch::synth::{histogram_to_timestamps, sample_histogram, Histogram, TimestampMode, TimestampStream};

fn axis() -> TimeAxis {
    TimeAxis::with_window(256, 10.0).unwrap()
}

fn irf(axis: &TimeAxis) -> Vec<f64> {
    build_irf(&IrfSpec::gaussian(0.1, 1.0), axis).unwrap()
}

fn counts() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(prop_oneof![3 => Just(0u64), 2 => 0u64..40], 256)
}

fn times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 0..300)
}

fn mono_fisher_basis(m: usize) -> SplineBasis {
    let axis = axis();
    let ranges = ParamRanges::mono(0.2, 8.0).unwrap();
    let settings = FisherSettings { n_grid: 50, ..FisherSettings::default() };
    let knots =
        design_knots(KnotMode::Fisher(Aggregation::Average), m, &ranges, 500.0, &irf(&axis), &axis, &settings)
            .unwrap();
    SplineBasis::new(knots)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bin_centre_timestamps_sketch_like_the_histogram(c in counts(), m in 2usize..12) {
        let axis = axis();
        let basis = SplineBasis::new(uniform_knots(&axis, m).unwrap());
        let h = Histogram::new(axis, c).unwrap();
        let from_matrix = sketch_from_histogram(&sketch_matrix(&basis, &axis), &h).unwrap();
        let stream = histogram_to_timestamps(&h, TimestampMode::BinCenter, 0);
        let from_stream = sketch_from_timestamps(&basis, &stream);
        prop_assert_eq!(from_matrix.photon_count, from_stream.photon_count);
        for (a, b) in from_matrix.values.iter().zip(&from_stream.values) {
            prop_assert!(close(*a, *b, 1e-10), "{} vs {}", a, b);
        }
    }

    #[test]
    fn sketches_of_merged_streams_add(a in times(), b in times(), m in 2usize..12) {
        let basis = SplineBasis::new(uniform_knots(&axis(), m).unwrap());
        let (sa, sb) = (TimestampStream::new(10.0, a).unwrap(), TimestampStream::new(10.0, b).unwrap());
        let merged = sketch_from_timestamps(&basis, &sa.merged(&sb).unwrap());
        let summed = sketch_from_timestamps(&basis, &sa).combined(&sketch_from_timestamps(&basis, &sb)).unwrap();
        prop_assert_eq!(merged.photon_count, summed.photon_count);
        for (x, y) in merged.values.iter().zip(&summed.values) {
            prop_assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn histogram_sketch_is_linear(a in counts(), b in counts()) {
        let axis = axis();
        let w = sketch_matrix(&mono_fisher_basis(6), &axis);
        let sum: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let s = |c: Vec<u64>| sketch_from_histogram(&w, &Histogram::new(axis, c).unwrap()).unwrap().values;
        let (sa, sb, sab) = (s(a), s(b), s(sum));
        for k in 0..sab.len() {
            prop_assert!(close(sab[k], sa[k] + sb[k], 1e-12));
        }
    }

    #[test]
    fn basis_sums_to_one_between_apexes(u in 0.0f64..1.0, m in 2usize..20) {
        let basis = SplineBasis::new(uniform_knots(&axis(), m).unwrap());
        let xi = basis.knots().boundaries();
        let t = xi[1] + u * (xi[m] - xi[1]);
        let v = basis.eval(t);
        prop_assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let total: f64 = v.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "{}", total);
    }

    #[test]
    fn fixed_point_accumulation_is_exactly_additive(a in times(), b in times(), depth in prop::sample::select(vec![16usize, 32, 64, 128, 256])) {
        let basis = SplineBasis::new(uniform_knots(&axis(), 8).unwrap());
        let lut = build_fxp_lut(&basis, depth, 10.0).unwrap();
        let (sa, sb) = (TimestampStream::new(10.0, a).unwrap(), TimestampStream::new(10.0, b).unwrap());
        let whole = fxp_accumulate(&lut, &sa.merged(&sb).unwrap()).unwrap();
        let parts: Vec<u64> = fxp_accumulate(&lut, &sa).unwrap().iter()
            .zip(fxp_accumulate(&lut, &sb).unwrap())
            .map(|(x, y)| x + y)
            .collect();
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn lut_entries_are_within_half_an_lsb_at_sample_points(m in 2usize..16, depth in prop::sample::select(vec![16usize, 32, 64, 128, 256])) {
        let basis = SplineBasis::new(uniform_knots(&axis(), m).unwrap());
        let lut = build_fxp_lut(&basis, depth, 10.0).unwrap();
        for d in 0..depth {
            let exact = basis.eval(lut.sample_point(d));
            for (i, &x) in exact.iter().enumerate() {
                prop_assert!((dequantize_q8_8(lut.entry(i, d)) - x).abs() <= 0.5 / 256.0 + 1e-15);
            }
        }
    }

    #[test]
    fn bin_centre_phasor_matches_histogram_phasor(c in counts(), harmonic in 1u32..4) {
        prop_assume!(c.iter().any(|&x| x > 0));
        let h = Histogram::new(axis(), c).unwrap();
        let a = phasor_from_histogram(&h, harmonic).unwrap();
        let b = phasor_from_timestamps(&histogram_to_timestamps(&h, TimestampMode::BinCenter, 0), 10.0, harmonic).unwrap();
        prop_assert!((a.g - b.g).abs() < 1e-12 && (a.s - b.s).abs() < 1e-12);
        prop_assert!(a.magnitude() <= 1.0 + 1e-12);
    }

    #[test]
    fn model_curves_are_peak_normalised(tau1 in 0.2f64..2.0, tau2 in 2.0f64..8.0, alpha in 0.05f64..0.95) {
        let axis = axis();
        for p in [DecayParams::mono(tau1), DecayParams::bi(tau1, tau2, alpha)] {
            let g = model_curve(&p, &irf(&axis), &axis).unwrap();
            prop_assert!(g.iter().all(|&x| x >= 0.0));
            let peak = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn error_metrics_ignore_pixel_order_and_duplication(
        pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..60),
        seed in any::<u64>(),
    ) {
        let (e, t): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
        let mut idx: Vec<usize> = (0..e.len()).collect();
        idx.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let pe: Vec<f64> = idx.iter().map(|&i| e[i]).collect();
        let pt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        prop_assert!(close(mae(&e, &t).unwrap(), mae(&pe, &pt).unwrap(), 1e-12));
        prop_assert!(close(rmse(&e, &t).unwrap(), rmse(&pe, &pt).unwrap(), 1e-12));
        let de = [e.clone(), e.clone()].concat();
        let dt = [t.clone(), t.clone()].concat();
        prop_assert!(close(mae(&e, &t).unwrap(), mae(&de, &dt).unwrap(), 1e-12));
        prop_assert!(close(rmse(&e, &t).unwrap(), rmse(&de, &dt).unwrap(), 1e-12));
    }

    #[test]
    fn r_squared_of_perfect_estimates_is_one(t in prop::collection::vec(0.0f64..10.0, 3..60)) {
        prop_assume!(t.iter().any(|&x| (x - t[0]).abs() > 1e-6));
        let m = scalar_metrics(&t, &t).unwrap();
        prop_assert_eq!(m.mae, 0.0);
        prop_assert!((m.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_a_map_with_itself_is_one(
        rows in 8usize..14,
        cols in 8usize..14,
        v in prop::collection::vec(0.1f64..10.0, 14 * 14),
    ) {
        let values = v[..rows * cols].to_vec();
        prop_assume!(values.iter().any(|&x| (x - values[0]).abs() > 1e-6));
        let map = Map2::new(rows, cols, values).unwrap();
        prop_assert!((ssim_map(&map, &map).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn knots_ignore_density_scale(
        values in prop::collection::vec(0.0f64..5.0, 256),
        scale in 1e-6f64..1e6,
        m in 2usize..16,
    ) {
        prop_assume!(values.iter().filter(|&&v| v > 0.0).count() > 8);
        let axis = axis();
        let density = |values: Vec<f64>| FisherDensity {
            values, aggregation: Aggregation::Average, n_grid: 1, epsilon: 1e-3,
        };
        let cdf = fisher_cdf(&density(values.clone()), &axis).unwrap();
        let scaled = fisher_cdf(&density(values.iter().map(|v| v * scale).collect()), &axis).unwrap();
        prop_assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((cdf.last().unwrap() - 1.0).abs() < 1e-12);
        let a = allocate_knots(&cdf, &axis, m).unwrap();
        let b = allocate_knots(&scaled, &axis, m).unwrap();
        for (x, y) in a.boundaries().iter().zip(b.boundaries()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!(a.boundaries().windows(2).all(|w| w[1] > w[0]));
        prop_assert!(a.first() >= axis.first_center() - 1e-12 && a.last() <= axis.last_center() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fits_never_increase_their_objective(
        u in prop::collection::vec(0.05f64..0.95, 3),
        seed in any::<u64>(),
        bi in any::<bool>(),
    ) {
        let axis = axis();
        let irf = irf(&axis);
        let ranges = if bi {
            ParamRanges::bi((0.2, 2.0), (2.0, 8.0), (0.05, 0.95)).unwrap()
        } else {
            ParamRanges::mono(0.2, 8.0).unwrap()
        };
        let truth = ranges.at(&u[..ranges.kind().n_params()]);
        let mu = expected_counts(500.0, &model_curve(&truth, &irf, &axis).unwrap());
        let h = sample_histogram(&axis, &mu, seed).unwrap();
        let hist_ctx = FitContext::histogram(axis, irf.clone(), ranges).unwrap();
        let basis = SplineBasis::new(uniform_knots(&axis, 8).unwrap());
        let s = sketch_from_histogram(&sketch_matrix(&basis, &axis), &h).unwrap();
        let sketch_ctx = FitContext::sketch(axis, irf, ranges, basis).unwrap();
        for fit in [
            fit_histogram_nlsf(&h, &hist_ctx).unwrap(),
            fit_histogram_mle(&h, &hist_ctx).unwrap(),
            fit_sketch(&s.values, &sketch_ctx).unwrap(),
        ] {
            prop_assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", fit.objective_trace);
            prop_assert!(ranges.contains(&fit.params));
        }
    }

    #[test]
    fn noiseless_mono_histograms_recover_their_lifetime(u in 0.05f64..0.95) {
        let axis = axis();
        let irf = irf(&axis);
        let ranges = ParamRanges::mono(0.2, 8.0).unwrap();
        let truth = ranges.at(&[u]);
        let g = model_curve(&truth, &irf, &axis).unwrap();
        let h = Histogram::new(axis, g.iter().map(|x| (1e6 * x).round() as u64).collect()).unwrap();
        let ctx = FitContext::histogram(axis, irf, ranges).unwrap();
        let tau = truth.to_vec()[0];
        for fit in [fit_histogram_nlsf(&h, &ctx).unwrap(), fit_histogram_mle(&h, &ctx).unwrap()] {
            prop_assert!((fit.params.to_vec()[0] - tau).abs() < 1e-3 * tau, "{:?} vs {}", fit.params, tau);
        }
    }
}

#[test]
fn bi_fisher_density_is_reproducible_for_a_fixed_seed() {
    let axis = axis();
    let irf = irf(&axis);
    let ranges = ParamRanges::bi((0.2, 2.0), (2.0, 8.0), (0.05, 0.95)).unwrap();
    let settings = FisherSettings { n_grid: 40, ..FisherSettings::default() };
    let a = fisher_density(&ranges, 500.0, &irf, &axis, &settings).unwrap();
    let b = fisher_density(&ranges, 500.0, &irf, &axis, &settings).unwrap();
    assert_eq!(a.values, b.values);
    let other = FisherSettings { seed: settings.seed + 1, ..settings };
    assert_ne!(a.values, fisher_density(&ranges, 500.0, &irf, &axis, &other).unwrap().values);
}
