use huecontour::imageproc::{crop_white_border, mean_exg};
use huecontour::phenostats::{extract_slope, slope_by_rm_group, slope_yield_correlation, SlopeObservation};
use huecontour::synthgen::{draw_plot, render_plot_image};
use huecontour::*;
use proptest::prelude::*;

fn closed_form_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    sxy / sxx
}

proptest! {
    #[test]
    fn slope_matches_closed_form_on_its_window(ys in prop::collection::vec(-500.0f64..500.0, 8)) {
        let s = extract_slope(&ys);
        if s.valid {
            let (a, b) = (s.tp_max.min(s.tp_min), s.tp_max.max(s.tp_min));
            let expected = closed_form_slope(&ys[a..=b]);
            prop_assert!((s.slope - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
    }
}

/// Mean ExG per timepoint for an in-memory cohort, skipping PNG round trips.
fn slope_observations(config: GeneratorConfig, timepoints: usize, seed: u64, n_plots: usize) -> Vec<SlopeObservation> {
    let spec = CohortSpec {
        n_plots,
        scheme: SchemeName::SevenClass,
        timepoints,
        seed,
        image_size: (24, 60),
        generator: config,
    };
    let scheme = ClassScheme::new(spec.scheme);
    (0..n_plots)
        .map(|i| {
            let (plot, mut rng) = draw_plot(&spec, &scheme, i);
            let series: Vec<f64> = (0..timepoints)
                .map(|tp| {
                    let img = render_plot_image(&plot.profile, &spec.generator, tp, spec.image_size, &mut rng);
                    mean_exg(&crop_white_border(&img).image)
                })
                .collect();
            SlopeObservation {
                plot_id: plot.plot_id,
                rating: plot.profile.rm_rating,
                slope: extract_slope(&series).slope,
                yield_mth: Some(plot.yield_mth),
            }
        })
        .collect()
}

/// Noise-free canopy and dense sampling relative to the decline: every plot's
/// full peak-to-brown window is observed (no noisy plateau stretches it), so
/// the mean slope tracks the rating-dependent decline rate.
#[test]
fn mean_slope_decreases_across_maturity_groups() {
    let config = GeneratorConfig {
        decline_rate_early: -3.0,
        decline_rate_late: -5.0,
        decline_rate_sd: 0.0,
        noise_sd: 0.0,
        sv_jitter: 0.0,
        ..GeneratorConfig::default()
    };
    for seed in [1, 2, 3] {
        let obs = slope_observations(config.clone(), 30, seed, 140);
        let groups = slope_by_rm_group(&obs, &ClassScheme::new(SchemeName::SevenClass)).unwrap();
        assert_eq!(groups.len(), 7);
        let means: Vec<f64> = groups.iter().map(|g| g.mean).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {means:?}");
    }
}

#[test]
fn steeper_decline_with_higher_yield_gives_negative_correlation() {
    let config = GeneratorConfig {
        decline_rate_sd: 1.0,
        yield_k: 0.3,
        yield_noise_sd: 0.3,
        ..GeneratorConfig::default()
    };
    let obs = slope_observations(config, 8, 77, 350);
    let reports = slope_yield_correlation(&obs, &ClassScheme::new(SchemeName::SevenClass)).unwrap();
    let large: Vec<_> = reports.iter().filter(|r| r.n >= 30).collect();
    assert!(!large.is_empty());
    for r in large {
        let (rv, p) = (r.r.expect("defined"), r.p_value.expect("defined"));
        assert!(rv < 0.0 && p < 0.05, "group {}: r {rv}, p {p}", r.rm_group);
    }
}
