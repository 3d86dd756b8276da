use huecontour::datamodel::RmRating;
use huecontour::imageproc::hue_histogram_of;
use huecontour::synthgen::{profile_for_rating, render_plot_image, SenescenceProfile};
use huecontour::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZE: (u32, u32) = (60, 200);

fn histograms(profile: &SenescenceProfile, config: &GeneratorConfig, timepoints: usize, seed: u64) -> Vec<HueHistogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..timepoints)
        .map(|tp| hue_histogram_of(&render_plot_image(profile, config, tp, SIZE, &mut rng)))
        .collect()
}

/// Mean hue over canopy pixels only (soil hue is fixed and far below the
/// green plateau, so it is excluded by a lower cut).
fn canopy_mean_hue(h: &HueHistogram, soil_bin: usize) -> f64 {
    let (mut mass, mut weighted) = (0u64, 0u64);
    for (bin, &c) in h.counts().iter().enumerate().filter(|(b, _)| *b != soil_bin) {
        mass += c;
        weighted += bin as u64 * c;
    }
    weighted as f64 / mass as f64
}

fn soil_bin(config: &GeneratorConfig) -> usize {
    let [r, g, b] = config.soil_rgb;
    usize::from(rgb_to_hue(r, g, b))
}

#[test]
fn early_plot_is_browner_at_tp8_than_late_plot_at_tp6() {
    let config = GeneratorConfig::default();
    let profile = |tenths: u16, onset: f64| SenescenceProfile {
        onset_tp: onset,
        decline_rate: config.mean_decline_rate(RmRating::from_tenths(tenths)),
        ..profile_for_rating(RmRating::from_tenths(tenths), &config, &mut ChaCha8Rng::seed_from_u64(0))
    };
    let early = profile(16, 2.0);
    let late = profile(39, 6.0);
    // Trajectory: the early plot has declined for 5 steps by tp8 (index 7),
    // the late plot has not yet started at tp6 (index 5).
    assert!(early.hue_at(7.0) < late.hue_at(5.0));

    let soil = soil_bin(&config);
    let h_early = histograms(&early, &config, 8, 1);
    let h_late = histograms(&late, &config, 8, 2);
    assert!(canopy_mean_hue(&h_early[7], soil) < canopy_mean_hue(&h_late[5], soil));
}

#[test]
fn later_maturity_declines_faster_on_average() {
    let config = GeneratorConfig {
        decline_rate_sd: 1.0,
        ..GeneratorConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mean_rate = |tenths: u16| {
        (0..1000)
            .map(|_| profile_for_rating(RmRating::from_tenths(tenths), &config, &mut rng).decline_rate)
            .sum::<f64>()
            / 1000.0
    };
    let early = mean_rate(16);
    let late = mean_rate(39);
    assert!(late < early, "{late} vs {early}");
}

#[test]
fn histogram_mass_moves_to_lower_hue() {
    let config = GeneratorConfig::default();
    let profile = profile_for_rating(RmRating::from_tenths(25), &config, &mut ChaCha8Rng::seed_from_u64(4));
    let h = histograms(&profile, &config, 8, 4);
    assert!(h[7].mean_hue() < h[0].mean_hue());
}

#[test]
fn grid_peak_column_never_moves_right() {
    // Full canopy cover so the soil colour cannot own the peak bin, and no
    // pixel jitter: with noise, plateau rows trade the peak between
    // neighbouring bins at random.
    let config = GeneratorConfig {
        canopy_fraction: 1.0,
        noise_sd: 0.0,
        sv_jitter: 0.0,
        ..GeneratorConfig::default()
    };
    for tenths in [16u16, 22, 28, 34, 39] {
        let profile = profile_for_rating(RmRating::from_tenths(tenths), &config, &mut ChaCha8Rng::seed_from_u64(5));
        let grid = build_grid(&histograms(&profile, &config, 8, u64::from(tenths))).unwrap().grid;
        let peaks: Vec<usize> = (0..grid.rows())
            .map(|t| {
                let row = grid.row(t);
                (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
            })
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "rating {tenths}: {peaks:?}");
    }
}

#[test]
fn cohort_on_disk_matches_request() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        n_plots: 7,
        scheme: SchemeName::SevenClass,
        timepoints: 8,
        seed: 1,
        image_size: SIZE,
        generator: GeneratorConfig::default(),
    };
    let cohort = generate_cohort(&spec, dir.path()).unwrap();
    assert_eq!(cohort.records.len(), 7);
    let pngs = std::fs::read_dir(dir.path().join("images")).unwrap().count();
    assert_eq!(pngs, 56);
    let reloaded = load_manifest(&cohort.manifest_path).unwrap();
    assert_eq!(reloaded.len(), 7);
    for (a, b) in reloaded.iter().zip(&cohort.records) {
        assert_eq!((&a.plot_id, a.rm_rating), (&b.plot_id, b.rm_rating));
        assert!(a.is_valid());
    }
}
