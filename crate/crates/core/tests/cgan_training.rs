use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use v2m_aml::cgan::{cgan_init, cgan_sample, cgan_train, CganConfig};
use v2m_aml::dataset::{
    fit_normalizer, generate_scenario, kmeans_fit, label_dataset, Dataset, KMeansConfig, MicrogridObservation,
    PriorityLabel, Provenance, ScenarioProfile, FEATURE_DIM,
};
use v2m_aml::seed::rng_from_seed;

/// Two well-separated Gaussian modes per class, `n` rows in total.
fn two_gaussians_per_class(n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut d = Dataset::new();
    for i in 0..n {
        let class = i % 3;
        let mode = rng.random_range(0..2usize);
        let c = 2.0 + 4.0 * class as f64 + 1.5 * mode as f64;
        let mut x = [
            c,
            3.0 - class as f64 + 0.8 * mode as f64,
            1.0 + 0.5 * class as f64,
            12.0 + 2.0 * mode as f64,
            0.3 + 0.2 * class as f64,
            0.0,
        ];
        for v in x.iter_mut().take(5) {
            *v += noise.sample(&mut rng) * if *v > 5.0 { 1.0 } else { 0.3 };
        }
        x[5] = (6 + 4 * class + 2 * mode) as f64;
        let obs = MicrogridObservation::from_features_clipped(&x).unwrap();
        d.push(obs, Some(PriorityLabel::ALL[class]), Provenance::Real);
    }
    d
}

#[test]
fn discriminator_accuracy_settles_near_chance_on_two_gaussians() {
    let data = two_gaussians_per_class(400, 3);
    let cfg = CganConfig {
        seed: 5,
        ..CganConfig::default()
    };
    let mut model = cgan_init(&cfg, FEATURE_DIM).unwrap();
    let trace = cgan_train(&mut model, &data).unwrap();
    assert!(!trace.is_empty() && trace.len() <= cfg.epochs);
    let acc = trace.last().unwrap().d_accuracy;
    assert!((0.35..=0.65).contains(&acc), "final discriminator accuracy {acc}");
    assert!(trace.epochs.iter().all(|e| e.d_loss.is_finite() && e.g_loss.is_finite()));
}

fn moments(d: &Dataset) -> ([f64; FEATURE_DIM], [f64; FEATURE_DIM]) {
    let x = d.raw_features();
    let n = x.n_rows() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    let mut sd = [0.0; FEATURE_DIM];
    for r in x.rows() {
        for j in 0..FEATURE_DIM {
            mean[j] += r[j] / n;
        }
    }
    for r in x.rows() {
        for j in 0..FEATURE_DIM {
            sd[j] += (r[j] - mean[j]).powi(2) / n;
        }
    }
    (mean, sd.map(f64::sqrt))
}

#[test]
fn generated_class_means_track_real_class_means() {
    let raw = generate_scenario(1200, 21, &ScenarioProfile::default()).unwrap();
    let stats = fit_normalizer(&raw.raw_features()).unwrap();
    let raw = raw.with_norm_stats(stats);
    let km = kmeans_fit(&raw, &KMeansConfig::default(), 21).unwrap();
    let mut data = label_dataset(&raw, &km).unwrap();
    data.clear_norm_stats();

    let cfg = CganConfig {
        seed: 8,
        ..CganConfig::default()
    };
    let mut model = cgan_init(&cfg, FEATURE_DIM).unwrap();
    cgan_train(&mut model, &data).unwrap();

    // Tolerance unit: the pooled real standard deviation of each feature.
    let (_, pooled_sd) = moments(&data);
    let mut rng = rng_from_seed(13);
    for label in PriorityLabel::ALL {
        let real = data.select(&data.indices_with_label(label));
        let fake = cgan_sample(&model, label, 800, &mut rng).unwrap();
        assert!(fake.labels().iter().all(|l| *l == Some(label)));
        let (rm, _) = moments(&real);
        let (fm, _) = moments(&fake);
        for j in 0..FEATURE_DIM {
            let gap = (rm[j] - fm[j]).abs() / pooled_sd[j];
            assert!(gap < 0.5, "{label:?} feature {j}: {gap:.3} standardized units");
        }
    }
}
