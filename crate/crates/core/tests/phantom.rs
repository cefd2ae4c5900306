use petkin_core::config::ExperimentConfig;
use petkin_core::image::Image;
use petkin_core::phantom::{
    add_poisson, build_dataset, build_sample, list_samples, make_phantom, osem_reconstruct, poisson_log_likelihood, read_sample, write_sample, Osem,
    PhantomKind, Projector, SimulationSetup, Sinogram,
};

fn disk(size: usize, radius: f64) -> Image {
    let c = (size as f64 - 1.0) / 2.0;
    let mut img = Image::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            if ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt() <= radius {
                img.set(x, y, 1.0);
            }
        }
    }
    img
}

#[test]
fn zero_sinogram_reconstructs_to_zero_after_one_update() {
    let p = Projector::for_image(32).unwrap();
    let g = p.geometry();
    let sino = Sinogram { n_angles: g.n_angles(), n_bins: g.n_bins, data: vec![0.0; g.n_angles() * g.n_bins] };
    let img = osem_reconstruct(&sino, &p, 1, 1).unwrap();
    assert!(img.data.iter().all(|v| *v == 0.0));
    let img = osem_reconstruct(&sino, &p, 1, 4).unwrap();
    assert!(img.data.iter().all(|v| *v == 0.0));
}

#[test]
fn noiseless_disk_reconstruction() {
    let size = 64;
    let map = make_phantom(PhantomKind::Brain, size, 1, 3).unwrap();
    let truth = map.to_image();
    assert!(truth.data.iter().all(|v| *v == 0.0 || *v == 1.0));
    let p = Projector::for_image(size).unwrap();
    let sino = p.forward(&truth).unwrap();
    let recon = osem_reconstruct(&sino, &p, 6, 5).unwrap();
    let mask = map.body_mask();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..truth.len() {
        if mask[i] {
            num += (recon.data[i] - truth.data[i]).powi(2);
            den += truth.data[i].powi(2);
        }
    }
    let nrmse = (num / den).sqrt();
    assert!(nrmse <= 0.15, "in-mask NRMSE {nrmse}");
}

#[test]
fn mlem_likelihood_never_decreases() {
    let size = 32;
    let p = Projector::for_image(size).unwrap();
    let truth = disk(size, 10.0);
    let measured = add_poisson(&p.forward(&truth).unwrap(), 0.2, 1e5, 9).unwrap();
    let mut history = Vec::new();
    Osem::new(15, 1)
        .unwrap()
        .reconstruct_with(&p, &measured, |_, x| {
            let expected = p.forward_raw(x).unwrap();
            history.push(poisson_log_likelihood(&measured.data, &expected));
        })
        .unwrap();
    for w in history.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn projections_of_a_disk_are_chord_lengths() {
    let size = 64;
    let radius = 20.0;
    let p = Projector::for_image(size).unwrap();
    let sino = p.forward(&disk(size, radius)).unwrap();
    let nb = sino.n_bins;
    for a in 0..sino.n_angles {
        for b in 0..nb {
            let s = b as f64 - (nb as f64 - 1.0) / 2.0;
            if s.abs() > 15.0 {
                continue;
            }
            let chord = 2.0 * (radius * radius - s * s).sqrt();
            let got = sino.data[a * nb + b];
            assert!((got - chord).abs() <= 0.05 * chord, "angle {a} bin {b}: {got} vs {chord}");
        }
    }
}

fn desk() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(include_str!("../../../configs/desk.json")).unwrap();
    cfg.simulation.n_train = 2;
    cfg.simulation.n_test = 1;
    cfg
}

#[test]
fn samples_are_reproducible_and_independent_of_batching() {
    let cfg = desk();
    let setup = SimulationSetup::from_config(&cfg, None).unwrap();
    let all = build_dataset(&setup, 42, 0..3).unwrap();
    let single = build_sample(&setup, 42, 2).unwrap();
    assert_eq!(all[2].noisy, single.noisy);
    assert_eq!(all[2].roi_params, single.roi_params);
    let other = build_sample(&setup, 43, 2).unwrap();
    assert_ne!(other.noisy, single.noisy);
    for s in &all {
        assert_eq!(s.noisy.n_frames(), 18);
        assert!(s.noisy.data().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(s.clean.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn stored_samples_round_trip() {
    let cfg = desk();
    let setup = SimulationSetup::from_config(&cfg, None).unwrap();
    let sample = build_sample(&setup, 1, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_sample(dir.path(), &sample, cfg.early_frames).unwrap();
    let files: Vec<_> = std::fs::read_dir(&path).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(files.iter().filter(|f| f.ends_with(".pkarr")).count(), 8);
    assert_eq!(list_samples(dir.path()).unwrap(), vec![path.clone()]);
    let back = read_sample(&path).unwrap();
    assert_eq!(back.index, sample.index);
    assert_eq!(back.labels, sample.labels);
    assert_eq!(back.roi_params, sample.roi_params);
    // Arrays are stored as f32.
    for (a, b) in back.noisy.data().iter().zip(sample.noisy.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(back.params.params.len(), sample.params.params.len());
}
