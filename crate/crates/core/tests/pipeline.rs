use lari_core::diagnostics::{score_fit, TrueParams};
use lari_core::experiment::{run_experiment, ExperimentConfig, Recipe, RunManifest, SurfaceStudy, MANIFEST_FILE};
use lari_core::mcmc::{run_mwg, MCMCConfig, Priors};
use lari_core::rng::{stream_id, substream};
use lari_core::sampling::SamplingDesign;
use lari_core::sim::{simulate_quadratic_ar2, QuadraticSimParams};
use lari_core::surfaces::GriddedSurface;

#[test]
fn simulate_subsample_fit_and_score() {
    let sim = QuadraticSimParams { n: 201, ..Default::default() };
    let path = simulate_quadratic_ar2(&sim, &mut substream(9, stream_id(0, 0))).unwrap();
    let design = SamplingDesign::Lari { h: 5.0, resolution: None };
    let sub = design.apply(&path, &mut substream(9, stream_id(0, 1))).unwrap();
    assert_eq!(sub.observed.len(), 41);
    assert_eq!(sub.unobserved_times.len(), 160);

    let cfg = MCMCConfig { adapt_iters: 3000, sample_iters: 3000, ..Default::default() };
    let priors = Priors::default().with_observed_range(&sub.observed);
    let draws = run_mwg(&sub, &priors, &cfg, &mut substream(9, stream_id(0, 2))).unwrap();
    let truth = TrueParams { alpha: sim.alpha, beta: sim.beta, sigma: sim.sigma };
    let m = score_fit(0, design.name(), &draws, &sub, Some(truth), 0.95, true);

    assert_eq!(m.design, "lari");
    for k in 0..3 {
        assert!(m.ci[k][0] < m.means[k] && m.means[k] < m.ci[k][1], "{m:?}");
    }
    // posterior means land in a plausible neighbourhood of the truth
    assert!((m.means[0] - 0.08).abs() < 0.06, "{m:?}");
    assert!((m.means[1] - 0.4).abs() < 0.3, "{m:?}");
    assert!((m.means[2] - 0.25).abs() < 0.15, "{m:?}");
    // imputed positions are no worse than straight-line interpolation
    let (to, ro) = (sub.observed.times(), sub.observed.positions());
    let truth_pos = sub.unobserved_truth.as_ref().unwrap();
    let mut linear = 0.0;
    for (t, r) in sub.unobserved_times.iter().zip(truth_pos) {
        let j = to.iter().position(|x| x > t).unwrap();
        let w = (t - to[j - 1]) / (to[j] - to[j - 1]);
        for u in 0..2 {
            linear += (ro[j - 1][u] + w * (ro[j][u] - ro[j - 1][u]) - r[u]).powi(2);
        }
    }
    let mspe = m.mspe_missing.unwrap();
    assert!(mspe <= linear, "mspe {mspe} vs linear interpolation {linear}");
}

#[test]
fn surface_study_raster_round_trip() {
    let study = SurfaceStudy::default();
    let mut buf = Vec::new();
    study.true_potential.write_ascii(&mut buf).unwrap();
    let back = GriddedSurface::read_ascii(buf.as_slice()).unwrap();
    assert_eq!(back, study.true_potential);
    let (paths, _) = study.simulate(1, 0).unwrap();
    assert_eq!(paths.len(), study.n_paths);
    assert!(paths.iter().all(|p| p.len() == study.n_steps));
}

#[test]
fn recipe_run_writes_manifest_that_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { replicates: 2, sample_iters: 0, ..ExperimentConfig::desk(Recipe::NoInfill) };
    let manifest = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(manifest.status, "complete");
    for f in &manifest.files {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let loaded = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.config, cfg);
}
