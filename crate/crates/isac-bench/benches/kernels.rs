//! Throughput benchmarks for the hot kernels: Bessel J0, whitening,
//! single-realization FIM assembly and MMSE estimator construction.

use std::path::PathBuf;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use isac_core::comm_channel::{build_spatial_covariance, zeta_vec};
use isac_core::estimation::{pilot_map, MmseEstimator};
use isac_core::fim::{assemble_fim, ClutterMode, Regime, ScenarioRealization};
use isac_core::numerics::{bessel_j0, whitener, CMat, HermitianMatrix, C64};
use isac_core::scenario::{pathloss, ScenarioConfig};

fn bench_config() -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default_crb.toml");
    let mut cfg = ScenarioConfig::load(&path).unwrap();
    cfg.i_total = 60; // one coherence block
    cfg
}

fn bessel(c: &mut Criterion) {
    c.bench_function("bessel_j0_series", |b| {
        b.iter(|| bessel_j0(black_box(7.3)).unwrap())
    });
    c.bench_function("bessel_j0_asymptotic", |b| {
        b.iter(|| bessel_j0(black_box(57.3)).unwrap())
    });
}

fn whitening(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(1);
    let g = CMat::from_fn(8, 8, |_, _| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let r =
        HermitianMatrix::new(&g * g.adjoint() + CMat::identity(8, 8) * C64::new(0.5, 0.0)).unwrap();
    c.bench_function("whitener_8x8", |b| {
        b.iter(|| whitener(black_box(&r)).unwrap())
    });
}

fn fim_assembly(c: &mut Criterion) {
    let cfg = bench_config();
    let real = ScenarioRealization::generate(&cfg).unwrap();
    c.bench_function("fim_one_realization_hybrid_60x600_bins", |b| {
        b.iter(|| {
            assemble_fim(
                &real,
                Regime::Hybrid,
                ClutterMode::WithClutter,
                black_box(0),
            )
        })
    });
}

fn estimator_build(c: &mut Criterion) {
    let cfg = bench_config();
    let cov = build_spatial_covariance(&cfg, 0).unwrap();
    let alpha = pathloss(&cfg, 0).unwrap();
    let rho = cfg.ue_stream_amplitude();
    let w0p0 = CMat::identity(cfg.m_ue, cfg.m_ue) * C64::new(rho, 0.0);
    let d = pilot_map(&w0p0, 2, cfg.m_bs_tx);
    let zeta = zeta_vec(&cfg, 0, 2);
    c.bench_function("mmse_estimator_build_64ch_nu2_p2", |b| {
        b.iter(|| {
            MmseEstimator::build(
                black_box(&cov.c_full),
                &zeta,
                &d,
                alpha,
                cfg.tau_p,
                cfg.noise_var,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bessel, whitening, fim_assembly, estimator_build);
criterion_main!(benches);
