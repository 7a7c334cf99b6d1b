use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use exchgp::harness::{staggered_pipeline, GpForecaster, PipelineMode, StaggeredConfig};
use exchgp::hyperopt::{fit_design, FitOptions};
use exchgp::model::{Design, HyperParams, ModelSpec};
use exchgp::panel::{PanelDataset, RowRef};
use exchgp::par::Parallelism;
use exchgp::simulate::{sample_prior, SimLayout, Treatment};

fn theta() -> HyperParams {
    HyperParams {
        sigma_mu2: 4.0,
        sigma_g1_2: 1.0,
        sigma_g2_2: 0.0,
        ell_time: 5.0,
        ell_x: vec![],
        ell_shared: None,
        omega2: Default::default(),
    }
}

fn panel(m: usize, t: i64, treated: usize) -> PanelDataset {
    let mut layout = SimLayout::balanced(m, t, ModelSpec::preset("rbf-time").unwrap(), theta(), 0.25);
    layout.treatments = (0..treated)
        .map(|i| Treatment { unit: i, t0: 2 * t / 3 + i as i64 % 3, effect: 0.0 })
        .collect();
    sample_prior(&layout, 3).unwrap()
}

fn modes() -> [(&'static str, Parallelism); 2] {
    [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Auto)]
}

fn restarts(c: &mut Criterion) {
    let data = panel(10, 20, 0);
    let rows: Vec<RowRef> = data
        .units
        .iter()
        .flat_map(|u| u.times.iter().map(move |&t| RowRef::new(u.id.clone(), t)))
        .collect();
    let (d, y) = Design::from_rows(&data, &rows).unwrap();
    let spec = ModelSpec::preset("rbf-time").unwrap();
    let mut g = c.benchmark_group("fit_restarts");
    g.sample_size(10);
    for (name, par) in modes() {
        let opts = FitOptions { restarts: 4, parallelism: par, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, o| {
            b.iter(|| fit_design(&spec, &d, &y, o).unwrap())
        });
    }
    g.finish();
}

fn staggered(c: &mut Criterion) {
    let data = panel(16, 18, 4);
    let mut g = c.benchmark_group("staggered_units");
    g.sample_size(10);
    for (name, par) in modes() {
        let fc = GpForecaster {
            spec: ModelSpec::preset("ou-time").unwrap(),
            opts: FitOptions { restarts: 1, parallelism: Parallelism::Sequential, ..Default::default() },
        };
        let cfg = StaggeredConfig { controls: 6, parallelism: par, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| staggered_pipeline(&data, cfg, &fc, PipelineMode::Validate).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, restarts, staggered);
criterion_main!(benches);
