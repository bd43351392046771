use criterion::{black_box, criterion_group, criterion_main, Criterion};

use lanetrap_bench::{detector, scenes};
use lanetrap_core::attack::{apply_lra, AttackKind};
use lanetrap_core::detector::{LossSelector, LossWeights};
use lanetrap_core::heatmap::{compute_heatmap, HeatmapConfig};
use lanetrap_core::placement::{enumerate_candidates, score_and_select};
use lanetrap_core::scene::{generate_scene, GeneratorConfig};
use lanetrap_core::trigger::{env_consistency_score, masked_diffusion_edit, DiffusionSchedule, TextureKind, ToyDenoiser};
use lanetrap_core::{Image, LaneLabel, Mask};

fn detector_kernels(c: &mut Criterion) {
    let state = detector();
    let data = scenes(16);
    let images: Vec<&Image> = data.iter().map(|s| &s.image).collect();
    let labels: Vec<&LaneLabel> = data.iter().map(|s| &s.label).collect();
    let weights = LossWeights::default();
    c.bench_function("detector_forward_16", |b| b.iter(|| state.forward_many(black_box(&images)).unwrap()));
    c.bench_function("detector_param_gradient_16", |b| {
        b.iter(|| state.param_gradient(&images, &labels, &weights, LossSelector::Total).unwrap())
    });
    c.bench_function("detector_input_gradient", |b| {
        b.iter(|| state.input_gradient(&data[0].image, &data[0].label, &weights, LossSelector::Reg).unwrap())
    });
}

fn attention_and_placement(c: &mut Criterion) {
    let state = detector();
    let scene = &scenes(1)[0];
    let map = compute_heatmap(&state, &scene.image, &scene.label, AttackKind::Loa, &HeatmapConfig::default()).unwrap();
    let cands = enumerate_candidates(&scene.road_mask, (16, 16), 4, 1.0).unwrap();
    c.bench_function("score_and_select", |b| b.iter(|| score_and_select(black_box(&cands), &map).unwrap()));
    c.bench_function("enumerate_candidates", |b| {
        b.iter(|| enumerate_candidates(black_box(&scene.road_mask), (16, 16), 4, 1.0).unwrap())
    });
}

fn trigger_kernels(c: &mut Criterion) {
    let scene = &scenes(1)[0];
    let (h, w, _) = scene.image.shape();
    let region = Mask::rect(h, w, 64, 40, 16, 16);
    let den = ToyDenoiser::init(3, 16, 8);
    let sched = DiffusionSchedule::default();
    c.bench_function("masked_diffusion_edit", |b| {
        b.iter(|| {
            masked_diffusion_edit(
                &scene.image,
                &region,
                TextureKind::Mud,
                &sched,
                &den,
                &scene.lane_mask,
                &scene.env_mask,
                1,
            )
            .unwrap()
        })
    });
    let env = region.dilate(8).not();
    c.bench_function("env_consistency_score", |b| {
        b.iter(|| env_consistency_score(black_box(&scene.image), &scene.image, &env).unwrap())
    });
}

fn scene_and_labels(c: &mut Criterion) {
    let cfg = GeneratorConfig::default();
    c.bench_function("generate_scene", |b| b.iter(|| generate_scene(black_box(5), &cfg).unwrap()));
    let scene = generate_scene(5, &cfg).unwrap();
    c.bench_function("apply_lra", |b| b.iter(|| apply_lra(black_box(&scene.label), 9.0, 0, None)));
}

criterion_group!(benches, detector_kernels, attention_and_placement, trigger_kernels, scene_and_labels);
criterion_main!(benches);
