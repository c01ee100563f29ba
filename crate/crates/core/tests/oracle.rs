//! Library results against the brute-force references on seeded instances.

mod common;

use affinity_lr::affinity::{affinity_eval_f64, AffinityConfig, AffinityMode, ModelingFn};
use affinity_lr::eval::miou;
use affinity_lr::metric::{lr_step_f64, LrConfig};
use affinity_lr::pairs::{build_pairs, KernelSet};
use affinity_lr::rng::Rng;
use affinity_lr::LabelMap;
use common::{affinity_oracle, instance, lr_oracle, miou_oracle, pairs_oracle, Omega};

const INSTANCES: u64 = 120;
const DILATIONS: [usize; 3] = [1, 2, 5];

fn kernels() -> KernelSet {
    KernelSet::new(DILATIONS.iter().map(|&d| d as u32).collect()).unwrap()
}

fn sorted(v: impl IntoIterator<Item = (u32, u32)>) -> Vec<(u32, u32)> {
    let mut v: Vec<_> = v.into_iter().collect();
    v.sort_unstable();
    v
}

#[test]
fn build_pairs_matches_exhaustive_scan() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let labels = LabelMap::new(inst.h, inst.w, inst.labels.clone()).unwrap();
        let set = build_pairs(&labels, &kernels()).unwrap();
        for (dp, &d) in set.per_dilation.iter().zip(&DILATIONS) {
            let want = pairs_oracle(&inst.labels, inst.h, inst.w, d);
            let got = [&dp.fg_pos, &dp.bg_pos, &dp.neg];
            for k in 0..3 {
                assert_eq!(sorted(got[k].iter().map(|p| (p.i, p.j))), sorted(want[k].clone()), "seed {seed} d {d} kind {k}");
                // Enumeration is grouped by center in row-major order.
                assert!(got[k].windows(2).all(|w| w[0].i <= w[1].i));
            }
        }
    }
}

fn affinity_case(mode: AffinityMode, f: ModelingFn, omega: Omega) {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let labels = LabelMap::new(inst.h, inst.w, inst.labels.clone()).unwrap();
        let cfg = AffinityConfig {
            mode,
            modeling_fn: f,
            kernels: kernels(),
            ..Default::default()
        };
        let pairs = build_pairs(&labels, &cfg.kernels).unwrap();
        let conf = (mode == AffinityMode::Aa).then_some(inst.conf.as_slice());
        let got = affinity_eval_f64(&inst.probs, inst.c, conf, &pairs, &cfg).unwrap().total;
        let want = affinity_oracle(&inst, &DILATIONS, omega, cfg.margin_m);
        assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn sa_loss_matches_reference() {
    affinity_case(AffinityMode::Sa, ModelingFn::Max, Omega::One);
}

#[test]
fn aa_loss_matches_reference_for_each_modeling_fn() {
    affinity_case(AffinityMode::Aa, ModelingFn::Max, Omega::Max);
    affinity_case(AffinityMode::Aa, ModelingFn::Min, Omega::Min);
    affinity_case(AffinityMode::Aa, ModelingFn::Plus, Omega::Plus);
}

#[test]
fn lr_loss_matches_reference() {
    let mut compared = 0;
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut rng = Rng::new(seed + 10_000);
        let dim = 1 + rng.below(6) as usize;
        let embed: Vec<f64> = (0..inst.h * inst.w * dim).map(|_| rng.normal()).collect();
        for gamma in [0.0, 2.0] {
            let cfg = LrConfig {
                gamma,
                ..Default::default()
            };
            let got = lr_step_f64(&embed, dim, &inst.labels, &inst.conf, &cfg);
            match lr_oracle(&embed, dim, &inst.labels, &inst.conf, gamma, cfg.margin_n, false) {
                Some(want) => {
                    let got = got.unwrap().eval.total;
                    assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
                    compared += 1;
                }
                None => assert!(got.is_err()),
            }
        }
    }
    assert!(compared >= 200, "only {compared} instances had two classes");
}

#[test]
fn miou_matches_tally() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(seed);
        let (h, w) = (1 + rng.below(64) as usize, 1 + rng.below(64) as usize);
        let classes = 2 + rng.below(5) as usize;
        let draw = |rng: &mut Rng| -> Vec<u8> {
            (0..h * w)
                .map(|_| if rng.next_f64() < 0.1 { 255 } else { rng.below(classes as u64) as u8 })
                .collect()
        };
        let (p, g) = (draw(&mut rng), draw(&mut rng));
        let got = miou(
            &LabelMap::new(h, w, p.clone()).unwrap(),
            &LabelMap::new(h, w, g.clone()).unwrap(),
            classes,
        )
        .unwrap()
        .miou;
        assert_eq!(got.to_bits(), miou_oracle(&p, &g, classes).to_bits(), "seed {seed}");
    }
}
