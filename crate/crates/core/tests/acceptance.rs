//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion with
//! its sub-checks, and exits nonzero if a sub-check fails that is not listed
//! in `KNOWN_FAILURES`.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use srmu_core::datagen::{generate, DatasetConfig, EntangledDataset};
use srmu_core::eval::{compare_methods, evaluate, median, parse_grid, sweep, EvalReport, SweepRow};
use srmu_core::importance::{
    fuse_diff, fuse_prod, fuse_ratio, normalize, summarize_activations, ActivationSummary, Fusion,
    FusionConfig, ImportanceMap,
};
use srmu_core::manifest::RunManifest;
use srmu_core::misdirect::{
    build_target, rmu_target, sample_direction, MisdirectionSpec, RmuSpec, Variant,
};
use srmu_core::model::{pretrain, ModelConfig, PretrainConfig, ToyModel};
use srmu_core::numerics::{Matrix, SeededRng};
use srmu_core::unlearn::{
    check_case, forget_loss, random_cases, retain_loss, run_unlearning, summary_batches,
    write_step_csv, AdamW, AdamWConfig, Method, UnlearnConfig, DESK_SCALE_LR, GRADCHECK_TOLERANCE,
};

/// Sub-checks that fail on this toy setup; see the project notes for the
/// measurements behind each entry.
const KNOWN_FAILURES: &[&str] = &[
    "4.rmu_gate",
    "6b.fixed_plus",
    "6b.fixed_minus",
    "6c.uniform_retain",
    "6c.uniform_forget",
];

const GRID: &str = "1:170:10";
const LOW_RHO: f64 = 0.05;
const HIGH_RHO: f64 = 0.25;
const LOW_SEEDS: [u64; 3] = [1, 2, 3];
const HIGH_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const PRETRAIN_GATE: f64 = 0.90;
/// Forgetting counts as comparable when within this many accuracy points.
const COMPARABLE_FORGET: f64 = 0.05;

struct Check {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn check(id: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        id,
        passed,
        detail: detail.into(),
    }
}

struct Criterion {
    number: u32,
    title: &'static str,
    checks: Vec<Check>,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn budget(id: &'static str, elapsed: Duration, limit_secs: u64) -> Check {
    check(
        id,
        elapsed < Duration::from_secs(limit_secs),
        format!("{:.1} s < {limit_secs} s", elapsed.as_secs_f64()),
    )
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- criterion 1

fn gradient_oracle() -> Criterion {
    let (errors, elapsed) = timed(|| {
        random_cases(20, 2024)
            .iter()
            .map(|c| check_case(c).map(|r| r.max_relative_error))
            .collect::<Result<Vec<f64>, _>>()
    });
    let mut checks = Vec::new();
    match errors {
        Ok(errs) => {
            let worst = errs.iter().cloned().fold(0.0, f64::max);
            checks.push(check(
                "1.max_rel_err",
                errs.len() == 20 && worst < GRADCHECK_TOLERANCE,
                format!("20 cases, max rel err {worst:.3e} < 1e-4"),
            ));
        }
        Err(e) => checks.push(check("1.max_rel_err", false, format!("error: {e}"))),
    }
    checks.push(budget("1.runtime", elapsed, 30));
    Criterion {
        number: 1,
        title: "gradient oracle",
        checks,
    }
}

// ---------------------------------------------------------------- criterion 2

fn summary(f: &[f64], r: &[f64]) -> ActivationSummary {
    ActivationSummary::new(f.to_vec(), r.to_vec()).unwrap()
}

fn one_hot_model() -> ToyModel {
    let cfg = ModelConfig {
        input: 2,
        hidden: 2,
        target: 2,
        forget_classes: 2,
        retain_classes: 2,
        ..ModelConfig::default()
    };
    let mut m = ToyModel::zeros(cfg);
    m.w1 = Matrix::identity(2);
    m.w2 = Matrix::identity(2);
    m
}

fn formula_suite() -> Criterion {
    let (checks, elapsed) = timed(|| {
        let mut c = Vec::new();
        let ids = one_hot_model();
        let row = |a: f64, b: f64| Matrix::from_rows(&[[a, b]]).unwrap();

        let s =
            summarize_activations(&ids, &[row(1.0, 3.0), row(3.0, 5.0)], &[row(1.0, 1.0)]).unwrap();
        c.push(check(
            "2.summary_mean",
            s.forget_mean == vec![2.0, 4.0],
            "[1,3],[3,5] -> v_f [2,4]",
        ));
        let single = summarize_activations(&ids, &[row(1.0, 2.0)], &[row(3.0, 4.0)]).unwrap();
        c.push(check(
            "2.summary_single",
            single.forget_mean == vec![1.0, 2.0] && single.retain_mean == vec![3.0, 4.0],
            "one sample per side",
        ));
        let twice =
            summarize_activations(&ids, &[row(1.0, 2.0), row(1.0, 2.0)], &[row(3.0, 4.0)]).unwrap();
        c.push(check(
            "2.summary_dup",
            twice.forget_mean == single.forget_mean,
            "duplicated batch",
        ));

        let r = fuse_ratio(&summary(&[0.0, 2.0], &[1.0, 2.0]), 1e-12).unwrap();
        c.push(check("2.ratio_zero", r[0] == 0.0, "v_f = 0 -> 0"));
        c.push(check(
            "2.ratio_equal",
            close(r[1], std::f64::consts::LN_2, 1e-9),
            format!("v_f = v_r -> {:.6}", r[1]),
        ));
        let r = fuse_ratio(&summary(&[1.0], &[0.0]), 1e-3).unwrap();
        c.push(check(
            "2.ratio_1001",
            close(r[0], 1001f64.ln(), 1e-12) && close(r[0], 6.9088, 1e-4),
            format!("{:.4}", r[0]),
        ));

        let d = fuse_diff(&summary(&[1.0, 3.0], &[2.0, 1.0]), 1.0).unwrap();
        c.push(check("2.diff_split", d == vec![0.0, 2.0], format!("{d:?}")));
        let d = fuse_diff(&summary(&[1.5, 3.0], &[2.0, 1.0]), 0.0).unwrap();
        c.push(check(
            "2.diff_lambda0",
            d == vec![1.5, 3.0],
            format!("{d:?}"),
        ));
        let d = fuse_diff(&summary(&[1.5, 3.0], &[1.5, 3.0]), 1.0).unwrap();
        c.push(check("2.diff_equal", d == vec![0.0, 0.0], format!("{d:?}")));

        let p = fuse_prod(&summary(&[1.0, 1.0], &[1.0, 1.0]), 1e-12).unwrap();
        c.push(check(
            "2.prod_uniform",
            p.iter().all(|v| close(*v, 1.0, 1e-9)),
            format!("{p:?}"),
        ));
        let p = fuse_prod(&summary(&[2.0, 0.0], &[1.0, 1.0]), 1e-12).unwrap();
        c.push(check(
            "2.prod_2_0",
            close(p[0], 2.0, 1e-9) && p[1] == 0.0,
            format!("{p:?}"),
        ));
        let p = fuse_prod(&summary(&[0.0, 0.0], &[1.0, 3.0]), 1e-6).unwrap();
        c.push(check("2.prod_zero", p == vec![0.0, 0.0], format!("{p:?}")));

        let n = normalize(&[2.0, 4.0]);
        c.push(check(
            "2.norm_scale",
            close(n[0], 0.5, 1e-8) && close(n[1], 1.0, 1e-8),
            format!("{n:?}"),
        ));
        c.push(check(
            "2.norm_zero",
            normalize(&[0.0, 0.0]) == vec![0.0, 0.0],
            "[0,0] -> [0,0]",
        ));
        let n = normalize(&[1e-8]);
        c.push(check(
            "2.norm_tiny",
            close(n[0], 0.5, 1e-12),
            format!("{n:?}"),
        ));

        let v1 = sample_direction(4, &mut SeededRng::new(9)).unwrap();
        let v2 = sample_direction(4, &mut SeededRng::new(9)).unwrap();
        c.push(check(
            "2.direction_repro",
            v1 == v2 && v1.iter().all(|v| v * v == 1.0),
            format!("{v1:?}"),
        ));
        let mut rng = SeededRng::new(10);
        let mut total = 0.0;
        for _ in 0..10_000 {
            total += sample_direction(64, &mut rng).unwrap().iter().sum::<f64>();
        }
        let mean = total / 640_000.0;
        c.push(check(
            "2.direction_mean",
            mean.abs() <= 0.05,
            format!("mean entry {mean:.5}"),
        ));

        let spec = MisdirectionSpec {
            variant: Variant::Full,
            c_map: 2.0,
            signs: vec![1.0, -1.0],
            unit_interval: None,
        };
        let t = build_target(&spec, &[1.0, 0.5]).unwrap();
        c.push(check("2.target_eq", t == vec![2.0, -1.0], format!("{t:?}")));
        let zero = build_target(
            &MisdirectionSpec {
                variant: Variant::ZeroTarget,
                ..spec.clone()
            },
            &[1.0, 0.5],
        )
        .unwrap();
        c.push(check(
            "2.target_zero_variant",
            zero == vec![0.0, 0.0],
            format!("{zero:?}"),
        ));
        let all_zero = Variant::ALL.iter().all(|&variant| {
            let s = MisdirectionSpec::sample(3, 0.0, variant, &mut SeededRng::new(1)).unwrap();
            build_target(&s, &[1.0, 0.2, 0.7]).unwrap() == vec![0.0; 3]
        });
        c.push(check(
            "2.target_c0",
            all_zero,
            "c_map = 0 -> zero target for every variant",
        ));

        let rmu = RmuSpec::fixed(64, 7.5, &mut SeededRng::new(3)).unwrap();
        let t = rmu_target(&rmu, None).unwrap();
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.push(check(
            "2.rmu_norm",
            close(norm, 7.5, 1e-9),
            format!("norm {norm:.12}"),
        ));
        let t0 = rmu_target(
            &RmuSpec::fixed(8, 0.0, &mut SeededRng::new(3)).unwrap(),
            None,
        )
        .unwrap();
        c.push(check("2.rmu_zero", t0.iter().all(|&v| v == 0.0), "c = 0"));
        let ad = RmuSpec::adaptive(16, 2.0, &mut SeededRng::new(4)).unwrap();
        let t = rmu_target(&ad, Some(4.0)).unwrap();
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.push(check(
            "2.adaptive_norm",
            close(norm, 8.0, 1e-9),
            format!("norm {norm:.12}"),
        ));

        let target = [1.0, 2.0];
        let exact = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let plus = Matrix::from_rows(&[[2.0, 3.0], [2.0, 3.0]]).unwrap();
        c.push(check(
            "2.forget_loss",
            forget_loss(&exact, &target).unwrap() == 0.0
                && forget_loss(&plus, &target).unwrap() == 1.0
                && forget_loss(&Matrix::from_rows(&[[3.0, 0.0]]).unwrap(), &target).unwrap() == 4.0,
            "0, 1 and 4",
        ));
        let h0 = Matrix::from_rows(&[[0.3, -1.0], [2.0, 0.5]]).unwrap();
        let mut h = h0.clone();
        h.update_in_place("shift", |_, v| v + 2.0).unwrap();
        c.push(check(
            "2.retain_loss",
            retain_loss(&h0, &h0).unwrap() == 0.0
                && close(retain_loss(&h, &h0).unwrap(), 4.0, 1e-12),
            "0 and 4",
        ));

        let lr = 5e-5;
        let mut p = Matrix::filled(2, 3, 0.7).unwrap();
        let mut opt = AdamW::new(AdamWConfig::with_lr(lr)).unwrap();
        opt.step(&mut [&mut p], &[&Matrix::filled(2, 3, 1.0).unwrap()])
            .unwrap();
        let moved = p.data().iter().all(|&v| close(v - 0.7, -lr, 1e-12));
        c.push(check(
            "2.adamw_first_step",
            moved,
            format!("moved by {:.3e}", p.get(0, 0) - 0.7),
        ));
        let mut p = Matrix::filled(1, 2, 0.7).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        opt.step(&mut [&mut p], &[&Matrix::zeros(1, 2)]).unwrap();
        c.push(check(
            "2.adamw_zero_grad",
            p == Matrix::filled(1, 2, 0.7).unwrap(),
            "unchanged",
        ));
        let mut p = Matrix::filled(1, 2, 0.7).unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::with_lr(1e-2)
        })
        .unwrap();
        opt.step(&mut [&mut p], &[&Matrix::zeros(1, 2)]).unwrap();
        c.push(check(
            "2.adamw_decay",
            close(p.get(0, 0), 0.7 * (1.0 - 1e-3), 1e-15),
            format!("{:.12}", p.get(0, 0)),
        ));
        c
    });
    let mut checks = checks;
    checks.push(budget("2.runtime", elapsed, 5));
    Criterion {
        number: 2,
        title: "formula unit suite",
        checks,
    }
}

// ---------------------------------------------------------------- criterion 3

fn random_means(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| {
            if rng.next_f64() < 0.2 {
                0.0
            } else {
                rng.uniform(0.0, 10.0)
            }
        })
        .collect()
}

fn invariant_suite() -> Criterion {
    let (checks, elapsed) = timed(|| {
        let mut rng = SeededRng::new(77);
        let (mut range, mut ratio, mut sparsity, mut symmetry, mut norm_bound) =
            (true, true, true, true, true);
        for _ in 0..500 {
            let d = 1 + rng.below(32);
            let f = random_means(&mut rng, d);
            let r = random_means(&mut rng, d);
            let s = summary(&f, &r);
            for fusion in [Fusion::Ratio, Fusion::Diff, Fusion::Prod] {
                let map = ImportanceMap::build(
                    &s,
                    FusionConfig {
                        fusion,
                        ..FusionConfig::default()
                    },
                )
                .unwrap();
                let top = map.normalized.iter().cloned().fold(0.0, f64::max);
                let peak_ok =
                    map.raw.iter().cloned().fold(0.0, f64::max) <= 1e-2 || top >= 1.0 - 1e-6;
                range &= peak_ok && map.normalized.iter().all(|v| (0.0..=1.0).contains(v));
            }
            let k = rng.uniform(0.01, 100.0);
            let scaled = summary(
                &f.iter().map(|v| v * k).collect::<Vec<_>>(),
                &r.iter().map(|v| v * k).collect::<Vec<_>>(),
            );
            if let (Ok(a), Ok(b)) = (fuse_ratio(&s, 0.0), fuse_ratio(&scaled, 0.0)) {
                ratio &= a
                    .iter()
                    .zip(&b)
                    .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            let l1 = rng.uniform(0.0, 3.0);
            let l2 = l1 + rng.uniform(0.0, 3.0);
            let nz = |l: f64| {
                fuse_diff(&s, l)
                    .unwrap()
                    .iter()
                    .filter(|&&v| v != 0.0)
                    .count()
            };
            sparsity &= nz(l2) <= nz(l1);
            symmetry &= fuse_prod(&s, 1e-6).unwrap() == fuse_prod(&summary(&r, &f), 1e-6).unwrap();
            let c_map = rng.uniform(0.0, 170.0);
            let imp: Vec<f64> = (0..d).map(|_| rng.next_f64()).collect();
            let spec =
                MisdirectionSpec::sample(d, c_map, Variant::Full, &mut rng.split("spec")).unwrap();
            let t = build_target(&spec, &imp).unwrap();
            norm_bound &= t.iter().map(|v| v * v).sum::<f64>().sqrt()
                <= c_map * (d as f64).sqrt() * (1.0 + 1e-12);
        }
        let mut c = vec![
            check(
                "3.inorm_range_peak",
                range,
                "500 random summaries x 3 fusions",
            ),
            check("3.ratio_scale", ratio, "eps = 0"),
            check("3.diff_sparsity", sparsity, "non-increasing in lambda"),
            check("3.prod_symmetry", symmetry, "swap v_f and v_r"),
            check("3.target_norm", norm_bound, "||T|| <= c_map sqrt(d)"),
        ];

        let ds = generate(
            &DatasetConfig {
                vocab_size: 64,
                sample_length: 16,
                train_per_class: 30,
                test_per_class: 10,
                rho: 0.2,
                ..DatasetConfig::default()
            },
            5,
        )
        .unwrap();
        let frozen = ToyModel::new(
            ModelConfig {
                input: ds.input_width(),
                hidden: 16,
                target: 8,
                ..ModelConfig::default()
            },
            5,
        )
        .unwrap();
        let mut frozen_ok = true;
        let mut repro_ok = true;
        for (i, method) in Method::ALL.into_iter().enumerate() {
            for variant in Variant::ALL {
                if method != Method::Srmu && variant != Variant::Full {
                    continue;
                }
                let cfg = UnlearnConfig {
                    method,
                    variant,
                    steps: 20,
                    coefficient: 6.0,
                    optimizer: AdamWConfig::with_lr(DESK_SCALE_LR),
                    seed: 40 + i as u64,
                    ..UnlearnConfig::default()
                };
                let out = run_unlearning(frozen.clone(), &frozen, &ds, &cfg).unwrap();
                let m = &out.model;
                frozen_ok &= m.w1 == frozen.w1
                    && m.b1 == frozen.b1
                    && m.forget_w == frozen.forget_w
                    && m.forget_b == frozen.forget_b
                    && m.retain_w == frozen.retain_w
                    && m.retain_b == frozen.retain_b;
                let manifest = RunManifest::new(
                    ds.descriptor(),
                    frozen.config.clone(),
                    frozen.seed,
                    cfg,
                    out.plan.clone(),
                );
                let replayed: RunManifest =
                    serde_json::from_str(&serde_json::to_string(&manifest).unwrap()).unwrap();
                let again =
                    run_unlearning(frozen.clone(), &frozen, &ds, &replayed.unlearn).unwrap();
                let (mut a, mut b) = (Vec::new(), Vec::new());
                write_step_csv(&mut a, &out.records).unwrap();
                write_step_csv(&mut b, &again.records).unwrap();
                repro_ok &= a == b && again.model == out.model && again.plan == manifest.plan;
            }
        }
        c.push(check(
            "3.freeze",
            frozen_ok,
            "non-target parameters bit-identical after 8 runs",
        ));
        c.push(check(
            "3.determinism",
            repro_ok,
            "manifest replay gives byte-identical step CSVs",
        ));
        c
    });
    let mut checks = checks;
    checks.push(budget("3.runtime", elapsed, 30));
    Criterion {
        number: 3,
        title: "invariant suite",
        checks,
    }
}

// ------------------------------------------------------------ shared fixtures

struct Fixture {
    seed: u64,
    ds: EntangledDataset,
    frozen: ToyModel,
    pretrained: EvalReport,
}

fn fixture(rho: f64, seed: u64) -> Fixture {
    let ds = generate(
        &DatasetConfig {
            rho,
            ..DatasetConfig::default()
        },
        seed,
    )
    .unwrap();
    let mut frozen = ToyModel::new(
        ModelConfig {
            input: ds.input_width(),
            ..ModelConfig::default()
        },
        seed,
    )
    .unwrap();
    pretrain(
        &mut frozen,
        &ds,
        &PretrainConfig::default(),
        &mut SeededRng::new(seed).split("pretrain"),
    )
    .unwrap();
    let pretrained = evaluate(&frozen, &frozen, &ds).unwrap();
    Fixture {
        seed,
        ds,
        frozen,
        pretrained,
    }
}

fn desk_config(method: Method, variant: Variant) -> UnlearnConfig {
    UnlearnConfig {
        method,
        variant,
        optimizer: AdamWConfig::with_lr(DESK_SCALE_LR),
        ..UnlearnConfig::default()
    }
}

fn sweep_methods(fx: &Fixture, methods: &[Method]) -> Vec<SweepRow> {
    let grid = parse_grid(GRID).unwrap();
    assert_eq!(grid.len(), 17);
    methods
        .iter()
        .flat_map(|&m| {
            let res = sweep(
                &desk_config(m, Variant::Full),
                m.as_str(),
                &grid,
                &[fx.seed],
                &fx.frozen,
                &fx.ds,
                jobs(),
            )
            .unwrap();
            assert!(res.failures.is_empty(), "{:?}", res.failures);
            res.rows
        })
        .collect()
}

/// Sweep selection for one method alone: lowest forget accuracy within the
/// matched-retention window of that method's own best retain accuracy.
fn self_selected(rows: &[SweepRow], method: &str) -> SweepRow {
    let own: Vec<SweepRow> = rows
        .iter()
        .filter(|r| r.method == method)
        .cloned()
        .collect();
    compare_methods(&own)
        .unwrap()
        .selected(method)
        .unwrap()
        .clone()
}

fn med(v: impl IntoIterator<Item = f64>) -> f64 {
    median(&v.into_iter().collect::<Vec<_>>()).unwrap()
}

// ---------------------------------------------------------------- criterion 4

struct LowRegime {
    fixtures: Vec<Fixture>,
    srmu_pick: Vec<SweepRow>,
}

fn low_entanglement() -> (Criterion, LowRegime) {
    let ((checks, low), elapsed) = timed(|| {
        let mut c = Vec::new();
        let fixtures: Vec<Fixture> = LOW_SEEDS.iter().map(|&s| fixture(LOW_RHO, s)).collect();
        let gate = fixtures.iter().all(|f| {
            f.pretrained.forget_accuracy >= PRETRAIN_GATE
                && f.pretrained.retain_accuracy >= PRETRAIN_GATE
        });
        c.push(check(
            "4.pretrain_gate",
            gate,
            fixtures
                .iter()
                .map(|f| {
                    format!(
                        "seed {}: {:.3}/{:.3}",
                        f.seed, f.pretrained.forget_accuracy, f.pretrained.retain_accuracy
                    )
                })
                .collect::<Vec<_>>()
                .join(", "),
        ));
        let mut srmu_pick = Vec::new();
        let mut drops: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for fx in &fixtures {
            let rows = sweep_methods(fx, &[Method::Srmu, Method::Rmu]);
            for m in ["srmu", "rmu"] {
                let pick = self_selected(&rows, m);
                let e = drops.entry(m).or_default();
                e.0.push(fx.pretrained.forget_accuracy - pick.report.forget_accuracy);
                e.1.push(fx.pretrained.retain_accuracy - pick.report.retain_accuracy);
                if m == "srmu" {
                    srmu_pick.push(pick);
                }
            }
        }
        let (sf, sr) = (med(drops["srmu"].0.clone()), med(drops["srmu"].1.clone()));
        let (rf, rr) = (med(drops["rmu"].0.clone()), med(drops["rmu"].1.clone()));
        let picks: Vec<String> = srmu_pick.iter().map(|r| format!("{}", r.c)).collect();
        c.push(check(
            "4.srmu",
            sf >= 0.30 && sr <= 0.05,
            format!(
                "median forget drop {:.1} pts (>= 30), retain drop {:.1} pts (<= 5); c_map {}",
                sf * 100.0,
                sr * 100.0,
                picks.join("/")
            ),
        ));
        c.push(check(
            "4.rmu_gate",
            rf >= 0.25 && rr <= 0.08,
            format!(
                "median forget drop {:.1} pts (>= 25), retain drop {:.1} pts (<= 8)",
                rf * 100.0,
                rr * 100.0
            ),
        ));
        (
            c,
            LowRegime {
                fixtures,
                srmu_pick,
            },
        )
    });
    let mut checks = checks;
    checks.push(budget("4.runtime", elapsed, 600));
    (
        Criterion {
            number: 4,
            title: "low-entanglement trade-off",
            checks,
        },
        low,
    )
}

// ---------------------------------------------------------------- criterion 5

fn high_entanglement() -> Criterion {
    let (checks, elapsed) = timed(|| {
        let mut selected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut widened = 0;
        for &seed in &HIGH_SEEDS {
            let fx = fixture(HIGH_RHO, seed);
            let rows = sweep_methods(&fx, &Method::ALL);
            let table = compare_methods(&rows).unwrap();
            widened += usize::from(table.widened);
            for m in Method::ALL {
                let pick = table.selected(m.as_str()).unwrap();
                selected
                    .entry(m.as_str().to_string())
                    .or_default()
                    .push(pick.report.forget_accuracy);
            }
        }
        let s = med(selected["srmu"].clone());
        let r = med(selected["rmu"].clone());
        let a = med(selected["adaptive-rmu"].clone());
        vec![
            check("5.vs_rmu", s <= r - 0.05, format!("median selected forget: srmu {s:.4} <= rmu {r:.4} - 0.05")),
            check(
                "5.vs_adaptive",
                s <= a,
                format!("srmu {s:.4} <= adaptive-rmu {a:.4} ({widened}/5 seeds used the widened window)"),
            ),
        ]
    });
    let mut checks = checks;
    checks.push(budget("5.runtime", elapsed, 1200));
    Criterion {
        number: 5,
        title: "high-entanglement separation",
        checks,
    }
}

// ---------------------------------------------------------------- criterion 6

fn ablations(low: &LowRegime) -> Criterion {
    let (checks, elapsed) = timed(|| {
        let mut by_variant: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let variants = [
            Variant::Full,
            Variant::ZeroTarget,
            Variant::FixedPlus,
            Variant::FixedMinus,
            Variant::NoNormUniform,
        ];
        let mut pre = (Vec::new(), Vec::new());
        for (fx, pick) in low.fixtures.iter().zip(&low.srmu_pick) {
            pre.0.push(fx.pretrained.forget_accuracy);
            pre.1.push(fx.pretrained.retain_accuracy);
            for v in variants {
                let cfg = UnlearnConfig {
                    coefficient: pick.c,
                    seed: fx.seed,
                    ..desk_config(Method::Srmu, v)
                };
                let out = run_unlearning(fx.frozen.clone(), &fx.frozen, &fx.ds, &cfg).unwrap();
                let rep = evaluate(&out.model, &fx.frozen, &fx.ds).unwrap();
                let e = by_variant.entry(format!("{v:?}")).or_default();
                e.0.push(fx.pretrained.forget_accuracy - rep.forget_accuracy);
                e.1.push(fx.pretrained.retain_accuracy - rep.retain_accuracy);
            }
        }
        let forget_drop = |v: Variant| med(by_variant[&format!("{v:?}")].0.clone());
        let retain_drop = |v: Variant| med(by_variant[&format!("{v:?}")].1.clone());
        let pts = |x: f64| x * 100.0;
        let mut c = Vec::new();
        let (zf, zr) = (
            forget_drop(Variant::ZeroTarget),
            retain_drop(Variant::ZeroTarget),
        );
        c.push(check(
            "6a.zero_target",
            zf.abs() <= 0.02 && zr.abs() <= 0.02,
            format!(
                "forget change {:.1} pts, retain change {:.1} pts (both within 2)",
                pts(-zf),
                pts(-zr)
            ),
        ));
        let full_r = retain_drop(Variant::Full);
        for (id, v) in [
            ("6b.fixed_plus", Variant::FixedPlus),
            ("6b.fixed_minus", Variant::FixedMinus),
        ] {
            let extra = retain_drop(v) - full_r;
            c.push(check(
                id,
                extra >= 0.15,
                format!(
                    "retain drop {:.1} pts vs full {:.1} pts, extra {:.1} (>= 15)",
                    pts(retain_drop(v)),
                    pts(full_r),
                    pts(extra)
                ),
            ));
        }
        let ur = retain_drop(Variant::NoNormUniform);
        c.push(check(
            "6c.uniform_retain",
            ur > full_r,
            format!(
                "uniform retain drop {:.1} pts > full {:.1} pts",
                pts(ur),
                pts(full_r)
            ),
        ));
        let (uf, ff) = (
            forget_drop(Variant::NoNormUniform),
            forget_drop(Variant::Full),
        );
        c.push(check(
            "6c.uniform_forget",
            uf >= ff - COMPARABLE_FORGET,
            format!(
                "uniform forget drop {:.1} pts vs full {:.1} pts (comparable within {:.0})",
                pts(uf),
                pts(ff),
                pts(COMPARABLE_FORGET)
            ),
        ));
        c
    });
    let mut checks = checks;
    checks.push(budget("6.runtime", elapsed, 900));
    Criterion {
        number: 6,
        title: "ablation mirror",
        checks,
    }
}

// ---------------------------------------------------------------- criterion 7

fn complexity() -> Criterion {
    let ds = generate(&DatasetConfig::default(), 1).unwrap();
    let model = ToyModel::new(
        ModelConfig {
            input: ds.input_width(),
            ..ModelConfig::default()
        },
        1,
    )
    .unwrap();
    let base = 128;
    let time_for = |batches: usize| {
        let cfg = UnlearnConfig {
            summary_batches: batches,
            ..UnlearnConfig::default()
        };
        let (f, r) = summary_batches(&ds, &cfg, &mut SeededRng::new(3)).unwrap();
        (0..7)
            .map(|_| {
                let start = Instant::now();
                let s = summarize_activations(&model, &f, &r).unwrap();
                let map = ImportanceMap::build(&s, FusionConfig::default()).unwrap();
                std::hint::black_box(map);
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let t1 = time_for(base);
    let t2 = time_for(2 * base);
    let t4 = time_for(4 * base);
    let (r2, r4) = (t2 / t1, t4 / t1);
    Criterion {
        number: 7,
        title: "importance-map cost linear in |D_map|",
        checks: vec![
            check(
                "7.double",
                (1.5..=2.5).contains(&r2),
                format!("x2 data -> x{r2:.2} time (1.5..2.5)"),
            ),
            check(
                "7.quadruple",
                (3.0..=5.0).contains(&r4),
                format!("x4 data -> x{r4:.2} time (3.0..5.0)"),
            ),
        ],
    }
}

fn main() -> ExitCode {
    let mut criteria = vec![gradient_oracle(), formula_suite(), invariant_suite()];
    let (c4, low) = low_entanglement();
    criteria.push(c4);
    criteria.push(high_entanglement());
    criteria.push(ablations(&low));
    criteria.push(complexity());

    let mut unexpected = Vec::new();
    println!();
    for c in &criteria {
        let ok = c.checks.iter().all(|k| k.passed);
        println!(
            "criterion {}: {} ({})",
            c.number,
            if ok { "PASS" } else { "FAIL" },
            c.title
        );
        for k in &c.checks {
            let known = KNOWN_FAILURES.contains(&k.id);
            let tag = match (k.passed, known) {
                (true, false) => "pass",
                (true, true) => "pass (listed as known failure)",
                (false, true) => "FAIL (known)",
                (false, false) => "FAIL",
            };
            println!("    {:<20} {:<30} {}", k.id, tag, k.detail);
            if !k.passed && !known {
                unexpected.push(k.id);
            }
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: no unexpected failures");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures: {}", unexpected.join(", "));
        ExitCode::FAILURE
    }
}
