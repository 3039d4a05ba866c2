//! Acceptance gate. One sequential test so the fixture flows are trained once;
//! every criterion prints a single PASS/FAIL line and the test fails if any
//! criterion does.
//!
//! Fixture (repo-defined): centred two-moons, noise 0.05, n = 400 per domain,
//! rotated 0°, 40°, 80°; flow 2×32 tanh, 4 RK4 steps per unit time, batch 32,
//! lr 5e-3, 300 epochs, γ = 5, m = 4. Seeds 1..=5 for data and flow.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use gdaflow::cnf::*;
use gdaflow::data::{make_rotating_sequence, EvaluatedSequence, Generator};
use gdaflow::diffmath::{finite_diff_check, Activation, Mat, SliceKind};
use gdaflow::eval::*;
use gdaflow::interpolate::*;
use gdaflow::rng::SeedTree;
use gdaflow::selftrain::*;
use gdaflow_cli::config::RunConfig;
use gdaflow_cli::{run_method, source_classifier, AlphaChoice, Method};
use rand::Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ANGLES_DEG: [f64; 3] = [0.0, 40.0, 80.0];
const PIPELINE_SEEDS: u64 = 4;
/// Medians of criterion 8 from the first oracle run: ours, gradual, source-only.
const PINNED_MEDIANS: Option<[f64; 3]> = Some([0.4425, 0.3300, 0.2175]);
const PIN_TOLERANCE: f64 = 0.03;

fn generator(n: usize) -> Generator {
    Generator::TwoMoons {
        n,
        noise_sd: 0.05,
        centered: true,
    }
}

fn fixture(seed: u64) -> EvaluatedSequence<f64> {
    let radians: Vec<f64> = ANGLES_DEG.iter().map(|a| a.to_radians()).collect();
    make_rotating_sequence(&generator(400), &radians, SeedTree::new(seed), false).unwrap()
}

fn flow_config(seed: u64) -> FlowConfig {
    let mut cfg = FlowConfig {
        epochs: 300,
        batch_size: 32,
        hidden: vec![(32, Activation::Tanh), (32, Activation::Tanh)],
        steps_per_unit_time: 4,
        seed,
        ..FlowConfig::default()
    };
    cfg.optimizer.lr = 5e-3;
    cfg
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn normal_mat(n: usize, d: usize, seed: u64) -> Mat<f64> {
    let mut rng = SeedTree::new(seed).rng();
    Mat::from_vec(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

struct Fixture {
    seed: u64,
    ev: EvaluatedSequence<f64>,
    flow: FlowModel<f64>,
}

/// Mean per-sample penalty over every domain of the sequence at evenly spaced τ.
fn full_penalty(flow: &FlowModel<f64>, ev: &EvaluatedSequence<f64>, m: usize) -> f64 {
    ev.sequence
        .all_features()
        .into_iter()
        .map(|(j, x)| {
            let taus: Vec<f64> = (0..m).map(|i| j * i as f64 / (m - 1) as f64).collect();
            trajectory_penalty(flow, x, j, &taus).unwrap() / x.rows() as f64
        })
        .sum()
}

type Outcome = (bool, String);

fn c1_gradients() -> Outcome {
    // classifier loss on labeled data
    let d: gdaflow::data::LabeledDataset<f64> = generator(16).sample(SeedTree::new(10)).unwrap();
    let spec = ClassifierConfig::default().spec(2, 2);
    let h = Classifier::<f64>::init(spec.clone(), &mut SeedTree::new(11).rng()).unwrap();
    let r1 = finite_diff_check(|p| h.with_params(p.clone())?.loss_and_grad(d.features(), d.labels()), h.params(), 1e-5).unwrap();

    // self-training loss: pseudo-labels from a frozen teacher
    let teacher = Classifier::<f64>::init(spec.clone(), &mut SeedTree::new(12).rng()).unwrap();
    let u = generator(16).sample::<f64>(SeedTree::new(13)).unwrap().rotated(0.7).unwrap();
    let pseudo = teacher.predict(u.features()).unwrap();
    let student = Classifier::<f64>::init(spec, &mut SeedTree::new(14).rng()).unwrap();
    let r2 = finite_diff_check(|p| student.with_params(p.clone())?.loss_and_grad(u.features(), &pseudo), student.params(), 1e-5).unwrap();

    // flow loss: D = 2, 4 RK4 steps, batch 8
    let shape = FlowShape {
        dim: 2,
        horizon: 1.0,
        steps_per_unit_time: 4,
        block_count: 1,
        hidden: vec![(8, Activation::Tanh), (8, Activation::Tanh)],
    };
    let flow = FlowModel::<f64>::init(&shape, 1.0, &mut SeedTree::new(15).rng()).unwrap();
    let batches = vec![LossBatch {
        time_index: 1.0,
        features: normal_mat(8, 2, 16),
        taus: vec![0.0, 0.3, 0.7, 1.0],
    }];
    let r3 = finite_diff_check(
        |p| {
            let mut f = flow.clone();
            f.set_params(p.clone())?;
            flow_loss_and_grad(&f, &batches, 5.0)
        },
        flow.params(),
        1e-6,
    )
    .unwrap();

    let errs = [r1.max_rel_error, r2.max_rel_error, r3.max_rel_error];
    let covered = r1.checked * 10 >= h.params().len() * 9 && r2.checked * 10 >= student.params().len() * 9 && r3.checked == flow.params().len();
    let pass = covered && errs.iter().all(|&e| e <= 1e-4);
    (pass, format!("max rel error classifier {:.1e}, self-train {:.1e}, flow {:.1e}", errs[0], errs[1], errs[2]))
}

fn c2_invertibility(fixtures: &[Fixture]) -> Outcome {
    let f = &fixtures[0];
    let k = f.flow.horizon();
    let fresh = generator(500).sample::<f64>(SeedTree::new(f.seed).child("c2")).unwrap();
    let x = fresh.rotated(ANGLES_DEG[2].to_radians()).unwrap().features().clone();
    let trip = |flow: &FlowModel<f64>| {
        let z = transport_batch(flow, &x, k, 0.0, TransportOptions::default()).unwrap();
        let back = transport_batch(flow, &z.endpoints, 0.0, k, TransportOptions::default()).unwrap();
        back.endpoints.max_abs_diff(&x)
    };
    let coarse = trip(&f.flow);
    let fine = trip(&f.flow.clone().with_steps_per_unit_time(32).unwrap());
    (fine <= 1e-5, format!("max error {fine:.2e} at 32 steps/unit (training grid of 4 steps/unit: {coarse:.2e})"))
}

fn c3_likelihood() -> Outcome {
    let zero = FlowModel::<f64>::zeroed(&FlowShape {
        dim: 2,
        horizon: 3.0,
        steps_per_unit_time: 8,
        block_count: 1,
        hidden: vec![(8, Activation::Tanh)],
    })
    .unwrap();
    let x = normal_mat(50, 2, 20);
    let mut worst_zero = 0.0f64;
    for j in [1.0, 2.0, 3.0] {
        for row in x.iter_rows() {
            let lp = log_likelihood(&zero, row, j).unwrap();
            worst_zero = worst_zero.max((lp - standard_normal_logpdf(row)).abs());
        }
    }
    // v = −g over [0, 1]: x at t = 1 came from z = e·x, density gains e^D
    let a = Mat::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
    let linear = FlowModel::<f64>::linear(&a, 1.0, 16).unwrap();
    let mut worst_linear = 0.0f64;
    for row in x.iter_rows() {
        let z: Vec<f64> = row.iter().map(|v| v * std::f64::consts::E).collect();
        let want = standard_normal_logpdf(&z) + 2.0;
        worst_linear = worst_linear.max((log_likelihood(&linear, row, 1.0).unwrap() - want).abs());
    }
    (
        worst_zero <= 1e-12 && worst_linear <= 1e-4,
        format!("v = 0 error {worst_zero:.1e}, linear field error {worst_linear:.1e}"),
    )
}

fn c4_penalty(fixtures: &[Fixture]) -> Outcome {
    let mut constant = FlowModel::<f64>::zeroed(&FlowShape {
        dim: 2,
        horizon: 3.0,
        steps_per_unit_time: 8,
        block_count: 1,
        hidden: vec![],
    })
    .unwrap();
    let bias = constant.params().layout().slices().iter().position(|s| s.kind == SliceKind::Bias).unwrap();
    constant.params_mut().slice_mut(bias).copy_from_slice(&[0.7, -1.3]);
    let x = normal_mat(30, 2, 21);
    let straight = trajectory_penalty(&constant, &x, 2.5, &[0.0, 0.4, 1.9, 2.5]).unwrap();

    let mut wins = 0;
    let mut pairs = Vec::new();
    for f in fixtures {
        let free = train_flow(&f.ev.sequence, 0.0, 4, &flow_config(f.seed)).unwrap().flow;
        let (with, without) = (full_penalty(&f.flow, &f.ev, 4), full_penalty(&free, &f.ev, 4));
        wins += usize::from(with < without);
        pairs.push(format!("{with:.3}/{without:.3}"));
    }
    (
        straight <= 1e-10 && wins * 2 > fixtures.len(),
        format!("constant field {straight:.1e}; γ=5 below γ=0 in {wins}/{} seeds [{}]", fixtures.len(), pairs.join(" ")),
    )
}

fn c5_index_set() -> Outcome {
    let mut rng = SeedTree::new(30).rng();
    let mut mismatches = 0;
    for _ in 0..200 {
        let horizon: u64 = rng.gen_range(1..=8);
        let (p, q): (u64, u64) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let mut real = vec![1u64];
        real.extend((2..horizon).filter(|_| rng.gen_bool(0.5)));
        if horizon > 1 {
            real.push(horizon);
        }
        // α = p/q: every index is n/q with n an integer, so enumerate exactly in n
        let reals: BTreeSet<u64> = real.iter().map(|t| t * q).collect();
        let mut want: BTreeSet<u64> = reals.clone();
        want.extend((1..).map(|k| q + p * k).take_while(|&n| n <= horizon * q));
        let real_f: Vec<f64> = real.iter().map(|&t| t as f64).collect();
        let got = time_index_set(horizon as f64, &real_f, p as f64 / q as f64).unwrap();
        let got_n: Vec<(u64, bool)> = got
            .entries()
            .iter()
            .map(|&(t, o)| ((t * q as f64).round() as u64, o == IndexOrigin::Real))
            .collect();
        let want_n: Vec<(u64, bool)> = want.iter().map(|&n| (n, reals.contains(&n))).collect();
        let on_grid = got.entries().iter().all(|&(t, _)| (t * q as f64 - (t * q as f64).round()).abs() < 1e-9);
        if got_n != want_n || !on_grid {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches}/200 (K, α) pairs differ from exact enumeration"))
}

fn c6_wasserstein() -> Outcome {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        perms(n - 1)
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |pos| {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    q
                })
            })
            .collect()
    }
    let mut rng = SeedTree::new(31).rng();
    let mut wrong = 0;
    for i in 0..100 {
        let n = 1 + i % 6;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0..20) as f64).collect();
        let total = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(r, &c)| cost[r * n + c]).sum() };
        let best = perms(n).iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
        // integer costs: sums are exact, so equality is exact
        if total(&min_cost_assignment(&cost, n).unwrap()) != best {
            wrong += 1;
        }
    }
    let mut violations = 0;
    for s in 0..50 {
        let n = 2 + s as usize % 10;
        let (a, b, c) = (normal_mat(n, 2, 100 + s), normal_mat(n, 2, 200 + s), normal_mat(n, 2, 300 + s));
        let w = |x: &Mat<f64>, y: &Mat<f64>| wasserstein2(x, y).unwrap();
        let ok = w(&a, &a) < 1e-12 && w(&a, &b) > 0.0 && (w(&a, &b) - w(&b, &a)).abs() < 1e-12 && w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12;
        violations += usize::from(!ok);
    }
    (
        wrong == 0 && violations == 0,
        format!("{wrong}/100 assignments off the brute-force optimum; {violations}/50 triples violate the metric axioms"),
    )
}

/// Per fixture: the 6-α selection, reused by criteria 7 and 10.
struct GridRun {
    target_acc: Vec<f64>,
    cycle_acc: Vec<f64>,
    rho: Vec<f64>,
}

fn grid_runs(fixtures: &[Fixture]) -> Vec<GridRun> {
    fixtures
        .iter()
        .map(|f| {
            let cfg = RunConfig {
                seed: f.seed,
                ..RunConfig::default()
            };
            let theta1 = source_classifier(&f.ev, &cfg).unwrap();
            let sel = select_alpha(&f.ev.sequence, Some(&f.flow), &theta1, &DEFAULT_ALPHA_GRID, &cfg.gda, cfg.root().child("gda")).unwrap();
            let target = f.ev.labeled_target().unwrap();
            let mut out = GridRun {
                target_acc: vec![],
                cycle_acc: vec![],
                rho: vec![],
            };
            for o in &sel.outcomes {
                let run = o.run.as_ref().expect("candidate succeeded");
                let chain: Vec<&Mat<f64>> = run.datasets.iter().map(|d| &d.features).collect();
                out.target_acc.push(accuracy(run.classifier(), &target).unwrap());
                out.cycle_acc.push(o.report.as_ref().unwrap().cycle_accuracy);
                out.rho.push(adjacent_max_w2(&chain, W2_MAX_POINTS, SeedTree::new(f.seed).child("rho")).unwrap());
            }
            out
        })
        .collect()
}

fn alpha_slot(alpha: f64) -> usize {
    DEFAULT_ALPHA_GRID.iter().position(|&a| a == alpha).unwrap()
}

fn c7_rho(grid: &[GridRun]) -> Outcome {
    let (half, one) = (alpha_slot(0.5), alpha_slot(1.0));
    let wins = grid.iter().filter(|g| g.rho[half] < g.rho[one]).count();
    let pairs: Vec<String> = grid.iter().map(|g| format!("{:.3}/{:.3}", g.rho[half], g.rho[one])).collect();
    (wins >= 4, format!("ρ(α=0.5) < ρ(α=1) in {wins}/5 seeds [{}]", pairs.join(" ")))
}

fn c8_ordering(fixtures: &[Fixture]) -> Outcome {
    let (mut ours, mut gradual, mut source) = (vec![], vec![], vec![]);
    for f in fixtures {
        for p in 0..PIPELINE_SEEDS {
            let cfg = RunConfig {
                seed: f.seed * 100 + p,
                ..RunConfig::default()
            };
            let theta1 = source_classifier(&f.ev, &cfg).unwrap();
            let acc = |m: Method, a: &AlphaChoice| {
                run_method(&f.ev, Some(&f.flow), &theta1, m, a, &cfg, None).unwrap().row.target_accuracy.unwrap()
            };
            ours.push(acc(Method::Ours, &AlphaChoice::Select(vec![0.25, 0.5, 1.0])));
            gradual.push(acc(Method::Gradual, &AlphaChoice::Fixed(1.0)));
            source.push(acc(Method::SourceOnly, &AlphaChoice::Fixed(1.0)));
        }
    }
    let m = [median(ours), median(gradual), median(source)];
    let ordered = m[0] >= m[1] && m[1] >= m[2] && m[0] - m[2] > 0.0;
    let pinned = match PINNED_MEDIANS {
        Some(p) => p.iter().zip(&m).all(|(a, b)| (a - b).abs() <= PIN_TOLERANCE),
        None => true,
    };
    (
        ordered && pinned,
        format!(
            "medians over {} seeds: ours {:.4}, gradual {:.4}, source-only {:.4}{}",
            SEEDS.len() as u64 * PIPELINE_SEEDS,
            m[0],
            m[1],
            m[2],
            if PINNED_MEDIANS.is_some() { " (pinned)" } else { " (not pinned)" }
        ),
    )
}

fn c9_intermediate(fixtures: &[Fixture]) -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for f in fixtures {
        let without = f.ev.sequence.filter_unlabeled(|t| (t - 2.0).abs() > 1e-9);
        let blind = train_flow(&without, 5.0, 4, &flow_config(f.seed)).unwrap().flow;
        let real = f.ev.sequence.features_at(2.0).unwrap();
        let seed = SeedTree::new(f.seed).child("c9");
        let w = |flow: &FlowModel<f64>| {
            let g = generate_pseudo_domain(flow, 2.0, real.rows(), seed).unwrap();
            wasserstein2(&g.samples, real).unwrap()
        };
        let (with, no) = (w(&f.flow), w(&blind));
        wins += usize::from(with < no);
        pairs.push(format!("{with:.3}/{no:.3}"));
    }
    (wins >= 4, format!("W2 to the 40° domain smaller with it in training in {wins}/5 seeds [{}]", pairs.join(" ")))
}

fn c10_cycle_signal(grid: &[GridRun]) -> Outcome {
    let n = grid.len() as f64;
    let target: Vec<f64> = (0..DEFAULT_ALPHA_GRID.len()).map(|k| grid.iter().map(|g| g.target_acc[k]).sum::<f64>() / n).collect();
    let cycle: Vec<f64> = (0..DEFAULT_ALPHA_GRID.len()).map(|k| grid.iter().map(|g| g.cycle_acc[k]).sum::<f64>() / n).collect();
    let r = pearson(&target, &cycle).unwrap();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    (r > 0.0, format!("Pearson r = {r:.3}; target [{}], cycle [{}]", fmt(&target), fmt(&cycle)))
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let bin = env!("CARGO_BIN_EXE_gdaflow");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["make-data", "two-moons", "--angles", "0,40,80", "--n", "100", "--noise", "0.05", "--centered", "--seed", "3", "--out-dir", d]);
    run(&["train-flow", "--epochs", "5", "--hidden", "16,16", "--steps-per-unit-time", "4", "--out-dir", d]);
    let args = ["run", "--method", "ours,gradual,source-only", "--grid", "0.5,1.0", "--out-dir", d];
    let mut reports = Vec::new();
    for _ in 0..2 {
        run(&args);
        reports.push(std::fs::read(dir.path().join("report.csv")).unwrap());
    }
    let same = reports[0] == reports[1];
    (same, format!("two runs wrote {} report bytes, {}", reports[0].len(), if same { "identical" } else { "different" }))
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut check = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        // straight to the handle so the line survives libtest's output capture
        let _ = writeln!(
            std::io::stderr(),
            "[{}] criterion {id:>2} {name}: {} ({secs:.1}s)",
            if outcome.0 { "PASS" } else { "FAIL" },
            outcome.1
        );
        results.push((id, name, outcome, secs));
    };

    check(1, "gradient correctness", &mut c1_gradients);
    check(3, "likelihood oracle", &mut c3_likelihood);
    check(5, "time-index set enumeration", &mut c5_index_set);
    check(6, "assignment and W2 oracle", &mut c6_wasserstein);
    check(11, "CLI determinism", &mut c11_determinism);

    let start = Instant::now();
    let fixtures: Vec<Fixture> = SEEDS
        .iter()
        .map(|&seed| {
            let ev = fixture(seed);
            let flow = train_flow(&ev.sequence, 5.0, 4, &flow_config(seed)).unwrap().flow;
            Fixture { seed, ev, flow }
        })
        .collect();
    let _ = writeln!(std::io::stderr(), "trained {} fixture flows in {:.1}s", fixtures.len(), start.elapsed().as_secs_f64());

    check(2, "flow invertibility", &mut || c2_invertibility(&fixtures));
    check(4, "trajectory penalty", &mut || c4_penalty(&fixtures));
    let grid = grid_runs(&fixtures);
    check(7, "interpolation tightens ρ", &mut || c7_rho(&grid));
    check(8, "end-to-end ordering", &mut || c8_ordering(&fixtures));
    check(9, "intermediate domain needed", &mut || c9_intermediate(&fixtures));
    check(10, "cycle-consistency signal", &mut || c10_cycle_signal(&grid));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
