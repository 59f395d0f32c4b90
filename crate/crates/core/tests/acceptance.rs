//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. The full-length training runs make this the
//! slowest target in the workspace (several minutes on one core).

use std::process::ExitCode;
use std::time::Instant;

use clan_core::data::{generate_bundle, DatasetBundle, LabelMap};
use clan_core::gradcheck::{run_grad_check, GradCheckOptions};
use clan_core::grad::{Graph, Tensor};
use clan_core::losses::{adaptive_weight_map, discrepancy_map, seg_loss, total_generator_loss};
use clan_core::metrics::d_convergence_stat;
use clan_core::metrics::export::metrics_csv_string;
use clan_core::trainer::sweep::{DSTAT_BAND, DSTAT_WINDOW};
use clan_core::trainer::{run_sweep, train, Method, RunRecord, SweepAxis, SweepPoint, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn final_miou(r: &RunRecord) -> f64 {
    r.final_eval().and_then(|e| e.miou).unwrap_or(f64::NAN)
}

fn rare_iou(r: &RunRecord, rare: &[usize]) -> f64 {
    let e = r.final_eval().expect("final evaluation");
    let v: Vec<f64> = rare.iter().filter_map(|&k| e.iou.get(k).copied().flatten()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Median over classes of the final normalized CCD.
fn median_class_ccd(r: &RunRecord) -> f64 {
    let e = r.final_eval().expect("final evaluation");
    median(e.ccd.iter().flatten().copied().collect())
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let report = run_grad_check(&GradCheckOptions::default()).expect("grad check runs");
    let secs = start.elapsed().as_secs_f64();
    let worst = report.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let composite = report.cases.iter().any(|c| c.name == "clan_generator_loss");
    Verdict {
        id: 1,
        name: "gradient fidelity",
        passed: report.passed() && composite && secs < 60.0,
        detail: format!(
            "{} cases, worst rel err {worst:.2e} (< {:.0e}), {secs:.2}s; failures {:?}",
            report.cases.len(),
            report.tolerance,
            report.failures()
        ),
    }
}

fn tan_degeneracy(data: &DatasetBundle) -> Verdict {
    let tan = TrainConfig {
        method: Method::Tan,
        iterations: 100,
        eval_every: 100,
        ..TrainConfig::default()
    };
    let clan = TrainConfig {
        method: Method::Clan,
        lambda_local: 0.0,
        epsilon: 1.0,
        ..tan.clone()
    };
    let a = train(&tan, data).expect("TAN run").record;
    let b = train(&clan, data).expect("CLAN run").record;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (x, y) in a.iterations().zip(b.iterations()) {
        let (l, m) = (x.losses, y.losses);
        for (p, q) in [(l.seg, m.seg), (l.weight_disc, m.weight_disc), (l.adv_g, m.adv_g), (l.adv_d, m.adv_d), (l.total_g, m.total_g)] {
            worst = worst.max((p - q).abs());
        }
        count += 1;
    }
    Verdict {
        id: 2,
        name: "TAN degeneracy",
        passed: count == 100 && worst <= 1e-12,
        detail: format!("{count} iterations compared, max |diff| {worst:.3e} (<= 1e-12)"),
    }
}

fn weight_bounds(clan: &[RunRecord]) -> Verdict {
    let cfg = TrainConfig::default();
    let (lo, hi) = (cfg.epsilon, 2.0 * cfg.lambda_local + cfg.epsilon);
    let mut violations = 0;
    let mut seen = (f64::INFINITY, f64::NEG_INFINITY);
    let mut iterations = 0;
    for r in clan {
        for it in r.iterations() {
            iterations += 1;
            let (a, b) = (it.weight_min.unwrap_or(f64::NAN), it.weight_max.unwrap_or(f64::NAN));
            seen = (seen.0.min(a), seen.1.max(b));
            if !(a >= lo && b <= hi) {
                violations += 1;
            }
        }
    }
    Verdict {
        id: 3,
        name: "weight-map bounds",
        passed: violations == 0 && iterations > 0,
        detail: format!(
            "{iterations} CLAN iterations, observed [{:.4}, {:.4}] within [{lo}, {hi}], {violations} violations",
            seen.0, seen.1
        ),
    }
}

fn method_ordering(so: &[RunRecord], tan: &[RunRecord], clan: &[RunRecord], minutes: f64) -> Verdict {
    let m = |rs: &[RunRecord]| rs.iter().map(final_miou).collect::<Vec<_>>();
    let (a, b, c) = (m(so), m(tan), m(clan));
    let diffs: Vec<f64> = c.iter().zip(&b).map(|(x, y)| x - y).collect();
    let (ms, mt, mc, md) = (median(a.clone()), median(b.clone()), median(c.clone()), median(diffs.clone()));
    Verdict {
        id: 4,
        name: "method ordering",
        passed: ms < mt && mt <= mc && md > 0.0 && minutes < 60.0,
        detail: format!(
            "median mIoU source-only {ms:.4} < TAN {mt:.4} <= CLAN {mc:.4}; median(CLAN-TAN) {md:+.4}; \
             per seed SO {} TAN {} CLAN {}; 15 runs in {minutes:.1} min",
            fmt(&a),
            fmt(&b),
            fmt(&c)
        ),
    }
}

fn rare_classes(so: &[RunRecord], clan: &[RunRecord], rare: &[usize]) -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for &k in rare {
        let s: Vec<f64> = so.iter().map(|r| rare_iou(r, &[k])).collect();
        let c: Vec<f64> = clan.iter().map(|r| rare_iou(r, &[k])).collect();
        let (ms, mc) = (median(s.clone()), median(c.clone()));
        passed &= mc >= ms - 0.02;
        parts.push(format!("class {k}: median IoU CLAN {mc:.4} vs source-only {ms:.4} (SO {} CLAN {})", fmt(&s), fmt(&c)));
    }
    Verdict {
        id: 5,
        name: "rare-class no negative transfer",
        passed,
        detail: parts.join("; "),
    }
}

fn ccd_behavior(all: &[&RunRecord], tan: &[RunRecord], clan: &[RunRecord]) -> Verdict {
    let mut not_one = 0;
    let mut checked = 0;
    for r in all {
        let first = r.evals().next().expect("initial evaluation");
        for (k, v) in first.ccd.iter().enumerate() {
            checked += 1;
            if *v != Some(1.0) {
                not_one += 1;
                eprintln!("  class {k} of {} seed {}: initial CCD {v:?}", r.config.method, r.config.seed);
            }
        }
    }
    let t: Vec<f64> = tan.iter().map(median_class_ccd).collect();
    let c: Vec<f64> = clan.iter().map(median_class_ccd).collect();
    let (mt, mc) = (median(t.clone()), median(c.clone()));
    Verdict {
        id: 6,
        name: "CCD behaviour",
        passed: not_one == 0 && mc <= mt,
        detail: format!(
            "{checked} initial values, {not_one} != 1.0; final median-class CCD CLAN {mc:.4} <= TAN {mt:.4}; TAN {} CLAN {}",
            fmt(&t),
            fmt(&c)
        ),
    }
}

fn discriminator_stability(clan: &[RunRecord], data: &DatasetBundle) -> Verdict {
    let stats: Vec<(f64, f64)> = clan
        .iter()
        .map(|r| {
            let d = d_convergence_stat(r, DSTAT_WINDOW).expect("D statistics");
            (d.source, d.target)
        })
        .collect();
    let default = stats[0];
    let default_ok = default.0 < DSTAT_BAND && default.1 < DSTAT_BAND;

    let point = SweepPoint {
        axis: SweepAxis::Epsilon,
        lambda_local: 40.0,
        epsilon: 0.1,
    };
    let rows = run_sweep(&TrainConfig::default(), data, &[point], 1);
    let row = &rows[0];
    let logged = row.dstat_source.is_some() && row.dstat_target.is_some();
    let per_seed: Vec<String> = stats.iter().map(|(s, t)| format!("({s:.3}, {t:.3})")).collect();
    Verdict {
        id: 7,
        name: "discriminator stability",
        passed: default_ok && logged,
        detail: format!(
            "default run trailing-{}% |D-0.5| source {:.4} target {:.4} (< {DSTAT_BAND}); all seeds {}; \
             epsilon=0.1 cell: source {:?} target {:?} flagged {}",
            DSTAT_WINDOW * 100.0,
            default.0,
            default.1,
            per_seed.join(" "),
            row.dstat_source,
            row.dstat_target,
            row.flagged
        ),
    }
}

fn determinism(reference: &RunRecord, data: &DatasetBundle) -> Verdict {
    let again = train(&reference.config, data).expect("repeat run").record;
    let (a, b) = (metrics_csv_string(reference), metrics_csv_string(&again));
    Verdict {
        id: 8,
        name: "determinism",
        passed: a == b && !a.is_empty(),
        detail: format!("metrics CSV of {} seed {}: {} bytes, identical: {}", reference.config.method, reference.config.seed, a.len(), a == b),
    }
}

/// Plain-loop recomputations, independent of the graph code.
mod oracle {
    pub fn seg(p: &[f64], labels: &[u8], n: usize, c: usize, plane: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            for px in 0..plane {
                let k = labels[i * plane + px] as usize;
                total -= p[(i * c + k) * plane + px].max(1e-12).ln();
            }
        }
        total / (n * plane) as f64
    }

    pub fn discrepancy(a: &[f64], b: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..n {
            for px in 0..plane {
                let col = |t: &[f64]| (0..c).map(|k| t[(i * c + k) * plane + px]).collect::<Vec<_>>();
                let (u, v) = (col(a), col(b));
                let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
                let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                out.push(1.0 - dot / (nu * nv));
            }
        }
        out
    }
}

fn loss_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, c, h, w) = (rng.random_range(1..3), rng.random_range(2..6), rng.random_range(1..4), rng.random_range(1..4));
        let plane = h * w;
        let softmax = |rng: &mut ChaCha8Rng| {
            let logits: Vec<f64> = (0..n * c * plane).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut p = logits.clone();
            for i in 0..n {
                for px in 0..plane {
                    let z: f64 = (0..c).map(|k| logits[(i * c + k) * plane + px].exp()).sum();
                    for k in 0..c {
                        p[(i * c + k) * plane + px] = logits[(i * c + k) * plane + px].exp() / z;
                    }
                }
            }
            p
        };
        let (p1, p2) = (softmax(&mut rng), softmax(&mut rng));
        let labels: Vec<u8> = (0..n * plane).map(|_| rng.random_range(0..c) as u8).collect();
        let maps: Vec<LabelMap> = labels.chunks(plane).map(|l| LabelMap::new(h, w, l.to_vec()).unwrap()).collect();
        let t1 = Tensor::new(vec![n, c, h, w], p1.clone()).unwrap();
        let t2 = Tensor::new(vec![n, c, h, w], p2.clone()).unwrap();

        let mut g = Graph::new();
        let v = g.constant(t1.clone());
        let seg = seg_loss(&mut g, v, &maps).unwrap();
        worst = worst.max((g.value(seg).item() - oracle::seg(&p1, &labels, n, c, plane)).abs());

        let m = discrepancy_map(&t1, &t2).unwrap();
        let expected = oracle::discrepancy(&p1, &p2, n, c, plane);
        for (a, b) in m.values.data().iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }

        let (lambda, eps) = (rng.random_range(0.0..100.0), rng.random_range(0.01..2.0));
        let wm = adaptive_weight_map(&m, lambda, eps).unwrap();
        for (a, d) in wm.values.data().iter().zip(&expected) {
            worst = worst.max((a - (lambda * d + eps)).abs());
        }

        let terms: [f64; 5] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let mut g = Graph::new();
        let [s, wd, adv] = [terms[0], terms[1], terms[2]].map(|x| g.constant(Tensor::scalar(x)));
        let total = total_generator_loss(&mut g, s, wd, adv, terms[3], terms[4]).unwrap();
        let expected = terms[0] + terms[3] * terms[1] + terms[4] * terms[2];
        worst = worst.max((g.value(total).item() - expected).abs());
    }
    Verdict {
        id: 9,
        name: "loss-algebra oracles",
        passed: worst <= 1e-10,
        detail: format!("100 random inputs, max |diff| {worst:.3e} (<= 1e-10)"),
    }
}

fn main() -> ExitCode {
    let mut verdicts = vec![gradient_fidelity(), loss_oracles()];

    let base = TrainConfig::default();
    let data = generate_bundle(&base.data).expect("default dataset");
    verdicts.push(tan_degeneracy(&data));

    let start = Instant::now();
    let mut runs: Vec<(Method, Vec<RunRecord>)> = Vec::new();
    for method in Method::ALL {
        let mut records = Vec::new();
        for seed in SEEDS {
            let t = Instant::now();
            let cfg = TrainConfig { method, seed, ..base.clone() };
            let record = train(&cfg, &data).expect("training run").record;
            eprintln!(
                "  {method} seed {seed}: final mIoU {:.4} ({:.1}s)",
                final_miou(&record),
                t.elapsed().as_secs_f64()
            );
            records.push(record);
        }
        runs.push((method, records));
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let of = |m: Method| runs.iter().find(|(x, _)| *x == m).map(|(_, r)| r.as_slice()).expect("method ran");
    let (so, tan, clan) = (of(Method::SourceOnly), of(Method::Tan), of(Method::Clan));
    // The two least frequent classes of the scene.
    let freq = &base.data.scene.class_frequency;
    let mut rare: Vec<usize> = (0..freq.len()).collect();
    rare.sort_by(|&a, &b| freq[a].total_cmp(&freq[b]));
    rare.truncate(2);
    let all: Vec<&RunRecord> = runs.iter().flat_map(|(_, r)| r.iter()).collect();

    verdicts.push(weight_bounds(clan));
    verdicts.push(method_ordering(so, tan, clan, minutes));
    verdicts.push(rare_classes(so, clan, &rare));
    verdicts.push(ccd_behavior(&all, tan, clan));
    verdicts.push(discriminator_stability(clan, &data));
    verdicts.push(determinism(&clan[0], &data));

    verdicts.sort_by_key(|v| v.id);
    let mut failed = 0;
    for v in &verdicts {
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {}: {}", v.id, v.name, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
