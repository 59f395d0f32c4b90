use std::path::{Path, PathBuf};
use std::time::Instant;

use clan_core::data::{generate_bundle, io, DatasetBundle};
use clan_core::gradcheck::{run_grad_check, GradCheckOptions};
use clan_core::metrics::export::{ccd_bar_plot, ccd_curve_plot, loss_plot, sweep_bar_plot, write_metrics_csv};
use clan_core::metrics::{ccd_raw, per_class_iou};
use clan_core::models::Checkpoint;
use clan_core::trainer::{
    evaluate, is_toml, paper_grid, parse_value, from_value, run_sweep_with, train_with, write_sweep_csv, RunRecord,
    TrainConfig,
};
use clan_core::Error;
use serde_json::{json, Value};

use crate::args::{CcdArgs, EvalArgs, GenDataArgs, GradCheckArgs, Grid, Overrides, SweepArgs, TrainArgs};
use crate::failure::Failure;

type Outcome = std::result::Result<(), Failure>;

const THREADS_VAR: &str = "CLAN_FORGE_THREADS";

fn read_config_value(path: Option<&Path>) -> std::result::Result<Value, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config("config", format!("{}: {e}", p.display())))?;
            Ok(parse_value(&text, is_toml(p))?)
        }
        None => Ok(serde_json::to_value(TrainConfig::default()).expect("config serializes")),
    }
}

/// File entries over built-in defaults, flags over both.
fn resolve(o: &Overrides) -> std::result::Result<TrainConfig, Failure> {
    let mut value = read_config_value(o.config.as_deref())?;
    let Some(map) = value.as_object_mut() else {
        return Err(Failure::config("<root>", "config must be a table"));
    };
    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            map.insert(key.to_string(), v);
        }
    };
    set("seed", o.seed.map(Value::from));
    set("method", o.method.map(|m| Value::from(m.name())));
    set("iterations", o.iters.map(Value::from));
    set("lambda_local", o.lambda_local.map(Value::from));
    set("epsilon", o.epsilon.map(Value::from));
    set("lambda_adv", o.lambda_adv.map(Value::from));
    set("lambda_weight", o.lambda_weight.map(Value::from));
    set("eval_every", o.eval_every.map(Value::from));
    let config = from_value(value)?;
    config.validate()?;
    Ok(config)
}

/// Loads `--data` and adopts its data section, or generates the data the
/// config describes.
fn dataset(config: &mut TrainConfig, dir: Option<&Path>) -> std::result::Result<DatasetBundle, Failure> {
    match dir {
        Some(d) => {
            let bundle = io::load_bundle(d)?;
            config.data = bundle.config.clone();
            config.validate()?;
            Ok(bundle)
        }
        None => {
            eprintln!("generating dataset in memory (seed {})", config.data.seed);
            Ok(generate_bundle(&config.data)?)
        }
    }
}

fn prepare_out(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Outcome {
    std::fs::write(&path, contents).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text)
}

pub fn gen_data(a: GenDataArgs) -> Outcome {
    let mut data = from_value(read_config_value(a.config.as_deref())?)?.data;
    if let Some(seed) = a.seed {
        data.seed = seed;
    }
    data.validate()?;
    prepare_out(&a.out)?;
    let start = Instant::now();
    let bundle = generate_bundle(&data)?;
    io::save_bundle(&bundle, &a.out)?;
    write_json(a.out.join("config.json"), &data)?;
    eprintln!(
        "wrote {} source / {} target training images to {} in {:.1}s",
        bundle.source_train.len(),
        bundle.target_train.len(),
        a.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn record_outputs(out: &Path, record: &RunRecord) -> Outcome {
    let mut csv = Vec::new();
    write_metrics_csv(record, &mut csv)?;
    write(out.join("metrics.csv"), csv)?;
    write(out.join("run.jsonl"), record.to_jsonl())?;
    write(out.join("losses.svg"), loss_plot(record).to_svg())?;
    let classes: Vec<usize> = (0..record.config.model.num_classes).collect();
    write(out.join("ccd.svg"), ccd_curve_plot(std::slice::from_ref(record), &classes).to_svg())
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut config = resolve(&a.overrides)?;
    let data = dataset(&mut config, a.data.as_deref())?;
    prepare_out(&a.out)?;
    write_json(a.out.join("config.json"), &config)?;

    let every = (config.iterations / 20).max(1);
    let start = Instant::now();
    let result = train_with(&config, &data, |state, step| {
        if state.iteration % every == 0 {
            let l = &step.losses;
            eprintln!(
                "[{} seed {}] iter {}/{} seg {:.4} weight {:.4} advG {:.4} advD {:.4} lr {:.2e}",
                config.method, config.seed, state.iteration, config.iterations, l.seg, l.weight_disc, l.adv_g, l.adv_d, step.lr
            );
        }
    });
    let output = match result {
        Ok(o) => o,
        Err(e @ Error::NonFiniteLoss { .. }) => {
            let failure = Failure::from(e);
            if let Failure::Runtime { details, .. } = &failure {
                write_json(a.out.join("nonfinite.json"), details)?;
            }
            return Err(failure);
        }
        Err(e) => return Err(e.into()),
    };
    record_outputs(&a.out, &output.record)?;
    output.last.save(&a.out.join("checkpoint.json"))?;
    let miou = output.record.final_eval().and_then(|e| e.miou);
    eprintln!(
        "done in {:.1}s; final target mIoU {}",
        start.elapsed().as_secs_f64(),
        miou.map_or("n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let mut config = from_value(read_config_value(a.config.as_deref())?)?;
    config.method = a.method.name().parse()?;
    config.model = checkpoint.model.clone();
    let data = dataset(&mut config, a.data.as_deref())?;
    if config.model.num_classes != config.data.scene.num_classes {
        return Err(Failure::config("model.num_classes", "checkpoint and dataset disagree on the class count"));
    }
    prepare_out(&a.out)?;
    write_json(a.out.join("config.json"), &config)?;
    let ev = evaluate(&checkpoint.generator, config.effective().heads, &data)?;
    let report = per_class_iou(&ev.confusion);
    let summary = json!({
        "checkpoint_iteration": checkpoint.iteration,
        "method": config.method,
        "miou": report.miou,
        "iou": report.iou,
        "ccd_raw": ccd_raw(&ev.source_centers, &ev.target_centers),
        "confusion": ev.confusion,
    });
    write_json(a.out.join("eval.json"), &summary)?;
    eprintln!("target mIoU {}", report.miou.map_or("n/a".into(), |m| format!("{m:.4}")));
    Ok(())
}

pub fn ccd(a: CcdArgs) -> Outcome {
    let mut runs = Vec::new();
    for path in &a.runs {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        runs.push(RunRecord::from_jsonl(&text)?);
    }
    let num_classes = runs.iter().map(|r| r.config.model.num_classes).max().unwrap_or(0);
    let classes = a.classes.clone().unwrap_or_else(|| (0..num_classes).collect());
    if let Some(&k) = classes.iter().find(|&&k| k >= num_classes) {
        return Err(Failure::config("classes", format!("class {k} out of range for {num_classes} classes")));
    }
    prepare_out(&a.out)?;
    write_json(
        a.out.join("config.json"),
        &json!({ "runs": a.runs, "classes": classes }),
    )?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Failure::runtime(e.to_string());
    w.write_record(["method", "seed", "iter", "class", "ccd_raw", "ccd"]).map_err(io_err)?;
    for r in &runs {
        for e in r.evals() {
            for &k in &classes {
                let cell = |v: Option<&Option<f64>>| v.copied().flatten().map(|x| x.to_string()).unwrap_or_default();
                w.write_record([
                    r.config.method.to_string(),
                    r.config.seed.to_string(),
                    e.iteration.to_string(),
                    k.to_string(),
                    cell(e.ccd_raw.get(k)),
                    cell(e.ccd.get(k)),
                ])
                .map_err(io_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Failure::runtime(e.to_string()))?;
    write(a.out.join("ccd.csv"), bytes)?;
    write(a.out.join("ccd_curve.svg"), ccd_curve_plot(&runs, &classes).to_svg())?;
    write(a.out.join("ccd_bar.svg"), ccd_bar_plot(&runs, &classes).to_svg())?;
    eprintln!("summarized {} runs over {} classes", runs.len(), classes.len());
    Ok(())
}

fn sweep_threads() -> std::result::Result<usize, Failure> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::config(THREADS_VAR, format!("expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn sweep(a: SweepArgs) -> Outcome {
    let mut base = resolve(&a.overrides)?;
    let threads = sweep_threads()?;
    let data = dataset(&mut base, a.data.as_deref())?;
    let grid = match a.grid {
        Grid::Paper => paper_grid(),
    };
    prepare_out(&a.out)?;
    let runs_dir = a.out.join("runs");
    prepare_out(&runs_dir)?;
    write_json(a.out.join("config.json"), &json!({ "base": base, "grid": grid }))?;
    eprintln!("sweeping {} grid rows on {threads} thread(s)", grid.len());

    let rows = run_sweep_with(&base, &data, &grid, threads, |point, record| {
        let name = format!("lambda{}_eps{}.jsonl", point.lambda_local, point.epsilon);
        if let Err(e) = std::fs::write(runs_dir.join(&name), record.to_jsonl()) {
            eprintln!("could not write {name}: {e}");
        }
        eprintln!(
            "finished lambda_local={} epsilon={}: mIoU {}",
            point.lambda_local,
            point.epsilon,
            record.final_eval().and_then(|e| e.miou).map_or("n/a".into(), |m| format!("{m:.4}"))
        );
    });
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    write(a.out.join("sweep.csv"), csv)?;
    write(a.out.join("sweep.svg"), sweep_bar_plot(&rows).to_svg())?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    eprintln!("{} rows, {flagged} flagged", rows.len());
    Ok(())
}

pub fn grad_check(a: GradCheckArgs) -> Outcome {
    let mut opts = GradCheckOptions {
        seed: a.seed,
        step: a.step,
        tolerance: a.tolerance,
        fault: None,
    };
    if let Some(op) = &a.inject_fault {
        opts = opts.with_fault(op).map_err(|e| Failure::config("inject-fault", e.to_string()))?;
    }
    let start = Instant::now();
    let report = run_grad_check(&opts)?;
    println!("{:<26} {:>14} {:>8}  status", "case", "max rel err", "entries");
    for c in &report.cases {
        println!(
            "{:<26} {:>14.3e} {:>8}  {}",
            c.name,
            c.max_rel_error,
            c.entries,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    eprintln!("checked {} cases in {:.2}s", report.cases.len(), start.elapsed().as_secs_f64());
    if let Some(out) = &a.out {
        prepare_out(out)?;
        write_json(out.join("config.json"), &json!({ "seed": a.seed, "step": a.step, "tolerance": a.tolerance }))?;
        write_json(out.join("grad_check.json"), &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime {
            message: format!("gradient check failed for: {}", report.failures().join(", ")),
            details: json!({ "offenders": report.failures() }),
        })
    }
}
