//! Acceptance suite: one PASS/FAIL line per criterion. Runs sequentially
//! (custom harness) so the runtime benchmark is not disturbed by other work.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use topattn::autodiff::Tensor;
use topattn::config::Config;
use topattn::data::{synth_seasonal, write_csv, write_forecasts, Forecasts, SeasonalSpec, SeriesRecord};
use topattn::experiment::run_protocol;
use topattn::gradcheck::{check_gradients, GradCheckOptions};
use topattn::metrics::{owa, rank_and_diff};
use topattn::models::{make_variant, BackboneKind, ModelError, ModelSpec, Variant};
use topattn::params::Bound;
use topattn::persistence::{bruteforce_barcode, lower_star_barcode, superlevel_barcode, Barcode};
use topattn::train::ensemble_forecast;
use topattn::windowing::windowed_barcodes;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn topo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_topo"))
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn write_series(path: &Path, records: &[SeriesRecord]) {
    let mut buf = Vec::new();
    write_csv(&mut buf, records).unwrap();
    std::fs::write(path, buf).unwrap();
}

fn seasonal(seed: u64, length: usize, noise_sd: f64) -> SeriesRecord {
    let spec = SeasonalSpec { length, period: 12, amplitude: 3.0, trend: 0.0, noise_sd, level: 20.0 };
    synth_seasonal(&spec, seed).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<f64>> {
    // Heap's algorithm
    let mut a: Vec<f64> = (1..=n).map(|v| v as f64).collect();
    let mut c = vec![0; n];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

fn ph_oracle() -> Outcome {
    let start = Instant::now();
    let same = |x: &[f64]| lower_star_barcode(x).unwrap().canonical() == bruteforce_barcode(x).unwrap().canonical();
    let perms = permutations(8);
    let perm_bad = perms.iter().filter(|p| !same(p)).count();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand_bad = 0;
    for k in 0..10_000 {
        let len = rng.random_range(1..=64);
        let x: Vec<f64> = if k % 4 == 0 {
            // coarse values force ties
            (0..len).map(|_| rng.random_range(0..6) as f64).collect()
        } else {
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        rand_bad += usize::from(!same(&x));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        perms.len() == 40_320 && perm_bad == 0 && rand_bad == 0 && secs < 120.0,
        format!("{} permutations, {perm_bad} mismatches; 10000 random, {rand_bad} mismatches; {secs:.1}s", perms.len()),
    )
}

fn worked_example() -> Outcome {
    let code = lower_star_barcode(&[0.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
    let expected = vec![(0.0, 4.0, true), (1.0, 3.0, false), (2.0, 4.0, false)];
    // the component born at the minimum 1 (index 2) merges at the peak 3 (index 1)
    let narrative = code.bars().iter().any(|b| !b.essential && b.birth_index == 2 && b.death_index == 1);
    outcome(code.canonical() == expected && narrative, format!("{:?}", code.canonical()))
}

fn max_endpoint_shift(a: &Barcode, b: &Barcode) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for bar in a.bars() {
        let other = b.bars().iter().find(|o| o.birth_index == bar.birth_index && o.essential == bar.essential)?;
        if other.death_index != bar.death_index {
            return None;
        }
        worst = worst.max((bar.birth - other.birth).abs()).max((bar.death - other.death).abs());
    }
    (a.len() == b.len()).then_some(worst)
}

fn stability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let len = rng.random_range(2..=40);
        let x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if gap == 0.0 {
            continue;
        }
        let eps = 0.45 * gap.min(1.0) * rng.random_range(0.01..1.0);
        let y: Vec<f64> = x.iter().map(|v| v + eps * rng.random_range(-1.0..=1.0)).collect();
        for (a, b) in [
            (lower_star_barcode(&x).unwrap(), lower_star_barcode(&y).unwrap()),
            (superlevel_barcode(&x).unwrap(), superlevel_barcode(&y).unwrap()),
        ] {
            match max_endpoint_shift(&a, &b) {
                Some(s) => {
                    worst_excess = worst_excess.max(s - eps);
                    violations += usize::from(s > eps + 1e-12);
                }
                None => violations += 1,
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations; max shift - eps = {worst_excess:.3e}"))
}

fn owa_toy() -> Outcome {
    let v = owa(12.65, 1.63, 13.56, 1.91).unwrap();
    let exact = 0.5 * (12.65 / 13.56 + 1.63 / 1.91);
    let r1 = format!("{:.2}", 12.65 / 13.56);
    let r2 = format!("{:.2}", 1.63 / 1.91);
    let shown = format!("{v:.2}");
    outcome(
        v == exact && r1 == "0.93" && r2 == "0.85" && shown == "0.89",
        format!("owa = {v:.6} (displayed {shown}); ratios {r1}, {r2}"),
    )
}

fn rank_diff() -> Outcome {
    let (_, c) = rank_and_diff(&[vec![11.8], vec![12.2]]).unwrap();
    let table = vec![vec![14.4, 11.8, 10.5], vec![14.3, 12.1, 10.8], vec![13.1, 12.2, 11.1], vec![14.5, 13.1, 10.1]];
    let (ranks, diffs) = rank_and_diff(&table).unwrap();
    let (c2, r2, d2) = (format!("{:.2}", c[1]), format!("{:.2}", ranks[1]), format!("{:.2}", diffs[1]));
    outcome(c2 == "3.28" && r2 == "2.33" && d2 == "5.78", format!("C on TS1 {c2}; B avg rank {r2}, avg %-diff {d2}"))
}

fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let windows = rng.random_range(1..=6);
    let n = rng.random_range(2..=13 - windows);
    let lookback = windows + n - 1;
    let e = rng.random_range(1..=4);
    let divisors: Vec<usize> = (1..=2 * e).filter(|d| (2 * e) % d == 0).collect();
    let variant = Variant::ALL[rng.random_range(0..4)];
    ModelSpec {
        backbone: if rng.random_bool(0.5) { BackboneKind::Linear } else { BackboneKind::Nbeats },
        variant,
        lookback,
        horizon: rng.random_range(1..=3),
        window_len: Some(n),
        coord_functions: e,
        heads: divisors[rng.random_range(0..divisors.len())],
        encoder_layers: rng.random_range(0..=2),
        mlp_hidden: rng.random_range(2..=6),
        blocks: rng.random_range(1..=2),
        block_hidden: rng.random_range(2..=5),
        block_layers: rng.random_range(1..=3),
    }
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut worst, mut resampled) = (0, 0.0f64, 0);
    let mut failures = Vec::new();
    while checked < 60 {
        let spec = random_spec(&mut rng);
        let batch = 3;
        let mut accepted = false;
        for _ in 0..20 {
            let x = Tensor::new(vec![batch, spec.lookback], (0..batch * spec.lookback).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let plan = spec.plan().unwrap();
            let codes: Vec<_> = (0..batch).map(|r| windowed_barcodes(x.row(r), &plan).unwrap()).collect();
            let mut model = make_variant(spec, &codes, &mut rng).unwrap();
            for p in model.params.params_mut() {
                p.value = p.value.map(|v| v + 0.1 * (v * 53.0 + 1.0).sin());
            }
            let target = Tensor::new(vec![batch, spec.horizon], (0..batch * spec.horizon).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mut inputs: Vec<Tensor> = model.params.params().iter().map(|p| p.value.clone()).collect();
            let k = inputs.len();
            inputs.push(target);
            let used = if model.needs_barcodes() { codes } else { Vec::new() };
            let report = check_gradients(&inputs, GradCheckOptions { max_coords_per_tensor: 8, ..Default::default() }, |g, v| {
                let p = Bound::from_vars(v[..k].to_vec());
                let y = model.forward(&p, g.constant(x.clone()), &used)?;
                Ok::<_, ModelError>(y.sub(v[k])?.square()?.mean()?)
            })
            .unwrap();
            // central differences are meaningless across a kink; draw a new point
            if report.kink_margin <= 1e-4 {
                resampled += 1;
                continue;
            }
            worst = worst.max(report.max_rel_error);
            if report.max_rel_error > 1e-4 {
                failures.push(format!("{spec:?}: {:.2e}", report.max_rel_error));
            }
            accepted = true;
            break;
        }
        if !accepted {
            failures.push(format!("{spec:?}: no kink-free point"));
        }
        checked += 1;
    }
    outcome(
        failures.is_empty(),
        format!("{checked} configurations, max relative error {worst:.2e}, {resampled} points resampled near kinks {}", failures.join("; ")),
    )
}

fn desk_forecasting() -> Outcome {
    let start = Instant::now();
    // power SNR = (amplitude^2 / 2) / noise_sd^2 = 3
    let noise_sd = 3.0 / 6f64.sqrt();
    let mut cfg = Config::default();
    cfg.model.backbone = BackboneKind::Linear;
    cfg.model.variant = Variant::TopAttn;
    cfg.cv.lookbacks = vec![12, 24, 36];
    let mut wins = 0;
    let mut cells = Vec::new();
    for seed in 1..=10 {
        let series = vec![seasonal(seed, 240, noise_sd)];
        let out = match run_protocol(&series, &cfg, seed, "model") {
            Ok(o) => o,
            Err(e) => return outcome(false, format!("series {seed}: {e}")),
        };
        let get = |m: &str| out.report.methods.iter().find(|s| s.method == m).unwrap().mean_smape;
        let (model, naive) = (get("model"), get("Naive"));
        wins += usize::from(model <= naive);
        cells.push(format!("{model:.2}/{naive:.2}"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(wins >= 8 && secs < 1800.0, format!("{wins}/10 at or below Naive (model/naive sMAPE: {}); {secs:.0}s", cells.join(" ")))
}

fn encoder_count(d: usize) -> usize {
    12 * d * d + 10 * d
}

#[allow(clippy::too_many_arguments)]
fn closed_form(variant: &str, backbone: BackboneKind, t: usize, h: usize, n: usize, e: usize, layers: usize, hidden: usize, nb: (usize, usize, usize)) -> usize {
    let w = t - n + 1;
    let mlp = |width: usize| w * width * hidden + hidden + hidden * t + t;
    let aux = match variant {
        "base" => 0,
        "+Top" => 6 * e + mlp(2 * e),
        "+Attn" => layers * encoder_count(n) + mlp(n),
        _ => 6 * e + layers * encoder_count(2 * e) + mlp(2 * e),
    };
    let tp = if variant == "base" { t } else { 2 * t };
    let backbone = match backbone {
        BackboneKind::Linear => tp * h + h,
        BackboneKind::Nbeats => {
            let (blocks, k, depth) = nb;
            blocks * ((tp * k + k) + (depth - 1) * (k * k + k) + (k * tp + tp) + (k * h + h))
        }
    };
    aux + backbone
}

fn ablation(dir: &Path) -> Outcome {
    let data = dir.join("ablate.csv");
    write_series(&data, &[seasonal(21, 120, 0.5), seasonal(22, 100, 0.5)]);
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, backbone) in [("linear", BackboneKind::Linear), ("nbeats", BackboneKind::Nbeats)] {
        let (table, summary) = (dir.join(format!("ablate-{name}.csv")), dir.join(format!("ablate-{name}.json")));
        let r = run_ok(
            topo()
                .args(["ablate", "--seed", "5", "--data"])
                .arg(&data)
                .args(["--set", &format!("model.backbone={name}"), "--set", "model.lookback=12", "--set", "model.coord_functions=3"])
                .args(["--set", "model.heads=2", "--set", "model.encoder_layers=2", "--set", "model.mlp_hidden=8"])
                .args(["--set", "model.blocks=2", "--set", "model.block_hidden=6", "--set", "model.block_layers=3"])
                .args(["--set", "model.horizon=2", "--set", "train.iterations=20", "--set", "train.batch_size=8", "--out"])
                .arg(&table)
                .arg("--summary")
                .arg(&summary),
        );
        if let Err(e) = r {
            return outcome(false, e);
        }
        let mut rdr = csv::Reader::from_path(&table).unwrap();
        let mut variants = Vec::new();
        for row in rdr.records() {
            let row = row.unwrap();
            let variant = row[0].to_string();
            let params: usize = row[1].parse().unwrap();
            let expected = closed_form(&variant, backbone, 12, 2, 8, 3, 2, 8, (2, 6, 3));
            pass &= params == expected && row[2].parse::<usize>().unwrap() == expected;
            notes.push(format!("{name} {variant} {params}/{expected}"));
            variants.push(variant);
        }
        pass &= variants == ["base", "+Top", "+Attn", "+TopAttn"];
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&summary).unwrap()).unwrap();
        let passthrough = json["passthrough_matches"] == true;
        pass &= passthrough;
        notes.push(format!("{name} pass-through {passthrough}"));
    }
    outcome(pass, notes.join(", "))
}

fn bench() -> Outcome {
    let out = topo().args(["bench-ph", "--reps", "100", "--sizes", "250,500,1000,2000"]).output().unwrap();
    if !out.status.success() {
        return outcome(false, String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let ratios: Vec<f64> = rdr.records().filter_map(|r| r.unwrap()[2].parse().ok()).collect();
    let text: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    outcome(ratios.len() == 3 && ratios.iter().all(|&r| r <= 2.5), format!("doubling ratios {}", text.join(", ")))
}

fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("det.csv");
    write_series(&data, &[seasonal(31, 150, 1.0), seasonal(32, 130, 1.0)]);
    let mut files = Vec::new();
    for k in 0..2 {
        let (ck, loss, fc) = (dir.join(format!("det{k}.ckpt")), dir.join(format!("det{k}-loss.csv")), dir.join(format!("det{k}-fc.csv")));
        let trained = run_ok(
            topo()
                .args(["train", "--seed", "17", "--data"])
                .arg(&data)
                .args(["--set", "model.backbone=nbeats", "--set", "train.iterations=60", "--set", "cv.lookbacks=[12, 24]", "--out"])
                .arg(&ck)
                .arg("--loss-csv")
                .arg(&loss),
        )
        .and_then(|_| run_ok(topo().args(["forecast", "--mode", "rolling", "--checkpoint"]).arg(&ck).arg("--data").arg(&data).arg("--out").arg(&fc)));
        if let Err(e) = trained {
            return outcome(false, e);
        }
        files.push([ck, loss, fc].map(|p| std::fs::read(p).unwrap()));
    }
    let same = files[0] == files[1];
    outcome(same, format!("checkpoint {} bytes, loss and rolling forecast files identical: {same}", files[0][0].len()))
}

fn ensemble(dir: &Path) -> Outcome {
    let hand = ensemble_forecast(&[vec![1.0, 3.0], vec![2.0, 4.0], vec![9.0, 0.0]]).unwrap();
    let truth: Vec<SeriesRecord> = (41..44).map(|s| seasonal(s, 60, 0.5)).collect();
    let truth_path = dir.join("ens-truth.csv");
    write_series(&truth_path, &truth);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut members = Vec::new();
    for m in 0..5 {
        let f: Forecasts =
            truth.iter().map(|r| (r.id.clone(), r.values[54..].iter().map(|v| v + rng.random_range(-2.0..2.0)).collect())).collect();
        let path = dir.join(format!("member{m}.csv"));
        let mut buf = Vec::new();
        write_forecasts(&mut buf, &f).unwrap();
        std::fs::write(&path, buf).unwrap();
        members.push(path);
    }
    let run = |order: &[usize], tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let (median, curve) = (dir.join(format!("median-{tag}.csv")), dir.join(format!("curve-{tag}.csv")));
        let mut cmd = topo();
        cmd.args(["ensemble", "--draws", "10", "--seed", "4", "--truth"]).arg(&truth_path);
        for &i in order {
            cmd.arg("--member").arg(&members[i]);
        }
        run_ok(cmd.arg("--out").arg(&median).arg("--curve").arg(&curve))?;
        Ok((std::fs::read(median).unwrap(), std::fs::read(curve).unwrap()))
    };
    let (a, b, single) = match (run(&[0, 1, 2, 3, 4], "a"), run(&[3, 0, 4, 2, 1], "b"), run(&[2], "single")) {
        (Ok(a), Ok(b), Ok(s)) => (a, b, s),
        (a, b, s) => return outcome(false, format!("{:?} {:?} {:?}", a.err(), b.err(), s.err())),
    };
    let identity = single.0 == std::fs::read(&members[2]).unwrap();
    outcome(
        hand == vec![2.0, 3.0] && a == b && identity,
        format!("median {hand:?}; permuted members identical: {}; single member reproduced: {identity}", a == b),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<Criterion> = vec![
        ("PH oracle equivalence", Box::new(ph_oracle)),
        ("worked example (0,3,1,4,2)", Box::new(worked_example)),
        ("stability under order-preserving perturbation", Box::new(stability)),
        ("OWA toy reproduction", Box::new(owa_toy)),
        ("rank / %-diff table cells", Box::new(rank_diff)),
        ("end-to-end gradient suite", Box::new(gradient_suite)),
        ("desk-scale forecasting vs Naive", Box::new(desk_forecasting)),
        ("ablation harness structure", Box::new(|| ablation(dir.path()))),
        ("near-linear barcode runtime", Box::new(bench)),
        ("training determinism", Box::new(|| determinism(dir.path()))),
        ("ensemble median and order stability", Box::new(|| ensemble(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {:>2}: {name} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
