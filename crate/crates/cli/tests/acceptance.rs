//! Acceptance checks P1 to P10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Runs the release-style pipeline end to end
//! through the `vtla` binary, so it takes several minutes.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use serde_json::Value;
use sha2::{Digest, Sha256};
use vtla_core::dataset::{read_manifest_dir, ActionTokens, Split};
use vtla_core::geometry::{fits_inside, make_polygon, Pose, Shape, ShapeKind, CLEARANCE_RANGE};
use vtla_core::policy::{
    load_checkpoint, load_examples, mean_ntp_loss, ntp_loss, save_checkpoint, Architecture, Example, PolicyModel,
    FEATURE_DIM,
};
use vtla_core::preference::{dpo_loss, read_pairs, PrefExample};
use vtla_core::rng::Stream;

struct Outcome {
    pass: bool,
    detail: String,
}

fn pass_if(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

struct Ctx {
    dir: tempfile::TempDir,
}

impl Ctx {
    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Result<Value> {
        let out = Command::new(env!("CARGO_BIN_EXE_vtla"))
            .arg("--json")
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("VTLA_SEED")
            .output()?;
        if !out.status.success() {
            bail!("vtla {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim());
        }
        Ok(serde_json::from_slice(&out.stdout)?)
    }

    fn timed(&self, args: &[&str]) -> Result<(Value, Duration)> {
        let t = Instant::now();
        let v = self.run(args)?;
        Ok((v, t.elapsed()))
    }

    fn read(&self, p: &str) -> Result<Value> {
        let text = std::fs::read_to_string(self.path(p)).with_context(|| p.to_string())?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Relative path and content digest of every file below `root`.
fn tree_digest(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root)?.to_string_lossy().into_owned();
                out.insert(rel, Sha256::digest(std::fs::read(&path)?).to_vec());
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

fn cores() -> usize {
    std::thread::available_parallelism().map(usize::from).unwrap_or(1)
}

fn p1(ctx: &Ctx) -> Result<Outcome> {
    let (_, t1) = ctx.timed(&["--seed", "7", "gen-data", "--preset", "desk", "--out", "p1a"])?;
    let (_, t2) = ctx.timed(&["--seed", "7", "gen-data", "--preset", "desk", "--out", "p1b"])?;
    let (a, b) = (tree_digest(&ctx.path("p1a"))?, tree_digest(&ctx.path("p1b"))?);
    let identical = a == b;
    let secs = t1.min(t2).as_secs_f64();
    let n = cores();
    // The budget is stated for 8 cores. On fewer cores the time is scaled by
    // n/8, which assumes ideal parallel speedup and is labelled as such.
    let (budget_ok, timing) = if n >= 8 {
        (secs < 60.0, format!("{secs:.1} s on {n} cores"))
    } else {
        let est = secs * n as f64 / 8.0;
        (est < 60.0, format!("{secs:.1} s on {n} core(s), ideal-scaling estimate {est:.1} s on 8"))
    };
    pass_if(
        identical && budget_ok,
        format!("{} files, trees identical: {identical}; {timing} (budget 60 s)", a.len()),
    )
}

fn p3(ctx: &Ctx) -> Result<Outcome> {
    let manifest = read_manifest_dir(&ctx.path("p1a"))?;
    let episodes: Vec<Value> = std::fs::read_to_string(ctx.path("p1a/episodes.jsonl"))?
        .lines()
        .map(serde_json::from_str)
        .collect::<serde_json::Result<_>>()?;
    ensure!(!episodes.is_empty(), "no episodes");
    let mut bad = Vec::new();
    for e in &episodes {
        let steps = e["steps"].as_u64().unwrap_or(u64::MAX);
        let phase = e["phase"].as_str().unwrap_or("");
        if !(1..=15).contains(&steps) || !matches!(phase, "success" | "failure") {
            bad.push(e.to_string());
        }
    }
    let (lo, hi) = CLEARANCE_RANGE;
    let out_of_range = manifest
        .records
        .iter()
        .filter(|r| !(lo..=hi).contains(&r.clearance_mm))
        .count();
    let attempts = manifest.records.iter().filter(|r| r.attempt > 15).count();
    pass_if(
        bad.is_empty() && out_of_range == 0 && attempts == 0,
        format!(
            "{} episodes, {} bad (first: {:?}); {} samples, {out_of_range} clearances outside [{lo}, {hi}] mm, {attempts} attempts > 15",
            episodes.len(),
            bad.len(),
            bad.first(),
            manifest.len()
        ),
    )
}

/// Dense-sampling containment oracle, written independently of the
/// geometry module.
mod containment {
    use std::f64::consts::{FRAC_PI_2, PI};

    use vtla_core::geometry::{Pose, ShapeKind};

    pub const PEG_MM: f64 = 10.0;
    const SAMPLES_PER_EDGE: usize = 32;

    fn outline(kind: ShapeKind, size: f64) -> Vec<(f64, f64)> {
        let n = match kind {
            ShapeKind::Triangle => 3,
            ShapeKind::Square => {
                let h = size / 2.0;
                return vec![(h, h), (-h, h), (-h, -h), (h, -h)];
            }
            ShapeKind::Pentagon => 5,
            ShapeKind::Hexagon => 6,
            ShapeKind::Round => 64,
        };
        let r = if kind == ShapeKind::Round { size / 2.0 } else { size / (2.0 * (PI / n as f64).sin()) };
        (0..n)
            .map(|k| {
                let a = FRAC_PI_2 + 2.0 * PI * k as f64 / n as f64;
                (r * a.cos(), r * a.sin())
            })
            .collect()
    }

    fn inside(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
        let n = poly.len();
        let mut c = false;
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + n - 1) % n]);
            if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
                c = !c;
            }
        }
        c
    }

    fn edge_distance(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
        let n = poly.len();
        (0..n)
            .map(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether every sampled peg boundary point lies in the hole, and the
    /// smallest distance of any sample to the hole boundary.
    pub fn judge(kind: ShapeKind, clearance: f64, pose: Pose) -> (bool, f64) {
        let hole = outline(kind, PEG_MM + clearance);
        let t = pose.rz * PI / 180.0;
        let peg: Vec<(f64, f64)> = outline(kind, PEG_MM)
            .into_iter()
            .map(|(x, y)| (x * t.cos() - y * t.sin() + pose.x, x * t.sin() + y * t.cos() + pose.y))
            .collect();
        let n = peg.len();
        let (mut fits, mut margin) = (true, f64::INFINITY);
        for i in 0..n {
            let (a, b) = (peg[i], peg[(i + 1) % n]);
            for k in 0..SAMPLES_PER_EDGE {
                let s = k as f64 / SAMPLES_PER_EDGE as f64;
                let p = (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1));
                fits &= inside(&hole, p);
                margin = margin.min(edge_distance(&hole, p));
            }
        }
        (fits, margin)
    }
}

fn p2(_: &Ctx) -> Result<Outcome> {
    const CASES: usize = 10_000;
    let mut s = Stream::new(31, "acceptance-containment");
    let (mut judged, mut agree, mut fit, mut skipped) = (0, 0, 0, 0);
    for i in 0..CASES {
        let kind = ShapeKind::ALL[s.below(5)];
        let c = s.uniform(CLEARANCE_RANGE.0, CLEARANCE_RANGE.1);
        let pose = if i % 2 == 0 {
            Pose::new(s.uniform(-2.5 - c, 2.5 + c), s.uniform(-2.5 - c, 2.5 + c), s.uniform(-5.0 - c, 5.0 + c))
        } else {
            Pose::new(s.uniform(-c, c) * 0.6, s.uniform(-c, c) * 0.6, s.uniform(-3.0, 3.0) * c)
        };
        let (want, margin) = containment::judge(kind, c, pose);
        if margin <= 1e-6 {
            skipped += 1;
            continue;
        }
        judged += 1;
        fit += usize::from(want);
        let peg = Shape::new(kind, containment::PEG_MM)?;
        agree += usize::from(fits_inside(&make_polygon(peg.hole(c)), &make_polygon(peg), pose) == want);
    }
    pass_if(
        agree == judged,
        format!("{agree}/{judged} agree ({fit} fit, {skipped} within 1e-6 mm of the boundary excluded)"),
    )
}

fn p4(ctx: &Ctx) -> Result<Outcome> {
    let (v, t) = ctx.timed(&["eval-insert", "--policy", "oracle", "--grid", "full", "--trials", "50"])?;
    let cells = v["tables"][0]["cells"].as_array().context("no cells")?;
    let mut worst = Vec::new();
    let mut total = 0;
    for c in cells {
        total += c["trials"].as_u64().unwrap_or(0);
        if c["success_rate"].as_f64() != Some(100.0) || c["avg_steps"].as_f64() != Some(1.0) {
            worst.push(c.to_string());
        }
    }
    let secs = t.as_secs_f64();
    pass_if(
        cells.len() == 20 && total == 1000 && worst.is_empty() && secs < 120.0,
        format!(
            "{} cells, {total} trials, {} cells below 100% / 1.00 steps; {secs:.1} s (budget 120 s)",
            cells.len(),
            worst.len()
        ),
    )
}

const FD_EPS: f32 = 1e-4;

fn worst_fd_error(model: &PolicyModel, analytic: &[f64], loss: &dyn Fn(&PolicyModel) -> f64, coords: usize) -> f64 {
    let mut s = Stream::new(5, "acceptance-fd");
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let i = s.below(model.param_count());
        let mut m = model.clone();
        let base = model.theta[i];
        m.theta[i] = base + FD_EPS;
        let (hi, up) = (m.theta[i], loss(&m));
        m.theta[i] = base - FD_EPS;
        let (lo, down) = (m.theta[i], loss(&m));
        let numeric = (up - down) / (f64::from(hi) - f64::from(lo));
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn p5(_: &Ctx) -> Result<Outcome> {
    let mut s = Stream::new(3, "acceptance-loss");
    let token = |s: &mut Stream| ActionTokens::new([s.below(51), s.below(51), s.below(21)]);
    let full: Vec<Example> = (0..32)
        .map(|_| {
            let features = (0..FEATURE_DIM).map(|_| s.uniform(-1.0, 1.0) as f32).collect();
            Ok(Example { features, tokens: token(&mut s)? })
        })
        .collect::<Result<_>>()?;
    let uniform = mean_ntp_loss(&PolicyModel::zeros(Architecture::default())?, &full)?;
    let expect = 2.0 * 51f64.ln() + 21f64.ln();
    let ntp_err = (uniform - expect).abs();

    let small = Architecture { input_dim: 12, hidden: 7, layers: 2, embed: 3, ..Architecture::default() };
    let inputs: Vec<(Vec<f32>, ActionTokens, ActionTokens)> = (0..8)
        .map(|_| {
            let x = (0..12).map(|_| s.uniform(-1.0, 1.0) as f32).collect();
            Ok((x, token(&mut s)?, token(&mut s)?))
        })
        .collect::<Result<_>>()?;
    let reference = PolicyModel::random(small.clone(), 11, 0.5)?;
    let at_ref: Vec<PrefExample> = inputs
        .iter()
        .enumerate()
        .map(|(k, (x, c, r))| PrefExample::new(&reference, &format!("p{k}"), x.clone(), *c, *r))
        .collect::<vtla_core::Result<_>>()?;
    let batch: Vec<&PrefExample> = at_ref.iter().collect();
    let dpo_err = (dpo_loss(&reference, &batch, 0.1)?.0 - LN_2).abs();

    const COORDS: usize = 96;
    let policy = PolicyModel::random(small, 12, 0.5)?;
    let (_, g_dpo) = dpo_loss(&policy, &batch, 0.1)?;
    let dpo_fd = worst_fd_error(&policy, &g_dpo, &|m| dpo_loss(m, &batch, 0.1).unwrap().0, COORDS);
    let examples: Vec<Example> = inputs.iter().map(|(x, c, _)| Example { features: x.clone(), tokens: *c }).collect();
    let ex_batch: Vec<&Example> = examples.iter().collect();
    let (_, g_ntp) = ntp_loss(&policy, &ex_batch)?;
    let ntp_fd = worst_fd_error(&policy, &g_ntp, &|m| ntp_loss(m, &ex_batch).unwrap().0, COORDS);

    pass_if(
        ntp_err <= 1e-9 && dpo_err <= 1e-12 && ntp_fd < 1e-5 && dpo_fd < 1e-5,
        format!(
            "uniform NTP {uniform:.12} (|err| {ntp_err:.1e}); DPO at reference |err| {dpo_err:.1e}; \
             finite differences on {COORDS} coords: NTP {ntp_fd:.1e}, DPO {dpo_fd:.1e} (limit 1e-5)"
        ),
    )
}

const ID_SHAPES: &str = "square,triangle,hexagon";

fn gcr(v: &Value, split: &str) -> Result<f64> {
    v["rows"][0]["splits"]
        .as_array()
        .and_then(|s| s.iter().find(|m| m["split"] == split))
        .and_then(|m| m["gcr"].as_f64())
        .with_context(|| format!("no {split} GCR in {v}"))
}

fn success(v: &Value) -> Result<f64> {
    v["tables"][0]["cells"][0]["success_rate"].as_f64().context("no success rate")
}

fn p7(ctx: &Ctx) -> Result<Outcome> {
    ctx.run(&["gen-data", "--shapes", ID_SHAPES, "--clearance", "2.0", "--count", "2000", "--out", "train"])?;
    ctx.run(&["gen-data", "--shapes", ID_SHAPES, "--clearance", "2.0", "--count", "1000", "--salt", "1", "--out", "heldout"])?;
    let start = Instant::now();
    let sft = ctx.run(&["sft-train", "--data", "train", "--out", "sft.ckpt"])?;
    let model = ctx.run(&["eval-dataset", "--data", "heldout", "--checkpoint", "sft.ckpt", "--out", "sft_id.json"])?;
    let random = ctx.run(&["eval-dataset", "--data", "heldout", "--policy", "random"])?;
    let insert = |policy: &str| {
        ctx.run(&["eval-insert", "--policy", policy, "--grid", "square", "--clearance", "2.0", "--trials", "50"])
    };
    let ins_model = success(&insert("checkpoint:sft.ckpt")?)?;
    let secs = start.elapsed().as_secs_f64();
    let ins_random = success(&insert("random")?)?;
    let (g_model, g_random) = (gcr(&model, "ID")?, gcr(&random, "ID")?);
    pass_if(
        g_model >= 3.0 * g_random && g_model > 0.0 && ins_model >= 60.0 && secs < 300.0,
        format!(
            "{} train samples; held-out ID GCR {g_model:.2}% vs random {g_random:.2}%; \
             square 2.0 mm success {ins_model:.0}% vs random {ins_random:.0}%; train+eval {secs:.1} s (budget 300 s)",
            sft["samples"]
        ),
    )
}

fn p9(ctx: &Ctx) -> Result<Outcome> {
    let (model, _) = load_checkpoint(&ctx.path("sft.ckpt"))?;
    let manifest = read_manifest_dir(&ctx.path("heldout"))?.filter_split(Split::Id);
    let examples = load_examples(&manifest, model.arch.feature_order)?;
    // Greedy decode axis by axis from teacher-forced tables, then score by
    // bin centers in one pass.
    let center = |axis: usize, i: usize| (i as f64 - [25.0, 25.0, 10.0][axis]) / [10.0, 10.0, 2.0][axis] + 0.0;
    let (mut hits, mut sums) = (0usize, [0.0f64; 3]);
    for ex in &examples {
        let mut t = [0usize; 3];
        for axis in 0..3 {
            let tables = model.forward_logprobs(&ex.features, ActionTokens::new(t)?)?;
            let row = &tables[axis];
            t[axis] = (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best });
        }
        let label = ex.tokens.as_array();
        let d = [0, 1, 2].map(|a| (center(a, t[a]) - center(a, label[a])).abs());
        if d[0] <= 0.05 && d[1] <= 0.05 && d[2] <= 0.25 {
            hits += 1;
        }
        for a in 0..3 {
            sums[a] += d[a];
        }
    }
    let n = examples.len() as f64;
    let mine = [100.0 * hits as f64 / n, sums[0] / n, sums[1] / n, sums[2] / n];
    let file = ctx.read("sft_id.json")?;
    let row = file["rows"][0]["splits"]
        .as_array()
        .and_then(|s| s.iter().find(|m| m["split"] == "ID"))
        .context("no ID split")?;
    let theirs = ["gcr", "l1_x", "l1_y", "l1_rz"].map(|k| row[k].as_f64().unwrap_or(f64::NAN));
    let exact = mine.iter().zip(&theirs).all(|(a, b)| a.to_bits() == b.to_bits());
    pass_if(
        exact && examples.len() == 1000,
        format!("{} samples; recomputed {mine:?}, reported {theirs:?}, bitwise equal: {exact}", examples.len()),
    )
}

fn p10(ctx: &Ctx) -> Result<Outcome> {
    let (model, meta) = load_checkpoint(&ctx.path("sft.ckpt"))?;
    save_checkpoint(&ctx.path("resaved.ckpt"), &model, &meta)?;
    let (back, _) = load_checkpoint(&ctx.path("resaved.ckpt"))?;
    let manifest = read_manifest_dir(&ctx.path("heldout"))?;
    let sub = vtla_core::dataset::Manifest { root: manifest.root.clone(), records: manifest.records[..100].to_vec() };
    let examples = load_examples(&sub, model.arch.feature_order)?;
    let mut tables = 0;
    let mut exact = true;
    for ex in &examples {
        let a = model.forward_logprobs(&ex.features, ex.tokens)?;
        let b = back.forward_logprobs(&ex.features, ex.tokens)?;
        exact &= a.iter().flatten().map(|v| v.to_bits()).eq(b.iter().flatten().map(|v| v.to_bits()));
        tables += 3;
    }
    let same_bytes = std::fs::read(ctx.path("sft.ckpt"))? == std::fs::read(ctx.path("resaved.ckpt"))?;
    pass_if(
        exact && same_bytes,
        format!("{tables} logprob tables bit-exact: {exact}; re-saved file byte-identical: {same_bytes}"),
    )
}

fn p6(ctx: &Ctx) -> Result<Outcome> {
    ctx.run(&["build-prefs", "--data", "train", "--checkpoint", "sft.ckpt", "--samples", "1200", "--out", "p6.jsonl"])?;
    let pairs = read_pairs(&ctx.path("p6.jsonl"))?;
    let side = ctx.read("p6.jsonl.run.json")?;
    let stats = &side["stats"];
    let configs = side["gen_configs"].as_array().map_or(0, Vec::len);
    let dist = |a: ActionTokens, b: ActionTokens| {
        let (a, b) = (a.as_array(), b.as_array());
        (a[0].abs_diff(b[0]) as f64) / 10.0 + (a[1].abs_diff(b[1]) as f64) / 10.0 + (a[2].abs_diff(b[2]) as f64) / 2.0
    };
    let violations = pairs
        .iter()
        .filter(|p| {
            let (c, r) = (dist(p.chosen_tokens, p.gt_tokens), dist(p.rejected_tokens, p.gt_tokens));
            !(p.d_chosen < p.d_rejected) || !(c < r)
        })
        .count();
    let samples = stats["samples"].as_u64().unwrap_or(0);
    pass_if(
        violations == 0 && !pairs.is_empty() && samples == 1200,
        format!(
            "{} preference points ({samples} samples x {configs} configs); {} pairs, {violations} with d_chosen >= d_rejected; \
             dropped {} ties and {} identical",
            samples * configs as u64,
            pairs.len(),
            stats["dropped_ties"],
            stats["dropped_identical"]
        ),
    )
}

fn p8(ctx: &Ctx) -> Result<Outcome> {
    ctx.run(&["build-prefs", "--data", "train", "--checkpoint", "sft.ckpt", "--preset", "dpo-1k", "--out", "dpo1k.jsonl"])?;
    let dpo = ctx.run(&["dpo-train", "--checkpoint", "sft.ckpt", "--prefs", "dpo1k.jsonl", "--data", "train", "--out", "dpo.ckpt"])?;
    ctx.run(&["gen-data", "--shapes", "pentagon,round", "--clearance", "2.0", "--count", "400", "--salt", "2", "--out", "ood"])?;
    let sft = gcr(&ctx.run(&["eval-dataset", "--data", "ood", "--checkpoint", "sft.ckpt"])?, "OOD")?;
    let tuned = gcr(&ctx.run(&["eval-dataset", "--data", "ood", "--checkpoint", "dpo.ckpt"])?, "OOD")?;
    let acc = dpo["accuracy"].as_f64().context("no accuracy")?;
    let loss = dpo["final_loss"].as_f64().context("no loss")?;
    pass_if(
        dpo["pairs"] == 1000 && acc >= 0.9 && loss < LN_2 && tuned >= sft - 1.0,
        format!(
            "{} pairs; pair accuracy {acc:.3} (need 0.9); DPO loss {loss:.4} (need < {LN_2:.4}); \
             OOD GCR SFT {sft:.2}% -> DPO {tuned:.2}% (need >= {:.2}%)",
            dpo["pairs"],
            sft - 1.0
        ),
    )
}

fn main() {
    // Ignore libtest arguments such as --nocapture or filters.
    let ctx = Ctx { dir: tempfile::tempdir().expect("temp dir") };
    let checks: [(&str, &str, fn(&Ctx) -> Result<Outcome>); 10] = [
        ("P1", "determinism", p1),
        ("P3", "episode protocol", p3),
        ("P2", "collision oracle", p2),
        ("P4", "oracle benchmark", p4),
        ("P5", "loss exactness", p5),
        ("P7", "learning signal", p7),
        ("P9", "metric recomputation", p9),
        ("P10", "checkpoint round trip", p10),
        ("P6", "preference integrity", p6),
        ("P8", "DPO trend", p8),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in checks {
        let t = Instant::now();
        let (pass, detail) = match check(&ctx) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} {id} {name}: {detail} [{:.1} s]", t.elapsed().as_secs_f64());
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
