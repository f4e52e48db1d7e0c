//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use vtla_core::dataset::{
    detokenize_action, generate_dataset, read_manifest_dir, ClearanceSampling, GenConfig, Manifest, Preset,
    Split,
};
use vtla_core::episode::Action;
use vtla_core::eval::{
    dataset_metrics, evaluate_dataset, insertion_benchmark, plot_series, report, DatasetMetrics, DatasetReport,
    Format, Grid, Metrics, StepsConvention, Tolerance,
};
use vtla_core::geometry::ShapeKind;
use vtla_core::policy::wire::{serve, Query, RemotePolicy};
use vtla_core::policy::{
    fit_input_norm, load_checkpoint, load_examples, oracle_policy, random_policy, save_checkpoint, sft_train,
    Architecture, Example, FeatureOrder, FnPolicy, ModelPolicy, Policy, PolicyModel, SamplingConfig, SftConfig,
};
use vtla_core::preference::{
    build_preference_pairs, dpo_train, generate_candidates, read_pairs, write_pairs, DpoConfig, PairStats,
    PrefExample, PreferencePair,
};
use vtla_core::rng::derive_seed;

use crate::artifacts::{read_json, sidecar, write_json, RunConfig};
use crate::{
    BuildPrefsArgs, Cli, Command, DpoArgs, EvalDatasetArgs, EvalInsertArgs, FormatArg, GenDataArgs, GridArg,
    OrderArg, PrefPreset, PresetArg, ReportArgs, Schedule, ServeArgs, SftArgs, SplitArg, StepsArg,
};

const PLOT_SIZE: (usize, usize) = (640, 360);

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::SftTrain(a) => sft(cli, a),
        Command::BuildPrefs(a) => build_prefs(cli, a),
        Command::DpoTrain(a) => dpo(cli, a),
        Command::EvalDataset(a) => eval_dataset(cli, a),
        Command::EvalInsert(a) => eval_insert(cli, a),
        Command::ServePolicy(a) => serve_policy(cli, a),
        Command::Report(a) => report_cmd(cli, a),
    }
}

/// Prints `json` with `--json`, otherwise the human summary.
fn emit(cli: &Cli, human: &str, json: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    if cli.json {
        writeln!(out, "{}", serde_json::to_string(json)?)?;
    } else {
        write!(out, "{human}")?;
        if !human.ends_with('\n') {
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_shape(s: &str) -> Result<ShapeKind> {
    ShapeKind::parse(s).ok_or_else(|| anyhow!("unknown shape {s:?}"))
}

fn load_data(path: &Path) -> Result<Manifest> {
    read_manifest_dir(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<(PolicyModel, Value)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn plot(path: &Option<std::path::PathBuf>, series: &[&[f64]]) -> Result<()> {
    if let Some(p) = path {
        plot_series(p, series, PLOT_SIZE.0, PLOT_SIZE.1).with_context(|| format!("plotting {}", p.display()))?;
    }
    Ok(())
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> Result<()> {
    let preset = match a.preset {
        PresetArg::Full => Preset::Full,
        PresetArg::Eval => Preset::Eval,
        PresetArg::Desk => Preset::Desk,
    };
    let mut cfg = GenConfig::preset(preset, cli.seed);
    if let Some(names) = &a.shapes {
        let kinds = names.iter().map(|s| parse_shape(s)).collect::<Result<Vec<_>>>()?;
        let total = cfg.total();
        cfg.shapes = kinds.into_iter().map(|k| (k, 0)).collect();
        cfg = cfg.with_total(total);
    }
    if let Some(n) = a.count {
        cfg = cfg.with_total(n);
    }
    if let Some(c) = a.clearance {
        cfg.clearance = ClearanceSampling::Fixed(c);
    }
    if let Some(s) = a.salt {
        cfg.salt = s;
    }
    // The output directory is left out so that identical runs into
    // different directories produce identical trees.
    let mut run = RunConfig::new("gen-data", cli.seed, a)?.value();
    run["args"].as_object_mut().map(|m| m.remove("out"));
    let summary = generate_dataset(&cfg, &a.out, &run)?;
    let id = summary
        .episodes
        .iter()
        .filter(|e| Split::of(e.shape) == Split::Id)
        .map(|e| e.samples)
        .sum::<usize>();
    emit(
        cli,
        &format!(
            "wrote {} samples from {} episodes to {} ({} ID, {} OOD)",
            summary.samples,
            summary.episodes.len(),
            a.out.display(),
            id,
            summary.samples - id
        ),
        &json!({
            "out": a.out,
            "samples": summary.samples,
            "episodes": summary.episodes.len(),
            "id_samples": id,
            "ood_samples": summary.samples - id,
        }),
    )
}

fn sft(cli: &Cli, a: &SftArgs) -> Result<()> {
    let mut data = load_data(&a.data)?.filter_split(Split::Id);
    if let Some(n) = a.limit {
        data.records.truncate(n);
    }
    if data.is_empty() {
        bail!("{} has no in-distribution samples", a.data.display());
    }
    let order = match a.feature_order {
        OrderArg::VisionLast => FeatureOrder::VisionLast,
        OrderArg::VisionFirst => FeatureOrder::VisionFirst,
    };
    let examples = load_examples(&data, order)?;
    let arch = Architecture {
        hidden: a.hidden,
        layers: a.layers,
        embed: a.embed,
        feature_order: order,
        ..Architecture::default()
    };
    let mut model = PolicyModel::init(arch, cli.seed)?;
    if !a.no_norm {
        model = model.with_norm(fit_input_norm(&examples)?)?;
    }
    let mut cfg = match a.schedule {
        Schedule::Desk => SftConfig::desk(),
        Schedule::Original => SftConfig::default(),
    };
    cfg.seed = cli.seed;
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    let log = sft_train(&mut model, &examples, &cfg)?;
    let run = RunConfig::new("sft-train", cli.seed, a)?.value();
    let meta = json!({"run": run, "config": cfg, "samples": examples.len(), "log": log});
    save_checkpoint(&a.out, &model, &meta)?;
    plot(&a.plot, &[&log.epoch_losses])?;
    emit(
        cli,
        &format!(
            "trained on {} samples: loss {:.4} -> {:.4}, {} parameters, wrote {}",
            examples.len(),
            log.initial_loss,
            log.final_loss,
            model.param_count(),
            a.out.display()
        ),
        &json!({
            "out": a.out,
            "samples": examples.len(),
            "params": model.param_count(),
            "initial_loss": log.initial_loss,
            "final_loss": log.final_loss,
            "epoch_losses": log.epoch_losses,
            "theta_sha256": model.theta_digest(),
        }),
    )
}

fn add_stats(total: &mut PairStats, s: &PairStats) {
    total.samples += s.samples;
    total.pairs += s.pairs;
    total.dropped_ties += s.dropped_ties;
    total.dropped_identical += s.dropped_identical;
}

fn build_prefs(cli: &Cli, a: &BuildPrefsArgs) -> Result<()> {
    let (model, _) = load_model(&a.checkpoint)?;
    let mut data = load_data(&a.data)?.filter_split(Split::Id);
    data.records.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    if let Some(n) = a.samples {
        data.records.truncate(n);
    }
    if data.is_empty() {
        bail!("{} has no in-distribution samples", a.data.display());
    }
    let target = a.pairs.or(a.preset.map(|p| match p {
        PrefPreset::Dpo1k => 1_000,
        PrefPreset::Dpo2k => 2_400,
    }));
    let cfgs = SamplingConfig::GENERATION.map(|c| SamplingConfig {
        seed: derive_seed(cli.seed, &[c.seed]),
        ..c
    });

    let mut pairs: Vec<PreferencePair> = Vec::new();
    let mut stats = PairStats::default();
    let mut next = 0;
    'outer: while next < data.records.len() {
        // Candidates depend only on the sample id, so chunking never
        // changes the result; it only avoids sampling unused records.
        let chunk = match target {
            Some(n) => ((n - pairs.len()) * 5 / 4 + 32).min(data.records.len() - next),
            None => data.records.len(),
        };
        let sub = Manifest {
            root: data.root.clone(),
            records: data.records[next..next + chunk].to_vec(),
        };
        next += chunk;
        let examples = load_examples(&sub, model.arch.feature_order)?;
        let ids: Vec<String> = sub.records.iter().map(|r| r.sample_id.clone()).collect();
        let cands = generate_candidates(&model, &ids, &examples, &cfgs, a.per_config)?;
        for c in &cands {
            let (p, s) = build_preference_pairs(std::slice::from_ref(c), &cfgs)?;
            add_stats(&mut stats, &s);
            pairs.extend(p);
            if target.is_some_and(|n| pairs.len() >= n) {
                break 'outer;
            }
        }
    }
    if let Some(n) = target {
        if pairs.len() < n {
            bail!(
                "only {} pairs from {} samples ({} ties, {} identical dropped); {n} requested",
                pairs.len(),
                stats.samples,
                stats.dropped_ties,
                stats.dropped_identical
            );
        }
    }
    write_pairs(&a.out, &pairs)?;
    let run = RunConfig::new("build-prefs", cli.seed, a)?.value();
    write_json(
        &sidecar(&a.out),
        &json!({"run": run, "gen_configs": cfgs, "stats": stats, "policy_sha256": model.theta_digest()}),
    )?;
    emit(
        cli,
        &format!(
            "wrote {} pairs from {} samples to {} (dropped {} ties, {} identical)",
            stats.pairs,
            stats.samples,
            a.out.display(),
            stats.dropped_ties,
            stats.dropped_identical
        ),
        &json!({"out": a.out, "stats": stats}),
    )
}

fn dpo(cli: &Cli, a: &DpoArgs) -> Result<()> {
    let (reference, parent) = load_model(&a.checkpoint)?;
    let mut pairs = read_pairs(&a.prefs)?;
    if let Some(n) = a.pairs {
        if pairs.len() < n {
            bail!("{} holds {} pairs; {n} requested", a.prefs.display(), pairs.len());
        }
        pairs.truncate(n);
    }
    if pairs.is_empty() {
        bail!("{} holds no pairs", a.prefs.display());
    }
    let data = load_data(&a.data)?;
    let by_id: HashMap<&str, usize> = data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    let mut needed: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &pairs {
        let i = *by_id
            .get(p.sample_id.as_str())
            .ok_or_else(|| anyhow!("sample {} is not in {}", p.sample_id, a.data.display()))?;
        needed.insert(data.records[i].sample_id.as_str(), i);
    }
    let sub = Manifest {
        root: data.root.clone(),
        records: needed.values().map(|&i| data.records[i].clone()).collect(),
    };
    let examples = load_examples(&sub, reference.arch.feature_order)?;
    let feats: HashMap<&str, &Example> = sub
        .records
        .iter()
        .zip(&examples)
        .map(|(r, e)| (r.sample_id.as_str(), e))
        .collect();
    let train: Vec<PrefExample> = pairs
        .iter()
        .map(|p| {
            let ex = feats[p.sample_id.as_str()];
            PrefExample::new(&reference, &p.sample_id, ex.features.clone(), p.chosen_tokens, p.rejected_tokens)
        })
        .collect::<vtla_core::Result<_>>()?;

    let mut cfg = match a.schedule {
        Schedule::Desk => DpoConfig::desk(),
        Schedule::Original => DpoConfig::original(),
    };
    cfg.seed = cli.seed;
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    let mut model = reference.clone();
    let log = dpo_train(&mut model, &train, &cfg)?;
    let run = RunConfig::new("dpo-train", cli.seed, a)?.value();
    let meta = json!({
        "run": run,
        "config": cfg,
        "pairs": train.len(),
        "log": log,
        "reference_sha256": reference.theta_digest(),
        "parent": parent.get("run").cloned().unwrap_or(Value::Null),
    });
    save_checkpoint(&a.out, &model, &meta)?;
    plot(&a.plot, &[&log.epoch_losses, &log.accuracy])?;
    let acc = log.accuracy.last().copied().unwrap_or(log.initial_accuracy);
    emit(
        cli,
        &format!(
            "dpo on {} pairs: loss {:.4} -> {:.4}, pair accuracy {:.3} -> {:.3}, wrote {}",
            train.len(),
            log.initial_loss,
            log.final_loss,
            log.initial_accuracy,
            acc,
            a.out.display()
        ),
        &json!({
            "out": a.out,
            "pairs": train.len(),
            "initial_loss": log.initial_loss,
            "final_loss": log.final_loss,
            "initial_accuracy": log.initial_accuracy,
            "accuracy": acc,
            "theta_sha256": model.theta_digest(),
        }),
    )
}

/// Metrics per split present, ID first, from predictions aligned with the
/// manifest records.
fn split_metrics(manifest: &Manifest, preds: &[Action], labels: &[Action]) -> Result<Vec<DatasetMetrics>> {
    let mut out = Vec::new();
    for split in [Split::Id, Split::Ood] {
        let idx: Vec<usize> = (0..manifest.len()).filter(|&i| manifest.records[i].split == split).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<Action> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<Action> = idx.iter().map(|&i| labels[i]).collect();
        out.push(dataset_metrics(split, &p, &l, Tolerance::default())?);
    }
    Ok(out)
}

/// A metrics document: the rendered metrics plus the run that made them.
fn metrics_doc(metrics: &Metrics, run: Value) -> Result<Value> {
    let mut v = serde_json::to_value(metrics)?;
    v["run"] = run;
    Ok(v)
}

fn write_metrics(cli: &Cli, metrics: &Metrics, run: Value, out: &Option<std::path::PathBuf>) -> Result<()> {
    let doc = metrics_doc(metrics, run)?;
    if let Some(p) = out {
        write_json(p, &doc)?;
    }
    emit(cli, &report(metrics, Format::Text)?, &doc)
}

fn eval_dataset(cli: &Cli, a: &EvalDatasetArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let data = match a.split {
        SplitArg::All => data,
        SplitArg::Id => data.filter_split(Split::Id),
        SplitArg::Ood => data.filter_split(Split::Ood),
    };
    if data.is_empty() {
        bail!("no samples to evaluate in {}", a.data.display());
    }
    let spec = match (&a.policy, &a.checkpoint) {
        (Some(p), None) => p.clone(),
        (None, Some(c)) => format!("checkpoint:{}", c.display()),
        _ => bail!("give exactly one of --policy or --checkpoint"),
    };
    let splits = if spec == "random" {
        let policy = random_policy(cli.seed);
        let preds: Vec<Action> = (0..data.len())
            .map(|i| detokenize_action(policy.tokens(i as u64, 0)))
            .collect();
        let labels: Vec<Action> = data.records.iter().map(|r| detokenize_action(r.label_tokens)).collect();
        split_metrics(&data, &preds, &labels)?
    } else if let Some(path) = spec.strip_prefix("checkpoint:") {
        let (model, _) = load_model(Path::new(path))?;
        let examples = load_examples(&data, model.arch.feature_order)?;
        evaluate_dataset(&model, &data, &examples, Tolerance::default())?
    } else {
        bail!("unknown dataset policy {spec:?}; expected checkpoint:FILE or random");
    };
    let metrics = Metrics::Dataset {
        rows: vec![DatasetReport {
            method: a.method.clone().unwrap_or(spec),
            splits,
        }],
    };
    let run = RunConfig::new("eval-dataset", cli.seed, a)?.value();
    write_metrics(cli, &metrics, run, &a.out)
}

fn build_policy(spec: &str, seed: u64) -> Result<Box<dyn Policy>> {
    Ok(match spec {
        "oracle" => Box::new(oracle_policy()),
        "random" => Box::new(random_policy(seed)),
        "zero" => Box::new(FnPolicy(|_: &vtla_core::policy::ActContext| Ok(Action::new(0.0, 0.0, 0.0)))),
        s => {
            if let Some(path) = s.strip_prefix("checkpoint:") {
                let (model, _) = load_model(Path::new(path))?;
                Box::new(ModelPolicy::argmax(model, s))
            } else if let Some(addr) = s.strip_prefix("remote:") {
                Box::new(RemotePolicy::new(addr))
            } else {
                bail!("unknown policy {s:?}; expected oracle, random, zero, checkpoint:FILE or remote:ADDR")
            }
        }
    })
}

fn eval_insert(cli: &Cli, a: &EvalInsertArgs) -> Result<()> {
    let grid = match a.grid {
        GridArg::Square => Grid::Square,
        GridArg::Shapes => Grid::Shapes,
        GridArg::Full => Grid::Full,
    };
    let shape = a.shape.as_deref().map(parse_shape).transpose()?;
    let mut cells = grid.cells();
    if let Some(s) = shape {
        cells.retain(|c| c.shape == s);
    }
    if let Some(c) = a.clearance {
        cells.retain(|cell| (cell.clearance_mm - c).abs() < 1e-9);
    }
    if cells.is_empty() {
        bail!("no benchmark cells match the filters");
    }
    let policy = build_policy(&a.policy, cli.seed)?;
    let convention = match a.steps {
        StepsArg::SuccessOnly => StepsConvention::SuccessOnly,
        StepsArg::AllEpisodes => StepsConvention::AllEpisodes,
    };
    let mut table = insertion_benchmark(policy.as_ref(), &cells, a.trials, cli.seed, convention)?;
    table.method = a.method.clone().unwrap_or_else(|| a.policy.clone());
    let errors: usize = table.cells.iter().map(|c| c.errors).sum();
    if errors > 0 {
        log::warn!("{errors} trials failed on policy errors");
    }
    let metrics = Metrics::Insertion { tables: vec![table] };
    let run = RunConfig::new("eval-insert", cli.seed, a)?.value();
    write_metrics(cli, &metrics, run, &a.out)
}

fn serve_policy(cli: &Cli, a: &ServeArgs) -> Result<()> {
    let (model, _) = load_model(&a.checkpoint)?;
    let policy = ModelPolicy::argmax(model, "checkpoint");
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("binding {}", a.listen))?;
    let addr = listener.local_addr()?;
    emit(cli, &format!("listening on {addr}"), &json!({"listening": addr.to_string()}))?;
    let handler = move |q: &Query| policy.tokens(&q.observation, q.shape, 0).map(detokenize_action);
    serve(listener, Arc::new(handler))?;
    Ok(())
}

fn report_cmd(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let mut merged: Option<Metrics> = None;
    for path in &a.inputs {
        let mut v = read_json(path)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("run");
        }
        let m: Metrics = serde_json::from_value(v).with_context(|| format!("{} is not a metrics file", path.display()))?;
        merged = Some(match (merged, m) {
            (None, m) => m,
            (Some(Metrics::Dataset { mut rows }), Metrics::Dataset { rows: more }) => {
                rows.extend(more);
                Metrics::Dataset { rows }
            }
            (Some(Metrics::Insertion { mut tables }), Metrics::Insertion { tables: more }) => {
                tables.extend(more);
                Metrics::Insertion { tables }
            }
            _ => bail!("{} mixes dataset and insertion metrics", path.display()),
        });
    }
    let metrics = merged.ok_or_else(|| anyhow!("no inputs"))?;
    let format = if cli.json {
        Format::Json
    } else {
        match a.format {
            FormatArg::Text => Format::Text,
            FormatArg::Markdown => Format::Markdown,
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    };
    let rendered = report(&metrics, format)?;
    match &a.out {
        Some(p) => std::fs::write(p, &rendered).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(rendered.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}
