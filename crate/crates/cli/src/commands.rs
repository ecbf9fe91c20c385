use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use log::info;
use serde::Serialize;
use serde_json::json;

use glinkx::baselines::{feature_mlp_baseline, label_prop, label_prop_masked, linkx_baseline, LpOutcome};
use glinkx::config::RunConfig;
use glinkx::dataset::{ingest, parse_edges, parse_features, parse_labels, Dataset, IngestSources};
use glinkx::dense::dmat::write_dense;
use glinkx::dense::{DenseMatrix, FeatureMatrix};
use glinkx::exec::{derive_seed, Exec};
use glinkx::graph::{build_graph, LabelVector, SplitMasks};
use glinkx::kge::{import_kge, kge_train};
use glinkx::metrics::binary_auc;
use glinkx::mlap::{
    adjacency_pe, inductive_predict, run_glinkx, Ablation, Component, GlinkxModel, GlinkxRun, NewNodes, PeMode,
    PipelineData, Scope,
};
use glinkx::report::{format_table, summarize, RunRecord};
use glinkx::synth::{generate_planted, generate_theory_instance, random_split, PlantedConfig, Regime, TheoryConfig};
use glinkx::theory::{
    counting_estimator_error, loglog_slope, paired_t_less, parametric_q_sgd, two_phase_sgd, Schedule, TwoPhaseConfig,
};

use crate::error::{io_error, CliError};
use crate::{
    AblateArgs, IngestArgs, InductiveArgs, KgeArgs, LinkxArgs, LpArgs, ModelArgs, ReportArgs, RunArgs, SynthCommand,
    TheoryCommand,
};

/// Writes one JSON object per line to stdout.
pub struct Emitter {
    out: io::StdoutLock<'static>,
}

impl Emitter {
    pub fn new() -> Self {
        Self { out: io::stdout().lock() }
    }

    pub fn emit<T: Serialize>(&mut self, value: &T) -> Result<(), CliError> {
        let line = serde_json::to_string(value).expect("records serialize");
        writeln!(self.out, "{line}").map_err(io_error("<stdout>"))
    }
}

fn load_config(args: &ModelArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::profile(&args.profile)?,
    };
    if !args.seeds.is_empty() {
        cfg.run.seeds = args.seeds.clone();
    }
    if let Some(e) = args.epochs {
        cfg.model.epochs = e;
    }
    if let Some(h) = args.hidden {
        cfg.model.hidden = h;
    }
    if let Some(lr) = args.lr {
        cfg.model.lr = lr;
    }
    if args.symmetrize {
        cfg.model.symmetrize = true;
    }
    if args.auc {
        cfg.run.auc = true;
    }
    if args.paper_grid {
        cfg.check_paper_grid()?;
    }
    if cfg.run.seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    Ok(cfg)
}

/// `(seed, split)` jobs: fixed split `k` pairs with the `k`-th seed (cycling);
/// without fixed splits every seed draws its own random split.
fn jobs(ds: &Dataset, seeds: &[u64], only: Option<usize>) -> Result<Vec<(u64, SplitMasks)>, CliError> {
    let jobs: Vec<(u64, SplitMasks)> = if ds.splits.is_empty() {
        seeds
            .iter()
            .enumerate()
            .map(|(k, &s)| random_split(ds.n(), (0.5, 0.25), s, k).map(|sp| (s, sp)))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Dataset(e.into()))?
    } else {
        ds.splits
            .iter()
            .enumerate()
            .map(|(k, sp)| (seeds[k % seeds.len()], sp.clone()))
            .collect()
    };
    match only {
        None => Ok(jobs),
        Some(k) if k < jobs.len() => Ok(vec![jobs[k].clone()]),
        Some(k) => Err(CliError::Usage(format!("split {k} requested, dataset has {}", jobs.len()))),
    }
}

fn features(ds: &Dataset) -> Option<FeatureMatrix> {
    ds.features.clone().map(FeatureMatrix::auto)
}

struct Positional {
    matrix: Option<FeatureMatrix>,
    table: Option<DenseMatrix>,
    mode: Option<PeMode>,
}

/// Embeddings for the chosen source: an explicit file, then the bundle's
/// stored table, then a fresh embedding trained with `seed`.
fn positional(ds: &Dataset, cfg: &RunConfig, args: &ModelArgs, seed: u64, exec: Exec) -> Result<Positional, CliError> {
    if args.no_pe {
        return Ok(Positional { matrix: None, table: None, mode: None });
    }
    let mode = args.pe.unwrap_or(cfg.run.pe);
    let table = match mode {
        PeMode::Adjacency => {
            return Ok(Positional {
                matrix: Some(adjacency_pe(&ds.graph)),
                table: None,
                mode: Some(mode),
            })
        }
        PeMode::Kge => match (&args.pe_file, &ds.pe) {
            (Some(path), _) => import_kge(path, ds.n())?.to_dense(),
            (None, Some(pe)) => pe.clone(),
            (None, None) => {
                info!("training embeddings for seed {seed}");
                kge_train(&ds.graph, &cfg.kge, derive_seed(seed, 1, 0), exec)?.table.to_dense()
            }
        },
    };
    Ok(Positional {
        matrix: Some(FeatureMatrix::Dense(table.clone())),
        table: Some(table),
        mode: Some(mode),
    })
}

fn method_name(base: &str, pe: Option<PeMode>) -> String {
    match pe {
        Some(PeMode::Adjacency) => format!("{base}-adjacency"),
        Some(PeMode::Kge) => format!("{base}-kge"),
        None => format!("{base}-nope"),
    }
}

fn run_record(method: &str, ds: &Dataset, seed: u64, split: usize, run: &GlinkxRun, auc: bool) -> RunRecord {
    let mut rec = RunRecord::new(method, &ds.name, seed, split, run.test_acc());
    rec.valid_acc = Some(run.valid_acc());
    if auc {
        rec.test_auc = run.stage3.test_auc;
    }
    rec
}

fn emit_epochs(em: &mut Emitter, run: &GlinkxRun, split: usize) -> Result<(), CliError> {
    for (stage, log) in [(2, run.stage2_log()), (3, run.stage3_log())] {
        for e in log {
            em.emit(&json!({
                "kind": "epoch",
                "split": split,
                "seed": run.seed,
                "stage": stage,
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "valid_score": e.valid_score,
            }))?;
        }
    }
    Ok(())
}

fn pipeline_runs(
    args: &ModelArgs,
    ablation: &Ablation,
    base: &str,
    save_model: Option<&Path>,
    log_epochs: bool,
    exec: Exec,
    em: &mut Emitter,
) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let ds = Dataset::load(&args.data)?;
    let x = features(&ds);
    for (seed, split) in jobs(&ds, &cfg.run.seeds, args.split)? {
        let pe = positional(&ds, &cfg, args, seed, exec)?;
        let data = PipelineData {
            graph: &ds.graph,
            features: x.as_ref(),
            pe: pe.matrix.as_ref(),
            labels: &ds.labels,
            split: &split,
        };
        let run = run_glinkx(data, &cfg.model, seed, ablation, exec)?;
        info!("split {} seed {seed}: test accuracy {:.4}", split.index, run.test_acc());
        if log_epochs {
            emit_epochs(em, &run, split.index)?;
        }
        let method = method_name(base, pe.mode);
        em.emit(&run_record(&method, &ds, seed, split.index, &run, cfg.run.auc))?;
        if let Some(dir) = save_model {
            let model = GlinkxModel::from_run(&run, &cfg.model, pe.mode, pe.table);
            let target = dir.join(format!("split{}-seed{seed}", split.index));
            model.save(&target)?;
            em.emit(&json!({"kind": "model", "path": target, "split": split.index, "seed": seed}))?;
        }
    }
    Ok(())
}

pub fn run(args: &RunArgs, exec: Exec, em: &mut Emitter) -> Result<(), CliError> {
    pipeline_runs(
        &args.model,
        &Ablation::none(),
        "glinkx",
        args.save_model.as_deref(),
        args.log_epochs,
        exec,
        em,
    )
}

pub fn ablate(args: &AblateArgs, exec: Exec, em: &mut Emitter) -> Result<(), CliError> {
    if args.drop.is_empty() {
        return Err(CliError::Usage("--drop needs at least one component".into()));
    }
    let ablation = Ablation {
        drop: args.drop.clone(),
        scope: Some(args.scope),
    };
    let dropped: Vec<&str> = args
        .drop
        .iter()
        .map(|c| match c {
            Component::Ego => "ego",
            Component::Propagation => "prop",
            Component::Pe => "pe",
        })
        .collect();
    let scope = match args.scope {
        Scope::All => "all",
        Scope::Stage3 => "stage3",
    };
    let base = format!("glinkx-no-{}-{scope}", dropped.join("-"));
    pipeline_runs(&args.model, &ablation, &base, None, false, exec, em)
}

pub fn ingest_cmd(args: &IngestArgs, em: &mut Emitter) -> Result<(), CliError> {
    let src = IngestSources {
        name: args.name.clone(),
        edges: args.edges.clone(),
        labels: args.labels.clone(),
        features: args.features.clone(),
        splits: args.split.clone(),
        classes: args.classes,
        undirected: args.undirected,
    };
    let ds = ingest(&src)?;
    let manifest = ds.save(&args.out)?;
    em.emit(&manifest)
}

pub fn kge(args: &KgeArgs, exec: Exec, em: &mut Emitter) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::profile(&args.profile)?,
    }
    .kge;
    if let Some(d) = args.dim {
        cfg.dim = d;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(n) = args.negatives {
        cfg.negatives = n;
    }
    if let Some(loss) = args.loss {
        cfg.loss = loss;
    }
    let mut ds = Dataset::load(&args.data)?;
    let own;
    let graph = match &args.edges {
        Some(path) => {
            let edges = parse_edges(&read_text(path)?, &path.display().to_string(), ds.n())?;
            own = build_graph(&edges, ds.n(), !ds.directed, true).map_err(|e| CliError::Dataset(e.into()))?;
            &own
        }
        None => &ds.graph,
    };
    let run = kge_train(graph, &cfg, args.seed, exec)?;
    for (epoch, loss) in run.epoch_losses.iter().enumerate() {
        em.emit(&json!({"kind": "kge_epoch", "epoch": epoch, "loss": loss}))?;
    }
    let table = run.table.to_dense();
    if let Some(path) = &args.out {
        write_dense(path, &table)?;
    }
    if args.store {
        ds.pe = Some(table.clone());
        ds.save(&args.data)?;
    }
    em.emit(&json!({
        "kind": "kge",
        "rows": table.rows(),
        "dim": table.cols(),
        "loss": format!("{:?}", cfg.loss).to_lowercase(),
        "final_loss": run.epoch_losses.last(),
        "out": args.out,
        "stored": args.store,
    }))
}

fn lp_record(name: &str, ds: &Dataset, seed: u64, split: &SplitMasks, out: &LpOutcome, auc: bool) -> RunRecord {
    let mut rec = RunRecord::new(name, &ds.name, seed, split.index, out.test_acc);
    rec.valid_acc = Some(out.valid_acc);
    if auc && ds.classes() == 2 {
        rec.test_auc = test_auc(&out.scores, &ds.labels, split);
    }
    rec
}

fn test_auc(scores: &DenseMatrix, labels: &LabelVector, split: &SplitMasks) -> Option<f64> {
    let (s, p): (Vec<f64>, Vec<bool>) = split
        .test()
        .into_iter()
        .filter_map(|i| labels.get(i).map(|l| (scores.get(i, 1), l == 1)))
        .unzip();
    binary_auc(&s, &p)
}

pub fn lp(args: &LpArgs, exec: Exec, em: &mut Emitter) -> Result<(), CliError> {
    let ds = Dataset::load(&args.data)?;
    let seeds = if args.seeds.is_empty() { (0..10).collect() } else { args.seeds.clone() };
    let jobs = jobs(&ds, &seeds, args.split)?;
    let name = if args.masked { "lp-2hop-exclusive".to_string() } else { format!("lp-{}hop", args.hops) };
    // alpha is chosen by mean validation accuracy when several are given
    let mut best: Option<(f64, f64, Vec<LpOutcome>)> = None;
    for &alpha in &args.alpha {
        let cfg = glinkx::baselines::LpConfig {
            alpha,
            hops: args.hops,
            iterations: args.iterations,
            clamp: args.clamp,
        };
        let outs = jobs
            .iter()
            .map(|(_, split)| {
                if args.masked {
                    label_prop_masked(&ds.graph, &ds.labels, split, &cfg, exec)
                } else {
                    label_prop(&ds.graph, &ds.labels, split, &cfg, exec)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let valid = outs.iter().map(|o| o.valid_acc).sum::<f64>() / outs.len() as f64;
        if args.alpha.len() > 1 {
            em.emit(&json!({"kind": "alpha", "method": name, "alpha": alpha, "mean_valid_acc": valid}))?;
        }
        if best.as_ref().is_none_or(|b| valid > b.1) {
            best = Some((alpha, valid, outs));
        }
    }
    let (alpha, _, outs) = best.ok_or_else(|| CliError::Usage("--alpha needs at least one value".into()))?;
    for ((seed, split), out) in jobs.iter().zip(&outs) {
        let fallback = out.fallback.iter().filter(|&&f| f).count();
        if fallback > 0 {
            info!("{fallback} isolated nodes predicted as the majority class");
        }
        let mut rec = serde_json::to_value(lp_record(&name, &ds, *seed, split, out, args.auc))
            .expect("records serialize");
        rec["alpha"] = json!(alpha);
        rec["fallback_nodes"] = json!(fallback);
        em.emit(&rec)?;
    }
    Ok(())
}

pub fn linkx(args: &LinkxArgs, em: &mut Emitter) -> Result<(), CliError> {
    let cfg = load_config(&args.model)?;
    let ds = Dataset::load(&args.model.data)?;
    let x = features(&ds);
    let name = if args.features_only { "mlp" } else { "linkx" };
    for (seed, split) in jobs(&ds, &cfg.run.seeds, args.model.split)? {
        let result = if args.features_only {
            let x = x
                .as_ref()
                .ok_or_else(|| CliError::Usage("the feature-only baseline needs node features".into()))?;
            feature_mlp_baseline(x, &ds.labels, &split, &cfg.model, seed)?
        } else {
            linkx_baseline(&ds.graph, x.as_ref(), &ds.labels, &split, &cfg.model, seed)?
        };
        let mut rec = RunRecord::new(name, &ds.name, seed, split.index, result.test_acc);
        rec.valid_acc = Some(result.valid_acc);
        if cfg.run.auc {
            rec.test_auc = result.test_auc;
        }
        em.emit(&rec)?;
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(io_error(path))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_error(path))
}

pub fn inductive(args: &InductiveArgs, em: &mut Emitter) -> Result<(), CliError> {
    let model = GlinkxModel::load(&args.model)?;
    let total = model.known_nodes + args.count;
    let edges = parse_edges(&read_text(&args.edges)?, &args.edges.display().to_string(), total)?;
    let features = match &args.features {
        Some(p) => Some(parse_features(&read_bytes(p)?, &p.display().to_string(), args.count)?),
        None => None,
    };
    let labels = match &args.labels {
        Some(p) => Some(parse_labels(&read_text(p)?, &p.display().to_string(), Some(model.classes))?),
        None => None,
    };
    if let Some(l) = &labels {
        if l.len() != args.count {
            return Err(CliError::Usage(format!("{} labels for {} new nodes", l.len(), args.count)));
        }
    }
    let new = NewNodes {
        count: args.count,
        features,
        edges,
    };
    let pred = inductive_predict(&model, &new)?;
    let mut hits = 0;
    let mut known = 0;
    for r in 0..args.count {
        let truth = labels.as_ref().and_then(|l| l.get(r));
        if let Some(t) = truth {
            known += 1;
            hits += usize::from(t == pred.predictions[r]);
        }
        em.emit(&json!({
            "kind": "prediction",
            "node": model.known_nodes + r,
            "class": pred.predictions[r],
            "probs": pred.probs.row(r),
            "isolated": pred.isolated[r],
            "label": truth,
        }))?;
    }
    if known > 0 {
        em.emit(&json!({"kind": "inductive", "nodes": args.count, "labelled": known, "accuracy": hits as f64 / known as f64}))?;
    }
    Ok(())
}

pub fn synth(cmd: &SynthCommand, em: &mut Emitter) -> Result<(), CliError> {
    let ds = match cmd {
        SynthCommand::Planted {
            nodes,
            classes,
            degree,
            regime,
            strength,
            feature_dim,
            signal,
            splits,
            seed,
            out: _,
        } => {
            let regime = match regime {
                Regime::Homophilous { .. } => Regime::Homophilous { strength: *strength },
                Regime::Mixed { .. } => Regime::Mixed { strength: *strength },
                Regime::Heterophilous => Regime::Heterophilous,
            };
            let cfg = PlantedConfig {
                nodes: *nodes,
                classes: *classes,
                degree: *degree,
                regime,
                feature_dim: *feature_dim,
                feature_signal: *signal,
                seed: *seed,
                ..Default::default()
            };
            let g = generate_planted(&cfg)?;
            let n = g.graph.n();
            let splits = (0..*splits)
                .map(|k| random_split(n, cfg.split_fractions, *seed, k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Dataset(e.into()))?;
            Dataset {
                name: format!("planted-{}", regime_name(&cfg.regime)),
                graph: g.graph,
                features: Some(g.features),
                pe: None,
                labels: g.labels,
                splits,
                directed: false,
            }
        }
        SynthCommand::Theory {
            nodes,
            classes,
            degree,
            seed,
            splits,
            out: _,
        } => {
            let inst = generate_theory_instance(&TheoryConfig {
                nodes: *nodes,
                classes: *classes,
                degree: *degree,
                seed: *seed,
                ..Default::default()
            })?;
            let n = inst.n();
            let labels = LabelVector::from_known(&inst.labels, inst.classes).map_err(|e| CliError::Dataset(e.into()))?;
            let splits = (0..*splits)
                .map(|k| random_split(n, (0.5, 0.25), *seed, k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Dataset(e.into()))?;
            Dataset {
                name: "theory".into(),
                graph: inst.graph,
                features: Some(inst.xi),
                pe: None,
                labels,
                splits,
                directed: false,
            }
        }
    };
    let out = match cmd {
        SynthCommand::Planted { out, .. } | SynthCommand::Theory { out, .. } => out,
    };
    em.emit(&ds.save(out)?)
}

fn regime_name(r: &Regime) -> &'static str {
    match r {
        Regime::Homophilous { .. } => "homophilous",
        Regime::Heterophilous => "heterophilous",
        Regime::Mixed { .. } => "mixed",
    }
}

fn theory_instance(nodes: usize, classes: usize, degree: usize, seed: u64) -> Result<glinkx::synth::TheoryInstance, CliError> {
    Ok(generate_theory_instance(&TheoryConfig {
        nodes,
        classes,
        degree,
        seed,
        ..Default::default()
    })?)
}

pub fn theory(cmd: &TheoryCommand, exec: Exec, em: &mut Emitter) -> Result<(), CliError> {
    match cmd {
        TheoryCommand::Counting {
            nodes,
            classes,
            degree,
            ks,
            trials,
            nodes_per_trial,
            seed,
        } => {
            let inst = theory_instance(*nodes, *classes, *degree, *seed)?;
            let rows = counting_estimator_error(&inst, ks, *trials, *nodes_per_trial, *seed, exec)?;
            for r in &rows {
                em.emit(&json!({"kind": "counting", "k": r.k, "mean_inf_error": r.mean_inf_error, "mean_abs_error": r.mean_abs_error}))?;
            }
            let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.mean_inf_error).collect();
            if rows.len() >= 2 {
                em.emit(&json!({"kind": "slope", "loglog_slope": loglog_slope(&xs, &ys)}))?;
            }
        }
        TheoryCommand::Parametric {
            nodes,
            classes,
            degree,
            seeds,
            lr,
            decay,
        } => {
            let mut wins = 0;
            for s in 0..*seeds {
                let inst = theory_instance(*nodes, *classes, *degree, s)?;
                let fit = parametric_q_sgd(&inst, inst.n(), Schedule { lr0: *lr, decay: *decay }, s)?;
                wins += usize::from(fit.parametric_inf_error < fit.counting_inf_error);
                em.emit(&json!({
                    "kind": "parametric",
                    "seed": s,
                    "parametric_inf_error": fit.parametric_inf_error,
                    "counting_inf_error": fit.counting_inf_error,
                    "parametric_abs_error": fit.parametric_abs_error,
                    "counting_abs_error": fit.counting_abs_error,
                    "restarts": fit.restarts,
                }))?;
            }
            em.emit(&json!({"kind": "parametric_summary", "seeds": seeds, "parametric_wins": wins}))?;
        }
        TheoryCommand::TwoPhase {
            nodes,
            classes,
            degree,
            seeds,
            lr,
            decay,
            phase1_steps,
            phase1_lr,
            lambda,
        } => {
            let mut two = Vec::new();
            let mut naive = Vec::new();
            for s in 0..*seeds {
                let inst = theory_instance(*nodes, *classes, *degree, s)?;
                let theta = parametric_q_sgd(&inst, inst.n(), Schedule { lr0: 0.5, decay: 500.0 }, s)?.theta;
                let cfg = TwoPhaseConfig {
                    phase1_steps: *phase1_steps,
                    phase1_lr: *phase1_lr,
                    steps: inst.n(),
                    schedule: Schedule { lr0: *lr, decay: *decay },
                    lambda: *lambda,
                };
                let r = two_phase_sgd(&inst, &theta, &cfg, derive_seed(s, 8, 0))?;
                two.push(r.two_phase_gap);
                naive.push(r.naive_gap);
                em.emit(&json!({
                    "kind": "two_phase",
                    "seed": s,
                    "lambda": r.lambda,
                    "naive_gap": r.naive_gap,
                    "phase1_gap": r.phase1_gap,
                    "two_phase_gap": r.two_phase_gap,
                }))?;
            }
            let t = paired_t_less(&two, &naive)?;
            em.emit(&json!({"kind": "paired_t", "mean_diff": t.mean_diff, "t": t.t, "p_value": t.p_value}))?;
        }
    }
    Ok(())
}

pub fn report(args: &ReportArgs, em: &mut Emitter) -> Result<(), CliError> {
    let mut text = String::new();
    if args.logs.is_empty() {
        io::stdin().read_to_string(&mut text).map_err(io_error("<stdin>"))?;
    }
    for path in &args.logs {
        text.push_str(&read_text(path)?);
        if !text.ends_with('\n') {
            text.push('\n');
        }
    }
    let summaries = summarize(&text)?;
    if args.table {
        print!("{}", format_table(&summaries));
        return Ok(());
    }
    for s in &summaries {
        em.emit(s)?;
    }
    Ok(())
}
