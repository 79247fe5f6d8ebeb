use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use parasent_core::checkpoint::{load_checkpoint, save_checkpoint, CkptMeta};
use parasent_core::corpus;
use parasent_core::encoders::{
    init_params, Encoder, EncoderConfig, EncoderKind, W_W,
};
use parasent_core::eval::{
    aggregate, pearson_r, spearman_rho, DatasetScore, EvalDataset, EvalReport, SelectionMode,
};
use parasent_core::gates;
use parasent_core::gradcheck::{certify, FdOptions, HarnessDims, LossKind};
use parasent_core::train::supervised::{InitMode, ScoredPair};
use parasent_core::train::transfer::TrainConfig;
use parasent_core::train::{train_supervised as run_supervised, train_transfer as run_transfer};
use parasent_core::vocab::{encode, EmbeddingTable};
use parasent_core::{Error, Result};

use crate::config::{echo_config, resolve, resolve_or, FileConfig};
use crate::{
    AnalyzeGatesArgs, EmbedArgs, EncoderArgs, EvaluateArgs, GradcheckArgs, TrainArgs,
    TrainSupervisedArgs, TrainTransferArgs,
};

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required --{flag}")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

fn load_table(path: &Path, seed: u64) -> Result<EmbeddingTable<f32>> {
    let (table, warnings) = EmbeddingTable::load(open(path)?, seed)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(table)
}

/// Resolve the encoder configuration from flags and file, given the word
/// vector dimension.
fn resolve_encoder(
    args: &EncoderArgs,
    file: &FileConfig,
    dim: usize,
) -> Result<EncoderConfig> {
    let kind: EncoderKind = resolve_or(
        args.encoder.clone(),
        file,
        "encoder",
        "avg".to_string(),
    )?
    .parse()?;
    let mut config = EncoderConfig::new(kind, dim);
    config.hidden = resolve_or(args.hidden, file, "hidden", dim)?;
    config.bidirectional = resolve_or(args.bidirectional, file, "bidirectional", false)?;
    config.combine = resolve_or(args.combine.clone(), file, "combine", "sum".to_string())?
        .parse()?;
    config.validate()?;
    Ok(config)
}

fn resolve_train(
    args: &TrainArgs,
    file: &FileConfig,
    default_epochs: usize,
) -> Result<TrainConfig> {
    let mut tcfg = TrainConfig {
        delta: resolve_or(args.delta, file, "delta", 0.4)?,
        lambda_c: resolve_or(args.lambda_c, file, "lambda_c", 0.0)?,
        lambda_w: resolve_or(args.lambda_w, file, "lambda_w", 0.0)?,
        dropout_rate: resolve_or(args.dropout, file, "dropout", 0.0)?,
        word_dropout_rate: resolve_or(args.word_dropout, file, "word_dropout", 0.0)?,
        scramble_rate: resolve_or(args.scramble, file, "scramble", 0.0)?,
        epochs: resolve_or(args.epochs, file, "epochs", default_epochs)?,
        batch_size: resolve_or(args.batch_size, file, "batch_size", 100)?,
        seed: resolve_or(args.seed, file, "seed", 1)?,
        add_sos: resolve_or(args.sos, file, "sos", false)?,
        add_eos: resolve_or(args.eos, file, "eos", false)?,
        ..TrainConfig::default()
    };
    tcfg.adam.lr = resolve_or(args.lr, file, "lr", tcfg.adam.lr)?;
    for warning in tcfg.validate()? {
        eprintln!("warning: {warning}");
    }
    Ok(tcfg)
}

fn encoder_echo(config: &EncoderConfig) -> Vec<(&'static str, String)> {
    vec![
        ("encoder", config.kind.name().to_string()),
        ("hidden", config.hidden.to_string()),
        ("bidirectional", config.bidirectional.to_string()),
        ("combine", config.combine.name().to_string()),
    ]
}

fn train_echo(tcfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("delta", tcfg.delta.to_string()),
        ("lambda_c", tcfg.lambda_c.to_string()),
        ("lambda_w", tcfg.lambda_w.to_string()),
        ("dropout", tcfg.dropout_rate.to_string()),
        ("word_dropout", tcfg.word_dropout_rate.to_string()),
        ("scramble", tcfg.scramble_rate.to_string()),
        ("epochs", tcfg.epochs.to_string()),
        ("batch_size", tcfg.batch_size.to_string()),
        ("lr", tcfg.adam.lr.to_string()),
        ("seed", tcfg.seed.to_string()),
        ("sos", tcfg.add_sos.to_string()),
        ("eos", tcfg.add_eos.to_string()),
    ]
}

fn save_to(path: &Path, params: &parasent_core::autodiff::ParameterSet<f32>, meta: &CkptMeta) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    save_checkpoint(BufWriter::new(file), params, meta)
}

const TRAIN_TRANSFER_KEYS: &[&str] = &[
    "embeddings", "corpus", "save", "encoder", "hidden", "bidirectional", "combine", "delta",
    "lambda_c", "lambda_w", "dropout", "word_dropout", "scramble", "epochs", "batch_size", "lr",
    "seed", "sos", "eos",
];

pub fn train_transfer(args: TrainTransferArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref(), TRAIN_TRANSFER_KEYS)?;
    let embeddings = require(resolve(args.embeddings, &file, "embeddings")?, "embeddings")?;
    let corpus_path = require(resolve(args.corpus, &file, "corpus")?, "corpus")?;
    let save = require(resolve(args.save, &file, "save")?, "save")?;

    let seed_peek: u64 = resolve_or(args.train.seed, &file, "seed", 1)?;
    let table = load_table(&embeddings, seed_peek)?;
    let config = resolve_encoder(&args.encoder, &file, table.dim)?;
    let default_epochs = if config.kind == EncoderKind::Avg { 7 } else { 3 };
    let tcfg = resolve_train(&args.train, &file, default_epochs)?;

    let mut pairs = Vec::new();
    for (s1, s2) in corpus::load_pair_corpus(open(&corpus_path)?)? {
        pairs.push((
            encode(&s1, false, false, &table)?,
            encode(&s2, false, false, &table)?,
        ));
    }

    let mut echo = vec![
        ("embeddings", embeddings.display().to_string()),
        ("corpus", corpus_path.display().to_string()),
        ("save", save.display().to_string()),
    ];
    echo.extend(encoder_echo(&config));
    echo.extend(train_echo(&tcfg));
    echo_config("train-transfer", &echo);

    let params = init_params(&config, &table, tcfg.seed)?;
    let out = run_transfer(&pairs, &table, &config, &tcfg, params)?;
    for (i, loss) in out.epoch_losses.iter().enumerate() {
        println!("epoch {} mean_loss {loss}", i + 1);
    }

    let meta = CkptMeta {
        dim: table.dim,
        hidden: config.hidden,
        kind: config.kind,
        bidirectional: config.bidirectional,
        combine: config.combine,
        add_sos: tcfg.add_sos,
        add_eos: tcfg.add_eos,
        head_hidden: 0,
        head_k: 0,
    };
    save_to(&save, &out.params, &meta)?;
    println!("saved {}", save.display());
    Ok(())
}

const TRAIN_SUPERVISED_KEYS: &[&str] = &[
    "embeddings", "train", "dev", "save", "init_checkpoint", "k", "head_hidden", "score_map",
    "encoder", "hidden", "bidirectional", "combine", "lambda_c", "lambda_w", "dropout",
    "word_dropout", "scramble", "epochs", "batch_size", "lr", "seed", "sos", "eos",
];

pub fn train_supervised(args: TrainSupervisedArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref(), TRAIN_SUPERVISED_KEYS)?;
    let embeddings = require(resolve(args.embeddings, &file, "embeddings")?, "embeddings")?;
    let train_path = require(resolve(args.train, &file, "train")?, "train")?;
    let dev_path = resolve(args.dev, &file, "dev")?;
    let save = require(resolve(args.save, &file, "save")?, "save")?;
    let init_checkpoint = resolve(args.init_checkpoint, &file, "init_checkpoint")?;
    let k: usize = resolve_or(args.k, &file, "k", 5)?;
    let head_hidden: usize = resolve_or(args.head_hidden, &file, "head_hidden", 50)?;
    let score_map: corpus::ScoreMapping =
        resolve_or(args.score_map, &file, "score_map", "direct".to_string())?.parse()?;

    let seed_peek: u64 = resolve_or(args.train_args.seed, &file, "seed", 1)?;
    let table = load_table(&embeddings, seed_peek)?;

    // a warm-start checkpoint fixes the encoder configuration and the
    // boundary-tag policy
    let warm = match &init_checkpoint {
        Some(path) => Some(load_checkpoint::<f32>(open(path)?)?),
        None => None,
    };
    let config = match &warm {
        Some((_, meta)) => {
            if meta.dim != table.dim {
                return Err(Error::Config(format!(
                    "checkpoint dimension {} does not match embeddings dimension {}",
                    meta.dim, table.dim
                )));
            }
            meta.encoder_config()
        }
        None => resolve_encoder(&args.encoder, &file, table.dim)?,
    };
    let default_epochs = if config.kind == EncoderKind::Avg { 7 } else { 3 };
    let mut tcfg = resolve_train(&args.train_args, &file, default_epochs)?;
    if let Some((_, meta)) = &warm {
        tcfg.add_sos = meta.add_sos;
        tcfg.add_eos = meta.add_eos;
    }

    let load_scored = |path: &Path| -> Result<Vec<ScoredPair>> {
        corpus::load_scored_corpus(open(path)?, score_map, k)?
            .into_iter()
            .map(|(s1, s2, gold)| {
                Ok(ScoredPair {
                    s1: encode(&s1, false, false, &table)?,
                    s2: encode(&s2, false, false, &table)?,
                    gold,
                })
            })
            .collect()
    };
    let trainset = load_scored(&train_path)?;
    let devset = match &dev_path {
        Some(p) => load_scored(p)?,
        None => Vec::new(),
    };

    let mut echo = vec![
        ("embeddings", embeddings.display().to_string()),
        ("train", train_path.display().to_string()),
        (
            "dev",
            dev_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "(none)".to_string()),
        ),
        ("save", save.display().to_string()),
        (
            "init_checkpoint",
            init_checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "(fresh)".to_string()),
        ),
        ("k", k.to_string()),
        ("head_hidden", head_hidden.to_string()),
    ];
    echo.extend(encoder_echo(&config));
    echo.extend(train_echo(&tcfg));
    echo_config("train-supervised", &echo);

    let init = match &warm {
        Some((params, _)) => InitMode::Universal(params),
        None => InitMode::Fresh,
    };
    let out = run_supervised(
        &trainset,
        &devset,
        &table,
        &config,
        head_hidden,
        k,
        &tcfg,
        init,
    )?;
    for (i, loss) in out.train_losses.iter().enumerate() {
        match out.dev_pearson.get(i) {
            Some(r) => println!("epoch {} train_loss {loss} dev_pearson {r}", i + 1),
            None => println!("epoch {} train_loss {loss}", i + 1),
        }
    }
    if let Some(best) = out.best_epoch {
        println!("best_epoch {}", best + 1);
    }

    let meta = CkptMeta {
        dim: table.dim,
        hidden: config.hidden,
        kind: config.kind,
        bidirectional: config.bidirectional,
        combine: config.combine,
        add_sos: tcfg.add_sos,
        add_eos: tcfg.add_eos,
        head_hidden,
        head_k: k,
    };
    save_to(&save, &out.params, &meta)?;
    println!("saved {}", save.display());
    Ok(())
}

const EVALUATE_KEYS: &[&str] = &[
    "embeddings", "checkpoint", "manifest", "scale", "out", "label", "seed", "mode", "held_out",
];

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref(), EVALUATE_KEYS)?;
    if args.aggregate.unwrap_or(false) {
        let mode: SelectionMode =
            require(resolve(args.mode, &file, "mode")?, "mode")?.parse()?;
        let held_out = resolve(args.held_out, &file, "held_out")?;
        if args.reports.is_empty() {
            return Err(Error::Config(
                "aggregate selection needs at least one report file".to_string(),
            ));
        }
        let mut reports = Vec::new();
        for path in &args.reports {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
            reports.push(EvalReport::from_tsv(&text)?);
        }
        let selection = aggregate(&reports, mode, held_out.as_deref())?;
        println!(
            "winner {} criterion {:.6} mode {}",
            selection.winner,
            selection.criterion,
            match mode {
                SelectionMode::Test => "test",
                SelectionMode::Oracle => "oracle",
            }
        );
        let winner_report = EvalReport {
            label: selection.winner.clone(),
            scores: selection.winner_scores.clone(),
        };
        print!("{}", winner_report.render_text());
        return Ok(());
    }

    let embeddings = require(resolve(args.embeddings, &file, "embeddings")?, "embeddings")?;
    let checkpoint = require(resolve(args.checkpoint, &file, "checkpoint")?, "checkpoint")?;
    let manifest = require(resolve(args.manifest, &file, "manifest")?, "manifest")?;
    let scale = resolve_or(args.scale, &file, "scale", false)?;
    let out_path = resolve(args.out, &file, "out")?;
    let seed: u64 = resolve_or(args.seed, &file, "seed", 1)?;
    let label = resolve_or(
        args.label,
        &file,
        "label",
        checkpoint.display().to_string(),
    )?;

    let table = load_table(&embeddings, seed)?;
    let (params, meta) = load_checkpoint::<f32>(open(&checkpoint)?)?;
    let config = meta.encoder_config();
    let encoder = Encoder::from_set(config, &params)?;
    let w_w = params.get(W_W)?;

    let mut echo = vec![
        ("embeddings", embeddings.display().to_string()),
        ("checkpoint", checkpoint.display().to_string()),
        ("manifest", manifest.display().to_string()),
        ("scale", scale.to_string()),
        ("label", label.clone()),
        ("seed", seed.to_string()),
    ];
    echo.extend(encoder_echo(&config));
    echo_config("evaluate", &echo);

    let mut report = EvalReport::new(label);
    for (group, files) in corpus::load_manifest(&manifest)? {
        for path in files {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| path.display().to_string());
            let mut pairs = Vec::new();
            let mut golds = Vec::new();
            for (s1, s2, gold) in corpus::load_eval_pairs(open(&path)?)? {
                pairs.push((
                    encode(&s1, meta.add_sos, meta.add_eos, &table)?,
                    encode(&s2, meta.add_sos, meta.add_eos, &table)?,
                    gold,
                ));
                golds.push(gold);
            }
            let dataset = EvalDataset {
                name: name.clone(),
                pairs,
            };
            let preds = parasent_core::eval::score_pairs(&dataset, &encoder, w_w, scale)?;
            report.scores.push(DatasetScore {
                group: group.clone(),
                dataset: name,
                pearson: pearson_r(&preds, &golds)?,
                spearman: spearman_rho(&preds, &golds)?,
            });
        }
    }

    print!("{}", report.render_text());
    println!("mean_pearson_all {:.6}", report.mean_pearson(None)?);
    if let Some(path) = out_path {
        std::fs::write(&path, report.to_tsv())
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

const EMBED_KEYS: &[&str] = &[
    "embeddings", "checkpoint", "input", "seed", "encoder", "hidden", "bidirectional", "combine",
    "sos", "eos",
];

pub fn embed(args: EmbedArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref(), EMBED_KEYS)?;
    let embeddings = require(resolve(args.embeddings, &file, "embeddings")?, "embeddings")?;
    let input = require(resolve(args.input, &file, "input")?, "input")?;
    let checkpoint = resolve(args.checkpoint, &file, "checkpoint")?;
    let seed: u64 = resolve_or(args.seed, &file, "seed", 1)?;

    let table = load_table(&embeddings, seed)?;
    let (params, config, add_sos, add_eos) = match &checkpoint {
        Some(path) => {
            let (params, meta) = load_checkpoint::<f32>(open(path)?)?;
            if meta.dim != table.dim {
                return Err(Error::Config(format!(
                    "checkpoint dimension {} does not match embeddings dimension {}",
                    meta.dim, table.dim
                )));
            }
            (params, meta.encoder_config(), meta.add_sos, meta.add_eos)
        }
        None => {
            let config = resolve_encoder(&args.encoder, &file, table.dim)?;
            let add_sos = resolve_or(args.sos, &file, "sos", false)?;
            let add_eos = resolve_or(args.eos, &file, "eos", false)?;
            (init_params(&config, &table, seed)?, config, add_sos, add_eos)
        }
    };
    let encoder = Encoder::from_set(config, &params)?;
    let w_w = params.get(W_W)?;

    let mut echo = vec![
        ("embeddings", embeddings.display().to_string()),
        ("input", input.display().to_string()),
        (
            "checkpoint",
            checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "(fresh)".to_string()),
        ),
        ("seed", seed.to_string()),
        ("sos", add_sos.to_string()),
        ("eos", add_eos.to_string()),
    ];
    echo.extend(encoder_echo(&config));
    echo_config("embed", &echo);

    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for line in open(&input)?.lines() {
        let line = line?;
        let tokens = corpus::tokenize(&line);
        let seq = encode(&tokens, add_sos, add_eos, &table)?;
        let emb = encoder.encode(&seq, w_w)?;
        let fields: Vec<String> = emb.as_slice().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", fields.join(" "))?;
    }
    Ok(())
}

const GRADCHECK_KEYS: &[&str] = &[
    "encoder", "loss", "bidirectional", "dim", "instances", "seed", "step", "max_coords", "tol",
];

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref(), GRADCHECK_KEYS)?;
    let kind: EncoderKind =
        resolve_or(args.encoder, &file, "encoder", "gran1".to_string())?.parse()?;
    let loss: LossKind = resolve_or(args.loss, &file, "loss", "margin".to_string())?.parse()?;
    let bidirectional = resolve_or(args.bidirectional, &file, "bidirectional", false)?;
    let dim: usize = resolve_or(args.dim, &file, "dim", 6)?;
    let instances: usize = resolve_or(args.instances, &file, "instances", 20)?;
    let seed: u64 = resolve_or(args.seed, &file, "seed", 1)?;
    let tol: f64 = resolve_or(args.tol, &file, "tol", 1e-4)?;
    let opts = FdOptions {
        step: resolve_or(args.step, &file, "step", 1e-5)?,
        max_coords: resolve_or(args.max_coords, &file, "max_coords", 200)?,
        ..FdOptions::default()
    };

    echo_config(
        "gradcheck",
        &[
            ("encoder", kind.name().to_string()),
            ("loss", format!("{loss:?}").to_lowercase()),
            ("bidirectional", bidirectional.to_string()),
            ("dim", dim.to_string()),
            ("instances", instances.to_string()),
            ("seed", seed.to_string()),
            ("step", opts.step.to_string()),
            ("max_coords", opts.max_coords.to_string()),
            ("tol", tol.to_string()),
        ],
    );

    let dims = HarnessDims {
        dim,
        ..HarnessDims::default()
    };
    let report = certify(kind, bidirectional, loss, &dims, instances, seed, &opts)?;
    print!("{}", report.render_table());
    if report.passes(tol) {
        println!("gradcheck PASS (max rel err {:.3e} < {tol:.0e})", report.max_rel_err);
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max rel err {:.3e} >= {tol:.0e} (small abs err {:.3e})",
            report.max_rel_err, report.max_small_abs_err
        )))
    }
}

const ANALYZE_GATES_KEYS: &[&str] = &[
    "embeddings", "checkpoint", "tagged", "group_by", "cap", "top", "bottom", "out", "seed",
];

pub fn analyze_gates(args: AnalyzeGatesArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref(), ANALYZE_GATES_KEYS)?;
    let embeddings = require(resolve(args.embeddings, &file, "embeddings")?, "embeddings")?;
    let checkpoint = require(resolve(args.checkpoint, &file, "checkpoint")?, "checkpoint")?;
    let tagged = require(resolve(args.tagged, &file, "tagged")?, "tagged")?;
    let group_by: gates::GroupBy =
        resolve_or(args.group_by, &file, "group_by", "pos".to_string())?.parse()?;
    let cap: usize = resolve_or(args.cap, &file, "cap", 15)?;
    let top = resolve(args.top, &file, "top")?;
    let bottom = resolve(args.bottom, &file, "bottom")?;
    let out_path = resolve(args.out, &file, "out")?;
    let seed: u64 = resolve_or(args.seed, &file, "seed", 1)?;

    let table = load_table(&embeddings, seed)?;
    let (params, meta) = load_checkpoint::<f32>(open(&checkpoint)?)?;
    if meta.kind != EncoderKind::Gran1 {
        return Err(Error::Config(format!(
            "gate analysis expects a gran1 checkpoint, got {}",
            meta.kind.name()
        )));
    }
    let encoder = Encoder::from_set(meta.encoder_config(), &params)?;
    let w_w = params.get(W_W)?;

    echo_config(
        "analyze-gates",
        &[
            ("embeddings", embeddings.display().to_string()),
            ("checkpoint", checkpoint.display().to_string()),
            ("tagged", tagged.display().to_string()),
            ("group_by", format!("{group_by:?}").to_lowercase()),
            ("cap", cap.to_string()),
            ("seed", seed.to_string()),
        ],
    );

    let (sentences, skipped) = gates::load_tagged_corpus(open(&tagged)?, cap)?;
    if skipped > 0 {
        eprintln!("skipped {skipped} sentences over the {cap}-token cap");
    }
    let norm_table = gates::aggregate_norms(
        &sentences,
        &encoder,
        &table,
        w_w,
        group_by,
        meta.add_sos,
        meta.add_eos,
    )?;

    let tsv: String = match (top, bottom) {
        (None, None) => norm_table.to_tsv(),
        (t, b) => norm_table
            .head_tail(t.unwrap_or(0), b.unwrap_or(0))
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.key, r.mean, r.count))
            .collect(),
    };
    match out_path {
        Some(path) => {
            std::fs::write(&path, &tsv)
                .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        None => print!("{tsv}"),
    }
    Ok(())
}
