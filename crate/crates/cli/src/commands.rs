//! One function per subcommand. Each writes its outputs and a
//! `<command>.manifest` into the output directory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ckgr_core::checkpoint;
use ckgr_core::dataset::{Dataset, DatasetOptions};
use ckgr_core::eval::{self, baseline_popularity, baseline_random, evaluate, EvalReport, ModelRanker, Ranker};
use ckgr_core::graph::{AlignmentMap, AttributeTriple, InteractionRecord};
use ckgr_core::ingest::{
    self, filter_min_interactions, format_attribute_triples, format_records, parse_attribute_triples,
    parse_interactions, synth_generate, to_implicit, DatasetManifest, InputFormat, LineError,
};
use ckgr_core::model::{train, ModelState, Representations};
use ckgr_core::{Error, Result};

use crate::config::{FormatChoice, RunConfig};
use crate::manifest::{self, FileRecord};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn stdout_err(source: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn finish(
    command: &str,
    cfg: &RunConfig,
    out_dir: &Path,
    inputs: &[FileRecord],
    outputs: &[(&str, PathBuf)],
) -> Result<PathBuf> {
    let outputs = outputs
        .iter()
        .map(|(name, path)| FileRecord::of(name, path))
        .collect::<Result<Vec<_>>>()?;
    let path = out_dir.join(format!("{command}.manifest"));
    write_file(&path, manifest::render(command, cfg, inputs, &outputs).as_bytes())?;
    Ok(path)
}

/// Records after parsing, implicit conversion and user filtering.
pub struct LoadedRecords {
    pub records: Vec<InteractionRecord>,
    pub errors: Vec<LineError>,
    pub parsed_rows: usize,
    pub inputs: Vec<FileRecord>,
}

pub fn load_records(cfg: &RunConfig) -> Result<LoadedRecords> {
    let path = cfg
        .interactions
        .as_ref()
        .ok_or_else(|| Error::Config("no interactions file; set `interactions = PATH`".into()))?;
    let format = match cfg.format {
        FormatChoice::Auto => InputFormat::from_path(path),
        FormatChoice::Tsv => InputFormat::Tsv,
        FormatChoice::Csv => InputFormat::Csv,
    };
    let mut inputs = vec![FileRecord::of("interactions", path)?];
    let report = parse_interactions(path, format, cfg.strict)?;
    let implicit = to_implicit(&report.rows, cfg.implicit_threshold);
    let records = filter_min_interactions(&implicit, cfg.min_interactions);
    if let Some(m) = &cfg.dataset_manifest {
        inputs.push(FileRecord::of("dataset_manifest", m)?);
        let text = std::fs::read_to_string(m).map_err(io_err(m))?;
        DatasetManifest::parse(&text)?.verify(&records)?;
    }
    Ok(LoadedRecords {
        records,
        errors: report.errors,
        parsed_rows: report.rows.len(),
        inputs,
    })
}

fn load_attrs(name: &str, path: &Option<PathBuf>, strict: bool, inputs: &mut Vec<FileRecord>) -> Result<Vec<AttributeTriple>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            inputs.push(FileRecord::of(name, p)?);
            Ok(parse_attribute_triples(p, strict)?.rows)
        }
    }
}

/// `item|user TAB id TAB entity` lines; `#` comments.
pub fn parse_alignment(text: &str, source_name: &str) -> Result<AlignmentMap> {
    let mut items = Vec::new();
    let mut users = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        let bad = |message: String| Error::Format {
            source_name: source_name.to_string(),
            line: n + 1,
            message,
        };
        if f.len() != 3 || f[1].is_empty() || f[2].is_empty() {
            return Err(bad("expected `item|user<TAB>id<TAB>entity`".into()));
        }
        let pair = (f[1].to_string(), f[2].to_string());
        match f[0] {
            "item" => items.push(pair),
            "user" => users.push(pair),
            other => return Err(bad(format!("unknown alignment kind '{other}'"))),
        }
    }
    AlignmentMap::new(items, users)
}

pub fn prepare_dataset(cfg: &RunConfig) -> Result<(Dataset, Vec<FileRecord>)> {
    let loaded = load_records(cfg)?;
    let mut inputs = loaded.inputs;
    let user_attrs = load_attrs("user_attributes", &cfg.user_attributes, cfg.strict, &mut inputs)?;
    let item_attrs = load_attrs("item_attributes", &cfg.item_attributes, cfg.strict, &mut inputs)?;
    let align = match &cfg.alignment {
        None => AlignmentMap::empty(),
        Some(p) => {
            inputs.push(FileRecord::of("alignment", p)?);
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            parse_alignment(&text, &p.display().to_string())?
        }
    };
    let ds = Dataset::prepare(
        &loaded.records,
        &user_attrs,
        &item_attrs,
        &align,
        DatasetOptions {
            ratios: cfg.split,
            seed: cfg.hyper.seed,
            id_order: cfg.id_order,
        },
    )?;
    Ok((ds, inputs))
}

pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    ensure_dir(out_dir)?;
    let data = synth_generate(&cfg.synth_config())?;
    let files = [
        ("interactions", out_dir.join("interactions.tsv")),
        ("user_attributes", out_dir.join("user_attributes.tsv")),
        ("item_attributes", out_dir.join("item_attributes.tsv")),
        ("dominant_factors", out_dir.join("dominant_factors.tsv")),
        ("dataset_manifest", out_dir.join("dataset.manifest")),
        ("config", out_dir.join("synth.conf")),
    ];
    write_file(&files[0].1, format_records(&data.interactions).as_bytes())?;
    write_file(&files[1].1, format_attribute_triples(&data.user_attrs).as_bytes())?;
    write_file(&files[2].1, format_attribute_triples(&data.item_attrs).as_bytes())?;
    let mut factors = String::from("kind\tid\tfactor\n");
    for (u, f) in data.user_dominant.iter().enumerate() {
        let _ = writeln!(factors, "user\t{}\t{f}", ingest::user_name(u));
    }
    for (i, f) in data.item_dominant.iter().enumerate() {
        let _ = writeln!(factors, "item\t{}\t{f}", ingest::item_name(i));
    }
    write_file(&files[3].1, factors.as_bytes())?;
    let m = DatasetManifest::of(&data.interactions);
    write_file(
        &files[4].1,
        format!("users={}\nitems={}\ninteractions={}\n", m.users, m.items, m.interactions).as_bytes(),
    )?;
    let mut follow = cfg.clone();
    follow.interactions = Some(files[0].1.clone());
    follow.user_attributes = Some(files[1].1.clone());
    follow.item_attributes = Some(files[2].1.clone());
    follow.dataset_manifest = Some(files[4].1.clone());
    let mut conf = String::from("# generated by `ckgr synth`\n");
    for (k, v) in follow.to_pairs() {
        let _ = writeln!(conf, "{k} = {v}");
    }
    write_file(&files[5].1, conf.as_bytes())?;
    finish("synth", cfg, out_dir, &[], &files.iter().map(|(n, p)| (*n, p.clone())).collect::<Vec<_>>())?;
    writeln!(
        out,
        "wrote {} interactions, {} user and {} item attribute triples to {}",
        data.interactions.len(),
        data.user_attrs.len(),
        data.item_attrs.len(),
        out_dir.display()
    )
    .map_err(stdout_err)
}

pub fn cmd_ingest(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    ensure_dir(out_dir)?;
    let loaded = load_records(cfg)?;
    let records_path = out_dir.join("interactions.tsv");
    let errors_path = out_dir.join("ingest_errors.tsv");
    write_file(&records_path, format_records(&loaded.records).as_bytes())?;
    let mut errs = String::from("line\tmessage\n");
    for e in &loaded.errors {
        let _ = writeln!(errs, "{}\t{}", e.line, e.message);
    }
    write_file(&errors_path, errs.as_bytes())?;
    finish(
        "ingest",
        cfg,
        out_dir,
        &loaded.inputs,
        &[("interactions", records_path), ("errors", errors_path)],
    )?;
    let m = DatasetManifest::of(&loaded.records);
    writeln!(
        out,
        "parsed {} rows ({} rejected); kept {} interactions, {} users, {} items",
        loaded.parsed_rows,
        loaded.errors.len(),
        m.interactions,
        m.users,
        m.items
    )
    .map_err(stdout_err)
}

pub fn cmd_build_graph(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    ensure_dir(out_dir)?;
    let (ds, inputs) = prepare_dataset(cfg)?;
    let files = [
        ("user_kg", out_dir.join("user_kg.tsv")),
        ("item_kg", out_dir.join("item_kg.tsv")),
        ("train", out_dir.join("train.tsv")),
        ("validation", out_dir.join("validation.tsv")),
        ("test", out_dir.join("test.tsv")),
    ];
    write_file(&files[0].1, ds.graphs.user_kg.dump().as_bytes())?;
    write_file(&files[1].1, ds.graphs.item_kg.dump().as_bytes())?;
    write_file(&files[2].1, format_records(&ds.split.train).as_bytes())?;
    write_file(&files[3].1, format_records(&ds.split.validation).as_bytes())?;
    write_file(&files[4].1, format_records(&ds.split.test).as_bytes())?;
    finish("build-graph", cfg, out_dir, &inputs, &files.iter().map(|(n, p)| (*n, p.clone())).collect::<Vec<_>>())?;
    for (name, kg) in [("user-side", &ds.graphs.user_kg), ("item-side", &ds.graphs.item_kg)] {
        let s = kg.stats();
        writeln!(
            out,
            "{name} graph: {} entities, {} relations, {} triples ({} interaction, {} attribute, {} duplicate attribute triples dropped)",
            kg.entity_count(),
            kg.relation_count(),
            kg.triples().len(),
            s.interaction_triples,
            s.attribute_triples,
            s.duplicate_attribute_triples
        )
        .map_err(stdout_err)?;
    }
    writeln!(
        out,
        "split: {} train / {} validation / {} test records",
        ds.split.train.len(),
        ds.split.validation.len(),
        ds.split.test.len()
    )
    .map_err(stdout_err)
}

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    ensure_dir(out_dir)?;
    let (ds, inputs) = prepare_dataset(cfg)?;
    let mut state = ModelState::init(&ds.graphs, &cfg.hyper)?;
    for (k, v) in cfg.data_pairs() {
        state.extra.insert(k, v);
    }
    for f in &inputs {
        state.extra.insert(format!("input.{}.sha1", f.name), f.hash.clone());
    }
    let outcome = train(&mut state, &ds.graphs, Some(&ds.validation))?;
    let ckpt = out_dir.join("model.ckpt");
    let history = out_dir.join("history.csv");
    checkpoint::save(&state, &ckpt)?;
    write_file(&history, outcome.history_csv().as_bytes())?;
    finish("train", cfg, out_dir, &inputs, &[("checkpoint", ckpt.clone()), ("history", history)])?;
    let best = outcome
        .best_epoch
        .and_then(|e| outcome.history.get(e - 1))
        .and_then(|r| r.validation_recall);
    writeln!(
        out,
        "trained {} epochs{}; kept epoch {} (validation Recall@{} = {}); checkpoint {}",
        outcome.history.len(),
        if outcome.stopped_early { " (early stop)" } else { "" },
        state.epoch,
        cfg.hyper.top_k,
        best.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into()),
        ckpt.display()
    )
    .map_err(stdout_err)
}

fn load_model(cfg: &RunConfig, path: &Path, ds: &Dataset) -> Result<ModelState> {
    let state = checkpoint::load(path)?;
    checkpoint::check_matches(&state, &cfg.hyper)?;
    state.check_compatible(&ds.graphs)?;
    Ok(state)
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint_path: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<EvalReport> {
    ensure_dir(out_dir)?;
    let (ds, mut inputs) = prepare_dataset(cfg)?;
    inputs.push(FileRecord::of("checkpoint", checkpoint_path)?);
    let state = load_model(cfg, checkpoint_path, &ds)?;
    let k = cfg.hyper.top_k;
    let seed = cfg.hyper.seed;
    let mut report = EvalReport::default();
    let mut row = |label: &str, ranker: &dyn Ranker, start: Instant| -> Result<()> {
        let m = evaluate(ranker, &ds.train_items, &ds.test, k)?;
        report.push(label, k, m, seed, start.elapsed().as_millis());
        Ok(())
    };
    let start = Instant::now();
    let model = ModelRanker::new(Representations::compute(&state, &ds.graphs)?);
    row("model", &model, start)?;
    row("popularity", &baseline_popularity(&ds.train_items, ds.item_count()), Instant::now())?;
    row("random", &baseline_random(seed, ds.item_count()), Instant::now())?;
    let csv = out_dir.join("evaluation.csv");
    report.write_csv(&csv)?;
    finish("evaluate", cfg, out_dir, &inputs, &[("report", csv)])?;
    out.write_all(report.to_csv().as_bytes()).map_err(stdout_err)?;
    Ok(report)
}

pub fn cmd_recommend(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    user: &str,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let (ds, mut inputs) = prepare_dataset(cfg)?;
    inputs.push(FileRecord::of("checkpoint", checkpoint_path)?);
    let state = load_model(cfg, checkpoint_path, &ds)?;
    let items = ds.graphs.bipartite.items();
    let u = ds
        .graphs
        .bipartite
        .users()
        .id(user)
        .ok_or_else(|| Error::Index(format!("unknown user '{user}'")))? as usize;
    let ranker = ModelRanker::new(Representations::compute(&state, &ds.graphs)?);
    let scores = ranker.scores(u);
    let mut text = String::from("rank\titem\tscore\n");
    for (rank, i) in eval::topk(&scores, cfg.hyper.top_k, &ds.train_items[u]).into_iter().enumerate() {
        let _ = writeln!(text, "{}\t{}\t{}", rank + 1, items.name(i as u32).unwrap_or("?"), scores[i]);
    }
    finish("recommend", cfg, out_dir, &inputs, &[])?;
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

pub fn cmd_sweep_layers(cfg: &RunConfig, layers: &[usize], out_dir: &Path, out: &mut dyn Write) -> Result<EvalReport> {
    ensure_dir(out_dir)?;
    let (ds, inputs) = prepare_dataset(cfg)?;
    let report = eval::sweep_layers(&ds, layers, &cfg.hyper)?;
    let csv = out_dir.join("sweep_layers.csv");
    report.write_csv(&csv)?;
    finish("sweep-layers", cfg, out_dir, &inputs, &[("report", csv)])?;
    out.write_all(report.to_csv().as_bytes()).map_err(stdout_err)?;
    Ok(report)
}
