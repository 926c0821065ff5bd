use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use grec_client::Client;
use grec_core::augment::{augment_item, background_pool, AugmentPlan, RasterImage};
use grec_core::catalog::{parse_embedding_csv, Cart, Catalog, UnknownIdPolicy, VecFile, EMBEDDING_MAGIC, INDEX_MAGIC};
use grec_core::lossmetrics::label_weights;
use grec_core::ohseval::{
    aggregate, default_criteria, make_sheet, published_comparison, validate_scores, ComparisonTable, Criterion,
    EvaluationSheet, IndexSource, QuerySpec, ResultSource, ScoreRecord, ScoreSubmission,
};
use grec_core::personalize::{recommend_for_cart, split_cart};
use grec_core::retrieval::{Recommendation, VectorIndex};
use grec_core::toynet::{history_csv, synthetic_separable, train, ToyModel, TrainConfig};
use grec_service::ServiceConfig;
use rayon::prelude::*;
use serde::Serialize;

use crate::{
    AugmentArgs, BuildIndexArgs, CartArgs, Cli, Command, EmbedArgs, EvalAggregateArgs, EvalSheetArgs, QueryArgs,
    ReportArgs, ServeArgs, TrainArgs,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

/// Bad flag combination caught after parsing.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// The error chain joined by `: `, skipping causes already in their parent's text.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::BuildIndex(a) => build_index(a, json),
        Command::Query(a) => query(a, json),
        Command::CartRecommend(a) => cart_recommend(a, json),
        Command::Augment(a) => augment(a, json),
        Command::TrainToy(a) => train_toy(a, json),
        Command::Embed(a) => embed(a, json),
        Command::EvalSheet(a) => eval_sheet(a, json),
        Command::EvalAggregate(a) => eval_aggregate(a, json),
        Command::Report(a) => report(a, json),
        Command::Serve(a) => serve(a),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_list(list: &[Recommendation], json: bool) -> Result<()> {
    if json {
        return print_json(&list);
    }
    let mut out = std::io::stdout().lock();
    for r in list {
        writeln!(out, "{}\t{:.6}", r.id, r.score)?;
    }
    Ok(())
}

fn load_catalog(manifest: &Path, embeddings: Option<&Path>, policy: UnknownIdPolicy) -> Result<Catalog> {
    let mut catalog =
        Catalog::load_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    if let Some(e) = embeddings {
        catalog.load_embeddings(e, policy).with_context(|| format!("reading embeddings {}", e.display()))?;
    }
    Ok(catalog)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_current_thread().enable_all().build()?)
}

fn build_index(a: BuildIndexArgs, json: bool) -> Result<()> {
    let policy = if a.skip_unknown { UnknownIdPolicy::Skip } else { UnknownIdPolicy::Fail };
    let catalog = load_catalog(&a.manifest, Some(&a.embeddings), policy)?;
    let index = VectorIndex::build(&catalog)?;
    index.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if json {
        print_json(&serde_json::json!({"items": index.len(), "dim": index.dim(), "out": a.out}))
    } else {
        println!("indexed {} items, dim {}, -> {}", index.len(), index.dim(), a.out.display());
        Ok(())
    }
}

fn query(a: QueryArgs, json: bool) -> Result<()> {
    if a.item.is_none() && a.embedding.is_none() {
        return Err(usage("give --item or --embedding"));
    }
    if a.k == 0 {
        return Err(usage("--k must be positive"));
    }
    let exclude: Vec<String> = match (&a.item, a.include_self) {
        (Some(id), false) => vec![id.clone()],
        _ => Vec::new(),
    };
    let list = if let Some(server) = &a.server {
        let client = Client::new(server).map_err(|e| usage(e.to_string()))?;
        let req = grec_core::api::RecommendRequest { item_id: a.item.clone(), embedding: a.embedding.clone(), k: a.k, exclude };
        runtime()?.block_on(client.recommend(&req))?
    } else {
        let path = a.index.as_ref().ok_or_else(|| usage("give --index or --server"))?;
        let index = VectorIndex::load(path).with_context(|| format!("reading index {}", path.display()))?;
        let q: Vec<f32> = match (&a.item, &a.embedding) {
            (Some(id), _) => index.vector(id).ok_or_else(|| anyhow!("item {id:?} is not in the index"))?.to_vec(),
            (None, Some(v)) => v.clone(),
            (None, None) => unreachable!(),
        };
        let ex: HashSet<String> = exclude.into_iter().collect();
        index.top_k(&q, a.k, (!ex.is_empty()).then_some(&ex))?.entries
    };
    print_list(&list, json)
}

#[derive(Serialize)]
struct SubCartResult {
    items: Vec<String>,
    results: Vec<Recommendation>,
}

fn cart_recommend(a: CartArgs, json: bool) -> Result<()> {
    let cart = Cart::load(&a.cart).with_context(|| format!("reading cart {}", a.cart.display()))?;
    if a.k == 0 {
        return Err(usage("--k must be positive"));
    }
    if let Some(server) = &a.server {
        if a.split.is_some() {
            return Err(usage("--split is not available with --server"));
        }
        let client = Client::new(server).map_err(|e| usage(e.to_string()))?;
        let list = runtime()?.block_on(client.cart_recommend(&cart, a.k))?;
        return print_list(&list, json);
    }
    let manifest = a.manifest.as_ref().ok_or_else(|| usage("give --manifest or --server"))?;
    let embeddings = a.embeddings.as_ref().ok_or_else(|| usage("give --embeddings or --server"))?;
    let catalog = load_catalog(manifest, Some(embeddings), UnknownIdPolicy::Fail)?;
    let index = VectorIndex::build(&catalog)?;
    let Some(k_split) = a.split else {
        let list = recommend_for_cart(&cart, &catalog, &index, a.k)?;
        return print_list(&list.entries, json);
    };
    let mut groups = Vec::new();
    for sub in split_cart(&cart, &catalog, k_split, a.seed)? {
        let results = recommend_for_cart(&sub, &catalog, &index, a.k)?.entries;
        groups.push(SubCartResult { items: sub.item_ids().map(str::to_owned).collect(), results });
    }
    if json {
        return print_json(&groups);
    }
    for (i, g) in groups.iter().enumerate() {
        println!("# group {} [{}]", i + 1, g.items.join(", "));
        print_list(&g.results, false)?;
    }
    Ok(())
}

fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct AugmentSummary {
    written: Vec<PathBuf>,
    failed: Vec<(String, String)>,
}

fn augment(a: AugmentArgs, json: bool) -> Result<()> {
    let catalog = load_catalog(&a.manifest, None, UnknownIdPolicy::Fail)?;
    let root = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let pool = match (&a.backgrounds, a.no_backgrounds) {
        (_, true) => Vec::new(),
        (Some(dir), false) => background_pool(dir).with_context(|| format!("reading {}", dir.display()))?,
        (None, false) => return Err(usage("give --backgrounds or --no-backgrounds")),
    };
    let plan = AugmentPlan {
        seed: a.seed,
        epoch: a.epoch,
        flip: !a.no_flip,
        rotation_deg: a.rotation,
        shift_frac: a.shift,
        shear: a.shear,
        background_pool: pool,
        use_backgrounds: !a.no_backgrounds,
        ..AugmentPlan::default()
    };
    plan.validate().map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&a.out)?;

    let results: Vec<(String, Result<PathBuf, String>)> = catalog
        .items()
        .par_iter()
        .map(|item| {
            let run = || -> Result<PathBuf> {
                let src = RasterImage::load(root.join(&item.image_ref))?;
                let img = augment_item(&src, &item.id, &plan, a.tolerance, |p| RasterImage::load(p))?;
                let out = a.out.join(format!("{}_e{}.png", file_stem_for(&item.id), a.epoch));
                img.save_png(&out)?;
                Ok(out)
            };
            (item.id.clone(), run().map_err(|e| format!("{e:#}")))
        })
        .collect();

    let mut summary = AugmentSummary { written: Vec::new(), failed: Vec::new() };
    for (id, r) in results {
        match r {
            Ok(p) => summary.written.push(p),
            Err(e) => summary.failed.push((id, e)),
        }
    }
    if json {
        print_json(&summary)?;
    } else {
        println!("wrote {} images to {}", summary.written.len(), a.out.display());
    }
    for (id, e) in &summary.failed {
        eprintln!("{id}: {e}");
    }
    if summary.failed.is_empty() {
        Ok(())
    } else {
        bail!("{} of {} items failed", summary.failed.len(), catalog.len())
    }
}

fn train_toy(a: TrainArgs, json: bool) -> Result<()> {
    let data = synthetic_separable(a.samples, a.data_seed);
    let weights = label_weights(&data.label_frequencies())?;
    let config = TrainConfig {
        hidden_dim: a.hidden,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        use_scaling: !a.no_scaling,
    };
    let out = train(&data, &config, &weights).map_err(|e| match e {
        grec_core::toynet::ToyNetError::Config(m) => usage(m),
        other => other.into(),
    })?;
    fs::write(&a.out, out.model.to_json())?;
    if let Some(h) = &a.history {
        fs::write(h, history_csv(&out.history))?;
    }
    let (first, last) = (out.history[0], *out.history.last().expect("epochs > 0"));
    if json {
        print_json(&serde_json::json!({"first": first, "last": last, "model": a.out}))
    } else {
        println!("epoch 1 loss {:.6}, epoch {} loss {:.6}, soft F1 {:.4}", first.loss, last.epoch, last.loss, last.soft_f1);
        Ok(())
    }
}

fn embed(a: EmbedArgs, json: bool) -> Result<()> {
    let model = ToyModel::from_json(&fs::read_to_string(&a.model)?)?;
    let mut reader = csv::Reader::from_path(&a.features).with_context(|| format!("reading {}", a.features.display()))?;
    let mut records = Vec::new();
    let mut zero = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let id = row.get(0).ok_or_else(|| anyhow!("row {}: missing id", n + 2))?.to_owned();
        let x = row
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("row {}", n + 2))?;
        let e = model.embed(&x).with_context(|| format!("item {id:?}"))?.into_inner();
        if e.iter().all(|&v| v == 0.0) {
            zero.push(id.clone());
        }
        records.push((id, e));
    }
    let vf = VecFile { magic: EMBEDDING_MAGIC, dim: model.hidden_dim, records };
    if a.csv {
        let mut out = format!("id,dim={}\n", vf.dim);
        for (id, v) in &vf.records {
            let vals: Vec<String> = v.iter().map(f32::to_string).collect();
            out.push_str(&format!("{id},{}\n", vals.join(",")));
        }
        fs::write(&a.out, out)?;
    } else {
        vf.write_to(fs::File::create(&a.out)?)?;
    }
    for id in &zero {
        eprintln!("warning: {id}: all-zero embedding, cannot be indexed");
    }
    if json {
        print_json(&serde_json::json!({"items": vf.records.len(), "dim": vf.dim, "zero": zero}))
    } else {
        println!("embedded {} items, dim {}, -> {}", vf.records.len(), vf.dim, a.out.display());
        Ok(())
    }
}

fn read_vectors(path: &Path) -> Result<HashMap<String, Vec<f32>>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let records = if bytes.starts_with(&EMBEDDING_MAGIC) {
        VecFile::decode(&bytes, EMBEDDING_MAGIC)?.records
    } else if bytes.starts_with(&INDEX_MAGIC) {
        VecFile::decode(&bytes, INDEX_MAGIC)?.records
    } else {
        parse_embedding_csv(&bytes)?.1
    };
    Ok(records.into_iter().collect())
}

fn eval_sheet(a: EvalSheetArgs, json: bool) -> Result<()> {
    let queries: Vec<QuerySpec> = serde_json::from_str(&fs::read_to_string(&a.queries)?)
        .with_context(|| format!("parsing {}", a.queries.display()))?;
    let criteria: Vec<Criterion> = match &a.criteria {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => default_criteria(),
    };
    let query_vectors = match &a.query_embeddings {
        Some(p) => read_vectors(p)?,
        None => HashMap::new(),
    };

    enum Loaded {
        Index(VectorIndex),
        Results(BTreeMap<String, Vec<String>>),
    }
    let mut loaded = Vec::new();
    for spec in &a.systems {
        let (name, path) = spec.split_once('=').ok_or_else(|| usage(format!("--system {spec:?} must be NAME=PATH")))?;
        let bytes = fs::read(path).with_context(|| format!("reading {path}"))?;
        let source = if bytes.starts_with(&INDEX_MAGIC) {
            Loaded::Index(VectorIndex::from_bytes(&bytes)?)
        } else {
            Loaded::Results(serde_json::from_slice(&bytes).with_context(|| format!("parsing {path}"))?)
        };
        loaded.push((name.to_owned(), source));
    }
    let sources: Vec<Box<dyn ResultSource + '_>> = loaded
        .iter()
        .map(|(_, l)| -> Box<dyn ResultSource> {
            match l {
                Loaded::Index(index) => Box::new(IndexSource { index, query_vectors: query_vectors.clone() }),
                Loaded::Results(r) => Box::new(r.clone()),
            }
        })
        .collect();
    let systems: Vec<(String, &dyn ResultSource)> =
        loaded.iter().zip(&sources).map(|((n, _), s)| (n.clone(), s.as_ref())).collect();
    let sheet = make_sheet(&a.id, criteria, &queries, &systems, a.k).map_err(|e| match e {
        grec_core::ohseval::OhsError::InvalidSheet(m) if m.starts_with("k =") => usage(m),
        other => other.into(),
    })?;
    sheet.save(&a.out)?;
    if json {
        print_json(&serde_json::json!({"sheet_id": sheet.sheet_id, "screens": sheet.screen_count(), "out": a.out}))
    } else {
        println!(
            "sheet {} with {} queries x {} systems -> {}",
            sheet.sheet_id,
            sheet.queries.len(),
            sheet.systems.len(),
            a.out.display()
        );
        Ok(())
    }
}

fn read_submissions(dir: &Path) -> Result<Vec<(String, ScoreSubmission)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json" || e == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p)?;
        if p.extension().is_some_and(|e| e == "jsonl") {
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let s = serde_json::from_str(line).with_context(|| format!("{}:{}", p.display(), i + 1))?;
                out.push((format!("{}:{}", p.display(), i + 1), s));
            }
        } else {
            let s = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            out.push((p.display().to_string(), s));
        }
    }
    Ok(out)
}

fn eval_aggregate(a: EvalAggregateArgs, json: bool) -> Result<()> {
    let sheet = EvaluationSheet::load(&a.sheet).with_context(|| format!("reading {}", a.sheet.display()))?;
    let weights: BTreeMap<String, f64> = match &a.weights {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => sheet.criterion_weights(),
    };
    let mut records: Vec<ScoreRecord> = Vec::new();
    let mut bad = 0usize;
    for (origin, sub) in read_submissions(&a.scores)? {
        match validate_scores(&sheet, &sub) {
            Ok(r) => records.push(r),
            Err(violations) => {
                bad += 1;
                for v in violations {
                    eprintln!("{origin}: {}", v.message);
                }
            }
        }
    }
    if bad > 0 {
        bail!("{bad} score file(s) failed validation");
    }
    let agg = aggregate(&sheet, &records, &weights)?.rounded();
    let table = ComparisonTable::from_aggregation(&agg);
    if let Some(p) = &a.csv {
        fs::write(p, table.render_csv())?;
    }
    if json {
        return print_json(&agg);
    }
    print!("{}", table.render_text());
    for g in &agg.gaps {
        println!("gap: no scores for {} / {}", g.system, g.criterion);
    }
    Ok(())
}

fn report(a: ReportArgs, json: bool) -> Result<()> {
    let table = match &a.table {
        Some(p) => ComparisonTable::parse_csv(&fs::read_to_string(p)?)?,
        None => published_comparison(),
    };
    if json {
        return print_json(&table);
    }
    match a.format.as_str() {
        "csv" => print!("{}", table.render_csv()),
        _ => print!("{}", table.render_text()),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("GREC_LOG").unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    if a.embeddings.is_none() && a.index.is_none() {
        return Err(usage("give --embeddings or --index"));
    }
    let config = ServiceConfig {
        listen: a.listen,
        manifest: a.manifest,
        embeddings: a.embeddings,
        index: a.index,
        sheets_dir: a.sheets,
        scores: a.scores,
        static_dir: a.static_dir,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(grec_service::serve(config, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}
