use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mind_core::data::{ingest_interactions, ProfileTable};
use mind_core::evaluation::{
    build_item_index, coupling_report, hit_rates, popularity_hit_rates, popularity_ranking, retrieve,
    run_comparison, similarity_distribution, sweep_p, sweep_sigma, CellOutcome, Dataset, Method,
};
use mind_core::model::train::{init_params, run_epoch, StepLog};
use mind_core::model::serve_user;
use mind_core::synthetic::{generate, SyntheticConfig};
use mind_core::{AdamState, Checkpoint, EvalReport, ItemIndex, MindError, ModelShape, PreparedData, TrainingInstance};

use crate::config::RunConfig;
use crate::{Command, Common, SweepKind, UserArgs};

pub const TRAIN_LOG_FORMAT: &str = "# mind-train-log v1";
pub const RETRIEVAL_FORMAT: &str = "# mind-retrieval v1";
pub const SYNTHETIC_LOG: &str = "synthetic_log.csv";
pub const SYNTHETIC_CLUSTERS: &str = "synthetic_clusters.tsv";

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            common,
            input,
            profiles,
            synthetic,
        } => prepare(&common, input, profiles, synthetic),
        Command::Train { common, resume } => train(&common, resume),
        Command::Eval { common, checkpoint } => eval(&common, checkpoint),
        Command::Retrieve {
            common,
            checkpoint,
            who,
            top,
            output,
        } => retrieve_cmd(&common, checkpoint, &who, top, output),
        Command::Inspect {
            common,
            checkpoint,
            who,
        } => inspect(&common, checkpoint, &who),
        Command::Sweep { common, axis } => sweep(&common, axis),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    RunConfig::load(&common.config, &common.overrides)
}

/// Inserts `# config_digest` after the format line of a report.
fn tag(text: &str, digest: &str) -> String {
    match text.split_once('\n') {
        Some((head, rest)) => format!("{head}\n# config_digest\t{digest}\n{rest}"),
        None => format!("{text}\n# config_digest\t{digest}\n"),
    }
}

fn write_artifact(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn open_data(path: &Path, what: &str) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| MindError::data(format!("cannot open {what} {}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

fn prepare(common: &Common, input: Option<PathBuf>, profiles: Option<PathBuf>, synthetic: bool) -> Result<()> {
    let mut cfg = load_config(common)?;
    if input.is_some() {
        cfg.data.log = input;
    }
    if profiles.is_some() {
        cfg.data.profiles = profiles;
    }
    let dir = cfg.prepared_dir();
    let records = if synthetic {
        let generated = generate(&cfg.synthetic)?;
        fs::create_dir_all(&dir)?;
        write_synthetic(&dir, &cfg.synthetic, &generated)?;
        generated.records
    } else {
        let Some(log) = &cfg.data.log else {
            bail!(MindError::config("no interaction log: pass --input, set data.log or use --synthetic"));
        };
        let report = ingest_interactions(open_data(log, "log")?)?;
        if let Some(first) = report.errors.first() {
            bail!(MindError::data(format!(
                "{}: {} malformed line(s), first at line {}: {}",
                log.display(),
                report.errors.len(),
                first.line,
                first.message
            )));
        }
        report.records
    };
    let profile_table = match &cfg.data.profiles {
        Some(p) => ProfileTable::parse(open_data(p, "profiles")?)?,
        None => ProfileTable::default(),
    };
    let mut prepared = PreparedData::build(
        &records,
        &profile_table,
        cfg.data.min_item_interactions,
        cfg.data.min_user_interactions,
        &cfg.split_config(),
    )?;
    prepared.manifest.config_digest = cfg.digest();
    prepared.save(&dir)?;
    let m = &prepared.manifest;
    println!(
        "users {}\titems {}\trecords {}\ttrain {}\ttest {}",
        m.users, m.items, m.records, m.train_instances, m.test_instances
    );
    println!("split_digest {}", m.split_digest);
    println!("manifest {}", dir.join("manifest.txt").display());
    Ok(())
}

fn write_synthetic(dir: &Path, cfg: &SyntheticConfig, data: &mind_core::synthetic::SyntheticData) -> Result<()> {
    let mut log = String::from("# user,item,category,timestamp\n");
    for r in &data.records {
        log.push_str(&r.to_line());
        log.push('\n');
    }
    write_artifact(&dir.join(SYNTHETIC_LOG), &log)?;
    let mut owned = format!(
        "# mind-synthetic-clusters v1\n# items_per_cluster\t{}\nuser\tclusters\n",
        cfg.items_per_cluster
    );
    for (user, clusters) in &data.user_clusters {
        let list: Vec<String> = clusters.iter().map(usize::to_string).collect();
        owned.push_str(&format!("{user}\t{}\n", list.join(",")));
    }
    write_artifact(&dir.join(SYNTHETIC_CLUSTERS), &owned)
}

fn load_prepared(cfg: &RunConfig) -> Result<PreparedData> {
    let dir = cfg.prepared_dir();
    PreparedData::load(&dir).with_context(|| format!("loading prepared data from {}", dir.display()))
}

/// Loads a checkpoint and refuses it unless it was trained on `data`.
fn load_checkpoint(path: &Path, data: &PreparedData) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ckpt.item_vocab_digest != data.manifest.item_vocab_digest {
        bail!(MindError::data(format!(
            "checkpoint {} was trained on a different item vocabulary; refusing to run",
            path.display()
        )));
    }
    if ckpt.params.shape() != ModelShape::of(data) {
        bail!(MindError::data("checkpoint feature vocabularies do not match the prepared data"));
    }
    Ok(ckpt)
}

fn train(common: &Common, resume: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_prepared(&cfg)?;
    let shape = ModelShape::of(&data);
    let tc = cfg.train_config();
    let ckpt_path = cfg.checkpoint_path();
    let log_path = cfg.train_log_path();
    fs::create_dir_all(&cfg.output_dir)?;

    let (mut params, mut adam, start) = if resume && ckpt_path.exists() {
        let ckpt = load_checkpoint(&ckpt_path, &data)?;
        if RunConfig::resume_key(&ckpt.run_config)? != RunConfig::resume_key(&cfg.canonical())? {
            bail!(MindError::config("checkpoint was trained with a different configuration"));
        }
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::new(&ckpt.params));
        (ckpt.params, adam, ckpt.epochs_done)
    } else {
        if resume {
            eprintln!("no checkpoint at {}; starting fresh", ckpt_path.display());
        }
        let params = init_params(&cfg.model, &shape, tc.seed);
        let adam = AdamState::new(&params);
        (params, adam, 0)
    };

    let appending = start > 0 && log_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(appending)
        .truncate(!appending)
        .open(&log_path)?;
    let mut log = BufWriter::new(file);
    if !appending {
        writeln!(log, "{TRAIN_LOG_FORMAT}\n# config_digest\t{}\n{}", cfg.digest(), StepLog::HEADER)?;
    }

    let save = |params: &mind_core::ModelParams, adam: &AdamState, epochs_done: usize| -> Result<()> {
        Checkpoint {
            model: cfg.model.clone(),
            params: params.clone(),
            adam: Some(adam.clone()),
            epochs_done,
            item_vocab_digest: data.manifest.item_vocab_digest.clone(),
            run_config: cfg.canonical(),
        }
        .save(&ckpt_path)
        .map_err(Into::into)
    };

    if start >= tc.epochs {
        save(&params, &adam, start)?;
    }
    for epoch in start..tc.epochs {
        let mut io_err = None;
        let result = run_epoch(
            &mut params,
            &mut adam,
            &data.catalog,
            &data.split.train,
            &cfg.model,
            &tc,
            epoch,
            |step| {
                if let Err(e) = writeln!(log, "{}", step.to_line()) {
                    io_err.get_or_insert(e);
                }
            },
        );
        log.flush()?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        let loss = result.with_context(|| {
            format!("epoch {} diverged; last good checkpoint kept at {}", epoch + 1, ckpt_path.display())
        })?;
        eprintln!("epoch {}/{}\tloss {loss:.6}", epoch + 1, tc.epochs);
        let done = epoch + 1;
        if done == tc.epochs || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            save(&params, &adam, done)?;
        }
    }
    println!("checkpoint {}", ckpt_path.display());
    println!("log {}", log_path.display());
    Ok(())
}

fn eval(common: &Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_prepared(&cfg)?;
    let ckpt = load_checkpoint(&checkpoint.unwrap_or_else(|| cfg.checkpoint_path()), &data)?;
    let settings = cfg.eval_settings();
    let test = &data.split.test;
    let index = build_item_index(&ckpt.params, &data.catalog, &settings)?;
    let mind = hit_rates(&ckpt.params, &ckpt.model, &data.catalog, &index, test, &settings)?;
    let ranking = popularity_ranking(&data.split.train, data.num_items());
    let popular = popularity_hit_rates(&ranking, test, &settings.cutoffs)?;
    let finished = |hit_rates| CellOutcome::Finished {
        hit_rates,
        curve: Vec::new(),
        epoch_losses: Vec::new(),
    };
    let label = Method::Mind(ckpt.model.routing.max_interests).label();
    let report = EvalReport::new(
        vec![
            (label.clone(), vec![finished(mind)]),
            (Method::Popularity.label(), vec![finished(popular)]),
        ],
        vec![cfg.seed],
        settings.cutoffs.clone(),
        test.len(),
        cfg.digest(),
        data.manifest.split_digest.clone(),
        label,
    );
    let text = report.to_text();
    let path = cfg.output("eval_report.tsv");
    write_artifact(&path, &text)?;
    print!("{text}");
    eprintln!("report {}", path.display());
    Ok(())
}

/// Behaviors and profile for a query, plus a name for output files.
fn resolve_query(who: &UserArgs, data: &PreparedData, max_behaviors: usize) -> Result<(String, TrainingInstance)> {
    if let Some(user) = &who.user {
        let latest = data
            .split
            .train
            .iter()
            .chain(&data.split.test)
            .filter(|i| &i.user_id == user)
            .max_by_key(|i| i.target_timestamp)
            .ok_or_else(|| MindError::data(format!("user {user:?} has no instances in the prepared data")))?;
        let mut behaviors = latest.behaviors.clone();
        behaviors.push(latest.target);
        let skip = behaviors.len().saturating_sub(max_behaviors);
        let inst = TrainingInstance {
            behaviors: behaviors[skip..].to_vec(),
            target: 0,
            ..latest.clone()
        };
        return Ok((user.clone(), inst));
    }
    if who.behaviors.is_empty() {
        bail!(MindError::config("pass --user or --behaviors"));
    }
    let behaviors = who
        .behaviors
        .iter()
        .map(|id| {
            data.items
                .get(id)
                .ok_or_else(|| MindError::data(format!("unknown item {id:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let inst = TrainingInstance {
        user_id: "query".into(),
        behaviors,
        profile: vec![0; data.profile_vocabs.len()],
        target: 0,
        target_timestamp: 0,
    };
    Ok(("query".into(), inst))
}

fn item_name(data: &PreparedData, item: usize) -> String {
    data.items.id_of(item).unwrap_or("?").to_string()
}

fn retrieve_cmd(
    common: &Common,
    checkpoint: Option<PathBuf>,
    who: &UserArgs,
    top: usize,
    output: Option<PathBuf>,
) -> Result<()> {
    if top == 0 {
        bail!(MindError::config("--top must be at least 1"));
    }
    let cfg = load_config(common)?;
    let data = load_prepared(&cfg)?;
    let ckpt = load_checkpoint(&checkpoint.unwrap_or_else(|| cfg.checkpoint_path()), &data)?;
    let (name, query) = resolve_query(who, &data, cfg.data.max_behaviors)?;
    let settings = cfg.eval_settings();
    let index = build_item_index(&ckpt.params, &data.catalog, &settings)?;
    let interests = serve_user(
        &ckpt.params,
        &ckpt.model,
        &data.catalog,
        &query.behaviors,
        &query.profile,
        settings.serve_seed,
    )?;
    let found = retrieve(&interests, &index, top, settings.retrieval)?;
    let text = format!(
        "{RETRIEVAL_FORMAT}\n# config_digest\t{}\n# query\t{name}\n{}",
        cfg.digest(),
        found.to_tsv(|i| item_name(&data, i))
    );
    match output {
        Some(path) => write_artifact(&path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn inspect(common: &Common, checkpoint: Option<PathBuf>, who: &UserArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_prepared(&cfg)?;
    let ckpt = load_checkpoint(&checkpoint.unwrap_or_else(|| cfg.checkpoint_path()), &data)?;
    let (name, query) = resolve_query(who, &data, cfg.data.max_behaviors)?;
    let seed = cfg.eval_settings().serve_seed;
    let describe = |item: usize| {
        let label = data
            .catalog
            .sides(item)
            .first()
            .filter(|&&s| s != 0)
            .and_then(|&s| data.side_vocabs[0].id_of(s))
            .unwrap_or("")
            .to_string();
        (item_name(&data, item), label)
    };
    let coupling = coupling_report(&ckpt.params, &ckpt.model, &data.catalog, &query, seed, describe)?;
    let index = ItemIndex::from_model(&ckpt.params.item_tables, &data.catalog, None)?;
    let candidates = cfg.eval.candidates.min(index.len());
    let similarity = similarity_distribution(
        &ckpt.params,
        &ckpt.model,
        &data.catalog,
        &index,
        &query,
        candidates,
        seed,
    )?;
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let digest = cfg.digest();
    let coupling_path = cfg.output(&format!("coupling_{safe}.tsv"));
    let similarity_path = cfg.output(&format!("similarity_{safe}.tsv"));
    write_artifact(&coupling_path, &tag(&coupling.to_text(), &digest))?;
    write_artifact(&similarity_path, &tag(&similarity.to_text(), &digest))?;
    println!("coupling {}", coupling_path.display());
    println!("similarity {}", similarity_path.display());
    Ok(())
}

fn sweep(common: &Common, axis: SweepKind) -> Result<()> {
    let cfg = load_config(common)?;
    let data = load_prepared(&cfg)?;
    let shape = ModelShape::of(&data);
    let ds = Dataset::new(&data, &shape);
    let settings = cfg.eval_settings();
    let tc = cfg.train_config();
    let digest = cfg.digest();
    let seeds = &cfg.eval.seeds;
    let (file, text) = match axis {
        SweepKind::Sigma => {
            let r = sweep_sigma(&ds, &cfg.eval.sigma_grid, seeds, &cfg.model, &tc, &settings, &digest)?;
            ("sweep_sigma.tsv", r.to_text())
        }
        SweepKind::P => {
            let r = sweep_p(&ds, &cfg.eval.p_grid, seeds, &cfg.model, &tc, &settings, &digest)?;
            ("sweep_p.tsv", r.to_text())
        }
        SweepKind::Method => {
            let mut methods: Vec<Method> = cfg.eval.interests.iter().map(|&k| Method::Mind(k)).collect();
            methods.push(Method::Popularity);
            let r = run_comparison(&ds, &methods, seeds, &cfg.model, &tc, &settings, &digest)?;
            ("comparison.tsv", r.to_text())
        }
    };
    let path = cfg.output(file);
    write_artifact(&path, &text)?;
    // the summary table follows the blank line in sweep reports
    let summary = text.rsplit_once("\n\n").map_or(text.as_str(), |(_, s)| s);
    print!("{summary}");
    eprintln!("report {}", path.display());
    Ok(())
}
