use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use docnade::corpus::{parse_corpus, write_corpus, Token};
use docnade::eval::{
    class_word_associations, cosine_retrieve, evaluate, format_records, format_table, generate_text, write_pr_curve,
    EvalOptions,
};
use docnade::model::{Model, Network};
use docnade::synthetic::{Generator, SyntheticSpec};
use docnade::trainer::{pretrain_then_finetune, TrainConfig};
use docnade::{rng, Corpus, CorpusFormat, Error, JointVocabulary, Result};
use rand::seq::SliceRandom;
use serde::Deserialize;
use serde_json::json;

use crate::manifest::{write, RunManifest};
use crate::{
    AnnotateArgs, EvalArgs, GridArgs, InspectArgs, RepresentArgs, RepresentFormat, RerunArgs, RetrieveArgs, SynthArgs,
    SynthVariant, TrainArgs,
};

fn check_regions(corpus: &Corpus, regions: Option<usize>) -> Result<()> {
    match regions {
        Some(r) if r != corpus.vocabulary.n_regions() => Err(Error::Data(format!(
            "--regions {r} but the corpus vocabulary has {} regions",
            corpus.vocabulary.n_regions()
        ))),
        _ => Ok(()),
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = a.flags.config();
    config.validate()?;
    if a.unlabeled.is_some() && config.pretrain_epochs == 0 {
        return Err(Error::Config("--unlabeled needs --pretrain-epochs > 0".into()));
    }
    let format = a.corpus.format.into();
    let mut manifest = RunManifest::new("train", config.seed, format);
    manifest.config = Some(config);
    manifest.add_corpus("labeled", &a.corpus.corpus, format)?;
    if let Some(u) = &a.unlabeled {
        manifest.add_corpus("unlabeled", u, format)?;
    }
    manifest.options = json!({ "regions": a.flags.regions, "model_out": "model.bin" });
    let dir = run_train(&manifest, &a.out.out_dir)?;
    println!("{}", dir.display());
    Ok(())
}

pub fn rerun(a: RerunArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    if manifest.command != "train" {
        return Err(Error::Config(format!("cannot rerun a {} manifest", manifest.command)));
    }
    let dir = run_train(&manifest, &a.out.out_dir)?;
    println!("{}", dir.display());
    Ok(())
}

/// Trains from a train manifest into its run directory.
fn run_train(manifest: &RunManifest, root: &Path) -> Result<PathBuf> {
    let config = manifest
        .config
        .clone()
        .ok_or_else(|| Error::Config("train manifest without a config".into()))?;
    config.validate()?;
    let format = manifest.corpus_format()?;
    let labeled_path = manifest
        .corpus("labeled")
        .ok_or_else(|| Error::Config("train manifest without a labeled corpus".into()))?;
    let labeled = parse_corpus(labeled_path, format)?;
    let regions = manifest
        .options
        .get("regions")
        .and_then(|v| v.as_u64())
        .map(|r| r as usize);
    check_regions(&labeled, regions)?;
    let unlabeled = manifest
        .corpus("unlabeled")
        .map(|p| parse_corpus(p, format))
        .transpose()?;

    let dir = manifest.create_run_dir(root)?;
    let checkpoints = dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints).map_err(|e| Error::io(format!("creating {}", checkpoints.display()), e))?;
    let mut pretrain_log = String::new();
    let mut train_log = String::new();
    let outcome = pretrain_then_finetune(unlabeled.as_ref(), &labeled, &config, Some(&checkpoints), |s| {
        let log = if s.phase == 0 && config.model_kind.is_supervised() {
            &mut pretrain_log
        } else {
            &mut train_log
        };
        log.push_str(&s.log_line());
        log.push('\n');
        eprintln!(
            "phase {} epoch {} loss {:.6} ({:.2}s)",
            s.phase, s.epoch, s.mean_loss, s.wall_seconds
        );
    })?;
    outcome.model.save(&dir.join("model.bin"))?;
    write(&dir.join("train.log"), train_log)?;
    if !pretrain_log.is_empty() {
        write(&dir.join("pretrain.log"), pretrain_log)?;
    }
    Ok(dir)
}

fn load_inputs(
    command: &str,
    model_path: &Path,
    corpus_path: &Path,
    format: CorpusFormat,
    seed: u64,
) -> Result<(Model, Corpus, RunManifest)> {
    let model = Model::load(model_path)?;
    let corpus = parse_corpus(corpus_path, format)?;
    let mut manifest = RunManifest::new(command, seed, format);
    manifest.set_model(model_path)?;
    manifest.add_corpus("input", corpus_path, format)?;
    Ok((model, corpus, manifest))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, corpus, mut manifest) =
        load_inputs("eval", &a.model, &a.corpus.corpus, a.corpus.format.into(), a.seed)?;
    model.check_corpus(&corpus)?;
    manifest.options = json!({ "split": a.split, "k": a.k, "orderings": a.orderings });
    let options = EvalOptions {
        annotations_k: a.k,
        orderings_per_doc: a.orderings,
        seed: a.seed,
    };
    let report = evaluate(&model, &corpus, &a.split, options)?;
    let dir = manifest.create_run_dir(&a.out.out_dir)?;
    write(&dir.join("report.records"), format_records(&report.records))?;
    let table = format_table(&report.records);
    write(&dir.join("report.txt"), &table)?;
    if !report.excluded_documents.is_empty() {
        let lines: String = report.excluded_documents.iter().map(|i| format!("{i}\n")).collect();
        write(&dir.join("excluded_documents.txt"), lines)?;
    }
    for (c, curve) in report.pr_curves.iter().enumerate() {
        if let Some(points) = curve {
            let pr = dir.join("pr");
            std::fs::create_dir_all(&pr).map_err(|e| Error::io(format!("creating {}", pr.display()), e))?;
            write_pr_curve(&pr.join(format!("class-{c}.txt")), points)?;
        }
    }
    print!("{table}");
    eprintln!("{}", dir.display());
    Ok(())
}

fn emit(dir: &Path, name: &str, lines: &str) -> Result<()> {
    write(&dir.join(name), lines)?;
    print!("{lines}");
    eprintln!("{}", dir.display());
    Ok(())
}

pub fn annotate(a: AnnotateArgs) -> Result<()> {
    let (model, corpus, mut manifest) = load_inputs("annotate", &a.model, &a.corpus.corpus, a.corpus.format.into(), 0)?;
    model.check_corpus(&corpus)?;
    manifest.options = json!({ "k": a.k });
    let vocab = &corpus.vocabulary;
    if a.k > vocab.n_annotation() {
        return Err(Error::Config(format!(
            "--k {} exceeds the {} annotation words",
            a.k,
            vocab.n_annotation()
        )));
    }
    let mut out = String::new();
    for (i, doc) in corpus.documents.iter().enumerate() {
        let ranked = generate_text(&model, &doc.visual_only(vocab), vocab, a.k)?;
        let words: Vec<&str> = ranked
            .ids
            .iter()
            .map(|&id| vocab.annotation_word(id).unwrap_or(""))
            .collect();
        let record = json!({ "doc": i, "ids": ranked.ids, "words": words, "scores": ranked.scores });
        writeln!(out, "{record}").expect("string write");
    }
    let dir = manifest.create_run_dir(&a.out.out_dir)?;
    emit(&dir, "annotations.records", &out)
}

fn representations(model: &Model, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    corpus
        .documents
        .iter()
        .map(|d| model.represent(d, &corpus.vocabulary))
        .collect()
}

pub fn retrieve(a: RetrieveArgs) -> Result<()> {
    let format: CorpusFormat = a.corpus.format.into();
    let (model, queries, mut manifest) = load_inputs("retrieve", &a.model, &a.corpus.corpus, format, 0)?;
    model.check_corpus(&queries)?;
    let collection = match &a.collection {
        Some(p) => {
            manifest.add_corpus("collection", p, format)?;
            let c = parse_corpus(p, format)?;
            if c.vocabulary != queries.vocabulary {
                return Err(Error::Data("query and collection vocabularies differ".into()));
            }
            c
        }
        None => queries.clone(),
    };
    manifest.options = json!({ "k": a.k });
    let query_reps = representations(&model, &queries)?;
    let coll_reps = representations(&model, &collection)?;
    let mut out = String::new();
    for (i, q) in query_reps.iter().enumerate() {
        let r = cosine_retrieve(q, &coll_reps, a.k)?;
        let record = json!({
            "query": i,
            "ids": r.ranking.ids,
            "scores": r.ranking.scores,
            "truncated_k": r.truncated_k,
        });
        writeln!(out, "{record}").expect("string write");
    }
    let dir = manifest.create_run_dir(&a.out.out_dir)?;
    emit(&dir, "retrieval.records", &out)
}

fn describe(vocab: &JointVocabulary, id: usize) -> serde_json::Value {
    match vocab.decode(id) {
        Some(Token::Visual { word, region }) => {
            json!({ "id": id, "visual_word": word, "region": region })
        }
        Some(Token::Annotation(_)) => json!({ "id": id, "word": vocab.annotation_word(id) }),
        None => json!({ "id": id }),
    }
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let (model, corpus, mut manifest) = load_inputs("inspect", &a.model, &a.corpus.corpus, a.corpus.format.into(), 0)?;
    model.check_corpus(&corpus)?;
    manifest.options = json!({ "class": a.class, "topics": a.topics, "words": a.words });
    let params = match &model.network {
        Network::Shallow { params, .. } if model.kind.is_supervised() => params,
        _ => return Err(Error::Config("inspect needs a supdocnade model".into())),
    };
    let vocab = &corpus.vocabulary;
    let assoc = class_word_associations(params, vocab, a.class, a.topics, a.words)?;
    let record = json!({
        "class": a.class,
        "topics": assoc.topics,
        "visual_words": assoc.visual_words.iter().map(|&id| describe(vocab, id)).collect::<Vec<_>>(),
        "annotation_words": assoc.annotation_words.iter().map(|&id| describe(vocab, id)).collect::<Vec<_>>(),
    });
    let dir = manifest.create_run_dir(&a.out.out_dir)?;
    emit(&dir, "associations.records", &format!("{record}\n"))
}

pub fn represent(a: RepresentArgs) -> Result<()> {
    let (model, corpus, mut manifest) =
        load_inputs("represent", &a.model, &a.corpus.corpus, a.corpus.format.into(), 0)?;
    model.check_corpus(&corpus)?;
    let reps = representations(&model, &corpus)?;
    let mut out = String::new();
    let name = match a.output {
        RepresentFormat::RecordLines => {
            manifest.options = json!({ "output": "record-lines" });
            for (i, (d, h)) in corpus.documents.iter().zip(&reps).enumerate() {
                writeln!(out, "{}", json!({ "doc": i, "labels": d.labels(), "h": h })).expect("string write");
            }
            "representations.records"
        }
        RepresentFormat::Svmlight => {
            manifest.options = json!({ "output": "svmlight" });
            for (d, h) in corpus.documents.iter().zip(&reps) {
                let labels: Vec<String> = d.labels().iter().map(|l| l.to_string()).collect();
                out.push_str(&labels.join(","));
                for (k, v) in h.iter().enumerate() {
                    if *v != 0.0 {
                        write!(out, " {}:{v}", k + 1).expect("string write");
                    }
                }
                out.push('\n');
            }
            "representations.svm"
        }
    };
    let dir = manifest.create_run_dir(&a.out.out_dir)?;
    emit(&dir, name, &out)
}

/// Hyperparameter lists; configurations are enumerated with earlier fields
/// varying slowest.
#[derive(Debug, Default, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    lambda: Option<Vec<f64>>,
    anno_weight: Option<Vec<f64>>,
    hidden: Option<Vec<usize>>,
    layers: Option<Vec<usize>>,
    dropout: Option<Vec<f64>>,
    avg_decay: Option<Vec<f64>>,
    lr: Option<Vec<f64>>,
    epochs: Option<Vec<usize>>,
    batch_size: Option<Vec<usize>>,
}

type Setter = Box<dyn Fn(&mut TrainConfig, usize)>;

impl GridSpec {
    fn axes(&self) -> Result<Vec<(usize, Setter)>> {
        fn axis<T: Clone + 'static>(
            values: &Option<Vec<T>>,
            name: &str,
            set: fn(&mut TrainConfig, T),
        ) -> Result<Option<(usize, Setter)>> {
            match values {
                None => Ok(None),
                Some(v) if v.is_empty() => Err(Error::Config(format!("grid list `{name}` is empty"))),
                Some(v) => {
                    let v = v.clone();
                    Ok(Some((
                        v.len(),
                        Box::new(move |c: &mut TrainConfig, i: usize| set(c, v[i].clone())),
                    )))
                }
            }
        }
        let axes = [
            axis(&self.lambda, "lambda", |c, v| c.lambda = v)?,
            axis(&self.anno_weight, "anno_weight", |c, v| c.rho = v)?,
            axis(&self.hidden, "hidden", |c, v| {
                let n = c.hidden.len();
                c.hidden = vec![v; n]
            })?,
            axis(&self.layers, "layers", |c, v| c.hidden = vec![c.hidden[0]; v])?,
            axis(&self.dropout, "dropout", |c, v| c.dropout_rate = v)?,
            axis(&self.avg_decay, "avg_decay", |c, v| c.averaging_decay = v)?,
            axis(&self.lr, "lr", |c, v| c.learning_rate = v)?,
            axis(&self.epochs, "epochs", |c, v| c.epochs = v)?,
            axis(&self.batch_size, "batch_size", |c, v| c.batch_size = v)?,
        ];
        let axes: Vec<_> = axes.into_iter().flatten().collect();
        if axes.is_empty() {
            return Err(Error::Config("grid has no hyperparameter lists".into()));
        }
        Ok(axes)
    }
}

fn grid_configs(base: &TrainConfig, spec: &GridSpec) -> Result<Vec<TrainConfig>> {
    let axes = spec.axes()?;
    let total: usize = axes.iter().map(|(n, _)| n).product();
    let mut out = Vec::with_capacity(total);
    for mut index in 0..total {
        let mut picks = vec![0; axes.len()];
        for (slot, (n, _)) in picks.iter_mut().zip(&axes).rev() {
            *slot = index % n;
            index /= n;
        }
        let mut c = base.clone();
        for (&i, (_, set)) in picks.iter().zip(&axes) {
            set(&mut c, i);
        }
        c.validate()?;
        out.push(c);
    }
    Ok(out)
}

pub fn grid(a: GridArgs) -> Result<()> {
    let base = a.flags.config();
    base.validate()?;
    let text = std::fs::read_to_string(&a.grid).map_err(|e| Error::io(format!("reading {}", a.grid.display()), e))?;
    let spec: GridSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.grid.display())))?;
    let configs = grid_configs(&base, &spec)?;
    if !(a.validation > 0.0 && a.validation < 1.0) {
        return Err(Error::Config(format!(
            "--validation must be in (0, 1), got {}",
            a.validation
        )));
    }

    let format: CorpusFormat = a.corpus.format.into();
    let corpus = parse_corpus(&a.corpus.corpus, format)?;
    check_regions(&corpus, a.flags.regions)?;
    if corpus.len() < 2 {
        return Err(Error::Data("grid search needs at least two documents".into()));
    }
    let mut manifest = RunManifest::new("grid", base.seed, format);
    manifest.config = Some(base.clone());
    manifest.add_corpus("labeled", &a.corpus.corpus, format)?;
    manifest.options = json!({ "grid": spec, "validation": a.validation, "regions": a.flags.regions });

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::stream(base.seed, rng::SPLIT, &[0]));
    let n_val = ((corpus.len() as f64 * a.validation).round() as usize).clamp(1, corpus.len() - 1);
    let (val_idx, fit_idx) = order.split_at(n_val);
    let (fit, val) = (corpus.subset(fit_idx), corpus.subset(val_idx));

    let kind = base.model_kind;
    let (metric, higher_is_better) = if !kind.is_supervised() {
        ("perplexity", false)
    } else if corpus.is_multi_label() {
        ("map", true)
    } else {
        ("accuracy", true)
    };
    let options = EvalOptions {
        annotations_k: 0,
        orderings_per_doc: 1,
        seed: base.seed,
    };
    let mut records = String::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, config) in configs.iter().enumerate() {
        let model = pretrain_then_finetune(None, &fit, config, None, |_| {})?.model;
        let report = evaluate(&model, &val, "validation", options)?;
        let value = report
            .records
            .iter()
            .find(|r| r.metric == metric)
            .map(|r| r.value)
            .ok_or_else(|| Error::Data(format!("no {metric} for configuration {i}")))?;
        writeln!(
            records,
            "{}",
            json!({ "index": i, "config": config, "metric": metric, "value": value })
        )
        .expect("string write");
        eprintln!("configuration {i}: {metric} = {value:.6}");
        let better = match best {
            None => true,
            Some((_, b)) => {
                if higher_is_better {
                    value > b
                } else {
                    value < b
                }
            }
        };
        if better {
            best = Some((i, value));
        }
    }
    let (best_index, best_value) = best.expect("grid is non-empty");

    let mut best_manifest = RunManifest::new("train", configs[best_index].seed, format);
    best_manifest.config = Some(configs[best_index].clone());
    best_manifest.add_corpus("labeled", &a.corpus.corpus, format)?;
    best_manifest.options = json!({ "regions": a.flags.regions, "model_out": "model.bin" });

    let dir = manifest.create_run_dir(&a.out.out_dir)?;
    write(&dir.join("grid.records"), &records)?;
    write(&dir.join("best_manifest.json"), best_manifest.to_json())?;
    println!(
        "{}",
        json!({ "best_index": best_index, "metric": metric, "value": best_value, "manifest": dir.join("best_manifest.json") })
    );
    eprintln!("{}", dir.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match a.variant {
        SynthVariant::Noisy => SyntheticSpec::default(),
        SynthVariant::Deterministic => SyntheticSpec::deterministic_annotations(),
    };
    if a.regions == 0 {
        return Err(Error::Config("--regions must be positive".into()));
    }
    spec.n_regions = a.regions;
    spec.specific_pairs = spec.specific_pairs.min(spec.n_visual * spec.n_regions / spec.n_classes);
    let mut rng = rng::stream(a.seed, "synth", &[]);
    let generator = Generator::new(spec, &mut rng)?;
    let format: CorpusFormat = a.format.into();
    let ext = match format {
        CorpusFormat::TextSparse => "txt",
        CorpusFormat::RecordLines => "jsonl",
    };
    for (name, n) in [("train", a.train), ("test", a.test)] {
        let corpus = generator.sample_corpus(n, &mut rng);
        let mut path = a.out.clone().into_os_string();
        path.push(format!("-{name}.{ext}"));
        let path = PathBuf::from(path);
        write_corpus(&corpus, &path, format)?;
        println!("{}", path.display());
    }
    Ok(())
}
