use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use mcboost::consistency::{sweep, SweepConfig};
use mcboost::data::{
    confusion_matrix, error_standard_error, misclassification_error, read_delimited, Delimiter,
    LabelColumn,
};
use mcboost::{
    fit_adaboost_ml, fit_gentleboost, staged_metrics, synth_blobs, AdaMlConfig, Dataset, Error,
    FitConfig, GentleConfig, LabelEncoder, Loss, MarginModel, Model, ReadOptions, StageMetrics,
    SynthSpec,
};

use crate::{
    Algorithm, BenchArgs, ConsistencyArgs, CurveArgs, DelimiterArg, EvaluateArgs, FitArgs,
    InputArgs, TrainArgs,
};

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numeric(String),
    Verification(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Verification(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric failure: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

const SYNTH_PREFIX: &str = "synth:";

fn parse_synth(source: &str, default_seed: u64) -> Outcome<SynthSpec> {
    let body = &source[SYNTH_PREFIX.len()..];
    let (mut m, mut n, mut d, mut sep, mut seed) = (None, None, None, None, default_seed);
    let bad = |msg: String| Failure::Input(format!("{source:?}: {msg}"));
    for pair in body.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, found {pair:?}")))?;
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| bad(format!("bad value for {key}")))
        };
        match key {
            "m" => m = Some(int()?),
            "n" => n = Some(int()?),
            "d" => d = Some(int()?),
            "sep" => {
                sep = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| bad("bad value for sep".into()))?,
                )
            }
            "seed" => {
                seed = value
                    .parse()
                    .map_err(|_| bad("bad value for seed".into()))?
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    match (m, n, d, sep) {
        (Some(classes), Some(samples), Some(dims), Some(separation)) => Ok(SynthSpec {
            classes,
            samples,
            dims,
            separation,
            seed,
        }),
        _ => Err(bad("keys m, n, d and sep are required".into())),
    }
}

fn read_options(input: &InputArgs, path: &Path) -> Outcome<ReadOptions> {
    let label_column = match input.label_column.as_str() {
        "last" => LabelColumn::Last,
        s => LabelColumn::Index(s.parse().map_err(|_| {
            Failure::Input(format!(
                "--label-column expects an index or \"last\", found {s:?}"
            ))
        })?),
    };
    let delimiter = match input.delimiter {
        DelimiterArg::Auto => Delimiter::detect(path)?,
        DelimiterArg::Comma => Delimiter::Comma,
        DelimiterArg::Whitespace => Delimiter::Whitespace,
    };
    Ok(ReadOptions {
        delimiter,
        label_column,
        skip_header: input.header,
    })
}

struct Loaded {
    data: Dataset,
    /// Generator parameters and Bayes error for `synth:` sources.
    manifest: Option<String>,
}

impl Loaded {
    fn print_manifest(&self) {
        if let Some(m) = &self.manifest {
            println!("source={m}");
        }
    }
}

/// Loads a data source, encoding labels through `encoder` when given.
fn load(source: &str, input: &InputArgs, encoder: Option<&LabelEncoder>) -> Outcome<Loaded> {
    if source.starts_with(SYNTH_PREFIX) {
        let spec = parse_synth(source, input.seed)?;
        let (data, bayes) = synth_blobs(&spec)?;
        return Ok(Loaded {
            data: match encoder {
                Some(e) => data.reencode(e)?,
                None => data,
            },
            manifest: Some(format!("{spec} bayes_error={bayes:?}")),
        });
    }
    let path = Path::new(source);
    let table = read_delimited(path, &read_options(input, path)?)?;
    Ok(Loaded {
        data: match encoder {
            Some(e) => table.encode_with(e)?,
            None => table.encode()?,
        },
        manifest: None,
    })
}

fn check_schema(model: &dyn MarginModel, data: &Dataset) -> Outcome {
    if data.n_features() != model.n_features() {
        return Err(Failure::Input(format!(
            "feature dimension mismatch: model expects d={}, data has d={}",
            model.n_features(),
            data.n_features()
        )));
    }
    Ok(())
}

fn fit(args: &FitArgs, data: &Dataset) -> Outcome<Model> {
    Ok(match args.algorithm {
        Algorithm::Gentle => {
            let cfg = GentleConfig {
                tree: args
                    .leaves
                    .map(FitConfig::with_max_leaves)
                    .unwrap_or_default(),
                ..GentleConfig::default()
            };
            fit_gentleboost(data, args.rounds, &cfg)?.into()
        }
        Algorithm::Adaml => {
            let cfg = AdaMlConfig {
                max_leaves: args.leaves,
                ..AdaMlConfig::default()
            };
            fit_adaboost_ml(data, args.rounds, &cfg)?.into()
        }
    })
}

struct Evaluation {
    predicted: Vec<usize>,
    error: f64,
    empirical_risk: f64,
    mean_true_class_prob: f64,
}

fn evaluate_model(model: &dyn MarginModel, data: &Dataset) -> Outcome<Evaluation> {
    let loss = model.loss();
    let mut predicted = Vec::with_capacity(data.n_samples());
    let (mut risk, mut prob) = (0.0, 0.0);
    for (i, &y) in data.labels.iter().enumerate() {
        let x = data.row(i).to_vec();
        let f = model.margins(&x)?;
        predicted.push(f.argmax());
        risk += loss.value(f[y]);
        prob += model.predict_proba(&x)?[y];
    }
    let n = data.n_samples() as f64;
    Ok(Evaluation {
        error: misclassification_error(&predicted, &data.labels)?,
        predicted,
        empirical_risk: risk / n,
        mean_true_class_prob: prob / n,
    })
}

fn print_shape(data: &Dataset) {
    println!("n={}", data.n_samples());
    println!("d={}", data.n_features());
    println!("m={}", data.n_classes());
}

pub fn train(args: &TrainArgs) -> Outcome {
    let loaded = load(&args.data, &args.input, None)?;
    let data = &loaded.data;
    let model = fit(&args.fit, data)?;
    let eval = evaluate_model(model.as_margin_model(), data)?;
    model.save(&args.output)?;
    loaded.print_manifest();
    print_shape(data);
    println!("algorithm={}", model.algorithm_name());
    println!("rounds={}", args.fit.rounds);
    println!("stages={}", model.as_margin_model().n_stages());
    println!("train_error={:?}", eval.error);
    println!("empirical_risk={:?}", eval.empirical_risk);
    println!("model={}", args.output.display());
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Outcome {
    let model = Model::load(&args.model)?;
    let margin_model = model.as_margin_model();
    let loaded = load(&args.data, &args.input, Some(margin_model.encoder()))?;
    let data = &loaded.data;
    check_schema(margin_model, data)?;
    let eval = evaluate_model(margin_model, data)?;
    loaded.print_manifest();
    print_shape(data);
    println!("algorithm={}", model.algorithm_name());
    println!("test_error={:?}", eval.error);
    println!(
        "std_error={:?}",
        error_standard_error(eval.error, data.n_samples())
    );
    println!("mean_true_class_prob={:?}", eval.mean_true_class_prob);
    let names = margin_model.encoder().names();
    println!("confusion_columns={}", names.join(","));
    let counts = confusion_matrix(&eval.predicted, &data.labels, data.n_classes());
    for (name, row) in names.iter().zip(counts) {
        let row: Vec<String> = row.iter().map(usize::to_string).collect();
        println!("confusion[{name}]={}", row.join(","));
    }
    Ok(())
}

pub fn curve(args: &CurveArgs) -> Outcome {
    let train = load(&args.train, &args.input, None)?;
    let test = load(&args.test, &args.input, Some(&train.data.encoder))?;
    for manifest in [&train.manifest, &test.manifest].into_iter().flatten() {
        info!("source={manifest}");
    }
    let (train, test) = (train.data, test.data);
    let model = fit(&args.fit, &train)?;
    let model = model.as_margin_model();
    check_schema(model, &test)?;
    let pad = |mut stages: Vec<StageMetrics>, data: &Dataset| -> Outcome<Vec<StageMetrics>> {
        // Early-stopped models keep their final value for the remaining rounds.
        let last = match stages.last() {
            Some(&s) => s,
            None => {
                let e = evaluate_model(model, data)?;
                StageMetrics {
                    error: e.error,
                    empirical_risk: e.empirical_risk,
                }
            }
        };
        stages.resize(args.fit.rounds, last);
        Ok(stages)
    };
    let train_curve = pad(staged_metrics(model, &train)?, &train)?;
    let test_curve = pad(staged_metrics(model, &test)?, &test)?;

    let mut table = String::from("round,train_error,test_error,empirical_risk\n");
    for (k, (tr, te)) in train_curve.iter().zip(&test_curve).enumerate() {
        table.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            k + 1,
            tr.error,
            te.error,
            tr.empirical_risk
        ));
    }
    if test_curve.len() > 21 {
        let (early, last) = (test_curve[20].error, test_curve[test_curve.len() - 1].error);
        if last > early {
            warn!("test error rose from {early} at round 21 to {last} at the final round");
        }
    }
    match &args.output {
        Some(path) => write_file(path, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn consistency(args: &ConsistencyArgs) -> Outcome {
    let losses: Vec<Loss> = if args.loss == "all" {
        Loss::ALL.to_vec()
    } else {
        let names: Vec<&str> = Loss::ALL.iter().map(|l| l.name()).collect();
        vec![Loss::from_name(&args.loss).ok_or_else(|| {
            Failure::Input(format!(
                "unknown loss {:?}; expected \"all\" or one of {}",
                args.loss,
                names.join(", ")
            ))
        })?]
    };
    if args.classes < 2 {
        return Err(Failure::Input("--classes must be at least 2".into()));
    }
    if args.trials == 0 {
        return Err(Failure::Input("--trials must be at least 1".into()));
    }
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        return Err(Failure::Input("--tolerance must be nonnegative".into()));
    }
    let cfg = SweepConfig {
        classes: args.classes,
        trials: args.trials,
        seed: args.seed,
        tolerance: args.tolerance,
    };
    let mut failed = Vec::new();
    for loss in losses {
        let r = sweep(loss, &cfg)?;
        let deviation = r
            .max_closed_form_deviation
            .map_or_else(|| "na".to_string(), |d| format!("{d:?}"));
        println!(
            "loss={} m={} trials={} argmax_matches={} passed={} max_roundtrip_error={:?} max_closed_form_deviation={}",
            loss, cfg.classes, r.trials, r.argmax_matches, r.passes, r.max_roundtrip_error, deviation
        );
        if !r.all_passed() {
            failed.push(loss.name());
        }
    }
    if failed.is_empty() {
        println!("result=pass");
        Ok(())
    } else {
        println!("result=fail");
        Err(Failure::Verification(format!(
            "trials failed for {}",
            failed.join(", ")
        )))
    }
}

/// Split sizes and published error rates of one benchmark dataset.
struct Reference {
    name: &'static str,
    n_train: usize,
    n_test: usize,
    d: usize,
    m: usize,
    adaml_error: f64,
    gentle_error: f64,
}

const REFERENCES: [Reference; 5] = [
    Reference {
        name: "waveform",
        n_train: 300,
        n_test: 5000,
        d: 21,
        m: 3,
        adaml_error: 0.1830,
        gentle_error: 0.1774,
    },
    Reference {
        name: "vowel",
        n_train: 528,
        n_test: 462,
        d: 10,
        m: 11,
        adaml_error: 0.4718,
        gentle_error: 0.4567,
    },
    Reference {
        name: "optdigits",
        n_train: 3823,
        n_test: 1797,
        d: 64,
        m: 10,
        adaml_error: 0.0540,
        gentle_error: 0.0501,
    },
    Reference {
        name: "segmentation",
        n_train: 210,
        n_test: 2100,
        d: 19,
        m: 7,
        adaml_error: 0.0542,
        gentle_error: 0.0538,
    },
    Reference {
        name: "pendigits",
        n_train: 7494,
        n_test: 3498,
        d: 16,
        m: 10,
        adaml_error: 0.0409,
        gentle_error: 0.0369,
    },
];

struct BenchRow {
    dataset: &'static str,
    algorithm: &'static str,
    n_train: usize,
    n_test: usize,
    d: usize,
    m: usize,
    test_error: f64,
    std_error: f64,
    published_error: f64,
}

fn load_split(path: &Path, encoder: Option<&LabelEncoder>) -> Outcome<Dataset> {
    let opts = ReadOptions {
        delimiter: Delimiter::detect(path)?,
        ..ReadOptions::default()
    };
    let table = read_delimited(path, &opts)?;
    Ok(match encoder {
        Some(e) => table.encode_with(e)?,
        None => table.encode()?,
    })
}

pub fn bench(args: &BenchArgs) -> Outcome {
    let mut loaded = Vec::new();
    for reference in &REFERENCES {
        let path =
            |ext: &str| -> PathBuf { args.data_dir.join(format!("{}.{ext}", reference.name)) };
        let (train_path, test_path) = (path("train"), path("test"));
        if let Some(missing) = [&train_path, &test_path].into_iter().find(|p| !p.is_file()) {
            warn!(
                "skipping {}: {} not found",
                reference.name,
                missing.display()
            );
            continue;
        }
        let train = load_split(&train_path, None)?;
        let test = load_split(&test_path, Some(&train.encoder))?;
        let shape = (
            train.n_samples(),
            test.n_samples(),
            train.n_features(),
            train.n_classes(),
        );
        let expected = (
            reference.n_train,
            reference.n_test,
            reference.d,
            reference.m,
        );
        if shape != expected {
            warn!(
                "{}: (n_train, n_test, d, m) = {shape:?}, expected {expected:?}",
                reference.name
            );
        }
        loaded.push((reference, train, test));
    }
    if loaded.is_empty() {
        return Err(Failure::Input(format!(
            "no benchmark datasets found in {}",
            args.data_dir.display()
        )));
    }

    let cells: Vec<_> = loaded
        .iter()
        .flat_map(|cell| args.algorithms.iter().map(move |&a| (cell, a)))
        .collect();
    let rows = cells
        .par_iter()
        .map(
            |((reference, train, test), algorithm)| -> Outcome<BenchRow> {
                let fit_args = FitArgs {
                    algorithm: *algorithm,
                    rounds: args.rounds,
                    leaves: None,
                };
                let model = fit(&fit_args, train)?;
                let model_ref = model.as_margin_model();
                check_schema(model_ref, test)?;
                let predicted = model_ref.predict_rows(test.features.view())?;
                let test_error = misclassification_error(&predicted, &test.labels)?;
                info!(
                    "{} {}: {test_error}",
                    reference.name,
                    model.algorithm_name()
                );
                Ok(BenchRow {
                    dataset: reference.name,
                    algorithm: model.algorithm_name(),
                    n_train: train.n_samples(),
                    n_test: test.n_samples(),
                    d: train.n_features(),
                    m: train.n_classes(),
                    test_error,
                    std_error: error_standard_error(test_error, test.n_samples()),
                    published_error: match algorithm {
                        Algorithm::Adaml => reference.adaml_error,
                        Algorithm::Gentle => reference.gentle_error,
                    },
                })
            },
        )
        .collect::<Outcome<Vec<_>>>()?;

    println!(
        "{:<13} {:<12} {:>7} {:>6} {:>3} {:>3} {:>10} {:>9} {:>9} {:>7}",
        "dataset",
        "algorithm",
        "n_train",
        "n_test",
        "d",
        "m",
        "test_error",
        "std_error",
        "published",
        "delta"
    );
    let mut csv = String::from(
        "dataset,algorithm,n_train,n_test,d,m,test_error,std_error,published_error,delta\n",
    );
    for r in &rows {
        let delta = r.test_error - r.published_error;
        println!(
            "{:<13} {:<12} {:>7} {:>6} {:>3} {:>3} {:>9.2}% {:>8.2}% {:>8.2}% {:>+7.2}",
            r.dataset,
            r.algorithm,
            r.n_train,
            r.n_test,
            r.d,
            r.m,
            100.0 * r.test_error,
            100.0 * r.std_error,
            100.0 * r.published_error,
            100.0 * delta
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:?},{:?},{:?},{:?}\n",
            r.dataset,
            r.algorithm,
            r.n_train,
            r.n_test,
            r.d,
            r.m,
            r.test_error,
            r.std_error,
            r.published_error,
            delta
        ));
    }
    if let Some(path) = &args.output {
        write_file(path, &csv)?;
    }
    Ok(())
}
