use std::fs::{self, File};
use std::path::{Path, PathBuf};

use compmap_core::bundle::{load_bundle, save_bundle, DatasetBundle, InputSource, Split};
use compmap_core::composition::{
    load_model, make_projection_baseline, save_model, train_contrastive, train_logreg, train_with_projection,
    CompositionModel, LinearCompositionModel, ProjectionKind, TrainConfig,
};
use compmap_core::czsl::{evaluate_czsl, CzslEvalConfig, SweepResult};
use compmap_core::fewshot::{eval_episodes, eval_fullshot, sample_episodes, ShotConfig};
use compmap_core::matrix::Matrix;
use compmap_core::report::{delta_table, write_delta_csv, Report};
use compmap_core::synth::{generate, SynthConfig};
use compmap_core::weights::{export_weight_profiles, topk_alignment, write_profiles_csv};
use compmap_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{AblationInput, Command, Trainer};

pub struct Outcome {
    pub report_path: Option<PathBuf>,
    pub summary: String,
}

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::GenSynth { config, out, common } => {
            let mut cfg: SynthConfig = load_config(SynthConfig::default(), config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let bundle = generate(&cfg)?;
            save_bundle(&bundle, &out)?;
            let results = json!({
                "out": out,
                "samples": bundle.n_samples(),
                "primitives": bundle.vocab().n_primitives(),
                "composites": bundle.vocab().n_composites(),
                "seen": bundle.split().seen_set.len(),
                "candidates": bundle.split().candidate_set.len(),
            });
            let path = common.report.unwrap_or_else(|| out.join("report.json"));
            Report::new("gen-synth", cfg.seed, &cfg, &results)?.write(&path)?;
            Ok(Outcome {
                report_path: Some(path),
                summary: format!(
                    "wrote {} samples, {} primitives, {} composites to {}",
                    bundle.n_samples(),
                    bundle.vocab().n_primitives(),
                    bundle.vocab().n_composites(),
                    out.display()
                ),
            })
        }

        Command::Validate { bundle, report } => {
            let b = load_bundle(&bundle)?;
            let summary = format!(
                "ok: {} samples, {} primitives, {} composites ({} seen, {} candidates)",
                b.n_samples(),
                b.vocab().n_primitives(),
                b.vocab().n_composites(),
                b.split().seen_set.len(),
                b.split().candidate_set.len()
            );
            if let Some(path) = &report {
                let results = json!({ "valid": true, "samples": b.n_samples() });
                Report::new("validate", 0, &json!({ "bundle": bundle }), &results)?.write(path)?;
            }
            Ok(Outcome {
                report_path: report,
                summary,
            })
        }

        Command::Train {
            trainer,
            bundle,
            config,
            out,
            source,
            common,
        } => {
            let base = match trainer {
                Trainer::Logreg => TrainConfig::logreg(),
                Trainer::Contrastive => TrainConfig::contrastive(),
            };
            let mut cfg: TrainConfig = load_config(base, config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let source = InputSource::from(source);
            let b = load_bundle(&bundle)?;
            let rows = b.rows_in(Split::Train);
            let x = input_matrix(&b, &rows, source)?;
            let y: Vec<usize> = rows.iter().map(|&i| b.labels()[i]).collect();
            let (model, details) = match trainer {
                Trainer::Logreg => {
                    let fit = train_logreg(&x, &y, &cfg)?;
                    let d = json!({ "loss": fit.loss, "iterations": fit.iterations, "converged": fit.converged });
                    (CompositionModel::Linear(fit.model), d)
                }
                Trainer::Contrastive => {
                    let g = b
                        .embeddings()
                        .ok_or_else(|| Error::invalid("embeddings", "contrastive training needs composite embeddings"))?;
                    let fit = train_contrastive(&x, &y, g, &b.split().seen_set, &cfg)?;
                    let d = json!({ "loss": fit.loss_trajectory.last(), "loss_trajectory": fit.loss_trajectory });
                    (CompositionModel::DualProjection(fit.model), d)
                }
            };
            save_model(&model, &cfg, b.vocab().composites(), &out)?;
            let trainer_name = match trainer {
                Trainer::Logreg => "logreg",
                Trainer::Contrastive => "contrastive",
            };
            let config = json!({
                "trainer": trainer_name,
                "bundle": bundle,
                "source": source,
                "out": out,
                "train": cfg,
            });
            let results = json!({ "train_samples": rows.len(), "fit": details });
            let path = common.report.unwrap_or_else(|| out.join("report.json"));
            Report::new("train", cfg.seed, &config, &results)?.write(&path)?;
            Ok(Outcome {
                report_path: Some(path),
                summary: format!("trained {trainer_name} on {} samples; model in {}", rows.len(), out.display()),
            })
        }

        Command::EvalCzsl {
            bundle,
            model,
            world,
            intervene,
            topk,
            split,
            source,
            csv,
            common,
        } => {
            let b = load_bundle(&bundle)?;
            let (m, _) = load_model(&model)?;
            let cfg = CzslEvalConfig {
                world: world.into(),
                split: split.into(),
                source: source.into(),
                intervene,
                topk,
            };
            let result = evaluate_czsl(&b, &m, &cfg)?;
            if let Some(csv) = &csv {
                write_curve_csv(&result, csv)?;
            }
            let seed = common.seed.unwrap_or(0);
            let config = json!({ "bundle": bundle, "model": model, "eval": cfg });
            let path = common.report.unwrap_or_else(|| PathBuf::from("eval-czsl-report.json"));
            Report::new("eval-czsl", seed, &config, &result)?.write(&path)?;
            let aucs: Vec<String> = result.curves.iter().map(|c| format!("auc@{}={:.4}", c.k, c.auc)).collect();
            Ok(Outcome {
                report_path: Some(path),
                summary: format!(
                    "{} best_seen={:.4} best_unseen={:.4} best_hm={:.4}",
                    aucs.join(" "),
                    result.best_seen(),
                    result.best_unseen(),
                    result.best_hm()
                ),
            })
        }

        Command::EvalFewshot {
            bundle,
            n,
            k,
            q,
            tasks,
            intervene,
            train_on,
            full_shot,
            config,
            common,
        } => {
            let seed = common.seed.unwrap_or(0);
            let mut train: TrainConfig = load_config(TrainConfig::logreg(), config.as_deref())?;
            train.seed = seed;
            let shot = ShotConfig {
                train_source: train_on.into(),
                intervene,
                train,
            };
            let b = load_bundle(&bundle)?;
            let path = common.report.unwrap_or_else(|| PathBuf::from("eval-fewshot-report.json"));
            if full_shot {
                let r = eval_fullshot(&b, &shot)?;
                let config = json!({ "bundle": bundle, "full_shot": true, "shot": shot });
                Report::new("eval-fewshot", seed, &config, &r)?.write(&path)?;
                Ok(Outcome {
                    report_path: Some(path),
                    summary: format!(
                        "full-shot {}-way accuracy={:.4} on {} test samples",
                        r.classes, r.accuracy, r.test_samples
                    ),
                })
            } else {
                let specs = sample_episodes(&b, n, k, q, tasks, seed)?;
                let r = eval_episodes(&b, &specs, &shot)?;
                let config = json!({
                    "bundle": bundle, "full_shot": false, "n": n, "k": k, "q": q, "tasks": tasks, "shot": shot,
                });
                Report::new("eval-fewshot", seed, &config, &r)?.write(&path)?;
                Ok(Outcome {
                    report_path: Some(path),
                    summary: format!("{n}-way {k}-shot mean={:.4} std={:.4} over {tasks} tasks", r.mean, r.std),
                })
            }
        }

        Command::Delta {
            oracle_report,
            pred_report,
            csv,
            report,
        } => {
            let rows = delta_table(&Report::read(&oracle_report)?, &Report::read(&pred_report)?)?;
            if let Some(csv) = &csv {
                let f = File::create(csv).map_err(|e| Error::io(csv, e))?;
                write_delta_csv(&rows, f)?;
            }
            let config = json!({ "oracle_report": oracle_report, "pred_report": pred_report });
            let path = report.unwrap_or_else(|| PathBuf::from("delta-report.json"));
            Report::new("delta", 0, &config, &json!({ "rows": rows }))?.write(&path)?;
            let max = rows.iter().map(|r| r.delta.abs()).fold(0.0, f64::max);
            Ok(Outcome {
                report_path: Some(path),
                summary: format!("{} metrics, max |delta|={max:.4}", rows.len()),
            })
        }

        Command::AnalyzeWeights {
            bundle,
            model,
            composite,
            averaging,
            csv,
            report,
        } => {
            let b = load_bundle(&bundle)?;
            let (m, _) = load_model(&model)?;
            let linear = linear_view(&b, &m)?;
            let averaging = averaging.into();
            let alignment = topk_alignment(&linear, b.vocab(), averaging)?;
            let targets = if composite.is_empty() {
                linear.composites.clone()
            } else {
                composite
                    .iter()
                    .map(|name| {
                        b.vocab()
                            .composite_index(name)
                            .ok_or_else(|| Error::arg(format!("unknown composite `{name}`")))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let profiles = export_weight_profiles(&linear, b.vocab(), &targets)?;
            if let Some(csv) = &csv {
                let f = File::create(csv).map_err(|e| Error::io(csv, e))?;
                write_profiles_csv(&profiles, f)?;
            }
            let config = json!({ "bundle": bundle, "model": model, "composites": composite, "averaging": averaging });
            let results = json!({ "alignment": alignment, "profiles": profiles });
            let path = report.unwrap_or_else(|| PathBuf::from("analyze-weights-report.json"));
            Report::new("analyze-weights", 0, &config, &results)?.write(&path)?;
            Ok(Outcome {
                report_path: Some(path),
                summary: format!("top-k alignment={alignment:.4} over {} composites", linear.composites.len()),
            })
        }

        Command::AblateProjection {
            kind,
            bundle,
            dim,
            input,
            config,
            common,
        } => {
            let mut cfg: TrainConfig = load_config(TrainConfig::logreg(), config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let kind = ProjectionKind::from(kind);
            let b = load_bundle(&bundle)?;
            let source: Matrix<f32> = match input {
                AblationInput::Features => b
                    .features()
                    .cloned()
                    .ok_or_else(|| Error::invalid("features", "bundle has no raw feature matrix"))?,
                AblationInput::Activations => b.activations().data.clone(),
            };
            let dim = dim.unwrap_or(b.vocab().n_primitives());
            let train = b.rows_in(Split::Train);
            let x = source.select_rows(&train).map(|v| v as f64);
            let y: Vec<usize> = train.iter().map(|&i| b.labels()[i]).collect();
            let transform = make_projection_baseline(kind, source.cols(), dim, &cfg)?;
            let fit = train_with_projection(transform, &x, &y, &cfg)?;
            let test: Vec<usize> = b
                .rows_in(Split::Test)
                .into_iter()
                .filter(|&i| fit.model.row_of(b.labels()[i]).is_some())
                .collect();
            if test.is_empty() {
                return Err(Error::invalid("splits", "no test samples of trained composites"));
            }
            let correct = test
                .iter()
                .filter(|&&i| {
                    let z = fit.transform.apply(&source.row_f64(i));
                    fit.model.composites[fit.model.predict_row(&z)] == b.labels()[i]
                })
                .count();
            let accuracy = correct as f64 / test.len() as f64;
            let config = json!({ "bundle": bundle, "kind": kind, "dim": dim, "input": input, "train": cfg });
            let results = json!({
                "accuracy": accuracy,
                "loss": fit.loss,
                "input_dim": source.cols(),
                "output_dim": fit.transform.output_dim(),
                "test_samples": test.len(),
            });
            let path = common.report.unwrap_or_else(|| PathBuf::from("ablate-projection-report.json"));
            Report::new("ablate-projection", cfg.seed, &config, &results)?.write(&path)?;
            Ok(Outcome {
                report_path: Some(path),
                summary: format!("{kind:?} projection to {dim}: accuracy={accuracy:.4} on {} test samples", test.len()),
            })
        }
    }
}

/// Overlays the keys of a JSON config file onto `base`. Unknown keys are
/// rejected.
fn load_config<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let overlay: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    let mut merged = serde_json::to_value(&base).map_err(|e| Error::invalid("config", e.to_string()))?;
    let (Value::Object(dst), Value::Object(src)) = (&mut merged, overlay) else {
        return Err(Error::arg(format!("{}: config must be a JSON object", path.display())));
    };
    for (k, v) in src {
        if !dst.contains_key(&k) {
            return Err(Error::arg(format!("{}: unknown config key `{k}`", path.display())));
        }
        dst.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| Error::arg(format!("{}: {e}", path.display())))
}

fn input_matrix(b: &DatasetBundle, rows: &[usize], source: InputSource) -> Result<Matrix<f64>> {
    let data: Vec<Vec<f64>> = rows.iter().map(|&i| b.input_row(i, source)).collect();
    Matrix::from_rows(&data, b.vocab().n_primitives())
}

/// Linear weights of any model: dual-projection models are reduced over the
/// bundle's closed candidate set.
fn linear_view(b: &DatasetBundle, m: &CompositionModel) -> Result<LinearCompositionModel> {
    match m {
        CompositionModel::Linear(l) => Ok(l.clone()),
        CompositionModel::DualProjection(d) => {
            let g = b
                .embeddings()
                .ok_or_else(|| Error::invalid("embeddings", "dual-projection analysis needs composite embeddings"))?;
            d.reduce(g, &b.split().candidate_set)
        }
    }
}

fn write_curve_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut out = String::from("k,bias,acc_seen,acc_unseen\n");
    for c in &result.curves {
        for p in &c.points {
            out.push_str(&format!("{},{},{},{}\n", c.k, p.bias, p.acc_seen, p.acc_unseen));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
