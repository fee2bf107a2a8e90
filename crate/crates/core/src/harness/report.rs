//! Report persistence: canonical JSON, one CSV per table, one SVG per
//! chart. Re-emitting the same report yields byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::svg::{bar_chart, line_chart, Series};
use crate::harness::{EvalReport, LfModelEval, McModelEval};
use crate::world::answer_letter;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Serialize with sorted keys (serde_json maps are BTree-backed) so the
/// output is canonical and byte-stable.
pub fn report_json(report: &EvalReport) -> Result<String> {
    let value = serde_json::to_value(report)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

fn mc_examples_csv(model: &McModelEval) -> String {
    let k = model.rows.first().map(|r| r.probs.len()).unwrap_or(0);
    let mut out = String::from("concept_id,bucket,score,truth");
    for t in 0..k {
        out.push_str(&format!(",prob_{}", answer_letter(t)));
    }
    out.push('\n');
    for r in &model.rows {
        out.push_str(&format!("{},{},{},{}", r.concept_id, r.bucket, r.score, answer_letter(r.truth)));
        for p in &r.probs {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

fn mc_buckets_csv(model: &McModelEval) -> String {
    let k = model.buckets.first().map(|b| b.mean_probs.len()).unwrap_or(0);
    let mut out = String::from("bucket,count,accuracy,abstain_rate,false_rate,hedge_tv");
    for t in 0..k {
        out.push_str(&format!(",mean_prob_{}", answer_letter(t)));
    }
    out.push('\n');
    for b in &model.buckets {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            b.bucket, b.count, b.accuracy, b.abstain_rate, b.false_rate, b.hedge_tv
        ));
        for p in &b.mean_probs {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

fn lf_examples_csv(model: &LfModelEval) -> String {
    let mut out = String::from("concept_id,bucket,score,expected_true,expected_false,abstain_prob\n");
    for r in &model.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.concept_id, r.bucket, r.score, r.expected_true, r.expected_false, r.abstain_prob
        ));
    }
    out
}

fn lf_buckets_csv(model: &LfModelEval) -> String {
    let mut out = String::from("bucket,count,true_facts,false_facts,fraction_true,abstain_rate\n");
    for b in &model.buckets {
        let ft = b.fraction_true.map(|f| f.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{ft},{}\n",
            b.bucket, b.count, b.true_facts, b.false_facts, b.abstain_rate
        ));
    }
    out
}

fn empty_bucket_warnings(empty: &[usize]) -> Vec<String> {
    empty.iter().map(|b| format!("bucket {b} is empty")).collect()
}

/// Write report.json plus per-table CSVs and per-chart SVGs into
/// `out_dir`. Returns the written paths in a fixed order.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: &str, written: &mut Vec<PathBuf>| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, contents)?;
        written.push(path);
        Ok(())
    };

    emit("report.json", &report_json(report)?, &mut written)?;

    for model in &report.mc_models {
        emit(&format!("{}_examples.csv", model.name), &mc_examples_csv(model), &mut written)?;
        emit(&format!("{}_buckets.csv", model.name), &mc_buckets_csv(model), &mut written)?;
        let warnings = empty_bucket_warnings(&model.empty_buckets);
        let curves = vec![
            Series {
                name: "accuracy".into(),
                points: model.buckets.iter().map(|b| (b.bucket as f64, b.accuracy)).collect(),
            },
            Series {
                name: "abstain_rate".into(),
                points: model.buckets.iter().map(|b| (b.bucket as f64, b.abstain_rate)).collect(),
            },
            Series {
                name: "false_rate".into(),
                points: model.buckets.iter().map(|b| (b.bucket as f64, b.false_rate)).collect(),
            },
            Series {
                name: "hedge_tv".into(),
                points: model.buckets.iter().map(|b| (b.bucket as f64, b.hedge_tv)).collect(),
            },
        ];
        emit(
            &format!("{}_curves.svg", model.name),
            &line_chart(
                &format!("{} by unfamiliarity bucket", model.name),
                "unfamiliarity bucket",
                "rate",
                &curves,
                &warnings,
            ),
            &mut written,
        )?;
        let k = model.buckets.first().map(|b| b.mean_probs.len()).unwrap_or(0);
        let dist_series: Vec<Series> = (0..k)
            .map(|t| Series {
                name: format!("P({})", answer_letter(t)),
                points: model.buckets.iter().map(|b| (b.bucket as f64, b.mean_probs[t])).collect(),
            })
            .collect();
        emit(
            &format!("{}_mean_dist.svg", model.name),
            &line_chart(
                &format!("{} mean predicted distribution", model.name),
                "unfamiliarity bucket",
                "probability",
                &dist_series,
                &warnings,
            ),
            &mut written,
        )?;
    }

    for model in &report.lf_models {
        emit(&format!("{}_examples.csv", model.name), &lf_examples_csv(model), &mut written)?;
        emit(&format!("{}_buckets.csv", model.name), &lf_buckets_csv(model), &mut written)?;
    }
    if !report.lf_models.is_empty() {
        let warnings: Vec<String> = report
            .lf_models
            .iter()
            .flat_map(|m| empty_bucket_warnings(&m.empty_buckets))
            .collect();
        for (metric, accessor) in [
            ("true_facts", (|b: &crate::harness::LfBucketRow| b.true_facts) as fn(&_) -> f64),
            ("false_facts", |b| b.false_facts),
        ] {
            let series: Vec<Series> = report
                .lf_models
                .iter()
                .map(|m| Series {
                    name: m.name.clone(),
                    points: m.buckets.iter().map(|b| (b.bucket as f64, accessor(b))).collect(),
                })
                .collect();
            emit(
                &format!("{metric}.svg"),
                &line_chart(
                    &format!("{metric} per response by unfamiliarity bucket"),
                    "unfamiliarity bucket",
                    metric,
                    &series,
                    &warnings,
                ),
                &mut written,
            )?;
        }
    }

    if !report.calibrations.is_empty() {
        let mut csv = String::from("rm,bucket,count,mean_predicted,mean_true,gap\n");
        let mut series = Vec::new();
        for named in &report.calibrations {
            for b in &named.calibration.buckets {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    named.name, b.bucket, b.count, b.mean_predicted, b.mean_true, b.gap
                ));
            }
            series.push(Series {
                name: format!("{} predicted", named.name),
                points: named
                    .calibration
                    .buckets
                    .iter()
                    .map(|b| (b.bucket as f64, b.mean_predicted))
                    .collect(),
            });
        }
        if let Some(first) = report.calibrations.first() {
            series.push(Series {
                name: "ground truth".into(),
                points: first
                    .calibration
                    .buckets
                    .iter()
                    .map(|b| (b.bucket as f64, b.mean_true))
                    .collect(),
            });
        }
        emit("calibration.csv", &csv, &mut written)?;
        emit(
            "calibration.svg",
            &line_chart(
                "reward model calibration",
                "unfamiliarity bucket",
                "mean reward",
                &series,
                &[],
            ),
            &mut written,
        )?;
    }

    if !report.rm_data.is_empty() {
        let mut csv =
            String::from("dataset,bucket,count,mean_reward,bucket_spearman,per_example_spearman\n");
        for s in &report.rm_data {
            let mut mean_iter = s.bucket_mean_rewards.iter();
            for (b, &count) in s.bucket_counts.iter().enumerate() {
                let mean = if count > 0 {
                    mean_iter.next().map(|m| m.to_string()).unwrap_or_default()
                } else {
                    String::new()
                };
                csv.push_str(&format!(
                    "{},{b},{count},{mean},{},{}\n",
                    s.name, s.bucket_spearman, s.per_example_spearman
                ));
            }
        }
        emit("rm_data.csv", &csv, &mut written)?;
    }

    if !report.fraction_true.is_empty() {
        let mut csv = String::from("model,true_facts,false_facts,fraction_true\n");
        for row in &report.fraction_true {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                row.model,
                row.true_facts,
                row.false_facts,
                row.fraction_true.map(|f| f.to_string()).unwrap_or_default()
            ));
        }
        emit("fraction_true.csv", &csv, &mut written)?;
        let labels: Vec<String> = report.fraction_true.iter().map(|r| r.model.clone()).collect();
        let values: Vec<f64> =
            report.fraction_true.iter().map(|r| r.fraction_true.unwrap_or(0.0)).collect();
        emit(
            "fraction_true.svg",
            &bar_chart("fraction of true facts", &labels, &values),
            &mut written,
        )?;
    }

    if !report.rl_logs.is_empty() {
        let mut csv = String::from("run,iteration,mean_reward,kl_to_init,abstain_rate\n");
        for named in &report.rl_logs {
            for row in &named.log.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    named.name, row.iteration, row.mean_reward, row.kl_to_init, row.abstain_rate
                ));
            }
        }
        emit("rl_log.csv", &csv, &mut written)?;
    }

    Ok(written)
}
