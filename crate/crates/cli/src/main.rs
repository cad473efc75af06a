use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use sevlogit::data::{load_dataset, load_encoded_dataset, CodingSchema};
use sevlogit::model::{validate_spec, IssueSeverity, ModelSpec};
use sevlogit::post::{effects_report, marginal_effect};
use sevlogit::report::{compare_models, FitReport, ModelSummary, RunManifest, TransferReport};
use sevlogit::{maximize, transferability_test, ChoiceDataset, TruthConfig};

#[derive(Parser)]
#[command(name = "sevlogit", version, about = "Mixed logit models for crash injury severity")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a model and write its report.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Structured report; a text rendering is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Coding schema for raw files, or `default` for the bundled one.
        /// Without it the data must already be dummy-coded.
        #[arg(long)]
        schema: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Goodness of fit and likelihood-ratio tests across reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Degrees of freedom for each consecutive pair.
        #[arg(long, value_delimiter = ',')]
        df: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pooled-versus-split transferability test.
    Transfer {
        pooled: PathBuf,
        group1: PathBuf,
        group2: PathBuf,
        #[arg(long)]
        df: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a dataset from a truth file.
    Simulate {
        #[arg(long)]
        truth: PathBuf,
        /// Dummy-coded CSV; the truth is written alongside as `<out>.truth.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Marginal effect of one dummy under a fitted model.
    Effects {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variable: String,
        #[arg(long)]
        schema: Option<String>,
    },
}

enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(e.into()),
        },
        None => run(cli.command),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Fit {
            data,
            spec,
            out,
            schema,
            seed,
            draws,
        } => cmd_fit(&data, &spec, &out, schema.as_deref(), seed, draws),
        Command::Compare { reports, df, out } => cmd_compare(&reports, df.as_deref(), out.as_deref()),
        Command::Transfer {
            pooled,
            group1,
            group2,
            df,
            alpha,
            out,
        } => cmd_transfer(&pooled, &group1, &group2, df, alpha, out.as_deref()),
        Command::Simulate { truth, out, seed } => cmd_simulate(&truth, &out, seed),
        Command::Effects {
            report,
            data,
            variable,
            schema,
        } => cmd_effects(&report, &data, &variable, schema.as_deref()),
    }
}

fn load_data(path: &Path, schema: Option<&str>, spec: &ModelSpec) -> Result<ChoiceDataset> {
    let (data, report) = match schema {
        Some("default") => load_dataset(path, &CodingSchema::rear_end_default()),
        Some(s) => load_dataset(path, &CodingSchema::from_path(s)?),
        None => load_encoded_dataset(path, &spec.alternatives, spec.base_alternative),
    }
    .with_context(|| format!("loading {}", path.display()))?;
    if report.dropped > 0 {
        eprintln!(
            "loaded {}: {} rows read, {} kept, {} dropped for unknown values",
            path.display(),
            report.rows_read,
            report.kept,
            report.dropped
        );
    }
    Ok(data)
}

fn text_path(out: &Path) -> PathBuf {
    out.with_extension("txt")
}

fn manifest_header(m: &RunManifest) -> String {
    let mut s = format!(
        "# {} {}\n# command: {}\n# inputs: {}\n",
        env!("CARGO_PKG_NAME"),
        m.tool_version,
        m.command,
        m.inputs.join(", ")
    );
    if let Some(h) = &m.spec_hash {
        s.push_str(&format!("# spec sha256: {h}\n"));
    }
    if let Some(seed) = m.seed {
        s.push_str(&format!("# seed: {seed}\n"));
    }
    s.push_str(&format!("# started: {}  finished: {}\n", m.started_at, m.finished_at));
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_fit(
    data_path: &Path,
    spec_path: &Path,
    out: &Path,
    schema: Option<&str>,
    seed: Option<u64>,
    draws: Option<usize>,
) -> Result<Outcome> {
    let mut spec = ModelSpec::from_path(spec_path).with_context(|| format!("reading spec {}", spec_path.display()))?;
    if let Some(s) = seed {
        spec.draws.seed = s;
    }
    if let Some(d) = draws {
        spec.draws.n_draws = d;
    }
    let mut manifest = RunManifest::new("fit", &[data_path, spec_path], Some(&spec), Some(spec.draws.seed));
    let data = load_data(data_path, schema, &spec)?;

    let validation = validate_spec(&spec, &data);
    for issue in &validation.issues {
        let tag = match issue.severity {
            IssueSeverity::Error => "error",
            IssueSeverity::Warning => "warning",
        };
        eprintln!("{tag}: {}", issue.message);
    }
    if !validation.is_ok() {
        bail!("the model specification does not match the data");
    }

    let fit = maximize(&spec, &data)?;
    let effects = effects_report(&fit, &data)?;
    manifest = manifest.finish();
    let report = FitReport::new(&fit, Some(effects), manifest.clone());
    write(out, &report.to_json()?)?;
    let text = format!("{}{}", manifest_header(&manifest), report.render_text());
    write(&text_path(out), &text)?;
    print!("{}", report.render_text());

    if fit.converged {
        Ok(Outcome::Done)
    } else {
        eprintln!(
            "warning: no convergence after {} iterations; report written to {}",
            fit.iterations,
            out.display()
        );
        Ok(Outcome::NotConverged)
    }
}

fn read_report(path: &Path) -> Result<FitReport<f64>> {
    FitReport::from_path(path).with_context(|| format!("reading report {}", path.display()))
}

fn label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_compare(paths: &[PathBuf], df: Option<&[usize]>, out: Option<&Path>) -> Result<Outcome> {
    let summaries = paths
        .iter()
        .map(|p| Ok(ModelSummary::from_report(&label(p), &read_report(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let comparison = compare_models(&summaries, df)?;
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest::new("compare", &inputs, None, None);
    print!("{}", comparison.render_text());
    if let Some(out) = out {
        let doc = json!({ "manifest": manifest, "comparison": comparison });
        write(out, &serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(Outcome::Done)
}

fn cmd_transfer(pooled: &Path, g1: &Path, g2: &Path, df: usize, alpha: f64, out: Option<&Path>) -> Result<Outcome> {
    let [p, a, b] = [pooled, g1, g2].map(|path| read_report(path).map(|r| ModelSummary::from_report(&label(path), &r)));
    let (p, a, b) = (p?, a?, b?);
    let test = transferability_test(p.ll_convergence, a.ll_convergence, b.ll_convergence, df)?;
    let report = TransferReport::new(p, a, b, test, alpha);
    print!("{}", report.render_text());
    if let Some(out) = out {
        let manifest = RunManifest::new("transfer", &[pooled, g1, g2], None, None);
        let doc = json!({ "manifest": manifest, "transfer": report });
        write(out, &serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(Outcome::Done)
}

fn cmd_simulate(truth_path: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let mut truth = TruthConfig::from_path(truth_path).with_context(|| format!("reading truth {}", truth_path.display()))?;
    if let Some(s) = seed {
        truth.seed = s;
    }
    let data: ChoiceDataset = sevlogit::generate_dataset(&truth)?;
    data.write_encoded_csv(out)?;
    let manifest = RunManifest::new("simulate", &[truth_path], Some(&truth.spec), Some(truth.seed)).finish();
    let truth_doc: serde_json::Value = serde_json::from_str(&truth.to_json()?)?;
    let doc = json!({ "manifest": manifest, "truth": truth_doc });
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".truth.json");
    write(Path::new(&sidecar), &serde_json::to_string_pretty(&doc)?)?;
    let shares = data.choice_shares();
    println!(
        "wrote {} observations to {}; choice shares {}",
        data.len(),
        out.display(),
        data.alternative_names()
            .iter()
            .zip(shares)
            .map(|(a, s)| format!("{a} {s:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(Outcome::Done)
}

fn cmd_effects(report_path: &Path, data_path: &Path, variable: &str, schema: Option<&str>) -> Result<Outcome> {
    let fit = read_report(report_path)?.to_fit_result()?;
    let data = load_data(data_path, schema, &fit.spec)?;
    let effects = marginal_effect(&fit, &data, variable)?;
    println!("Marginal effect of {variable}");
    for (alt, m) in fit.spec.alternatives.iter().zip(&effects) {
        println!("  {alt:<12} {m:>10.4}");
    }
    Ok(Outcome::Done)
}
