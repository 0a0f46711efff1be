use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use flowgen_core::bench::{load_dataset, provider_from_spec, recall_sweep, run_eval, DomainMode, EvalOptions};
use flowgen_core::bpmn::{parse_bpmn, serialize_bpmn};
use flowgen_core::bpmn2py::decompile;
use flowgen_core::diff::{diff_ir, patch_bpmn, EditOp, EditScript};
use flowgen_core::generate::{Pipeline, PipelineConfig, ProviderSpec, Request, DEFAULT_MAX_TOKENS};
use flowgen_core::ir::{parse_ir, print_ir, print_stmt, Call, Stmt};
use flowgen_core::py2bpmn::compile;
use flowgen_core::retrieval::{load_catalog, retrieve_activities, Catalog, RetrieverConfig, RetrieverKind};

#[derive(Parser)]
#[command(name = "flowgen", version, about = "Workflow generation through a Python-syntax IR and BPMN 2.0")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Retriever {
    Ed,
    Lexical,
}

impl From<Retriever> for RetrieverKind {
    fn from(r: Retriever) -> Self {
        match r {
            Retriever::Ed => RetrieverKind::EditDistance,
            Retriever::Lexical => RetrieverKind::SimilarityBackend,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    In,
    Cross,
}

#[derive(Subcommand)]
enum Command {
    /// Compile an IR program to BPMN XML.
    Compile {
        /// IR file, or - for stdin.
        input: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Recover the IR program behind a BPMN document.
    Decompile {
        /// BPMN file, or - for stdin.
        input: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute the edit script turning one IR program into another.
    Diff {
        #[arg(long)]
        base: String,
        #[arg(long)]
        target: String,
        /// Print the script as JSON instead of one op per line.
        #[arg(long)]
        json: bool,
    },
    /// Apply a JSON edit script to a BPMN document.
    Patch {
        #[arg(long)]
        bpmn: String,
        #[arg(long)]
        script: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rank catalog activities for an utterance.
    Retrieve {
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, value_enum, default_value = "ed")]
        retriever: Retriever,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// IR program whose activities are always included.
        #[arg(long)]
        prior: Option<String>,
    },
    /// Generate a workflow (or update one) from an utterance.
    Generate {
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        catalog: PathBuf,
        /// Dataset directory used as the demonstration pool.
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        prior_bpmn: Option<String>,
        /// mock-table:<file>, mock-oracle:<dataset-dir> or http[:<endpoint>].
        #[arg(long)]
        provider: String,
        /// Case uid handed to mock providers.
        #[arg(long)]
        uid: Option<u64>,
        #[arg(long, default_value_t = 50)]
        activity_top_k: usize,
        #[arg(long, default_value_t = 5)]
        demo_top_k: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a provider on a benchmark dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        provider: String,
        #[arg(long, value_enum, default_value = "in")]
        domain: Domain,
        #[arg(long, value_enum, default_value = "ed")]
        activity_retriever: Retriever,
        #[arg(long, default_value_t = 50)]
        activity_top_k: usize,
        #[arg(long, value_enum, default_value = "lexical")]
        demo_retriever: Retriever,
        #[arg(long, default_value_t = 5)]
        demo_top_k: usize,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Worker threads (default: all processors, capped by the provider).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Also print activities recall at these top-k values, e.g. 10,50,100.
        #[arg(long, value_delimiter = ',')]
        recall_sweep: Vec<usize>,
    },
}

/// Bad flag values found after clap has parsed the command line.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn read_input(arg: &str) -> Result<String> {
    if arg == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
        Ok(s)
    } else {
        std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing stdout"),
    }
}

fn read_catalog(path: &Path) -> Result<Catalog> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_catalog(&text).with_context(|| format!("loading catalog {}", path.display()))
}

fn parse_provider(spec: &str) -> Result<ProviderSpec> {
    spec.parse::<ProviderSpec>()
        .map_err(|e| UsageError(e.to_string()).into())
}

fn top_k(flag: &str, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(UsageError(format!("--{flag} must be at least 1")).into());
    }
    Ok(k)
}

fn describe(op: &EditOp) -> String {
    let path = |p: &[usize]| format!("{p:?}");
    match op {
        EditOp::InsertStmt { path: p, stmt } => {
            format!("insert {} {}", path(p), print_stmt(stmt).replace('\n', "\\n"))
        }
        EditOp::DeleteStmt { path: p } => format!("delete {}", path(p)),
        EditOp::ReplaceCall {
            path: p,
            new_callee,
            new_args,
        } => {
            let call = Stmt::Expr(Call {
                callee: new_callee.clone(),
                args: new_args.clone(),
            });
            format!("replace {} {}", path(p), print_stmt(&call))
        }
        EditOp::WrapInLoop { path_range, header } => format!(
            "wrap {} x{} {header}",
            path(&path_range.path),
            path_range.count
        ),
        EditOp::UnwrapLoop { path: p } => format!("unwrap {}", path(p)),
        EditOp::SetCondition { path: p, text } => format!("condition {} {text}", path(p)),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compile { input, output } => {
            let program = parse_ir(&read_input(&input)?).context("parsing IR")?;
            write_output(output.as_deref(), &serialize_bpmn(&compile(&program))?)
        }
        Command::Decompile { input, output } => {
            let doc = parse_bpmn(&read_input(&input)?).context("parsing BPMN")?;
            write_output(output.as_deref(), &print_ir(&decompile(&doc)?))
        }
        Command::Diff { base, target, json } => {
            let base = parse_ir(&read_input(&base)?).context("parsing base IR")?;
            let target = parse_ir(&read_input(&target)?).context("parsing target IR")?;
            let script = diff_ir(&base, &target);
            let text = if json {
                script.to_json()
            } else {
                script.ops.iter().map(describe).collect::<Vec<_>>().join("\n")
            };
            write_output(None, &text)
        }
        Command::Patch {
            bpmn,
            script,
            output,
        } => {
            let doc = parse_bpmn(&read_input(&bpmn)?).context("parsing BPMN")?;
            let script = EditScript::from_json(&read_input(&script)?).context("parsing edit script")?;
            let patched = patch_bpmn(&doc, &script)?;
            write_output(output.as_deref(), &serialize_bpmn(&patched)?)
        }
        Command::Retrieve {
            utterance,
            catalog,
            retriever,
            top_k: k,
            prior,
        } => {
            let catalog = read_catalog(&catalog)?;
            let prior = prior
                .map(|p| read_input(&p).and_then(|t| parse_ir(&t).context("parsing prior IR")))
                .transpose()?;
            let config = RetrieverConfig::new(retriever.into(), top_k("top-k", k)?);
            let hits = retrieve_activities(&utterance, prior.as_ref(), &catalog, &config);
            let lines: Vec<String> = hits
                .iter()
                .map(|a| format!("{}\t{}", a.id, a.description))
                .collect();
            write_output(None, &lines.join("\n"))
        }
        Command::Generate {
            utterance,
            catalog,
            demos,
            prior_bpmn,
            provider,
            uid,
            activity_top_k,
            demo_top_k,
            output,
        } => {
            let spec = parse_provider(&provider)?;
            let config = PipelineConfig {
                activities: RetrieverConfig::new(
                    RetrieverKind::EditDistance,
                    top_k("activity-top-k", activity_top_k)?,
                ),
                demos: RetrieverConfig::new(
                    RetrieverKind::SimilarityBackend,
                    top_k("demo-top-k", demo_top_k)?,
                ),
                max_tokens: DEFAULT_MAX_TOKENS,
            };
            let catalog = read_catalog(&catalog)?;
            let pool: Vec<_> = load_dataset(&demos)?
                .iter()
                .map(|c| c.demonstration())
                .collect();
            let provider = provider_from_spec(&spec)?;
            let pipeline = Pipeline::new(&catalog, &pool, config, provider.as_ref());
            let request = Request {
                case_uid: uid,
                demo_filter: None,
            };
            let outcome = match prior_bpmn {
                Some(path) => {
                    let prior = parse_bpmn(&read_input(&path)?).context("parsing prior BPMN")?;
                    pipeline.run_update(&utterance, &prior, request)?
                }
                None => pipeline.run_initial(&utterance, request)?,
            };
            for name in outcome.generation.hallucinated() {
                eprintln!("warning: '{name}' is not in the catalog");
            }
            write_output(output.as_deref(), &serialize_bpmn(&outcome.document)?)
        }
        Command::Eval {
            dataset,
            catalog,
            provider,
            domain,
            activity_retriever,
            activity_top_k,
            demo_retriever,
            demo_top_k,
            report,
            jobs,
            recall_sweep: sweep,
        } => {
            let spec = parse_provider(&provider)?;
            let options = EvalOptions {
                config: PipelineConfig {
                    activities: RetrieverConfig::new(
                        activity_retriever.into(),
                        top_k("activity-top-k", activity_top_k)?,
                    ),
                    demos: RetrieverConfig::new(demo_retriever.into(), top_k("demo-top-k", demo_top_k)?),
                    max_tokens: DEFAULT_MAX_TOKENS,
                },
                domain: match domain {
                    Domain::In => DomainMode::In,
                    Domain::Cross => DomainMode::Cross,
                },
                jobs,
            };
            if sweep.contains(&0) {
                return Err(UsageError("--recall-sweep values must be at least 1".into()).into());
            }
            let catalog = read_catalog(&catalog)?;
            let cases = load_dataset(&dataset)?;
            let provider = provider_from_spec(&spec)?;
            let result = run_eval(&cases, &catalog, provider.as_ref(), &options);
            if let Some(path) = report {
                std::fs::write(&path, result.to_json())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let mut text = result.to_table();
            for (k, recall) in recall_sweep(&cases, &catalog, options.config.activities.kind, &sweep) {
                text.push_str(&format!("recall@{k} {recall:.4}\n"));
            }
            for case in result.cases.iter().filter(|c| c.error.is_some()) {
                eprintln!("case {}: {}", case.uid, case.error.as_deref().unwrap_or_default());
            }
            write_output(None, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
