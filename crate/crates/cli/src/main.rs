use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchsched::harness::{
    ablation_matrix, group_of, run_plain, run_validation, Project, RunOptions, Technique, ValidationReport,
};
use patchsched::lang::{parse_sources, stmt_summary};

const EXIT_UNSOUND: u8 = 1;
const EXIT_INPUT: u8 = 2;

/// Validate candidate patches for IMP+ programs.
#[derive(Parser)]
#[command(name = "patchsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline.
    Validate {
        manifest: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run the plain per-patch validator only.
    Plain {
        manifest: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run every ablation configuration and compare verdicts.
    Ablate {
        manifest: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the statement locations of a source file.
    ListLocations { source: PathBuf },
}

#[derive(Args)]
struct Opts {
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated techniques to turn off.
    #[arg(long, value_delimiter = ',')]
    disable: Vec<Technique>,
    #[arg(long)]
    compare_plain: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    unstable_seed: bool,
    #[arg(long)]
    step_budget_base: Option<u64>,
    #[arg(long)]
    step_budget_factor: Option<f64>,
    /// Print state-transition trees to stderr.
    #[arg(long)]
    dump_tree: bool,
    /// Print woven programs to stderr.
    #[arg(long)]
    dump_woven: bool,
    /// Write the report here (JSON, or CSV for a `.csv` path) instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn load(manifest: &Path, opts: &Opts) -> Result<Project, String> {
    let mut p = Project::load(manifest).map_err(|e| e.to_string())?;
    let c = &mut p.config;
    if let Some(w) = opts.workers {
        c.workers = w;
    }
    c.disabled_techniques.extend(opts.disable.iter().copied());
    if let Some(s) = opts.seed {
        c.seed = s;
    }
    c.unstable_seed |= opts.unstable_seed;
    if let Some(b) = opts.step_budget_base {
        c.step_budget_base = b;
    }
    if let Some(f) = opts.step_budget_factor {
        c.step_budget_factor = f;
    }
    // Re-run the manifest checks on the overridden config.
    Project::new(p.sources, p.tests, p.patch_sets, p.config).map_err(|e| e.to_string())
}

fn emit(text: &str, target: Option<&Path>) -> Result<(), String> {
    match target {
        Some(path) => fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_report(report: &ValidationReport, target: Option<&Path>) -> Result<(), String> {
    let csv = target.is_some_and(|p| p.extension().is_some_and(|e| e == "csv"));
    emit(&if csv { report.to_csv() } else { report.to_json() }, target)?;
    if target.is_some() {
        for v in &report.verdicts {
            let via = if v.via_fallback { " (fallback)" } else { "" };
            eprintln!("{}: {}{via}", v.patch_id, v.status);
        }
    }
    Ok(())
}

fn list_locations(source: &Path) -> Result<(), String> {
    let text = fs::read_to_string(source).map_err(|e| format!("cannot read {}: {e}", source.display()))?;
    let program = parse_sources(&[(group_of(source), text)])
        .map_err(|d| d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))?;
    for loc in program.locations() {
        let stmt = program.resolve(&loc).expect("listed location resolves");
        let mut s = stmt_summary(stmt);
        if s.len() > 72 {
            s.truncate(s.char_indices().nth(69).map_or(s.len(), |(i, _)| i));
            s.push_str("...");
        }
        println!("{loc}\t{s}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, (u8, String)> {
    let input = |e: String| (EXIT_INPUT, e);
    match cli.command {
        Command::ListLocations { source } => list_locations(&source).map_err(input)?,
        Command::Validate { manifest, opts } => {
            let project = load(&manifest, &opts).map_err(input)?;
            let run_opts =
                RunOptions { compare_plain: opts.compare_plain, dump_tree: opts.dump_tree, dump_woven: opts.dump_woven };
            let out = run_validation(&project, run_opts);
            for (set, w) in &out.artifacts.woven {
                eprintln!("== woven program, patch set {set} ==\n{w}");
            }
            for (set, t) in &out.artifacts.trees {
                let json = serde_json::to_string_pretty(t).expect("tree serializes");
                eprintln!("== tree, patch set {set}, test {} ==\n{json}", t.test);
            }
            emit_report(&out.report, opts.report.as_deref()).map_err(input)?;
            if out.report.soundness_violation() {
                let diff = out.report.aggregate.verdict_diff.as_deref().unwrap_or_default();
                for d in diff {
                    eprintln!("verdict mismatch: {} is {} but plain says {}", d.patch_id, d.validated, d.plain);
                }
                return Ok(ExitCode::from(EXIT_UNSOUND));
            }
        }
        Command::Plain { manifest, opts } => {
            let project = load(&manifest, &opts).map_err(input)?;
            emit_report(&run_plain(&project), opts.report.as_deref()).map_err(input)?;
        }
        Command::Ablate { manifest, opts } => {
            let project = load(&manifest, &opts).map_err(input)?;
            let table = ablation_matrix(&project);
            match opts.report.as_deref() {
                Some(path) => {
                    let json = serde_json::to_string_pretty(&table).expect("table serializes");
                    emit(&json, Some(path)).map_err(input)?;
                    eprint!("{}", table.render());
                }
                None => print!("{}", table.render()),
            }
            if !table.divergences.is_empty() {
                for d in &table.divergences {
                    eprintln!("verdict divergence: {d}");
                }
                return Ok(ExitCode::from(EXIT_UNSOUND));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
