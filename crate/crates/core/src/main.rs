use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dbgchat_core::debug_context::{capture_context, summarize_context, DebugAdapter, SimulatedAdapterServer};
use dbgchat_core::eval::{
    aggregate, audit, render_table, run_suite, write_csv, EvalMode, Persona, SimulatedUserPolicy,
};
use dbgchat_core::orchestrator::{
    http, load_record, replay, BackendKind, Engine, ModeOverride, SessionConfig, UserMessage,
};
use dbgchat_core::scenario::ScenarioSet;

#[derive(Parser)]
#[command(name = "dbgchat", version, about = "Conversational debugging assistant")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    chat: ChatArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive session in the terminal (the default).
    Chat(ChatArgs),
    /// Re-run a saved session log and check every state hash.
    Replay { file: PathBuf },
    /// Run the simulated developer over scenarios and report metrics.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
    /// List bundled scenarios.
    Scenarios,
    /// Print the prompt summary of a scenario's debugger context.
    Summarize {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 4000)]
        budget: usize,
    },
    /// Speak the debug adapter protocol on stdio for a scenario.
    #[command(hide = true)]
    SimAdapter {
        #[arg(long)]
        scenario: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scripted,
    Live,
}

#[derive(Args, Clone)]
struct ChatArgs {
    /// Scenario id or alias (warmup, task1, task2).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, conflicts_with = "force_collaborative")]
    force_eager: bool,
    #[arg(long)]
    force_collaborative: bool,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendArg,
    /// Debug adapter command line, e.g. "netcoredbg --interpreter=vscode".
    #[arg(long)]
    adapter: Option<String>,
    #[arg(long)]
    sessions_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Comma-separated scenario ids, or "all".
    #[arg(long, default_value = "all")]
    scenarios: String,
    /// Comma-separated modes: full, eager.
    #[arg(long, default_value = "full,eager")]
    modes: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1")]
    seeds: String,
    #[arg(long, value_enum, default_value = "cooperative")]
    persona: PersonaArg,
    #[arg(long, default_value_t = 1.0)]
    click_prob: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write each session log here.
    #[arg(long)]
    sessions_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PersonaArg {
    Cooperative,
    Novice,
    Hasty,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        None => chat(cli.chat),
        Some(Command::Chat(args)) => chat(args),
        Some(Command::Replay { file }) => replay_file(&file),
        Some(Command::Eval(args)) => eval(args),
        Some(Command::Serve { addr, sessions_dir }) => serve(&addr, sessions_dir),
        Some(Command::Scenarios) => {
            for s in ScenarioSet::bundled().iter() {
                println!("{:<22} {:<28} {}", s.id, s.exception.short_type_name(), s.title);
            }
            Ok(())
        }
        Some(Command::Summarize { scenario, budget }) => {
            let set = ScenarioSet::bundled();
            let mut adapter = DebugAdapter::simulated(set.get(&scenario)?)?;
            let ctx = capture_context(&mut adapter)?;
            println!("{}", summarize_context(&ctx, budget)?);
            Ok(())
        }
        Some(Command::SimAdapter { scenario }) => {
            let set = ScenarioSet::bundled();
            let server = SimulatedAdapterServer::new(set.get(&scenario)?.clone());
            server.serve(io::stdin().lock(), io::stdout().lock())?;
            Ok(())
        }
    }
}

fn engine(sessions_dir: Option<PathBuf>) -> Result<Engine> {
    let engine = Engine::bundled();
    Ok(match sessions_dir {
        Some(dir) => engine.with_store(dir)?,
        None => engine,
    })
}

fn chat(args: ChatArgs) -> Result<()> {
    let engine = engine(args.sessions_dir.clone())?;
    let config = SessionConfig {
        scenario_id: args.scenario.clone(),
        mode_override: if args.force_eager {
            Some(ModeOverride::ForceEager)
        } else if args.force_collaborative {
            Some(ModeOverride::ForceCollaborative)
        } else {
            None
        },
        backend: match args.backend {
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Live => BackendKind::Live,
        },
        adapter_command: args
            .adapter
            .as_deref()
            .map(|c| c.split_whitespace().map(str::to_string).collect()),
    };
    let mut session = engine.build_session(config)?;
    if let Some(ctx) = session.context() {
        println!("Stopped on {}: {}", ctx.exception.type_name, ctx.exception.message);
        println!("  at {}", ctx.exception.thrown_at);
    }
    if let Some(store) = engine.store() {
        println!("Logging to {}", store.path_for(session.id()).display());
    }
    println!("Type your question. A number picks a suggestion; /state shows the conversation state; /quit exits.");

    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        print!("> ");
        io::stdout().flush()?;
        let Some(line) = lines.next().transpose()? else { break };
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" | "/exit" => break,
            "/state" => {
                println!("{}", serde_json::to_string_pretty(&session.view())?);
                continue;
            }
            _ => {}
        }
        let msg = match line.parse::<usize>() {
            Ok(n) if (1..=session.followups().len()).contains(&n) => {
                UserMessage::clicked(session.followups()[n - 1].text.clone())
            }
            _ => UserMessage::typed(line),
        };
        match session.handle(&msg) {
            Ok(outcome) => {
                if let Some(r) = &outcome.response {
                    println!("\n[{:?}] {}\n", r.act, r.body);
                    if let dbgchat_core::responders::Payload::Fix { diff_text, .. } = &r.payload {
                        println!("{diff_text}\n");
                    }
                    for (i, f) in r.followups.iter().enumerate() {
                        println!("  {}. {}", i + 1, f.text);
                    }
                }
                if outcome.state_view.done {
                    println!("Session closed.");
                    break;
                }
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
    Ok(())
}

fn replay_file(file: &Path) -> Result<()> {
    let record = load_record(file).with_context(|| format!("reading {}", file.display()))?;
    let state = replay(&record)?;
    println!(
        "{}: {} turns replayed, phase {:?}, mode {:?}, done {}",
        record.session_id,
        record.turns.len(),
        state.phase,
        state.pattern_mode,
        state.is_done()
    );
    Ok(())
}

fn parse_list<T>(s: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| f(x.trim()).with_context(|| format!("bad {what} {x:?}")))
        .collect()
}

fn eval(args: EvalArgs) -> Result<()> {
    let engine = engine(None)?;
    let scenarios: Vec<String> = if args.scenarios.trim() == "all" {
        engine.scenarios().ids()
    } else {
        parse_list(&args.scenarios, "scenario", |s| {
            engine.scenarios().get(s).ok().map(|sc| sc.id.clone())
        })?
    };
    let modes = parse_list(&args.modes, "mode", EvalMode::parse)?;
    let seeds = parse_list(&args.seeds, "seed", |s| s.parse::<u64>().ok())?;
    if scenarios.is_empty() || modes.is_empty() || seeds.is_empty() {
        bail!("nothing to evaluate");
    }
    let policy = SimulatedUserPolicy {
        persona: match args.persona {
            PersonaArg::Cooperative => Persona::Cooperative,
            PersonaArg::Novice => Persona::Novice,
            PersonaArg::Hasty => Persona::Hasty,
        },
        followup_click_prob: args.click_prob,
        ..SimulatedUserPolicy::default()
    };
    let results = run_suite(&engine, &scenarios, &modes, &seeds, policy)?;
    let mut problems = 0;
    for r in &results {
        if let Some(why) = &r.failure {
            eprintln!(
                "{} {} seed {}: stopped early: {why}",
                r.scenario_id,
                r.mode.name(),
                r.seed
            );
        }
        for p in audit(r, engine.scenarios().get(&r.scenario_id)?) {
            eprintln!("{} {} seed {}: {p}", r.scenario_id, r.mode.name(), r.seed);
            problems += 1;
        }
    }
    if let Some(dir) = &args.sessions_dir {
        std::fs::create_dir_all(dir)?;
        for r in &results {
            let path = dir.join(format!("{}_{}_{}.json", r.scenario_id, r.mode.name(), r.seed));
            std::fs::write(&path, serde_json::to_string_pretty(&r.record)?)?;
        }
    }
    let rows = aggregate(&results);
    print!("{}", render_table(&rows));
    if let Some(out) = &args.out {
        let f = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        write_csv(&rows, f)?;
    }
    if problems > 0 {
        bail!("{problems} audit problem(s)");
    }
    Ok(())
}

fn serve(addr: &str, sessions_dir: Option<PathBuf>) -> Result<()> {
    let engine = Arc::new(engine(sessions_dir)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(http::serve(engine, addr))?;
    Ok(())
}
