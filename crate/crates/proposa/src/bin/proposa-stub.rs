//! Reference implementations of the two wire protocols, used as test
//! doubles and as executable documentation for writing real external
//! proposers and evaluators.
//!
//! Proposer protocol: the full proposal context arrives as one JSON
//! object on stdin; the raw artifact text goes to stdout.
//!
//! Evaluator protocol: `{"artifact": {...}, "tier": "...", "split_spec":
//! ...}` arrives on stdin; `{"metrics": [{"name", "value"}],
//! "diagnostics": "..."}` goes to stdout. This stub scores an artifact by
//! parsing its body as a decimal number.

use std::io::Read;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "proposa-stub", about = "Wire-protocol test doubles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Proposer(ProposerArgs),
    Evaluator(EvaluatorArgs),
}

#[derive(Args)]
struct ProposerArgs {
    /// echo: return the incumbent body verbatim. fixed: return --body.
    /// sleep: block for --secs seconds (for timeout tests).
    #[arg(long, default_value = "echo")]
    mode: String,
    #[arg(long)]
    body: Option<String>,
    #[arg(long, default_value_t = 60)]
    secs: u64,
}

#[derive(Args)]
struct EvaluatorArgs {
    /// Planted into validation- and test-tier diagnostics (never train),
    /// so barrier leak tests can grep for it.
    #[arg(long, default_value = "")]
    sentinel: String,
    /// Exit nonzero on the given tier (for failure-path tests).
    #[arg(long)]
    fail_tier: Option<String>,
}

fn read_stdin() -> String {
    let mut buf = String::new();
    std::io::stdin().read_to_string(&mut buf).expect("readable stdin");
    buf
}

fn main() {
    let cli = Cli::parse();
    match cli.command {
        Command::Proposer(args) => match args.mode.as_str() {
            "echo" => {
                let context: serde_json::Value =
                    serde_json::from_str(&read_stdin()).expect("context JSON on stdin");
                print!("{}", context["incumbent_body"].as_str().unwrap_or_default());
            }
            "fixed" => {
                let _ = read_stdin();
                print!("{}", args.body.expect("--body required for fixed mode"));
            }
            "sleep" => {
                std::thread::sleep(std::time::Duration::from_secs(args.secs));
            }
            other => {
                eprintln!("unknown proposer mode {other:?}");
                std::process::exit(2);
            }
        },
        Command::Evaluator(args) => {
            let request: serde_json::Value =
                serde_json::from_str(&read_stdin()).expect("request JSON on stdin");
            let tier = request["tier"].as_str().unwrap_or_default().to_string();
            if args.fail_tier.as_deref() == Some(tier.as_str()) {
                eprintln!("stub evaluator configured to fail on tier {tier}");
                std::process::exit(1);
            }
            let body = request["artifact"]["body"].as_str().unwrap_or_default();
            let value: f64 = body.trim().parse().unwrap_or_else(|_| {
                eprintln!("artifact body is not a number: {body:?}");
                std::process::exit(1);
            });
            let sentinel = if tier == "train_diagnostics" { "" } else { args.sentinel.as_str() };
            let response = serde_json::json!({
                "metrics": [{"name": "score", "value": value}],
                "diagnostics": format!("{tier} tier, score {value} {sentinel}"),
            });
            println!("{response}");
        }
    }
}
