use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kas_auth_core::crypto::Suite;
use kas_auth_core::policy::AuthenticationPolicy;
use kas_auth_core::protocols::Network;
use kas_auth_harness::{attack, run_scenario, AttackSuite, Scenario};

#[derive(Parser)]
#[command(name = "kas-auth", version, about = "Key-assignment-scheme authentication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a policy file.
    Validate { policy: PathBuf },
    /// Print the public KAS information for a policy.
    Keys {
        policy: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "production")]
        suite: String,
    },
    /// Run a scenario and check its expectations.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the transcript log here instead of stdout.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also write a hex dump of every delivered message.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run a scenario honestly, then attack every session it started.
    Attack {
        scenario: PathBuf,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["splice", "replay", "label"]))]
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run a scenario and print the bulletin board and broadcasts.
    Board {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn write_out(path: &PathBuf, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn execute(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Validate { policy } => {
            let p = AuthenticationPolicy::load(&policy).map_err(|e| e.to_string())?;
            p.poset.validate().map_err(|e| e.to_string())?;
            println!("nodes {}", p.poset.len());
            println!("cover_edges {}", p.poset.cover_edges().len());
            for (u, l) in &p.users {
                println!("user {u} {}", p.poset.id_str(*l));
            }
            for (s, l) in &p.services {
                println!("service {s} {}", p.poset.id_str(*l));
            }
            println!("valid");
            Ok(true)
        }
        Command::Keys { policy, seed, suite } => {
            let p = AuthenticationPolicy::load(&policy).map_err(|e| e.to_string())?;
            let suite = Suite::from_name(&suite).ok_or_else(|| format!("unknown suite `{suite}`"))?;
            let net = Network::new(p, suite, seed).map_err(|e| e.to_string())?;
            print!("{}", net.keyring().public().export(net.keyring().poset()));
            Ok(true)
        }
        Command::Run { scenario, seed, log, dump } => {
            let s = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            let report = run_scenario(&s, seed).map_err(|e| e.to_string())?;
            match log {
                Some(path) => write_out(&path, &report.log())?,
                None => print!("{}", report.log()),
            }
            if let Some(path) = dump {
                write_out(&path, &report.network.transcript().dump())?;
            }
            print!("{}", report.verdict_report());
            Ok(report.passed())
        }
        Command::Attack { scenario, suite, seed } => {
            let s = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            let suite: AttackSuite = suite.parse()?;
            let honest = run_scenario(&s, seed).map_err(|e| e.to_string())?;
            let report = attack(&honest.network, &honest.plans, suite);
            print!("{}", report.render());
            Ok(report.false_accepts() == 0)
        }
        Command::Board { scenario, seed } => {
            let s = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            let report = run_scenario(&s, seed).map_err(|e| e.to_string())?;
            let sys = report.network.time_release().ok_or("scenario has no time-release extension")?;
            let poset = sys.poset();
            let broadcasts: Vec<String> = sys.broadcasts().iter().map(u64::to_string).collect();
            println!("horizon {}", sys.horizon());
            println!("broadcast {}", broadcasts.join(" "));
            for &(x, t) in sys.temporal_edges() {
                let released = sys.released().contains(x, t);
                println!("temporal {} -> {} {}", poset.id_str(x), poset.id_str(t), if released { "released" } else { "withheld" });
            }
            for token in sys.board().values() {
                println!("token {} issuer={} {}", token.id, token.issuer, token.summary());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
