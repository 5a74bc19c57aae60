use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tandem::htn::PolicyMode;
use tandem::scenario::Scenario;
use tandem::session::{ServerMsg, Session};
use tandem::sim::Overrides;
use tandem::trace::{replay, run, ReplayOutcome};
use tungstenite::{accept, Message, WebSocket};

#[derive(Parser)]
#[command(name = "tandem", version, about = "Human-robot joint action simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless and print its report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Human policy: cooperative, distracted, reluctant, scripted.
        #[arg(long)]
        human: Option<String>,
        /// efficient, teach or balanced.
        #[arg(long)]
        policy_mode: Option<String>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-simulate a trace and compare it record by record.
    Replay { trace: PathBuf },
    /// Serve sessions over WebSocket, one client per session.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            max_ticks,
            human,
            policy_mode,
            trace,
            report,
        } => {
            let s = Scenario::load(&scenario)
                .with_context(|| format!("loading {}", scenario.display()))?;
            let policy_mode = match policy_mode {
                Some(m) => Some(
                    PolicyMode::parse(&m).with_context(|| format!("unknown policy mode `{m}`"))?,
                ),
                None => None,
            };
            if human
                .as_deref()
                .is_some_and(|h| h.eq_ignore_ascii_case("interactive"))
            {
                bail!("interactive humans need `serve`");
            }
            let t = run(
                s,
                Overrides {
                    seed,
                    max_ticks,
                    human,
                    policy_mode,
                },
            )?;
            let json = serde_json::to_string_pretty(&t.report)?;
            if let Some(path) = trace {
                std::fs::write(&path, t.to_ndjson())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = report {
                std::fs::write(&path, &json)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { trace } => {
            let text = std::fs::read_to_string(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            match replay(&text)? {
                ReplayOutcome::Verified => {
                    println!("verified");
                    Ok(ExitCode::SUCCESS)
                }
                ReplayOutcome::Mismatch { tick, field } => {
                    println!("mismatch at tick {tick}, field {field}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Serve {
            scenario,
            port,
            host,
        } => {
            let s = Scenario::load(&scenario)
                .with_context(|| format!("loading {}", scenario.display()))?;
            let listener = TcpListener::bind((host.as_str(), port))
                .with_context(|| format!("binding {host}:{port}"))?;
            println!("listening on ws://{}", listener.local_addr()?);
            std::io::stdout().flush()?;
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let s = s.clone();
                std::thread::spawn(move || {
                    if let Err(e) = serve_one(stream, s) {
                        eprintln!("session ended: {e:#}");
                    }
                });
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMsg) -> Result<()> {
    ws.send(Message::text(serde_json::to_string(msg)?))?;
    Ok(())
}

/// One client, one session; messages are handled in arrival order.
fn serve_one(stream: TcpStream, scenario: Scenario) -> Result<()> {
    let mut ws = accept(stream).map_err(|e| anyhow::anyhow!("handshake: {e}"))?;
    let mut session = Session::new(scenario);
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                return Ok(())
            }
            Err(e) => return Err(e.into()),
        };
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => return Ok(()),
            Message::Ping(_) | Message::Pong(_) | Message::Frame(_) => continue,
            Message::Binary(_) => {
                send(
                    &mut ws,
                    &ServerMsg::Error {
                        code: "bad_message".into(),
                        message: "binary frames are not supported".into(),
                    },
                )?;
                ws.close(None)?;
                return Ok(());
            }
        };
        match session.handle_text(&text) {
            Ok(out) => {
                for m in &out {
                    send(&mut ws, m)?;
                }
            }
            Err(e) => {
                send(&mut ws, &e.to_msg())?;
                ws.close(Some(tungstenite::protocol::CloseFrame {
                    code: tungstenite::protocol::frame::coding::CloseCode::Policy,
                    reason: e.code.into(),
                }))?;
                // Drain until the peer acknowledges the close.
                while ws.read().is_ok() {}
                return Ok(());
            }
        }
    }
}
