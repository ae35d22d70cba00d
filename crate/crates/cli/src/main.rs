use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use safe_topp::sim::{race, run_scenario, ControllerKind, Problem, RunSummary, Scenario};
use safe_topp::{compute_stoppable_sets, compute_tables, precompute, Artifact, Controller, LpKernel, TableBackend};
use safe_topp_session::{Catalog, ServeConfig, Server};

#[derive(Parser)]
#[command(name = "safe-topp", version, about = "Time-optimal path tracking that can always stop in time")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build stoppable sets and time-to-reach tables and write them to disk.
    Precompute {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's velocity grid size.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
    /// Run the scenario's controller and print a JSON summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Precompute artifact; built on the fly when absent.
        #[arg(long)]
        art: Option<PathBuf>,
        /// Per-cycle CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
    /// Run both controllers side by side and print a comparison table.
    Race {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        art: Option<PathBuf>,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
    /// Time precomputation on the arm path and print CSV.
    Bench {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
        #[arg(long, value_enum, default_value_t = Backend::Batched)]
        backend: Backend,
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Serve the scenario over websocket.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        art: Option<PathBuf>,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 30.0)]
        frame_hz: f64,
        /// Simulated seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
    /// Write a built-in scenario as JSON.
    Scenario {
        #[arg(value_enum)]
        preset: Preset,
        /// Wall speed for the car race (m/s).
        #[arg(long, default_value_t = 20.0)]
        wall_speed: f64,
        /// Obstacle seed for the arm.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Naive,
    Serial,
    Batched,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    CarRace,
    ArmPursuit,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

type CliResult<T> = Result<T, String>;

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn build_controller(sc: &Scenario, problem: &Problem, art: Option<&Path>, threads: usize) -> CliResult<Controller> {
    let mut c = match art {
        Some(path) => {
            let a = Artifact::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
            problem.artifact_controller(a).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => problem.precompute(sc.m, &LpKernel::new(threads)).map_err(|e| e.to_string())?,
    };
    c.stop_stage_psi_only = sc.stop_stage_psi_only;
    Ok(c)
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}{unit}"))
}

type Column = (&'static str, fn(&RunSummary) -> String);

fn race_table(ours: &RunSummary, base: &RunSummary) -> String {
    let rows: [Column; 7] = [
        ("arrival", |s| fmt_opt(s.arrival_time, " s")),
        ("violations", |s| s.violations.to_string()),
        ("contact speed", |s| fmt_opt(s.first_contact_speed, " /s")),
        ("min distance", |s| format!("{:.3} m", s.min_distance)),
        ("min distance moving", |s| format!("{:.3} m", s.min_distance_moving)),
        ("stops", |s| s.stops.to_string()),
        ("limit violations", |s| s.limit_violations.to_string()),
    ];
    let mut out = format!("{:<22}{:>14}{:>14}\n", "", "ours", "baseline");
    for (name, f) in rows {
        out += &format!("{:<22}{:>14}{:>14}\n", name, f(ours), f(base));
    }
    out
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Cmd::Precompute {
            scenario,
            out,
            m,
            threads,
        } => {
            let sc = load_scenario(&scenario)?;
            let problem = sc.problem().map_err(|e| e.to_string())?;
            let m = m.unwrap_or(sc.m);
            let pre = precompute(&problem.constraints, &problem.grid, m, &LpKernel::new(threads))
                .map_err(|e| e.to_string())?;
            Artifact::new(&problem.grid, &problem.constraints, &pre)
                .save(&out)
                .map_err(|e| format!("{}: {e}", out.display()))?;
            println!(
                "N={} M={} delta_v={:.6} stoppable={:.1}ms tables={:.1}ms -> {}",
                pre.tables.n(),
                pre.tables.m(),
                pre.tables.delta_v(),
                pre.stoppable_secs * 1e3,
                pre.tables_secs * 1e3,
                out.display()
            );
        }
        Cmd::Run {
            scenario,
            art,
            log,
            threads,
        } => {
            let sc = load_scenario(&scenario)?;
            let controller = match sc.controller {
                ControllerKind::Ours => {
                    let problem = sc.problem().map_err(|e| e.to_string())?;
                    Some(Arc::new(build_controller(&sc, &problem, art.as_deref(), threads)?))
                }
                ControllerKind::Baseline => None,
            };
            let mut file = log
                .as_ref()
                .map(|p| File::create(p).map(BufWriter::new).map_err(|e| format!("{}: {e}", p.display())))
                .transpose()?;
            let summary = run_scenario(&sc, controller, file.as_mut().map(|f| f as &mut dyn Write))
                .map_err(|e| e.to_string())?;
            if let Some(mut f) = file {
                f.flush().map_err(|e| e.to_string())?;
            }
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?);
        }
        Cmd::Race { scenario, art, threads } => {
            let sc = load_scenario(&scenario)?;
            let problem = sc.problem().map_err(|e| e.to_string())?;
            let c = build_controller(&sc, &problem, art.as_deref(), threads)?;
            let r = race(&sc, Arc::new(c)).map_err(|e| e.to_string())?;
            print!("{}", race_table(&r.ours, &r.baseline));
        }
        Cmd::Bench {
            n,
            m,
            threads,
            backend,
            reps,
        } => {
            let mut sc = Scenario::arm_pursuit(0);
            sc.n = n;
            let problem = sc.problem().map_err(|e| e.to_string())?;
            let kernel = LpKernel::new(threads);
            let backend_name = match backend {
                Backend::Naive => "naive",
                Backend::Serial => "serial",
                Backend::Batched => "batched",
            };
            println!("n,m,threads,backend,rep,stoppable_ms,tables_ms,total_ms");
            for rep in 0..reps.max(1) {
                let start = Instant::now();
                let family = kernel.install(|| compute_stoppable_sets(&problem.constraints, &problem.grid));
                let stoppable = start.elapsed().as_secs_f64();
                let backend = match backend {
                    Backend::Naive => TableBackend::Naive,
                    Backend::Serial => TableBackend::SerialMemo,
                    Backend::Batched => TableBackend::Batched(&kernel),
                };
                let start = Instant::now();
                compute_tables(&family, &problem.constraints, &problem.grid, m, backend).map_err(|e| e.to_string())?;
                let tables = start.elapsed().as_secs_f64();
                println!(
                    "{},{m},{},{backend_name},{rep},{:.3},{:.3},{:.3}",
                    problem.grid.n(),
                    kernel.threads(),
                    stoppable * 1e3,
                    tables * 1e3,
                    (stoppable + tables) * 1e3
                );
            }
        }
        Cmd::Serve {
            scenario,
            art,
            port,
            host,
            frame_hz,
            speed,
            threads,
        } => {
            let sc = load_scenario(&scenario)?;
            let controller = match sc.controller {
                ControllerKind::Ours => {
                    let problem = sc.problem().map_err(|e| e.to_string())?;
                    Some(Arc::new(build_controller(&sc, &problem, art.as_deref(), threads)?))
                }
                ControllerKind::Baseline => None,
            };
            let name = sc.name.clone();
            let mut catalog = Catalog::new(threads).with_presets();
            catalog.insert(sc, controller);
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| format!("{host}:{port}: {e}"))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async move {
                let server = Server::bind(catalog, &name, addr, ServeConfig { frame_hz, speed }).await?;
                eprintln!("serving \"{name}\" on ws://{}", server.local_addr());
                server.run().await;
                Ok::<_, String>(())
            })?;
        }
        Cmd::Scenario {
            preset,
            wall_speed,
            seed,
            out,
        } => {
            let sc = match preset {
                Preset::CarRace => Scenario::car_race(wall_speed),
                Preset::ArmPursuit => Scenario::arm_pursuit(seed),
            };
            let json = sc.to_json();
            match out {
                Some(p) => std::fs::write(&p, json + "\n").map_err(|e| format!("{}: {e}", p.display()))?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
