use std::fs;
use std::path::Path;

use rvc_core::protocol::ServerMessage;
use rvc_core::script::{run_script, RunEnd, Script};
use rvc_core::telemetry::{self, decode, encode, export_csv, replay_to_end, summarize, ReplayError, TrialLog};
use rvc_core::{Scenario, Session, SimConfig, Simulation, Step};

use crate::exit;
use crate::{ExportArgs, ReplayArgs, RunArgs, SimInputs};

/// User-facing failure with the exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn error(message: impl Into<String>) -> Self {
        Failure {
            code: exit::ERROR,
            message: message.into(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::error(format!("{}: {e}", path.display())))
}

pub fn load_scenario(path: Option<&Path>) -> Result<Scenario, Failure> {
    match path {
        None => Ok(Scenario::default()),
        Some(p) => Scenario::from_json(&read(p)?).map_err(|e| Failure::error(format!("{}: {e}", p.display()))),
    }
}

pub fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    match path {
        None => Ok(SimConfig::default()),
        Some(p) => SimConfig::from_json(&read(p)?).map_err(|e| Failure::error(format!("{}: {e}", p.display()))),
    }
}

impl SimInputs {
    pub fn load(&self) -> Result<(Scenario, SimConfig), Failure> {
        let scenario = load_scenario(self.scenario.as_deref())?;
        let mut config = load_config(self.config.as_deref())?;
        if let Some(dt) = self.dt_ms {
            config.dt_ms = dt;
        }
        if self.assist {
            config.session.assist = true;
        }
        config.validate().map_err(|e| Failure::error(e.to_string()))?;
        Ok((scenario, config))
    }
}

fn finish(result: Result<u8, Failure>) -> u8 {
    result.unwrap_or_else(|f| {
        eprintln!("rvc: {}", f.message);
        f.code
    })
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Failure::error(format!("{}: {e}", path.display())))
}

/// Writes `trial.csv`, `summary.json` and `final_bscan.png`.
fn write_reports(dir: &Path, log: &TrialLog, sim: &Simulation) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::error(format!("{}: {e}", dir.display())))?;
    let csv = export_csv(log).map_err(|e| Failure::error(e.to_string()))?;
    write(dir, "trial.csv", &csv)?;
    let summary = serde_json::to_vec_pretty(&summarize(log)).expect("summary serializes");
    write(dir, "summary.json", &summary)?;
    let png = sim
        .render(sim.current_plane())
        .to_png()
        .map_err(|e| Failure::error(e.to_string()))?;
    write(dir, "final_bscan.png", &png)
}

fn outcome_code(log: &TrialLog) -> u8 {
    match log.outcome.as_ref().map(|o| o.final_step) {
        Some(Step::Done) => exit::DONE,
        Some(Step::Failed) => exit::FAILED,
        _ => exit::TIMEOUT,
    }
}

pub fn run(args: RunArgs) -> u8 {
    finish(run_inner(&args))
}

fn run_inner(args: &RunArgs) -> Result<u8, Failure> {
    let (scenario, config) = args.inputs.load()?;
    let script = Script::from_json(&read(&args.script)?).map_err(|e| Failure::error(e.to_string()))?;
    let mut session = Session::new(scenario, config, args.seed).map_err(|e| Failure::error(e.to_string()))?;
    let end = run_script(&mut session, &script, |tick, msg, replies| {
        for r in replies {
            if let ServerMessage::Error { code, message } = r {
                eprintln!("tick {tick}: {msg:?} refused ({code:?}): {message}");
            }
        }
    })
    .map_err(|e| Failure::error(e.to_string()))?;
    if end != RunEnd::Finished {
        // Close the log where the trial stalled so it can still be replayed.
        session.abort();
    }
    let sim = session.sim();
    let log = sim.log();
    fs::create_dir_all(&args.out).map_err(|e| Failure::error(format!("{}: {e}", args.out.display())))?;
    write(&args.out, "trial.rvcl", &encode(log))?;
    write_reports(&args.out, log, sim)?;
    let o = log.outcome.as_ref().expect("closed above");
    let cause = o.failure_cause.map(|c| format!(" ({c:?})")).unwrap_or_default();
    let how = match end {
        RunEnd::Finished => "",
        RunEnd::Stalled => ", script exhausted",
        RunEnd::TimedOut => ", time limit reached",
    };
    println!("{:?}{cause} at t = {} s{how}", o.final_step, o.end_time);
    Ok(match end {
        RunEnd::Finished => outcome_code(log),
        _ => exit::TIMEOUT,
    })
}

fn load_log(path: &Path) -> Result<TrialLog, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Failure::error(format!("{}: {e}", path.display())))
}

fn refused(e: ReplayError) -> Failure {
    Failure {
        code: match e {
            ReplayError::Refused(_) => exit::HASH_MISMATCH,
            ReplayError::Sim(_) => exit::ERROR,
        },
        message: e.to_string(),
    }
}

pub fn replay(args: ReplayArgs) -> u8 {
    finish((|| {
        let log = load_log(&args.log)?;
        let scenario = args.scenario.as_deref().map(|p| load_scenario(Some(p))).transpose()?;
        let config = args.config.as_deref().map(|p| load_config(Some(p))).transpose()?;
        let report = telemetry::replay(&log, scenario.as_ref(), config.as_ref()).map_err(refused)?;
        match report.divergence {
            None => {
                println!("replay matched: {} samples", report.samples_compared);
                Ok(exit::DONE)
            }
            Some(d) => {
                println!(
                    "diverged at {} ({}): expected {}, got {}",
                    d.index, d.field, d.expected, d.got
                );
                Ok(exit::ERROR)
            }
        }
    })())
}

pub fn export(args: ExportArgs) -> u8 {
    finish((|| {
        let log = load_log(&args.log)?;
        // The final B-scan needs the scene state, which the log does not store.
        let (report, sim) = replay_to_end(&log, None, None).map_err(refused)?;
        if let Some(d) = &report.divergence {
            eprintln!(
                "rvc: warning: log does not replay exactly (first divergence at {} {})",
                d.index, d.field
            );
        }
        write_reports(&args.out, &log, &sim)?;
        Ok(exit::DONE)
    })())
}
