//! Command-line front end.
//!
//! Every verb reads explicit files, writes its artifacts into `--out` and
//! returns one of the exit codes below. Diagnostics go to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    default_grid, frequency_response_ss, reference_model, spectrum, write_frequency_csv,
    write_spectrum_csv,
};
use crate::design::{design_all, resolve_sets, synthesize_all, DesignOptions};
use crate::error::{invalid, Error, Result};
use crate::grid::{assemble_physical_model, assemble_qsl_overall, DguId, GridGraph};
use crate::io::{self, StoredController};
use crate::pnp::{commit, evaluate, PlugRequest, PnpDecision, PnpOptions, Policy};
use crate::sim::{metrics, simulate, SimConfig, SimError, SimTrace};
use crate::synthesis::{
    assemble_closed_loop, certify_global_stability, check_assumption_2, verify_certificate,
    ControllerGains, LmiWeights, SynthesisOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DENIED: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Settling band used for the metrics written by `simulate` (V).
pub const METRICS_BAND: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(
    name = "pnpgrid",
    version,
    about = "Plug-and-play voltage control of DC islanded microgrids"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Synthesize gains for every DGU of a grid.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: Tuning,
        /// Add a reference prefilter with this bandwidth (Hz).
        #[arg(long, value_name = "BW_HZ")]
        prefilter: Option<f64>,
        /// Add a load-current compensator.
        #[arg(long)]
        compensator: bool,
        /// Leave a DGU and its lines out of the grid (repeatable).
        #[arg(long, value_name = "ID")]
        exclude: Vec<DguId>,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Certify a gain set on a grid.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gains: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Evaluate a plug-in or unplug request without changing any input file.
    PlugCheck {
        #[command(flatten)]
        common: Common,
        /// Gains of the grid before the request.
        #[arg(long)]
        gains: PathBuf,
        /// DGU to plug in; its parameters and lines are taken from the grid file.
        #[arg(
            long,
            value_name = "ID",
            conflicts_with = "unplug",
            required_unless_present = "unplug"
        )]
        plug_in: Option<DguId>,
        #[arg(long, value_name = "ID")]
        unplug: Option<DguId>,
        #[arg(long, default_value = "keep")]
        policy: String,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Simulate a scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        gains: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Write closed-loop spectra and frequency responses.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gains: PathBuf,
    },
    /// Write canonical input files and model matrices.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        no_timestamp: bool,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    grid: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Tuning {
    /// `P(1,1)` of every DGU.
    #[arg(long)]
    eta: Option<f64>,
    /// Tolerance on `η_i / (R_ij C_ti)`.
    #[arg(long)]
    tol: Option<f64>,
    /// Accepted for reproducibility records; every computation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

impl Tuning {
    fn options(&self) -> Result<SynthesisOptions> {
        let mut o = SynthesisOptions {
            eta: self.eta,
            ..Default::default()
        };
        if let Some(t) = self.tol {
            o.assumption2_tol = t;
        }
        o.validate()?;
        Ok(o)
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_DENIED,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::InvalidInput(_) | Error::Parse(_) | Error::Io(_) => EXIT_INPUT,
    }
}

/// Parses `args` (program name first), runs the verb and returns the exit code.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.verb) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("pnpgrid: {e}");
            exit_code(&e)
        }
    }
}

fn out_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| invalid(format!("cannot create {}: {e}", p.display())))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| invalid(format!("cannot write {}: {e}", p.display())))
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    let p = dir.join(name);
    fs::File::create(&p).map_err(|e| invalid(format!("cannot write {}: {e}", p.display())))
}

fn plain(stored: &BTreeMap<DguId, StoredController>) -> BTreeMap<DguId, ControllerGains> {
    stored
        .iter()
        .map(|(k, v)| (*k, v.controller.gains.clone()))
        .collect()
}

fn check_coverage(g: &GridGraph, gains: &BTreeMap<DguId, ControllerGains>) -> Result<()> {
    match g.ids().into_iter().find(|id| !gains.contains_key(id)) {
        Some(id) => Err(invalid(format!("gains file has no entry for DGU {id}"))),
        None => Ok(()),
    }
}

fn run(verb: Verb) -> Result<i32> {
    match verb {
        Verb::Synthesize {
            common,
            tuning,
            prefilter,
            compensator,
            exclude,
            no_timestamp,
        } => {
            let mut g = io::read_grid(&common.grid)?;
            for id in exclude {
                g.remove_dgu(id)?;
            }
            let opts = tuning.options()?;
            let k = synthesize_all(&g, &LmiWeights::default(), &opts)?;
            let d = DesignOptions {
                prefilter_hz: prefilter,
                compensator,
                ..Default::default()
            };
            let stored = design_all(&g, &k, &d)?;
            out_dir(&common.out)?;
            write(
                &common.out,
                "gains.toml",
                &io::gains_to_toml(&stored, !no_timestamp)?,
            )?;
            for (id, s) in &stored {
                if let Some(hz) = s.band_limit_pole_hz {
                    eprintln!(
                        "pnpgrid: compensator of DGU {id} is band-limited with poles at {hz} Hz"
                    );
                }
            }
            Ok(EXIT_OK)
        }
        Verb::Certify {
            common,
            gains,
            tuning,
        } => {
            let g = io::read_grid(&common.grid)?;
            let opts = tuning.options()?;
            let k = plain(&io::read_gains(&gains)?);
            check_coverage(&g, &k)?;
            let report = certify(&g, &k, &opts)?;
            out_dir(&common.out)?;
            write(
                &common.out,
                "certificate.toml",
                &io::report_to_toml(&report)?,
            )?;
            if !report.valid {
                eprintln!("pnpgrid: certificate does not hold");
                return Ok(EXIT_DENIED);
            }
            Ok(EXIT_OK)
        }
        Verb::PlugCheck {
            common,
            gains,
            plug_in,
            unplug,
            policy,
            tuning,
            no_timestamp,
        } => {
            let full = io::read_grid(&common.grid)?;
            let policy: Policy = policy.parse()?;
            let opts = PnpOptions {
                synthesis: tuning.options()?,
                ..Default::default()
            };
            let stored = io::read_gains(&gains)?;
            let target = match (plug_in, unplug) {
                (Some(id), None) => PlugTarget::PlugIn(id),
                (None, Some(id)) => PlugTarget::Unplug(id),
                _ => return Err(invalid("give exactly one of --plug-in and --unplug")),
            };
            let (d, out) = plug_check(&full, &stored, target, policy, &opts)?;
            out_dir(&common.out)?;
            write(&common.out, "decision.toml", &io::decision_to_toml(&d)?)?;
            let Some(out) = out else {
                for x in &d.denials {
                    match x.dgu {
                        Some(id) => eprintln!("pnpgrid: denied at DGU {id}: {}", x.reason),
                        None => eprintln!("pnpgrid: denied: {}", x.reason),
                    }
                }
                return Ok(EXIT_DENIED);
            };
            write(
                &common.out,
                "gains.toml",
                &io::gains_to_toml(&out, !no_timestamp)?,
            )?;
            Ok(EXIT_OK)
        }
        Verb::Simulate {
            common,
            scenario,
            gains,
            tuning,
        } => {
            let g = io::read_grid(&common.grid)?;
            let spec = io::read_scenario(&scenario)?;
            let stored = gains.as_deref().map(io::read_gains).transpose()?;
            let base = scenario.parent().unwrap_or(Path::new("."));
            let sets = resolve_sets(
                &g,
                &spec,
                stored.as_ref(),
                base,
                &LmiWeights::default(),
                &tuning.options()?,
            )?;
            let cfg = SimConfig::default();
            out_dir(&common.out)?;
            match simulate(&g, &sets, &spec.scenario, &cfg) {
                Ok(trace) => {
                    write_trace(&common.out, &trace, &spec.scenario.events, true)?;
                    Ok(EXIT_OK)
                }
                Err(SimError::Failure(f)) => {
                    write_trace(&common.out, &f.trace, &spec.scenario.events, false)?;
                    eprintln!("pnpgrid: simulation aborted at t = {}: {}", f.t, f.message);
                    Ok(EXIT_NUMERICAL)
                }
                Err(e) => Err(e.into()),
            }
        }
        Verb::Analyze { common, gains } => {
            let g = io::read_grid(&common.grid)?;
            let k = plain(&io::read_gains(&gains)?);
            check_coverage(&g, &k)?;
            out_dir(&common.out)?;
            let (ad, ac, _) = assemble_closed_loop(&g, &k)?;
            write_spectrum_csv(
                create(&common.out, "closed_loop_eigenvalues.csv")?,
                &spectrum(&(ad + ac))?,
            )?;
            let open = assemble_qsl_overall(&g)?;
            write_spectrum_csv(
                create(&common.out, "open_loop_eigenvalues.csv")?,
                &spectrum(&open.a)?,
            )?;
            let (a, b, c) = reference_model(&g, &k)?;
            let d = nalgebra::DMatrix::zeros(c.nrows(), b.ncols());
            let fr = frequency_response_ss(&a, &b, &c, &d, &default_grid())?;
            write_frequency_csv(create(&common.out, "reference_singular_values.csv")?, &fr)?;
            Ok(EXIT_OK)
        }
        Verb::Export {
            common,
            gains,
            scenario,
            no_timestamp,
        } => {
            let g = io::read_grid(&common.grid)?;
            out_dir(&common.out)?;
            write(&common.out, "grid.toml", &io::grid_to_toml(&g)?)?;
            let phys = assemble_physical_model(&g)?;
            for (name, m) in [
                ("a", &phys.a),
                ("b", &phys.b),
                ("c", &phys.c),
                ("m", &phys.m_dist),
            ] {
                write_matrix(create(&common.out, &format!("physical_{name}.csv"))?, m)?;
            }
            if let Some(p) = gains {
                let stored = io::read_gains(&p)?;
                write(
                    &common.out,
                    "gains.toml",
                    &io::gains_to_toml(&stored, !no_timestamp)?,
                )?;
                let k = plain(&stored);
                check_coverage(&g, &k)?;
                let (ad, ac, _) = assemble_closed_loop(&g, &k)?;
                write_matrix(create(&common.out, "closed_loop_a.csv")?, &(ad + ac))?;
            }
            if let Some(p) = scenario {
                write(
                    &common.out,
                    "scenario.toml",
                    &io::scenario_to_toml(&io::read_scenario(&p)?)?,
                )?;
            }
            Ok(EXIT_OK)
        }
    }
}

/// DGU a plug-check request is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlugTarget {
    /// A DGU of the grid file that is not yet connected.
    PlugIn(DguId),
    Unplug(DguId),
}

/// Evaluates a request against the grid file `full` and the stored gains.
///
/// For a plug-in the current grid is `full` without the target. An allowed
/// request also returns the updated controllers: kept entries are copied and
/// new gains get a controller without prefilter or compensator.
pub fn plug_check(
    full: &GridGraph,
    stored: &BTreeMap<DguId, StoredController>,
    target: PlugTarget,
    policy: Policy,
    opts: &PnpOptions,
) -> Result<(PnpDecision, Option<BTreeMap<DguId, StoredController>>)> {
    let k = plain(stored);
    let (current, req) = match target {
        PlugTarget::PlugIn(id) => {
            let p = *full
                .dgu(id)
                .ok_or_else(|| invalid(format!("DGU {id} is not in the grid file")))?;
            let lines = full.attached_lines(id).into_iter().collect();
            let mut current = full.clone();
            current.remove_dgu(id)?;
            (current, PlugRequest::PlugIn { id, dgu: p, lines })
        }
        PlugTarget::Unplug(id) => (full.clone(), PlugRequest::Unplug { id }),
    };
    check_coverage(&current, &k)?;
    let d = evaluate(&current, &k, &req, opts, policy)?;
    if !d.allowed {
        return Ok((d, None));
    }
    let (post, merged) = commit(&current, &k, &d)?;
    let mut out = BTreeMap::new();
    for (id, kk) in merged {
        match stored.get(&id).filter(|s| s.controller.gains == kk) {
            Some(s) => out.insert(id, s.clone()),
            None => {
                let aug = crate::grid::AugmentedDgu::for_dgu(&post, id)?;
                let s = crate::design::design_controller(id, &aug, &kk, &DesignOptions::default())?;
                out.insert(id, s)
            }
        };
    }
    Ok((d, Some(out)))
}

/// Per-DGU and global certificates of a gain set.
pub fn certify(
    g: &GridGraph,
    k: &BTreeMap<DguId, ControllerGains>,
    opts: &SynthesisOptions,
) -> Result<io::CertifyFile> {
    let mut certificate = BTreeMap::new();
    for (&id, kk) in k.iter().filter(|(id, _)| g.contains(**id)) {
        let aug = crate::grid::AugmentedDgu::for_dgu(g, id)?;
        certificate.insert(
            id.to_string(),
            io::certificate_summary(&verify_certificate(&aug, kk)),
        );
    }
    let global = certify_global_stability(g, k)?;
    let etas = k.iter().map(|(id, v)| (*id, v.eta)).collect();
    let a2 = check_assumption_2(g, &etas, opts.assumption2_tol);
    let valid = global.spectral_ok && certificate.values().all(|c| c.valid);
    Ok(io::CertifyFile {
        valid,
        certificate,
        global: io::global_summary(&global),
        assumption2_passed: a2.passed,
        assumption2_worst_ratio: a2.worst_ratio,
        assumption2_worst_edge: a2.worst_edge.map(|(i, j)| format!("{i}-{j}")),
    })
}

fn write_matrix(w: fs::File, m: &nalgebra::DMatrix<f64>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| crate::analysis::fmt(m[(r, c)]))
            .collect();
        wr.write_record(&row).map_err(crate::analysis::csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Metrics of every DGU over the intervals between consecutive event times.
pub fn window_metrics(
    trace: &SimTrace,
    events: &[crate::sim::Event],
    band: f64,
) -> Vec<io::WindowMetrics> {
    let Some(&end) = trace.time.last() else {
        return Vec::new();
    };
    let mut cuts: Vec<f64> = std::iter::once(0.0)
        .chain(events.iter().map(|e| e.t))
        .filter(|&t| t < end)
        .collect();
    cuts.push(end);
    cuts.dedup();
    let mut out = Vec::new();
    for &id in &trace.dgus {
        for w in cuts.windows(2) {
            // The window ends just before the next event so that event is not attributed to it.
            let t1 = if w[1] < end { w[1] - 1e-9 } else { w[1] };
            if let Ok(m) = metrics(trace, id, w[0], t1, band) {
                out.push(io::WindowMetrics {
                    dgu: id,
                    t0: w[0],
                    t1: w[1],
                    settling_time: m.settling_time,
                    overshoot: m.overshoot,
                    steady_state_error: m.steady_state_error,
                    peak_deviation: m.peak_deviation,
                });
            }
        }
    }
    out
}

/// Summary written next to a trace.
pub fn metrics_file(
    trace: &SimTrace,
    events: &[crate::sim::Event],
    completed: bool,
) -> io::MetricsFile {
    io::MetricsFile {
        completed,
        steps: trace.steps,
        band: METRICS_BAND,
        warnings: trace.warnings.clone(),
        jump: trace
            .jumps
            .iter()
            .map(|j| io::JumpEntry {
                t: j.t,
                dgu: j.dgu,
                jump: j.jump,
                bumpless: j.bumpless,
            })
            .collect(),
        window: window_metrics(trace, events, METRICS_BAND),
    }
}

fn write_trace(
    dir: &Path,
    trace: &SimTrace,
    events: &[crate::sim::Event],
    completed: bool,
) -> Result<()> {
    trace.write_csv(create(dir, "trace.csv")?)?;
    write(
        dir,
        "metrics.toml",
        &io::report_to_toml(&metrics_file(trace, events, completed))?,
    )
}
