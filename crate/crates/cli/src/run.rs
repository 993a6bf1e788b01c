//! Command orchestration: design, sweep, simulate, verify.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ccshape::export::{write_ccdf_csv, write_psd_csv, write_table, write_trace_csv, write_w_csv, Provenance};
use ccshape::occs::{
    run_occs, standard_design, standard_sweep, CapRule, SelectionConfig, TraceStep,
};
use ccshape::oracle::{
    exhaustive_selection, monte_carlo_cc_power, monte_carlo_oob, OracleReport, PerSymbolOptimizer, Quantity,
};
use ccshape::simlab::{oob_db, qpsk_symbols, snr_loss, symbol_rng, CcdfCurve, Link, PsdEstimate, Transmitter};
use ccshape::solver::ShapingSolution;
use ccshape::spectral::{build_projection_matrices, make_sampling_grid, CMatrix, CarrierAllocation, SystemGeometry};
use nalgebra::DVector;

use crate::config::{CcMode, ConfigError, Scenario, System, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Design W and the carrier allocation; writes w.csv, trace.csv.
    Design,
    /// Out-of-band level against carrier count for both schemes.
    Sweep,
    /// Power spectral density of each configured system.
    Psd,
    /// PAPR distribution of each configured system.
    Papr,
    /// Oracle comparisons of the designed W.
    Verify,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] ccshape::Error),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
    /// The stop level was not met; partial artifacts were written.
    #[error("{message}")]
    Unreachable { message: String, artifacts: Box<RunArtifacts> },
    #[error("{0} oracle check(s) failed")]
    Verification(usize),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Unreachable { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
    /// Every scalar the run produced, in output order.
    pub summary: Vec<(String, String)>,
}

impl RunArtifacts {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn path(&self, name: &str) -> Option<&Path> {
        self.files.iter().find(|p| p.file_name().is_some_and(|f| f == name)).map(PathBuf::as_path)
    }
}

struct Ctx<'a> {
    scn: &'a Scenario,
    out: &'a Path,
    prov: Provenance,
    artifacts: RunArtifacts,
}

impl Ctx<'_> {
    fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.artifacts.summary.push((key.into(), value.to_string()));
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|e| output_error(&path, e))?;
        self.artifacts.files.push(path);
        Ok(BufWriter::new(file))
    }

    fn write_summary(&mut self) -> Result<(), RunError> {
        let out = self.create("summary.csv")?;
        let rows: Vec<[String; 2]> = self.artifacts.summary.iter().map(|(k, v)| [k.clone(), v.clone()]).collect();
        write_table(out, &self.prov, &["key", "value"], rows)?;
        Ok(())
    }
}

fn output_error(path: &Path, e: impl ToString) -> RunError {
    RunError::Output { path: path.display().to_string(), message: e.to_string() }
}

/// Runs one command, writing CSV files into `out_dir` (created if missing).
/// A `summary.csv` is always written last.
pub fn run_scenario(scn: &Scenario, command: Command, out_dir: &Path) -> Result<RunArtifacts, RunError> {
    std::fs::create_dir_all(out_dir).map_err(|e| output_error(out_dir, e))?;
    let mut ctx = Ctx {
        scn,
        out: out_dir,
        prov: Provenance { config_hash: scn.config_hash.clone(), seed: scn.seed },
        artifacts: RunArtifacts::default(),
    };
    echo_config(&mut ctx, command);
    let outcome = match command {
        Command::Design => design(&mut ctx),
        Command::Sweep => sweep(&mut ctx),
        Command::Psd => psd(&mut ctx),
        Command::Papr => papr(&mut ctx),
        Command::Verify => verify(&mut ctx),
    };
    match outcome {
        Ok(()) => {
            ctx.write_summary()?;
            Ok(ctx.artifacts)
        }
        Err(RunError::Unreachable { message, .. }) => {
            ctx.put("unreached", &message);
            ctx.write_summary()?;
            Err(RunError::Unreachable { message, artifacts: Box::new(ctx.artifacts) })
        }
        Err(RunError::Verification(n)) => {
            ctx.write_summary()?;
            Err(RunError::Verification(n))
        }
        Err(e) => Err(e),
    }
}

fn echo_config(ctx: &mut Ctx, command: Command) {
    let scn = ctx.scn;
    ctx.put("version", env!("CARGO_PKG_VERSION"));
    ctx.put("command", format!("{command:?}").to_lowercase());
    ctx.put("config_hash", &scn.config_hash);
    ctx.put("seed", scn.seed);
    ctx.put("n", scn.geometry.n());
    ctx.put("n_cp", scn.geometry.n_cp());
    ctx.put("n_cs", scn.n_cs);
    ctx.put("occupied", scn.occupied.len());
    ctx.put("gamma", scn.grid.len());
    ctx.put("cc_mode", format!("{:?}", scn.cc_mode).to_lowercase());
    ctx.put("selector", format!("{:?}", scn.file.design.selector).to_lowercase());
}

fn unreachable(level: f64, what: &str) -> RunError {
    RunError::Unreachable {
        message: format!("{what} cannot reach {level} dB before data carriers run out"),
        artifacts: Box::default(),
    }
}

/// A designed allocation ready for simulation.
struct Designed {
    geom: SystemGeometry,
    alloc: CarrierAllocation,
    solution: ShapingSolution,
    steps: Vec<TraceStep>,
    /// Set when a level target was missed.
    unreached: Option<RunError>,
}

impl Designed {
    fn complete(self) -> Result<Self, RunError> {
        match self.unreached {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

fn selection_config(scn: &Scenario, target: Target) -> SelectionConfig {
    match target {
        Target::Beta(b) => SelectionConfig::with_max_cc(b),
        Target::Level(t) => SelectionConfig::with_target(t),
    }
    .selector(scn.selector)
}

fn design_occs(scn: &Scenario, geom: SystemGeometry, target: Target) -> Result<Designed, RunError> {
    let trace = run_occs(&geom, &scn.occupied, &scn.grid, &selection_config(scn, target))?;
    let unreached = match target {
        Target::Level(t) if trace.unreached => Some(unreachable(t, "OCCS")),
        _ => None,
    };
    Ok(Designed { geom, alloc: trace.final_alloc, solution: trace.final_solution, steps: trace.steps, unreached })
}

/// Band-edge design, growing β one carrier at a time for a level target.
fn design_standard(scn: &Scenario, geom: SystemGeometry, target: Target) -> Result<Designed, RunError> {
    let max_beta = match target {
        Target::Beta(b) => b,
        Target::Level(_) => scn.occupied.len() - 1,
    };
    let mut steps = Vec::new();
    let mut previous: Vec<i32> = Vec::new();
    let mut last = None;
    for beta in 0..=max_beta {
        let (alloc, solution) = standard_design(&geom, &scn.occupied, &scn.grid, beta, CapRule::default())?;
        let chosen = alloc.cc().iter().copied().find(|k| !previous.contains(k));
        previous = alloc.cc().to_vec();
        let p_oob_db = oob_db(solution.p_oob, &geom);
        steps.push(TraceStep {
            chosen,
            beta,
            theta: solution.theta,
            mean_cc_power: solution.mean_cc_power,
            p_oob: solution.p_oob,
            p_oob_db,
        });
        let reached = matches!(target, Target::Level(t) if p_oob_db <= t);
        last = Some((alloc, solution));
        if reached {
            break;
        }
    }
    let (alloc, solution) = last.expect("at least one step");
    let unreached = match target {
        Target::Level(t) if steps.last().is_some_and(|s| s.p_oob_db > t) => {
            Some(unreachable(t, "band-edge allocation"))
        }
        _ => None,
    };
    Ok(Designed { geom, alloc, solution, steps, unreached })
}

fn design_none(scn: &Scenario, geom: SystemGeometry) -> Result<Designed, RunError> {
    let (alloc, solution) = standard_design(&geom, &scn.occupied, &scn.grid, 0, CapRule::default())?;
    let steps = vec![TraceStep {
        chosen: None,
        beta: 0,
        theta: 0.0,
        mean_cc_power: 0.0,
        p_oob: solution.p_oob,
        p_oob_db: oob_db(solution.p_oob, &geom),
    }];
    Ok(Designed { geom, alloc, solution, steps, unreached: None })
}

fn design_mode(scn: &Scenario) -> Result<Designed, RunError> {
    match scn.cc_mode {
        CcMode::None => design_none(scn, scn.geometry),
        CcMode::Standard => design_standard(scn, scn.geometry, scn.target),
        CcMode::Occs => design_occs(scn, scn.geometry, scn.target),
    }
}

fn record_design(ctx: &mut Ctx, prefix: &str, d: &Designed) -> Result<(), RunError> {
    let alpha = d.alloc.alpha();
    let beta = d.alloc.beta();
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    ctx.put(key("alpha"), alpha);
    ctx.put(key("beta"), beta);
    ctx.put(key("theta"), d.solution.theta);
    ctx.put(key("mean_cc_power"), d.solution.mean_cc_power);
    ctx.put(key("p_oob"), d.solution.p_oob);
    ctx.put(key("p_oob_db"), oob_db(d.solution.p_oob, &d.geom));
    ctx.put(key("p_oob_baseline_db"), oob_db(d.solution.p_oob_baseline, &d.geom));
    ctx.put(key("snr_loss_db"), format!("{:.2}", snr_loss(alpha, beta)?));
    let cc: Vec<String> = d.alloc.cc().iter().map(i32::to_string).collect();
    ctx.put(key("cc_indices"), cc.join(" "));
    Ok(())
}

fn write_design(ctx: &mut Ctx, d: &Designed) -> Result<(), RunError> {
    let out = ctx.create("w.csv")?;
    write_w_csv(out, &d.solution.w, &ctx.prov)?;
    let out = ctx.create("trace.csv")?;
    write_trace_csv(out, &d.steps, &ctx.prov)?;
    record_design(ctx, "", d)
}

fn design(ctx: &mut Ctx) -> Result<(), RunError> {
    let mut d = design_mode(ctx.scn)?;
    write_design(ctx, &d)?;
    match d.unreached.take() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn sweep(ctx: &mut Ctx) -> Result<(), RunError> {
    let scn = ctx.scn;
    let spec = scn.sweep.clone().ok_or_else(|| ConfigError::Invalid {
        path: "sweep".into(),
        message: "the sweep command needs a [sweep] section".into(),
    })?;
    let mut rows = Vec::new();
    let mut occs_curves: Vec<Vec<f64>> = Vec::new();
    for &n_cp in &spec.n_cp {
        let geom = scn.geometry.with_cp(n_cp)?;
        let config = SelectionConfig::with_max_cc(spec.max_beta).selector(scn.selector);
        let occs = run_occs(&geom, &scn.occupied, &scn.grid, &config)?.steps;
        let standard = standard_sweep(&geom, &scn.occupied, &scn.grid, spec.max_beta, CapRule::default())?;
        for (scheme, steps) in [("occs", &occs), ("standard", &standard)] {
            for s in steps.iter() {
                rows.push([n_cp.to_string(), scheme.to_string(), s.beta.to_string(), s.p_oob_db.to_string()]);
            }
            let needed = steps.iter().find(|s| s.p_oob_db <= spec.target_db).map(|s| s.beta);
            ctx.put(
                format!("sweep.n_cp_{n_cp}.{scheme}.carriers_needed"),
                needed.map_or_else(|| "unreached".to_string(), |b| b.to_string()),
            );
        }
        occs_curves.push(occs.iter().map(|s| s.p_oob_db).collect());
    }
    ctx.put("sweep.target_db", spec.target_db);
    let spread = (0..=spec.max_beta)
        .map(|b| {
            let vals = occs_curves.iter().map(|c| c[b]);
            vals.clone().fold(f64::NEG_INFINITY, f64::max) - vals.fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    ctx.put("sweep.occs_max_spread_db", spread);
    let out = ctx.create("sweep.csv")?;
    write_table(out, &ctx.prov, &["n_cp", "scheme", "beta", "p_oob_db"], rows)?;
    Ok(())
}

fn design_system(scn: &Scenario, sys: System) -> Result<Designed, RunError> {
    match sys {
        System::Reference => design_none(scn, scn.geometry),
        System::Standard => design_standard(scn, scn.geometry, scn.target),
        System::Occs => design_occs(scn, scn.geometry, scn.target),
        System::OccsWindowed => {
            let beta = scn.window_beta.expect("validated window section");
            let mut d = design_occs(scn, scn.geometry, Target::Beta(beta))?;
            d.geom = d.geom.with_cs(scn.n_cs)?;
            Ok(d)
        }
    }?
    .complete()
}

fn link_for(scn: &Scenario, d: &Designed) -> Result<Link, RunError> {
    let w = if d.alloc.beta() == 0 { CMatrix::zeros(0, d.alloc.alpha()) } else { d.solution.w.clone() };
    let tx = Transmitter::new(d.geom, d.alloc.clone(), w, scn.simulation().oversample)?;
    Ok(Link::new(tx))
}

/// Bin-aligned band well clear of the occupied spectrum, between 3N/4 and
/// the edge of the oversampled band.
fn far_region(scn: &Scenario, psd: &PsdEstimate) -> Option<ccshape::spectral::FrequencyGrid> {
    let n = scn.geometry.n() as f64;
    let os = scn.simulation().oversample as f64;
    let spacing = psd.freq[1] - psd.freq[0];
    let lo = (0.75 * n / spacing).ceil() * spacing;
    let hi = ((os / 2.0 - 0.25) * n / spacing).floor() * spacing;
    if hi <= lo {
        return None;
    }
    make_sampling_grid(&[(-hi, -lo), (lo, hi)], spacing).ok()
}

fn record_psd(ctx: &mut Ctx, key: &str, psd: &PsdEstimate) -> Result<(), RunError> {
    ctx.put(format!("{key}.oob_db"), psd.mean_level_db(&ctx.scn.grid)?);
    if let Some(far) = far_region(ctx.scn, psd) {
        ctx.put(format!("{key}.far_db"), psd.mean_level_db(&far)?);
    }
    Ok(())
}

fn psd(ctx: &mut Ctx) -> Result<(), RunError> {
    let scn = ctx.scn;
    let sim = scn.simulation().clone();
    for &sys in &sim.systems {
        let d = design_system(scn, sys)?;
        record_design(ctx, sys.name(), &d)?;
        let link = link_for(scn, &d)?;
        let pre = link.psd(sim.n_symbols, scn.seed, scn.nfft)?;
        write_psd_csv(ctx.create(&format!("psd_{sys}.csv"))?, &pre, &ctx.prov)?;
        record_psd(ctx, &format!("psd.{sys}"), &pre)?;
        if let Some(pa) = &sim.pa {
            let amplified = link.with_pa(pa.p, pa.ibo_db, sim.n_symbols, scn.seed)?;
            let post = amplified.psd(sim.n_symbols, scn.seed, scn.nfft)?;
            write_psd_csv(ctx.create(&format!("psd_{sys}_pa.csv"))?, &post, &ctx.prov)?;
            record_psd(ctx, &format!("psd.{sys}.pa"), &post)?;
        }
    }
    Ok(())
}

/// Exported CCDF resolution in dB.
const CCDF_STEP_DB: f64 = 0.05;

fn papr(ctx: &mut Ctx) -> Result<(), RunError> {
    let scn = ctx.scn;
    let sim = scn.simulation().clone();
    for &sys in &sim.systems {
        let d = design_system(scn, sys)?;
        record_design(ctx, sys.name(), &d)?;
        let curve = link_for(scn, &d)?.papr_ccdf(sim.papr_symbols, scn.seed)?;
        for (label, prob) in [("1e-2", 1e-2), ("1e-3", 1e-3), ("1e-4", 1e-4)] {
            if prob * sim.papr_symbols as f64 >= 1.0 {
                ctx.put(format!("papr.{sys}.at_{label}"), curve.papr_at(prob));
            }
        }
        let first = (curve.papr_db[0] / CCDF_STEP_DB).floor() as i64;
        let last = (curve.papr_db[curve.papr_db.len() - 1] / CCDF_STEP_DB).ceil() as i64;
        let axis: Vec<f64> = (first..=last).map(|i| i as f64 * CCDF_STEP_DB).collect();
        let (papr_db, prob) = curve.resample(&axis).into_iter().unzip();
        write_ccdf_csv(ctx.create(&format!("ccdf_{sys}.csv"))?, &CcdfCurve { papr_db, prob }, &ctx.prov)?;
    }
    Ok(())
}

/// Largest exhaustive search `verify` attempts.
const VERIFY_SUBSET_LIMIT: u64 = 5_000;

/// Symbols compared against the per-symbol optimizer.
const VERIFY_VECTORS: u64 = 32;

struct Check {
    report: OracleReport,
    tolerance: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.report.rel_err <= self.tolerance
    }
}

fn verify(ctx: &mut Ctx) -> Result<(), RunError> {
    let scn = ctx.scn;
    let d = design_mode(scn)?.complete()?;
    record_design(ctx, "", &d)?;
    let p = build_projection_matrices(&d.geom, &d.alloc, &scn.grid)?;
    let trials = scn.simulation().n_symbols;
    let mut checks = Vec::new();

    // Monte-Carlo estimates agree to four standard errors.
    let w = if d.alloc.beta() == 0 { CMatrix::zeros(0, d.alloc.alpha()) } else { d.solution.w.clone() };
    let oob = monte_carlo_oob(&w, &p.p_cc, &p.p_dc, trials, scn.seed)?;
    checks.push(Check {
        report: OracleReport::new(Quantity::MeanOob, oob.mean, d.solution.p_oob),
        tolerance: 4.0 * oob.std_err / d.solution.p_oob,
    });
    if d.alloc.beta() > 0 {
        let power = monte_carlo_cc_power(&w, trials, scn.seed)?;
        checks.push(Check {
            report: OracleReport::new(Quantity::MeanCcPower, power.mean, d.solution.mean_cc_power),
            tolerance: 4.0 * power.std_err / d.solution.mean_cc_power,
        });

        // W d solves the per-symbol problem with its own power as the cap.
        let optimizer = PerSymbolOptimizer::new(&p.p_cc, &p.p_dc)?;
        let mut worst = 0.0f64;
        for i in 0..VERIFY_VECTORS {
            let data = qpsk_symbols(&mut symbol_rng(scn.seed, i), d.alloc.alpha());
            let cc = &w * DVector::from_column_slice(&data);
            let oracle = DVector::from_vec(optimizer.solve(&data, cc.norm_squared()));
            worst = worst.max((oracle - &cc).norm() / cc.norm());
        }
        let mut report = OracleReport::new(Quantity::CcVector, worst, 0.0);
        report.rel_err = worst;
        checks.push(Check { report, tolerance: 1e-6 });

        let count = scn.occupied.len() as u64;
        let beta = d.alloc.beta() as u64;
        let subsets = (0..beta).fold(1u64, |acc, i| acc.saturating_mul(count - i) / (i + 1));
        if subsets <= VERIFY_SUBSET_LIMIT {
            let best = exhaustive_selection(
                &d.geom,
                &scn.occupied.carriers(),
                &scn.grid,
                d.alloc.beta(),
                CapRule::default(),
            )?;
            // the heuristic may trail the optimum; report how far
            let report = OracleReport::new(Quantity::Subset, best.p_oob, d.solution.p_oob);
            checks.push(Check { tolerance: f64::INFINITY, report });
        }
    }

    let failed = checks.iter().filter(|c| !c.pass()).count();
    let rows: Vec<[String; 6]> = checks
        .iter()
        .map(|c| {
            [
                format!("{:?}", c.report.quantity),
                c.report.oracle.to_string(),
                c.report.closed_form.to_string(),
                c.report.rel_err.to_string(),
                c.tolerance.to_string(),
                c.pass().to_string(),
            ]
        })
        .collect();
    let out = ctx.create("verify.csv")?;
    write_table(out, &ctx.prov, &["quantity", "oracle", "closed_form", "rel_err", "tolerance", "pass"], rows)?;
    ctx.put("verify.checks", checks.len());
    ctx.put("verify.failed", failed);
    if failed > 0 {
        return Err(RunError::Verification(failed));
    }
    Ok(())
}
