//! Scenario files. The key names below are a stable interface; see the
//! README for the full reference.

use std::fmt;
use std::path::Path;

use ccshape::occs::{OccupiedSet, Selector};
use ccshape::spectral::{check_grid_avoids, make_sampling_grid, FrequencyGrid, SystemGeometry};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub geometry: GeometrySection,
    pub carriers: CarriersSection,
    pub grid: GridSection,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSection>,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n: usize,
    pub n_cp: usize,
    #[serde(default)]
    pub n_cs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarriersSection {
    /// Inclusive `[first, last]` intervals.
    pub ranges: Vec<[i32; 2]>,
    #[serde(default)]
    pub exclude: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub regions: Vec<[f64; 2]>,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcMode {
    None,
    Standard,
    #[default]
    Occs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SelectorName {
    #[default]
    Max,
    Min,
}

impl From<SelectorName> for Selector {
    fn from(s: SelectorName) -> Self {
        match s {
            SelectorName::Max => Selector::MaxColumnPower,
            SelectorName::Min => Selector::MinColumnPower,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default)]
    pub cc_mode: CcMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_p_oob_db: Option<f64>,
    #[serde(default)]
    pub selector: SelectorName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_cp: Vec<usize>,
    pub max_beta: usize,
    /// Level reported as "carriers needed" in the summary.
    #[serde(default = "default_sweep_target")]
    pub target_db: f64,
}

fn default_sweep_target() -> f64 {
    -40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// All occupied carriers carry data, no cancellation.
    Reference,
    Standard,
    Occs,
    /// OCCS with the window section's β and the geometry's cyclic suffix.
    OccsWindowed,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Reference => "reference",
            System::Standard => "standard",
            System::Occs => "occs",
            System::OccsWindowed => "occs_windowed",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    #[default]
    Qpsk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaSection {
    pub p: f64,
    pub ibo_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_systems")]
    pub systems: Vec<System>,
    #[serde(default = "default_n_symbols")]
    pub n_symbols: usize,
    #[serde(default = "default_n_symbols")]
    pub papr_symbols: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfft: Option<usize>,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa: Option<PaSection>,
}

fn default_systems() -> Vec<System> {
    vec![System::Reference, System::Standard, System::Occs]
}

fn default_n_symbols() -> usize {
    10_000
}

fn default_oversample() -> usize {
    4
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            systems: default_systems(),
            n_symbols: default_n_symbols(),
            papr_symbols: default_n_symbols(),
            seed: 0,
            oversample: default_oversample(),
            nfft: None,
            modulation: Modulation::default(),
            pa: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    /// The bundled N = 256 notch scenario.
    pub fn notch256() -> Self {
        Self::from_toml(NOTCH256_SCENARIO).expect("bundled scenario parses")
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn config_hash(&self) -> String {
        let canonical = toml::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub const NOTCH256_SCENARIO: &str = include_str!("../scenarios/notch256.toml");

/// How many cancellation carriers a design uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Beta(usize),
    Level(f64),
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub n_cp: Vec<usize>,
    pub max_beta: usize,
    pub target_db: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    /// Geometry with the cyclic suffix stripped; designs never use it.
    pub geometry: SystemGeometry,
    pub n_cs: usize,
    pub occupied: OccupiedSet,
    pub grid: FrequencyGrid,
    pub cc_mode: CcMode,
    pub target: Target,
    pub selector: Selector,
    pub sweep: Option<SweepSpec>,
    pub window_beta: Option<usize>,
    pub seed: u64,
    pub nfft: usize,
    pub config_hash: String,
}

impl Scenario {
    pub fn notch256() -> Self {
        validate_scenario(ScenarioFile::notch256()).expect("bundled scenario validates")
    }

    pub fn simulation(&self) -> &SimulationSection {
        &self.file.simulation
    }
}

/// Checks every invariant and builds the working scenario.
pub fn validate_scenario(file: ScenarioFile) -> Result<Scenario, ConfigError> {
    let g = &file.geometry;
    if g.n < 2 || !g.n.is_power_of_two() {
        return Err(invalid("geometry.n", format!("{} is not a power of two of at least 2", g.n)));
    }
    if g.n_cp >= g.n {
        return Err(invalid("geometry.n_cp", format!("{} must be below n = {}", g.n_cp, g.n)));
    }
    if g.n_cs >= g.n {
        return Err(invalid("geometry.n_cs", format!("{} must be below n = {}", g.n_cs, g.n)));
    }
    let geometry = SystemGeometry::new(g.n, g.n_cp, 0).map_err(|e| invalid("geometry", e.to_string()))?;

    let occupied = occupied_set(&file.carriers, &geometry)?;
    let count = occupied.len();

    let gs = &file.grid;
    if !(gs.step.is_finite() && gs.step > 0.0) {
        return Err(invalid("grid.step", format!("{} must be positive", gs.step)));
    }
    if gs.regions.is_empty() {
        return Err(invalid("grid.regions", "at least one region is required"));
    }
    for (i, [lo, hi]) in gs.regions.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid(format!("grid.regions[{i}]"), format!("[{lo}, {hi}] is not an ordered interval")));
        }
    }
    let regions: Vec<(f64, f64)> = gs.regions.iter().map(|&[a, b]| (a, b)).collect();
    let grid = make_sampling_grid(&regions, gs.step).map_err(|e| invalid("grid.regions", e.to_string()))?;
    check_grid_avoids(&grid, &occupied.carriers()).map_err(|e| invalid("grid.regions", e.to_string()))?;

    let d = &file.design;
    let target = match (d.cc_mode, d.beta, d.stop_p_oob_db) {
        (_, Some(_), Some(_)) => {
            return Err(invalid("design", "set either beta or stop_p_oob_db, not both"));
        }
        (CcMode::None, None | Some(0), None) => Target::Beta(0),
        (CcMode::None, _, _) => {
            return Err(invalid("design.cc_mode", "cc_mode = \"none\" takes no beta or stop_p_oob_db"));
        }
        (_, Some(b), None) => {
            check_beta("design.beta", b, count)?;
            Target::Beta(b)
        }
        (_, None, Some(t)) if t.is_finite() => Target::Level(t),
        (_, None, Some(t)) => return Err(invalid("design.stop_p_oob_db", format!("{t} is not finite"))),
        (_, None, None) => return Err(invalid("design", "beta or stop_p_oob_db is required")),
    };

    let sweep = match &file.sweep {
        None => None,
        Some(s) => {
            if s.n_cp.is_empty() {
                return Err(invalid("sweep.n_cp", "at least one prefix length is required"));
            }
            for (i, &cp) in s.n_cp.iter().enumerate() {
                if cp >= g.n {
                    return Err(invalid(format!("sweep.n_cp[{i}]"), format!("{cp} must be below n = {}", g.n)));
                }
            }
            check_beta("sweep.max_beta", s.max_beta, count)?;
            if !s.target_db.is_finite() {
                return Err(invalid("sweep.target_db", "must be finite"));
            }
            Some(SweepSpec { n_cp: s.n_cp.clone(), max_beta: s.max_beta, target_db: s.target_db })
        }
    };

    let window_beta = match &file.window {
        None => None,
        Some(w) => {
            check_beta("window.beta", w.beta, count)?;
            Some(w.beta)
        }
    };

    let sim = &file.simulation;
    if sim.oversample == 0 {
        return Err(invalid("simulation.oversample", "must be at least 1"));
    }
    if sim.n_symbols == 0 {
        return Err(invalid("simulation.n_symbols", "must be at least 1"));
    }
    if sim.papr_symbols == 0 {
        return Err(invalid("simulation.papr_symbols", "must be at least 1"));
    }
    let segment = (g.n + g.n_cp + g.n_cs) * sim.oversample;
    let band = g.n * sim.oversample;
    let nfft = match sim.nfft {
        Some(nfft) => nfft,
        None => {
            let mut nfft = segment.next_power_of_two();
            while !grid_on_bins(&grid, band, nfft) && nfft < MAX_DEFAULT_NFFT {
                nfft *= 2;
            }
            nfft
        }
    };
    if !nfft.is_power_of_two() || nfft < segment {
        return Err(invalid(
            "simulation.nfft",
            format!("{nfft} must be a power of two covering the {segment}-sample symbol"),
        ));
    }
    if !grid_on_bins(&grid, band, nfft) {
        return Err(invalid(
            "simulation.nfft",
            format!("bin spacing {} does not divide the grid frequencies", band as f64 / nfft as f64),
        ));
    }
    for (i, sys) in sim.systems.iter().enumerate() {
        if sim.systems[..i].contains(sys) {
            return Err(invalid(format!("simulation.systems[{i}]"), format!("{sys} is listed twice")));
        }
        match sys {
            System::Standard | System::Occs if d.cc_mode == CcMode::None => {
                return Err(invalid(
                    format!("simulation.systems[{i}]"),
                    format!("{sys} needs a design beta or stop_p_oob_db"),
                ));
            }
            System::OccsWindowed if window_beta.is_none() => {
                return Err(invalid(format!("simulation.systems[{i}]"), "occs_windowed needs a [window] section"));
            }
            System::OccsWindowed if g.n_cs == 0 => {
                return Err(invalid(format!("simulation.systems[{i}]"), "occs_windowed needs geometry.n_cs > 0"));
            }
            _ => {}
        }
    }
    if let Some(pa) = &sim.pa {
        if !(pa.p.is_finite() && pa.p > 0.0) {
            return Err(invalid("simulation.pa.p", format!("{} must be positive", pa.p)));
        }
        if !pa.ibo_db.is_finite() {
            return Err(invalid("simulation.pa.ibo_db", "must be finite"));
        }
    }

    let config_hash = file.config_hash();
    Ok(Scenario {
        geometry,
        n_cs: g.n_cs,
        occupied,
        grid,
        cc_mode: d.cc_mode,
        target,
        selector: d.selector.into(),
        sweep,
        window_beta,
        seed: sim.seed,
        nfft,
        config_hash,
        file,
    })
}

const MAX_DEFAULT_NFFT: usize = 1 << 20;

/// Every grid frequency falls on a bin of an `nfft` transform spanning `band`
/// subcarrier spacings.
fn grid_on_bins(grid: &FrequencyGrid, band: usize, nfft: usize) -> bool {
    let spacing = band as f64 / nfft as f64;
    grid.points().iter().all(|&v| {
        let r = v / spacing;
        (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
    })
}

fn check_beta(path: &str, beta: usize, count: usize) -> Result<(), ConfigError> {
    if beta >= count {
        return Err(invalid(
            path,
            format!("{beta} cancellation carriers leave no data carrier among {count} occupied"),
        ));
    }
    Ok(())
}

/// Each range becomes one block; exclusions thin a block without splitting it.
fn occupied_set(c: &CarriersSection, geom: &SystemGeometry) -> Result<OccupiedSet, ConfigError> {
    if c.ranges.is_empty() {
        return Err(invalid("carriers.ranges", "at least one range is required"));
    }
    for (i, &[lo, hi]) in c.ranges.iter().enumerate() {
        if lo > hi {
            return Err(invalid(format!("carriers.ranges[{i}]"), format!("[{lo}, {hi}] is not ordered")));
        }
        if !geom.contains(lo) || !geom.contains(hi) {
            return Err(invalid(
                format!("carriers.ranges[{i}]"),
                format!("[{lo}, {hi}] leaves [{}, {}]", geom.min_index(), geom.max_index()),
            ));
        }
    }
    let mut order: Vec<usize> = (0..c.ranges.len()).collect();
    order.sort_by_key(|&i| c.ranges[i][0]);
    for pair in order.windows(2) {
        let (a, b) = (c.ranges[pair[0]], c.ranges[pair[1]]);
        if b[0] <= a[1] {
            return Err(invalid(
                "carriers.ranges",
                format!("[{}, {}] overlaps [{}, {}]", a[0], a[1], b[0], b[1]),
            ));
        }
    }
    for (i, &k) in c.exclude.iter().enumerate() {
        if !c.ranges.iter().any(|&[lo, hi]| (lo..=hi).contains(&k)) {
            return Err(invalid(format!("carriers.exclude[{i}]"), format!("{k} is not inside any range")));
        }
    }
    let blocks: Vec<Vec<i32>> = order
        .iter()
        .map(|&i| {
            let [lo, hi] = c.ranges[i];
            (lo..=hi).filter(|k| !c.exclude.contains(k)).collect::<Vec<_>>()
        })
        .filter(|b| !b.is_empty())
        .collect();
    if blocks.is_empty() {
        return Err(invalid("carriers", "no occupied carriers remain after exclusions"));
    }
    OccupiedSet::new(blocks).map_err(|e| invalid("carriers", e.to_string()))
}
