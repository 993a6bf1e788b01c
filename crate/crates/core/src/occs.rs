//! Cancellation-carrier placement: the iterative OCCS heuristic and the
//! conventional band-edge allocation it is compared against.
//!
//! OCCS starts with every occupied carrier carrying data. After each design
//! of `W` the residual map `G = P_CC W + P_DC` tells how much sampled
//! out-of-band power each remaining data carrier causes (`‖g_j‖²`); the
//! extremal one becomes a cancellation carrier and the design is redone.

use crate::error::{Error, Result};
use crate::simlab::oob_db;
use crate::solver::{design, residual_projection, PowerBudget, ShapingSolution};
use crate::spectral::{
    check_grid_avoids, projection_matrix, CMatrix, CarrierAllocation, FrequencyGrid, ProjectionMatrices,
    SystemGeometry,
};

/// Occupied carriers grouped in contiguous blocks. Block edges are where
/// band-edge cancellation carriers go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupiedSet {
    blocks: Vec<Vec<i32>>,
}

impl OccupiedSet {
    /// Each block must be non-empty and ascending; blocks must be ascending
    /// and disjoint. Gaps inside a block (an excluded DC carrier, say) are
    /// allowed and do not split it.
    pub fn new(blocks: Vec<Vec<i32>>) -> Result<Self> {
        let mut last: Option<i32> = None;
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::Allocation("empty carrier block".into()));
            }
            for &k in block {
                if last.is_some_and(|l| k <= l) {
                    return Err(Error::Allocation(format!("carrier {k} is out of order or repeated")));
                }
                last = Some(k);
            }
        }
        if blocks.is_empty() {
            return Err(Error::Allocation("no occupied carriers".into()));
        }
        Ok(Self { blocks })
    }

    /// Splits a sorted carrier list wherever consecutive indices differ by
    /// more than one.
    pub fn from_carriers(mut carriers: Vec<i32>) -> Result<Self> {
        carriers.sort_unstable();
        let mut blocks: Vec<Vec<i32>> = Vec::new();
        for k in carriers {
            match blocks.last_mut() {
                Some(b) if b.last().is_some_and(|&l| k == l + 1) => b.push(k),
                _ => blocks.push(vec![k]),
            }
        }
        Self::new(blocks)
    }

    pub fn blocks(&self) -> &[Vec<i32>] {
        &self.blocks
    }

    pub fn carriers(&self) -> Vec<i32> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selector {
    /// Promote the data carrier causing the most out-of-band power.
    #[default]
    MaxColumnPower,
    /// Promote the data carrier causing the least out-of-band power.
    MinColumnPower,
}

/// Mean power budget as a function of the current number of cancellation carriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapRule {
    /// `cap = power · β`.
    PerCarrier(f64),
    Fixed(f64),
}

impl Default for CapRule {
    fn default() -> Self {
        CapRule::PerCarrier(1.0)
    }
}

impl CapRule {
    pub fn budget(&self, beta: usize) -> Result<PowerBudget> {
        match *self {
            CapRule::PerCarrier(p) => PowerBudget::new(p * beta as f64),
            CapRule::Fixed(cap) => PowerBudget::new(cap),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Required mean out-of-band level in dB (see [`oob_db`]).
    pub stop_p_oob_db: Option<f64>,
    pub max_cc: Option<usize>,
    pub selector: Selector,
    pub cap_rule: CapRule,
}

impl SelectionConfig {
    pub fn with_max_cc(max_cc: usize) -> Self {
        Self { stop_p_oob_db: None, max_cc: Some(max_cc), selector: Selector::default(), cap_rule: CapRule::default() }
    }

    pub fn with_target(stop_p_oob_db: f64) -> Self {
        Self {
            stop_p_oob_db: Some(stop_p_oob_db),
            max_cc: None,
            selector: Selector::default(),
            cap_rule: CapRule::default(),
        }
    }

    pub fn selector(mut self, selector: Selector) -> Self {
        self.selector = selector;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.stop_p_oob_db.is_none() && self.max_cc.is_none() {
            return Err(Error::Selection("either a target level or a carrier budget is required".into()));
        }
        if self.stop_p_oob_db.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Selection("target level must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    /// Carrier promoted at this step; `None` for the initial all-data state.
    pub chosen: Option<i32>,
    pub beta: usize,
    pub theta: f64,
    pub mean_cc_power: f64,
    pub p_oob: f64,
    pub p_oob_db: f64,
}

#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub steps: Vec<TraceStep>,
    pub final_alloc: CarrierAllocation,
    pub final_solution: ShapingSolution,
    /// The target level was set but not met before data carriers ran out.
    pub unreached: bool,
}

impl SelectionTrace {
    pub fn chosen(&self) -> Vec<i32> {
        self.steps.iter().filter_map(|s| s.chosen).collect()
    }

    /// First recorded β whose level is at or below `level_db`.
    pub fn carriers_needed(&self, level_db: f64) -> Option<usize> {
        self.steps.iter().find(|s| s.p_oob_db <= level_db).map(|s| s.beta)
    }
}

/// `‖g_j‖²` for every column of `g`.
pub fn column_oob_power(g: &CMatrix) -> Vec<f64> {
    g.column_iter().map(|c| c.norm_squared()).collect()
}

/// Data carrier whose column power is extremal; ties go to the lowest index.
pub fn select_next_cc(g: &CMatrix, dc: &[i32], selector: Selector) -> Result<i32> {
    if dc.is_empty() {
        return Err(Error::Selection("no data carriers left to promote".into()));
    }
    if g.ncols() != dc.len() {
        return Err(Error::Contract(format!("G has {} columns for {} data carriers", g.ncols(), dc.len())));
    }
    let powers = column_oob_power(g);
    let mut best = 0;
    for j in 1..powers.len() {
        let better = match selector {
            Selector::MaxColumnPower => powers[j] > powers[best],
            Selector::MinColumnPower => powers[j] < powers[best],
        };
        // dc is ascending, so keeping the first extremum breaks ties low
        if better || (powers[j] == powers[best] && dc[j] < dc[best]) {
            best = j;
        }
    }
    Ok(dc[best])
}

/// Precomputed spectra for every occupied carrier so each step only gathers columns.
struct ColumnBank {
    carriers: Vec<i32>,
    full: CMatrix,
}

impl ColumnBank {
    fn new(geom: &SystemGeometry, carriers: Vec<i32>, grid: &FrequencyGrid) -> Self {
        let full = projection_matrix(geom, &carriers, grid);
        Self { carriers, full }
    }

    fn gather(&self, subset: &[i32]) -> CMatrix {
        let cols: Vec<_> = subset
            .iter()
            .map(|k| {
                let j = self.carriers.binary_search(k).expect("carrier not in bank");
                self.full.column(j)
            })
            .collect();
        if cols.is_empty() {
            CMatrix::zeros(self.full.nrows(), 0)
        } else {
            CMatrix::from_columns(&cols)
        }
    }

    fn matrices(&self, alloc: &CarrierAllocation) -> ProjectionMatrices {
        ProjectionMatrices { p_dc: self.gather(alloc.dc()), p_cc: self.gather(alloc.cc()) }
    }
}

fn check_inputs(geom: &SystemGeometry, occupied: &OccupiedSet, grid: &FrequencyGrid) -> Result<Vec<i32>> {
    let carriers = occupied.carriers();
    CarrierAllocation::data_only(carriers.clone())?.check_range(geom)?;
    check_grid_avoids(grid, &carriers)?;
    Ok(carriers)
}

fn solve_allocation(
    bank: &ColumnBank,
    alloc: &CarrierAllocation,
    cap_rule: CapRule,
) -> Result<(ShapingSolution, ProjectionMatrices)> {
    let p = bank.matrices(alloc);
    // the budget is irrelevant without cancellation carriers
    let budget = cap_rule.budget(alloc.beta().max(1))?;
    Ok((design(&p, budget)?, p))
}

/// Greedy OCCS loop. The design is redone after every promotion.
pub fn run_occs(
    geom: &SystemGeometry,
    occupied: &OccupiedSet,
    grid: &FrequencyGrid,
    config: &SelectionConfig,
) -> Result<SelectionTrace> {
    config.validate()?;
    let carriers = check_inputs(geom, occupied, grid)?;
    let bank = ColumnBank::new(geom, carriers.clone(), grid);
    let mut alloc = CarrierAllocation::data_only(carriers)?;
    let mut steps = Vec::new();
    let mut chosen = None;
    loop {
        let (solution, p) = solve_allocation(&bank, &alloc, config.cap_rule)?;
        let p_oob_db = oob_db(solution.p_oob, geom);
        steps.push(TraceStep {
            chosen,
            beta: alloc.beta(),
            theta: solution.theta,
            mean_cc_power: solution.mean_cc_power,
            p_oob: solution.p_oob,
            p_oob_db,
        });
        let reached = config.stop_p_oob_db.is_some_and(|t| p_oob_db <= t);
        let exhausted = config.max_cc.is_some_and(|m| alloc.beta() >= m);
        if reached || exhausted || alloc.alpha() == 1 {
            let unreached = config.stop_p_oob_db.is_some() && !reached;
            return Ok(SelectionTrace { steps, final_alloc: alloc, final_solution: solution, unreached });
        }
        let g = residual_projection(&p.p_cc, &solution.w, &p.p_dc);
        let m = select_next_cc(&g, alloc.dc(), config.selector)?;
        let dc: Vec<i32> = alloc.dc().iter().copied().filter(|&k| k != m).collect();
        let mut cc = alloc.cc().to_vec();
        cc.push(m);
        alloc = CarrierAllocation::new(dc, cc)?;
        chosen = Some(m);
    }
}

/// Band-edge allocation: walks the edges in the order (block 0 left, block 0
/// right, block 1 left, ...) taking the next inward carrier each time until
/// `beta` carriers are assigned.
pub fn standard_edge_selection(occupied: &OccupiedSet, beta: usize) -> Result<CarrierAllocation> {
    let total = occupied.len();
    if beta > total {
        return Err(Error::Allocation(format!("{beta} cancellation carriers requested from {total} occupied")));
    }
    if beta == total {
        return Err(Error::Allocation("at least one data carrier must remain".into()));
    }
    // remaining carriers of block b are blocks[b][lo..hi]
    let mut cursors: Vec<(usize, usize)> = occupied.blocks().iter().map(|b| (0, b.len())).collect();
    let mut cc = Vec::with_capacity(beta);
    while cc.len() < beta {
        for (block, (lo, hi)) in occupied.blocks().iter().zip(cursors.iter_mut()) {
            for from_left in [true, false] {
                if cc.len() == beta || lo >= hi {
                    continue;
                }
                if from_left {
                    cc.push(block[*lo]);
                    *lo += 1;
                } else {
                    *hi -= 1;
                    cc.push(block[*hi]);
                }
            }
        }
    }
    let dc = occupied.carriers().into_iter().filter(|k| !cc.contains(k)).collect();
    CarrierAllocation::new(dc, cc)
}

/// Designs `W` for the band-edge allocation with `beta` carriers.
pub fn standard_design(
    geom: &SystemGeometry,
    occupied: &OccupiedSet,
    grid: &FrequencyGrid,
    beta: usize,
    cap_rule: CapRule,
) -> Result<(CarrierAllocation, ShapingSolution)> {
    let carriers = check_inputs(geom, occupied, grid)?;
    let alloc = standard_edge_selection(occupied, beta)?;
    let bank = ColumnBank::new(geom, carriers, grid);
    let (solution, _) = solve_allocation(&bank, &alloc, cap_rule)?;
    Ok((alloc, solution))
}

/// Designs `W` for an arbitrary allocation drawn from the occupied set.
pub fn design_allocation(
    geom: &SystemGeometry,
    grid: &FrequencyGrid,
    alloc: &CarrierAllocation,
    cap_rule: CapRule,
) -> Result<ShapingSolution> {
    let mut carriers: Vec<i32> = alloc.dc().iter().chain(alloc.cc()).copied().collect();
    carriers.sort_unstable();
    alloc.check_range(geom)?;
    check_grid_avoids(grid, &carriers)?;
    let bank = ColumnBank::new(geom, carriers, grid);
    Ok(solve_allocation(&bank, alloc, cap_rule)?.0)
}

/// Out-of-band level of the band-edge scheme for every β in `0..=max_beta`.
pub fn standard_sweep(
    geom: &SystemGeometry,
    occupied: &OccupiedSet,
    grid: &FrequencyGrid,
    max_beta: usize,
    cap_rule: CapRule,
) -> Result<Vec<TraceStep>> {
    let carriers = check_inputs(geom, occupied, grid)?;
    let bank = ColumnBank::new(geom, carriers, grid);
    (0..=max_beta)
        .map(|beta| {
            let alloc = standard_edge_selection(occupied, beta)?;
            let (s, _) = solve_allocation(&bank, &alloc, cap_rule)?;
            Ok(TraceStep {
                chosen: None,
                beta,
                theta: s.theta,
                mean_cc_power: s.mean_cc_power,
                p_oob: s.p_oob,
                p_oob_db: oob_db(s.p_oob, geom),
            })
        })
        .collect()
}
