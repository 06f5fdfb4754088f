//! Experiment driver: single runs, the heterogeneity and population sweeps,
//! the minimum-mass report, and the artifacts they leave on disk.
//!
//! Every artifact is a pure function of the scenario and seed, so a run can be
//! repeated byte for byte from its manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::macrosim::{run_macro, Bounding, MacroOutcome};
use crate::metrics::{FieldSnapshot, MetricsLog};
use crate::microsim::{run_micro, MicroOutcome};
use crate::scenario::Scenario;

/// Error level below which a run counts as converged in the sweeps.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-2;

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const FIELDS_FILE: &str = "fields_final.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SNAPSHOT_FILE: &str = "snapshot.csv";

pub const SWEEP_HEADER: [&str; 5] = [
    "axis_value",
    "seed",
    "terminal_l2_err_F",
    "min_mass_estimate",
    "feasible",
];

/// What produced a set of artifacts.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub scenario: Scenario,
}

impl Manifest {
    pub fn new(command: &str, scenario: &Scenario, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            scenario: scenario.clone(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes `timeseries.csv`, `fields_final.csv` and the manifest into `dir`.
pub fn write_run_artifacts(
    dir: &Path,
    log: &MetricsLog,
    snapshot: &FieldSnapshot,
    manifest: &Manifest,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    log.write_csv(create_file(&dir.join(TIMESERIES_FILE))?)?;
    snapshot.write_csv(create_file(&dir.join(FIELDS_FILE))?)?;
    let mut m = create_file(&dir.join(MANIFEST_FILE))?;
    m.write_all(manifest.to_toml_string().as_bytes())?;
    m.flush()?;
    Ok(())
}

/// Dumps the state of a diverged run and returns the path written.
pub fn write_snapshot(dir: &Path, snapshot: &FieldSnapshot) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(SNAPSHOT_FILE);
    snapshot.write_csv(create_file(&path)?)?;
    Ok(path)
}

/// Agent-level run with the scenario's own seed.
pub fn run(scenario: &Scenario) -> Result<MicroOutcome> {
    let setup = scenario.resolve()?;
    run_micro(&setup, scenario.numerics.seed)
}

/// Both bounding systems of the PDE closed loop.
pub fn run_macro_pair(scenario: &Scenario) -> Result<[MacroOutcome; 2]> {
    let setup = scenario.resolve()?;
    Ok([
        run_macro(&setup, Bounding::Upper)?,
        run_macro(&setup, Bounding::Lower)?,
    ])
}

/// One cell of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCell {
    pub axis_value: f64,
    pub seed: u64,
    /// `NaN` when the run failed.
    pub terminal_l2_err_f: f64,
    pub min_mass_estimate: f64,
    pub feasible: bool,
}

/// Summary statistic over the seeds of one axis value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepAggregate {
    pub axis_value: f64,
    pub median: f64,
    pub max: f64,
    pub median_min_mass: f64,
    pub max_min_mass: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Heterogeneity,
    Leaders,
    Followers,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Heterogeneity => "heterogeneity",
            SweepAxis::Leaders => "leaders",
            SweepAxis::Followers => "followers",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    /// Cells whose run failed, with the error message.
    pub failures: Vec<(f64, u64, String)>,
}

/// Median of the finite values; `NaN` counts as larger than everything.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, |a, b| {
        if b.is_nan() || a.is_nan() {
            f64::NAN
        } else {
            a.max(b)
        }
    })
}

impl SweepReport {
    /// Axis values in sweep order, without repeats.
    pub fn axis_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.axis_value) {
                out.push(c.axis_value);
            }
        }
        out
    }

    pub fn aggregates(&self) -> Vec<SweepAggregate> {
        self.axis_values()
            .into_iter()
            .map(|v| {
                let cells: Vec<&SweepCell> = self.cells.iter().filter(|c| c.axis_value == v).collect();
                let mut errs: Vec<f64> = cells.iter().map(|c| c.terminal_l2_err_f).collect();
                let mut masses: Vec<f64> = cells.iter().map(|c| c.min_mass_estimate).collect();
                let max = max_of(&errs);
                let max_min_mass = max_of(&masses);
                SweepAggregate {
                    axis_value: v,
                    median: median(&mut errs),
                    max,
                    median_min_mass: median(&mut masses),
                    max_min_mass,
                    feasible: cells.iter().all(|c| c.feasible),
                }
            })
            .collect()
    }

    /// Smallest axis value from which on every median error is below the
    /// convergence threshold, provided some smaller value stays above it.
    pub fn threshold(&self) -> Option<f64> {
        let agg = self.aggregates();
        let mut first_below = None;
        for a in agg.iter().rev() {
            if a.median < CONVERGENCE_THRESHOLD {
                first_below = Some(a.axis_value);
            } else {
                break;
            }
        }
        let t = first_below?;
        agg.iter().any(|a| a.axis_value < t).then_some(t)
    }

    /// `sweep.csv`: one row per cell, then `median` and `max` rows per axis
    /// value (named in the seed column).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(SWEEP_HEADER)?;
        for c in &self.cells {
            wtr.write_record([
                c.axis_value.to_string(),
                c.seed.to_string(),
                c.terminal_l2_err_f.to_string(),
                c.min_mass_estimate.to_string(),
                c.feasible.to_string(),
            ])?;
        }
        for a in self.aggregates() {
            for (label, err, mass) in [
                ("median", a.median, a.median_min_mass),
                ("max", a.max, a.max_min_mass),
            ] {
                wtr.write_record([
                    a.axis_value.to_string(),
                    label.to_string(),
                    err.to_string(),
                    mass.to_string(),
                    a.feasible.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// The scenario of one heterogeneity cell: biases in `[-B, B]`, bound `k = B`
/// and the switching gain recomputed from the factor-margin rule.
pub fn heterogeneity_scenario(base: &Scenario, b: f64, seed: u64) -> Scenario {
    let mut s = base.clone();
    s.population.heterogeneity = b;
    s.model.follower_bound = b;
    s.follower_control.ks = None;
    s.numerics.seed = seed;
    s
}

/// The scenario of one population cell; total masses stay fixed, so the mass
/// per agent rescales with the count.
pub fn population_scenario(base: &Scenario, axis: &SweepAxis, n: usize, seed: u64) -> Scenario {
    let mut s = base.clone();
    match axis {
        SweepAxis::Leaders => s.population.n_leaders = n,
        SweepAxis::Followers => s.population.n_followers = n,
        SweepAxis::Heterogeneity => panic!("not a population axis"),
    }
    s.numerics.t_final = base.sweep.population_t_final;
    s.numerics.seed = seed;
    s
}

fn run_cell(scenario: &Scenario, axis_value: f64) -> std::result::Result<SweepCell, (f64, u64, String)> {
    let seed = scenario.numerics.seed;
    let fail = |e: Error| (axis_value, seed, e.to_string());
    let setup = scenario.resolve().map_err(fail)?;
    let out = run_micro(&setup, seed).map_err(fail)?;
    let terminal = out.log.last().map_or(f64::NAN, |r| r.l2_err_f);
    let min_mass = out.log.sup_min_mass();
    Ok(SweepCell {
        axis_value,
        seed,
        terminal_l2_err_f: terminal,
        min_mass_estimate: min_mass,
        feasible: min_mass <= scenario.population.leader_mass,
    })
}

fn run_cells(jobs: Vec<(f64, Scenario)>, workers: usize, axis: SweepAxis) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|(v, s)| {
                let r = run_cell(s, *v);
                match &r {
                    Ok(c) => log::info!(
                        "{} = {v}, seed {}: terminal error {:.4e}, min mass {:.2}",
                        axis.name(),
                        c.seed,
                        c.terminal_l2_err_f,
                        c.min_mass_estimate
                    ),
                    Err((_, seed, e)) => log::warn!("{} = {v}, seed {seed} failed: {e}", axis.name()),
                }
                r
            })
            .collect()
    });
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err((v, seed, e)) => {
                failures.push((v, seed, e));
                cells.push(SweepCell {
                    axis_value: v,
                    seed,
                    terminal_l2_err_f: f64::NAN,
                    min_mass_estimate: f64::NAN,
                    feasible: false,
                });
            }
        }
    }
    Ok(SweepReport {
        axis,
        cells,
        failures,
    })
}

/// Heterogeneity sweep over the base scenario's `sweep.heterogeneity` and
/// `sweep.seeds`.
pub fn sweep_heterogeneity(base: &Scenario) -> Result<SweepReport> {
    base.resolve()?;
    let jobs = base
        .sweep
        .heterogeneity
        .iter()
        .flat_map(|&b| {
            base.sweep
                .seeds
                .iter()
                .map(move |&seed| (b, heterogeneity_scenario(base, b, seed)))
        })
        .collect();
    run_cells(jobs, base.sweep.workers, SweepAxis::Heterogeneity)
}

/// Population sweep along one axis over `sweep.population` and `sweep.seeds`.
pub fn sweep_population(base: &Scenario, axis: SweepAxis) -> Result<SweepReport> {
    if axis == SweepAxis::Heterogeneity {
        return Err(Error::InvalidParameter(
            "population sweeps vary leaders or followers".into(),
        ));
    }
    base.resolve()?;
    let jobs = base
        .sweep
        .population
        .iter()
        .flat_map(|&n| {
            let axis = &axis;
            base.sweep
                .seeds
                .iter()
                .map(move |&seed| (n as f64, population_scenario(base, axis, n, seed)))
        })
        .collect();
    run_cells(jobs, base.sweep.workers, axis)
}

/// Leader-mass requirement along the nominal agent-level trajectory.
#[derive(Clone, Debug)]
pub struct MinMassReport {
    /// Largest bound along the run, the initial state included.
    pub estimate: f64,
    /// Bound at the initial state.
    pub initial: f64,
    /// Feedforward part, independent of the trajectory.
    pub feedforward: f64,
    pub leader_mass: f64,
    pub feasible: bool,
    pub log: MetricsLog,
    pub snapshot: FieldSnapshot,
}

pub fn min_mass_report(scenario: &Scenario) -> Result<MinMassReport> {
    let setup = scenario.resolve()?;
    let feedforward = crate::controller::ControlLaw::new(&setup)?.feedforward_mass();
    let out = run_micro(&setup, scenario.numerics.seed)?;
    let estimate = out.log.sup_min_mass();
    let initial = out.log.first().map_or(f64::NAN, |r| r.min_mass_estimate);
    Ok(MinMassReport {
        estimate,
        initial,
        feedforward,
        leader_mass: scenario.population.leader_mass,
        feasible: estimate <= scenario.population.leader_mass,
        log: out.log,
        snapshot: out.snapshot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Scenario {
        let mut s = Scenario::default();
        s.population.n_followers = 100;
        s.population.n_leaders = 100;
        s.numerics.t_final = 0.004;
        s.sweep.seeds = vec![1, 2];
        s.sweep.heterogeneity = vec![2.0, 20.0];
        s.sweep.population = vec![20, 50];
        s.sweep.population_t_final = 0.004;
        s.sweep.workers = 1;
        s
    }

    fn cell(v: f64, seed: u64, e: f64) -> SweepCell {
        SweepCell {
            axis_value: v,
            seed,
            terminal_l2_err_f: e,
            min_mass_estimate: 10.0,
            feasible: true,
        }
    }

    #[test]
    fn median_of_odd_and_even_sets() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn threshold_is_the_start_of_the_converged_tail() {
        let errs = [
            (10.0, 0.5),
            (30.0, 0.05),
            (100.0, 0.005),
            (300.0, 0.02),
            (1000.0, 0.004),
            (2000.0, 0.003),
        ];
        let cells = errs.iter().map(|&(v, e)| cell(v, 1, e)).collect();
        let r = SweepReport {
            axis: SweepAxis::Leaders,
            cells,
            failures: vec![],
        };
        assert_eq!(r.threshold(), Some(1000.0));
    }

    #[test]
    fn no_threshold_without_a_crossing() {
        let all_low = SweepReport {
            axis: SweepAxis::Followers,
            cells: vec![cell(10.0, 1, 1e-3), cell(20.0, 1, 1e-3)],
            failures: vec![],
        };
        assert_eq!(all_low.threshold(), None);
        let all_high = SweepReport {
            axis: SweepAxis::Followers,
            cells: vec![cell(10.0, 1, 1.0), cell(20.0, 1, 1.0)],
            failures: vec![],
        };
        assert_eq!(all_high.threshold(), None);
    }

    #[test]
    fn sweep_csv_has_cells_then_aggregates() {
        let r = SweepReport {
            axis: SweepAxis::Heterogeneity,
            cells: vec![cell(2.0, 1, 0.1), cell(2.0, 2, 0.3), cell(2.0, 3, 0.2)],
            failures: vec![],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER.join(","));
        assert_eq!(lines.len(), 1 + 3 + 2);
        assert_eq!(lines[4], "2,median,0.2,10,true");
        assert_eq!(lines[5], "2,max,0.3,10,true");
    }

    #[test]
    fn heterogeneity_cells_tie_the_bound_to_the_biases() {
        let mut base = tiny();
        base.follower_control.ks = Some(123.0);
        let s = heterogeneity_scenario(&base, 14.0, 7);
        assert_eq!(s.population.heterogeneity, 14.0);
        assert_eq!(s.model.follower_bound, 14.0);
        assert_eq!(s.follower_control.ks, None);
        assert_eq!(s.numerics.seed, 7);
        let setup = s.resolve().unwrap();
        let lo = heterogeneity_scenario(&base, 2.0, 7).resolve().unwrap();
        assert!(setup.follower_gains.ks > lo.follower_gains.ks);
    }

    #[test]
    fn population_cells_keep_total_masses() {
        let base = tiny();
        for axis in [SweepAxis::Leaders, SweepAxis::Followers] {
            let s = population_scenario(&base, &axis, 37, 1);
            let setup = s.resolve().unwrap();
            let n_l = s.population.n_leaders as f64;
            let n_f = s.population.n_followers as f64;
            assert!((setup.leader_mass_per_agent() * n_l - 30.0).abs() < 1e-12);
            assert!((setup.follower_mass_per_agent() * n_f - 1.0).abs() < 1e-12);
            assert_eq!(s.numerics.t_final, base.sweep.population_t_final);
        }
    }

    #[test]
    fn sweeps_produce_one_cell_per_value_and_seed() {
        let base = tiny();
        let r = sweep_heterogeneity(&base).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.failures.is_empty());
        assert!(r.cells.iter().all(|c| c.terminal_l2_err_f.is_finite()));
        let p = sweep_population(&base, SweepAxis::Followers).unwrap();
        assert_eq!(p.axis_values(), vec![20.0, 50.0]);
        assert!(sweep_population(&base, SweepAxis::Heterogeneity).is_err());
    }

    #[test]
    fn sweeps_are_reproducible() {
        let base = tiny();
        let a = sweep_heterogeneity(&base).unwrap();
        let mut wide = base.clone();
        wide.sweep.workers = 2;
        let b = sweep_heterogeneity(&wide).unwrap();
        assert_eq!(a.cells, b.cells);
    }

    #[test]
    fn artifacts_land_in_the_output_directory() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny();
        let out = run(&s).unwrap();
        let m = Manifest::new("run", &s, s.numerics.seed);
        write_run_artifacts(dir.path(), &out.log, &out.snapshot, &m).unwrap();
        let ts = fs::read_to_string(dir.path().join(TIMESERIES_FILE)).unwrap();
        assert!(ts.starts_with("t,l2_err_F,l2_err_L,V_F,V_L,alpha,C,mass_F,mass_L\n"));
        let fields = fs::read_to_string(dir.path().join(FIELDS_FILE)).unwrap();
        assert!(fields.starts_with("x,rho_F,rho_bar_F,rho_L,rho_bar_L,u\n"));
        assert_eq!(fields.lines().count(), 151);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("version = "));
        assert!(manifest.contains("[scenario.population]"));
    }

    #[test]
    fn min_mass_without_bound_is_the_feedforward_mass() {
        let mut s = tiny();
        s.model.follower_bound = 0.0;
        s.population.heterogeneity = 0.0;
        let r = min_mass_report(&s).unwrap();
        assert!((r.estimate - r.feedforward).abs() < 1e-12);
        assert!(r.feasible);
    }

    #[test]
    fn doubling_the_bound_doubles_the_surcharge() {
        let mut s = tiny();
        s.follower_control.ks = Some(1.0);
        let one = min_mass_report(&s).unwrap();
        s.model.follower_bound = 2.0;
        let two = min_mass_report(&s).unwrap();
        let (a, b) = (one.initial - one.feedforward, two.initial - two.feedforward);
        assert!((b - 2.0 * a).abs() < 1e-9 * a.abs().max(1.0), "{a} {b}");
    }
}
