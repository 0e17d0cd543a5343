//! Time-stepped Monte Carlo integrator.
//!
//! Each step runs a single-owner phase (pumping, threshold, emission ratio) and
//! then advances every atom independently: deterministic kinematics under gravity
//! and friction, then Poisson-sampled scattering events with recoil kicks. Every
//! atom owns a ChaCha stream keyed by `(seed, atom index)`, so the result does
//! not depend on how atoms are split across worker threads.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::force::{cavity_friction_rate, fs_doppler_rate, sample_recoil_kicks, ForceModelConfig, ScatterEvent};
use crate::model::DriveConfig;
use crate::scenario::Scenario;
use crate::spectrum::SpectrumTable;
use crate::zeeman::{
    eta_saturation_rolloff, pump_step, scattering_rate_fs, threshold_state, EmissionState, GainModel, ZeemanState,
};

/// Largest `dt * gamma_friction` accepted by [`Simulation::step`].
pub const FRICTION_STEP_BOUND: f64 = 0.02;
const MIN_PAR_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    /// Inside the cooling volume at the end of the last step.
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomEnsemble {
    pub atoms: Vec<Atom>,
    rngs: Vec<ChaCha8Rng>,
    /// Physical atoms per sample.
    pub weight: f64,
    pub zeeman: ZeemanState,
    pub emission: EmissionState,
    pub time: f64,
    pub steps: u64,
}

impl AtomEnsemble {
    pub fn atom_rng(seed: u64, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Panics if `atoms` and `rngs` differ in length.
    pub fn new(atoms: Vec<Atom>, rngs: Vec<ChaCha8Rng>, weight: f64) -> Self {
        assert_eq!(atoms.len(), rngs.len(), "one rng stream per atom");
        AtomEnsemble {
            atoms,
            rngs,
            weight,
            zeeman: ZeemanState::uniform(),
            emission: EmissionState::dark(),
            time: 0.0,
            steps: 0,
        }
    }

    /// Ensemble of atoms with the given phase-space coordinates and streams `(seed, i)`.
    pub fn from_states(states: &[(Vector3<f64>, Vector3<f64>)], weight: f64, seed: u64) -> Self {
        let atoms = states
            .iter()
            .map(|&(pos, vel)| Atom { pos, vel, alive: true })
            .collect();
        let rngs = (0..states.len()).map(|i| AtomEnsemble::atom_rng(seed, i)).collect();
        AtomEnsemble::new(atoms, rngs, weight)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            time: self.time,
            weight: self.weight,
            atoms: self.atoms.clone(),
        }
    }
}

/// Phase-space snapshot of the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub weight: f64,
    pub atoms: Vec<Atom>,
}

impl Snapshot {
    pub fn total_weight(&self) -> f64 {
        self.weight * self.atoms.len() as f64
    }
}

/// How the emission ratio is obtained each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EtaMode {
    /// From the mode spectrum and the collective-emission threshold.
    Spectrum,
    Fixed(f64),
    /// Cavity off.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub dt: f64,
    /// Minimum simulated time; runs always continue until the light is fully off.
    pub duration: f64,
    pub record_interval: f64,
    /// Worker threads (0 = rayon default).
    pub workers: usize,
    pub eta_mode: EtaMode,
    /// Prescribed free-space scattering rate at full intensity, 1/s.
    pub gamma_fs_override: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            dt: 1e-6,
            duration: 0.0,
            record_interval: 10e-6,
            workers: 0,
            eta_mode: EtaMode::Spectrum,
            gamma_fs_override: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid("duration", "must be >= 0"));
        }
        if !(self.record_interval > 0.0 && self.record_interval.is_finite()) {
            return Err(Error::invalid("record_interval", "must be positive"));
        }
        if let EtaMode::Fixed(eta) = self.eta_mode {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::invalid("eta_fixed", "must be >= 0"));
            }
        }
        if let Some(g) = self.gamma_fs_override {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid("gamma_fs", "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Ensemble summary at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub time: f64,
    pub mean_v: [f64; 3],
    /// Per-axis temperature over all atoms, K.
    pub temperature: [f64; 3],
    /// Per-axis temperature over atoms inside the cooling volume, K (0 if fewer than 2).
    pub temperature_inside: [f64; 3],
    pub mean_v_inside: [f64; 3],
    pub fraction_inside: f64,
    pub light: f64,
    pub eta: f64,
    pub gamma_fs: f64,
    pub above_threshold: bool,
    pub inversion_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub summaries: Vec<SummaryRow>,
    pub snapshots: Vec<Snapshot>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub constants: Constants,
    pub drive: DriveConfig,
    pub force: ForceModelConfig,
    pub engine: EngineConfig,
    pub table: Option<Arc<SpectrumTable>>,
    pub gain: Option<GainModel>,
}

impl Simulation {
    pub fn new(
        constants: Constants,
        drive: DriveConfig,
        force: ForceModelConfig,
        engine: EngineConfig,
        table: Option<Arc<SpectrumTable>>,
        gain: Option<GainModel>,
    ) -> Result<Self> {
        constants.validate()?;
        drive.validate()?;
        force.validate()?;
        engine.validate()?;
        if engine.eta_mode == EtaMode::Spectrum && (table.is_none() || gain.is_none()) {
            return Err(Error::invalid(
                "eta_mode",
                "spectrum mode needs a spectrum table and gain model",
            ));
        }
        Ok(Simulation {
            constants,
            drive,
            force,
            engine,
            table,
            gain,
        })
    }

    /// Time at which the incident light is fully extinguished.
    pub fn light_end(&self) -> f64 {
        self.drive.exposure_time + 5.0 * self.drive.extinction_tau
    }

    /// Intensity relative to the nominal drive at time `t`.
    pub fn light_factor(&self, t: f64) -> f64 {
        let te = self.drive.exposure_time;
        let tau = self.drive.extinction_tau;
        if t < te {
            1.0
        } else if tau > 0.0 && t < te + 5.0 * tau {
            (-(t - te) / tau).exp()
        } else {
            0.0
        }
    }

    fn drive_at(&self, factor: f64) -> DriveConfig {
        DriveConfig {
            s_single_beam: self.drive.s_single_beam * factor,
            ..self.drive
        }
    }

    fn rate_at(&self, drive: &DriveConfig, factor: f64) -> f64 {
        match self.engine.gamma_fs_override {
            Some(g) => g * factor,
            None => scattering_rate_fs(&self.constants, drive.s_total(), drive.delta_a),
        }
    }

    fn max_eta(&self) -> f64 {
        match self.engine.eta_mode {
            EtaMode::Fixed(eta) => eta,
            EtaMode::Off => 0.0,
            EtaMode::Spectrum => self.gain.map(|g| g.eta_c).unwrap_or(1.0).max(0.06),
        }
    }

    /// Largest stable time step for this drive.
    pub fn stability_bound(&self) -> f64 {
        let rate = self.rate_at(&self.drive, 1.0);
        let mut gamma = cavity_friction_rate(&self.constants, self.max_eta(), rate, self.force.kappa_eff);
        if self.force.include_fs_doppler_x {
            gamma += fs_doppler_rate(&self.constants, &self.drive).abs();
        }
        if gamma > 0.0 {
            FRICTION_STEP_BOUND / gamma
        } else {
            f64::INFINITY
        }
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        let bound = self.stability_bound();
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::UnstableStep { dt, bound });
        }
        Ok(())
    }

    /// Weighted number of atoms coupled to the cavity.
    pub fn atoms_in_mode(&self, ens: &AtomEnsemble) -> f64 {
        let env = &self.force.envelope;
        ens.weight * ens.atoms.iter().map(|a| env.factor(&a.pos)).sum::<f64>()
    }

    /// Single-owner phase: internal state and emission ratio for the coming step.
    fn update_internal(&self, ens: &mut AtomEnsemble, dt: f64) -> Result<()> {
        let factor = self.light_factor(ens.time);
        if factor == 0.0 {
            ens.emission = EmissionState::dark();
            return Ok(());
        }
        let c = &self.constants;
        let drive = self.drive_at(factor);
        let gamma_fs = self.rate_at(&drive, factor);
        ens.zeeman = pump_step(&ens.zeeman, c, &drive, gamma_fs, dt)?;
        ens.emission = match self.engine.eta_mode {
            EtaMode::Fixed(eta) => EmissionState::fixed(eta, gamma_fs),
            EtaMode::Off => EmissionState::fixed(0.0, gamma_fs),
            EtaMode::Spectrum => {
                let table = self.table.as_deref().expect("checked in new");
                let gain = self.gain.as_ref().expect("checked in new");
                let n = self.atoms_in_mode(ens);
                let em = threshold_state(c, &ens.zeeman, &drive, n, gamma_fs, table, gain);
                eta_saturation_rolloff(&em, em.p_sat)
            }
        };
        Ok(())
    }

    /// Advances the ensemble by `dt` on the current rayon pool.
    pub fn step(&self, ens: &mut AtomEnsemble, dt: f64) -> Result<()> {
        self.check_dt(dt)?;
        self.step_unchecked(ens, dt)
    }

    fn step_unchecked(&self, ens: &mut AtomEnsemble, dt: f64) -> Result<()> {
        self.update_internal(ens, dt)?;
        let c = self.constants;
        let em = ens.emission;
        let factor = self.light_factor(ens.time);
        let gamma_c = cavity_friction_rate(&c, em.eta, em.gamma_fs, self.force.kappa_eff);
        let beta_x = if self.force.include_fs_doppler_x && factor > 0.0 {
            fs_doppler_rate(&c, &self.drive_at(factor))
        } else {
            0.0
        };
        let events = em.gamma_fs * (1.0 + em.eta) * dt;
        let p_cavity = if em.eta > 0.0 { em.eta / (1.0 + em.eta) } else { 0.0 };
        let env = self.force.envelope;
        let pattern = self.force.emission;
        let axis = self.force.dipole_axis.normalize();
        let g = c.g_accel;
        let v_rec = c.v_rec;

        let bad = ens
            .atoms
            .par_iter_mut()
            .zip(ens.rngs.par_iter_mut())
            .enumerate()
            .with_min_len(MIN_PAR_LEN)
            .filter_map(|(i, (atom, rng))| {
                let f = env.factor(&atom.pos);
                let v = atom.vel;
                let acc = Vector3::new(-f * (gamma_c + beta_x) * v.x, 0.0, -f * gamma_c * v.z - g);
                atom.pos += v * dt + acc * (0.5 * dt * dt);
                atom.vel += acc * dt;
                let lambda = events * f;
                if lambda > 0.0 {
                    let n = Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0) as u64;
                    for _ in 0..n {
                        let kind = if rng.random::<f64>() < p_cavity {
                            ScatterEvent::Cavity
                        } else {
                            ScatterEvent::FreeSpace
                        };
                        atom.vel += sample_recoil_kicks(kind, pattern, &axis, rng) * v_rec;
                    }
                }
                atom.alive = env.factor(&atom.pos) > 0.0;
                let finite = atom.pos.iter().chain(atom.vel.iter()).all(|x| x.is_finite());
                (!finite).then_some(i)
            })
            .min();
        ens.steps += 1;
        ens.time += dt;
        if let Some(atom) = bad {
            return Err(Error::NonFinite { atom, time: ens.time });
        }
        Ok(())
    }

    pub fn summarize(&self, ens: &AtomEnsemble) -> SummaryRow {
        let c = &self.constants;
        let all = moments(ens.atoms.iter());
        let inside = moments(ens.atoms.iter().filter(|a| a.alive));
        let n = ens.atoms.len().max(1) as f64;
        SummaryRow {
            time: ens.time,
            mean_v: all.mean,
            temperature: all.var.map(|v| c.temperature_from_variance(v)),
            temperature_inside: inside.var.map(|v| c.temperature_from_variance(v)),
            mean_v_inside: inside.mean,
            fraction_inside: inside.count as f64 / n,
            light: self.light_factor(ens.time),
            eta: ens.emission.eta,
            gamma_fs: ens.emission.gamma_fs,
            above_threshold: ens.emission.above_threshold,
            inversion_w: ens.zeeman.inversion_w,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.engine.workers)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))
    }

    fn record_every(&self) -> u64 {
        ((self.engine.record_interval / self.engine.dt).round() as u64).max(1)
    }

    fn record(&self, ens: &AtomEnsemble, out: &mut RunOutput, warned: &mut bool) {
        let row = self.summarize(ens);
        if !*warned && row.light > 0.0 && row.eta > 0.0 {
            let kv_limit = self.force.kappa_eff / (2.0 * self.constants.k);
            let vmax = ens
                .atoms
                .iter()
                .filter(|a| a.alive)
                .map(|a| a.vel.x.abs().max(a.vel.z.abs()))
                .fold(0.0, f64::max);
            if vmax > kv_limit {
                *warned = true;
                out.warnings.push(format!(
                    "velocity {vmax:.3} m/s exceeds the linear-friction range {kv_limit:.3} m/s at t = {:.6} s",
                    ens.time
                ));
            }
        }
        out.summaries.push(row);
    }

    /// Steps until `ens.steps == end`, recording a summary at every step index that
    /// is a multiple of the record cadence (before stepping).
    fn advance(
        &self,
        ens: &mut AtomEnsemble,
        end: u64,
        snaps: &[(u64, usize)],
        next_snap: &mut usize,
        out: &mut RunOutput,
        warned: &mut bool,
    ) -> Result<()> {
        let dt = self.engine.dt;
        let every = self.record_every();
        while ens.steps < end {
            while *next_snap < snaps.len() && snaps[*next_snap].0 <= ens.steps {
                out.snapshots[snaps[*next_snap].1] = ens.snapshot();
                *next_snap += 1;
            }
            if ens.steps.is_multiple_of(every) {
                self.record(ens, out, warned);
            }
            self.step_unchecked(ens, dt)?;
        }
        Ok(())
    }

    /// Runs until `until` (s), recording summaries at the configured cadence plus
    /// one at the end, and snapshots at each of `snapshot_times` (rounded to the
    /// step grid).
    pub fn run(&self, ens: &mut AtomEnsemble, until: f64, snapshot_times: &[f64]) -> Result<RunOutput> {
        self.check_dt(self.engine.dt)?;
        let pool = self.pool()?;
        self.run_on(&pool, ens, until, snapshot_times, false)
    }

    fn run_on(
        &self,
        pool: &rayon::ThreadPool,
        ens: &mut AtomEnsemble,
        until: f64,
        snapshot_times: &[f64],
        warned: bool,
    ) -> Result<RunOutput> {
        let dt = self.engine.dt;
        let end = ens.steps + ((until - ens.time) / dt).round().max(0.0) as u64;
        let mut snaps: Vec<(u64, usize)> = snapshot_times
            .iter()
            .enumerate()
            .map(|(k, &t)| (((t / dt).round().max(0.0)) as u64, k))
            .collect();
        snaps.sort();
        let empty = Snapshot {
            time: 0.0,
            weight: 0.0,
            atoms: Vec::new(),
        };
        let mut out = RunOutput {
            summaries: Vec::new(),
            snapshots: vec![empty; snapshot_times.len()],
            warnings: Vec::new(),
        };
        let mut next_snap = 0;
        let mut warned = warned;
        pool.install(|| self.advance(ens, end, &snaps, &mut next_snap, &mut out, &mut warned))?;
        while next_snap < snaps.len() {
            out.snapshots[snaps[next_snap].1] = ens.snapshot();
            next_snap += 1;
        }
        self.record(ens, &mut out, &mut warned);
        Ok(out)
    }
}

/// Version of the [`RunRecord`] JSON layout.
pub const RUN_RECORD_SCHEMA_VERSION: u32 = 1;
pub const RUN_RECORD_SCHEMA: &str = "cavsim.run_record";

/// Everything needed to reproduce and re-analyse one run. Wall time is kept out
/// so that records of identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub schema_version: u32,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: Scenario,
    pub summaries: Vec<SummaryRow>,
    /// Phase space at the end of the run (after the light is fully off).
    pub final_snapshot: Snapshot,
    pub warnings: Vec<String>,
}

impl RunRecord {
    fn new(
        scenario: &Scenario,
        seed: u64,
        summaries: Vec<SummaryRow>,
        final_snapshot: Snapshot,
        warnings: Vec<String>,
    ) -> Self {
        RunRecord {
            schema: RUN_RECORD_SCHEMA.to_string(),
            schema_version: RUN_RECORD_SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            config_hash: scenario.config_hash(),
            seed,
            config: scenario.clone(),
            summaries,
            final_snapshot,
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run records always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: RunRecord = serde_json::from_str(text).map_err(|e| Error::Archive(e.to_string()))?;
        if rec.schema != RUN_RECORD_SCHEMA {
            return Err(Error::Archive(format!("unexpected schema `{}`", rec.schema)));
        }
        if rec.schema_version != RUN_RECORD_SCHEMA_VERSION {
            return Err(Error::Archive(format!(
                "unsupported schema version {}",
                rec.schema_version
            )));
        }
        if rec.config_hash != rec.config.config_hash() {
            return Err(Error::Archive("config hash does not match the stored config".into()));
        }
        Ok(rec)
    }
}

/// Drop, exposure, extinction, then free fall until `max(duration, light end)`.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunRecord> {
    let sim = scenario.simulation()?;
    let mut ens = scenario.sample(seed)?;
    let until = sim.engine.duration.max(sim.light_end());
    let out = sim.run(&mut ens, until, &[])?;
    Ok(RunRecord::new(
        scenario,
        seed,
        out.summaries,
        ens.snapshot(),
        out.warnings,
    ))
}

/// Runs scenarios that differ only in exposure time, sharing the common lit
/// prefix. Each record is identical to `run_scenario(&points[i], seed)`.
pub fn run_exposure_series(points: &[Scenario], seed: u64) -> Result<Vec<RunRecord>> {
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    for p in points {
        let mut q = p.clone();
        q.drive.exposure_time = first.drive.exposure_time;
        if q != *first {
            return Err(Error::invalid(
                "sweep",
                "exposure series points may differ only in exposure time",
            ));
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].drive.exposure_time.total_cmp(&points[b].drive.exposure_time));
    let longest = &points[*order.last().expect("non-empty")];
    let lit = longest.simulation()?;
    lit.check_dt(lit.engine.dt)?;
    let pool = lit.pool()?;
    let mut ens = first.sample(seed)?;
    let mut prefix = RunOutput {
        summaries: Vec::new(),
        snapshots: Vec::new(),
        warnings: Vec::new(),
    };
    let mut warned = false;
    let mut records: Vec<Option<RunRecord>> = vec![None; points.len()];
    for &i in &order {
        let point = &points[i];
        let sim = point.simulation()?;
        let k = (point.drive.exposure_time / lit.engine.dt).round() as u64;
        pool.install(|| lit.advance(&mut ens, k, &[], &mut 0, &mut prefix, &mut warned))?;
        let mut branch = ens.clone();
        let until = sim.engine.duration.max(sim.light_end());
        let out = sim.run_on(&pool, &mut branch, until, &[], warned)?;
        let mut summaries = prefix.summaries.clone();
        summaries.extend(out.summaries);
        let mut warnings = prefix.warnings.clone();
        warnings.extend(out.warnings);
        records[i] = Some(RunRecord::new(point, seed, summaries, branch.snapshot(), warnings));
    }
    Ok(records.into_iter().map(|r| r.expect("every point visited")).collect())
}

struct Moments {
    count: usize,
    mean: [f64; 3],
    var: [f64; 3],
}

fn moments<'a>(atoms: impl Iterator<Item = &'a Atom>) -> Moments {
    let mut count = 0usize;
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut first: Option<[f64; 3]> = None;
    for a in atoms {
        // shifted sums keep the variance accurate for a large common drift
        let shift = *first.get_or_insert([a.vel.x, a.vel.y, a.vel.z]);
        for k in 0..3 {
            let d = a.vel[k] - shift[k];
            sum[k] += d;
            sq[k] += d * d;
        }
        count += 1;
    }
    let mut mean = [0.0; 3];
    let mut var = [0.0; 3];
    if let Some(shift) = first {
        let n = count as f64;
        for k in 0..3 {
            mean[k] = shift[k] + sum[k] / n;
            if count >= 2 {
                var[k] = ((sq[k] - sum[k] * sum[k] / n) / (n - 1.0)).max(0.0);
            }
        }
    }
    Moments { count, mean, var }
}
