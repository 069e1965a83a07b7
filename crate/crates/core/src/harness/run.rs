use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::{ExperimentConfig, SchemeKind};
use super::fields::{initial_field, load_kappa, make_source};
use super::io::{fmt_f64, write_nodal};
use crate::caputo::FractionalKernel;
use crate::error::{Error, Result};
use crate::femcore::Diffusion;
use crate::grid::Mesh;
use crate::linalg::SparseOperator;
use crate::msbasis::{import_basis, MultiscaleSpace};
use crate::schemes::{ActiveSpace, Problem, Scheme, Stepping, Treatment};
use crate::stability::{analyze, StabilityReport};

/// A run is flagged unstable once its mass norm exceeds this multiple of the
/// problem scale.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    cfg.validate()?;
    let mesh = Mesh::new(cfg.mesh.n_coarse, cfg.mesh.refinement)?;
    let kappa = load_kappa(&mesh, &cfg.kappa)?;
    let source = make_source(&mesh, &cfg.source)?;
    Problem::new(mesh, kappa, cfg.physics.diffusion, cfg.physics.reaction, source)
}

/// Builds the multiscale space, or imports it when a basis directory is set.
pub fn build_space(cfg: &ExperimentConfig, problem: &Problem) -> Result<MultiscaleSpace> {
    match &cfg.output.basis_dir {
        Some(dir) => import_basis(dir, &problem.mass, &problem.stiffness),
        None => MultiscaleSpace::build(&problem.mesh, &problem.kappa, &cfg.basis),
    }
}

pub fn kernel(cfg: &ExperimentConfig) -> Result<FractionalKernel> {
    FractionalKernel::new(cfg.alpha, cfg.dt(), cfg.steps)
}

pub fn make_scheme<'p>(
    kind: SchemeKind,
    cfg: &ExperimentConfig,
    problem: &'p Problem,
    space: Option<&MultiscaleSpace>,
    initial: &DVector<f64>,
) -> Result<Scheme<'p>> {
    let need = || {
        space.ok_or_else(|| Error::InvalidArgument(format!("{} needs a multiscale space", kind.as_str())))
    };
    let implicit = Stepping::Implicit { reaction: Treatment::Implicit };
    let (active, stepping) = match kind {
        SchemeKind::ImplicitFine => (ActiveSpace::Fine, implicit),
        SchemeKind::Explicit => (ActiveSpace::Fine, Stepping::Explicit),
        SchemeKind::ImplicitCem => (ActiveSpace::Reduced(need()?.r1.clone()), implicit),
        SchemeKind::ImplicitCemPlus => (ActiveSpace::Reduced(need()?.combined()), implicit),
        SchemeKind::PartiallyExplicit => {
            let s = need()?;
            (
                ActiveSpace::Reduced(s.combined()),
                Stepping::PartiallyExplicit { implicit_dim: s.dim1() },
            )
        }
    };
    Scheme::new(problem, active, stepping, kernel(cfg)?, cfg.solver, initial)
        .map_err(|e| e.in_scheme(kind.as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub rel_l2: f64,
    pub rel_energy: f64,
    /// False when the reference vanishes and absolute errors are reported.
    pub relative: bool,
}

/// Relative mass-norm and kappa-energy-norm errors against a reference.
pub fn error_norms(
    u: &DVector<f64>,
    reference: &DVector<f64>,
    mass: &SparseOperator,
    stiffness: &SparseOperator,
) -> ErrorNorms {
    let e = u - reference;
    let el2 = mass.quadratic(&e).max(0.0).sqrt();
    let een = stiffness.quadratic(&e).max(0.0).sqrt();
    let rl2 = mass.quadratic(reference).max(0.0).sqrt();
    let ren = stiffness.quadratic(reference).max(0.0).sqrt();
    if rl2 > 0.0 && ren > 0.0 {
        ErrorNorms {
            rel_l2: el2 / rl2,
            rel_energy: een / ren,
            relative: true,
        }
    } else {
        ErrorNorms {
            rel_l2: el2,
            rel_energy: een,
            relative: false,
        }
    }
}

/// Per-step history of one scheme; index `k - 1` holds step `k`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: SchemeKind,
    pub dt: f64,
    pub initial_energy: f64,
    pub energy: Vec<f64>,
    pub l2_norm: Vec<f64>,
    pub iterations: Vec<usize>,
    pub residual: Vec<f64>,
    pub snapshots: Vec<(usize, DVector<f64>)>,
    pub final_field: DVector<f64>,
    /// Step at which the run was flagged unstable.
    pub diverged_at: Option<usize>,
    pub seconds: f64,
}

impl Trajectory {
    pub fn steps_completed(&self) -> usize {
        self.energy.len()
    }
}

struct Lane<'p> {
    scheme: Scheme<'p>,
    traj: Trajectory,
    errors: Vec<ErrorNorms>,
}

fn snapshot_due(stride: usize, k: usize, steps: usize) -> bool {
    k == steps || (stride > 0 && k % stride == 0)
}

impl<'p> Lane<'p> {
    fn new(kind: SchemeKind, cfg: &ExperimentConfig, problem: &'p Problem, space: Option<&MultiscaleSpace>, u0: &DVector<f64>) -> Result<Self> {
        let start = Instant::now();
        let scheme = make_scheme(kind, cfg, problem, space, u0)?;
        let initial_energy = scheme.energy().map_err(|e| e.in_scheme(kind.as_str()))?;
        let final_field = scheme.field();
        let traj = Trajectory {
            scheme: kind,
            dt: cfg.dt(),
            initial_energy,
            energy: Vec::with_capacity(cfg.steps),
            l2_norm: Vec::with_capacity(cfg.steps),
            iterations: Vec::with_capacity(cfg.steps),
            residual: Vec::with_capacity(cfg.steps),
            snapshots: Vec::new(),
            final_field,
            diverged_at: None,
            seconds: start.elapsed().as_secs_f64(),
        };
        Ok(Lane {
            scheme,
            traj,
            errors: Vec::new(),
        })
    }

    fn active(&self) -> bool {
        self.traj.diverged_at.is_none()
    }

    /// Advances one step; returns the new field unless the run was flagged.
    fn advance(&mut self, problem: &Problem, cfg: &ExperimentConfig, scale: f64) -> Result<Option<DVector<f64>>> {
        if !self.active() {
            return Ok(None);
        }
        let name = self.traj.scheme.as_str();
        let start = Instant::now();
        let k = self.scheme.state().step + 1;
        let rec = self.scheme.step().map_err(|e| e.in_scheme(name))?;
        let u = self.scheme.field();
        let norm = problem.mass.quadratic(&u).max(0.0).sqrt();
        self.traj.seconds += start.elapsed().as_secs_f64();
        if !norm.is_finite() || norm > DIVERGENCE_FACTOR * scale {
            self.traj.diverged_at = Some(k);
            return Ok(None);
        }
        let energy = problem.energy(&u).map_err(|e| e.in_scheme(name))?;
        self.traj.energy.push(energy);
        self.traj.l2_norm.push(norm);
        self.traj.iterations.push(rec.iterations);
        self.traj.residual.push(rec.residual);
        if snapshot_due(cfg.output.snapshot_stride, k, cfg.steps) {
            self.traj.snapshots.push((k, u.clone()));
        }
        self.traj.final_field = u.clone();
        Ok(Some(u))
    }
}

/// Runs a single scheme over all steps.
pub fn run_trajectory(
    kind: SchemeKind,
    cfg: &ExperimentConfig,
    problem: &Problem,
    space: Option<&MultiscaleSpace>,
) -> Result<Trajectory> {
    crate::harness::configure_threads();
    let u0 = initial_field(&problem.mesh, cfg);
    let mut lane = Lane::new(kind, cfg, problem, space, &u0)?;
    let mut scale = problem.mass.quadratic(&u0).sqrt();
    for _ in 0..cfg.steps {
        let s = if scale > 0.0 { scale } else { 1.0 };
        match lane.advance(problem, cfg, s)? {
            Some(u) => scale = scale.max(problem.mass.quadratic(&u).sqrt()),
            None => break,
        }
    }
    Ok(lane.traj)
}

#[derive(Debug, Clone)]
pub struct SchemeSeries {
    pub trajectory: Trajectory,
    pub errors: Vec<ErrorNorms>,
}

impl SchemeSeries {
    pub fn rel_l2(&self) -> Vec<f64> {
        self.errors.iter().map(|e| e.rel_l2).collect()
    }

    pub fn rel_energy(&self) -> Vec<f64> {
        self.errors.iter().map(|e| e.rel_energy).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub steps: usize,
    pub dt: f64,
    pub reference: Trajectory,
    pub series: Vec<SchemeSeries>,
    pub stability: Option<StabilityReport>,
    /// Seconds spent building the multiscale space.
    pub basis_seconds: f64,
}

impl ComparisonReport {
    pub fn get(&self, kind: SchemeKind) -> Option<&SchemeSeries> {
        self.series.iter().find(|s| s.trajectory.scheme == kind)
    }
}

/// Fields sampled for the curvature estimates: the initial state, the source
/// direction and, for the quadratic law, states along a fine reference run.
pub fn stability_samples(cfg: &ExperimentConfig, problem: &Problem) -> Result<Vec<DVector<f64>>> {
    let u0 = initial_field(&problem.mesh, cfg);
    let mut samples = vec![u0.clone()];
    if cfg.physics.diffusion == Diffusion::Quadratic {
        let mut c = cfg.clone();
        c.output.snapshot_stride = (cfg.steps / 10).max(1);
        let traj = run_trajectory(SchemeKind::ImplicitFine, &c, problem, None)?;
        samples.extend(traj.snapshots.into_iter().map(|(_, u)| u));
    }
    Ok(samples)
}

pub fn stability_report(
    cfg: &ExperimentConfig,
    problem: &Problem,
    space: &MultiscaleSpace,
    samples: &[DVector<f64>],
) -> Result<StabilityReport> {
    analyze(problem, space, samples, &cfg.curvature, cfg.alpha, cfg.dt())
}

/// Runs the fine implicit reference and every configured scheme in lockstep.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    crate::harness::configure_threads();
    let problem = build_problem(cfg)?;
    let needs_space = cfg.schemes.iter().any(|k| k.needs_basis());
    let start = Instant::now();
    let space = if needs_space { Some(build_space(cfg, &problem)?) } else { None };
    let basis_seconds = start.elapsed().as_secs_f64();
    run_comparison_with(cfg, &problem, space.as_ref(), basis_seconds)
}

pub fn run_comparison_with(
    cfg: &ExperimentConfig,
    problem: &Problem,
    space: Option<&MultiscaleSpace>,
    basis_seconds: f64,
) -> Result<ComparisonReport> {
    let u0 = initial_field(&problem.mesh, cfg);
    let mut reference = Lane::new(SchemeKind::ImplicitFine, cfg, problem, None, &u0)?;
    let mut lanes = cfg
        .schemes
        .iter()
        .map(|&k| Lane::new(k, cfg, problem, space, &u0))
        .collect::<Result<Vec<_>>>()?;
    let mut scale = problem.mass.quadratic(&u0).sqrt();
    let mut samples = vec![u0.clone()];
    let sample_stride = (cfg.steps / 10).max(1);
    for k in 1..=cfg.steps {
        let s = if scale > 0.0 { scale } else { 1.0 };
        let Some(u_ref) = reference.advance(problem, cfg, f64::INFINITY)? else {
            return Err(Error::LinearSolve(format!("non-finite field at step {k}")).in_scheme("implicit-fine"));
        };
        scale = scale.max(problem.mass.quadratic(&u_ref).sqrt());
        if k % sample_stride == 0 {
            samples.push(u_ref.clone());
        }
        lanes.par_iter_mut().try_for_each(|lane| -> Result<()> {
            if let Some(u) = lane.advance(problem, cfg, s)? {
                lane.errors.push(error_norms(&u, &u_ref, &problem.mass, &problem.stiffness));
            }
            Ok(())
        })?;
    }
    let stability = match space {
        Some(sp) if sp.dim2() > 0 => Some(stability_report(cfg, problem, sp, &samples)?),
        _ => None,
    };
    Ok(ComparisonReport {
        steps: cfg.steps,
        dt: cfg.dt(),
        reference: reference.traj,
        series: lanes
            .into_iter()
            .map(|l| SchemeSeries {
                trajectory: l.traj,
                errors: l.errors,
            })
            .collect(),
        stability,
        basis_seconds,
    })
}

fn write_snapshots(mesh: &Mesh, traj: &Trajectory, dir: &Path) -> Result<()> {
    for (k, u) in &traj.snapshots {
        write_nodal(mesh, u, &dir.join("snapshots").join(format!("{}_step{k:06}.txt", traj.scheme.as_str())))?;
    }
    Ok(())
}

pub fn write_trajectory(mesh: &Mesh, traj: &Trajectory, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut s = String::from("step,t,energy,l2_norm,iterations,residual\n");
    writeln!(s, "0,{},{},,,", fmt_f64(0.0), fmt_f64(traj.initial_energy)).expect("string write");
    for i in 0..traj.steps_completed() {
        let k = i + 1;
        writeln!(
            s,
            "{k},{},{},{},{},{}",
            fmt_f64(k as f64 * traj.dt),
            fmt_f64(traj.energy[i]),
            fmt_f64(traj.l2_norm[i]),
            traj.iterations[i],
            fmt_f64(traj.residual[i])
        )
        .expect("string write");
    }
    std::fs::write(dir.join(format!("trajectory_{}.csv", traj.scheme.as_str())), s)?;
    write_snapshots(mesh, traj, dir)
}

pub fn write_comparison(mesh: &Mesh, report: &ComparisonReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let t = |k: usize| fmt_f64(k as f64 * report.dt);

    let mut errors = String::from("step,t,scheme,rel_l2,rel_energy\n");
    for s in &report.series {
        for (i, e) in s.errors.iter().enumerate() {
            let k = i + 1;
            writeln!(
                errors,
                "{k},{},{},{},{}",
                t(k),
                s.trajectory.scheme.as_str(),
                fmt_f64(e.rel_l2),
                fmt_f64(e.rel_energy)
            )
            .expect("string write");
        }
    }
    std::fs::write(dir.join("errors.csv"), errors)?;

    let trajs: Vec<&Trajectory> = std::iter::once(&report.reference)
        .chain(report.series.iter().map(|s| &s.trajectory))
        .collect();
    let mut energy = String::from("step,t,scheme,energy\n");
    let mut iters = String::from("step,scheme,iterations,residual\n");
    for tr in &trajs {
        let name = tr.scheme.as_str();
        writeln!(energy, "0,{},{name},{}", t(0), fmt_f64(tr.initial_energy)).expect("string write");
        for i in 0..tr.steps_completed() {
            writeln!(energy, "{},{},{name},{}", i + 1, t(i + 1), fmt_f64(tr.energy[i])).expect("string write");
            writeln!(iters, "{},{name},{},{}", i + 1, tr.iterations[i], fmt_f64(tr.residual[i])).expect("string write");
        }
    }
    std::fs::write(dir.join("energy.csv"), energy)?;
    std::fs::write(dir.join("iterations.csv"), iters)?;

    let mut summary = String::from("scheme,steps_completed,diverged_at,final_rel_l2,final_rel_energy,max_rel_l2,relative\n");
    for s in &report.series {
        let last = s.errors.last();
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            s.trajectory.scheme.as_str(),
            s.trajectory.steps_completed(),
            s.trajectory.diverged_at.map(|k| k.to_string()).unwrap_or_default(),
            opt(last.map(|e| e.rel_l2)),
            opt(last.map(|e| e.rel_energy)),
            opt(s.errors.iter().map(|e| e.rel_l2).reduce(f64::max)),
            s.errors.iter().all(|e| e.relative)
        )
        .expect("string write");
    }
    std::fs::write(dir.join("summary.csv"), summary)?;

    if let Some(st) = &report.stability {
        write_stability(st, dir)?;
    }
    for tr in trajs {
        write_snapshots(mesh, tr, dir)?;
    }
    Ok(())
}

pub fn write_stability(report: &StabilityReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("stability.csv"),
        format!("{}\n{}\n", StabilityReport::csv_header(), report.csv_row()),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{InitialKind, SourceKind};

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.mesh.n_coarse = 3;
        c.mesh.refinement = 4;
        c.kappa.strikes = 3;
        c.kappa.min_length = 3;
        c.kappa.max_length = 8;
        c.steps = 20;
        // Inside the explicit limit of V_H2 on this mesh.
        c.final_time = 2e-3;
        c
    }

    #[test]
    fn error_norm_guards() {
        let mesh = Mesh::new(1, 2).unwrap();
        let p = Problem::new(
            mesh.clone(),
            crate::femcore::CoefficientField::uniform(&mesh, 1.0).unwrap(),
            Diffusion::Linear,
            crate::femcore::Reaction::Off,
            DVector::zeros(1),
        )
        .unwrap();
        let z = DVector::zeros(1);
        let u = DVector::from_element(1, 2.0);
        let e = error_norms(&u, &z, &p.mass, &p.stiffness);
        assert!(!e.relative && e.rel_l2 > 0.0);
        let e = error_norms(&u, &u, &p.mass, &p.stiffness);
        assert!(e.relative && e.rel_l2 == 0.0 && e.rel_energy == 0.0);
        let e = error_norms(&(&u * 1.5), &u, &p.mass, &p.stiffness);
        assert!((e.rel_l2 - 0.5).abs() < 1e-14 && (e.rel_energy - 0.5).abs() < 1e-14);
    }

    #[test]
    fn comparison_shapes() {
        let mut c = small();
        c.output.snapshot_stride = 5;
        let r = run_comparison(&c).unwrap();
        assert_eq!(r.reference.steps_completed(), 20);
        assert_eq!(r.series.len(), 3);
        for s in &r.series {
            assert_eq!(s.errors.len(), 20);
            assert!(s.trajectory.diverged_at.is_none());
            assert!(s.errors.iter().all(|e| e.relative && e.rel_l2.is_finite()));
            assert_eq!(s.trajectory.snapshots.iter().map(|x| x.0).collect::<Vec<_>>(), vec![5, 10, 15, 20]);
        }
        assert!(r.stability.is_some());
        let dir = tempfile::tempdir().unwrap();
        write_comparison(&Mesh::new(3, 4).unwrap(), &r, dir.path()).unwrap();
        let errors = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
        assert_eq!(errors.lines().count(), 1 + 3 * 20);
        assert!(dir.path().join("snapshots/partially-explicit_step000020.txt").exists());
        assert!(dir.path().join("stability.csv").exists());
    }

    #[test]
    fn explicit_run_is_flagged() {
        let mut c = small();
        c.schemes = vec![SchemeKind::Explicit];
        c.source.kind = SourceKind::Zero;
        c.initial.kind = InitialKind::Bump;
        let r = run_comparison(&c).unwrap();
        let s = r.get(SchemeKind::Explicit).unwrap();
        let k = s.trajectory.diverged_at.expect("explicit fine step must blow up");
        assert_eq!(s.errors.len(), k - 1);
        assert_eq!(r.reference.steps_completed(), 20);
    }

    #[test]
    fn scheme_without_space_is_rejected() {
        let c = small();
        let p = build_problem(&c).unwrap();
        let u0 = DVector::zeros(p.mesh.interior_count());
        let err = make_scheme(SchemeKind::ImplicitCem, &c, &p, None, &u0).err().unwrap();
        assert_eq!(err.kind(), "invalid_argument");
    }
}
