//! One function per subcommand; each returns a report record and queues
//! its CSV tables on the context.

use qsd_core::diffusion::{
    discretize, is_class_t, qsd_density, tightness_profile, tightness_set, truncation_sensitivity,
    Coefficient, Diffusion1D, DiffusionError, Grid, GridDensity,
};
use qsd_core::montecarlo::{
    doob_paths, exp_zeta_moment_estimate, simulate_killed_paths, survival_rate_estimate,
    yaglom_estimate, Bins, Init, OccupationConfig, PathConfig,
};
use qsd_core::report::Record;
use qsd_core::spectral::{
    conditional_law, doob_transform, ergodic_limit, exp_lifetime_moments, lowest_eigenvalues,
    principal_eigenpair, qsd, semigroup_intertwining_check, survival_probability, uniqueness_check,
    PrincipalEigenpair, QsdVector, ReversibleGenerator,
};
use serde_json::json;

use crate::config::{GridConfig, LoadedConfig, McConfig, Model, Tolerances};
use crate::error::CliError;

/// Chains above this size skip the dense uniqueness check.
const UNIQUENESS_LIMIT: usize = 500;
const INVARIANCE_TIMES: [f64; 3] = [0.1, 1.0, 10.0];
const INTERTWINING_T: f64 = 3.0;
const ERGODIC_T: f64 = 20.0;
const TIGHTNESS_EPS: [f64; 5] = [0.3, 0.2, 0.1, 0.05, 0.02];
const SURVIVAL_POINTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Classify,
    Spectrum,
    Qsd,
    VerifyQsd,
    DoobCheck,
    Tightness,
    Yaglom,
    Moments,
}

impl Op {
    /// The verification ladder in dependency order.
    pub const LADDER: [Op; 8] = [
        Op::Classify,
        Op::Spectrum,
        Op::Qsd,
        Op::VerifyQsd,
        Op::DoobCheck,
        Op::Tightness,
        Op::Yaglom,
        Op::Moments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::Classify => "classify",
            Op::Spectrum => "spectrum",
            Op::Qsd => "qsd",
            Op::VerifyQsd => "verify-qsd",
            Op::DoobCheck => "doob-check",
            Op::Tightness => "tightness",
            Op::Yaglom => "yaglom",
            Op::Moments => "moments",
        }
    }

    pub fn parse(s: &str) -> Option<Op> {
        Self::LADDER.into_iter().find(|op| op.name() == s)
    }
}

/// A CSV table: file name, header, rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

struct Discretized {
    grid: Option<Grid>,
    g: ReversibleGenerator,
    eig: PrincipalEigenpair,
}

pub struct Context {
    pub loaded: LoadedConfig,
    pub model: Model,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub tol: Tolerances,
    pub tables: Vec<Table>,
    cache: Option<Discretized>,
}

fn kind(model: &Model) -> &'static str {
    match model {
        Model::Chain(_) => "chain",
        Model::Diffusion(_) => "diffusion",
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

impl Context {
    pub fn new(
        loaded: LoadedConfig,
        model: Model,
        grid: GridConfig,
        mc: McConfig,
        tol: Tolerances,
    ) -> Self {
        Self {
            loaded,
            model,
            grid,
            mc,
            tol,
            tables: Vec::new(),
            cache: None,
        }
    }

    pub fn run(&mut self, op: Op) -> Result<Record, CliError> {
        match op {
            Op::Classify => self.classify(),
            Op::Spectrum => self.spectrum(),
            Op::Qsd => self.qsd(),
            Op::VerifyQsd => self.verify_qsd(),
            Op::DoobCheck => self.doob_check(),
            Op::Tightness => self.tightness(),
            Op::Yaglom => self.yaglom(),
            Op::Moments => self.moments(),
        }
    }

    fn record(&self, op: Op) -> Record {
        let inputs = json!({
            "kind": kind(&self.model),
            "payload": self.loaded.payload,
            "grid": self.grid,
            "mc": self.mc,
            "reference": self.loaded.config.reference,
        });
        Record::new(op.name(), &inputs)
    }

    fn diffusion(&self, op: Op) -> Result<&Diffusion1D, CliError> {
        match &self.model {
            Model::Diffusion(d) => Ok(d),
            Model::Chain(_) => Err(CliError::NotApplicable {
                op: op.name(),
                kind: "chain",
            }),
        }
    }

    /// Generator, grid and ground state, built once per run.
    fn discretized(&mut self) -> Result<&Discretized, CliError> {
        if self.cache.is_none() {
            let (grid, g) = match &self.model {
                Model::Chain(g) => (None, g.clone()),
                Model::Diffusion(d) => {
                    let grid = Grid::build(d, &self.grid.spec())?;
                    let g = discretize(d, &grid)?;
                    (Some(grid), g)
                }
            };
            let eig = principal_eigenpair(&g)?;
            self.cache = Some(Discretized { grid, g, eig });
        }
        Ok(self.cache.as_ref().unwrap())
    }

    /// QSD of the model; diffusions must be explosive and in class (T).
    fn qsd_vector(&mut self) -> Result<(QsdVector, Option<GridDensity>), CliError> {
        if let Model::Diffusion(d) = &self.model {
            let d = d.clone();
            let grid = self.discretized()?.grid.clone().expect("diffusion grid");
            let dens = qsd_density(&d, &grid)?;
            return Ok((dens.qsd.clone(), Some(dens)));
        }
        let g = self.discretized()?.g.clone();
        Ok((qsd(&g)?, None))
    }

    fn x0_diffusion(&self, d: &Diffusion1D) -> f64 {
        self.mc.x0.unwrap_or(d.anchor())
    }

    fn x0_state(&self, n: usize) -> Result<usize, CliError> {
        let x = self.mc.x0.unwrap_or(0.0);
        if x < 0.0 || x.fract() != 0.0 || x as usize >= n {
            return Err(CliError::ConfigParse(format!(
                "mc.x0 = {x} is not a state index below {n}"
            )));
        }
        Ok(x as usize)
    }

    fn path_config(&self, horizon: f64) -> PathConfig {
        PathConfig {
            dt: self.mc.dt,
            horizon: horizon.max(self.mc.dt),
            n_paths: self.mc.n_paths,
            seed: self.mc.seed,
            bridge_correction: self.mc.bridge_correction,
            snapshot_times: Vec::new(),
        }
    }

    fn bins(&mut self) -> Result<Bins, CliError> {
        let k = self.mc.bins;
        let grid = self.discretized()?.grid.as_ref().expect("diffusion grid");
        let (a, b) = grid.span();
        Ok(Bins::uniform(a, b, k)?)
    }

    fn classify(&mut self) -> Result<Record, CliError> {
        let d = self.diffusion(Op::Classify)?;
        let report = is_class_t(d)?;
        Ok(self.record(Op::Classify).outputs(&report))
    }

    fn spectrum(&mut self) -> Result<Record, CliError> {
        let tol = self.tol;
        let rec = self.record(Op::Spectrum);
        let disc = self.discretized()?;
        let lowest = lowest_eigenvalues(&disc.g, 5);
        let eig = &disc.eig;
        let xs: Vec<f64> = match &disc.grid {
            Some(grid) => grid.interior().to_vec(),
            None => (0..disc.g.n()).map(|i| i as f64).collect(),
        };
        let rows = xs
            .iter()
            .zip(&eig.phi0)
            .map(|(&x, &p)| vec![x, p])
            .collect();
        let rec = rec
            .outputs(&json!({
                "n": disc.g.n(),
                "lambda0": eig.lambda0,
                "lambda1": eig.lambda1,
                "gap": eig.gap(),
                "near_degenerate": eig.near_degenerate(),
                "lowest": lowest,
            }))
            .check("eigen_residual", eig.residual, tol.eigen_residual);
        self.tables.push(Table {
            file: "ground_state.csv".into(),
            header: vec!["x", "value"],
            rows,
        });
        Ok(rec)
    }

    fn qsd(&mut self) -> Result<Record, CliError> {
        let tol = self.tol;
        let (nu, dens) = self.qsd_vector()?;
        let lambda0 = self.discretized()?.eig.lambda0;
        let mass: f64 = nu.as_slice().iter().sum();
        let rows = match &dens {
            Some(d) => {
                d.x.iter()
                    .zip(nu.as_slice())
                    .zip(&d.density)
                    .map(|((&x, &m), &p)| vec![x, m, p])
                    .collect()
            }
            None => nu
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &m)| vec![i as f64, m, m])
                .collect(),
        };
        self.tables.push(Table {
            file: "qsd.csv".into(),
            header: vec!["x", "mass", "density"],
            rows,
        });
        Ok(self
            .record(Op::Qsd)
            .outputs(&json!({ "lambda0": lambda0, "states": nu.len() }))
            .check("mass_defect", (mass - 1.0).abs(), tol.qsd_mass))
    }

    fn verify_qsd(&mut self) -> Result<Record, CliError> {
        let tol = self.tol;
        let (nu, dens) = self.qsd_vector()?;
        let disc = self.discretized()?;
        let (g, lambda0) = (disc.g.clone(), disc.eig.lambda0);
        let mut invariance = 0.0_f64;
        for t in INVARIANCE_TIMES {
            let law = conditional_law(&g, &nu, t)?;
            invariance = invariance.max(sup_distance(law.as_slice(), nu.as_slice()));
        }
        let survival = (survival_probability(&g, nu.as_slice(), 1.0)? - (-lambda0).exp()).abs();
        let mut outputs = json!({ "lambda0": lambda0, "invariance_times": INVARIANCE_TIMES });
        let mut rec = self
            .record(Op::VerifyQsd)
            .check("invariance", invariance, tol.invariance)
            .check("survival_decay", survival, tol.survival);
        match &self.model {
            Model::Chain(g) if g.n() <= UNIQUENESS_LIMIT => {
                let u = uniqueness_check(g)?;
                outputs["nonnegative_eigenvectors"] = json!(u.nonnegative_count);
                rec = rec
                    .claim("unique_nonnegative_eigenvector", u.nonnegative_count == 1)
                    .check("uniqueness_distance", u.distance_to_qsd, tol.uniqueness);
            }
            Model::Chain(_) => {}
            Model::Diffusion(d) => {
                let d = d.clone();
                let dens = dens.expect("diffusion density");
                if let Some(r) = &self.loaded.config.reference {
                    if let Some(l) = r.lambda0 {
                        rec = rec.check("lambda0_error", (lambda0 - l).abs(), tol.lambda0);
                    }
                    if let Some(expr) = &r.density {
                        let f = Coefficient::parse(expr).map_err(|e| {
                            CliError::ConfigParse(format!("reference.density: {e}"))
                        })?;
                        rec = rec.check(
                            "density_l1",
                            dens.l1_distance(|x| f.eval(x)),
                            tol.density_l1,
                        );
                    }
                }
                let t = truncation_sensitivity(&d, &self.grid.spec())?;
                if t.relative_change > 0.0 || t.span != t.doubled_span {
                    outputs["truncation"] = json!(t);
                    rec = rec.check("truncation", t.relative_change, tol.truncation);
                }
            }
        }
        Ok(rec.outputs(&outputs))
    }

    fn doob_check(&mut self) -> Result<Record, CliError> {
        let tol = self.tol;
        let disc = self.discretized()?;
        let (g, eig, grid) = (disc.g.clone(), disc.eig.clone(), disc.grid.clone());
        let dg = doob_transform(&g, &eig)?;
        let scale = g.scale().max(1.0);
        let n = g.n();
        let ones = vec![1.0; n];
        let intertwining = semigroup_intertwining_check(&g, &eig, INTERTWINING_T, &ones)?;
        let gap = dg.spectral_gap().or(eig.gap());
        let f: Vec<f64> = (0..n).map(|i| if 2 * i < n { 1.0 } else { 0.0 }).collect();
        let lim = ergodic_limit(dg.generator(), &f, ERGODIC_T)?;
        let bound = gap
            .map(|gap| tol.ergodic_slack * (-gap * ERGODIC_T).exp())
            .unwrap_or(f64::INFINITY)
            .max(tol.ergodic_floor);
        let mut outputs = json!({
            "gap": gap,
            "ergodic_limit": lim.limit,
            "ergodic_distance": lim.distance,
            "ergodic_bound": bound,
        });
        let mut rec = self
            .record(Op::DoobCheck)
            .check("row_sums", dg.max_row_sum() / scale, tol.doob_structure)
            .check(
                "detailed_balance",
                dg.detailed_balance_defect() / scale,
                tol.doob_structure,
            )
            .check("intertwining", intertwining, tol.intertwining)
            .check("ergodic_ratio", lim.distance / bound, 1.0);
        if let (Model::Diffusion(d), Some(grid)) = (&self.model, grid) {
            let d = d.clone();
            let x0 = self.x0_diffusion(&d);
            let bins = self.bins()?;
            let occ = OccupationConfig {
                burn_in: self.mc.occupation_burn_in,
                sample_every: self.mc.occupation_every,
                bins,
            };
            let cfg = PathConfig {
                n_paths: 1,
                ..self.path_config(self.mc.occupation_horizon)
            };
            let o = doob_paths(&d, &grid, &eig, x0, &cfg, &occ)?;
            let chi = o.chi_square()?;
            outputs["occupation"] = json!({
                "samples": o.samples,
                "steps": o.steps,
                "absorptions": o.absorptions,
                "chi_square": chi,
            });
            rec = rec
                .claim(
                    "occupation_chi_square_not_rejected",
                    !chi.rejects_at(tol.chi2_level),
                )
                .claim("no_absorption", o.absorptions == 0);
            let se: Vec<f64> = o
                .probs
                .iter()
                .map(|p| (p * (1.0 - p) / o.samples.max(1) as f64).sqrt())
                .collect();
            self.tables.push(Table {
                file: "occupation.csv".into(),
                header: vec!["bin_lo", "bin_hi", "value", "stderr", "expected"],
                rows: (0..o.counts.len())
                    .map(|k| vec![o.edges[k], o.edges[k + 1], o.probs[k], se[k], o.expected[k]])
                    .collect(),
            });
        }
        Ok(rec.outputs(&outputs))
    }

    fn tightness(&mut self) -> Result<Record, CliError> {
        let d = self.diffusion(Op::Tightness)?.clone();
        let report = is_class_t(&d)?;
        let disc = self.discretized()?;
        let grid = disc.grid.as_ref().expect("diffusion grid");
        let mut levels = Vec::new();
        for eps in TIGHTNESS_EPS {
            let k = tightness_set(grid, eps);
            let p = tightness_profile(&disc.g, &k)?;
            levels.push((eps, k.len(), p.sup));
        }
        let monotone = levels.windows(2).all(|w| w[1].2 <= w[0].2 + 1e-12);
        self.tables.push(Table {
            file: "tightness.csv".into(),
            header: vec!["eps", "states", "sup"],
            rows: levels
                .iter()
                .map(|&(e, k, s)| vec![e, k as f64, s])
                .collect(),
        });
        Ok(self
            .record(Op::Tightness)
            .outputs(&json!({
                "class_t": report.class_t,
                "levels": levels.iter().map(|&(eps, states, sup)| json!({"eps": eps, "states": states, "sup": sup})).collect::<Vec<_>>(),
            }))
            .claim("monotone_in_k", monotone))
    }

    fn yaglom(&mut self) -> Result<Record, CliError> {
        let times = self.mc.times.clone();
        if times.is_empty() {
            return Err(CliError::ConfigParse("mc.times is empty".into()));
        }
        let (nu, dens) = self.qsd_vector()?;
        let rows: Vec<Vec<f64>>;
        let mut rec = self.record(Op::Yaglom);
        match (&self.model, dens) {
            (Model::Diffusion(d), Some(dens)) => {
                let d = d.clone();
                let x0 = self.x0_diffusion(&d);
                let bins = self.bins()?;
                let cfg = self.path_config(*times.last().unwrap());
                let y = yaglom_estimate(&d, x0, &cfg, &dens, &bins, &times)?;
                rows = y
                    .points
                    .iter()
                    .map(|p| {
                        vec![
                            p.t,
                            p.tv_distance.unwrap_or(f64::NAN),
                            p.ci.map_or(f64::NAN, |c| c.halfwidth() / 1.96),
                        ]
                    })
                    .collect();
                let (first, last) = (&y.points[0], y.points.last().unwrap());
                if let (Some(a), Some(b)) = (first.ci, last.ci) {
                    if y.points.len() >= 2 {
                        rec = rec.claim("tv_decreases", b.estimate < a.estimate && !a.overlaps(&b));
                    }
                }
                rec = rec.outputs(&y);
            }
            (Model::Chain(g), _) => {
                let g = g.clone();
                let x0 = self.x0_state(g.n())?;
                let start = QsdVector::dirac(g.n(), x0);
                let mut tv = Vec::new();
                for &t in &times {
                    tv.push(conditional_law(&g, &start, t)?.tv_distance(&nu));
                }
                rows = times
                    .iter()
                    .zip(&tv)
                    .map(|(&t, &v)| vec![t, v, 0.0])
                    .collect();
                if tv.len() >= 2 {
                    rec = rec.claim("tv_decreases", tv[tv.len() - 1] <= tv[0]);
                }
                rec = rec.outputs(&json!({ "times": times, "tv_distance": tv }));
            }
            (Model::Diffusion(_), None) => unreachable!("diffusion QSD always carries a density"),
        }
        self.tables.push(Table {
            file: "yaglom.csv".into(),
            header: vec!["t", "value", "stderr"],
            rows,
        });
        Ok(rec)
    }

    fn moments(&mut self) -> Result<Record, CliError> {
        let tol = self.tol;
        let disc = self.discretized()?;
        let (g, lambda0, grid) = (disc.g.clone(), disc.eig.lambda0, disc.grid.clone());
        match &self.model {
            Model::Chain(_) => {
                let gamma = self.mc.gamma.unwrap_or(0.5 * lambda0);
                let values = exp_lifetime_moments(&g, gamma)?;
                self.tables.push(Table {
                    file: "moments.csv".into(),
                    header: vec!["x", "value"],
                    rows: values
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| vec![i as f64, v])
                        .collect(),
                });
                Ok(self
                    .record(Op::Moments)
                    .outputs(&json!({ "gamma": gamma, "lambda0": lambda0, "values": values })))
            }
            Model::Diffusion(d) => {
                let d = d.clone();
                let report = is_class_t(&d)?;
                if !report.class_t {
                    return Err(DiffusionError::NotClassT.into());
                }
                let grid = grid.expect("diffusion grid");
                let gamma = self.mc.gamma.unwrap_or(0.4 * lambda0);
                let x0 = self.x0_diffusion(&d);
                let values = exp_lifetime_moments(&g, gamma)?;
                let oracle = interpolate(grid.interior(), &values, x0);
                let horizon = self.mc.horizon.unwrap_or(12.0 / lambda0);
                let ens = simulate_killed_paths(&d, &Init::Point(x0), &self.path_config(horizon))?;
                let m = exp_zeta_moment_estimate(&ens, gamma)?;
                let z = if m.stderr > 0.0 {
                    (m.value - oracle).abs() / m.stderr
                } else if m.value == oracle {
                    0.0
                } else {
                    f64::INFINITY
                };
                let window = (
                    m.lambda0_hat.recip().min(0.25 * horizon),
                    (4.0 / m.lambda0_hat).min(horizon),
                );
                let rate = survival_rate_estimate(&ens, window).ok();
                let n = ens.n_paths() as f64;
                let rows = (0..=SURVIVAL_POINTS)
                    .map(|j| {
                        let t = horizon * j as f64 / SURVIVAL_POINTS as f64;
                        let s = ens.survivors(t) as f64 / n;
                        vec![t, s, (s * (1.0 - s) / n).sqrt()]
                    })
                    .collect();
                self.tables.push(Table {
                    file: "survival.csv".into(),
                    header: vec!["t", "value", "stderr"],
                    rows,
                });
                Ok(self
                    .record(Op::Moments)
                    .outputs(&json!({
                        "gamma": gamma,
                        "x0": x0,
                        "lambda0": lambda0,
                        "oracle": oracle,
                        "estimate": m,
                        "survival_rate": rate,
                        "absorbed": ens.absorptions(),
                        "killed": ens.kills(),
                    }))
                    .check("z_score", z, tol.z_max))
            }
        }
    }
}

/// Piecewise-linear interpolation, constant beyond the ends.
fn interpolate(x: &[f64], y: &[f64], at: f64) -> f64 {
    let k = x.partition_point(|&v| v < at);
    if k == 0 {
        return y[0];
    }
    if k == x.len() {
        return y[k - 1];
    }
    let t = (at - x[k - 1]) / (x[k] - x[k - 1]);
    (1.0 - t) * y[k - 1] + t * y[k]
}
