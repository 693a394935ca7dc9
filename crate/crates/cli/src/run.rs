use std::f64::consts::FRAC_PI_3;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lps_core::formats::{write_boundary_csv, write_pairs_csv, write_spectrum_csv};
use lps_core::functional_calculus::{algebraic_constant, calibrate_gamma, test_function, TestFunction};
use lps_core::semigroup_calculus::{make_time_grid_for, GridKernel, DEFAULT_DENSITY};
use lps_core::square_functions::{g_function_with, g_profile, SquareKernel};
use lps_core::verify::*;
use lps_core::{
    convexity_modulus_probe, heat, random_reversible, spectral, square, AscentConfig, BanachParams, ChainFile,
    ConstantReport, FieldFile, LabError, MarkovOperator, VectorField,
};
use num_complex::Complex64;
use serde_json::json;
use thiserror::Error;

use crate::args::{GenChainArgs, GfunctionArgs, Kernel, SpaceArgs, SpectrumArgs, Suite, VerifyArgs};

/// Trials of the convexity-modulus probe feeding the spectral suite.
const PROBE_TRIALS: usize = 256;
const CONTOUR_NODES: usize = 256;
const BOUNDARY_POINTS: usize = 512;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Whether every check of a command passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Self::Pass
        } else {
            Self::Fail
        }
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|source| CliError::Io { path: p.to_path_buf(), source }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

fn load_chain(path: &Path) -> CliResult<MarkovOperator> {
    Ok(ChainFile::from_json(&read(path)?)?.to_operator()?)
}

fn banach(space: SpaceArgs) -> CliResult<BanachParams> {
    Ok(BanachParams::new(space.p, space.q, space.d)?)
}

pub fn gen_chain(args: &GenChainArgs) -> CliResult<Verdict> {
    if args.n < 2 {
        return Err(CliError::Usage(format!("--n must be at least 2, got {}", args.n)));
    }
    let s = random_reversible(args.n, args.seed, args.model.into())?.operator;
    let op = if args.no_square { s } else { square(&s) };
    let mut text = ChainFile::from_operator(&op).to_json()?;
    text.push('\n');
    emit(args.out.as_deref(), text.as_bytes())?;
    Ok(Verdict::Pass)
}

struct SuiteRunner<'a> {
    args: &'a VerifyArgs,
    family: InstanceFamily,
    ascent: AscentConfig,
}

impl SuiteRunner<'_> {
    fn identities(&self) -> CliResult<Vec<ConstantReport>> {
        let mut ks = vec![1, 2, 3, self.args.k];
        ks.sort_unstable();
        ks.dedup();
        Ok(vec![
            verify_l2_identity(&self.family, &ks)?,
            verify_discrete_identity(&self.family)?,
            verify_subordination(&self.family, &[0.1, 1.0, 10.0], lps_core::SubordinationMode::Quadrature)?,
            verify_rota(&self.family)?,
            verify_semigroup_identities(&self.family)?,
        ])
    }

    fn inequalities(&self) -> CliResult<Vec<ConstantReport>> {
        let q = self.family.params.q;
        let k = self.args.k;
        let variants = [SquareVariant::Continuous, SquareVariant::Discrete, SquareVariant::Poisson];
        let mut out = Vec::new();
        if q >= 2.0 {
            for v in variants {
                out.push(verify_cotype_inequality(&self.family, k, v)?);
            }
        }
        if q <= 2.0 {
            for v in variants {
                out.push(verify_type_inequality(&self.family, k, v)?);
            }
        }
        out.push(verify_hn_functional(&self.family)?);
        Ok(out)
    }

    fn spectral(&self) -> CliResult<Vec<ConstantReport>> {
        let params = self.family.params;
        let delta = convexity_modulus_probe(params.renorming_exponent(), params.d, PROBE_TRIALS, self.args.seed)?;
        let scan = ScanOptions { ascent: self.ascent, ..ScanOptions::default() };
        let analyticity = AnalyticityOptions { ascent: self.ascent, ..AnalyticityOptions::default() };
        Ok(vec![
            verify_contraction_family(&self.family, &delta, self.ascent)?,
            verify_stolz_family(&self.family, &delta, scan)?,
            verify_analyticity_family(&self.family, self.args.n_max, analyticity)?,
        ])
    }

    fn calculus(&self) -> CliResult<Vec<ConstantReport>> {
        let params = self.family.params;
        let sg = heat(&self.family.instance(0)?.operator)?;
        let phi = test_function(TestFunction::PhiEps { sign: 1, theta: FRAC_PI_3, q_conj: params.q_conj() })?;
        let psi = test_function(TestFunction::Psi)?;
        let grid = hinf_time_grid(&sg, phi.decay.min(psi.decay), params.q, GRID_TOL, DEFAULT_DENSITY)?;
        Ok(vec![
            verify_contour_calculus(&self.family, CONTOUR_NODES)?,
            verify_mcintosh(&sg, &phi, &psi, &self.family, params.q, &grid)?,
        ])
    }
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Identities => "identities",
        Suite::Inequalities => "inequalities",
        Suite::Spectral => "spectral",
        Suite::Calculus => "calculus",
        Suite::All => "all",
    }
}

pub fn verify(args: &VerifyArgs) -> CliResult<Verdict> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let params = banach(args.space)?;
    let family = InstanceFamily::new(args.model.into(), args.sizes.clone(), params, args.trials, args.seed)?;
    let ascent = AscentConfig { restarts: args.ascent_restarts, steps: args.ascent_steps };
    let runner = SuiteRunner { args, family, ascent };
    let mut reports = Vec::new();
    let all = args.suite == Suite::All;
    if all || args.suite == Suite::Identities {
        reports.extend(runner.identities()?);
    }
    if all || args.suite == Suite::Inequalities {
        reports.extend(runner.inequalities()?);
    }
    if all || args.suite == Suite::Spectral {
        reports.extend(runner.spectral()?);
    }
    if all || args.suite == Suite::Calculus {
        reports.extend(runner.calculus()?);
    }
    let pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        eprintln!("{} {} max {:e} over {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.stats.max, r.stats.count);
    }
    let doc = json!({
        "suite": suite_name(args.suite),
        "config": {
            "p": params.p, "q": params.q, "d": params.d, "k": args.k,
            "sizes": args.sizes, "trials": args.trials, "seed": args.seed,
            "model": lps_core::ChainModel::from(args.model),
            "ascent": ascent, "n_max": args.n_max,
        },
        "pass": pass,
        "reports": reports,
    });
    let mut text = serde_json::to_string_pretty(&doc).map_err(LabError::from)?;
    text.push('\n');
    emit(args.out.as_deref(), text.as_bytes())?;
    Ok(Verdict::from_pass(pass))
}

pub fn spectrum(args: &SpectrumArgs) -> CliResult<Verdict> {
    let t = load_chain(&args.chain)?;
    let params = banach(args.space)?;
    let delta = convexity_modulus_probe(params.renorming_exponent(), params.d, PROBE_TRIALS, args.seed)?;
    let domain = calibrate_gamma(algebraic_constant(params.renorming_exponent(), delta.delta)?)?;
    let mut csv = Vec::new();
    let outside = write_spectrum_csv(&spectral(&t)?, &domain, &mut csv)?;
    emit(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.boundary {
        let mut csv = Vec::new();
        write_boundary_csv(&domain, BOUNDARY_POINTS, &mut csv)?;
        emit(Some(path), &csv)?;
    }
    let mut pass = outside == 0;
    if let Some(path) = &args.report {
        let report = verify_spectrum_stolz(&t, &params, &delta, ScanOptions::default(), args.seed)?;
        pass &= report.pass;
        let mut text = report.to_json()?;
        text.push('\n');
        emit(Some(path), text.as_bytes())?;
    }
    eprintln!("{} {outside} of {} eigenvalues outside B_γ, γ = {}", if pass { "PASS" } else { "FAIL" }, t.len(), domain.gamma());
    Ok(Verdict::from_pass(pass))
}

pub fn gfunction(args: &GfunctionArgs) -> CliResult<Verdict> {
    let t = load_chain(&args.chain)?;
    let params = banach(args.space)?;
    let f = match &args.field {
        Some(path) => FieldFile::from_json(&read(path)?)?.to_field(t.space())?,
        None => VectorField::random(t.space().clone(), params.d, args.seed),
    };
    if f.dim() != params.d {
        return Err(CliError::Usage(format!("field has dimension {} but --d is {}", f.dim(), params.d)));
    }
    let alpha = Complex64::new(args.alpha, args.alpha_im);
    let (kernel, grid_kernel) = match (args.kernel, alpha == Complex64::new(0.0, 0.0)) {
        (Kernel::Heat, true) => (SquareKernel::Heat, GridKernel::Heat),
        (Kernel::Heat, false) => {
            (SquareKernel::Fractional(alpha), GridKernel::Fractional { re: alpha.re, im: alpha.im })
        }
        (Kernel::Poisson, true) => (SquareKernel::Poisson, GridKernel::Poisson),
        (Kernel::Poisson, false) => return Err(CliError::Usage("--alpha applies to the heat kernel only".into())),
    };
    let sg = heat(&t)?;
    let grid = make_time_grid_for(&sg, grid_kernel, args.k, params.q, GRID_TOL, DEFAULT_DENSITY)?;
    let g = g_function_with(&sg, &f, kernel, args.k, params.q, &grid)?;
    let mut csv = Vec::new();
    g.write_csv(&mut csv).map_err(|source| CliError::Io { path: "<buffer>".into(), source })?;
    emit(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.profile {
        let profile = g_profile(&sg, &f, kernel, args.k, &params, &grid)?;
        let mut csv = Vec::new();
        write_pairs_csv(("t", "norm"), &profile, &mut csv)?;
        emit(Some(path), &csv)?;
    }
    eprintln!("‖G‖_(L_{}) = {:e} (error budget {:e})", params.p, g.lp_norm(params.p), g.error_budget);
    Ok(Verdict::Pass)
}
