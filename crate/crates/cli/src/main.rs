//! `ddefloquet`: Floquet multipliers of periodic delay equations from a
//! JSON problem file.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddefloquet::charmat::{logdet_grid, verify_equivalence};
use ddefloquet::model::{compute_bounds, load_problem, DEFAULT_BOUND_SAMPLES};
use ddefloquet::oracle::{discretize_t, oracle_multipliers, stable_oracle_multipliers};
use ddefloquet::space::{
    assemble, build_mesh, dump_operators, fixed_point_iteration, operator_norm_inf, select_k, GridVector,
    DEFAULT_DEGREE,
};
use ddefloquet::spectrum::{chain_remainder_slope, find_multipliers_report, locate_poles, MultiplierRecord};
use ddefloquet::tables::{self, Cell, Format, Table};
use ddefloquet::{Complex64, Dde, Error, Operators};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ddefloquet", version, about = "Floquet multipliers of linear periodic delay differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multipliers with |lambda| >= 1 / (0.99 R), with multiplicities.
    Multipliers(Common),
    /// Poles of Delta_k in |mu| <= R (k defaults to 1 here).
    Poles(Common),
    /// Jordan chains and sampled (generalized) eigenfunctions.
    Jordan(Common),
    /// log det Delta_k on a square grid.
    CharmatSample {
        #[command(flatten)]
        common: Common,
        /// Points per axis.
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Half-width of the square centred at the origin.
        #[arg(long, default_value_t = 2.0)]
        extent: f64,
    },
    /// Compares the root finder against the dense monodromy eigenvalues.
    OracleCompare(Common),
    /// Runs the equivalence, norm-bound and k-invariance checks.
    Selfcheck(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    problem: PathBuf,
    /// Radius R of the certified disk in mu = 1 / lambda.
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    /// Number of shooting subintervals; defaults to the smallest admissible.
    #[arg(long)]
    k: Option<usize>,
    /// Polynomial degree per element.
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    degree: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the assembled matrices.
    #[arg(long)]
    dump_operators: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::RegionViolation { .. } | Error::Singular(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Run<T> = Result<T, Failure>;

/// Problem, operators and bookkeeping shared by every command.
struct Setup {
    common: Common,
    dde: Dde,
    ops: Operators,
    k_min: usize,
    manifest: serde_json::Map<String, Value>,
    started: Instant,
}

impl Setup {
    fn new(command: &str, common: &Common, k_exempt: bool) -> Run<Self> {
        let started = Instant::now();
        let dde: Dde = load_problem(&common.problem)?;
        if !(common.radius >= 1.0) || !common.radius.is_finite() {
            return Err(Failure::Input(format!("--radius must be at least 1, got {}", common.radius)));
        }
        std::fs::create_dir_all(&common.out)?;
        let bounds = compute_bounds(&dde, DEFAULT_BOUND_SAMPLES)?;
        let k_min = select_k(&bounds, common.radius, dde.horizon())?;
        let k = match common.k {
            Some(k) if k < k_min && !k_exempt => {
                return Err(Error::KTooSmall {
                    requested: k,
                    minimum: k_min,
                    radius: common.radius,
                }
                .into())
            }
            Some(0) => return Err(Failure::Input("--k must be at least 1".into())),
            Some(k) => k,
            None if k_exempt => 1,
            None => k_min,
        };
        let t0 = Instant::now();
        let ops = assemble(&dde, build_mesh(&dde, k, common.degree)?)?;
        let assembly = t0.elapsed().as_secs_f64();
        if common.dump_operators {
            dump_operators(&ops, &common.out, "operators")?;
        }
        let mut manifest = serde_json::Map::new();
        manifest.insert("command".into(), json!(command));
        manifest.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        manifest.insert("problem".into(), json!(common.problem.display().to_string()));
        manifest.insert("n".into(), json!(dde.dim()));
        manifest.insert("m".into(), json!(dde.horizon()));
        manifest.insert("radius".into(), json!(common.radius));
        manifest.insert("k".into(), json!(k));
        manifest.insert("k_min".into(), json!(k_min));
        manifest.insert("c_star".into(), json!(bounds.contraction_constant(common.radius)));
        manifest.insert("sup_a".into(), json!(bounds.sup_a));
        manifest.insert("sup_b".into(), json!(bounds.sup_b_total));
        manifest.insert("v_bar".into(), json!(bounds.v_bar));
        manifest.insert("guaranteed_radius".into(), json!(finite_or_null(ops.guaranteed_radius())));
        manifest.insert("degree".into(), json!(common.degree));
        manifest.insert("ndof".into(), json!(ops.ndof()));
        manifest.insert("seed".into(), json!(common.seed));
        manifest.insert("threads".into(), json!(rayon::current_num_threads()));
        manifest.insert("timings".into(), json!({ "assembly_s": assembly }));
        Ok(Self {
            common: common.clone(),
            dde,
            ops,
            k_min,
            manifest,
            started,
        })
    }

    fn format(&self) -> Format {
        self.common.format.into()
    }

    fn save(&self, table: &Table, stem: &str) -> Run<()> {
        table.save(&self.common.out, stem, self.format())?;
        Ok(())
    }

    /// Search radius in mu: `0.99 R`.
    fn r_search(&self) -> f64 {
        0.99 * self.common.radius
    }

    fn timing(&mut self, key: &str, secs: f64) {
        if let Some(Value::Object(t)) = self.manifest.get_mut("timings") {
            t.insert(key.into(), json!(secs));
        }
    }

    fn finish(mut self, flags: Vec<String>) -> Run<ExitCode> {
        let total = self.started.elapsed().as_secs_f64();
        self.timing("total_s", total);
        self.manifest.insert("flags".into(), json!(flags));
        write_json(&self.common.out.join("manifest.json"), &Value::Object(self.manifest))?;
        if flags.is_empty() {
            Ok(ExitCode::SUCCESS)
        } else {
            for f in &flags {
                eprintln!("flag: {f}");
            }
            Ok(ExitCode::from(2))
        }
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn write_json(path: &Path, v: &Value) -> Run<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Input(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn search(setup: &mut Setup) -> Run<(Vec<MultiplierRecord<f64>>, Vec<String>)> {
    let t0 = Instant::now();
    let rep = find_multipliers_report(&setup.ops, setup.r_search())?;
    setup.timing("search_s", t0.elapsed().as_secs_f64());
    setup.manifest.insert("r_search".into(), json!(setup.r_search()));
    setup.manifest.insert("winding".into(), json!(rep.contour.winding));
    let mut flags = rep.flags;
    for r in &rep.records {
        for f in &r.flags {
            flags.push(format!("mu = {:.6}{:+.6}i: {f}", r.mu_star.re, r.mu_star.im));
        }
    }
    Ok((rep.records, flags))
}

fn cmd_multipliers(common: &Common) -> Run<ExitCode> {
    let mut setup = Setup::new("multipliers", common, false)?;
    let (records, flags) = search(&mut setup)?;
    setup.save(&tables::multiplier_table(&records), "multipliers")?;
    setup.finish(flags)
}

fn cmd_poles(common: &Common) -> Run<ExitCode> {
    let mut setup = Setup::new("poles", common, true)?;
    let t0 = Instant::now();
    let poles = locate_poles(&setup.ops, common.radius);
    setup.timing("poles_s", t0.elapsed().as_secs_f64());
    setup.save(&tables::pole_table(&poles), "poles")?;
    setup.finish(Vec::new())
}

fn cmd_jordan(common: &Common) -> Run<ExitCode> {
    let mut setup = Setup::new("jordan", common, false)?;
    let (records, mut flags) = search(&mut setup)?;
    let mut chains = Table::new(vec![
        "re_mu",
        "im_mu",
        "alg_mult",
        "geom_mult",
        "chain",
        "chain_len",
        "remainder_slope",
    ]);
    let mut funcs = Table::new(vec!["re_mu", "im_mu", "chain", "order", "t", "component", "re_x", "im_x"]);
    let times = setup.ops.mesh.refined_times(4);
    for r in &records {
        for (ci, chain) in r.chains.iter().enumerate() {
            let h = 1e-2 * r.mu_star.norm().max(1.0);
            let (_, slope) = chain_remainder_slope(&setup.ops, r.mu_star, chain, &[h, h / 10.0])?;
            if slope < chain.len() as f64 - 0.1 {
                flags.push(format!(
                    "mu = {:.6}{:+.6}i chain {ci}: remainder slope {slope:.3} below {}",
                    r.mu_star.re,
                    r.mu_star.im,
                    chain.len() as f64 - 0.1
                ));
            }
            chains.push(vec![
                Cell::Real(r.mu_star.re),
                Cell::Real(r.mu_star.im),
                Cell::Int(r.alg_mult as u64),
                Cell::Int(r.geom_mult as u64),
                Cell::Int(ci as u64),
                Cell::Int(chain.len() as u64),
                Cell::Real(slope),
            ]);
            for (order, x) in r.eigenfunctions[ci].iter().enumerate() {
                for &t in &times {
                    for (c, v) in x.eval(t).iter().enumerate() {
                        funcs.push(vec![
                            Cell::Real(r.mu_star.re),
                            Cell::Real(r.mu_star.im),
                            Cell::Int(ci as u64),
                            Cell::Int(order as u64),
                            Cell::Real(t),
                            Cell::Int(c as u64),
                            Cell::Real(v.re),
                            Cell::Real(v.im),
                        ]);
                    }
                }
            }
        }
    }
    setup.save(&tables::multiplier_table(&records), "multipliers")?;
    setup.save(&chains, "chains")?;
    setup.save(&funcs, "eigenfunctions")?;
    setup.finish(flags)
}

fn cmd_charmat_sample(common: &Common, grid: usize, extent: f64) -> Run<ExitCode> {
    if grid == 0 || !(extent > 0.0) {
        return Err(Failure::Input("--grid must be positive and --extent > 0".into()));
    }
    let mut setup = Setup::new("charmat-sample", common, false)?;
    let axis = |i: usize| {
        if grid == 1 {
            0.0
        } else {
            -extent + 2.0 * extent * i as f64 / (grid - 1) as f64
        }
    };
    let mus: Vec<Complex64> = (0..grid)
        .flat_map(|j| (0..grid).map(move |i| Complex64::new(axis(i), axis(j))))
        .collect();
    let t0 = Instant::now();
    let mut samples = logdet_grid(&setup.ops, &mus);
    setup.timing("sample_s", t0.elapsed().as_secs_f64());
    let limit = setup.ops.guaranteed_radius();
    for s in &mut samples {
        if s.status == "ok" && s.mu.norm() >= limit {
            s.status = "uncertified".into();
        }
    }
    setup.manifest.insert("grid".into(), json!(grid));
    setup.manifest.insert("extent".into(), json!(extent));
    setup.save(&tables::logdet_table(&samples), "logdet")?;
    setup.finish(Vec::new())
}

fn cmd_oracle_compare(common: &Common) -> Run<ExitCode> {
    let mut setup = Setup::new("oracle-compare", common, false)?;
    let (records, mut flags) = search(&mut setup)?;
    let min_abs = 1.0 / setup.r_search();
    let t0 = Instant::now();
    let dense = oracle_multipliers(&discretize_t(&setup.ops)?, min_abs)?;
    let stable = stable_oracle_multipliers(&setup.dde, setup.ops.k(), common.degree, min_abs)?;
    setup.timing("oracle_s", t0.elapsed().as_secs_f64());

    let mut rows = Vec::new();
    let mut unmatched: Vec<(Complex64, usize)> = dense.clone();
    for r in records.iter().filter(|r| r.lambda.norm() >= min_abs) {
        let best = unmatched
            .iter()
            .enumerate()
            .map(|(i, (l, q))| (i, (l - r.lambda).norm() / r.lambda.norm(), *q))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let (gap, mult_ok) = match best {
            Some((i, gap, q)) if gap < 1e-6 => {
                unmatched.remove(i);
                (gap, q == r.alg_mult)
            }
            Some((_, gap, _)) => (gap, false),
            None => (f64::INFINITY, false),
        };
        if gap >= 1e-6 || !mult_ok {
            flags.push(format!(
                "lambda = {:.8}{:+.8}i (alg {}) has no oracle partner within 1e-6 (gap {gap:.2e})",
                r.lambda.re, r.lambda.im, r.alg_mult
            ));
        }
        rows.push(json!({
            "re_lambda": r.lambda.re,
            "im_lambda": r.lambda.im,
            "alg_mult": r.alg_mult,
            "relative_gap": finite_or_null(gap),
            "multiplicity_match": mult_ok,
        }));
    }
    for (l, q) in &unmatched {
        flags.push(format!("oracle eigenvalue {:.8}{:+.8}i (x{q}) not found by the root finder", l.re, l.im));
    }
    setup.save(&tables::oracle_table(&dense), "oracle")?;
    setup.save(&tables::oracle_table(&stable.accepted), "oracle_stable")?;
    write_json(
        &common.out.join("comparison.json"),
        &json!({
            "min_abs_lambda": min_abs,
            "matches": rows,
            "oracle_count": dense.len(),
            "stable_count": stable.accepted.len(),
            "rejected_by_refinement": stable.rejected.len(),
        }),
    )?;
    setup.finish(flags)
}

struct CheckRow {
    name: String,
    value: f64,
    bound: f64,
}

fn cmd_selfcheck(common: &Common) -> Run<ExitCode> {
    let mut setup = Setup::new("selfcheck", common, false)?;
    let r = common.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let mut checks = Vec::new();

    let mut worst = [0.0f64; 3];
    for _ in 0..10 {
        let rho = 0.99 * r * rng.random::<f64>().sqrt();
        let mu = Complex64::from_polar(rho, rng.random_range(0.0..std::f64::consts::TAU));
        let rep = verify_equivalence(&setup.ops, mu)?;
        worst[0] = worst[0].max(rep.fgh_residual);
        worst[1] = worst[1].max(rep.e_inverse_residual.max(rep.f_inverse_residual));
        worst[2] = worst[2].max(rep.factorization_residual);
    }
    checks.push(CheckRow { name: "equivalence_fgh".into(), value: worst[0], bound: 1e-8 });
    checks.push(CheckRow { name: "equivalence_inverses".into(), value: worst[1], bound: 1e-9 });
    checks.push(CheckRow { name: "monodromy_factorization".into(), value: worst[2], bound: 1e-10 });

    let det0 = ddefloquet::charmat::evaluate(&setup.ops, Complex64::new(0.0, 0.0))?.det();
    checks.push(CheckRow { name: "det_at_origin".into(), value: (det0 - 1.0).norm(), bound: 1e-12 });

    let b = setup.ops.bounds;
    let k = setup.ops.k() as f64;
    for rho in [1.0, r] {
        // the current-period branch has no factor mu, hence max(1, |mu|)
        let bound = (b.sup_a + rho.max(1.0) * b.sup_b_total) / k * 1.05;
        checks.push(CheckRow {
            name: format!("norm_bound_at_{rho}"),
            value: operator_norm_inf(&setup.ops, rho)?,
            bound,
        });
        let n = setup.ops.mesh.dim();
        let v = GridVector::new(
            n,
            nalgebra::DVector::from_fn(setup.ops.grid_len(), |_, _| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }),
        )?;
        let rep = fixed_point_iteration(&setup.ops, Complex64::from_polar(0.99 * rho, 0.7), &v, 1e-12, 500);
        if setup.ops.m_of(Complex64::new(0.0, 0.0)).nrows() > 0 && bound / 1.05 < 1.0 {
            checks.push(CheckRow {
                name: format!("fixed_point_rate_at_{rho}"),
                value: if rep.converged { rep.max_rate() } else { f64::INFINITY },
                bound: bound / 1.05 + 0.05,
            });
        }
    }

    let (records, mut flags) = search(&mut setup)?;
    let other = assemble(&setup.dde, build_mesh(&setup.dde, setup.ops.k() + 3, common.degree)?)?;
    let alt = find_multipliers_report(&other, setup.r_search())?;
    let gap = multiset_gap(
        &records.iter().map(|r| (r.mu_star, r.alg_mult)).collect::<Vec<_>>(),
        &alt.records.iter().map(|r| (r.mu_star, r.alg_mult)).collect::<Vec<_>>(),
    );
    checks.push(CheckRow { name: "k_invariance".into(), value: gap, bound: 1e-8 });
    let total: usize = records.iter().map(|r| r.alg_mult).sum();
    checks.push(CheckRow {
        name: "winding_consistency".into(),
        value: (total as i64 - alt.contour.winding).abs() as f64,
        bound: 0.5,
    });

    let mut table = Table::new(vec!["name", "value", "bound", "pass"]);
    let mut summary = Vec::new();
    for c in &checks {
        let pass = c.value <= c.bound;
        if !pass {
            flags.push(format!("{}: {:.3e} exceeds {:.3e}", c.name, c.value, c.bound));
        }
        table.push(vec![
            Cell::Text(c.name.clone()),
            Cell::Real(c.value),
            Cell::Real(c.bound),
            Cell::Text(pass.to_string()),
        ]);
        summary.push(json!({ "name": c.name, "value": finite_or_null(c.value), "bound": c.bound, "pass": pass }));
    }
    setup.manifest.insert("k_min_checked".into(), json!(setup.k_min));
    setup.save(&table, "selfcheck")?;
    write_json(&common.out.join("selfcheck_summary.json"), &Value::Array(summary))?;
    setup.finish(flags)
}

/// Largest relative distance in a multiplicity-respecting matching, or
/// infinity when none exists.
fn multiset_gap(a: &[(Complex64, usize)], b: &[(Complex64, usize)]) -> f64 {
    let expand = |v: &[(Complex64, usize)]| -> Vec<Complex64> {
        v.iter().flat_map(|(z, q)| std::iter::repeat_n(*z, *q)).collect()
    };
    let (xa, mut xb) = (expand(a), expand(b));
    if xa.len() != xb.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for z in xa {
        let Some((i, d)) = xb
            .iter()
            .enumerate()
            .map(|(i, w)| (i, (z - w).norm() / z.norm().max(1.0)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
        else {
            return f64::INFINITY;
        };
        worst = worst.max(d);
        xb.swap_remove(i);
    }
    worst
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("DDEFLOQUET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("DDEFLOQUET_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("DDEFLOQUET_THREADS must be a positive integer".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Multipliers(c) => cmd_multipliers(c),
        Command::Poles(c) => cmd_poles(c),
        Command::Jordan(c) => cmd_jordan(c),
        Command::CharmatSample { common, grid, extent } => cmd_charmat_sample(common, *grid, *extent),
        Command::OracleCompare(c) => cmd_oracle_compare(c),
        Command::Selfcheck(c) => cmd_selfcheck(c),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
