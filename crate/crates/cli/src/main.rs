//! `bddsolve` command-line front end: instance generation, chain and UDU
//! builds, solves, sparsification, Schur complements and dense verification.
//!
//! Every command that computes something prints a JSON stats object to
//! stderr (or to `--stats`). Exit codes: 2 parse, 3 precondition,
//! 4 numerical, 5 size cap.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bddsolve::builder::{decompose_report, recursive_construct_report, udu_solve, BuildReport, BuilderParams};
use bddsolve::chain::{pseudo_apply, pseudo_delta, refine, IterativeSolver, LinearOperator, RefineResult};
use bddsolve::graphs::{generate, GraphKind};
use bddsolve::io;
use bddsolve::oracle::{approx_epsilon_on_range, condition_number, min_nonzero_eig, DenseHermitian};
use bddsolve::resparsify::{sparsify_report, SolverFactory, SparsifyOptions};
use bddsolve::schur::{approx_schur_report, complement, SchurParams};
use bddsolve::selection::{bdd_subset, bdd_subset_low_degree};
use bddsolve::{BlockSparseMatrix, BlockVector, Category, Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "bddsolve",
    version,
    about = "Solvers for block diagonally dominant linear systems"
)]
struct Cli {
    /// Write the JSON stats here instead of stderr.
    #[arg(long, global = true)]
    stats: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct BuildArgs {
    /// Phase length: density control runs every K levels.
    #[arg(long = "k", default_value_t = BuilderParams::default().phase_length)]
    phase_length: usize,
    /// Constant c of the density schedule.
    #[arg(long = "c", default_value_t = 1.0)]
    density_c: f64,
    /// Cap on the density multiplier.
    #[arg(long, default_value_t = BuilderParams::default().k_cap)]
    k_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest number of blocks solved densely at the bottom.
    #[arg(long, default_value_t = BuilderParams::default().terminal_size)]
    terminal: usize,
}

impl BuildArgs {
    fn params(&self) -> BuilderParams {
        BuilderParams {
            phase_length: self.phase_length,
            density_c: self.density_c,
            k_cap: self.k_cap,
            ..BuilderParams::default()
        }
        .with_seed(self.seed)
        .with_terminal_size(self.terminal)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a connection graph (BDDG), or its Laplacian with --laplacian.
    Generate {
        #[arg(long)]
        kind: GraphKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturbation of synchronization blocks.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Write the connection Laplacian (BDDM) instead of the graph.
        #[arg(long)]
        laplacian: bool,
        /// Planted unitaries of synchronization instances (default: <out>.planted).
        #[arg(long)]
        planted: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Build a Schur complement chain and store it in a binary container.
    Build {
        matrix: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Solve M x = b by refinement preconditioned with a chain.
    Solve {
        matrix: PathBuf,
        rhs: PathBuf,
        /// Prebuilt chain (with --pseudo: a chain for the shifted matrix).
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// Apply an approximate pseudoinverse (singular M, b in its range).
        #[arg(long)]
        pseudo: bool,
        /// Accuracy of the pseudoinverse, in (0, 1/2).
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Lower bound on the nonzero eigenvalues (estimated densely if absent).
        #[arg(long)]
        mu: Option<f64>,
        /// Bound on the finite condition number (estimated densely if absent).
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Build a sparsified block factorization M ~ U* D U.
    Factor {
        matrix: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Solve with a stored UDU factorization, refining against --matrix if given.
    UduSolve {
        factorization: PathBuf,
        rhs: PathBuf,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Sparsify a bDD matrix by sampled leverage scores.
    Sparsify {
        matrix: PathBuf,
        #[arg(long)]
        eps: f64,
        /// Undersampling factor K.
        #[arg(long = "K", default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample even when the input is already small.
        #[arg(long)]
        force: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Approximate Schur complement onto the complement of --subset.
    Schur {
        matrix: PathBuf,
        /// Block indices to eliminate, one per line.
        #[arg(long)]
        subset: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Pick a subset whose principal submatrix is alpha-bDD.
    Subset {
        matrix: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip rows of more than twice the average degree.
        #[arg(long)]
        low_degree: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the smallest eps with A ~_eps B (dense, size-capped).
    Verify { a: PathBuf, b: PathBuf },
    /// CSV of build and solve times against n.
    Bench {
        #[arg(long, default_value = "band")]
        kind: GraphKind,
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        r: usize,
        #[arg(long, default_value_t = 1e-3)]
        pad: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct BuildStats {
    n: usize,
    r: usize,
    input_blocks: usize,
    depth: usize,
    terminal_n: usize,
    stored_blocks: usize,
    max_reduction: f64,
    build_seconds: f64,
    levels: Vec<LevelJson>,
}

#[derive(Serialize)]
struct LevelJson {
    n: usize,
    nnz_blocks: usize,
    eliminated: usize,
    epsilon: f64,
    subset_iterations: usize,
    schur_rounds: usize,
    sparsified: bool,
}

impl BuildStats {
    fn new(m: &BlockSparseMatrix, rep: &BuildReport, stored_blocks: usize, secs: f64) -> Self {
        BuildStats {
            n: m.n(),
            r: m.r(),
            input_blocks: m.nnz_blocks(),
            depth: rep.levels.len(),
            terminal_n: rep.terminal_n,
            stored_blocks,
            max_reduction: rep.max_reduction(),
            build_seconds: secs,
            levels: rep
                .levels
                .iter()
                .map(|l| LevelJson {
                    n: l.n,
                    nnz_blocks: l.nnz_blocks,
                    eliminated: l.f_len,
                    epsilon: l.epsilon,
                    subset_iterations: l.subset_iterations,
                    schur_rounds: l.schur_rounds,
                    sparsified: l.sparsified.as_ref().is_some_and(|s| !s.skipped),
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct SolveStats {
    n: usize,
    r: usize,
    method: &'static str,
    iterations: usize,
    residual: f64,
    history: Vec<f64>,
    solve_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    build: Option<BuildStats>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Write to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = std::io::stdout().lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn residual(m: &BlockSparseMatrix, x: &BlockVector, b: &BlockVector) -> Result<f64> {
    let bn = b.norm();
    let r = b.sub(&m.matvec(x)?).norm();
    Ok(if bn > 0.0 { r / bn } else { r })
}

fn converged(res: RefineResult, tol: f64) -> Result<RefineResult> {
    let last = res.history.last().copied().unwrap_or(0.0);
    if last > tol {
        return Err(Error::Divergence {
            iterations: res.iterations,
            last,
            history: res.history,
        });
    }
    Ok(res)
}

fn solver_factory(params: BuilderParams) -> Box<SolverFactory<'static>> {
    Box::new(move |m: &BlockSparseMatrix| -> Result<Box<dyn LinearOperator>> {
        let (chain, _) = recursive_construct_report(m, &params)?;
        Ok(Box::new(chain))
    })
}

struct Stats(Option<PathBuf>);

impl Stats {
    fn write(&self, v: &impl Serialize) -> Result<()> {
        let s = serde_json::to_string_pretty(v).expect("stats serialize");
        match &self.0 {
            Some(p) => std::fs::write(p, s + "\n")?,
            None => eprintln!("{s}"),
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let stats = Stats(cli.stats);
    match cli.cmd {
        Cmd::Generate {
            kind,
            n,
            r,
            seed,
            noise,
            laplacian,
            planted,
            out,
        } => {
            let inst = generate(kind, n, r, seed, noise)?;
            if laplacian {
                emit(out.as_deref(), |w| io::write_matrix(&inst.graph.laplacian(), w))?;
            } else {
                emit(out.as_deref(), |w| io::write_graph(&inst.graph, w))?;
            }
            if let Some(us) = &inst.planted {
                let side = planted.or_else(|| out.as_ref().map(|o| o.with_extension("planted")));
                if let Some(p) = side {
                    io::write_planted(us, r, create(&p)?)?;
                }
            }
            stats.write(&serde_json::json!({
                "n": n, "r": r, "edges": inst.graph.edges.len(), "seed": seed,
            }))
        }
        Cmd::Build { matrix, out, build } => {
            let m = io::load_matrix(&matrix)?;
            let t0 = Instant::now();
            let (chain, rep) = recursive_construct_report(&m, &build.params())?;
            let secs = t0.elapsed().as_secs_f64();
            let mut w = create(&out)?;
            io::write_chain(&chain, &mut w)?;
            w.flush()?;
            stats.write(&BuildStats::new(&m, &rep, chain.nnz_blocks(), secs))
        }
        Cmd::Solve {
            matrix,
            rhs,
            chain,
            tol,
            max_iters,
            pseudo,
            eps,
            mu,
            kappa,
            out,
            build,
        } => {
            let m = io::load_matrix(&matrix)?;
            let b = io::read_vector(open(&rhs)?, m.n(), m.r())?;
            let (mu, kappa) = if pseudo {
                match (mu, kappa) {
                    (Some(mu), Some(k)) => (mu, k),
                    _ => {
                        let d = DenseHermitian::from_sparse(&m)?;
                        (
                            mu.unwrap_or(min_nonzero_eig(&d)?),
                            kappa.unwrap_or(condition_number(&d)?),
                        )
                    }
                }
            } else {
                (0.0, 1.0)
            };
            // the chain preconditions M, or the shifted M + eps mu I for --pseudo
            let target = if pseudo { m.pad_identity(eps * mu) } else { m.clone() };
            let mut build_stats = None;
            let chain = match chain {
                Some(p) => io::read_chain(open(&p)?)?,
                None => {
                    let t0 = Instant::now();
                    let (c, rep) = recursive_construct_report(&target, &build.params())?;
                    build_stats = Some(BuildStats::new(
                        &target,
                        &rep,
                        c.nnz_blocks(),
                        t0.elapsed().as_secs_f64(),
                    ));
                    c
                }
            };
            if chain.n() != m.n() || chain.r() != m.r() {
                return Err(Error::Dimension {
                    expected: m.n() * m.r(),
                    got: chain.n() * chain.r(),
                });
            }
            let t0 = Instant::now();
            let (x, iterations, history, method) = if pseudo {
                let z = IterativeSolver {
                    m: &target,
                    precond: &chain,
                    tol: pseudo_delta(eps, kappa)?,
                    max_iters: 10_000,
                };
                (pseudo_apply(&m, &z, &b, eps, kappa)?, 0, Vec::new(), "pseudo")
            } else {
                let res = converged(refine(&chain, &m, &b, tol, max_iters)?, tol)?;
                (res.x, res.iterations, res.history, "refine")
            };
            let secs = t0.elapsed().as_secs_f64();
            emit(out.as_deref(), |w| io::write_vector(&x, w))?;
            stats.write(&SolveStats {
                n: m.n(),
                r: m.r(),
                method,
                iterations,
                residual: residual(&m, &x, &b)?,
                history,
                solve_seconds: secs,
                build: build_stats,
            })
        }
        Cmd::Factor { matrix, out, build } => {
            let m = io::load_matrix(&matrix)?;
            let t0 = Instant::now();
            let (f, rep) = decompose_report(&m, &build.params())?;
            let secs = t0.elapsed().as_secs_f64();
            let mut w = create(&out)?;
            io::write_udu(&f, &mut w)?;
            w.flush()?;
            stats.write(&BuildStats::new(&m, &rep, f.nnz_blocks(), secs))
        }
        Cmd::UduSolve {
            factorization,
            rhs,
            matrix,
            tol,
            max_iters,
            out,
        } => {
            let f = io::read_udu(open(&factorization)?)?;
            let b = io::read_vector(open(&rhs)?, f.n, f.r)?;
            let t0 = Instant::now();
            let (x, iterations, history, res, method) = match matrix {
                Some(p) => {
                    let m = io::load_matrix(&p)?;
                    let r = converged(refine(&f, &m, &b, tol, max_iters)?, tol)?;
                    let rr = residual(&m, &r.x, &b)?;
                    (r.x, r.iterations, r.history, rr, "refine")
                }
                None => (udu_solve(&f, &b)?, 1, Vec::new(), f64::NAN, "direct"),
            };
            let secs = t0.elapsed().as_secs_f64();
            emit(out.as_deref(), |w| io::write_vector(&x, w))?;
            stats.write(&serde_json::json!({
                "n": f.n, "r": f.r, "method": method, "iterations": iterations,
                "residual": if res.is_nan() { None } else { Some(res) },
                "history": history, "solve_seconds": secs,
            }))
        }
        Cmd::Sparsify {
            matrix,
            eps,
            k,
            seed,
            force,
            out,
        } => {
            let m = io::load_matrix(&matrix)?;
            let factory = solver_factory(BuilderParams::default().with_seed(seed));
            let opts = SparsifyOptions {
                force,
                ..SparsifyOptions::default()
            };
            let (s, rep) = sparsify_report(&m, eps, k, factory.as_ref(), seed, &opts)?;
            io::write_matrix(&s, create(&out)?)?;
            stats.write(&serde_json::json!({
                "n": m.n(), "r": m.r(), "input_blocks": m.nnz_blocks(), "output_blocks": s.nnz_blocks(),
                "skipped": rep.skipped, "input_columns": rep.input_columns,
                "sample_columns": rep.sample_columns, "output_columns": rep.output_columns,
                "tau_sum": rep.tau_sum,
            }))
        }
        Cmd::Schur {
            matrix,
            subset,
            eps,
            alpha,
            seed,
            out,
        } => {
            let m = io::load_matrix(&matrix)?;
            let f = io::read_indices(open(&subset)?, m.n())?;
            let (c, _) = complement(m.n(), &f)?;
            let (s, rep) = approx_schur_report(&m, &f, &SchurParams::new(alpha, eps, seed)?)?;
            io::write_matrix(&s, create(&out)?)?;
            stats.write(&serde_json::json!({
                "n": m.n(), "r": m.r(), "eliminated": f.len(), "kept": c,
                "rounds": rep.rounds, "final_alpha": rep.final_alpha, "output_blocks": rep.nnz_blocks,
            }))
        }
        Cmd::Subset {
            matrix,
            alpha,
            seed,
            low_degree,
            out,
        } => {
            let m = io::load_matrix(&matrix)?;
            let s = if low_degree {
                bdd_subset_low_degree(&m, alpha, seed)?
            } else {
                bdd_subset(&m, alpha, seed)?
            };
            emit(out.as_deref(), |w| io::write_indices(&s.f, w))?;
            stats.write(&serde_json::json!({
                "n": m.n(), "selected": s.f.len(), "iterations": s.iterations, "seed": s.seed,
            }))
        }
        Cmd::Verify { a, b } => {
            let a = DenseHermitian::from_sparse(&io::load_matrix(&a)?)?;
            let b = DenseHermitian::from_sparse(&io::load_matrix(&b)?)?;
            let e = approx_epsilon_on_range(&a, &b)?;
            println!("{e:?}");
            Ok(())
        }
        Cmd::Bench {
            kind,
            sizes,
            r,
            pad,
            seed,
        } => {
            println!("kind,n,r,nnz_blocks,depth,stored_blocks,build_s,solve_s,iterations,residual");
            for n in sizes {
                let m = generate(kind, n, r, seed, 0.0)?.graph.laplacian().pad_identity(pad);
                let t0 = Instant::now();
                let (chain, rep) = recursive_construct_report(&m, &BuilderParams::default().with_seed(seed))?;
                let build_s = t0.elapsed().as_secs_f64();
                let b = BlockVector::from_vec(
                    n,
                    r,
                    (0..n * r)
                        .map(|k| bddsolve::C64::new(((k * 7919) % 101) as f64 - 50.0, 0.0))
                        .collect(),
                )?;
                let t1 = Instant::now();
                let res = refine(&chain, &m, &b, 1e-8, 200)?;
                let solve_s = t1.elapsed().as_secs_f64();
                println!(
                    "{kind:?},{n},{r},{},{},{},{build_s:.4},{solve_s:.4},{},{:e}",
                    m.nnz_blocks(),
                    rep.levels.len(),
                    chain.nnz_blocks(),
                    res.iterations,
                    res.history.last().copied().unwrap_or(0.0)
                );
            }
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        Category::Parse => 2,
        Category::Precondition => 3,
        Category::Numerical => 4,
        Category::SizeCap => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
