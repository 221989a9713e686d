use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use smpflow::orbit::{orbit, write_csv, CLOSURE_TOL};
use smpflow::sample::{seeded_operator, SampleConfig};
use smpflow::uniformization::{w_along_segment, UniformizationReport};
use smpflow::verify::{run, Suite};
use smpflow::{
    band_endpoints, build_periodic_smp, curve_solve_p1, extract_jacobi, flow_iterate,
    group_multiplier, magic_residual, CurveParams, CurvePoint, Execution, SmpOperator,
    Tolerances, TwoIntervalSet,
};

#[derive(Parser)]
#[command(name = "smpflow", version, about = "Jacobi flow on SMP matrices for two-interval sets")]
struct Cli {
    #[command(flatten)]
    tol: TolArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TolArgs {
    /// Relative tolerance for points on the isospectral curve
    #[arg(long, global = true)]
    tol_curve: Option<f64>,
    /// Agreement required between padded inverse extractions
    #[arg(long, global = true)]
    tol_inv: Option<f64>,
    /// Initial padding of truncated solves
    #[arg(long, global = true)]
    pad: Option<usize>,
}

impl TolArgs {
    fn resolve(&self) -> Tolerances {
        let mut t = Tolerances::default();
        if let Some(v) = self.tol_curve {
            t.curve = v;
        }
        if let Some(v) = self.tol_inv {
            t.inv = v;
        }
        if let Some(v) = self.pad {
            t.pad = v;
        }
        t
    }
}

#[derive(Args)]
struct Params {
    #[arg(long, allow_hyphen_values = true)]
    a: f64,
    #[arg(long, allow_hyphen_values = true)]
    b: f64,
}

impl Params {
    fn curve(&self) -> Result<CurveParams> {
        Ok(CurveParams::new(self.a, self.b)?)
    }
}

#[derive(Args)]
struct Point {
    #[arg(long, allow_hyphen_values = true)]
    p0: f64,
    /// Defaults to the larger root of the curve equation at `p0`
    #[arg(long, allow_hyphen_values = true)]
    p1: Option<f64>,
}

impl Point {
    fn on(&self, c: &CurveParams) -> Result<CurvePoint> {
        let p1 = match self.p1 {
            Some(v) => v,
            None => match curve_solve_p1(c, self.p0).last() {
                Some(v) => *v,
                None => bail!("no curve point with p0 = {}", self.p0),
            },
        };
        Ok(CurvePoint::new(self.p0, p1))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Band edges of E as JSON
    Endpoints {
        #[command(flatten)]
        params: Params,
    },
    /// Period-two operator at a curve point
    Periodic {
        #[command(flatten)]
        params: Params,
        #[command(flatten)]
        point: Point,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random eventually-periodic operator
    Random {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Orbit of the curve map as CSV; closure diagnosis on stderr
    Orbit {
        #[command(flatten)]
        params: Params,
        #[command(flatten)]
        point: Point,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Applies the flow `k` times (backwards for negative `k`)
    Flow {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        k: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Jacobi coefficients a_k, b_k for k in [k_lo, k_hi]
    ExtractJacobi {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, allow_hyphen_values = true, default_value_t = -10)]
        k_lo: i64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 10)]
        k_hi: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Killip-Simon functionals as JSON
    Ks {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Residual of the magic formula on an n-window
    Magic {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 400)]
        n: usize,
    },
    /// Randomized invariant suites
    Verify {
        /// Suite to run; repeat for several, all suites when omitted
        #[arg(long)]
        suite: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        sequential: bool,
    },
    /// Multiplier rho and optionally w(z) along a segment
    Uniformize {
        #[arg(long, allow_hyphen_values = true)]
        a: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        b: Option<f64>,
        /// Explicit set as b0,a1,b1,a0
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        set: Option<Vec<f64>>,
        /// Segment start as re,im
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        /// Segment end as re,im
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// CSV file for w along the segment
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Ok,
    VerifyFailed,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut s = io::stdout().lock();
            s.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                s.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn load_operator(path: &Path, tol: &Tolerances) -> Result<SmpOperator> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SmpOperator::from_json_with(&text, tol.curve)?)
}

fn complex(v: &[f64]) -> Result<Complex64> {
    match v {
        [re, im] => Ok(Complex64::new(*re, *im)),
        _ => bail!("expected re,im, got {} values", v.len()),
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    let tol = cli.tol.resolve();
    match cli.command {
        Command::Endpoints { params } => {
            let set = band_endpoints(&params.curve()?);
            emit(None, &serde_json::to_string_pretty(&set)?)?;
        }
        Command::Periodic { params, point, out } => {
            let c = params.curve()?;
            let op = build_periodic_smp(&c, &point.on(&c)?, &tol)?;
            emit(out.as_deref(), &op.to_json())?;
        }
        Command::Random { seed, out } => {
            let op = seeded_operator(&SampleConfig::default(), &tol, seed)?;
            emit(out.as_deref(), &op.to_json())?;
        }
        Command::Orbit {
            params,
            point,
            n,
            out,
        } => {
            let c = params.curve()?;
            let o = orbit(&c, &point.on(&c)?, n, CLOSURE_TOL, tol.curve)?;
            match out {
                Some(p) => {
                    let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    write_csv(&o, f)?;
                }
                None => write_csv(&o, io::stdout().lock())?,
            }
            eprintln!("{}", o.closure);
        }
        Command::Flow { input, k, out } => {
            let op = load_operator(&input, &tol)?;
            let moved = flow_iterate(&op, k, &tol)?;
            emit(out.as_deref(), &moved.to_json())?;
        }
        Command::ExtractJacobi {
            input,
            k_lo,
            k_hi,
            out,
        } => {
            let op = load_operator(&input, &tol)?;
            let j = extract_jacobi(&op, k_lo, k_hi, &tol)?;
            emit(out.as_deref(), &j.to_json())?;
        }
        Command::Ks { input } => {
            let op = load_operator(&input, &tol)?;
            let r = smpflow::ks::report(&op, &tol)?;
            emit(None, &serde_json::to_string_pretty(&r)?)?;
        }
        Command::Magic { input, n } => {
            let op = load_operator(&input, &tol)?;
            let residual = magic_residual(&op, n, &tol)?;
            let json = serde_json::json!({ "residual": residual, "window": n });
            emit(None, &serde_json::to_string_pretty(&json)?)?;
        }
        Command::Verify {
            suite,
            seed,
            sequential,
        } => {
            let suites = if suite.is_empty() {
                Suite::ALL.to_vec()
            } else {
                suite.iter().map(|s| s.parse()).collect::<smpflow::Result<Vec<Suite>>>()?
            };
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let report = run(&suites, seed, exec, &tol);
            println!("{report}");
            if !report.passed() {
                return Ok(Outcome::VerifyFailed);
            }
        }
        Command::Uniformize {
            a,
            b,
            set,
            from,
            to,
            n,
            out,
        } => {
            let set = match (set, a, b) {
                (Some(v), None, None) => match v[..] {
                    [b0, a1, b1, a0] => TwoIntervalSet::new(b0, a1, b1, a0)?,
                    _ => bail!("--set takes four values b0,a1,b1,a0"),
                },
                (None, Some(a), Some(b)) => band_endpoints(&CurveParams::new(a, b)?),
                _ => bail!("give either --a and --b, or --set b0,a1,b1,a0"),
            };
            let data = group_multiplier(&set)?;
            emit(None, &serde_json::to_string_pretty(&UniformizationReport::from(&data))?)?;
            match (from, to) {
                (Some(f), Some(t)) => {
                    let rows = w_along_segment(&set, complex(&f)?, complex(&t)?, n)?;
                    let mut csv = String::from("re_z,im_z,re_w,im_w\n");
                    for (z, w) in rows {
                        csv.push_str(&format!("{},{},{},{}\n", z.re, z.im, w.re, w.im));
                    }
                    emit(out.as_deref(), &csv)?;
                }
                (None, None) => {}
                _ => bail!("--from and --to must be given together"),
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
