use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hml_core::mesh::{write_csv, write_field};
use hml_core::oracle::{beta0, curvature_sweep, potential_1d, reference_potential};
use hml_core::{estimate_lambda, solve_potential, Domain, GridSpec, SearchMode, SearchOptions, SolveOptions};
use hml_lab::config::{validate_config, ExperimentConfig, Reference};
use hml_lab::presets::{preset, PresetArgs};
use hml_lab::report::emit_report;
use hml_lab::run::{reference_probe, run_experiment, CANDIDATE_CELLS};

#[derive(Parser)]
#[command(name = "hml", version, about = "Hardy-Morrey constant experiments on grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config and emit its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the JSON path of the config.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Print static findings for a config.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a ready-made config.
    Preset {
        name: String,
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long)]
        depth: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate lambda on one domain.
    Lambda {
        /// Domain as JSON.
        #[arg(long)]
        domain: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        #[arg(long)]
        h: f64,
        #[arg(long, value_enum, default_value_t = Search::Lattice)]
        search: Search,
        /// Ray origin for radial search, `x,y`; the box centre by default.
        #[arg(long, value_delimiter = ',')]
        origin: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "1,0")]
        direction: Vec<f64>,
        /// Grid box `lo_1,..,lo_n,hi_1,..,hi_n`; the domain's bounding box by default.
        #[arg(long = "box", value_delimiter = ',')]
        bbox: Option<Vec<f64>>,
        /// Also estimate the punctured and half-plane references at this truncation radius.
        #[arg(long)]
        bracket: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the potential with its singularity at `y`.
    SolvePotential {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        h: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
        bbox: Option<Vec<f64>>,
        /// Binary field output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Closed-form and semi-analytic reference values.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    Radial,
    Lattice,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Decay exponent of the half-plane potential.
    Beta0 {
        #[arg(long)]
        p: f64,
    },
    /// Potential on an interval; `inf` is accepted for either end.
    Oned {
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        y: f64,
        #[arg(long)]
        p: f64,
    },
    /// Scaled competitor energies against the flat energy.
    Curvature {
        #[arg(long, allow_hyphen_values = true, default_value_t = -0.5)]
        k: f64,
        /// `start:end:/factor` or a comma separated list.
        #[arg(long, default_value = "0.1:0.0125:/2")]
        eps_sweep: String,
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        #[arg(long, default_value_t = 16.0)]
        radius: f64,
        #[arg(long, default_value_t = 0.0625)]
        h: f64,
    },
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("HML_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

fn write_out(out: &Option<PathBuf>, s: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, s).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{s}");
            Ok(())
        }
    }
}

fn grid_box(domain: &Domain, bbox: Option<Vec<f64>>) -> Result<(Vec<f64>, Vec<f64>)> {
    match bbox {
        Some(b) => {
            if b.len() != 2 * domain.dim() {
                bail!("--box needs {} numbers", 2 * domain.dim());
            }
            let n = domain.dim();
            Ok((b[..n].to_vec(), b[n..].to_vec()))
        }
        None => domain.bounding_box().context("unbounded domain: pass --box"),
    }
}

/// `start:end:/factor` (geometric) or `a,b,c`.
fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let start: f64 = parts[0].parse()?;
        let end: f64 = parts[1].parse()?;
        let f: f64 = parts[2].strip_prefix('/').context("step must look like /2")?.parse()?;
        if !(f > 1.0 && start >= end && end > 0.0) {
            bail!("need start >= end > 0 and factor > 1");
        }
        let mut v = vec![start];
        while *v.last().unwrap() / f >= end * (1.0 - 1e-12) {
            let next = v.last().unwrap() / f;
            v.push(next);
        }
        Ok(v)
    } else {
        s.split(',').map(|x| x.trim().parse::<f64>().map_err(Into::into)).collect()
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, json, csv, svg } => {
            let mut cfg: ExperimentConfig = read_json(&config)?;
            if json.is_some() {
                cfg.outputs.json = json;
            }
            if csv.is_some() {
                cfg.outputs.csv = csv;
            }
            if svg.is_some() {
                cfg.outputs.svg = svg;
            }
            let report = run_experiment(&cfg)?;
            emit_report(&report, &cfg.outputs)?;
            for r in &report.rows {
                if let Some(e) = &r.error {
                    eprintln!("row {}: {e}", r.label);
                }
            }
            for v in &report.verdicts {
                println!("{} {} [{}] {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.anchor, v.detail);
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Cmd::Validate { config } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let findings = validate_config(&cfg);
            for f in &findings {
                println!("{f}");
            }
            Ok(if findings.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Cmd::Preset { name, phi, depth, out } => {
            let cfg = preset(&name, PresetArgs { phi, depth })?;
            write_out(&out, &serde_json::to_string_pretty(&cfg)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Lambda { domain, p, h, search, origin, direction, bbox, bracket, out } => {
            let dom: Domain = read_json(&domain)?;
            let (lo, hi) = grid_box(&dom, bbox)?;
            let mode = match search {
                Search::Lattice => SearchMode::Lattice,
                Search::Radial => SearchMode::Ray {
                    origin: origin.unwrap_or_else(|| lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()),
                    direction,
                },
            };
            let mut opts = SearchOptions { mode, min_cells: CANDIDATE_CELLS, ..Default::default() };
            if let Some(r) = bracket {
                let mut refs = [0.0; 2];
                for (slot, which) in [Reference::PuncturedPlane, Reference::HalfPlane].into_iter().enumerate() {
                    let pr = reference_probe(which, r)?;
                    let g = GridSpec::covering(&pr.lo, &pr.hi, h)?;
                    refs[slot] = estimate_lambda(&pr.domain, &g, p, &SearchOptions { mode: pr.mode, ..opts.clone() })?.value;
                }
                opts.bracket = Some(refs);
            }
            let grid = GridSpec::covering(&lo, &hi, h)?;
            let est = estimate_lambda(&dom, &grid, p, &opts)?;
            eprintln!("lambda = {:.6} at {:?}", est.value, est.minimizer);
            write_out(&out, &serde_json::to_string_pretty(&est)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::SolvePotential { domain, h, y, p, bbox, out, csv } => {
            let dom: Domain = read_json(&domain)?;
            let (lo, hi) = grid_box(&dom, bbox)?;
            let grid = GridSpec::covering(&lo, &hi, h)?;
            let sol = solve_potential(&dom, &grid, &y, p, &SolveOptions::default())?;
            write_field(&out, &sol.w)?;
            if let Some(c) = csv {
                write_csv(fs::File::create(&c)?, &sol.w)?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "y": sol.y,
                    "energy": sol.energy,
                    "scaled_energy": sol.scaled_energy(),
                    "converged": sol.converged,
                    "iterations": sol.report.iterations,
                })
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Oracle { which } => {
            match which {
                OracleCmd::Beta0 { p } => println!("{}", serde_json::json!({ "p": p, "beta0": beta0(p) })),
                OracleCmd::Oned { a, b, y, p } => println!("{}", serde_json::to_string_pretty(&potential_1d(a, b, y, p)?)?),
                OracleCmd::Curvature { k, eps_sweep, p, radius, h } => {
                    let eps = parse_sweep(&eps_sweep)?;
                    let u0 = reference_potential(p, radius, h)?;
                    let pts = curvature_sweep(k, &eps, u0.clone())?;
                    let rows: Vec<_> = pts.iter().map(|(e, v)| serde_json::json!({ "eps": e, "scaled_energy": v, "drop": v - u0.energy })).collect();
                    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "k": k, "flat_energy": u0.energy, "sweep": rows }))?);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_sweep;

    #[test]
    fn sweeps() {
        assert_eq!(parse_sweep("0.1:0.0125:/2").unwrap(), vec![0.1, 0.05, 0.025, 0.0125]);
        assert_eq!(parse_sweep("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_sweep("0.1:0.2:/2").is_err());
    }
}
