//! Benchmark CLI: simulate trajectories, run filters, estimate
//! mean-time-to-lose-lock, and merge reports across noise levels.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use mtll::bench::{compare_report, run_mtll_experiment, ExperimentConfig, MtllReport};
use mtll::mne::run_mne_filter;
use mtll::sde::{simulate_pair, write_path_csv, TimeGrid};
use mtll::trackers::{Ekf, Pll};
use mtll::{CausalFilter, MtllError};

#[derive(Parser)]
#[command(name = "mtll", version, about = "Loss-of-lock benchmarks for nonlinear trackers")]
struct Cli {
    /// Experiment configuration file (sectioned key=value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the campaign base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (affects speed only, never results). 0 = all cores.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit one simulated (x, dy) pair as CSV.
    Simulate,
    /// Run one causal filter over a CSV observation record, emit the
    /// estimate path.
    Filter {
        /// Input CSV with columns t,x,dy (x may be empty).
        #[arg(long)]
        input: PathBuf,
        /// Filter to run: mne | ekf | pll.
        #[arg(long)]
        kind: String,
    },
    /// Run the full MTLL campaign from the config file.
    Mtll,
    /// Merge campaign reports from an eps sweep into a comparison summary.
    Compare {
        /// Report JSON files (repeatable).
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            // machine-readable error record
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "command": std::env::args().collect::<Vec<_>>() })
            );
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: &Cli) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let run = || -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        fs::create_dir_all(&cli.out)?;
        match &cli.cmd {
            Cmd::Simulate => cmd_simulate(cli),
            Cmd::Filter { input, kind } => cmd_filter(cli, input, kind),
            Cmd::Mtll => cmd_mtll(cli),
            Cmd::Compare { reports } => cmd_compare(cli, reports),
        }
    };
    if cli.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build()?;
        pool.install(run)
    } else {
        run()
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, MtllError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let cfg = ExperimentConfig::default();
            cfg.validate()?;
            cfg
        }
    };
    if let Some(seed) = cli.seed {
        cfg.campaign.seed = seed;
    }
    Ok(cfg)
}

fn cmd_simulate(cli: &Cli) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let cfg = load_config(cli)?;
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let path = simulate_pair(&model, grid, cfg.campaign.x0, cfg.campaign.seed)?;
    let file = cli.out.join("path.csv");
    let mut buf = Vec::new();
    write_path_csv(&path, &mut buf)?;
    fs::write(&file, buf)?;
    println!("wrote {}", file.display());
    Ok(())
}

fn read_observations(path: &Path) -> Result<(Vec<f64>, Vec<f64>), MtllError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| MtllError::Config(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let t_col = cols.iter().position(|&c| c == "t");
    let dy_col = cols.iter().position(|&c| c == "dy");
    let (t_col, dy_col) = t_col.zip(dy_col).ok_or_else(|| {
        MtllError::Config(format!("{}: header must contain t and dy columns", path.display()))
    })?;
    let mut ts = Vec::new();
    let mut dys = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |i: usize| -> Result<Option<f64>, MtllError> {
            match fields.get(i) {
                None | Some(&"") => Ok(None),
                Some(s) => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| MtllError::Config(format!("{}:{}: {e}", path.display(), ln + 2))),
            }
        };
        if let Some(t) = parse(t_col)? {
            ts.push(t);
        }
        if let Some(dy) = parse(dy_col)? {
            dys.push(dy);
        }
    }
    if ts.len() < 2 {
        return Err(MtllError::Config(format!("{}: need at least two rows", path.display())));
    }
    Ok((ts, dys))
}

fn cmd_filter(cli: &Cli, input: &Path, kind: &str) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let cfg = load_config(cli)?;
    let model = cfg.build_model()?;
    let (ts, dys) = read_observations(input)?;
    let dt = ts[1] - ts[0];
    let grid = TimeGrid::new(dt, dys.len())?;
    let x0 = cfg.campaign.x0;

    let estimates: Vec<f64> = match kind {
        "mne" => run_mne_filter(&model, grid, &dys, &cfg.lattice_config(), x0)?,
        "ekf" => stream(Ekf::new(model, x0, cfg.campaign.ekf_p0)?, grid, &dys)?,
        "pll" => stream(Pll::new(model, x0, cfg.campaign.pll_gain)?, grid, &dys)?,
        other => {
            return Err(Box::new(MtllError::Config(format!(
                "unknown filter {other:?} (expected mne, ekf, or pll)"
            ))))
        }
    };

    let file = cli.out.join("estimate.csv");
    let mut buf = String::from("t,xhat\n");
    for (i, xh) in estimates.iter().enumerate() {
        buf.push_str(&format!("{},{}\n", grid.t(i), xh));
    }
    fs::write(&file, buf)?;
    println!("wrote {}", file.display());
    Ok(())
}

fn stream(
    mut filter: impl CausalFilter,
    grid: TimeGrid,
    dys: &[f64],
) -> Result<Vec<f64>, MtllError> {
    let mut out = Vec::with_capacity(dys.len() + 1);
    out.push(filter.estimate());
    for (k, &dy) in dys.iter().enumerate() {
        out.push(filter.step(dy, grid.t(k), grid.dt)?);
    }
    Ok(out)
}

fn cmd_mtll(cli: &Cli) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let cfg = load_config(cli)?;
    match run_mtll_experiment(&cfg) {
        Ok(report) => {
            let file = cli.out.join("report.json");
            fs::write(&file, report.json()?)?;
            println!("wrote {}", file.display());
            for f in &report.filters {
                println!(
                    "{:<20} MTLL {:>12.4}  se {:>10.4}  censored {:>5.1}%",
                    f.kind.label(),
                    f.mtll,
                    f.std_error,
                    100.0 * f.censoring_fraction
                );
            }
            Ok(())
        }
        Err(failure) => {
            if let Some(partial) = &failure.partial {
                let file = cli.out.join("partial.json");
                fs::write(&file, partial.json()?)?;
                eprintln!("partial results written to {}", file.display());
            }
            Err(Box::new(failure))
        }
    }
}

fn cmd_compare(cli: &Cli, reports: &[PathBuf]) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let mut entries = Vec::new();
    for path in reports {
        let report: MtllReport = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| MtllError::Config(format!("{}: {e}", path.display())))?;
        entries.push((report.metadata.eps, report));
    }
    let summary = compare_report(&entries)?;
    let file = cli.out.join("compare.json");
    fs::write(&file, summary.json()?)?;
    println!("wrote {}", file.display());
    for s in &summary.scalings {
        println!(
            "{:<20} log-MTLL vs 1/eps^2: slope {:.4}, R^2 {:.4}",
            format!("{:?}", s.kind).to_lowercase(),
            s.slope,
            s.r_squared
        );
    }
    for r in &summary.ratios {
        let fmt = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.3}"));
        println!(
            "eps {:>5}: MNE/PLL {}  MNE/EKF {}",
            r.eps,
            fmt(r.mne_over_pll),
            fmt(r.mne_over_ekf)
        );
    }
    Ok(())
}
