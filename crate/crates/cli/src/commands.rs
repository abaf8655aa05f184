use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ncdoa::estimators::Pipeline;
use ncdoa::experiment::presets::{preset_source, PRESET_NAMES};
use ncdoa::experiment::runner::point_crb;
use ncdoa::experiment::{run_monte_carlo, to_csv, RunOptions, Scenario, ScenarioConfig};
use ncdoa::identifiability::{corollary_bound, lag_union, max_identifiable, numeric_kruskal_rank, KruskalOptions};
use ncdoa::{CovarianceSet, Error};

use crate::{Command, OutArgs, ScenarioArgs};

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Identifiability { scenario, probes } => identifiability(&scenario, probes),
        Command::Crb { scenario, out } => crb(&scenario, &out),
        Command::Estimate {
            input,
            preset,
            geometry,
            sources,
            seed,
            save_covariances,
            spectrum,
        } => estimate(EstimateArgs {
            input,
            preset,
            geometry,
            sources,
            seed,
            save_covariances,
            spectrum,
        }),
        Command::Montecarlo { scenario, out, threads } => montecarlo(&scenario, &out, threads),
        Command::Presets { name } => presets(name.as_deref()),
    }
}

fn read_config(path: Option<&Path>, preset: Option<&str>) -> CliResult<ScenarioConfig> {
    let text = match (path, preset) {
        (Some(p), _) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        (None, Some(name)) => preset_source(name)
            .ok_or_else(|| format!("unknown preset `{name}`; available: {}", PRESET_NAMES.join(", ")))?
            .to_string(),
        (None, None) => return Err("give a scenario file or --preset".into()),
    };
    Ok(ScenarioConfig::from_toml(&text)?)
}

fn load(args: &ScenarioArgs) -> CliResult<Scenario> {
    let mut cfg = read_config(args.config.as_deref(), args.preset.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    Ok(cfg.build()?)
}

fn open_out(out: &OutArgs) -> CliResult<Box<dyn Write>> {
    Ok(match &out.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn identifiability(args: &ScenarioArgs, probes: Option<usize>) -> CliResult<()> {
    let sc = load(args)?;
    let array = &sc.array;
    let opts = KruskalOptions {
        trials: probes.or(args.trials).unwrap_or(KruskalOptions::default().trials),
        seed: args.seed.unwrap_or(0),
        ..Default::default()
    };
    let est = numeric_kruskal_rank(array, &opts);
    let lags = lag_union(array).len();
    let bound = corollary_bound(array);
    let max_l = max_identifiable(est.rank);
    println!("subarrays            {}", array.num_subarrays());
    println!("sensors              {}", array.total_sensors());
    println!("co-array rows        {}", array.co_array_len());
    println!("distinct lags        {lags}");
    println!("corollary bound      {bound}");
    println!("kruskal rank (est.)  {}", est.rank);
    println!("identifiable up to   {max_l}");
    let rates: Vec<String> = est.pass_rates.iter().map(|(m, r)| format!("{m}:{r:.2}")).collect();
    println!("probe pass rates     {}", rates.join(" "));
    let mut ls: Vec<usize> = sc.points.iter().map(|p| p.doas.len()).collect();
    ls.dedup();
    for l in ls {
        let verdict = if l <= max_l { "identifiable" } else { "beyond the guarantee" };
        println!("L = {l:<17} {verdict}");
    }
    Ok(())
}

fn crb(args: &ScenarioArgs, out: &OutArgs) -> CliResult<()> {
    let sc = load(args)?;
    let mut w = open_out(out)?;
    writeln!(w, "sweep,snr_db,snapshots,epsilon,sources,crb_deg,crb_doa_deg")?;
    for p in &sc.points {
        let (summary, per) = match point_crb(&sc, p)? {
            Some(c) => (
                format!("{:.6}", c.summary_deg()),
                c.bounds_deg().iter().map(|b| format!("{b:.6}")).collect::<Vec<_>>().join(";"),
            ),
            None => ("nan".into(), "nan".into()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{summary},{per}",
            p.value,
            p.snr_db,
            p.snapshots,
            p.epsilon,
            p.doas.len()
        )?;
    }
    w.flush()?;
    Ok(())
}

struct EstimateArgs {
    input: Option<PathBuf>,
    preset: Option<String>,
    geometry: Option<PathBuf>,
    sources: Option<usize>,
    seed: Option<u64>,
    save_covariances: Option<PathBuf>,
    spectrum: Option<PathBuf>,
}

fn is_covariance_file(path: &Path) -> CliResult<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text.trim_start().starts_with("ncdoa-covariance"))
}

fn estimate(args: EstimateArgs) -> CliResult<()> {
    let covariance_input = match &args.input {
        Some(p) => is_covariance_file(p)?,
        None => false,
    };
    let (sc, covs, truth) = if covariance_input {
        let path = args.input.as_deref().expect("checked above");
        let geometry = args
            .geometry
            .as_deref()
            .ok_or("a covariance file needs --geometry <scenario>")?;
        let sc = read_config(Some(geometry), None)?.build()?;
        let covs = CovarianceSet::read_from(BufReader::new(File::open(path)?))?;
        covs.check_against(&sc.array)?;
        (sc, covs, None)
    } else {
        let mut cfg = read_config(args.input.as_deref(), args.preset.as_deref())?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        let sc = cfg.build()?;
        let p = &sc.points[0];
        let covs = CovarianceSet::simulate(&sc.array, &p.source_model()?, &p.noise_model()?, p.snapshots, sc.seed, sc.shared_sources)?;
        let truth = p.doas.clone();
        (sc, covs, Some(truth))
    };
    if let Some(path) = &args.save_covariances {
        let mut w = BufWriter::new(File::create(path)?);
        covs.write_to(&mut w)?;
        w.flush()?;
    }
    let sources = args
        .sources
        .or(truth.as_ref().map(|t| t.len()))
        .unwrap_or(sc.points[0].doas.len());
    let snapshots = covs.snapshots().unwrap_or(sc.points[0].snapshots) as f64;
    let pipeline = Pipeline::new(&sc.array, &sc.grid);
    let start = Instant::now();
    let (spice, estimates) = pipeline.run_with_spectrum(&sc.array, &covs, snapshots, sources, &sc.estimators)?;
    log::info!("estimators finished in {:.3} s", start.elapsed().as_secs_f64());
    if let Some(t) = &truth {
        println!("{:<16}{}", "truth", fmt_deg(t));
    }
    for e in &estimates {
        let flag = if e.converged { "" } else { "  (not converged)" };
        println!("{:<16}{}{flag}", e.kind.name(), fmt_deg(&e.doas));
    }
    if let Some(path) = &args.spectrum {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "doa_deg,power")?;
        for (d, p) in sc.grid.degrees().iter().zip(&spice.powers) {
            writeln!(w, "{d},{p:e}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn fmt_deg(doas: &[f64]) -> String {
    doas.iter().map(|d| format!("{:9.4}", d.to_degrees())).collect::<Vec<_>>().join(" ")
}

fn montecarlo(args: &ScenarioArgs, out: &OutArgs, threads: Option<usize>) -> CliResult<()> {
    let sc = load(args)?;
    let start = Instant::now();
    let records = run_monte_carlo(&sc, &RunOptions { threads })?;
    log::info!("{} points in {:.1} s", sc.points.len(), start.elapsed().as_secs_f64());
    let mut w = open_out(out)?;
    w.write_all(to_csv(&records).as_bytes())?;
    w.flush()?;
    Ok(())
}

fn presets(name: Option<&str>) -> CliResult<()> {
    match name {
        None => {
            for n in PRESET_NAMES {
                println!("{n}");
            }
            Ok(())
        }
        Some(n) => {
            let text = preset_source(n).ok_or_else(|| Error::Config(format!("unknown preset `{n}`")))?;
            print!("{text}");
            Ok(())
        }
    }
}
