//! `eda-lab`: command-line front end for the eda-core library.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eda_core::calibrate::{calibrate_exact, calibrate_stochastic, StochasticOptions};
use eda_core::experiment::{emit_plotdata, run_experiment, Design, ExperimentConfig};
use eda_core::infsim::simulate_r;
use eda_core::oracle::{enumerate_states, oracle_report};
use eda_core::simconfig::SimulationConfig;
use eda_core::stats::{NodeAttributes, Term};
use eda_core::tergm::simulate_tergm;
use eda_core::transforms::{crossover_threshold, equilibrium_edge_prob, relative_error, transform, Variant};
use eda_core::{Constraint, DurationSpec, Model};
use serde_json::json;

#[derive(Parser)]
#[command(name = "eda-lab", version, about = "Edges dissolution approximation experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for experiments.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Copy, Clone, ValueEnum)]
enum VariantArg {
    Old,
    New,
    Exact,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Old => Variant::Old,
            VariantArg::New => Variant::New,
            VariantArg::Exact => Variant::Exact,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ConfigKind {
    Simulation,
    Experiment,
}

#[derive(Subcommand)]
enum Command {
    /// Formation and dissolution coefficients for one cross-sectional coefficient.
    Transform {
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long)]
        duration: f64,
        #[arg(long, value_enum)]
        variant: VariantArg,
    },
    /// Closed-form relative errors of the old and new approximations over p.
    ErrorTable {
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Discrete-time tergm run from a TOML config.
    SimulateTergm {
        #[arg(long)]
        config: PathBuf,
    },
    /// Infinitesimal-time chain R from a TOML config.
    SimulateR {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact transition matrices and certificates on a small state space.
    Oracle {
        /// Model file with `term=<spec>, coef=<value>` lines.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value = "none")]
        constraint: String,
        /// Comma-separated, ascending.
        #[arg(long, default_value = "16,32,64,128")]
        lambdas: String,
        /// Base mean duration before scaling by lambda.
        #[arg(long, default_value_t = 1.0)]
        base_duration: f64,
    },
    /// Fit ergm coefficients to target statistics.
    Calibrate {
        /// Terms joined by `+`, e.g. `edges+degree(1)`.
        #[arg(long)]
        terms: String,
        /// Comma-separated targets, one per term.
        #[arg(long, allow_hyphen_values = true)]
        targets: String,
        #[arg(long)]
        nodes: usize,
        /// Newton iteration on the enumerated state space (at most 6 nodes).
        #[arg(long)]
        exact: bool,
        #[arg(long, default_value = "none")]
        constraint: String,
        /// Robbins-Monro iterations for the stochastic fit.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run an experiment grid and write plotdata.csv, references.csv and cells.json.
    Experiment {
        /// TOML config; defaults for `--design` otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "deg1_sweep")]
        design: String,
        /// Use the reference network size instead of the desk-scale one.
        #[arg(long)]
        full_scale: bool,
    },
    /// Configuration helpers.
    Config {
        #[arg(long)]
        print_defaults: bool,
        #[arg(long, value_enum)]
        kind: Option<ConfigKind>,
        #[arg(long, default_value = "deg1_sweep")]
        design: String,
    },
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number {s:?}")))
        .collect()
}

fn parse_terms(text: &str) -> Result<Vec<Term>> {
    let attrs = NodeAttributes::new();
    // Split on '+' outside parentheses.
    let (mut depth, mut start, mut out) = (0i32, 0usize, Vec::new());
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            '+' if depth == 0 => {
                out.push(Term::parse(&text[start..i], &attrs)?);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(Term::parse(&text[start..], &attrs)?);
    Ok(out)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn out_dir(global: &Global) -> PathBuf {
    global.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn read_sim_config(path: &Path) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SimulationConfig::from_toml_str(&text)?)
}

/// Returns the number of failed cells.
fn run(cli: Cli) -> Result<usize> {
    let g = &cli.global;
    match cli.command {
        Command::Transform { theta, duration, variant } => {
            let variant = Variant::from(variant);
            let pair = transform(variant, theta, duration)?;
            let q = pair.formation_prob();
            let report = json!({
                "variant": variant,
                "theta": theta,
                "duration": duration,
                "theta_plus": pair.theta_plus,
                "theta_minus": pair.theta_minus,
                "formation_prob": q,
                "predicted_equilibrium_prob": equilibrium_edge_prob(q, duration)?,
            });
            emit(g.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
        }
        Command::ErrorTable { duration, step } => {
            if !(step > 0.0 && step < 1.0) {
                bail!("step must lie in (0, 1)");
            }
            let crossover = crossover_threshold(duration)?;
            let mut csv = String::from("p,err_old,err_new,crossover\n");
            let count = (1.0 / step).round() as usize; // p runs over (0, 1) in steps of 1/count
            for i in 1..count {
                let p = i as f64 / count as f64;
                csv.push_str(&format!(
                    "{p},{},{},{crossover}\n",
                    relative_error(p, duration, Variant::Old)?,
                    relative_error(p, duration, Variant::New)?
                ));
            }
            emit(g.out.as_deref(), &csv)?;
        }
        Command::SimulateTergm { config } => {
            let cfg = read_sim_config(&config)?;
            let spec = cfg.tergm_spec()?;
            let initial = cfg.initial_network(g.seed)?;
            let model = cfg.model()?;
            let rec = simulate_tergm(&spec, &initial, cfg.run_options(), model.terms(), g.seed)?;
            rec.write_outputs(&out_dir(g), cfg.targets.as_deref())?;
        }
        Command::SimulateR { config } => {
            let cfg = read_sim_config(&config)?;
            let initial = cfg.initial_network(g.seed)?;
            let spec = cfg.r_spec(&initial, g.seed)?;
            let (rec, report) = simulate_r(&spec, &initial, cfg.run_options(), spec.model.terms(), g.seed)?;
            let dir = out_dir(g);
            rec.write_outputs(&dir, cfg.targets.as_deref())?;
            std::fs::write(dir.join("lambda.json"), serde_json::to_string_pretty(&report)?)?;
        }
        Command::Oracle {
            model,
            nodes,
            constraint,
            lambdas,
            base_duration,
        } => {
            let text = std::fs::read_to_string(&model).with_context(|| format!("reading {}", model.display()))?;
            let model = Model::parse_file(&text, &NodeAttributes::new())?;
            let constraint: Constraint = constraint.parse()?;
            let space = enumerate_states(nodes, constraint)?;
            let report = oracle_report(&space, &model, &DurationSpec::homogeneous(base_duration)?, &parse_list(&lambdas)?)?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
            emit(Some(&out), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Calibrate {
            terms,
            targets,
            nodes,
            exact,
            constraint,
            iterations,
        } => {
            let terms = parse_terms(&terms)?;
            let targets = parse_list(&targets)?;
            let constraint: Constraint = constraint.parse()?;
            let names: Vec<String> = terms.iter().map(|t| t.to_string()).collect();
            let report = if exact {
                let space = enumerate_states(nodes, constraint)?;
                let fit = calibrate_exact(&space, &terms, &targets)?;
                json!({ "method": "exact", "terms": names, "targets": targets, "nodes": nodes, "fit": fit })
            } else {
                let mut opts = StochasticOptions::for_nodes(nodes);
                opts.constraint = constraint;
                if let Some(it) = iterations {
                    opts.iterations = it;
                }
                let fit = calibrate_stochastic(&terms, &targets, nodes, &opts, g.seed)?;
                json!({ "method": "stochastic", "terms": names, "targets": targets, "nodes": nodes, "seed": g.seed, "fit": fit })
            };
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("coefs.json"));
            emit(Some(&out), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Experiment {
            config,
            design,
            full_scale,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    ExperimentConfig::from_toml_str(&text)?
                }
                None => ExperimentConfig {
                    seed: g.seed,
                    ..ExperimentConfig::defaults_for(design.parse::<Design>()?)
                },
            };
            if full_scale {
                cfg = cfg.full_scale();
            }
            let table = run_experiment(&cfg, g.workers)?;
            emit_plotdata(&table, &out_dir(g))?;
            for cell in table.cells.iter().filter(|c| c.failed) {
                log::error!(
                    "cell {:?} failed: {}",
                    cell.key,
                    cell.error.as_deref().unwrap_or("unknown error")
                );
            }
            return Ok(table.failed_cells());
        }
        Command::Config {
            print_defaults,
            kind,
            design,
        } => {
            if !print_defaults {
                bail!("nothing to do; pass --print-defaults");
            }
            let design: Design = design.parse()?;
            let mut text = String::new();
            if !matches!(kind, Some(ConfigKind::Experiment)) {
                text.push_str("# simulate-tergm / simulate-r\n");
                text.push_str(&SimulationConfig::default().to_toml_string());
            }
            if kind.is_none() {
                text.push('\n');
            }
            if !matches!(kind, Some(ConfigKind::Simulation)) {
                text.push_str(&format!("# experiment --design {design}\n"));
                text.push_str(&ExperimentConfig::defaults_for(design).to_toml_string());
            }
            emit(g.out.as_deref(), &text)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{failed} cell(s) failed");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_lists_split_outside_parentheses() {
        let terms = parse_terms("edges + degree(1)+gwesp(0.5, fixed = TRUE)").unwrap();
        assert_eq!(terms, vec![Term::Edges, Term::Degree(1), Term::Gwesp(0.5)]);
        assert!(parse_terms("edges+").is_err());
    }

    #[test]
    fn number_lists() {
        assert_eq!(parse_list("16, 32,64").unwrap(), vec![16.0, 32.0, 64.0]);
        assert_eq!(parse_list("-1.5").unwrap(), vec![-1.5]);
        assert!(parse_list("1,x").is_err());
    }

    #[test]
    fn global_flags_anywhere() {
        let cli = Cli::try_parse_from(["eda-lab", "error-table", "--duration", "5", "--seed", "9", "--workers", "3"]).unwrap();
        assert_eq!((cli.global.seed, cli.global.workers), (9, 3));
        assert!(Cli::try_parse_from(["eda-lab", "transform", "--theta", "-1"]).is_err());
    }
}
