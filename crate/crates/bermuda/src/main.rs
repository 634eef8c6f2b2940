use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bermuda::config::{CvMode, ExperimentConfig, Method, Mode};
use bermuda::harness;
use bermuda::pricer::{price_multilevel_cv, price_single_level_cv, train_coupled, CouplingMode};
use bermuda::rng::{tags, StreamKey};
use bermuda::scheduler::{
    multilevel_complexity_case, multilevel_schedule, single_level_schedule,
};
use bermuda::Error;

#[derive(Parser)]
#[command(name = "bermuda", about = "Bermudan max-call pricing experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// plain-text key=value experiment config
    #[arg(long)]
    config: Option<PathBuf>,
    /// master seed (overrides config)
    #[arg(long)]
    seed: Option<u64>,
    /// output file (defaults to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// estimator: mesh | local | global
    #[arg(long)]
    method: Option<String>,
    /// control variate: off | outer | outer-beta | inner
    #[arg(long)]
    cv: Option<String>,
    /// paper-scale budgets (100 repetitions, larger reference run)
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Price once with the single-level estimator
    PriceSingle {
        #[command(flatten)]
        common: Common,
        /// accuracy target; sets (k, n) via the schedule unless overridden
        #[arg(long)]
        epsilon: Option<f64>,
        /// training paths (overrides the schedule)
        #[arg(long)]
        k: Option<usize>,
        /// testing paths (overrides the schedule)
        #[arg(long)]
        n: Option<usize>,
    },
    /// Price once with the multilevel estimator
    PriceMl {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// level-0 training paths
        #[arg(long)]
        k0: Option<usize>,
        /// geometric level growth factor
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Print the (L, k_l, n_l, predicted cost, case) schedule table
    Schedule {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ml")]
        mode: String,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long)]
        k0: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// MSE-over-repetitions study against a high-budget reference
    MseStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "single")]
        mode: String,
        /// comma-separated decreasing epsilon grid
        #[arg(long)]
        epsilon: Option<String>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Cost-vs-accuracy study with log-log slope fit
    ComplexityStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "single")]
        mode: String,
        #[arg(long)]
        epsilon: Option<String>,
    },
    /// Run the dynamic-programming oracle invariant suite
    OracleCheck,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn build_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::benchmark(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(m) = &common.method {
        cfg.method = Method::parse(m)?;
        cfg.constants = cfg.method.constants();
    }
    if let Some(c) = &common.cv {
        cfg.cv = CvMode::parse(c)?;
    }
    if common.paper_scale {
        cfg.paper_scale = true;
        cfg.repetitions = cfg.repetitions.max(100);
    }
    Ok(cfg)
}

fn parse_eps_grid(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid epsilon '{p}'")))
        })
        .collect()
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::PriceSingle { common, epsilon, k, n } => {
            let cfg = build_config(&common)?;
            let profile = cfg.method.profile();
            let sched = single_level_schedule(epsilon.unwrap_or(1.0), &profile, &cfg.constants)?;
            let k = k.unwrap_or(sched.k);
            let n = n.unwrap_or(sched.n);
            let (model, payoff) = harness::build_problem(&cfg);
            let overlay = harness::cv_overlay(&cfg)?;
            let stream = StreamKey::new(cfg.seed);
            let training = model.simulate_paths(k, stream.child(tags::TRAINING));
            let trained = cfg.method.kind().train(&training, &payoff, &model);
            let testing = model.simulate_paths(n, stream.child(tags::TESTING));
            let est =
                price_single_level_cv(trained.as_ref(), &testing, payoff.as_ref(), overlay.as_ref())?;
            let text = format!(
                "method={} k={} n={} value={:.6} std_error={:.6} beta={:.4} cost_units={:.3e}\n",
                cfg.method.name(),
                est.k,
                est.n,
                est.value,
                est.std_error,
                est.beta,
                est.cost.total_units()
            );
            harness::emit(&cfg, &text)
        }
        Command::PriceMl { common, epsilon, k0, theta } => {
            let mut cfg = build_config(&common)?;
            if let Some(k0) = k0 {
                cfg.constants.k0 = k0;
            }
            if let Some(theta) = theta {
                cfg.constants.theta = theta;
            }
            let profile = cfg.method.profile();
            let sched = multilevel_schedule(epsilon, &profile, &cfg.constants)?;
            let (model, payoff) = harness::build_problem(&cfg);
            let overlay = harness::cv_overlay(&cfg)?;
            let stream = StreamKey::new(cfg.seed);
            let coupled = train_coupled(
                &cfg.method.kind(),
                &sched.ks,
                &model,
                &payoff,
                stream.child(tags::TRAINING),
                CouplingMode::Independent,
            )?;
            let est = price_multilevel_cv(
                &coupled,
                &sched.ns,
                &model,
                &payoff,
                stream.child(tags::TESTING),
                overlay.as_ref(),
            )?;
            let mut text = format!(
                "method={} L={} value={:.6} std_error={:.6} cost_units={:.3e}\n",
                cfg.method.name(),
                sched.num_levels(),
                est.value,
                est.std_error,
                est.cost.total_units()
            );
            text.push_str("level,k,n,mean_correction,var_correction,cost_units\n");
            for (l, kl, nl, mean, var, cost) in est.level_diagnostics() {
                text.push_str(&format!("{l},{kl},{nl},{mean:.6e},{var:.6e},{cost:.6e}\n"));
            }
            harness::emit(&cfg, &text)
        }
        Command::Schedule { common, mode, epsilon, k0, theta } => {
            let mut cfg = build_config(&common)?;
            if let Some(k0) = k0 {
                cfg.constants.k0 = k0;
            }
            if let Some(theta) = theta {
                cfg.constants.theta = theta;
            }
            let profile = cfg.method.profile();
            let mut text = String::from("# bermuda-csv v1 schedule\n");
            match Mode::parse(&mode)? {
                Mode::Single => {
                    let s = single_level_schedule(epsilon, &profile, &cfg.constants)?;
                    text.push_str("epsilon,k,n\n");
                    text.push_str(&format!("{epsilon},{},{}\n", s.k, s.n));
                }
                Mode::Multilevel => {
                    let s = multilevel_schedule(epsilon, &profile, &cfg.constants)?;
                    let case = multilevel_complexity_case(&profile);
                    text.push_str(&format!(
                        "# L={} predicted_cost={:.6e} case={case:?}\n",
                        s.num_levels(),
                        s.predicted_cost
                    ));
                    text.push_str("l,k_l,n_l,n_l_real\n");
                    for l in 0..s.ks.len() {
                        text.push_str(&format!(
                            "{l},{},{},{:.6e}\n",
                            s.ks[l], s.ns[l], s.ns_real[l]
                        ));
                    }
                }
            }
            harness::emit(&cfg, &text)
        }
        Command::MseStudy { common, mode, epsilon, repetitions } => {
            let mut cfg = build_config(&common)?;
            cfg.mode = Mode::parse(&mode)?;
            if let Some(grid) = epsilon {
                cfg.epsilons = parse_eps_grid(&grid)?;
            }
            if let Some(r) = repetitions {
                cfg.repetitions = r;
            }
            cfg.validate()?;
            let reference = harness::reference_value(&cfg)?;
            let rows = harness::run_mse_study(&cfg, &reference)?;
            harness::emit(&cfg, &harness::mse_csv(&cfg, &reference, &rows))
        }
        Command::ComplexityStudy { common, mode, epsilon } => {
            let mut cfg = build_config(&common)?;
            cfg.mode = Mode::parse(&mode)?;
            if let Some(grid) = epsilon {
                cfg.epsilons = parse_eps_grid(&grid)?;
            }
            cfg.validate()?;
            let study = harness::run_complexity_study(&cfg)?;
            harness::emit(&cfg, &harness::complexity_csv(&study))
        }
        Command::OracleCheck => {
            let results = harness::run_oracle_check();
            let mut failed = 0;
            for (name, ok) in &results {
                println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
                if !ok {
                    failed += 1;
                }
            }
            println!("{} checks, {} failed", results.len(), failed);
            if failed > 0 {
                return Err(Error::Config(format!("{failed} oracle checks failed")));
            }
            Ok(())
        }
    }
}
