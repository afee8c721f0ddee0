use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use mcpmod::contrasts::ContrastWeights;
use mcpmod::data::TrialDataset;
use mcpmod::glm::Family;
use mcpmod::inference::{
    exact_randomization_pvalue, population_test, run_tests, Analysis, AnalysisOptions, MethodId,
    PValueRule, TestMethod, TestOutcome,
};
use mcpmod::randomization::big_log10;
use mcpmod::rng::stream;
use mcpmod::sim::{
    run_power_study, simulate_from_potential_outcomes, PotentialOutcomeConfig,
    PotentialOutcomeTable, ScenarioConfig, SimulationReport,
};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{self, config_hash, DesignConfig, Endpoint};
use crate::{AnalyzeArgs, CliError, DesignArgs, EnumerateArgs, Format, SimulateArgs};

fn provenance(hash: &str, seed: Option<u64>, source: &str) -> serde_json::Value {
    json!({
        "config_sha256": hash,
        "seed": seed,
        "source": source,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn csv_header(hash: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    format!(
        "# config_sha256: {hash}\n# seed: {seed}\n# version: mcpmod {}\n",
        env!("CARGO_PKG_VERSION")
    )
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn load_design(path: &Path) -> Result<(DesignConfig, String), CliError> {
    let text = config::read_text(path)?;
    let cfg: DesignConfig = config::parse(&text, &path.display().to_string())?;
    cfg.validate()?;
    let hash = config_hash(&cfg);
    Ok((cfg, hash))
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (text, source) = config::resolve(&args.config)?;
    let (report, hash, seed) = match &args.potential_outcomes {
        Some(table_path) => {
            let mut cfg: PotentialOutcomeConfig = config::parse(&text, &source)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(n) = args.sims {
                cfg.n_sim = n;
            }
            if let Some(n) = args.n_rand {
                cfg.n_rand = n;
            }
            let file = fs::File::open(table_path).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", table_path.display()))
            })?;
            let table = PotentialOutcomeTable::from_csv(file)?;
            cfg.validate(&table)?;
            let hash =
                config_hash(&json!({ "config": cfg, "table_sha256": sha256_file(table_path)? }));
            let report = simulate_from_potential_outcomes(&table, &cfg, args.workers)
                .map_err(|e| CliError::Runtime(format!("{e}; no report was written")))?;
            (report, hash, cfg.seed)
        }
        None => {
            let mut cfg: ScenarioConfig = config::parse(&text, &source)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(n) = args.sims {
                cfg.n_sim = n;
            }
            if let Some(n) = args.n_rand {
                cfg.n_rand = n;
            }
            cfg.validate()?;
            let hash = config_hash(&cfg);
            let report = run_power_study(&cfg, args.workers)
                .map_err(|e| CliError::Runtime(format!("{e}; no report was written")))?;
            (report, hash, cfg.seed)
        }
    };
    write_report(report, &hash, seed, &source, &args.out_dir)
}

fn write_report(
    mut report: SimulationReport,
    hash: &str,
    seed: u64,
    source: &str,
    out_dir: &Path,
) -> Result<(), CliError> {
    report.config_hash = Some(hash.to_string());
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let csv_path = out_dir.join(format!("{}.csv", report.label));
    let json_path = out_dir.join(format!("{}.json", report.label));
    write_out(Some(&csv_path), &report.to_csv())?;
    let doc = json!({ "provenance": provenance(hash, Some(seed), source), "report": report });
    write_out(Some(&json_path), &to_json(&doc))?;
    eprintln!(
        "wrote {} and {} ({} trials per hypothesis, {:.1} s)",
        csv_path.display(),
        json_path.display(),
        report.n_sim,
        report.elapsed_seconds
    );
    Ok(())
}

fn parse_methods(list: &[String]) -> Result<Vec<MethodId>, CliError> {
    list.iter()
        .map(|s| s.trim().parse::<MethodId>().map_err(CliError::from))
        .collect()
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let (cfg, hash) = load_design(&args.config)?;
    let file = fs::File::open(&args.data)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", args.data.display())))?;
    let data = TrialDataset::from_csv(cfg.grid.clone(), file)?;
    if data.n() != cfg.randomization.n() {
        return Err(CliError::Validation(format!(
            "dataset has {} patients, randomization allocates {}",
            data.n(),
            cfg.randomization.n()
        )));
    }
    let ids = match (&args.methods, &cfg.methods) {
        (Some(list), _) => parse_methods(list)?,
        (None, Some(list)) => list.clone(),
        (None, None) => MethodId::ALL.to_vec(),
    };
    let n_rand = args.n_rand.or(cfg.n_rand).unwrap_or(1000);
    let rule = if args.add_one {
        PValueRule::AddOne
    } else {
        cfg.pvalue_rule
    };
    let methods: Vec<TestMethod> = ids
        .iter()
        .map(|&id| TestMethod {
            id,
            n_rand,
            pvalue_rule: rule,
        })
        .collect();
    let seed = args.seed.or(cfg.seed);
    let needs_seed = !args.exact && ids.iter().any(|m| m.is_randomization());
    if needs_seed && seed.is_none() {
        return Err(CliError::Validation(
            "a seed is required for Monte Carlo randomization tests (--seed or `seed` in the config)".into(),
        ));
    }
    let options = AnalysisOptions {
        family: match cfg.endpoint {
            Endpoint::Binary => Family::BinaryLogit,
            Endpoint::Continuous => Family::GaussianIdentity,
        },
        include_covariates: cfg.include_covariates && !args.no_covariates,
        s1_contrasts: cfg.s1_contrasts,
        ..Default::default()
    };
    let analysis = Analysis::new(&data, &cfg.candidates(), options)?;
    let outcomes: Vec<TestOutcome> = if args.exact {
        methods
            .iter()
            .map(|m| {
                if m.id.is_randomization() {
                    exact_randomization_pvalue(&analysis, &cfg.randomization, *m, args.cap)
                } else {
                    population_test(&analysis, &data.sequence)
                }
            })
            .collect::<Result<_, _>>()?
    } else {
        let mut rng = stream(seed.unwrap_or(0), 0);
        run_tests(&analysis, &cfg.randomization, &methods, &mut rng)?
    };
    let warnings: Vec<String> = outcomes
        .iter()
        .flat_map(|o| {
            o.diagnostics
                .warnings
                .iter()
                .map(move |w| format!("method {}: {w}", o.method.id.number()))
        })
        .collect();
    let doc = json!({
        "provenance": provenance(&hash, seed, &args.config.display().to_string()),
        "data_sha256": sha256_file(&args.data)?,
        "in_reference_set": cfg.randomization.contains(&data.sequence),
        "warnings": warnings,
        "outcomes": outcomes,
    });
    write_out(args.out.as_deref(), &to_json(&doc))
}

pub fn contrasts(args: &DesignArgs) -> Result<(), CliError> {
    let (cfg, hash) = load_design(&args.config)?;
    let spec = &cfg.randomization;
    let weights: Vec<f64> = match spec.fixed_group_sizes() {
        Some(sizes) => sizes.iter().map(|&s| s as f64).collect(),
        None => spec
            .allocation_ratio()
            .iter()
            .map(|p| p * spec.n() as f64)
            .collect(),
    };
    let cm = mcpmod::contrasts::contrast_matrix(
        &cfg.candidates(),
        &cfg.grid,
        ContrastWeights::ArmSizes(&weights),
    )?;
    let text = match args.format {
        Format::Csv => format!("{}{}", csv_header(&hash, cfg.seed), cm.to_csv(&cfg.grid)),
        Format::Json => to_json(&json!({
            "provenance": provenance(&hash, cfg.seed, &args.config.display().to_string()),
            "doses": cfg.grid.doses(),
            "weights": weights,
            "labels": cm.labels,
            "vectors": cm.vectors,
            "skipped": cm.skipped,
        })),
    };
    write_out(args.out.as_deref(), &text)
}

pub fn counts(args: &DesignArgs) -> Result<(), CliError> {
    let (cfg, hash) = load_design(&args.config)?;
    let c = cfg.randomization.count();
    let text = match args.format {
        Format::Csv => format!(
            "{}procedure,count,log10_count,distinct_sequences\n{},{},{:.6},{}\n",
            csv_header(&hash, cfg.seed),
            cfg.randomization.procedure(),
            c.count,
            c.log10(),
            c.distinct
        ),
        Format::Json => to_json(&json!({
            "provenance": provenance(&hash, cfg.seed, &args.config.display().to_string()),
            "procedure": cfg.randomization.procedure().to_string(),
            "count": c.count.to_string(),
            "log10_count": c.log10(),
            "distinct_sequences": c.distinct.to_string(),
            "log10_distinct": big_log10(&c.distinct),
        })),
    };
    write_out(args.out.as_deref(), &text)
}

pub fn enumerate(args: &EnumerateArgs) -> Result<(), CliError> {
    let (cfg, hash) = load_design(&args.config)?;
    let iter = cfg.randomization.enumerate(args.cap)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(
            fs::File::create(p)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    let io = |e: std::io::Error| CliError::Runtime(e.to_string());
    w.write_all(csv_header(&hash, cfg.seed).as_bytes())
        .map_err(io)?;
    let n = cfg.randomization.n();
    let cols: Vec<String> = (1..=n).map(|i| format!("z_{i}")).collect();
    writeln!(w, "sequence,probability,{}", cols.join(",")).map_err(io)?;
    for (i, (seq, p)) in iter.enumerate() {
        let arms: Vec<String> = seq.arms().iter().map(|a| a.to_string()).collect();
        writeln!(w, "{},{:e},{}", i + 1, p, arms.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}
