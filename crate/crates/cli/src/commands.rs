use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use sae_core::aggregate::{
    aggregate_admin1, aggregate_admin1_direct, aggregate_national, design_weight_fractions, read_population_fractions,
    AggregationFractions,
};
use sae_core::augment::{apply_strategy, PhantomPriors, PriorOverride, Strategy};
use sae_core::fay_herriot::{
    build_scaled_icar, fit_bym2_mcmc, fit_iid_eb, hyperparameter_summary, posterior_prevalence, ranking_probabilities,
    read_adjacency, FhInput, IidOptions, McmcOptions, Model,
};
use sae_core::simulate::{run_study, write_results, PopulationConfig};
use sae_core::survey_data::{load_survey, read_survey_rows, validate_records, Schema, SurveyDataset, UnitRecord};
use sae_core::table::{
    estimates_for_smoothing, read_draws, read_rows, smoothed_rows, write_draws, write_hyperparameters, write_ranking,
    write_rows, AggregateRow, EstimateRow, PhantomRow,
};

use crate::manifest::RunManifest;
use crate::{AggregateArgs, EstimateArgs, RankArgs, SimulateArgs, SmoothArgs, ValidateArgs, EXIT_VALIDATION};

fn out_dir(out: &Path) -> Result<PathBuf> {
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// `dir/stem_suffix` for a companion file of `out`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_{suffix}"))
}

/// Reads `domain[,admin1]` rows.
fn read_domain_list(path: &Path) -> Result<Vec<(String, Option<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let Some(d) = headers.iter().position(|h| h == "domain") else {
        bail!(sae_core::SaeError::MissingColumn("domain".into()));
    };
    let a = headers.iter().position(|h| h == "admin1");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push((rec[d].to_string(), a.map(|i| rec[i].to_string())));
    }
    Ok(out)
}

pub fn estimate(a: &EstimateArgs, args: &[String]) -> Result<u8> {
    let mut m = RunManifest::new("estimate", args, None);
    let schema: Schema = a.survey.schema.parse()?;
    let strategy: Strategy = a.fix.parse()?;
    let mut data = load_survey(&a.survey.input, schema)?;
    m.input(&a.survey.input)?;
    let mut declared_admin1 = HashMap::new();
    if let Some(path) = &a.domains {
        let list = read_domain_list(path)?;
        m.input(path)?;
        let records: Vec<UnitRecord> = data.records().to_vec();
        data = SurveyDataset::with_domains(records, list.iter().map(|(d, _)| d.clone()))?;
        declared_admin1.extend(list.into_iter().filter_map(|(d, a1)| a1.map(|a1| (d, a1))));
    }
    m.mark("load");

    let urban = PriorOverride {
        mean: a.phantom_mean_urban,
        weight: a.phantom_weight_urban,
    };
    let rural = PriorOverride {
        mean: a.phantom_mean_rural,
        weight: a.phantom_weight_rural,
    };
    let priors = PhantomPriors::with_overrides(&data, urban, rural)?;
    let rows = apply_strategy(&data, strategy, &priors);
    m.mark("estimate");

    let mut table = Vec::with_capacity(rows.len());
    for r in &rows {
        let mut row = EstimateRow::new(&data, r, a.level)?;
        if row.admin1.is_empty() {
            row.admin1 = declared_admin1.get(&row.domain).cloned().unwrap_or_default();
        }
        if !row.note.is_empty() {
            eprintln!("warning: domain `{}`: {}", row.domain, row.note);
        }
        table.push(row);
    }
    let phantoms: Vec<PhantomRow> = rows.iter().flat_map(|r| r.phantoms.iter().map(PhantomRow::from)).collect();

    let dir = out_dir(&a.out)?;
    let phantom_path = dir.join("phantoms.csv");
    write_rows(&a.out, &table)?;
    write_rows(&phantom_path, &phantoms)?;
    m.mark("write");

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        *counts.entry(r.original_legality.as_str()).or_default() += 1;
    }
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("{} domains ({}); {} phantom clusters", rows.len(), summary.join(", "), phantoms.len());
    m.finish(&dir, &[a.out.clone(), phantom_path])?;
    Ok(0)
}

pub fn smooth(a: &SmoothArgs, args: &[String]) -> Result<u8> {
    let mut m = RunManifest::new("smooth", args, Some(a.seed));
    let model: Model = a.model.parse()?;
    let rows: Vec<EstimateRow> = read_rows(&a.estimates)?;
    m.input(&a.estimates)?;
    let (est, admin1) = estimates_for_smoothing(&rows);
    let input = FhInput::from_estimates(&est, &admin1)?;
    m.mark("load");

    let fit = match model {
        Model::Iid => fit_iid_eb(
            &input,
            &IidOptions {
                nested: a.nested,
                n_draws: a.draws,
                seed: a.seed,
                ..IidOptions::default()
            },
        )?,
        Model::Bym2 => {
            let Some(adj) = &a.adjacency else {
                bail!(sae_core::SaeError::InvalidArgument("--adjacency is required for bym2".into()));
            };
            let edges = read_adjacency(adj)?;
            m.input(adj)?;
            let ids: Vec<String> = input.areas.iter().map(|x| x.area_id.clone()).collect();
            let spatial = build_scaled_icar(&ids, &edges)?;
            let opts = McmcOptions {
                nested: a.nested,
                n_chains: a.chains,
                burn_in: a.burn_in,
                seed: a.seed,
                ..McmcOptions::default()
            }
            .with_total_draws(a.draws);
            fit_bym2_mcmc(&input, &spatial, &opts)?
        }
    };
    m.mark("fit");
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }

    let summaries = posterior_prevalence(&fit)?;
    let observed: HashMap<String, bool> = input.areas.iter().map(|x| (x.area_id.clone(), !x.is_missing())).collect();
    let dir = out_dir(&a.out)?;
    let draws_path = sibling(&a.out, "draws.csv.gz");
    let hyper_path = sibling(&a.out, "hyperparameters.csv");
    write_rows(&a.out, &smoothed_rows(&fit, &summaries, &admin1, &observed))?;
    write_draws(&draws_path, &fit)?;
    write_hyperparameters(&hyper_path, &hyperparameter_summary(&fit))?;
    m.mark("write");
    eprintln!(
        "{} areas ({} observed), {} draws",
        fit.n_areas(),
        input.n_observed(),
        fit.n_draws()
    );
    m.finish(&dir, &[a.out.clone(), draws_path, hyper_path])?;
    Ok(0)
}

pub fn rank(a: &RankArgs, args: &[String]) -> Result<u8> {
    let mut m = RunManifest::new("rank", args, None);
    let fit = read_draws(&a.draws, Model::Iid, false)?;
    m.input(&a.draws)?;
    let table = ranking_probabilities(&fit, &a.bands)?;
    m.mark("rank");
    let dir = out_dir(&a.out)?;
    write_ranking(&a.out, &table)?;
    m.finish(&dir, std::slice::from_ref(&a.out))?;
    Ok(0)
}

pub fn aggregate(a: &AggregateArgs, args: &[String]) -> Result<u8> {
    let mut m = RunManifest::new("aggregate", args, None);
    let fractions: AggregationFractions = match (&a.fractions, &a.input) {
        (Some(path), _) => {
            m.input(path)?;
            read_population_fractions(path)?
        }
        (None, Some(input)) => {
            m.input(input)?;
            design_weight_fractions(&load_survey(input, a.schema.parse()?)?)?
        }
        (None, None) => bail!(sae_core::SaeError::InvalidArgument("give --fractions or --from-weights".into())),
    };
    let admin1 = match (&a.draws, &a.estimates) {
        (Some(path), _) => {
            m.input(path)?;
            aggregate_admin1(&read_draws(path, Model::Iid, false)?, &fractions)?
        }
        (None, Some(path)) => {
            m.input(path)?;
            let rows: Vec<EstimateRow> = read_rows(path)?;
            let est: HashMap<String, f64> = rows.iter().filter_map(|r| r.p_hat.map(|p| (r.domain.clone(), p))).collect();
            aggregate_admin1_direct(&est, &fractions)?
        }
        (None, None) => bail!(sae_core::SaeError::InvalidArgument("give --draws or --estimates".into())),
    };
    let source = fractions.source.as_str();
    let rows: Vec<AggregateRow> = match a.level.as_str() {
        "admin1" => admin1.iter().map(|s| AggregateRow::new("admin1", source, s)).collect(),
        "national" => vec![AggregateRow::new("national", source, &aggregate_national(&admin1, &fractions)?)],
        other => bail!(sae_core::SaeError::InvalidArgument(format!("unknown level `{other}`"))),
    };
    m.mark("aggregate");
    let dir = out_dir(&a.out)?;
    write_rows(&a.out, &rows)?;
    m.finish(&dir, std::slice::from_ref(&a.out))?;
    Ok(0)
}

pub fn simulate(a: &SimulateArgs, args: &[String]) -> Result<u8> {
    let mut m = RunManifest::new("simulate", args, Some(a.seed));
    let mut cfg = PopulationConfig::load(&a.config)?;
    m.input(&a.config)?;
    if a.vary_population {
        cfg.fixed_population = false;
    }
    let strategies = a.strategies.iter().map(|s| s.parse()).collect::<sae_core::Result<Vec<Strategy>>>()?;
    let res = run_study(&cfg, a.reps, a.seed, &strategies)?;
    m.mark("simulate");
    for f in &res.failures {
        eprintln!("warning: {f}");
    }
    write_results(&res, &a.out)?;
    m.mark("write");
    println!("strategy\tlevel\tcoverage\twidth\tinterval_score");
    for &s in &strategies {
        for &l in &cfg.levels {
            if let Some((cov, width, score)) = res.overall(s, l) {
                println!("{}\t{l}\t{cov:.4}\t{width:.4}\t{score:.4}", s.as_str());
            }
        }
    }
    let outputs: Vec<PathBuf> = ["metrics.csv", "stratum_summary.csv", "replicates.csv.gz"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    m.finish(&a.out, &outputs)?;
    Ok(0)
}

pub fn validate(a: &ValidateArgs) -> Result<u8> {
    let schema: Schema = a.survey.schema.parse()?;
    let (rows, parse_violations) = read_survey_rows(&a.survey.input, schema)?;
    let tagged: Vec<(Option<usize>, &UnitRecord)> = rows.iter().map(|(r, u)| (Some(*r), u)).collect();
    let mut report = validate_records(&tagged);
    let mut violations = parse_violations;
    violations.append(&mut report.violations);
    violations.sort_by_key(|v| v.row);
    report.violations = violations;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    for v in &report.violations {
        eprintln!("{v}");
    }
    Ok(if report.is_valid() { 0 } else { EXIT_VALIDATION })
}
