use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use mplab_core::eval::{
    combine_and_balance, evaluate, render_plot_csv, render_table, split_train_test, BalanceTarget, EvaluationReport,
};
use mplab_core::features::{
    extract_features, pair_streams, read_feature_csv, read_truth_csv, write_feature_csv, write_truth_csv,
};
use mplab_core::gnss::GpsTime;
use mplab_core::ml::{default_grid, grid_search_cv, train, Dataset, Family, HyperGrid, Params, TrainedModel};
use mplab_core::rinex::{
    parse_navigation, parse_observation_detailed, write_navigation, write_observation, NavigationFile,
};
use mplab_core::scenesim::{run_campaign, synthetic_constellation, NoiseModel, Scene};

use crate::config::{PipelineConfig, TargetSetting};
use crate::CliError;

/// Locations pooled for T0/T1 and the held-out test locations for T2, T3.
const PROTOCOL_TRAIN_LOCATIONS: [&str; 3] = ["A", "B", "C"];
const PROTOCOL_TEST_LOCATIONS: [(&str, &str); 2] = [("T2", "D"), ("T3", "E")];

#[derive(Debug, Args)]
pub struct ConstellationArgs {
    /// GPS week of the first ephemeris set.
    #[arg(long, default_value_t = 2150)]
    pub week: u32,
    /// Seconds of week of the first set's reference time.
    #[arg(long, default_value_t = 0.0)]
    pub first_toe: f64,
    /// Number of two-hourly ephemeris sets.
    #[arg(long, default_value_t = 13)]
    pub sets: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene JSON files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub nav: PathBuf,
    /// Campaign length in hours.
    #[arg(long, conflicts_with = "duration")]
    pub hours: Option<f64>,
    /// Campaign length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// First epoch as `WEEK:SOW`; defaults to the earliest ephemeris.
    #[arg(long)]
    pub start: Option<String>,
    /// JSON noise-model overrides.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub obs1: PathBuf,
    #[arg(long)]
    pub obs2: PathBuf,
    #[arg(long)]
    pub nav: PathBuf,
    /// Truth CSV; rows stay unlabeled without it.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Location tag; defaults to the first file's stem without `_1`.
    #[arg(long)]
    pub location: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub features: Vec<PathBuf>,
    /// Pool A, B, C into disjoint balanced T0/T1 and hold out D, E as T2, T3.
    #[arg(long)]
    pub paper_protocol: bool,
    /// Rows per class (per set; T0 and T1 with --paper-protocol), or `auto`
    /// for the largest feasible count.
    #[arg(long, default_value = "auto")]
    pub target: TargetSetting,
    /// Share of each class in the training set (ignored with --paper-protocol).
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// gbdt, random_forest, decision_tree or knn.
    #[arg(long)]
    pub algorithm: String,
    /// JSON object of parameter value lists replacing the default grid.
    #[arg(long, conflicts_with = "param")]
    pub grid: Option<PathBuf>,
    /// Fixed `NAME=VALUE` parameter; skips the grid search.
    #[arg(long)]
    pub param: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Model file.
    #[arg(long)]
    pub out: PathBuf,
    /// CV table; defaults to the model path with a `.cv.csv` extension.
    #[arg(long)]
    pub cv_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
    /// Labeled feature CSVs; each is reported under its file stem.
    #[arg(long, required = true, num_args = 1..)]
    pub dataset: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::file(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::file(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::file(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_nav(path: &Path) -> Result<NavigationFile, CliError> {
    let nav = parse_navigation(&read(path)?).map_err(|e| CliError::file(path, e))?;
    if nav.is_empty() {
        return Err(CliError::file(path, "no GPS ephemerides"));
    }
    Ok(nav)
}

fn load_scenes(paths: &[PathBuf]) -> Result<Vec<Scene>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::file(p, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::file(p, "no scene .json files"));
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut scenes: Vec<Scene> = Vec::new();
    for f in files {
        let scene = Scene::from_json(&read(&f)?).map_err(|e| CliError::file(&f, e))?;
        if scenes.iter().any(|s| s.tag == scene.tag) {
            return Err(CliError::file(&f, format!("duplicate scene tag `{}`", scene.tag)));
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

fn parse_start(text: Option<&str>, nav: &NavigationFile) -> Result<GpsTime, CliError> {
    let Some(text) = text else {
        let first = nav.ephemerides.values().map(|e| e.toe_time()).min();
        return first.ok_or_else(|| CliError::Runtime("navigation file is empty".into()));
    };
    let bad = || CliError::Usage(format!("--start `{text}` must be WEEK:SOW"));
    let (week, sow) = text.split_once(':').ok_or_else(bad)?;
    let week: u32 = week.trim().parse().map_err(|_| bad())?;
    let sow: f64 = sow.trim().parse().map_err(|_| bad())?;
    if !(0.0..604800.0).contains(&sow) {
        return Err(bad());
    }
    Ok(GpsTime::from_week_sow(week, sow))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let rows = read_feature_csv(&read(path)?).map_err(|e| CliError::file(path, e))?;
    Dataset::new(rows).map_err(|e| CliError::file(path, e))
}

pub fn run_constellation(args: &ConstellationArgs, seed: u64) -> Result<(), CliError> {
    if args.sets == 0 {
        return Err(CliError::Usage("--sets must be at least 1".into()));
    }
    if !(0.0..604800.0).contains(&args.first_toe) {
        return Err(CliError::Usage(format!("--first-toe {} is outside the week", args.first_toe)));
    }
    let nav = synthetic_constellation(args.week, args.first_toe, args.sets, seed);
    write(&args.out, write_navigation(&nav))
}

fn simulate(
    scenes: &[Scene],
    nav: &NavigationFile,
    start: GpsTime,
    duration: f64,
    noise: &NoiseModel,
    out: &Path,
) -> Result<(), CliError> {
    let runs = run_campaign(scenes, nav, start, duration, noise).map_err(|e| CliError::Runtime(e.to_string()))?;
    for run in &runs {
        let [f1, f2] = run.observation_files();
        write(&out.join(format!("{}_1.obs", run.tag())), write_observation(&f1))?;
        write(&out.join(format!("{}_2.obs", run.tag())), write_observation(&f2))?;
        write(&out.join(format!("{}_truth.csv", run.tag())), write_truth_csv(&run.truth_table()))?;
    }
    Ok(())
}

fn duration_seconds(hours: Option<f64>, seconds: Option<f64>) -> Result<f64, CliError> {
    let d = match (hours, seconds) {
        (Some(h), None) => h * 3600.0,
        (None, Some(s)) => s,
        (None, None) => 7200.0,
        (Some(_), Some(_)) => return Err(CliError::Usage("give --hours or --duration, not both".into())),
    };
    if !(d >= 0.0) || d.fract() != 0.0 || d > 7.0 * 86400.0 {
        return Err(CliError::Usage(format!("campaign length {d} s must be a whole number of seconds up to a week")));
    }
    Ok(d)
}

pub fn run_simulate(args: &SimulateArgs, seed: u64) -> Result<(), CliError> {
    let duration = duration_seconds(args.hours, args.duration)?;
    let scenes = load_scenes(&args.scenes)?;
    let nav = load_nav(&args.nav)?;
    let start = parse_start(args.start.as_deref(), &nav)?;
    let mut noise = match &args.noise {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| CliError::file(p, e))?,
        None => NoiseModel::default(),
    };
    noise.seed = seed;
    noise.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    simulate(&scenes, &nav, start, duration, &noise, &args.out)
}

fn extract(
    obs: [&Path; 2],
    nav: &NavigationFile,
    truth: Option<&Path>,
    location: &str,
    out: &Path,
) -> Result<(), CliError> {
    let mut files = Vec::new();
    for p in obs {
        let (file, summary) = parse_observation_detailed(&read(p)?).map_err(|e| CliError::file(p, e))?;
        if !summary.warnings.is_empty() {
            info!("{}: {} warnings", p.display(), summary.warnings.len());
        }
        files.push(file);
    }
    let truth = match truth {
        Some(p) => Some(read_truth_csv(&read(p)?).map_err(|e| CliError::file(p, e))?),
        None => None,
    };
    let stream = pair_streams(&files[0], &files[1]).map_err(|e| CliError::file(obs[0], e))?;
    let table = extract_features(&stream, nav, truth.as_ref(), location);
    info!("{location}: {} rows, drops {:?}", table.rows.len(), table.drops);
    write(out, write_feature_csv(&table.rows))
}

pub fn run_extract(args: &ExtractArgs) -> Result<(), CliError> {
    let location = match &args.location {
        Some(l) => l.clone(),
        None => {
            let s = stem(&args.obs1);
            s.strip_suffix("_1").map(str::to_string).unwrap_or(s)
        }
    };
    if location.is_empty() || location.contains([',', '"', '\n']) {
        return Err(CliError::Usage(format!("location tag `{location}` is empty or not CSV-safe")));
    }
    let nav = load_nav(&args.nav)?;
    extract([&args.obs1, &args.obs2], &nav, args.truth.as_deref(), &location, &args.out)
}

fn by_location(sets: Vec<Dataset>) -> BTreeMap<String, Dataset> {
    let mut groups: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for row in sets.into_iter().flat_map(Dataset::into_rows) {
        groups.entry(row.location.clone()).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|(k, rows)| (k, Dataset::new(rows).expect("rows from valid datasets")))
        .collect()
}

/// T0/T1 as disjoint balanced halves of the A-C pool with `target` rows per
/// class each; T2/T3 as the largest balanced sets from D and E.
pub fn location_protocol(
    sets: Vec<Dataset>,
    target: TargetSetting,
    seed: u64,
) -> Result<Vec<(&'static str, Dataset)>, CliError> {
    let mut groups = by_location(sets);
    let missing: Vec<&str> = PROTOCOL_TRAIN_LOCATIONS
        .iter()
        .chain(PROTOCOL_TEST_LOCATIONS.iter().map(|(_, l)| l))
        .filter(|l| !groups.contains_key(**l))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Runtime(format!("locations {} missing from the feature files", missing.join(", "))));
    }
    let pool: Vec<Dataset> = PROTOCOL_TRAIN_LOCATIONS.iter().map(|l| groups.remove(*l).expect("checked")).collect();
    let pool_target = match target {
        TargetSetting::Count(n) => BalanceTarget::PerClass(2 * n),
        TargetSetting::Auto => {
            let mut counts = [0usize; 3];
            for d in &pool {
                for (c, n) in counts.iter_mut().zip(d.class_counts()) {
                    *c += n;
                }
            }
            BalanceTarget::PerClass(counts.iter().min().copied().unwrap_or(0) / 2 * 2)
        }
    };
    let run = |e: mplab_core::eval::EvalError, what: &str| CliError::Runtime(format!("{what}: {e}"));
    let balanced = combine_and_balance(&pool, pool_target, seed).map_err(|e| run(e, "T0/T1 pool"))?;
    let (t0, t1) = split_train_test(&balanced, 0.5, seed).map_err(|e| run(e, "T0/T1 split"))?;
    let mut out = vec![("T0", t0), ("T1", t1)];
    for (k, (name, location)) in PROTOCOL_TEST_LOCATIONS.iter().enumerate() {
        let d = groups.remove(*location).expect("checked");
        let set_seed = seed.wrapping_add(k as u64 + 1);
        let balanced = combine_and_balance(&[d], BalanceTarget::Auto, set_seed).map_err(|e| run(e, name))?;
        out.push((name, balanced));
    }
    Ok(out)
}

fn write_sets(sets: &[(&str, Dataset)], out: &Path) -> Result<(), CliError> {
    for (name, d) in sets {
        write(&out.join(format!("{name}.csv")), write_feature_csv(d.rows()))?;
    }
    Ok(())
}

pub fn run_dataset(args: &DatasetArgs, seed: u64) -> Result<(), CliError> {
    if !args.paper_protocol && !(args.fraction > 0.0 && args.fraction < 1.0) {
        return Err(CliError::Usage(format!("--fraction {} must lie strictly between 0 and 1", args.fraction)));
    }
    let sets = args.features.iter().map(|p| load_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    let out = if args.paper_protocol {
        location_protocol(sets, args.target, seed)?
    } else {
        let balanced =
            combine_and_balance(&sets, args.target.balance(), seed).map_err(|e| CliError::Runtime(e.to_string()))?;
        let (a, b) =
            split_train_test(&balanced, args.fraction, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
        vec![("train", a), ("test", b)]
    };
    write_sets(&out, &args.out)
}

fn parse_fixed(family: Family, pairs: &[String]) -> Result<Params, CliError> {
    let mut values = BTreeMap::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--param `{p}` must be NAME=VALUE")))?;
        let v: f64 = v.parse().map_err(|_| CliError::Usage(format!("--param `{p}`: bad value")))?;
        values.insert(k.to_string(), v);
    }
    Params::from_map(family, &values).map_err(|e| CliError::Usage(e.to_string()))
}

/// Fit `family` on `data`, grid-searching unless `fixed` is given.
fn fit(
    family: Family,
    grid: Option<HyperGrid>,
    fixed: Option<Params>,
    data: &Dataset,
    folds: usize,
    seed: u64,
    dataset_path: &Path,
) -> Result<(TrainedModel, Option<String>), CliError> {
    let failed = |e: mplab_core::ml::MlError| CliError::file(dataset_path, e);
    let (params, table) = match fixed {
        Some(p) => (p, None),
        None => {
            let grid = grid.unwrap_or_else(|| default_grid(family));
            let result = grid_search_cv(&grid, data, folds, seed).map_err(failed)?;
            info!("{family}: best {}", result.best);
            (result.best, Some(result.to_csv()))
        }
    };
    let model = train(&params, data, seed).map_err(failed)?;
    Ok((model, table))
}

pub fn run_train(args: &TrainArgs, seed: u64) -> Result<(), CliError> {
    let family: Family = args.algorithm.parse().map_err(|e: mplab_core::ml::MlError| CliError::Usage(e.to_string()))?;
    if args.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    let fixed = if args.param.is_empty() { None } else { Some(parse_fixed(family, &args.param)?) };
    let grid = match &args.grid {
        Some(p) => {
            let params = serde_json::from_str(&read(p)?).map_err(|e| CliError::file(p, e))?;
            let grid = HyperGrid { family, params };
            grid.points().map_err(|e| CliError::file(p, e))?;
            Some(grid)
        }
        None => None,
    };
    let data = load_dataset(&args.dataset)?;
    let (model, table) = fit(family, grid, fixed, &data, args.folds, seed, &args.dataset)?;
    write(&args.out, model.to_bytes())?;
    if let Some(table) = table {
        let cv = args.cv_out.clone().unwrap_or_else(|| args.out.with_extension("cv.csv"));
        write(&cv, table)?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::file(path, e))?;
    TrainedModel::from_bytes(&bytes).map_err(|e| CliError::file(path, e))
}

fn report(models: &[TrainedModel], sets: &[(String, Dataset)], out: &Path) -> Result<(), CliError> {
    let mut reports: Vec<EvaluationReport> = Vec::new();
    for (tag, data) in sets {
        for m in models {
            let r = evaluate(m, data, tag).map_err(|e| CliError::Runtime(format!("{tag}: {e}")))?;
            reports.push(r);
        }
    }
    for r in &reports {
        write(&out.join(format!("{}_{}.json", r.tag, r.algorithm)), r.to_json() + "\n")?;
    }
    let table = render_table(&reports);
    info!("\n{table}");
    write(&out.join("summary.txt"), table)?;
    write(&out.join("accuracy.csv"), render_plot_csv(&reports))
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let models = args.model.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeSet::new();
    for m in &models {
        if !seen.insert(m.family()) {
            return Err(CliError::Usage(format!("two models of family {}", m.family())));
        }
    }
    let mut sets = Vec::new();
    for p in &args.dataset {
        let d = load_dataset(p)?;
        if d.is_empty() {
            return Err(CliError::file(p, "no rows"));
        }
        sets.push((stem(p), d));
    }
    report(&models, &sets, &args.out)
}

pub fn run_pipeline(config: &PipelineConfig, seed: u64) -> Result<(), CliError> {
    // validate everything before the first write
    let duration = duration_seconds(Some(config.hours), None)?;
    if config.folds < 2 {
        return Err(CliError::Usage("folds must be at least 2".into()));
    }
    if config.algorithms.is_empty() {
        return Err(CliError::Usage("no algorithms selected".into()));
    }
    let mut noise = config.noise.clone();
    noise.seed = seed;
    noise.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut grids = BTreeMap::new();
    for (family, params) in &config.grids {
        let grid = HyperGrid { family: *family, params: params.clone() };
        grid.points().map_err(|e| CliError::Usage(format!("grid for {family}: {e}")))?;
        grids.insert(*family, grid);
    }
    let scenes = load_scenes(std::slice::from_ref(&config.scenes))?;
    let nav = load_nav(&config.nav)?;
    let start = parse_start(config.start.as_deref(), &nav)?;

    let out = &config.output;
    let sim = out.join("sim");
    simulate(&scenes, &nav, start, duration, &noise, &sim)?;

    let mut feature_sets = Vec::new();
    for scene in &scenes {
        let tag = &scene.tag;
        let path = out.join("features").join(format!("{tag}.csv"));
        extract(
            [&sim.join(format!("{tag}_1.obs")), &sim.join(format!("{tag}_2.obs"))],
            &nav,
            Some(&sim.join(format!("{tag}_truth.csv"))),
            tag,
            &path,
        )?;
        feature_sets.push(load_dataset(&path)?);
    }

    let sets = location_protocol(feature_sets, config.target, seed)?;
    let datasets = out.join("datasets");
    write_sets(&sets, &datasets)?;

    let t0_path = datasets.join("T0.csv");
    let t0 = load_dataset(&t0_path)?;
    let mut models = Vec::new();
    for family in &config.algorithms {
        let (model, table) = fit(*family, grids.get(family).cloned(), None, &t0, config.folds, seed, &t0_path)?;
        let dir = out.join("models");
        write(&dir.join(format!("{family}.model")), model.to_bytes())?;
        if let Some(table) = table {
            write(&dir.join(format!("{family}.cv.csv")), table)?;
        }
        models.push(model);
    }

    let mut tests = Vec::new();
    for name in ["T1", "T2", "T3"] {
        tests.push((name.to_string(), load_dataset(&datasets.join(format!("{name}.csv")))?));
    }
    report(&models, &tests, &out.join("reports"))
}
