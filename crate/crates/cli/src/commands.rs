use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use boundnet::eval::{
    bench_compare, generate_synthetic_net, imputation_accuracy, sample_from_network, BenchBudget, NetworkFile,
    NetworkMetadata,
};
use boundnet::inference::build_junction_tree;
use boundnet::{
    bic_family, build_cache, estimate_parameters, inject_mcar, learn as learn_structure, sem_run, Algorithm, BayesNet,
    CacheConfig, CategoricalDataset, Error, Evidence, ImputationMode, KTree, LearnerConfig, MissingMask,
    ParentSetCache, Result, SemConfig, MISSING,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{
    BenchArgs, CacheOpts, GenNetArgs, InferArgs, InjectArgs, LearnArgs, ParentsetsArgs, SampleArgs, ScoreArgs, SemArgs,
};

pub struct Context {
    pub missing_token: String,
    pub seed: u64,
}

macro_rules! outln {
    ($out:expr, $($arg:tt)*) => {
        let _ = writeln!($out, $($arg)*);
    };
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn seconds(s: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s)
        .map_err(|_| Error::InvalidArgument(format!("{what} must be a non-negative number of seconds")))
}

fn metadata(k: Option<usize>, score: Option<f64>, seed: u64) -> NetworkMetadata {
    NetworkMetadata {
        k,
        score,
        seed: Some(seed),
        tool_version: concat!("boundnet ", env!("CARGO_PKG_VERSION")).to_string(),
    }
}

fn load_net(path: &Path) -> Result<(BayesNet, Option<KTree>)> {
    NetworkFile::load(path)?.to_net()
}

fn load_net_with_ktree(path: &Path) -> Result<(BayesNet, KTree)> {
    let (net, kt) = load_net(path)?;
    let kt = kt.ok_or_else(|| Error::Format("network file has no k-tree section; exact inference needs one".into()))?;
    Ok((net, kt))
}

fn cache_config(opts: &CacheOpts, n: usize) -> Result<CacheConfig> {
    Ok(CacheConfig {
        k: opts.k,
        time_budget: seconds(opts.cache_time.unwrap_or(n as f64), "--cache-time")?,
        max_explored: opts.max_explored.unwrap_or(usize::MAX),
        workers: opts.workers,
    })
}

pub fn parentsets(a: &ParentsetsArgs, ctx: &Context) -> Result<()> {
    let mut out = String::new();
    let ds = CategoricalDataset::load_csv(&a.data, &ctx.missing_token)?;
    let cache = build_cache(&ds, &cache_config(&a.cache, ds.n_vars())?)?;
    cache.save(&a.out)?;
    outln!(out, "variable\tentries\tbest\tworst\texplored");
    for (v, vc) in cache.vars.iter().enumerate() {
        outln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            ds.variable(v).name,
            vc.len(),
            vc.best,
            vc.worst,
            vc.explored
        );
    }
    let total: usize = cache.vars.iter().map(|v| v.len()).sum();
    eprintln!(
        "cached {total} parent sets for {} variables (k = {}) in {}",
        ds.n_vars(),
        a.cache.k,
        a.out.display()
    );
    emit(&out)?;
    Ok(())
}

pub fn learn(a: &LearnArgs, ctx: &Context) -> Result<()> {
    let mut out = String::new();
    let ds = CategoricalDataset::load_csv(&a.data, &ctx.missing_token)?;
    let cache = match &a.cache_file {
        Some(path) => {
            let cache = ParentSetCache::load(path)?;
            if cache.n_vars() != ds.n_vars() {
                return Err(Error::InvalidArgument(format!(
                    "cache has {} variables, data has {}",
                    cache.n_vars(),
                    ds.n_vars()
                )));
            }
            cache
        }
        None => build_cache(&ds, &cache_config(&a.cache, ds.n_vars())?)?,
    };
    let algorithm: Algorithm = a.algo.parse()?;
    let time_budget = match (a.time, a.max_iter) {
        (None, None) => Some(Duration::from_secs_f64(ds.n_vars() as f64 / 10.0)),
        (t, _) => t.map(|t| seconds(t, "--time")).transpose()?,
    };
    let config = LearnerConfig {
        k: a.cache.k,
        time_budget,
        max_iterations: a.max_iter,
        seed: ctx.seed,
        workers: a.cache.workers,
    };
    let result = learn_structure(&cache, &config, algorithm)?;

    outln!(out, "variable\tparents\tscore");
    for v in 0..ds.n_vars() {
        let parents: Vec<&str> = result
            .dag
            .parents(v)
            .iter()
            .map(|&p| ds.variable(p).name.as_str())
            .collect();
        let score = cache.score_of(v, result.dag.parents(v)).unwrap_or(f64::NAN);
        outln!(out, "{}\t{}\t{}", ds.variable(v).name, parents.join(","), score);
    }
    if let Some(path) = &a.report {
        let mut s = String::from("iteration\tscore\n");
        for (i, score) in result.per_iteration_scores.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{score}");
        }
        write_file(path, &s)?;
    }
    if let Some(path) = &a.out {
        let net = estimate_parameters(&ds, &result.dag, a.alpha)?;
        let k = result.ktree.k();
        NetworkFile::from_net(
            &net,
            Some(&result.ktree),
            metadata(Some(k), Some(result.score), ctx.seed),
        )
        .save(path)?;
    }
    eprintln!(
        "{algorithm}: score {:.4} after {} iterations (best at {}), {} arcs, {:.2}s",
        result.score,
        result.iterations,
        result.best_iteration,
        result.dag.arc_count(),
        result.elapsed.as_secs_f64()
    );
    emit(&out)?;
    Ok(())
}

pub fn score(a: &ScoreArgs, ctx: &Context) -> Result<()> {
    let mut out = String::new();
    let (net, _) = load_net(&a.net)?;
    let ds = CategoricalDataset::load_csv(&a.data, &ctx.missing_token)?.recode_to(net.variables())?;
    outln!(out, "variable\tparents\tbic");
    let mut total = 0.0;
    for v in 0..net.n_vars() {
        let fs = bic_family(&ds, v, net.dag().parents(v))?;
        total += fs.score;
        let parents: Vec<&str> = fs.parents.iter().map(|&p| net.variables()[p].name.as_str()).collect();
        outln!(out, "{}\t{}\t{}", net.variables()[v].name, parents.join(","), fs.score);
    }
    if ds.is_complete() {
        let ll = boundnet::eval::testset_ll(&net, &ds)?;
        eprintln!("BIC {total:.4}; log-likelihood under the network's parameters {ll:.4}");
    } else {
        eprintln!("BIC {total:.4} (families scored on rows where they are fully observed)");
    }
    emit(&out)?;
    Ok(())
}

fn parse_evidence(net: &BayesNet, text: &str) -> Result<Evidence> {
    let mut e = Evidence::empty(net.n_vars());
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, state) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("evidence item `{item}` is not NAME=STATE")))?;
        let (name, state) = (name.trim(), state.trim());
        let v = net
            .var_index(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
        let s = net.variables()[v]
            .state_index(state)
            .ok_or_else(|| Error::UnknownState {
                variable: name.to_string(),
                state: state.to_string(),
            })?;
        e.set(v, s);
    }
    Ok(e)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let mut out = String::new();
    let (net, kt) = load_net_with_ktree(&a.net)?;
    let jt = build_junction_tree(&net, &kt)?;
    let e = parse_evidence(&net, &a.evidence)?;
    let vars = net.variables();
    if a.prob {
        let p = jt.prob_evidence(&e)?;
        outln!(out, "log_probability\tprobability");
        outln!(out, "{}\t{}", p.log, p.prob);
        eprintln!("P(evidence) = {:e}", p.prob);
    } else if a.mpe {
        let mpe = jt.mpe(&e)?;
        outln!(out, "variable\tstate");
        for (v, &s) in mpe.assignment.iter().enumerate() {
            outln!(out, "{}\t{}", vars[v].name, vars[v].states[s as usize]);
        }
        eprintln!("most probable completion has log probability {:.6}", mpe.log_prob);
    } else if let Some(target) = &a.target {
        let t = net
            .var_index(target)
            .ok_or_else(|| Error::UnknownVariable(target.clone()))?;
        let m = jt.marginal(&e, t)?;
        outln!(out, "state\tprobability");
        for (s, p) in m.iter().enumerate() {
            outln!(out, "{}\t{p}", vars[t].states[s]);
        }
    } else {
        let all = jt.marginals(&e)?;
        outln!(out, "variable\tstate\tprobability");
        for (v, m) in all.iter().enumerate() {
            for (s, p) in m.iter().enumerate() {
                outln!(out, "{}\t{}\t{p}", vars[v].name, vars[v].states[s]);
            }
        }
    }
    emit(&out)?;
    Ok(())
}

pub fn sample(a: &SampleArgs, ctx: &Context) -> Result<()> {
    let (net, _) = load_net(&a.net)?;
    let ds = sample_from_network(&net, a.rows, &mut ChaCha8Rng::seed_from_u64(ctx.seed))?;
    ds.save_csv(&a.out, &ctx.missing_token)?;
    eprintln!(
        "wrote {} rows over {} variables to {}",
        ds.n_rows(),
        ds.n_vars(),
        a.out.display()
    );
    Ok(())
}

pub fn gen_net(a: &GenNetArgs, ctx: &Context) -> Result<()> {
    let (net, kt) = generate_synthetic_net(a.n, a.k, a.max_arity, &mut ChaCha8Rng::seed_from_u64(ctx.seed))?;
    NetworkFile::from_net(&net, Some(&kt), metadata(Some(a.k), None, ctx.seed)).save(&a.out)?;
    eprintln!(
        "generated {} variables, {} arcs, treewidth <= {} into {}",
        net.n_vars(),
        net.dag().arc_count(),
        a.k,
        a.out.display()
    );
    Ok(())
}

fn mask_tsv(ds: &CategoricalDataset, mask: &MissingMask) -> String {
    let mut s = String::from("row\tvariable\toriginal\n");
    for c in &mask.cells {
        let var = ds.variable(c.var);
        let _ = writeln!(s, "{}\t{}\t{}", c.row + 1, var.name, var.states[c.original as usize]);
    }
    s
}

pub fn inject_missing(a: &InjectArgs, ctx: &Context) -> Result<()> {
    let ds = CategoricalDataset::load_csv(&a.data, &ctx.missing_token)?;
    let (holes, mask) = inject_mcar(&ds, a.rate, ctx.seed)?;
    holes.save_csv(&a.out, &ctx.missing_token)?;
    if let Some(path) = &a.mask_out {
        write_file(path, &mask_tsv(&ds, &mask))?;
    }
    eprintln!(
        "blanked {} of {} cells ({} rows now incomplete)",
        mask.len(),
        ds.n_rows() * ds.n_vars(),
        holes.incomplete_rows().len()
    );
    Ok(())
}

pub fn sem_impute(a: &SemArgs, ctx: &Context) -> Result<()> {
    let mut out = String::new();
    let ds = CategoricalDataset::load_csv(&a.data, &ctx.missing_token)?;
    let mode: ImputationMode = a.mode.parse()?;
    let config = SemConfig {
        k: a.k,
        t: a.t,
        max_sem_iterations: a.max_sem_iter,
        alpha: a.alpha,
        seed: ctx.seed,
        workers: a.workers,
        mode,
        max_explored: a.max_explored.unwrap_or(usize::MAX),
        max_learn_iterations: a.max_learn_iter,
        stop_when_converged: true,
    };
    let result = sem_run(&ds, &config)?;
    result.imputed.save_csv(&a.out, &ctx.missing_token)?;
    if let Some(path) = &a.net_out {
        let meta = metadata(Some(result.ktree.k()), Some(result.score), ctx.seed);
        NetworkFile::from_net(&result.net, Some(&result.ktree), meta).save(path)?;
    }
    outln!(out, "iteration\tscore");
    for (i, s) in result.per_iteration_scores.iter().enumerate() {
        outln!(out, "{}\t{s}", i + 1);
    }
    eprintln!(
        "imputed {} cells in {} iterations ({}), final score {:.4}, {:.1}s",
        ds.missing_count(),
        result.iterations,
        if result.converged {
            "converged"
        } else {
            "iteration cap reached"
        },
        result.score,
        result.elapsed.as_secs_f64()
    );
    if let Some(path) = &a.original {
        let original = CategoricalDataset::load_csv(path, &ctx.missing_token)?.recode_to(ds.variables())?;
        if original.n_rows() != ds.n_rows() {
            return Err(Error::InvalidArgument(
                "original and incomplete data differ in row count".into(),
            ));
        }
        let mut mask = MissingMask::default();
        for r in 0..ds.n_rows() {
            for v in 0..ds.n_vars() {
                let o = original.cell(r, v);
                if ds.cell(r, v) == MISSING && o != MISSING {
                    mask.cells.push(boundnet::dataset::InjectedCell {
                        row: r,
                        var: v,
                        original: o,
                    });
                }
            }
        }
        let sem = imputation_accuracy(&original, &result.imputed, &mask)?;
        let baseline = imputation_accuracy(&original, &ds.mode_imputed(), &mask)?;
        eprintln!(
            "accuracy {:.2}% per instance ({:.2}% per cell); mode imputation {:.2}% ({:.2}%)",
            100.0 * sem.per_instance,
            100.0 * sem.per_cell,
            100.0 * baseline.per_instance,
            100.0 * baseline.per_cell
        );
    }
    emit(&out)?;
    Ok(())
}

pub fn bench(a: &BenchArgs, ctx: &Context) -> Result<()> {
    let datasets = a
        .data
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, CategoricalDataset::load_csv(p, &ctx.missing_token)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let algorithms = a.algos.iter().map(|s| s.parse()).collect::<Result<Vec<Algorithm>>>()?;
    let seeds = if a.seeds.is_empty() {
        vec![ctx.seed]
    } else {
        a.seeds.clone()
    };
    let budget = BenchBudget {
        cache_time: seconds(a.cache_time, "--cache-time")?,
        max_explored: a.max_explored.unwrap_or(usize::MAX),
        learn_time: Some(seconds(a.time, "--time")?),
        learn_iterations: a.max_iter,
        workers: a.workers,
    };
    let report = bench_compare(&datasets, &algorithms, &a.k, &budget, &seeds)?;
    if let Some(prefix) = &a.out_prefix {
        write_file(Path::new(&format!("{prefix}runs.tsv")), &report.runs_tsv())?;
        write_file(Path::new(&format!("{prefix}pairs.tsv")), &report.pairs_tsv())?;
        write_file(Path::new(&format!("{prefix}long.tsv")), &report.long_format())?;
    }
    emit(&report.pairs_tsv())?;
    eprint!("{}", report.summary());
    Ok(())
}
