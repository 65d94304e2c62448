//! Subcommand bodies. Each writes its files into the output directory and
//! returns their names; numbers are printed with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use randnls::counting::{evaluate_corpus, write_count_csv};
use randnls::evolution::{free_evolution, Nonlinearity};
use randnls::field::{write_abs_csv, write_snapshot, FourierField, ModelParams, TimeGrid};
use randnls::norms::{default_space_grid, hs_norm, lq_space_norm, Exponent, NormSpec};
use randnls::probes::{self, ProbeReport};
use randnls::random_data::sample;
use randnls::solver::solve_pipeline;
use randnls::Error;
use serde_json::json;

use crate::config::Config;
use crate::manifest::Task;
use crate::CliError;

pub struct Outcome {
    pub outputs: Vec<String>,
    /// Set when outputs were written but the run did not succeed.
    pub failure: Option<CliError>,
}

pub fn uses_model_params(task: &Task) -> bool {
    match task {
        Task::Count => false,
        Task::Probe { id } => !matches!(
            id.as_str(),
            "linear_chaos_tail" | "trilinear_chaos_tail" | "strichartz_scaling"
        ),
        _ => true,
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

struct Files<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl Files<'_> {
    fn create(&mut self, name: String) -> Result<BufWriter<File>, CliError> {
        let f = File::create(self.dir.join(&name))?;
        self.names.push(name);
        Ok(BufWriter::new(f))
    }

    fn json(&mut self, name: String, value: &impl serde::Serialize) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn seeds(config: &Config) -> impl Iterator<Item = u64> {
    let start = config.run.seed;
    (0..config.run.samples as u64).map(move |k| start + k)
}

fn initial_data(config: &Config, seed: u64) -> FourierField {
    if config.run.zero_data {
        FourierField::zeros(config.params.lattice())
    } else {
        sample(&config.params, seed).field
    }
}

pub fn run_task(task: &Task, config: &Config, dir: &Path) -> Result<Outcome, CliError> {
    let mut files = Files { dir, names: Vec::new() };
    let failure = match task {
        Task::Sample => sample_data(config, &mut files)?,
        Task::Evolve => evolve(config, &mut files)?,
        Task::Solve => solve(config, &mut files)?,
        Task::Count => count(config, &mut files)?,
        Task::Norm => norm_table(config, &mut files)?,
        Task::Probe { id } => probe(id, config, &mut files)?,
    };
    Ok(Outcome {
        outputs: files.names,
        failure,
    })
}

fn sample_data(config: &Config, files: &mut Files) -> Result<Option<CliError>, CliError> {
    let p = &config.params;
    let mut summary = files.create("sample_summary.csv".into())?;
    writeln!(summary, "seed,l2_norm,hs_norm")?;
    for seed in seeds(config) {
        let phi = initial_data(config, seed);
        writeln!(summary, "{seed},{},{}", num(phi.l2_norm()), num(hs_norm(&phi, p.s)))?;
        let mut bin = files.create(format!("sample_{seed}.bin"))?;
        write_snapshot(&phi, &mut bin)?;
        bin.flush()?;
        let mut csv = files.create(format!("sample_{seed}.csv"))?;
        write_abs_csv(&phi, &mut csv)?;
        csv.flush()?;
    }
    summary.flush()?;
    Ok(None)
}

fn evolve(config: &Config, files: &mut Files) -> Result<Option<CliError>, CliError> {
    let p = &config.params;
    let grid = TimeGrid::uniform(p.delta, config.run.time_steps)?;
    let space = default_space_grid(&p.lattice());
    for seed in seeds(config) {
        let u = free_evolution(&initial_data(config, seed), &grid);
        let mut csv = files.create(format!("evolve_{seed}.csv"))?;
        writeln!(csv, "t,l2_norm,hs_norm,l4_norm")?;
        for (t, f) in grid.times().iter().zip(u.frames()) {
            let l4 = lq_space_norm(f, Exponent::Finite(4.0), space)?;
            writeln!(csv, "{},{},{},{}", num(*t), num(f.l2_norm()), num(hs_norm(f, p.s)), num(l4))?;
        }
        csv.flush()?;
        let mut bin = files.create(format!("evolve_{seed}_final.bin"))?;
        write_snapshot(u.frame(grid.len() - 1), &mut bin)?;
        bin.flush()?;
    }
    Ok(None)
}

fn solve(config: &Config, files: &mut Files) -> Result<Option<CliError>, CliError> {
    let p: &ModelParams = &config.params;
    let nl = Nonlinearity::new(p.rho).with_mean(p.mean);
    let mut failed = Vec::new();
    for seed in seeds(config) {
        let phi = initial_data(config, seed);
        match solve_pipeline(&nl, &phi, p.delta, p.s, &config.picard) {
            Ok(o) => {
                files.json(
                    format!("solve_{seed}.json"),
                    &json!({
                        "seed": seed,
                        "converged": true,
                        "plain_residual": o.plain_residual,
                        "agreement": o.agreement,
                        "diagnostics": o.diagnostics,
                    }),
                )?;
                let mut csv = files.create(format!("solve_{seed}.csv"))?;
                writeln!(csv, "t,mass,direct_mass,l2_difference")?;
                for (k, t) in o.u.times().iter().enumerate() {
                    let (a, b) = (o.u.frame(k), o.direct.frame(k));
                    writeln!(
                        csv,
                        "{},{},{},{}",
                        num(*t),
                        num(a.l2_norm()),
                        num(b.l2_norm()),
                        num((a - b).l2_norm())
                    )?;
                }
                csv.flush()?;
                let mut bin = files.create(format!("solve_{seed}_final.bin"))?;
                write_snapshot(o.u.frame(o.u.grid().len() - 1), &mut bin)?;
                bin.flush()?;
            }
            Err(Error::NoContraction {
                halvings,
                last_ratio,
                diagnostics,
            }) => {
                files.json(
                    format!("solve_{seed}.json"),
                    &json!({
                        "seed": seed,
                        "converged": false,
                        "halvings": halvings,
                        "last_ratio": last_ratio,
                        "diagnostics": diagnostics,
                    }),
                )?;
                failed.push(seed);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((!failed.is_empty()).then(|| CliError::Numerical(format!("no contraction for seeds {failed:?}"))))
}

fn count(config: &Config, files: &mut Files) -> Result<Option<CliError>, CliError> {
    if config.count.queries.is_empty() {
        return Err(CliError::Config("count.queries: nothing to count".into()));
    }
    let results = evaluate_corpus(&config.count.queries, config.count.budget as u128)?;
    for r in &results {
        println!("{}", r.cardinality);
    }
    let mut csv = files.create("count.csv".into())?;
    write_count_csv(&results, &mut csv)?;
    csv.flush()?;
    Ok(None)
}

fn norm_label(n: &NormSpec) -> String {
    format!(
        "{}(s={};b={};p={};q={})",
        n.kind.name(),
        n.s,
        n.b,
        n.p,
        n.q
    )
}

fn norm_table(config: &Config, files: &mut Files) -> Result<Option<CliError>, CliError> {
    let p = &config.params;
    let grid = TimeGrid::uniform(p.delta, config.run.time_steps)?;
    let mut csv = files.create("norms.csv".into())?;
    let labels: Vec<String> = config.norm.norms.iter().map(norm_label).collect();
    writeln!(csv, "seed,{}", labels.join(","))?;
    for seed in seeds(config) {
        let u = free_evolution(&initial_data(config, seed), &grid);
        let values = config
            .norm
            .norms
            .iter()
            .map(|n| n.evaluate(&u).map(num))
            .collect::<randnls::Result<Vec<String>>>()?;
        writeln!(csv, "{seed},{}", values.join(","))?;
    }
    csv.flush()?;
    Ok(None)
}

fn probe(id: &str, config: &Config, files: &mut Files) -> Result<Option<CliError>, CliError> {
    let p = &config.params;
    let (n, seed) = (config.run.samples, config.run.seed);
    let c = &config.probe;
    let report: ProbeReport = match id {
        "coefficient_growth" => probes::probe_coefficient_growth(p, n, seed, &c.coefficient_growth)?,
        "linear_chaos_tail" => {
            probes::probe_linear_chaos_tail(&c.linear_chaos_tail.coefficients, n, seed, &c.linear_chaos_tail.settings)?
        }
        "random_lp_decay" => probes::probe_random_lp_decay(p, n, seed, &c.random_lp_decay)?,
        "trilinear_chaos_tail" => probes::probe_trilinear_chaos_tail(
            &c.trilinear_chaos_tail.terms,
            n,
            seed,
            &c.trilinear_chaos_tail.settings,
        )?,
        "strichartz_scaling" => probes::probe_strichartz_scaling(&c.strichartz_scaling, seed)?,
        "trilinear_estimate" => probes::probe_trilinear_estimate(p, n, seed, &c.trilinear_estimate)?,
        "gauge_and_solution" => probes::probe_gauge_and_solution(p, n, seed, &config.solution_probe())?,
        other => return Err(CliError::Config(format!("unknown probe {other:?}"))),
    };
    let json_name = format!("probe_{id}.json");
    let mut w = files.create(json_name.clone())?;
    report.write_json(&mut w)?;
    w.flush()?;
    let mut w = files.create(format!("probe_{id}.csv"))?;
    report.table.write_csv(&mut w)?;
    w.flush()?;
    let mut w = files.create("index.csv".into())?;
    probes::write_index(&[(json_name, &report)], &mut w)?;
    w.flush()?;
    for check in &report.checks {
        println!(
            "{} {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            num(check.value)
        );
    }
    if report.passed {
        return Ok(None);
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Ok(Some(CliError::Numerical(if report.degenerate {
        format!("probe {id} is degenerate")
    } else {
        format!("probe {id} failed checks: {}", failed.join("; "))
    })))
}
