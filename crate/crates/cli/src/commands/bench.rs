use zipln::simbench::{emit_report, run_scenario_grid, BenchMethod, ScenarioGrid};

use crate::args::{BenchArgs, Command};
use crate::error::{exit, CliError, CliResult};
use crate::manifest::{prepare_output, RunManifest};

pub fn grid(args: &BenchArgs) -> ScenarioGrid {
    let mut grid = if args.paper {
        ScenarioGrid::paper(args.axis, args.zi)
    } else {
        ScenarioGrid::desk(args.axis, args.zi)
    };
    if !args.values.is_empty() {
        grid.values = args.values.clone();
    }
    if let Some(r) = args.replicates {
        grid.replicates = r;
    }
    let base = &mut grid.base;
    base.n = args.n.unwrap_or(base.n);
    base.p = args.p.unwrap_or(base.p);
    base.d = args.d.unwrap_or(base.d);
    base.d0 = args.d0.unwrap_or(base.d0);
    base.gamma = args.gamma.unwrap_or(base.gamma);
    base.rho = args.pi.unwrap_or(base.rho);
    grid.seed = args.seed;
    grid.fit.max_iters = args.max_iters;
    grid.fit.rel_tol = args.tol;
    grid
}

pub fn run(mut args: BenchArgs) -> CliResult<i32> {
    let grid = grid(&args);
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let methods = if args.methods.is_empty() { BenchMethod::ALL.to_vec() } else { args.methods.clone() };
    if args.zi == zipln::model::ZiVariant::None {
        return Err(CliError::Usage("bench needs a zero-inflated scenario".into()));
    }
    let out = prepare_output(&args.out)?;
    args.out = out.clone();

    log::info!(
        "{} cells x {} replicates x {} methods on {} workers",
        grid.values.len(),
        grid.replicates,
        methods.len(),
        args.jobs
    );
    let run = run_scenario_grid(&grid, &methods, args.jobs)?;
    emit_report(&run, &grid, &out, args.record_timing)?;
    let failures = run.records.iter().filter(|r| r.status.starts_with("error")).count();
    if failures > 0 {
        log::warn!("{failures} of {} fits failed; see records.csv", run.records.len());
    }

    let aggregate = format!("aggregate_{}.csv", grid.axis);
    let mut manifest = RunManifest::new(Command::Bench(args.clone()), &out);
    manifest.zi_config = Some(zipln::model::ZiConfig::new(args.zi));
    manifest.seed = Some(args.seed);
    manifest.outputs = vec!["records.csv".into(), aggregate.clone(), "metadata.json".into()];
    manifest.write()?;

    let table = std::fs::read_to_string(out.join(&aggregate)).map_err(CliError::io(format!("cannot read {aggregate}")))?;
    print!("{table}");
    Ok(exit::OK)
}
