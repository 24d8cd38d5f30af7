use nalgebra::DMatrix;
use serde::Serialize;
use zipln::model::{sample_dataset, scenario_params, ScenarioSpec, ZiConfig, ZiCovariates, ZiParams, ZiVariant};

use super::{write_json, Outputs};
use crate::args::{Command, SimulateArgs};
use crate::error::{exit, CliError, CliResult};
use crate::manifest::{fingerprint, prepare_output, RunManifest};
use crate::table::{fmt_real, names};

#[derive(Serialize)]
struct ScenarioRecord {
    spec: ScenarioSpec,
    alpha: f64,
    seed: u64,
    zero_fraction: f64,
    poisson_zero_fraction: f64,
}

pub fn run(mut args: SimulateArgs) -> CliResult<i32> {
    let usage = |e: zipln::ZiplnError| CliError::Usage(e.to_string());
    // ND accepts the closed interval; the scenario draw itself needs an
    // interior level, which ND does not use for any random draw.
    let nd_edge = args.zi == ZiVariant::Nd && (args.pi == 0.0 || args.pi == 1.0);
    if !(0.0..=1.0).contains(&args.pi) {
        return Err(CliError::Usage(format!("--pi must lie in [0, 1], got {}", args.pi)));
    }
    let spec = ScenarioSpec {
        variant: args.zi,
        n: args.n,
        p: args.p,
        d: args.d,
        d0: if matches!(args.zi, ZiVariant::Cd | ZiVariant::Rd) { args.d0 } else { 0 },
        gamma: args.gamma,
        rho: if nd_edge || args.zi == ZiVariant::None { 0.5 } else { args.pi },
    };
    let mut scenario = scenario_params(&spec, args.seed).map_err(usage)?;
    if nd_edge {
        scenario.params = scenario.params.with_zi(ZiParams::Nd { pi: args.pi });
    }
    let (data, truth) = sample_dataset(&scenario.params, &scenario.design, args.seed.wrapping_add(1))?;

    let out = prepare_output(&args.out)?;
    args.out = out.clone();
    let (n, p) = (data.n(), data.p());
    let samples = names("s", n);
    let vars = names("v", p);
    let xs = names("x", args.d);
    let x0s = names("z", scenario.design.d0());

    let mut o = Outputs::new(&out);
    o.counts("counts.csv", "sample", &samples, &vars, data.counts())?;
    o.matrix("covariates.csv", "sample", &samples, &xs, data.covariates())?;
    match data.zi_covariates() {
        ZiCovariates::None => {}
        ZiCovariates::Rows(x0) => o.matrix("zi_covariates.csv", "sample", &samples, &x0s, x0)?,
        // One row per variable, as `zipln fit` expects for rd.
        ZiCovariates::Columns(x0bar) => o.matrix("zi_covariates.csv", "variable", &vars, &x0s, &x0bar.transpose())?,
    }
    o.matrix("offsets.csv", "sample", &samples, &vars, data.offsets())?;
    o.matrix("truth_z.csv", "sample", &samples, &vars, &truth.z)?;
    o.counts("truth_w.csv", "sample", &samples, &vars, &truth.w)?;
    o.counts("truth_t.csv", "sample", &samples, &vars, &truth.t)?;
    let theta = &scenario.params;
    o.matrix("truth_sigma.csv", "variable", &vars, &vars, theta.sigma())?;
    o.matrix("truth_omega.csv", "variable", &vars, &vars, theta.omega())?;
    o.matrix("truth_b.csv", "covariate", &xs, &vars, theta.b())?;
    match theta.zi() {
        ZiParams::None => {}
        ZiParams::Nd { pi } => {
            let path = o.path("truth_zi.csv");
            std::fs::write(&path, format!("parameter,value\npi,{}\n", fmt_real(*pi)))
                .map_err(CliError::io(format!("cannot write {}", path.display())))?;
        }
        ZiParams::Cd { b0 } => o.matrix("truth_zi.csv", "covariate", &x0s, &vars, b0)?,
        ZiParams::Rd { b0bar } => o.matrix("truth_zi.csv", "sample", &samples, &x0s, b0bar)?,
    }
    let zeros = |m: &DMatrix<f64>| m.iter().filter(|v| **v == 0.0).count() as f64 / m.len() as f64;
    write_json(
        &mut o,
        "scenario.json",
        &ScenarioRecord {
            spec,
            alpha: scenario.alpha,
            seed: args.seed,
            zero_fraction: zeros(data.counts()),
            poisson_zero_fraction: zeros(&truth.t),
        },
    )?;

    let mut manifest = RunManifest::new(Command::Simulate(args.clone()), &out);
    manifest.zi_config = Some(ZiConfig::new(args.zi));
    manifest.seed = Some(args.seed);
    manifest.fingerprint = Some(fingerprint(data.counts()));
    manifest.outputs = o.files;
    manifest.write()?;
    println!("wrote n = {n}, p = {p} dataset to {}", out.display());
    Ok(exit::OK)
}
