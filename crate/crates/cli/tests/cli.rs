mod common;

use common::*;
use nalgebra::DMatrix;
use zipln::model::toeplitz_cov;

#[test]
fn simulate_is_deterministic_and_pi_one_gives_zeros() {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate(tmp.path(), "a", &["--n", "40", "--p", "5", "--seed", "11"]);
    let b = simulate(tmp.path(), "b", &["--n", "40", "--p", "5", "--seed", "11"]);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    for (name, bytes) in &sa {
        if name != "manifest.json" {
            assert_eq!(bytes, &sb[name], "{name} differs");
        }
    }
    let c = simulate(tmp.path(), "c", &["--n", "40", "--p", "5", "--seed", "12"]);
    assert_ne!(sa["counts.csv"], snapshot(&c)["counts.csv"]);

    let z = simulate(tmp.path(), "z", &["--n", "30", "--p", "4", "--pi", "1"]);
    assert!(matrix(&z.join("counts.csv")).iter().all(|v| *v == 0.0));
    assert!(matrix(&z.join("truth_t.csv")).iter().any(|v| *v > 0.0));
}

#[test]
fn simulated_sigma_is_the_logged_toeplitz() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &["--n", "10", "--p", "6", "--seed", "4"]);
    let alpha = json(&sim.join("scenario.json"))["alpha"].as_f64().unwrap();
    let sigma = matrix(&sim.join("truth_sigma.csv"));
    assert_eq!(sigma, toeplitz_cov(6, alpha).unwrap());
}

#[test]
fn simulate_rejects_invalid_configurations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&zipln(&["simulate", "--n", "10", "--p", "3", "--zi", "cd", "--d0", "0", "--out", s(&out)])), 64);
    assert_eq!(code(&zipln(&["simulate", "--n", "10", "--p", "3", "--zi", "rd", "--pi", "1", "--out", s(&out)])), 64);
    assert_eq!(code(&zipln(&["simulate", "--n", "10", "--p", "3", "--zi", "xx", "--out", s(&out)])), 64);
}

#[test]
fn fit_round_trip_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &["--n", "300", "--p", "8", "--pi", "0.3", "--seed", "21"]);
    let out = tmp.path().join("fit");
    let res = fit_sim(&sim, &out, &[]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    // The fit read exactly the simulated counts.
    let fp = |dir: &std::path::Path| json(&dir.join("manifest.json"))["fingerprint"].clone();
    assert_eq!(fp(&sim), fp(&out));

    for f in ["omega.csv", "sigma.csv", "b.csv", "zi.csv", "m.csv", "s.csv", "p.csv", "elbo_trace.csv", "criteria.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let pi_hat: f64 = std::fs::read_to_string(out.join("zi.csv")).unwrap().lines().nth(1).unwrap()[3..].parse().unwrap();
    assert!((pi_hat - 0.3).abs() < 0.05, "pi_hat = {pi_hat}");

    let y = matrix(&sim.join("counts.csv"));
    let p = matrix(&out.join("p.csv"));
    assert!(y.iter().zip(p.iter()).all(|(y, p)| *y == 0.0 || *p == 0.0));
    let omega = matrix(&out.join("omega.csv"));
    let sigma = matrix(&out.join("sigma.csv"));
    assert!((omega * sigma - DMatrix::<f64>::identity(8, 8)).amax() < 1e-8);
    let trace = matrix(&out.join("elbo_trace.csv"));
    let criteria = json(&out.join("criteria.json"));
    assert_eq!(criteria["elbo"].as_f64().unwrap(), trace[(trace.nrows() - 1, 0)]);
}

#[test]
fn plain_fit_has_zero_p() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &["--n", "60", "--p", "4", "--seed", "2"]);
    let out = tmp.path().join("pln");
    let res = fit_sim(&sim, &out, &["--zi", "none"]);
    assert_eq!(code(&res), 0);
    assert!(matrix(&out.join("p.csv")).iter().all(|v| *v == 0.0));
    assert!(!out.join("zi.csv").exists());
}

#[test]
fn gradient_and_covariate_variants_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cd = simulate(tmp.path(), "cd", &["--n", "80", "--p", "4", "--zi", "cd", "--seed", "5"]);
    let zi = cd.join("zi_covariates.csv");
    let out = tmp.path().join("fit_cd");
    let res = fit_sim(&cd, &out, &["--zi", "cd", "--zi-covariates", s(&zi), "--zi-formula", "0 + ."]);
    assert!(matches!(code(&res), 0 | 2), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(matrix(&out.join("zi.csv")).shape(), (2, 4));

    let rd = simulate(tmp.path(), "rd", &["--n", "60", "--p", "5", "--zi", "rd", "--seed", "6"]);
    let zi = rd.join("zi_covariates.csv");
    let out = tmp.path().join("fit_rd");
    let res = fit_sim(&rd, &out, &["--zi", "rd", "--zi-covariates", s(&zi), "--zi-formula", "0 + ."]);
    assert!(matches!(code(&res), 0 | 2), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(matrix(&out.join("zi.csv")).shape(), (60, 2));

    let out = tmp.path().join("fit_enh");
    let res = fit_sim(&rd, &out, &["--zi", "nd", "--elbo", "enhanced", "--analytic-p", "--max-iters", "50"]);
    assert!(matches!(code(&res), 0 | 2), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["fit_config"]["method"], "grad");

    // VEM is limited to the standard bound.
    let res = fit_sim(&rd, &tmp.path().join("x"), &["--method", "vem", "--elbo", "enhanced"]);
    assert_eq!(code(&res), 64);
    let res = fit_sim(&rd, &tmp.path().join("x"), &["--zi", "nd", "--zi-covariates", s(&zi)]);
    assert_eq!(code(&res), 64);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &["--n", "50", "--p", "4", "--seed", "8"]);

    // One-hot columns plus the default intercept are collinear.
    let counts = sim.join("counts.csv");
    let cov = sim.join("covariates.csv");
    let out = tmp.path().join("rank");
    let res = zipln(&["fit", s(&counts), "--covariates", s(&cov), "--out", s(&out)]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).contains("full column rank"));

    let res = fit_sim(&sim, &tmp.path().join("short"), &["--max-iters", "2"]);
    assert_eq!(code(&res), 2);
    assert!(tmp.path().join("short/m.csv").exists());

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "id,a,b\ns1,1,2\ns2,1,2\ns3,4,1.5\n").unwrap();
    let res = zipln(&["fit", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&res), 4);
    assert!(String::from_utf8_lossy(&res.stderr).contains("bad.csv:4:"), "{}", String::from_utf8_lossy(&res.stderr));
    std::fs::write(&bad, "id,a,b\ns1,1,2\ns2,1\n").unwrap();
    assert_eq!(code(&zipln(&["fit", s(&bad), "--out", s(&tmp.path().join("o"))])), 4);

    assert_eq!(code(&zipln(&["fit"])), 64);
    assert_eq!(code(&zipln(&["frobnicate"])), 64);
    assert_eq!(code(&zipln(&["--help"])), 0);
}

#[test]
fn prevalence_filter_and_total_count_offsets() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("y.csv");
    std::fs::write(&path, "id,a,b,rare\ns1,3,5,0\ns2,0,2,0\ns3,4,0,1\ns4,2,7,0\ns5,6,1,0\ns6,1,3,0\n").unwrap();
    let out = tmp.path().join("f");
    let res = zipln(&["fit", s(&path), "--min-prevalence", "0.5", "--offset-total-counts", "--out", s(&out)]);
    assert!(matches!(code(&res), 0 | 2), "{}", String::from_utf8_lossy(&res.stderr));
    let (vars, _, _) = read_csv(&out.join("m.csv"));
    assert_eq!(vars, ["a", "b"]);
    assert_eq!(json(&out.join("summary.json"))["dropped_variables"][0], "rare");
    assert!(String::from_utf8_lossy(&res.stderr).contains("min-prevalence"));
}

/// A sample duplicated at twice the depth gets nearly the same latent mean
/// once offsets are log total counts: its likelihood is the square of the
/// original one, so only the weight of the prior differs.
#[test]
fn total_count_offsets_absorb_sequencing_depth() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &["--n", "80", "--p", "5", "--pi", "0.2", "--gamma", "3", "--seed", "9"]);
    let (vars, ids, y) = read_csv(&sim.join("counts.csv"));
    let (_, _, x) = read_csv(&sim.join("covariates.csv"));
    let mut counts = format!("sample,{}\n", vars.join(","));
    let mut cov = "sample,x1,x2\n".to_string();
    for i in (0..ids.len()).filter(|&i| y.row(i).sum() > 0.0) {
        let row: Vec<String> = y.row(i).iter().map(|v| (*v as u64).to_string()).collect();
        counts += &format!("{},{}\n", ids[i], row.join(","));
        cov += &format!("{},{},{}\n", ids[i], x[(i, 0)], x[(i, 1)]);
    }
    let row: Vec<String> = y.row(0).iter().map(|v| (2.0 * v) as u64).map(|v| v.to_string()).collect();
    counts += &format!("dup,{}\n", row.join(","));
    cov += &format!("dup,{},{}\n", x[(0, 0)], x[(0, 1)]);
    let (yp, xp) = (tmp.path().join("y.csv"), tmp.path().join("x.csv"));
    std::fs::write(&yp, counts).unwrap();
    std::fs::write(&xp, cov).unwrap();
    let out = tmp.path().join("fit");
    let res = zipln(&[
        "fit", s(&yp), "--covariates", s(&xp), "--formula", "0 + .", "--offset-total-counts", "--zi", "nd", "--out", s(&out),
    ]);
    assert!(matches!(code(&res), 0 | 2), "{}", String::from_utf8_lossy(&res.stderr));
    let m = matrix(&out.join("m.csv"));
    let last = m.nrows() - 1;
    for j in 0..m.ncols() {
        if y[(0, j)] >= 5.0 {
            let gap = (m[(0, j)] - m[(last, j)]).abs();
            assert!(gap < 0.1, "variable {j}: {} vs {}", m[(0, j)], m[(last, j)]);
        }
    }
}

#[test]
fn compare_marks_best_and_checks_fingerprints() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &["--n", "150", "--p", "5", "--pi", "0.3", "--seed", "31"]);
    let zi = tmp.path().join("zipln");
    let pln = tmp.path().join("pln");
    assert_eq!(code(&fit_sim(&sim, &zi, &[])), 0);
    assert_eq!(code(&fit_sim(&sim, &pln, &["--zi", "none"])), 0);

    let single = ok(&["compare", s(&zi)]);
    let text = String::from_utf8_lossy(&single.stdout);
    assert_eq!(text.lines().nth(1).unwrap().matches('*').count(), 3);

    let cmp = tmp.path().join("cmp");
    let out = ok(&["compare", s(&pln), s(&zi), "--out", s(&cmp)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("zipln"));
    let report = json(&cmp.join("report.json"));
    assert_eq!(report["rows"][report["best_bic"].as_u64().unwrap() as usize]["name"], "zipln");

    // BIC audit from the emitted table.
    let mut rdr = csv::Reader::from_path(cmp.join("criteria.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let (n, elbo, k, bic): (f64, f64, f64, f64) =
            (rec[3].parse().unwrap(), rec[5].parse().unwrap(), rec[6].parse().unwrap(), rec[8].parse().unwrap());
        assert!((elbo - 0.5 * k * n.ln() - bic).abs() < 1e-6);
    }

    let other = simulate(tmp.path(), "other", &["--n", "150", "--p", "5", "--seed", "32"]);
    let fit_other = tmp.path().join("fit_other");
    assert_eq!(code(&fit_sim(&other, &fit_other, &[])), 0);
    let res = zipln(&["compare", s(&zi), s(&fit_other)]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("fingerprint mismatch"));
}

#[test]
fn project_scores_and_truncation() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", &["--n", "60", "--p", "5", "--seed", "41"]);
    let fit = tmp.path().join("fit");
    assert!(matches!(code(&fit_sim(&sim, &fit, &[])), 0 | 2));
    let proj = tmp.path().join("proj");
    ok(&["project", s(&fit), "--k", "5", "--out", s(&proj)]);
    let scores = matrix(&proj.join("scores.csv"));
    let loadings = matrix(&proj.join("loadings.csv"));
    let m = matrix(&fit.join("m.csv"));
    let means = m.row_mean();
    let centered = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - means[j]);
    assert!((scores * loadings.transpose() - centered).amax() < 1e-8);
    let ev = matrix(&proj.join("explained_variance.csv"));
    assert!(ev.as_slice().windows(2).all(|w| w[0] >= w[1]));
    assert!(ev.sum() <= 1.0 + 1e-12);

    // A rank-one latent mean keeps one component.
    let r1 = tmp.path().join("rank1");
    std::fs::create_dir_all(&r1).unwrap();
    let mut text = "sample,a,b,c\n".to_string();
    for i in 0..6 {
        let u = i as f64 - 2.5;
        text += &format!("s{i},{},{},{}\n", u, -2.0 * u, 0.5 * u);
    }
    std::fs::write(r1.join("m.csv"), text).unwrap();
    let out = zipln(&["project", s(&r1), "--k", "3", "--out", s(&tmp.path().join("p1"))]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank 1"));
    let ev = matrix(&tmp.path().join("p1/explained_variance.csv"));
    assert_eq!(ev.nrows(), 1);
    assert!((ev[(0, 0)] - 1.0).abs() < 1e-12);
    assert_eq!(code(&zipln(&["project", s(&r1), "--k", "4", "--out", s(&tmp.path().join("p2"))])), 64);
}

#[test]
fn bench_records_and_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    ok(&[
        "bench", "--axis", "pi", "--desk", "--values", "0.2,0.4,0.6", "--replicates", "1", "--methods", "Standard",
        "--n", "50", "--p", "4", "--jobs", "2", "--out", s(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("records.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);

    let out2 = tmp.path().join("bench2");
    ok(&[
        "bench", "--axis", "gamma", "--values", "1,2", "--replicates", "3", "--methods", "Standard,PLN", "--n", "40",
        "--p", "3", "--out", s(&out2),
    ]);
    let mut rdr = csv::Reader::from_path(out2.join("records.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let records: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2 * 3 * 2);
    let mut agg = csv::Reader::from_path(out2.join("aggregate_gamma.csv")).unwrap();
    let agg_header = agg.headers().unwrap().clone();
    let acol = |name: &str| agg_header.iter().position(|h| h == name).unwrap();
    for a in agg.records().map(Result::unwrap) {
        let raw: Vec<f64> = records
            .iter()
            .filter(|r| r[col("axis_value")] == a[acol("axis_value")] && r[col("method")] == a[acol("method")])
            .filter_map(|r| r[col("rmse_sigma")].parse().ok())
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let reported: f64 = a[acol("rmse_sigma_mean")].parse().unwrap();
        assert!((mean - reported).abs() <= 1e-12 * mean.abs());
    }
}
