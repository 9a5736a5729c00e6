mod common;

use std::fs;

use common::*;
use gmmot_core::distances::{dsmw, mw, SliceSet};
use gmmot_core::linalg::PsdMatrix;
use gmmot_core::mixture::{sample, GaussianComponent, Gmm};
use tempfile::tempdir;

fn three_component() -> Gmm {
    Gmm::new(
        vec![0.2, 0.5, 0.3],
        vec![
            GaussianComponent::new(vec![0.0, 1.0], PsdMatrix::from_rows(&[vec![1.5, 0.3], vec![0.3, 1.2]]).unwrap()).unwrap(),
            GaussianComponent::isotropic(vec![4.0, -1.0], 1.1).unwrap(),
            GaussianComponent::new(vec![-3.0, 2.0], PsdMatrix::from_diag(&[1.3, 2.0]).unwrap()).unwrap(),
        ],
    )
    .unwrap()
}

fn blobs(seed: u64) -> String {
    let centers = [[5.0, 5.0], [-5.0, 5.0], [5.0, -5.0], [-5.0, -5.0]];
    let comps = centers.iter().map(|c| GaussianComponent::isotropic(c.to_vec(), 1.0).unwrap()).collect();
    points_csv(&sample(&Gmm::new(vec![0.25; 4], comps).unwrap(), 2000, seed).unwrap())
}

#[test]
fn distance_examples() {
    let dir = tempdir().unwrap();
    let mix = write_gmm(dir.path(), "mix.json", &three_component());
    let m = path_str(&mix);
    for metric in ["mw", "msw", "smw", "dsmw", "sw-gmm"] {
        let r = run(&["distance", "--metric", metric, "--a", m, "--b", m]);
        assert_eq!(r.code, 0, "{metric}: {}", r.stderr);
        let v = r.json();
        assert!(v["value"].as_f64().unwrap().abs() <= 1e-10, "{metric}: {v}");
        assert_eq!(v["metric"], metric);
    }

    let g0 = write_gmm(dir.path(), "g0.json", &Gmm::single(GaussianComponent::isotropic(vec![0.0, 0.0], 1.0).unwrap()));
    let g1 = Gmm::single(GaussianComponent::new(vec![1.0, -2.0], PsdMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()).unwrap());
    let g1 = write_gmm(dir.path(), "g1.json", &g1);
    let a = run(&["distance", "--metric", "mw", "--a", path_str(&g0), "--b", path_str(&g1)]).json();
    let b = run(&["distance", "--metric", "gauss-w2", "--a", path_str(&g0), "--b", path_str(&g1)]).json();
    assert!((a["value"].as_f64().unwrap() - b["value"].as_f64().unwrap()).abs() < 1e-12);
    let v = b["value"].as_f64().unwrap();
    assert!((v - b["squared"].as_f64().unwrap().sqrt()).abs() < 1e-9);

    let dirac = write_gmm(dir.path(), "dirac.json", &Gmm::single(GaussianComponent::dirac(vec![0.0, 0.0]).unwrap()));
    let r = run(&["distance", "--metric", "dsmw", "--quadrature", "equispaced2d", "--slices", "360", "--a", path_str(&dirac), "--b", path_str(&g0)]);
    assert!((r.json()["squared"].as_f64().unwrap() - 0.5).abs() < 1e-3);

    let plan = dir.path().join("plan.csv");
    let out = dir.path().join("res.json");
    let r = run(&["distance", "--metric", "msw", "--a", m, "--b", path_str(&g0), "--plan", path_str(&plan), "-o", path_str(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.is_empty());
    let rows: Vec<Vec<f64>> = fs::read_to_string(&plan).unwrap().lines().map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!((rows.len(), rows[0].len()), (3, 1));
    assert!((rows.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-12);
    let text = fs::read_to_string(&out).unwrap();
    let keys = ["metric", "value", "squared", "stderr", "slices", "seed", "elapsed_ms", "version"];
    let positions: Vec<usize> = keys.iter().map(|k| text.find(&format!("\"{k}\":")).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["slices"], 100);
}

#[test]
fn distance_errors() {
    let dir = tempdir().unwrap();
    let good = write_gmm(dir.path(), "good.json", &three_component());
    let g = path_str(&good);
    let bad = write(dir.path(), "bad.json", "{\"d\": 2, \"weights\": [1]");
    let d3 = write_gmm(dir.path(), "d3.json", &Gmm::single(GaussianComponent::isotropic(vec![0.0; 3], 1.0).unwrap()));
    let huge = write(dir.path(), "huge.json", r#"{"d": 2, "weights": [1], "means": [[1e200, 1e200]], "covs": [[[1, 0], [0, 1]]]}"#);

    let cases: [(&[&str], i32); 7] = [
        (&["distance", "--metric", "mw", "--a", g, "--b", path_str(&bad)], 2),
        (&["distance", "--metric", "mw", "--a", g, "--b", "/nonexistent.json"], 2),
        (&["distance", "--metric", "nope", "--a", g, "--b", g], 2),
        (&["distance", "--metric", "dsmw", "--a", g, "--b", path_str(&d3)], 3),
        (&["distance", "--metric", "dsmw", "--a", g, "--b", path_str(&huge)], 4),
        (&["distance", "--metric", "gauss-w2", "--a", g, "--b", g], 2),
        (&["distance", "--metric", "dsmw", "--quadrature", "equispaced2d", "--a", path_str(&d3), "--b", path_str(&d3)], 2),
    ];
    for (args, code) in cases {
        let r = run(args);
        assert_eq!(r.code, code, "{args:?}: {}", r.stderr);
        assert!(r.stdout.is_empty(), "{args:?}");
        assert!(!r.stderr.is_empty());
    }
}

#[test]
fn fit_examples() {
    let dir = tempdir().unwrap();
    let pts = write(dir.path(), "blobs.csv", &blobs(1));
    let out = dir.path().join("fit.json");
    let r = run(&["fit", "--points", path_str(&pts), "--k", "4", "--seed", "3", "-o", path_str(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mu = load(&out);
    assert_eq!(mu.len(), 4);
    assert!(mu.weights().iter().all(|w| (w - 0.25).abs() < 0.1), "{:?}", mu.weights());
    assert!(mu.weights().windows(2).all(|w| w[0] >= w[1]));
    let canon = run(&["canonicalize", "--in", path_str(&out)]);
    assert_eq!(canon.stdout, fs::read(&out).unwrap());

    let rows = "x,y\n1,2\n3,5\n-2,0.5\n4,4\n";
    let pts = write(dir.path(), "few.csv", rows);
    let r = run(&["fit", "--points", path_str(&pts), "--k", "1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mean = value_to_gmm(&r.json()).component(0).mean().to_vec();
    assert!((mean[0] - 1.5).abs() < 1e-9 && (mean[1] - 2.875).abs() < 1e-9, "{mean:?}");

    let weighted = write(dir.path(), "w.csv", "x,weight\n0,1\n4,3\n");
    let r = run(&["fit", "--points", path_str(&weighted), "--k", "1", "--normalize"]);
    assert!((value_to_gmm(&r.json()).component(0).mean()[0] - 3.0).abs() < 1e-9);
    assert_eq!(run(&["fit", "--points", path_str(&weighted), "--k", "1"]).code, 2);

    let broken = write(dir.path(), "broken.csv", "x,y\n1,2\n3,oops\n");
    let r = run(&["fit", "--points", path_str(&broken), "--k", "1"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("row 3") && r.stderr.contains("column 2"), "{}", r.stderr);
    assert!(r.stdout.is_empty());
    assert_eq!(run(&["fit", "--points", path_str(&pts), "--k", "0"]).code, 2);
}

#[test]
fn quantize_examples() {
    let dir = tempdir().unwrap();
    let target = three_component();
    let input = write_gmm(dir.path(), "in.json", &target);
    let (out1, out2) = (dir.path().join("q1.json"), dir.path().join("q2.json"));
    let (trace1, trace2) = (dir.path().join("t1.csv"), dir.path().join("t2.csv"));
    let args = |out: &std::path::Path, trace: &std::path::Path| {
        run(&[
            "quantize", "--in", path_str(&input), "--k", "3", "--restarts", "4", "--seed", "11", "-o", path_str(out), "--trace", path_str(trace),
        ])
    };
    let r = args(&out1, &trace1);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("warning"), "k = K should warn: {}", r.stderr);
    assert_eq!(args(&out2, &trace2).code, 0);
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    assert_eq!(fs::read(&trace1).unwrap(), fs::read(&trace2).unwrap());

    let trace = fs::read_to_string(&trace1).unwrap();
    assert_eq!(trace.lines().next(), Some("restart,step,loss"));
    assert_eq!(trace.lines().count() - 1, 4 * 200);

    // Held-out comparison against an unrelated mixture of the same scale.
    let other = Gmm::new(
        vec![0.4, 0.3, 0.3],
        vec![
            GaussianComponent::isotropic(vec![3.0, 3.0], 1.2).unwrap(),
            GaussianComponent::isotropic(vec![-2.0, -2.0], 1.0).unwrap(),
            GaussianComponent::isotropic(vec![1.0, -3.0], 1.4).unwrap(),
        ],
    )
    .unwrap();
    let held_out = SliceSet::monte_carlo(2, 2000, 987).unwrap();
    let fit = dsmw(&load(&out1), &target, &held_out).unwrap().value;
    let baseline = dsmw(&other, &target, &held_out).unwrap().value;
    assert!(fit < 0.1 * baseline, "{fit} vs {baseline}");

    assert_eq!(run(&["quantize", "--in", path_str(&input), "--k", "0"]).code, 2);
    assert_eq!(run(&["quantize", "--in", "/missing.json", "--k", "2"]).code, 2);
}

#[test]
fn barycenter_examples() {
    let dir = tempdir().unwrap();
    let mu = three_component();
    let input = write_gmm(dir.path(), "in.json", &mu);
    let i = path_str(&input);

    let r = run(&["barycenter", "--mode", "fixed", "--inputs", i]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(mw(&value_to_gmm(&r.json()), &mu).unwrap().value < 1e-3);

    let r = run(&["barycenter", "--mode", "fixed", "--inputs", i, i, "--lambda", "0.5,0.5"]);
    let scale = mu.moments().1.iter().step_by(3).sum::<f64>().sqrt();
    assert!(mw(&value_to_gmm(&r.json()), &mu).unwrap().value < 0.05 * scale);

    // λ = (1, 0) in free mode reproduces quantize on the first input.
    let other = write_gmm(dir.path(), "other.json", &Gmm::single(GaussianComponent::isotropic(vec![9.0, 9.0], 2.0).unwrap()));
    let (bt, qt) = (dir.path().join("bt.csv"), dir.path().join("qt.csv"));
    let common = ["--k", "3", "--restarts", "2", "--steps", "30", "--sigma", "0.3", "--seed", "5"];
    let mut bary_args = vec!["barycenter", "--mode", "free", "--inputs", i, path_str(&other), "--lambda", "1,0", "--trace", path_str(&bt)];
    bary_args.extend(common);
    let mut quant_args = vec!["quantize", "--in", i, "--trace", path_str(&qt)];
    quant_args.extend(common);
    let (b, q) = (run(&bary_args), run(&quant_args));
    assert_eq!((b.code, q.code), (0, 0), "{} {}", b.stderr, q.stderr);
    assert_eq!(b.stdout, q.stdout);
    assert_eq!(fs::read(&bt).unwrap(), fs::read(&qt).unwrap());

    // 4^10 candidate components exceed the fixed-mode limit.
    let four = Gmm::new(vec![0.25; 4], (0..4).map(|k| GaussianComponent::isotropic(vec![k as f64, 0.0], 1.0).unwrap()).collect()).unwrap();
    let many = write_gmm(dir.path(), "four.json", &four);
    let mut args = vec!["barycenter", "--mode", "fixed", "--inputs"];
    args.extend(std::iter::repeat_n(path_str(&many), 10));
    let r = run(&args);
    assert_eq!(r.code, 5, "{}", r.stderr);
    assert!(r.stderr.contains("free"), "{}", r.stderr);
    assert!(r.stdout.is_empty());

    let d3 = write_gmm(dir.path(), "d3.json", &Gmm::single(GaussianComponent::isotropic(vec![0.0; 3], 1.0).unwrap()));
    assert_eq!(run(&["barycenter", "--mode", "fixed", "--inputs", i, i, "--lambda", "1"]).code, 2);
    assert_eq!(run(&["barycenter", "--mode", "fixed", "--inputs", i, i, "--lambda", "0.5,0.6"]).code, 2);
    assert_eq!(run(&["barycenter", "--mode", "free", "--inputs", i, path_str(&d3)]).code, 3);
}

#[test]
fn cluster_examples() {
    let dir = tempdir().unwrap();
    let pts = write(dir.path(), "blobs.csv", &blobs(2));
    let report = dir.path().join("report.json");
    let r = run(&["clusters", "--points", path_str(&pts), "--kmax", "6", "--seed", "2", "-o", path_str(&report)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["detected_k"], 4);
    assert_eq!(v["metric"], "dsmw");
    let curve = fs::read_to_string(dir.path().join("report.curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("k,distance"));
    assert_eq!(curve.lines().count() - 1, 6);

    let g = Gmm::single(GaussianComponent::new(vec![0.0, 0.0], PsdMatrix::from_diag(&[0.01, 0.01]).unwrap()).unwrap());
    let tight = write(dir.path(), "tight.csv", &points_csv(&sample(&g, 1000, 4).unwrap()));
    let r = run(&["clusters", "--points", path_str(&tight), "--kmax", "4", "--metric", "mw", "--curve", path_str(&dir.path().join("c.csv"))]);
    assert_eq!(r.json()["detected_k"], 1);

    assert_eq!(run(&["clusters", "--points", path_str(&pts), "--kmax", "1"]).code, 2);
}

#[test]
fn bench_examples() {
    let r = run(&["bench", "--metrics", "mw,msw,dsmw", "--dims", "2,8", "--ks", "3", "--reps", "2", "--slices", "20"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = r.stdout_str();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("metric,d,K,L,reps,mean_ms,std_ms"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[5].parse::<f64>().unwrap() > 0.0));

    // The structural gap is visible at d = 256, K = 50.
    let r = run(&["bench", "--metrics", "mw,dsmw", "--dims", "256", "--ks", "50", "--reps", "1"]);
    let rows: Vec<Vec<String>> = r.stdout_str().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let time = |m: &str| rows.iter().find(|r| r[0] == m).unwrap()[5].parse::<f64>().unwrap();
    assert!(time("dsmw") < time("mw"));

    assert_eq!(run(&["bench", "--metrics", "mw,fast"]).code, 2);
}

fn read_pgm(bytes: &[u8]) -> (usize, usize, Vec<u16>) {
    let text = String::from_utf8_lossy(&bytes[..20]);
    let mut parts = text.split_whitespace();
    assert_eq!(parts.next(), Some("P5"));
    let nx: usize = parts.next().unwrap().parse().unwrap();
    let ny: usize = parts.next().unwrap().parse().unwrap();
    assert_eq!(parts.next(), Some("65535"));
    let header = format!("P5\n{nx} {ny}\n65535\n").len();
    let px = bytes[header..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect::<Vec<_>>();
    assert_eq!(px.len(), nx * ny);
    (nx, ny, px)
}

#[test]
fn density_examples() {
    let dir = tempdir().unwrap();
    let sym = Gmm::new(
        vec![0.5, 0.5],
        vec![GaussianComponent::isotropic(vec![-1.5, 0.5], 0.7).unwrap(), GaussianComponent::isotropic(vec![1.5, 0.5], 0.7).unwrap()],
    )
    .unwrap();
    let input = write_gmm(dir.path(), "sym.json", &sym);
    let r = run(&["density", "--in", path_str(&input), "--grid", "64x48", "--bounds", "-4,4,-3,12"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (nx, ny, px) = read_pgm(&r.stdout);
    assert_eq!((nx, ny), (64, 48));
    for y in 0..ny {
        for x in 0..nx {
            assert_eq!(px[y * nx + x], px[y * nx + nx - 1 - x]);
        }
    }
    assert_eq!(px.iter().max(), Some(&65535));
    // Top rows reach y = 12, far above the mass.
    assert!(px[..nx * 5].iter().all(|&v| v == 0));
    assert!(px[nx * (ny - 1)..].iter().any(|&v| v > 0));

    // Grid mass against the fraction of samples inside the window.
    let bounds = [-1.0, 3.0, -2.0, 1.5];
    let r = run(&["density", "--in", path_str(&input), "--grid", "200x150", "--bounds", "-1,3,-2,1.5", "--format", "csv"]);
    let csv = r.stdout_str();
    assert_eq!(csv.lines().next(), Some("x,y,density"));
    let cell = (bounds[1] - bounds[0]) / 200.0 * (bounds[3] - bounds[2]) / 150.0;
    let grid_mass: f64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum::<f64>() * cell;
    let pts = sample(&sym, 200_000, 8).unwrap();
    let inside = (0..pts.len()).filter(|&i| {
        let p = pts.point(i);
        p[0] >= bounds[0] && p[0] <= bounds[1] && p[1] >= bounds[2] && p[1] <= bounds[3]
    });
    let mc_mass = inside.count() as f64 / pts.len() as f64;
    assert!((grid_mass - mc_mass).abs() < 0.02 * mc_mass, "{grid_mass} vs {mc_mass}");

    let d3 = write_gmm(dir.path(), "d3.json", &Gmm::single(GaussianComponent::isotropic(vec![0.0; 3], 1.0).unwrap()));
    assert_eq!(run(&["density", "--in", path_str(&d3)]).code, 3);
    assert_eq!(run(&["density", "--in", path_str(&input), "--grid", "0x10"]).code, 2);
    assert_eq!(run(&["density", "--in", path_str(&input), "--bounds", "1,0,0,1"]).code, 2);
    assert_eq!(run(&["density", "--in", path_str(&input), "--bounds", "0,1,0"]).code, 2);
}

#[test]
fn outputs_do_not_depend_on_threads() {
    let dir = tempdir().unwrap();
    let input = write_gmm(dir.path(), "in.json", &three_component());
    let args = ["quantize", "--in", path_str(&input), "--k", "2", "--restarts", "3", "--steps", "40", "--seed", "9"];
    let one = run(&[&["--threads", "1"][..], &args[..]].concat());
    let many = run_env(&args, &[("GMMOT_THREADS", "3")]);
    assert_eq!((one.code, many.code), (0, 0));
    assert_eq!(one.stdout, many.stdout);
    assert_eq!(run(&[&["--threads", "0"][..], &args[..]].concat()).code, 2);
}

#[test]
fn canonical_form_is_idempotent() {
    let dir = tempdir().unwrap();
    let raw = write(dir.path(), "raw.json", r#"{"covs": [[[2, 0.25], [0.25000000001, 1]]], "means": [[0.1, -3]], "weights": [1.0000000001], "d": 2}"#);
    let once = run(&["canonicalize", "--in", path_str(&raw)]);
    assert_eq!(once.code, 0, "{}", once.stderr);
    assert!(once.stdout_str().starts_with("{\n  \"d\": 2,\n  \"weights\": [1.0000000000000000e0]"));
    let first = write(dir.path(), "first.json", &once.stdout_str());
    let twice = run(&["canonicalize", "--in", path_str(&first)]);
    assert_eq!(once.stdout, twice.stdout);
    assert_eq!(run(&["canonicalize", "--in", path_str(&write(dir.path(), "x.json", "[]"))]).code, 2);
}
