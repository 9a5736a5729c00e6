use gmmot_core::analysis::{detect_clusters, verify_mc_rate, ClusterConfig, ClusterMetric, RateProblem};
use gmmot_core::distances::SliceSet;
use gmmot_core::linalg::PsdMatrix;
use gmmot_core::mixture::{sample, GaussianComponent, Gmm, PointCloud};

fn blobs(seed: u64) -> PointCloud {
    let centers = [[5.0, 5.0], [-5.0, 5.0], [5.0, -5.0], [-5.0, -5.0]];
    let comps = centers.iter().map(|c| GaussianComponent::isotropic(c.to_vec(), 1.0).unwrap()).collect();
    sample(&Gmm::new(vec![0.25; 4], comps).unwrap(), 2000, seed).unwrap()
}

fn tight_blob(seed: u64) -> PointCloud {
    let g = GaussianComponent::new(vec![0.0, 0.0], PsdMatrix::from_diag(&[0.01, 0.01]).unwrap()).unwrap();
    sample(&Gmm::single(g), 1000, seed).unwrap()
}

fn config(seed: u64) -> ClusterConfig {
    let mut c = ClusterConfig::new(SliceSet::monte_carlo(2, 200, seed).unwrap());
    c.em.seed = seed;
    c
}

#[test]
fn four_blobs_are_detected() {
    for seed in 0..5 {
        let data = blobs(seed);
        for metric in [ClusterMetric::Mw, ClusterMetric::Msw, ClusterMetric::Dsmw] {
            let r = detect_clusters(&data, 8, metric, &config(seed)).unwrap();
            assert_eq!(r.detected_k, Some(4), "seed {seed} {metric:?}: {:?}", r.distances);
        }
    }
}

#[test]
fn one_blob_is_detected() {
    for seed in 0..5 {
        let data = tight_blob(seed);
        for metric in [ClusterMetric::Mw, ClusterMetric::Msw, ClusterMetric::Dsmw] {
            let r = detect_clusters(&data, 6, metric, &config(seed)).unwrap();
            assert_eq!(r.detected_k, Some(1), "seed {seed} {metric:?}: {:?}", r.distances);
        }
    }
}

#[test]
fn too_small_scan_detects_nothing_and_is_deterministic() {
    let data = blobs(3);
    let r = detect_clusters(&data, 2, ClusterMetric::Dsmw, &config(3)).unwrap();
    assert_eq!(r.detected_k, None);
    assert_eq!(r.distances.len(), 2);
    assert_eq!(r, detect_clusters(&data, 2, ClusterMetric::Dsmw, &config(3)).unwrap());
    assert!(detect_clusters(&data, 1, ClusterMetric::Mw, &config(3)).is_err());
}

fn rate_pair() -> (Gmm, Gmm) {
    let a = Gmm::new(
        vec![0.3, 0.7],
        vec![
            GaussianComponent::new(vec![0.0, 1.0], PsdMatrix::from_rows(&[vec![1.0, 0.4], vec![0.4, 0.5]]).unwrap()).unwrap(),
            GaussianComponent::isotropic(vec![2.0, -1.0], 0.5).unwrap(),
        ],
    )
    .unwrap();
    let b = Gmm::new(
        vec![0.5, 0.2, 0.3],
        vec![
            GaussianComponent::isotropic(vec![-1.0, 0.0], 0.8).unwrap(),
            GaussianComponent::new(vec![1.0, 2.0], PsdMatrix::from_diag(&[0.2, 1.5]).unwrap()).unwrap(),
            GaussianComponent::isotropic(vec![0.5, -2.0], 0.3).unwrap(),
        ],
    )
    .unwrap();
    (a, b)
}

#[test]
fn monte_carlo_rates() {
    let (a, b) = rate_pair();
    let r = verify_mc_rate(RateProblem::Dsmw(&a, &b), &[16, 64, 256, 1024], 100, 1).unwrap();
    let slope = r.slope.unwrap();
    assert!((-0.65..=-0.35).contains(&slope), "{slope}");
    assert!(r.rows[3].mean_abs_error < r.rows[0].mean_abs_error);

    let (pa, pb) = (sample(&a, 300, 1).unwrap(), sample(&b, 300, 2).unwrap());
    let r = verify_mc_rate(RateProblem::SwEmpirical(&pa, &pb), &[16, 64, 256, 1024], 100, 2).unwrap();
    let slope = r.slope.unwrap();
    assert!((-0.65..=-0.35).contains(&slope), "{slope}");
}

#[test]
fn reference_quadrature_is_stable() {
    let (a, b) = rate_pair();
    let p = RateProblem::Dsmw(&a, &b);
    let (r0, r1) = (p.reference(7200).unwrap(), p.reference(7201).unwrap());
    assert!((r0 - r1).abs() < 1e-4 * r0);
}
