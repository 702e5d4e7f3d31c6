//! Brute-force oracles for the exact geometric and trade-off kernels.

use cbns_core::evaluation::{nhv, pareto_front, TradeoffPoint};
use cbns_core::geometry::fps;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cell size of the hypervolume rasterization.
pub const GRID: f64 = 1e-3;

fn d2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum()
}

/// Greedy max-min selection recomputing every distance from scratch.
pub fn fps_brute(points: &[[f32; 3]], k: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < k {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let gap = chosen.iter().map(|&c| d2(&points[i], &points[c])).fold(f64::INFINITY, f64::min);
            if gap > best.0 {
                best = (gap, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

/// Number of clouds on which `fps` and the oracle disagree.
pub fn fps_mismatches(clouds: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut bad = 0;
    for _ in 0..clouds {
        let n = rng.random_range(1..=32);
        let points: Vec<[f32; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0f32..1.0)))
            .collect();
        let k = rng.random_range(1..=n);
        let start = rng.random_range(0..n);
        if fps(&points, k, start).unwrap() != fps_brute(&points, k, start) {
            bad += 1;
        }
    }
    bad
}

/// Indices not dominated by any other point, by exhaustive comparison.
pub fn front_brute(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let (p, u) = points[i];
            !points.iter().any(|&(q, v)| (q <= p && v >= u) && (q < p || v > u))
        })
        .collect()
}

/// Dominated area inside the unit square counted on a `GRID` raster, one
/// column at a time.
pub fn nhv_raster(points: &[(f64, f64)]) -> f64 {
    let cells = (1.0 / GRID).round() as usize;
    let mut covered = 0usize;
    for col in 0..cells {
        let x = (col as f64 + 0.5) * GRID;
        let height = points.iter().filter(|p| p.0 <= x).map(|p| p.1).fold(0.0, f64::max);
        covered += (0..cells).filter(|&row| (row as f64 + 0.5) * GRID < height).count();
    }
    covered as f64 * GRID * GRID
}

fn random_set(rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(1..=20);
    let mut pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
    // a few exact ties and duplicates
    if n > 2 && rng.random_bool(0.5) {
        pts[1] = pts[0];
        pts[2].0 = pts[0].0;
    }
    pts
}

fn as_points(pts: &[(f64, f64)]) -> Vec<TradeoffPoint> {
    pts.iter()
        .enumerate()
        .map(|(i, &(p, u))| TradeoffPoint {
            config_id: format!("p{i}"),
            ..TradeoffPoint::at(p, u)
        })
        .collect()
}

/// Sets where the front differs from the exhaustive front.
pub fn pareto_mismatches(sets: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    (0..sets)
        .filter(|_| {
            let pts = random_set(&mut rng);
            let got: Vec<String> = pareto_front(&as_points(&pts)).into_iter().map(|p| p.config_id).collect();
            let want: Vec<String> = front_brute(&pts).into_iter().map(|i| format!("p{i}")).collect();
            got != want
        })
        .count()
}

/// Largest `|nhv - raster|` over random sets.
pub fn nhv_worst_gap(sets: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    (0..sets)
        .map(|_| {
            let pts = random_set(&mut rng);
            (nhv(&as_points(&pts)).unwrap() - nhv_raster(&pts)).abs()
        })
        .fold(0.0, f64::max)
}

/// The two-point worked example.
pub fn nhv_worked_example() -> f64 {
    nhv(&as_points(&[(0.2, 0.4), (0.6, 0.8)])).unwrap()
}
