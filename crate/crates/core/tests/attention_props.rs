use mirrorscan::attention::*;
use mirrorscan::cube::linspace_wavelengths;
use mirrorscan::pnm::write_pgm;
use mirrorscan::SpectralCube;
use proptest::prelude::*;

fn map_strategy() -> impl Strategy<Value = AttentionMap> {
    (1usize..40, 1usize..40).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f32..10.0, w * h).prop_map(move |s| AttentionMap::new(w, h, s).unwrap())
    })
}

fn brute_force(map: &AttentionMap, p: usize, s: usize) -> Vec<f32> {
    let mut out = Vec::new();
    let mut y0 = 0;
    while y0 + p <= map.height {
        let mut x0 = 0;
        while x0 + p <= map.width {
            let mut best = f32::NEG_INFINITY;
            for y in y0..y0 + p {
                for x in x0..x0 + p {
                    best = best.max(map.get(x, y));
                }
            }
            out.push(best);
            x0 += s;
        }
        y0 += s;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scores_match_window_scan(map in map_strategy(), p in 1usize..12, s in 1usize..12) {
        match score_patches(&map, p, s) {
            Ok(g) => {
                prop_assert_eq!(g.rows, (map.height - p) / s + 1);
                prop_assert_eq!(g.cols, (map.width - p) / s + 1);
                prop_assert_eq!(g.scores, brute_force(&map, p, s));
            }
            Err(_) => prop_assert!(map.width < p || map.height < p),
        }
    }

    #[test]
    fn top_k_matches_full_sort(map in map_strategy(), k in 0usize..50) {
        let g = score_patches(&map, 1, 1).unwrap();
        let n = g.rows * g.cols;
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by(|&a, &b| g.scores[b].partial_cmp(&g.scores[a]).unwrap().then(a.cmp(&b)));
        match top_k_indices(&g, k) {
            Ok(idx) => prop_assert_eq!(idx, oracle[..k].to_vec()),
            Err(_) => prop_assert!(k > n),
        }
    }

    #[test]
    fn selection_is_scale_invariant(map in map_strategy(), c in 0.01f32..100.0) {
        prop_assume!(map.width >= 4 && map.height >= 4);
        let scaled = AttentionMap::new(map.width, map.height, map.scores.iter().map(|v| v * c).collect()).unwrap();
        let k = 3.min((map.width / 2) * (map.height / 2));
        let a = select_top_k(&score_patches(&map, 2, 2).unwrap(), k).unwrap();
        let b = select_top_k(&score_patches(&scaled, 2, 2).unwrap(), k).unwrap();
        let mut a: Vec<_> = a.iter().map(|p| (p.x, p.y)).collect();
        let mut b: Vec<_> = b.iter().map(|p| (p.x, p.y)).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sobel_commutes_with_quarter_turns(w in 2usize..12, h in 2usize..12, seed in any::<u64>()) {
        let cube = SpectralCube::from_fn(w, h, linspace_wavelengths(2, 400.0, 900.0), |x, y, b| {
            ((x as u64 * 31 + y as u64 * 17 + b as u64 * 7 + seed) % 23) as f32
        }).unwrap();
        // rotate 90° clockwise: (x, y) → (h-1-y, x)
        let rot = SpectralCube::from_fn(h, w, linspace_wavelengths(2, 400.0, 900.0), |x, y, b| cube.get(y, h - 1 - x, b)).unwrap();
        let (a, r) = (sobel_attention(&cube), sobel_attention(&rot));
        for y in 0..w {
            for x in 0..h {
                prop_assert!((r.get(x, y) - a.get(y, h - 1 - x)).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn pgm_round_trip_within_quantisation() {
    let map = AttentionMap::new(5, 3, (0..15).map(|i| (i as f32 * 0.37).sin().abs()).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("att.pgm");
    write_pgm(&p, &map.to_pgm()).unwrap();
    let back = load_attention(&p).unwrap();
    let max = map.max();
    for (a, b) in map.scores.iter().zip(&back.scores) {
        assert!((a / max - b).abs() <= 0.5 / 65535.0 + 1e-6);
    }
}
