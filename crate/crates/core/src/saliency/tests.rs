use super::*;
use crate::encoder::{CountingEncoder, FixtureEncoder, MockHashEncoder};
use crate::lexdb::{Lexicon, Synset};
use crate::simcore::build_definition_matrix;

fn small_cfg(mode: WindowMode, policy: BoundaryPolicy) -> SaliencyConfig {
    SaliencyConfig {
        delta_s: 8,
        delta_l: 16,
        omega: 16,
        window_mode: mode,
        boundary_policy: policy,
    }
}

fn hierarchy() -> Hierarchy {
    let syn = |id: &str, p: &[&str]| Synset {
        id: id.into(),
        lemmas: vec![],
        definition: format!("the concept {id}"),
        hypernym_ids: p.iter().map(|s| s.to_string()).collect(),
    };
    let lex = Lexicon::from_synsets(vec![
        syn("entity", &[]),
        syn("animal", &["entity"]),
        syn("cat", &["animal"]),
        syn("dog", &["animal"]),
        syn("plant", &["entity"]),
        syn("tree", &["plant"]),
        syn("rock", &["entity"]),
    ])
    .unwrap();
    Hierarchy::from_lexicon(&lex)
}

fn test_image(w: u32, h: u32) -> Image {
    let data = (0..w * h * 3).map(|i| ((i * 37) % 251) as u8).collect();
    Image::new(w, h, 3, data).unwrap()
}

#[test]
fn local_embedding_is_plain_mean() {
    let img = Image::new(2, 2, 1, vec![0, 50, 100, 150]).unwrap();
    let cfg = SaliencyConfig {
        delta_s: 1,
        delta_l: 2,
        omega: 2,
        ..SaliencyConfig::default()
    };
    let mut fx = FixtureEncoder::new(2, "fx");
    fx.insert_image(&img.crop(0, 0, 1, 1).unwrap(), vec![1.0, 0.0]).unwrap();
    fx.insert_image(&img, vec![0.0, 1.0]).unwrap();
    assert_eq!(local_embedding(&img, 0, 0, &cfg, &fx).unwrap(), vec![0.5, 0.5]);
    assert!(matches!(
        local_embedding(&img, 1, 0, &cfg, &fx),
        Err(SaliencyError::NotAGridLocation { .. })
    ));
}

#[test]
fn identical_patches_give_shared_embedding() {
    let img = Image::filled(16, 16, 3, 200).unwrap();
    let cfg = SaliencyConfig {
        delta_s: 16,
        delta_l: 16,
        omega: 16,
        ..SaliencyConfig::default()
    };
    let enc = MockHashEncoder::new(12);
    let e = local_embedding(&img, 0, 0, &cfg, &enc).unwrap();
    let direct = enc.embed_image(&img).unwrap();
    let expect: Vec<f64> = direct.as_slice().iter().map(|&v| v as f64).collect();
    assert_eq!(e, expect);
}

#[test]
fn local_embedding_matches_two_calls() {
    let img = test_image(48, 48);
    let cfg = small_cfg(WindowMode::Containment, BoundaryPolicy::FitOnly);
    let enc = MockHashEncoder::new(16);
    let e = local_embedding(&img, 16, 32, &cfg, &enc).unwrap();
    let s = enc.embed_image(&img.crop(16, 32, 8, 8).unwrap()).unwrap();
    let l = enc.embed_image(&img.crop(16, 32, 16, 16).unwrap()).unwrap();
    for k in 0..16 {
        assert_eq!(e[k], (s.as_slice()[k] as f64 + l.as_slice()[k] as f64) / 2.0);
    }
}

fn grid_of(w: u32, h: u32, cfg: SaliencyConfig, below: &[u32], total: u32) -> ScoreGrid {
    let locations = patch_grid(w, h, &cfg).unwrap();
    assert_eq!(locations.len(), below.len());
    ScoreGrid {
        width: w,
        height: h,
        config: cfg,
        locations,
        scores: below.iter().map(|&b| RankScore::new(b, total)).collect(),
    }
}

#[test]
fn constant_scores_give_constant_map() {
    let cfg = small_cfg(WindowMode::Containment, BoundaryPolicy::FitOnly);
    let grid = grid_of(48, 48, cfg, &[3; 9], 7);
    let map = aggregate(&grid).unwrap();
    assert!(map.values.iter().all(|&v| v == 3.0 / 7.0));
}

#[test]
fn single_location_fills_its_square() {
    let cfg = SaliencyConfig {
        delta_s: 4,
        delta_l: 8,
        omega: 8,
        ..SaliencyConfig::default()
    };
    let mut grid = grid_of(8, 8, cfg, &[5], 10);
    grid.width = 12;
    grid.height = 10;
    let map = aggregate(&grid).unwrap();
    for y in 0..10 {
        for x in 0..12 {
            let expect = if x < 8 && y < 8 { 0.5 } else { 0.0 };
            assert_eq!(map.get(x, y), expect, "pixel {x},{y}");
        }
    }
}

fn brute_force(grid: &ScoreGrid) -> Vec<f64> {
    let dl = grid.config.delta_l as i64;
    let mut out = Vec::new();
    for py in 0..grid.height as i64 {
        for px in 0..grid.width as i64 {
            let mut acc = Vec::new();
            for (loc, s) in grid.locations.iter().zip(&grid.scores) {
                let inside = match grid.config.window_mode {
                    WindowMode::Containment => {
                        let r = loc.large;
                        px - r.x as i64 >= 0
                            && px - (r.x as i64) < r.w as i64
                            && py - r.y as i64 >= 0
                            && py - (r.y as i64) < r.h as i64
                    }
                    WindowMode::Symmetric => {
                        (loc.x as i64 - px).abs() < dl && (loc.y as i64 - py).abs() < dl
                    }
                };
                if inside {
                    acc.push(s.value());
                }
            }
            out.push(if acc.is_empty() {
                0.0
            } else {
                acc.iter().sum::<f64>() / acc.len() as f64
            });
        }
    }
    out
}

#[test]
fn aggregate_matches_double_loop() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for mode in [WindowMode::Containment, WindowMode::Symmetric] {
        for policy in [BoundaryPolicy::FitOnly, BoundaryPolicy::Clamp] {
            let cfg = small_cfg(mode, policy);
            let n = patch_grid(40, 44, &cfg).unwrap().len();
            let below: Vec<u32> = (0..n).map(|_| rng.random_range(0..13)).collect();
            let grid = grid_of(40, 44, cfg, &below, 13);
            let map = aggregate(&grid).unwrap();
            for (a, b) in map.values.iter().zip(brute_force(&grid)) {
                assert!((a - b).abs() < 1e-12, "{mode:?} {policy:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn score_reuse_across_concepts() {
    let hier = hierarchy();
    let enc = CountingEncoder::new(MockHashEncoder::new(24));
    let defmat = build_definition_matrix(&hier, &enc, None).unwrap();
    let img = test_image(48, 48);
    let cfg = small_cfg(WindowMode::Containment, BoundaryPolicy::FitOnly);
    let cache = PatchCache::in_memory();
    let (_, hit) = score_grid_cached(&img, "cat", &cfg, &enc, &defmat, &hier, &cache).unwrap();
    assert!(!hit);
    assert_eq!(enc.image_calls(), 18);
    for s in ["animal", "rock", "entity"] {
        let (g, hit) = score_grid_cached(&img, s, &cfg, &enc, &defmat, &hier, &cache).unwrap();
        assert!(hit);
        assert_eq!(g.scores.len(), 9);
    }
    assert_eq!(enc.image_calls(), 18);
}

#[test]
fn ancestor_map_dominates() {
    let hier = hierarchy();
    let enc = MockHashEncoder::new(24);
    let defmat = build_definition_matrix(&hier, &enc, None).unwrap();
    let img = test_image(64, 48);
    let cache = PatchCache::in_memory();
    for policy in [BoundaryPolicy::FitOnly, BoundaryPolicy::Clamp] {
        let cfg = small_cfg(WindowMode::Containment, policy);
        let cat = compute_saliency(&img, "cat", &cfg, &enc, &defmat, &hier, &cache).unwrap();
        let animal = compute_saliency(&img, "animal", &cfg, &enc, &defmat, &hier, &cache).unwrap();
        let entity = compute_saliency(&img, "entity", &cfg, &enc, &defmat, &hier, &cache).unwrap();
        for i in 0..cat.values.len() {
            assert!(cat.values[i] <= animal.values[i]);
            assert!(animal.values[i] <= entity.values[i]);
        }
        assert!(cat.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((cat.width, cat.height), (64, 48));
    }
}

#[test]
fn unknown_concept_is_an_error() {
    let hier = hierarchy();
    let enc = MockHashEncoder::new(8);
    let defmat = build_definition_matrix(&hier, &enc, None).unwrap();
    let cfg = small_cfg(WindowMode::Containment, BoundaryPolicy::FitOnly);
    let err = compute_saliency(&test_image(16, 16), "ghost", &cfg, &enc, &defmat, &hier, &PatchCache::in_memory())
        .unwrap_err();
    assert!(matches!(err, SaliencyError::Sim(_)), "{err:?}");
}

#[test]
fn disk_cache_survives_new_process_state() {
    let hier = hierarchy();
    let dir = tempfile::tempdir().unwrap();
    let enc = CountingEncoder::new(MockHashEncoder::new(8));
    let defmat = build_definition_matrix(&hier, &enc, None).unwrap();
    let img = test_image(32, 32);
    let cfg = small_cfg(WindowMode::Containment, BoundaryPolicy::Clamp);
    let first = PatchCache::new(Some(crate::store::CacheDir::new(dir.path())));
    let a = compute_saliency(&img, "tree", &cfg, &enc, &defmat, &hier, &first).unwrap();
    let calls = enc.image_calls();
    assert_eq!(calls, 2 * 4);
    let second = PatchCache::new(Some(crate::store::CacheDir::new(dir.path())));
    let (_, hit) = score_grid_cached(&img, "tree", &cfg, &enc, &defmat, &hier, &second).unwrap();
    assert!(hit);
    assert_eq!(enc.image_calls(), calls);
    let b = compute_saliency(&img, "tree", &cfg, &enc, &defmat, &hier, &second).unwrap();
    assert_eq!(a, b);
}

fn map_of(w: u32, h: u32, values: Vec<f64>) -> SaliencyMap {
    SaliencyMap {
        width: w,
        height: h,
        values,
        synset: String::new(),
        image: String::new(),
    }
}

#[test]
fn mask_rendering() {
    let img = test_image(4, 3);
    assert_eq!(render_mask(&img, &map_of(4, 3, vec![1.0; 12])).unwrap(), img);
    let white = render_mask(&img, &map_of(4, 3, vec![0.0; 12])).unwrap();
    assert!(white.data().iter().all(|&v| v == 255));
    let black = Image::filled(2, 2, 3, 0).unwrap();
    let grey = render_mask(&black, &map_of(2, 2, vec![0.5; 4])).unwrap();
    assert!(grey.data().iter().all(|&v| v == 128));
    assert!(matches!(
        render_mask(&img, &map_of(3, 3, vec![0.0; 9])),
        Err(SaliencyError::SizeMismatch { .. })
    ));
}

#[test]
fn overlay_rendering() {
    let img = test_image(4, 4);
    for pal in [Palette::Jet, Palette::Viridis, Palette::Gray, Palette::Hot] {
        let lo = render_overlay(&img, &map_of(4, 4, vec![0.0; 16]), pal).unwrap();
        let c = pal.color(0.0);
        for (px, out) in img.data().chunks(3).zip(lo.data().chunks(3)) {
            for k in 0..3 {
                assert_eq!(out[k] as u16, (c[k] as u16 + px[k] as u16 + 1) / 2);
            }
        }
    }
    // checkerboard on a flat image gives exactly two colours
    let flat = Image::filled(4, 4, 1, 100).unwrap();
    let board: Vec<f64> = (0..16).map(|i| ((i % 4 + i / 4) % 2) as f64).collect();
    let out = render_overlay(&flat, &map_of(4, 4, board.clone()), Palette::Jet).unwrap();
    let lo = Palette::Jet.color(0.0).map(|c| ((c as u16 + 101) / 2) as u8);
    let hi = Palette::Jet.color(1.0).map(|c| ((c as u16 + 101) / 2) as u8);
    for (i, px) in out.data().chunks(3).enumerate() {
        assert_eq!(px, if board[i] == 1.0 { &hi[..] } else { &lo[..] });
    }
    assert_eq!(Palette::Jet.color(0.0), [0, 0, 128]);
    assert_eq!(Palette::Jet.color(1.0), [128, 0, 0]);
    assert_eq!(Palette::Gray.color(1.0), [255, 255, 255]);
}

#[test]
fn gray_export_rounds_half_up() {
    let m = map_of(3, 1, vec![0.0, 0.5, 1.0]);
    assert_eq!(m.to_gray().data(), &[0, 128, 255]);
}

#[test]
fn cvis_layout() {
    let m = map_of(2, 1, vec![0.25, 1.0]);
    let bytes = write_cvis(&m);
    assert_eq!(&bytes[..4], b"CVIS");
    assert_eq!(bytes.len(), 14 + 8);
    assert_eq!(&bytes[14..18], &0.25f32.to_le_bytes());
    let back = read_cvis(&bytes).unwrap();
    assert_eq!(back.values, m.values);
    assert!(read_cvis(&bytes[..20]).is_err());
}

#[test]
fn config_validation() {
    let bad = SaliencyConfig {
        delta_s: 200,
        ..SaliencyConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = SaliencyConfig {
        omega: 0,
        ..SaliencyConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(SaliencyConfig::default().validate().is_ok());
}
