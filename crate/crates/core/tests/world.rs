use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillgrid::config::{EnvConfig, SpawnSpec};
use skillgrid::world::{Action, Env, EnvParams, Heading, Palette, TileMap};

fn components(map: &TileMap) -> usize {
    let (w, h) = (map.width() as i32, map.height() as i32);
    let mut seen = HashSet::new();
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            if !map.is_passable(x, y) || !seen.insert((x, y)) {
                continue;
            }
            count += 1;
            let mut queue = VecDeque::from([(x, y)]);
            while let Some((cx, cy)) = queue.pop_front() {
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let n = (cx + dx, cy + dy);
                    if map.is_passable(n.0, n.1) && seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    count
}

fn border_is_wall(map: &TileMap) -> bool {
    let (w, h) = (map.width() as i32, map.height() as i32);
    (0..w).all(|x| !map.is_passable(x, 0) && !map.is_passable(x, h - 1))
        && (0..h).all(|y| !map.is_passable(0, y) && !map.is_passable(w - 1, y))
}

#[test]
fn handcrafted_map_has_nine_floor_types_and_walled_border() {
    let map = TileMap::handcrafted(48).unwrap();
    let types: HashSet<u8> = map.passable_tiles().iter().map(|&(x, y)| map.floor(x as i32, y as i32).unwrap()).collect();
    assert_eq!(types.len(), 9);
    assert!(border_is_wall(&map));
    assert_eq!(map.floor(2, 2), Some(0));
    assert_eq!(map.floor(24, 2), Some(1));
}

#[test]
fn realistic_maps_are_seeded_connected_and_bounded() {
    for seed in 0..10u64 {
        let a = TileMap::realistic(seed, 48).unwrap();
        assert_eq!(a.to_text(), TileMap::realistic(seed, 48).unwrap().to_text());
        let b = TileMap::realistic(seed + 100, 48).unwrap();
        assert_ne!(a.to_text(), b.to_text(), "seeds {seed} and {}", seed + 100);
        assert_eq!(components(&a), 1);
        assert!(border_is_wall(&a));
        let types: HashSet<u8> = a.passable_tiles().iter().map(|&(x, y)| a.floor(x as i32, y as i32).unwrap()).collect();
        assert!(types.len() >= 6, "seed {seed}: {} floor types", types.len());
        let interior = (46 * 46) as usize;
        assert!(a.passable_tiles().len() < interior, "seed {seed}: no obstacles");
    }
}

#[test]
fn uniform_spawn_reaches_every_region() {
    let mut env = Env::from_config(&EnvConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hits = [0usize; 9];
    for _ in 0..10_000 {
        let obs = env.reset(&mut rng).unwrap();
        let (x, y) = obs.pose.tile();
        hits[env.map().region(x, y).unwrap() as usize] += 1;
    }
    assert!(hits.iter().all(|&h| h >= 1), "{hits:?}");
}

#[test]
fn reset_starts_at_relative_origin_and_is_seeded() {
    let cfg = EnvConfig { coords: true, obs_size: 16, ..EnvConfig::default() };
    let mut env = Env::from_config(&cfg).unwrap();
    let a = env.reset(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(a.coords, Some([0.0, 0.0]));
    assert_eq!(env.state().unwrap().tick, 0);
    let b = env.reset(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(a, b);
    let no_coords = Env::from_config(&EnvConfig { obs_size: 16, ..EnvConfig::default() }).unwrap().reset(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(no_coords.coords, None);
}

/// Concentric rings around the centre tile, invariant under quarter turns.
fn ring_map() -> TileMap {
    let n = 11i32;
    let c = n / 2;
    let mut text = format!("skillgrid-map {n} {n} 4\n");
    for y in 0..n {
        let row: Vec<String> = (0..n)
            .map(|x| {
                let r = (x - c).abs().max((y - c).abs());
                if r == c { "#".to_string() } else { (r % 4).to_string() }
            })
            .collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    TileMap::from_text(&text).unwrap()
}

#[test]
fn quarter_turn_at_centre_of_symmetric_map_keeps_pixels() {
    let map = Arc::new(ring_map());
    let palette = Arc::new(Palette::default_for(4).unwrap());
    let params = EnvParams::from(&EnvConfig { obs_size: 32, ..EnvConfig::default() });
    let mut env = Env::new(map, palette, params).unwrap();
    let first = env.reset_at((5, 5), Heading::N).unwrap().pixels;
    for h in [Heading::E, Heading::S, Heading::W] {
        assert_eq!(env.reset_at((5, 5), h).unwrap().pixels, first, "{h:?}");
    }
    assert!(first.iter().all(|&v| (0.0..=1.0).contains(&v)));
    // Off-centre the view is not symmetric.
    let n = env.reset_at((3, 5), Heading::N).unwrap().pixels;
    let e = env.reset_at((3, 5), Heading::E).unwrap().pixels;
    assert_ne!(n, e);
}

#[test]
fn random_walks_stay_inside_and_tick_by_frame_skip() {
    let cfg = EnvConfig { obs_size: 8, max_steps: 200, coords: true, ..EnvConfig::default() };
    let mut env = Env::from_config(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        env.reset(&mut rng).unwrap();
        let mut steps = 0;
        loop {
            let before = env.state().unwrap().tick;
            let action = Action::from_index(rng.random_range(0..3)).unwrap();
            let (obs, done) = env.step(action).unwrap();
            steps += 1;
            assert_eq!(env.state().unwrap().tick, before + 10);
            let (x, y) = obs.pose.tile();
            assert!(env.map().is_passable(x, y));
            assert!(obs.coords.unwrap().iter().all(|c| (-1.0..=1.0).contains(c)));
            assert!(obs.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if done {
                break;
            }
        }
        assert_eq!(steps, 200);
        assert!(env.step(Action::Forward).is_err());
    }
}

#[test]
fn action_sequence_determines_trajectory() {
    let cfg = EnvConfig { obs_size: 8, max_steps: 50, spawn: SpawnSpec::Region(4), ..EnvConfig::default() };
    let run = || {
        let mut env = Env::from_config(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut out = vec![env.reset(&mut rng).unwrap()];
        for i in 0..50 {
            out.push(env.step(Action::from_index((i * 7 % 3) as u8).unwrap()).unwrap().0);
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn five_tiles_east_gives_fraction_of_half_extent() {
    let mut env = Env::from_config(&EnvConfig { obs_size: 8, coords: true, frame_skip: 5, ..EnvConfig::default() }).unwrap();
    env.reset_at((2, 2), Heading::E).unwrap();
    let (obs, _) = env.step(Action::Forward).unwrap();
    let c = obs.coords.unwrap();
    assert!((c[0] - 5.0 / 24.0).abs() < 1e-6 && c[1] == 0.0, "{c:?}");
}
