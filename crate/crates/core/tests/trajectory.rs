use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillgrid::config::Config;
use skillgrid::pipeline::explore;
use skillgrid::trajectory::{Dataset, DatasetMeta, Episode};
use skillgrid::world::{Heading, Pose};
use skillgrid::Error;

fn small(episodes: usize, steps: u32) -> Config {
    let mut cfg = Config::default();
    cfg.env.obs_size = 8;
    cfg.env.max_steps = steps;
    cfg.explore.episodes = episodes;
    cfg
}

#[test]
fn collection_counts_and_determinism() {
    let cfg = small(4, 30);
    let ds = explore(&cfg, 1).unwrap();
    assert_eq!(ds.episodes().len(), 4);
    assert_eq!(ds.len(), 4 * 31);
    for e in ds.episodes() {
        assert_eq!(e.actions.len(), e.len() - 1);
        assert_eq!(e.pixels.len(), e.len() * 8 * 8 * 3);
    }
    assert_eq!(ds.to_bytes(), explore(&cfg, 1).unwrap().to_bytes());
    assert_ne!(ds.to_bytes(), explore(&cfg, 2).unwrap().to_bytes());
}

#[test]
fn random_actions_are_uniform_within_three_sigma() {
    let ds = explore(&small(20, 500), 4).unwrap();
    let actions: Vec<u8> = ds.episodes().iter().flat_map(|e| e.actions.iter().copied()).collect();
    let n = actions.len() as f64;
    let sigma = (n / 3.0 * (2.0 / 3.0)).sqrt();
    for a in 0..3u8 {
        let c = actions.iter().filter(|&&x| x == a).count() as f64;
        assert!((c - n / 3.0).abs() <= 3.0 * sigma, "action {a}: {c} of {n}");
    }
}

#[test]
fn save_load_round_trip_and_corruption() {
    let ds = explore(&small(2, 10), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.skld");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes(), ds.to_bytes());

    let bytes = ds.to_bytes();
    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(Dataset::from_bytes(&bad), Err(Error::BadMagic)));
    let mut ver = bytes.clone();
    ver[4] = 7;
    assert!(matches!(Dataset::from_bytes(&ver), Err(Error::VersionMismatch { found: 7, .. })));
    assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Truncated)));
    assert!(matches!(Dataset::from_bytes(&bytes[..20]), Err(Error::Truncated)));
}

#[test]
fn delays_are_clamped_and_average_the_configured_mean() {
    let ds = explore(&small(4, 5000), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sum = 0usize;
    for _ in 0..10_000 {
        let p = ds.sample_delayed_pair(15.0, 5.0, &mut rng).unwrap();
        let len = ds.episodes()[p.episode].len();
        assert!(p.delay >= 1 && p.positive() < len);
        sum += p.delay;
    }
    let mean = sum as f64 / 1e4;
    assert!((mean - 15.0).abs() <= 0.5, "mean delay {mean}");
}

fn tiny(lengths: &[usize]) -> Dataset {
    let pose = Pose { x: 0.5, y: 0.5, heading: Heading::N };
    let episodes = lengths
        .iter()
        .map(|&n| Episode {
            pixels: (0..n * 3).map(|i| i as f32 / (n * 3) as f32).collect(),
            coords: Vec::new(),
            actions: vec![0; n.saturating_sub(1)],
            poses: vec![pose; n],
        })
        .collect();
    let meta = DatasetMeta { map_id: "t".into(), seed: 0, env_hash: [0; 32], obs_dims: (1, 1, 3), coord_dim: 0 };
    Dataset::new(meta, episodes).unwrap()
}

#[test]
fn delayed_pairs_stay_inside_short_episodes() {
    let ds = tiny(&[1, 3, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let p = ds.sample_delayed_pair(15.0, 5.0, &mut rng).unwrap();
        assert_ne!(p.episode, 0);
        assert!(p.positive() < ds.episodes()[p.episode].len());
    }
    assert!(matches!(tiny(&[1, 1]).sample_delayed_pair(15.0, 5.0, &mut rng), Err(Error::Usage(_))));
}

#[test]
fn batch_sampling_is_uniform_and_seeded() {
    let single = tiny(&[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(single.sample_batch(1, &mut rng).unwrap(), vec![0]);
    assert!(matches!(single.sample_batch(0, &mut rng), Err(Error::Usage(_))));

    let ds = tiny(&[10, 10, 10]);
    let a = ds.sample_batch(50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a, ds.sample_batch(50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap());
    let draws = 30_000usize;
    let mut counts = vec![0usize; ds.len()];
    for i in ds.sample_batch(draws, &mut rng).unwrap() {
        counts[i] += 1;
    }
    let p = 1.0 / ds.len() as f64;
    let (mean, sigma) = (draws as f64 * p, (draws as f64 * p * (1.0 - p)).sqrt());
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "observation {i}: {c}");
    }
}

#[test]
fn pixel_batches_are_channel_major() {
    let ds = tiny(&[2]);
    let b = ds.pixel_batch(&[1, 0]);
    assert_eq!(b.shape(), &[2, 3, 1, 1]);
    assert_eq!(b.data(), &[ds.get(1).pixels, ds.get(0).pixels].concat()[..]);
}
