#![allow(dead_code)]

use replab::game::{Game, SimplexPoint, StrategyProfile};
use replab::sde::NoiseStream;

/// Entries i.i.d. uniform on [-1, 1].
pub fn random_game(rng: &mut NoiseStream, n: usize, m: usize) -> Game {
    let a = (0..n).map(|_| (0..m).map(|_| 2.0 * rng.uniform() - 1.0).collect()).collect();
    Game::new(format!("random_{n}x{m}"), a).unwrap()
}

/// Random game with 2 <= n, m <= max_dim.
pub fn random_shape_game(rng: &mut NoiseStream, max_dim: usize) -> Game {
    let pick = |rng: &mut NoiseStream| 2 + ((rng.uniform() * (max_dim - 1) as f64) as usize).min(max_dim - 2);
    let (n, m) = (pick(rng), pick(rng));
    random_game(rng, n, m)
}

/// Interior profile with every component at least `floor`.
pub fn interior_profile(rng: &mut NoiseStream, n: usize, m: usize, floor: f64) -> StrategyProfile {
    let mut block = |k: usize| {
        let w: Vec<f64> = rng.simplex(k).into_vec().into_iter().map(|v| v + floor).collect();
        SimplexPoint::from_weights(w).unwrap()
    };
    let x = block(n);
    let y = block(m);
    StrategyProfile::new(x, y)
}

pub fn mp() -> Game {
    Game::new("matching_pennies", vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
}

pub fn mp_3x2() -> Game {
    Game::new("mp_3x2", vec![vec![1.0, -1.0], vec![-1.0, 1.0], vec![-2.0, -2.0]]).unwrap()
}
