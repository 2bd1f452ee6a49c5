//! Brute-force reference implementations and random instance generators shared by the
//! property tests and the acceptance suite.
#![allow(dead_code)]

use rand::Rng;

/// Quadratic DBSCAN: flood fill from each unvisited core point, then border points go to
/// their nearest core (ties to the lexicographically smallest core coordinates), small
/// clusters become noise and ids are renumbered by first appearance.
pub fn dbscan_reference(pts: &[[f64; 3]], eps: f64, min_samples: usize) -> Vec<i32> {
    let n = pts.len();
    let close = |a: usize, b: usize| {
        let d: f64 = (0..3).map(|k| (pts[a][k] - pts[b][k]).powi(2)).sum();
        d <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| close(i, j)).count() >= min_samples).collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && comp[j] == usize::MAX && close(i, j) {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| core[j] && close(i, j)) {
            let d = |c: usize| (0..3).map(|k| (pts[i][k] - pts[c][k]).powi(2)).sum::<f64>();
            best = match best {
                None => Some(j),
                Some(b) if d(j) < d(b) || (d(j) == d(b) && pts[j] < pts[b]) => Some(j),
                keep => keep,
            };
        }
        if let Some(b) = best {
            comp[i] = comp[b];
        }
    }
    let mut sizes = vec![0; next];
    for &c in comp.iter().filter(|&&c| c != usize::MAX) {
        sizes[c] += 1;
    }
    let mut renumber = vec![-1i32; next];
    let mut used = 0;
    comp.iter()
        .map(|&c| {
            if c == usize::MAX || sizes[c] < min_samples {
                return -1;
            }
            if renumber[c] < 0 {
                renumber[c] = used;
                used += 1;
            }
            renumber[c]
        })
        .collect()
}

/// Exact rational `(numerator, denominator)` in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio(pub u64, pub u64);

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(n: u64, d: u64) -> Ratio {
        if n == 0 || d == 0 {
            return Ratio(0, 1);
        }
        let g = gcd(n, d);
        Ratio(n / g, d / g)
    }

    pub fn mul(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.0, self.1 * o.1)
    }

    pub fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }

    pub fn div(self, o: Ratio) -> Ratio {
        if o.0 == 0 {
            return Ratio(0, 1);
        }
        Ratio::new(self.0 * o.1, self.1 * o.0)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

/// `(tp, fp, tn, fn)` by direct enumeration, then precision, recall and F1 as rationals
/// from `2PR / (P + R)`.
pub fn f1_reference(labels: &[u8], scores: &[f64], thr: f64) -> ([u64; 4], Ratio, Ratio, Ratio) {
    let mut c = [0u64; 4];
    for (&y, &s) in labels.iter().zip(scores) {
        let pred = s >= thr;
        let slot = match (pred, y == 1) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        c[slot] += 1;
    }
    let p = Ratio::new(c[0], c[0] + c[1]);
    let r = Ratio::new(c[0], c[0] + c[3]);
    let f1 = Ratio::new(2, 1).mul(p).mul(r).div(p.add(r));
    (c, p, r, f1)
}

/// Pair enumeration: a positive ranked above a negative wins 1, a tie wins 1/2.
pub fn auc_reference(labels: &[u8], scores: &[f64]) -> Option<f64> {
    let mut half_units: u64 = 0;
    let (mut np, mut nn) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi == 1 {
            np += 1;
        } else {
            nn += 1;
        }
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 1 {
                continue;
            }
            half_units += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    (np > 0 && nn > 0).then(|| half_units as f64 / (2 * np * nn) as f64)
}

/// Labels and scores with frequent ties: scores drawn from a coarse grid.
pub fn random_scores(rng: &mut impl Rng, max_len: usize) -> (Vec<u8>, Vec<f64>) {
    let n = rng.random_range(1..=max_len);
    let grid = rng.random_range(2..=20);
    let labels = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    let scores = (0..n).map(|_| rng.random_range(0..=grid) as f64 / grid as f64).collect();
    (labels, scores)
}

/// Small clustered cloud: a few blobs plus uniform noise, sometimes snapped to a grid
/// so that distance ties occur.
pub fn random_cloud(rng: &mut impl Rng, max_len: usize) -> Vec<[f64; 3]> {
    let n = rng.random_range(0..=max_len);
    let blobs: Vec<[f64; 3]> = (0..rng.random_range(1..5))
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)])
        .collect();
    let snap = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            let mut p = if rng.random_bool(0.8) {
                let b = blobs[rng.random_range(0..blobs.len())];
                [0, 1, 2].map(|k| b[k] + rng.random_range(-0.8..0.8))
            } else {
                [0, 1, 2].map(|_| rng.random_range(-6.0..6.0))
            };
            if snap {
                p = p.map(|v: f64| (v * 4.0).round() / 4.0);
            }
            p
        })
        .collect()
}

/// Points on the plane `normal . p + offset = 0` with Gaussian noise along the normal,
/// plus uniform outliers in a surrounding box.
pub fn planted_plane(rng: &mut impl Rng, normal: [f64; 3], offset: f64, n: usize, outlier_frac: f64, sigma: f64) -> Vec<[f64; 3]> {
    let norm = (normal[0].powi(2) + normal[1].powi(2) + normal[2].powi(2)).sqrt();
    let nv = normal.map(|v| v / norm);
    let helper = if nv[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let u = cross(nv, helper);
    let un = (u[0].powi(2) + u[1].powi(2) + u[2].powi(2)).sqrt();
    let u = u.map(|v| v / un);
    let v = cross(nv, u);
    let normal_dist = rand_distr::Normal::new(0.0, sigma).unwrap();
    let origin = nv.map(|c| -offset / norm * c);
    (0..n)
        .map(|_| {
            if rng.random_bool(outlier_frac) {
                [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-5.0..10.0)]
            } else {
                let (a, b): (f64, f64) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
                let e: f64 = rng.sample(normal_dist);
                [0, 1, 2].map(|k| origin[k] + a * u[k] + b * v[k] + e * nv[k])
            }
        })
        .collect()
}

/// Worst relative error between backprop and central differences of `sum(r * logits)`
/// over `probes` randomly chosen trainable scalars of a fresh model, in training mode
/// with a fixed dropout seed and difference step `step`.
pub fn model_gradcheck(spec: &blockcast::models::ModelSpec, seed: u64, batch: usize, probes: usize, step: f64) -> f64 {
    use blockcast_nn::gradcheck::{central_difference, relative_error};
    use blockcast_nn::{Mode, Tensor, TrainState};

    let mut model = blockcast::models::build_model(spec, seed).unwrap();
    let mut rng = blockcast::data::seeded_rng(seed, 99);
    let mut shape = vec![batch];
    shape.extend(spec.prepared_shape());
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let r: Vec<f64> = (0..batch * spec.horizons).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dropout_seed = seed ^ 0x5eed;
    let objective = |m: &blockcast::models::ModalityModel| {
        let mut state = TrainState::new(dropout_seed);
        let (y, _) = m.forward_prepared(&x, &mut Mode::Train(&mut state)).unwrap();
        y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut state = TrainState::new(dropout_seed);
    let (y, cache) = model.forward_prepared(&x, &mut Mode::Train(&mut state)).unwrap();
    let grad = Tensor::new(y.shape().to_vec(), r.clone()).unwrap();
    model.store_mut().zero_grad();
    model.backward(&cache, &grad).unwrap();

    let slots: Vec<(blockcast_nn::ParamId, usize)> = model
        .store()
        .ids()
        .filter(|id| model.store().params()[id.index()].trainable())
        .flat_map(|id| (0..model.store().value(id).scalar_count()).map(move |j| (id, j)))
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let (id, j) = slots[rng.random_range(0..slots.len())];
        let analytic = model.store().grad(id).data()[j];
        let base = model.store().value(id).data()[j];
        let numeric = central_difference(
            |v| {
                model.store_mut().value_mut(id).data_mut()[j] = v;
                objective(&model)
            },
            base,
            step,
        );
        model.store_mut().value_mut(id).data_mut()[j] = base;
        worst = worst.max(relative_error(analytic, numeric));
    }
    worst
}
