//! Built-in chains: random reversible test chains, birth-death ladders,
//! the two-quadrant dog graph, and the pinned polymer.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{Chain, Observable, RateMatrix, StateSpace};
use crate::error::{Error, Result};
use crate::transforms::Partition;

/// Two-state chain with rates `a` (0 to 1) and `b` (1 to 0).
pub fn two_state(a: f64, b: f64) -> Result<Chain> {
    let rates = RateMatrix::from_triples(2, &[(0, 1, a), (1, 0, b)])?;
    Chain::build(rates)
}

/// Birth-death ladder on `n` states with constant up/down rates.
pub fn birth_death(n: usize, up: f64, down: f64) -> Result<Chain> {
    let mut triples = Vec::with_capacity(2 * n);
    for i in 0..n.saturating_sub(1) {
        triples.push((i, i + 1, up));
        triples.push((i + 1, i, down));
    }
    Chain::build(RateMatrix::from_triples(n, &triples)?)
}

/// Random reversible chain on `n` states.  Each unordered pair carries an
/// edge with probability `density`; conductances and an independent target
/// measure are drawn from the seeded generator, and rates are read off the
/// detailed-balance relation.  Draws are retried until the graph connects.
pub fn random_reversible(n: usize, seed: u64, density: f64) -> Result<Chain> {
    const ATTEMPTS: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ATTEMPTS {
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0f64)).collect();
        let total: f64 = weights.iter().sum();
        let mut triples = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let take = rng.gen::<f64>() < density || j == i + 1 && n <= 3;
                if take {
                    let conductance: f64 = rng.gen_range(0.1..1.0);
                    triples.push((i, j, conductance * total / weights[i]));
                    triples.push((j, i, conductance * total / weights[j]));
                }
            }
        }
        if triples.is_empty() {
            continue;
        }
        match Chain::build(RateMatrix::from_triples(n, &triples)?) {
            Ok(chain) => return Ok(chain),
            Err(Error::Reducible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DisconnectedDraw { attempts: ATTEMPTS })
}

// ---------------------------------------------------------------------------
// Dog graph
// ---------------------------------------------------------------------------

/// Two `d`-dimensional cubes of side `n`, one in the nonnegative and one in
/// the nonpositive orthant, glued at the origin.  All edge rates are one,
/// so the stationary measure is uniform on the `2 (n+1)^d - 1` vertices.
#[derive(Debug, Clone, Copy)]
pub struct DogGraphSpec {
    /// Side length of each quadrant cube.
    pub n: usize,
    /// Dimension; the narrow passage is the single shared origin.
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct DogGraph {
    pub chain: Chain,
    spec: DogGraphSpec,
    coords: Vec<Vec<i64>>,
    origin: usize,
}

const DOG_MAX_STATES: usize = 500_000;
const DOG_MAX_DIM: usize = 6;

fn cube_points(n: i64, d: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * (n as usize + 1));
        for p in &out {
            for c in 0..=n {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn coord_label(p: &[i64]) -> String {
    let parts: Vec<String> = p.iter().map(|c| c.to_string()).collect();
    format!("({})", parts.join(","))
}

impl DogGraph {
    pub fn build(spec: DogGraphSpec) -> Result<DogGraph> {
        if spec.d == 0 || spec.d > DOG_MAX_DIM {
            return Err(Error::DimensionUnsupported(spec.d));
        }
        if spec.n == 0 {
            return Err(Error::BadPartition("quadrant side must be positive".into()));
        }
        let size = 2 * (spec.n + 1).pow(spec.d as u32) - 1;
        if size > DOG_MAX_STATES {
            return Err(Error::StateSpaceTooLarge {
                size,
                cap: DOG_MAX_STATES,
            });
        }

        let mut coords = cube_points(spec.n as i64, spec.d);
        for p in cube_points(spec.n as i64, spec.d) {
            if p.iter().any(|&c| c != 0) {
                coords.push(p.iter().map(|&c| -c).collect());
            }
        }
        let mut index: HashMap<Vec<i64>, usize> = HashMap::with_capacity(coords.len());
        for (i, p) in coords.iter().enumerate() {
            index.insert(p.clone(), i);
        }
        let origin = index[&vec![0i64; spec.d]];

        // Neighbors differ by one in a single coordinate and stay inside
        // one of the two quadrant cubes.
        let mut triples = Vec::new();
        for (i, p) in coords.iter().enumerate() {
            for axis in 0..spec.d {
                for step in [-1i64, 1] {
                    let mut q = p.clone();
                    q[axis] += step;
                    let inside = q.iter().all(|&c| (0..=spec.n as i64).contains(&c))
                        || q.iter().all(|&c| (-(spec.n as i64)..=0).contains(&c));
                    if !inside {
                        continue;
                    }
                    if let Some(&j) = index.get(&q) {
                        if j > i {
                            triples.push((i, j, 1.0));
                            triples.push((j, i, 1.0));
                        }
                    }
                }
            }
        }

        let labels: Vec<String> = coords.iter().map(|p| coord_label(p)).collect();
        let chain = Chain::build_labeled(
            StateSpace::new(labels)?,
            RateMatrix::from_triples(size, &triples)?,
        )?;
        Ok(DogGraph {
            chain,
            spec,
            coords,
            origin,
        })
    }

    pub fn spec(&self) -> DogGraphSpec {
        self.spec
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn coords(&self, state: usize) -> &[i64] {
        &self.coords[state]
    }

    /// Indices of the nonnegative quadrant cube, origin included.
    pub fn positive_quadrant(&self) -> Vec<usize> {
        (0..self.chain.n())
            .filter(|&i| self.coords[i].iter().all(|&c| c >= 0))
            .collect()
    }

    pub fn negative_quadrant(&self) -> Vec<usize> {
        (0..self.chain.n())
            .filter(|&i| self.coords[i].iter().all(|&c| c <= 0))
            .collect()
    }

    /// Default well-depth fraction used by the metastable partition.
    pub fn default_alpha(&self) -> f64 {
        if self.spec.n >= 2 {
            (self.spec.n as f64).ln().powf(-0.25)
        } else {
            1.0
        }
    }

    /// Wells are the deep corners of the two quadrants: all coordinates at
    /// least `alpha * n` in absolute value.  Everything else is passage.
    pub fn metastable_partition(&self, alpha: Option<f64>) -> Result<Partition> {
        let alpha = alpha.unwrap_or_else(|| self.default_alpha());
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::BadPartition(format!(
                "well-depth fraction must be positive, got {alpha}"
            )));
        }
        let depth = alpha * self.spec.n as f64;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, p) in self.coords.iter().enumerate() {
            if p.iter().all(|&c| c as f64 >= depth) {
                pos.push(i);
            } else if p.iter().all(|&c| (-c) as f64 >= depth) {
                neg.push(i);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::BadPartition(format!(
                "well-depth fraction {alpha} leaves an empty well at side {}",
                self.spec.n
            )));
        }
        Partition::new(self.chain.n(), vec![pos, neg])
    }

    /// The coarsest two-well split: each quadrant minus the shared origin
    /// is a well and the origin alone is the passage.
    pub fn origin_partition(&self) -> Result<Partition> {
        let pos: Vec<usize> = self
            .positive_quadrant()
            .into_iter()
            .filter(|&i| i != self.origin)
            .collect();
        let neg: Vec<usize> = self
            .negative_quadrant()
            .into_iter()
            .filter(|&i| i != self.origin)
            .collect();
        Partition::new(self.chain.n(), vec![pos, neg])
    }

    /// Trial function for the passage capacity, constant on diagonal
    /// shells of the positive quadrant.  The shell profile is the harmonic
    /// interpolation that makes the one-dimensional shell network exact:
    /// increments proportional to the reciprocal shell boundary size.
    pub fn diagonal_trial(&self, cutoff: usize) -> Result<Observable> {
        let d = self.spec.d;
        let cutoff = cutoff.max(1).min(self.spec.n * d);
        // Edges between shell l and l+1 in the quadrant, for f depending
        // only on l: each shell-l point has one upward neighbor per axis.
        let shell_sizes: Vec<f64> = (0..cutoff)
            .map(|l| {
                let count = self
                    .coords
                    .iter()
                    .filter(|p| {
                        p.iter().all(|&c| c >= 0) && p.iter().sum::<i64>() == l as i64
                    })
                    .count();
                (count * d) as f64
            })
            .collect();
        let mut profile = vec![0.0; cutoff + 1];
        for l in 0..cutoff {
            profile[l + 1] = profile[l] + 1.0 / shell_sizes[l];
        }
        let total = profile[cutoff];
        let mut f = Observable::constant(self.chain.n(), 0.0);
        for (i, p) in self.coords.iter().enumerate() {
            if p.iter().all(|&c| c >= 0) {
                let l = p.iter().sum::<i64>() as usize;
                f.as_mut_slice()[i] = if l >= cutoff {
                    1.0
                } else {
                    profile[l] / total
                };
            }
        }
        Ok(f)
    }

    /// Indicator of the positive quadrant minus the origin; its energy is
    /// exactly `d / |V|`, the sharp passage bound for `d >= 3`.
    pub fn quadrant_indicator(&self) -> Observable {
        let mut f = Observable::constant(self.chain.n(), 0.0);
        for (i, p) in self.coords.iter().enumerate() {
            if i != self.origin && p.iter().all(|&c| c >= 0) {
                f.as_mut_slice()[i] = 1.0;
            }
        }
        f
    }
}

// ---------------------------------------------------------------------------
// Pinned polymer
// ---------------------------------------------------------------------------

/// Lattice bridges over `[-n, n]`: paths with unit increments pinned to
/// zero at both endpoints.  The interface prefers to avoid height zero
/// when `alpha < 1`; corner flips at interior sites drive the dynamics.
#[derive(Debug, Clone, Copy)]
pub struct PolymerSpec {
    /// Half-length; the bridge has `2 n` increments.
    pub n: usize,
    /// Pinning strength: the stationary weight of a path is
    /// `alpha^(number of interior zeros)`.
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct Polymer {
    pub chain: Chain,
    spec: PolymerSpec,
    /// Heights at sites `0..=2n` (site `j` of the centered picture is
    /// entry `j + n`).
    heights: Vec<Vec<i64>>,
}

const POLYMER_MAX_HALF_LENGTH: usize = 8;

fn binomial(n: usize, k: usize) -> usize {
    let mut out = 1usize;
    for i in 0..k {
        out = out * (n - i) / (i + 1);
    }
    out
}

impl Polymer {
    pub fn build(spec: PolymerSpec) -> Result<Polymer> {
        if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
            return Err(Error::Parse(format!(
                "pinning strength must be positive and finite, got {}",
                spec.alpha
            )));
        }
        if spec.n == 0 {
            return Err(Error::BadPartition("bridge length must be positive".into()));
        }
        if spec.n > POLYMER_MAX_HALF_LENGTH {
            return Err(Error::StateSpaceTooLarge {
                size: binomial(2 * spec.n, spec.n),
                cap: binomial(2 * POLYMER_MAX_HALF_LENGTH, POLYMER_MAX_HALF_LENGTH),
            });
        }

        let steps = 2 * spec.n;
        // Balanced increment words in lexicographic order ('0' = down).
        let mut words: Vec<u32> = (0u32..1 << steps)
            .filter(|w| w.count_ones() as usize == spec.n)
            .collect();
        words.sort_unstable_by_key(|w| {
            // Lexicographic on the bit string read from the first step.
            w.reverse_bits() >> (32 - steps)
        });

        let mut heights = Vec::with_capacity(words.len());
        let mut labels = Vec::with_capacity(words.len());
        let mut index: HashMap<u32, usize> = HashMap::with_capacity(words.len());
        for (i, &w) in words.iter().enumerate() {
            let mut h = Vec::with_capacity(steps + 1);
            let mut cur = 0i64;
            h.push(cur);
            let mut label = String::with_capacity(steps);
            for s in 0..steps {
                let up = (w >> s) & 1 == 1;
                cur += if up { 1 } else { -1 };
                h.push(cur);
                label.push(if up { '1' } else { '0' });
            }
            heights.push(h);
            labels.push(label);
            index.insert(w, i);
        }

        // Corner flips: adjacent opposite increments swap, moving one
        // height by two.  Flips off height zero run faster than flips
        // onto it; the ratio is the pinning strength.
        let flat = 0.5;
        let off_zero = 1.0 / (1.0 + spec.alpha);
        let onto_zero = spec.alpha / (1.0 + spec.alpha);
        let mut triples = Vec::new();
        for (i, &w) in words.iter().enumerate() {
            for s in 0..steps - 1 {
                let a = (w >> s) & 1;
                let b = (w >> (s + 1)) & 1;
                if a == b {
                    continue;
                }
                let flipped = w ^ (1 << s) ^ (1 << (s + 1));
                let j = index[&flipped];
                if j < i {
                    continue;
                }
                let old = heights[i][s + 1];
                let new = heights[j][s + 1];
                let fwd = if old == 0 {
                    off_zero
                } else if new == 0 {
                    onto_zero
                } else {
                    flat
                };
                let back = if new == 0 {
                    off_zero
                } else if old == 0 {
                    onto_zero
                } else {
                    flat
                };
                triples.push((i, j, fwd));
                triples.push((j, i, back));
            }
        }

        let chain = Chain::build_labeled(
            StateSpace::new(labels)?,
            RateMatrix::from_triples(words.len(), &triples)?,
        )?;
        let polymer = Polymer {
            chain,
            spec,
            heights,
        };
        polymer.certify_pinning_measure()?;
        Ok(polymer)
    }

    /// The stationary measure must match the pinning weights exactly.
    fn certify_pinning_measure(&self) -> Result<()> {
        let mut weights = Vec::with_capacity(self.chain.n());
        for h in &self.heights {
            let zeros = h[1..h.len() - 1].iter().filter(|&&x| x == 0).count();
            weights.push(self.spec.alpha.powi(zeros as i32));
        }
        let total: f64 = weights.iter().sum();
        for (i, w) in weights.iter().enumerate() {
            let expect = w / total;
            if (self.chain.pi()[i] - expect).abs() > 1e-12 * expect.max(1.0) {
                return Err(Error::NotReversible {
                    row: i,
                    col: i,
                    relative_error: (self.chain.pi()[i] - expect).abs() / expect,
                });
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> PolymerSpec {
        self.spec
    }

    /// Height at centered site `j` (between `-n` and `n`).
    pub fn height(&self, state: usize, j: i64) -> i64 {
        self.heights[state][(j + self.spec.n as i64) as usize]
    }

    pub fn heights(&self, state: usize) -> &[i64] {
        &self.heights[state]
    }

    /// Interior margin kept free of sign constraints at the well edge.
    pub fn default_margin(&self) -> usize {
        if self.spec.n >= 2 {
            (self.spec.n as f64).ln().powf(0.25).ceil() as usize
        } else {
            0
        }
    }

    /// Wells are paths of definite sign on the bulk of the bridge: all
    /// heights strictly positive (resp. negative) at sites `|j| < n - margin`.
    pub fn metastable_partition(&self, margin: Option<usize>) -> Result<Partition> {
        let margin = margin.unwrap_or_else(|| self.default_margin());
        if margin >= self.spec.n {
            return Err(Error::BadPartition(format!(
                "margin {margin} swallows the whole bridge of half-length {}",
                self.spec.n
            )));
        }
        let bulk: Vec<i64> = (-(self.spec.n as i64) + 1 + margin as i64
            ..=self.spec.n as i64 - 1 - margin as i64)
            .collect();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..self.chain.n() {
            if bulk.iter().all(|&j| self.height(i, j) > 0) {
                pos.push(i);
            } else if bulk.iter().all(|&j| self.height(i, j) < 0) {
                neg.push(i);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::BadPartition(
                "sign wells are empty at this margin".into(),
            ));
        }
        Partition::new(self.chain.n(), vec![pos, neg])
    }
}
