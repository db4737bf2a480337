//! Stroke ordering to reduce pen-up travel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{dist, Toolpath};
use crate::error::{Error, Result};
use crate::rng::SketchRng;

/// Minimum travel reduction for a local-search move to count as improving.
const IMPROVE_EPS: f64 = 1e-9;

/// Move budget per stroke for the 2-opt phase.
const MOVES_PER_STROKE: usize = 50;

/// Longest run of consecutive strokes moved as one block.
const MAX_BLOCK: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderAlgorithm {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "greedy_nn")]
    GreedyNn,
    #[serde(rename = "greedy_2opt")]
    Greedy2opt,
}

impl OrderAlgorithm {
    pub const ALL: [OrderAlgorithm; 3] = [Self::Identity, Self::GreedyNn, Self::Greedy2opt];

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::GreedyNn => "greedy_nn",
            Self::Greedy2opt => "greedy_2opt",
        }
    }
}

impl fmt::Display for OrderAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::validation(format!(
                "unknown order algorithm '{s}', expected one of: identity, greedy_nn, greedy_2opt"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Item {
    idx: usize,
    rev: bool,
}

struct Ends(Vec<([f64; 2], [f64; 2])>);

impl Ends {
    fn start(&self, it: Item) -> [f64; 2] {
        let (a, b) = self.0[it.idx];
        if it.rev {
            b
        } else {
            a
        }
    }

    fn end(&self, it: Item) -> [f64; 2] {
        let (a, b) = self.0[it.idx];
        if it.rev {
            a
        } else {
            b
        }
    }
}

fn greedy(ends: &Ends) -> Vec<Item> {
    let n = ends.0.len();
    let mut used = vec![false; n];
    let mut pos = [0.0, 0.0];
    let mut seq = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<(f64, Item)> = None;
        for (idx, &(a, b)) in ends.0.iter().enumerate() {
            if used[idx] {
                continue;
            }
            for (p, rev) in [(a, false), (b, true)] {
                let d = dist(pos, p);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, Item { idx, rev }));
                }
            }
        }
        let (_, it) = best.unwrap();
        used[it.idx] = true;
        pos = ends.end(it);
        seq.push(it);
    }
    seq
}

/// Pair evaluations allowed for perturbation restarts; bounds the kick count
/// so that large inputs spend their time in the main descent.
const KICK_WORK: usize = 4_000_000;
const MAX_KICKS: usize = 200;

/// Local search from the greedy tour, then deterministic double-bridge kicks
/// each followed by another descent, keeping the best tour found. Every
/// improving move and every kick counts against `budget`.
fn improve(ends: &Ends, seq: &mut Vec<Item>, budget: usize) {
    let n = seq.len();
    let mut moves = two_opt(ends, seq, budget);
    if n < 4 {
        return;
    }
    let mut best_cost = travel(ends, seq);
    let kicks = MAX_KICKS.min(KICK_WORK / (n * n));
    let mut rng = SketchRng::new(n as u64);
    for _ in 0..kicks {
        if moves >= budget {
            break;
        }
        // A B C D -> A C B D with non-empty B and C
        let mut cuts = [0; 3].map(|_| 1 + rng.below(n - 1));
        cuts.sort_unstable();
        let [a, b, c] = cuts;
        if a == b || b == c {
            moves += 1;
            continue;
        }
        let mut cand: Vec<Item> = seq[..a].iter().chain(&seq[b..c]).chain(&seq[a..b]).chain(&seq[c..]).copied().collect();
        moves += 1 + two_opt(ends, &mut cand, budget.saturating_sub(moves + 1));
        let cost = travel(ends, &cand);
        if cost < best_cost - IMPROVE_EPS {
            best_cost = cost;
            *seq = cand;
        }
    }
}

/// First-improvement local search over segment reversals (including single
/// flips) and relocation of runs of up to `MAX_BLOCK` strokes in either
/// orientation.
fn two_opt(ends: &Ends, seq: &mut [Item], budget: usize) -> usize {
    let n = seq.len();
    if budget == 0 {
        return 0;
    }
    let origin = [0.0, 0.0];
    let mut moves = 0;
    loop {
        let mut improved = false;
        for i in 0..n {
            for j in i..n {
                let p = if i == 0 { origin } else { ends.end(seq[i - 1]) };
                let (si, ej) = (ends.start(seq[i]), ends.end(seq[j]));
                let (mut before, mut after) = (dist(p, si), dist(p, ej));
                if j + 1 < n {
                    let nx = ends.start(seq[j + 1]);
                    before += dist(ej, nx);
                    after += dist(si, nx);
                }
                if after < before - IMPROVE_EPS {
                    seq[i..=j].reverse();
                    for it in &mut seq[i..=j] {
                        it.rev = !it.rev;
                    }
                    moves += 1;
                    improved = true;
                    if moves >= budget {
                        return moves;
                    }
                }
            }
        }
        for len in 1..=MAX_BLOCK.min(n) {
            for i in 0..=n - len {
                for flip in [false, true] {
                    if let Some(k) = best_block_move(ends, seq, i, len, flip) {
                        let mut block: Vec<Item> = seq[i..i + len].to_vec();
                        if flip {
                            block.reverse();
                            for it in &mut block {
                                it.rev = !it.rev;
                            }
                        }
                        let mut rest: Vec<Item> = seq[..i].iter().chain(&seq[i + len..]).copied().collect();
                        rest.splice(k..k, block);
                        seq.copy_from_slice(&rest);
                        moves += 1;
                        improved = true;
                        if moves >= budget {
                            return moves;
                        }
                    }
                }
            }
        }
        if !improved {
            if !orient(ends, seq) {
                return moves;
            }
            moves += 1;
            if moves >= budget {
                return moves;
            }
        }
    }
}

/// Sets every stroke's orientation optimally for the current order (a
/// two-state dynamic program). Returns whether travel strictly improved.
fn orient(ends: &Ends, seq: &mut [Item]) -> bool {
    let n = seq.len();
    let before = travel(ends, seq);
    // cost[k][r]: best travel up to stroke k ending with orientation r
    let mut cost = vec![[0.0f64; 2]; n];
    let mut from = vec![[false; 2]; n];
    let at = |k: usize, rev: bool| Item { idx: seq[k].idx, rev };
    for r in [false, true] {
        cost[0][r as usize] = dist([0.0, 0.0], ends.start(at(0, r)));
    }
    for k in 1..n {
        for r in [false, true] {
            let s = ends.start(at(k, r));
            let a = cost[k - 1][0] + dist(ends.end(at(k - 1, false)), s);
            let b = cost[k - 1][1] + dist(ends.end(at(k - 1, true)), s);
            cost[k][r as usize] = a.min(b);
            from[k][r as usize] = b < a;
        }
    }
    let mut r = cost[n - 1][1] < cost[n - 1][0];
    if cost[n - 1][r as usize] >= before - IMPROVE_EPS {
        return false;
    }
    for k in (0..n).rev() {
        seq[k].rev = r;
        r = from[k][r as usize];
    }
    true
}

/// Best strictly improving position at which to re-insert the block
/// `seq[i..i + len]`, optionally reversed. Positions index the sequence with
/// the block removed; ties go to the lowest position.
fn best_block_move(ends: &Ends, seq: &[Item], i: usize, len: usize, flip: bool) -> Option<usize> {
    let n = seq.len();
    let origin = [0.0, 0.0];
    let (first, last) = (seq[i], seq[i + len - 1]);
    let p = if i == 0 { origin } else { ends.end(seq[i - 1]) };
    let (s0, e0) = (ends.start(first), ends.end(last));
    let mut gain = dist(p, s0);
    if i + len < n {
        let nx = ends.start(seq[i + len]);
        gain += dist(e0, nx) - dist(p, nx);
    }
    let (s, e) = if flip { (e0, s0) } else { (s0, e0) };
    let reduced = |m: usize| if m < i { seq[m] } else { seq[m + len] };
    let rest = n - len;
    let mut best: Option<(f64, usize)> = None;
    for k in 0..=rest {
        if k == i && !flip {
            continue;
        }
        let pk = if k == 0 { origin } else { ends.end(reduced(k - 1)) };
        let mut add = dist(pk, s);
        if k < rest {
            let nx = ends.start(reduced(k));
            add += dist(e, nx) - dist(pk, nx);
        }
        let delta = add - gain;
        if delta < -IMPROVE_EPS && best.is_none_or(|(bd, _)| delta < bd) {
            best = Some((delta, k));
        }
    }
    best.map(|(_, k)| k)
}

fn travel(ends: &Ends, seq: &[Item]) -> f64 {
    let mut pos = [0.0, 0.0];
    let mut total = 0.0;
    for &it in seq {
        total += dist(pos, ends.start(it));
        pos = ends.end(it);
    }
    total
}

/// Reorders (and possibly reverses) strokes to shorten pen-up travel from the
/// origin. Geometry is never altered.
pub fn order_strokes(tp: &Toolpath, algorithm: OrderAlgorithm) -> Toolpath {
    if algorithm == OrderAlgorithm::Identity || tp.strokes.is_empty() {
        return tp.clone();
    }
    let ends = Ends(
        tp.strokes
            .iter()
            .map(|s| (s.polyline[0], *s.polyline.last().unwrap()))
            .collect(),
    );
    let mut seq = greedy(&ends);
    // nearest-neighbour can lose to the given order; never return a longer route
    let given: Vec<Item> = tp
        .strokes
        .iter()
        .enumerate()
        .map(|(idx, s)| Item { idx, rev: s.reversed })
        .collect();
    if travel(&ends, &given) < travel(&ends, &seq) {
        seq = given;
    }
    if algorithm == OrderAlgorithm::Greedy2opt {
        let budget = MOVES_PER_STROKE * seq.len();
        improve(&ends, &mut seq, budget);
    }
    Toolpath {
        strokes: seq
            .iter()
            .map(|it| {
                let mut s = tp.strokes[it.idx].clone();
                s.reversed = it.rev;
                s
            })
            .collect(),
        ..tp.clone()
    }
}
