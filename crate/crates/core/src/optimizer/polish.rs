//! Local search around an incumbent. First improvement, strict descent.

use std::time::Instant;

use fixedbitset::FixedBitSet;

use super::instance::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PolishEnd {
    Converged,
    Deadline,
}

struct State<'a> {
    inst: &'a Instance,
    groups: Vec<Vec<usize>>,
    fps: Vec<FixedBitSet>,
    objective: u64,
    scratch: Vec<u32>,
}

impl State<'_> {
    /// Evaluates `groups` with some groups replaced, keeping the result if it is
    /// strictly better.
    fn try_candidate(&mut self, groups: Vec<Vec<usize>>, fps: Vec<FixedBitSet>) -> bool {
        match self.inst.evaluate_with(&groups, &fps, &mut self.scratch) {
            Some(obj) if obj < self.objective => {
                self.objective = obj;
                self.groups = groups;
                self.fps = fps;
                true
            }
            _ => false,
        }
    }

    fn relocate(&mut self, a: usize, idx: usize, b: usize) -> bool {
        if self.groups[b].len() >= self.inst.max_group {
            return false;
        }
        let mut groups = self.groups.clone();
        let p = groups[a].remove(idx);
        groups[b].push(p);
        let mut fps = self.fps.clone();
        fps[b].union_with(&self.inst.footprints[p]);
        if groups[a].is_empty() {
            groups.remove(a);
            fps.remove(a);
        } else {
            fps[a] = self.inst.footprint(&groups[a]);
        }
        self.try_candidate(groups, fps)
    }

    fn swap(&mut self, a: usize, x: usize, b: usize, y: usize) -> bool {
        let mut groups = self.groups.clone();
        let p = groups[a][x];
        groups[a][x] = groups[b][y];
        groups[b][y] = p;
        let mut fps = self.fps.clone();
        fps[a] = self.inst.footprint(&groups[a]);
        fps[b] = self.inst.footprint(&groups[b]);
        self.try_candidate(groups, fps)
    }

    fn reorder(&mut self, f: impl Fn(&mut Vec<Vec<usize>>, &mut Vec<FixedBitSet>)) -> bool {
        let mut groups = self.groups.clone();
        let mut fps = self.fps.clone();
        f(&mut groups, &mut fps);
        self.try_candidate(groups, fps)
    }

    /// One pass over the neighbourhood; true if some move was taken.
    fn pass(&mut self, deadline: Option<Instant>) -> Option<bool> {
        let late = || deadline.is_some_and(|d| Instant::now() >= d);
        let mut improved = false;
        let mut a = 0;
        while a < self.groups.len() {
            if late() {
                return None;
            }
            let mut x = 0;
            while x < self.groups.get(a).map_or(0, |g| g.len()) {
                for b in 0..self.groups.len() {
                    if b != a && a < self.groups.len() && x < self.groups[a].len() && self.relocate(a, x, b) {
                        improved = true;
                        break;
                    }
                }
                x += 1;
            }
            a += 1;
        }
        for a in 0..self.groups.len() {
            if late() {
                return None;
            }
            for b in a + 1..self.groups.len() {
                for x in 0..self.groups[a].len() {
                    for y in 0..self.groups[b].len() {
                        improved |= self.swap(a, x, b, y);
                    }
                }
            }
        }
        let n = self.groups.len();
        for a in 0..n {
            if late() {
                return None;
            }
            for b in a + 1..n {
                improved |= self.reorder(|g, f| {
                    g.swap(a, b);
                    f.swap(a, b);
                });
                improved |= self.reorder(|g, f| {
                    g[a..=b].reverse();
                    f[a..=b].reverse();
                });
            }
        }
        Some(improved)
    }
}

/// Improves `groups` in place until no move helps or the deadline passes.
/// Returns the final objective.
pub(crate) fn polish(
    inst: &Instance,
    groups: &mut Vec<Vec<usize>>,
    deadline: Option<Instant>,
) -> Option<(u64, PolishEnd)> {
    let objective = inst.evaluate(groups)?;
    let fps = groups.iter().map(|g| inst.footprint(g)).collect();
    let mut state = State { inst, groups: std::mem::take(groups), fps, objective, scratch: vec![0; inst.n_pixels] };
    let end = loop {
        match state.pass(deadline) {
            None => break PolishEnd::Deadline,
            Some(false) => break PolishEnd::Converged,
            Some(true) => {}
        }
    };
    *groups = state.groups;
    groups.iter_mut().for_each(|g| g.sort_unstable());
    Some((state.objective, end))
}
