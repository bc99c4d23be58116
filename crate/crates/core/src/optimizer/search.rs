//! Depth-first branch-and-bound over ordered groupings.
//!
//! Groups are built one after the other in execution order. Inside a group,
//! patches are added in increasing id order so each set is generated once.
//! A node either adds a patch to the open group or closes it and opens the
//! next one. Loads are charged as soon as a patch is added: a pixel of the
//! new patch is loaded iff it is in neither the open group nor the previous
//! group.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use fixedbitset::FixedBitSet;

use super::instance::Instance;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Incumbent {
    pub objective: u64,
    pub groups: Vec<Vec<usize>>,
    pub assignment: Vec<usize>,
}

impl Incumbent {
    pub fn new(inst: &Instance, objective: u64, groups: Vec<Vec<usize>>) -> Self {
        let mut groups = groups;
        groups.iter_mut().for_each(|g| g.sort_unstable());
        let assignment = inst.assignment(&groups);
        Incumbent { objective, groups, assignment }
    }

    /// Lower objective wins; ties go to the lexicographically smaller assignment.
    pub fn beats(&self, other: &Incumbent) -> bool {
        (self.objective, &self.assignment) < (other.objective, &other.assignment)
    }
}

/// Best solution seen by any worker. Updates only ever improve it.
#[derive(Debug)]
pub(crate) struct SharedIncumbent {
    best: AtomicU64,
    inner: Mutex<Option<Incumbent>>,
}

impl SharedIncumbent {
    pub fn new(initial: Option<Incumbent>) -> Self {
        let best = initial.as_ref().map_or(u64::MAX, |i| i.objective);
        SharedIncumbent { best: AtomicU64::new(best), inner: Mutex::new(initial) }
    }

    pub fn best(&self) -> u64 {
        self.best.load(Ordering::Acquire)
    }

    pub fn offer(&self, candidate: Incumbent) -> bool {
        let mut guard = self.inner.lock().expect("incumbent lock");
        let better = match guard.as_ref() {
            None => true,
            Some(cur) => candidate.beats(cur),
        };
        if better {
            self.best.store(candidate.objective, Ordering::Release);
            *guard = Some(candidate);
        }
        better
    }

    pub fn snapshot(&self) -> Option<Incumbent> {
        self.inner.lock().expect("incumbent lock").clone()
    }

    fn with_assignment<R>(&self, f: impl FnOnce(Option<&[usize]>) -> R) -> R {
        let guard = self.inner.lock().expect("incumbent lock");
        f(guard.as_ref().map(|i| i.assignment.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SearchOutcome {
    /// The whole tree was explored.
    pub closed: bool,
    pub nodes: u64,
}

const UNASSIGNED: usize = usize::MAX;

struct Worker<'a> {
    inst: &'a Instance,
    shared: &'a SharedIncumbent,
    deadline: Option<Instant>,
    stop: &'a AtomicBool,
    assignment: Vec<usize>,
    closed: Vec<Vec<usize>>,
    open: Vec<usize>,
    prev_fp: FixedBitSet,
    open_fp: FixedBitSet,
    open_count: Vec<u16>,
    loads: Vec<u32>,
    cover: Vec<u32>,
    /// pixels still needed by some unassigned patch
    needed: FixedBitSet,
    load_total: u64,
    remaining: usize,
    nodes: u64,
    aborted: bool,
}

impl<'a> Worker<'a> {
    fn new(inst: &'a Instance, shared: &'a SharedIncumbent, deadline: Option<Instant>, stop: &'a AtomicBool) -> Self {
        let mut cover = vec![0u32; inst.n_pixels];
        for px in &inst.patch_pixels {
            px.iter().for_each(|&j| cover[j] += 1);
        }
        let mut needed = FixedBitSet::with_capacity(inst.n_pixels);
        cover.iter().enumerate().filter(|(_, &c)| c > 0).for_each(|(j, _)| needed.insert(j));
        Worker {
            inst,
            shared,
            deadline,
            stop,
            assignment: vec![UNASSIGNED; inst.n_patches],
            closed: Vec::new(),
            open: Vec::new(),
            prev_fp: FixedBitSet::with_capacity(inst.n_pixels),
            open_fp: FixedBitSet::with_capacity(inst.n_pixels),
            open_count: vec![0; inst.n_pixels],
            loads: vec![0; inst.n_pixels],
            cover,
            needed,
            load_total: 0,
            remaining: inst.n_patches,
            nodes: 0,
            aborted: false,
        }
    }

    /// Pixels `p` would load, and how many pixels it adds to the open group.
    fn add_cost(&self, p: usize) -> (usize, usize) {
        let mut fresh = 0;
        let mut grow = 0;
        for &j in &self.inst.patch_pixels[p] {
            if !self.open_fp.contains(j) {
                grow += 1;
                if !self.prev_fp.contains(j) {
                    fresh += 1;
                }
            }
        }
        (fresh, grow)
    }

    fn can_add(&self, p: usize, grow: usize) -> bool {
        if self.open.len() >= self.inst.max_group {
            return false;
        }
        if !self.inst.fits(self.open_fp.count_ones(..) + grow, self.open.len() + 1) {
            return false;
        }
        self.inst.patch_pixels[p]
            .iter()
            .filter(|&&j| !self.open_fp.contains(j) && !self.prev_fp.contains(j))
            .all(|&j| (self.loads[j] as usize) < self.inst.reload)
    }

    fn add(&mut self, p: usize) -> Vec<usize> {
        let mut fresh = Vec::new();
        for &j in &self.inst.patch_pixels[p] {
            if self.open_count[j] == 0 {
                self.open_fp.insert(j);
                if !self.prev_fp.contains(j) {
                    self.loads[j] += 1;
                    fresh.push(j);
                }
            }
            self.open_count[j] += 1;
            self.cover[j] -= 1;
            if self.cover[j] == 0 {
                self.needed.set(j, false);
            }
        }
        self.load_total += fresh.len() as u64;
        self.assignment[p] = self.closed.len();
        self.open.push(p);
        self.remaining -= 1;
        fresh
    }

    fn undo_add(&mut self, p: usize, fresh: &[usize]) {
        self.remaining += 1;
        self.open.pop();
        self.assignment[p] = UNASSIGNED;
        self.load_total -= fresh.len() as u64;
        for &j in fresh {
            self.loads[j] -= 1;
        }
        for &j in &self.inst.patch_pixels[p] {
            self.cover[j] += 1;
            self.needed.insert(j);
            self.open_count[j] -= 1;
            if self.open_count[j] == 0 {
                self.open_fp.set(j, false);
            }
        }
    }

    fn close(&mut self) -> FixedBitSet {
        let old_prev = std::mem::replace(&mut self.prev_fp, self.open_fp.clone());
        self.open_fp.clear();
        for &p in &self.open {
            for &j in &self.inst.patch_pixels[p] {
                self.open_count[j] = 0;
            }
        }
        self.closed.push(std::mem::take(&mut self.open));
        old_prev
    }

    fn undo_close(&mut self, old_prev: FixedBitSet) {
        self.open = self.closed.pop().expect("closed group");
        self.open_fp = std::mem::replace(&mut self.prev_fp, old_prev);
        for &p in &self.open {
            for &j in &self.inst.patch_pixels[p] {
                self.open_count[j] += 1;
            }
        }
    }

    fn lower_bound(&self) -> Option<u64> {
        let inst = self.inst;
        let unreached = self
            .needed
            .as_slice()
            .iter()
            .zip(self.prev_fp.as_slice())
            .zip(self.open_fp.as_slice())
            .map(|((n, p), o)| (n & !p & !o).count_ones() as u64)
            .sum::<u64>();
        let (used, room) = if self.open.is_empty() {
            (self.closed.len(), 0)
        } else {
            (self.closed.len() + 1, inst.max_group - self.open.len())
        };
        let extra = self.remaining.saturating_sub(room).div_ceil(inst.max_group);
        if used + extra > inst.groups {
            return None;
        }
        Some(inst.t_l * (self.load_total + unreached) + inst.t_acc * (used + extra) as u64)
    }

    /// Whether completing this node could give an assignment that sorts
    /// before the incumbent's.
    fn may_be_lex_smaller(&self) -> bool {
        let current = self.closed.len();
        let last = self.open.last().copied();
        let room = self.open.len() < self.inst.max_group;
        self.shared.with_assignment(|inc| {
            let Some(inc) = inc else { return true };
            for (p, &target) in inc.iter().enumerate() {
                let value = match self.assignment[p] {
                    UNASSIGNED => {
                        let joinable = room && last.is_none_or(|l| p > l);
                        let min = if joinable { current } else { current + 1 };
                        if min < target {
                            return true;
                        }
                        if min > target {
                            return false;
                        }
                        // could equal or exceed: undecided
                        return true;
                    }
                    v => v,
                };
                if value != target {
                    return value < target;
                }
            }
            false
        })
    }

    fn leaf(&mut self) {
        let objective = self.inst.t_l * self.load_total + self.inst.t_acc * (self.closed.len() + 1) as u64;
        if objective > self.shared.best() {
            return;
        }
        let mut groups = self.closed.clone();
        groups.push(self.open.clone());
        self.shared.offer(Incumbent { objective, groups, assignment: self.assignment.clone() });
    }

    fn out_of_time(&mut self) -> bool {
        if self.aborted {
            return true;
        }
        if self.nodes.is_multiple_of(256) {
            let late = self.deadline.is_some_and(|d| Instant::now() >= d);
            if late || self.stop.load(Ordering::Relaxed) {
                self.aborted = true;
                self.stop.store(true, Ordering::Relaxed);
            }
        }
        self.aborted
    }

    fn dfs(&mut self) {
        self.nodes += 1;
        if self.out_of_time() {
            return;
        }
        if self.remaining == 0 {
            self.leaf();
            return;
        }
        let Some(bound) = self.lower_bound() else { return };
        let best = self.shared.best();
        if bound > best || (bound == best && !self.may_be_lex_smaller()) {
            return;
        }

        let start = self.open.last().map_or(0, |&l| l + 1);
        let mut touching = Vec::new();
        let mut detached = Vec::new();
        for p in start..self.inst.n_patches {
            if self.assignment[p] != UNASSIGNED {
                continue;
            }
            let (fresh, grow) = self.add_cost(p);
            if !self.can_add(p, grow) {
                continue;
            }
            let overlaps = grow < self.inst.patch_pixels[p].len() || fresh < grow;
            if self.open.is_empty() || overlaps {
                touching.push((fresh, p));
            } else {
                detached.push((fresh, p));
            }
        }
        touching.sort_unstable();
        detached.sort_unstable();

        for &(_, p) in &touching {
            self.branch_add(p);
            if self.aborted {
                return;
            }
        }
        let next_groups = self.inst.groups - self.closed.len() - 1;
        if !self.open.is_empty() && self.remaining <= next_groups * self.inst.max_group {
            let old = self.close();
            self.dfs();
            self.undo_close(old);
            if self.aborted {
                return;
            }
        }
        for &(_, p) in &detached {
            self.branch_add(p);
            if self.aborted {
                return;
            }
        }
    }

    fn branch_add(&mut self, p: usize) {
        let fresh = self.add(p);
        self.dfs();
        self.undo_add(p, &fresh);
    }
}

/// Explores the tree below the root. With several workers the first patch
/// of group 1 is handed out from a shared queue; the result is the same as
/// with one worker whenever the search completes.
pub(crate) fn branch_and_bound(
    inst: &Instance,
    shared: &SharedIncumbent,
    deadline: Option<Instant>,
    workers: usize,
) -> SearchOutcome {
    let stop = AtomicBool::new(false);
    let next = AtomicUsize::new(0);
    let nodes = AtomicU64::new(0);
    let run = |stop: &AtomicBool| {
        let mut w = Worker::new(inst, shared, deadline, stop);
        loop {
            let p = next.fetch_add(1, Ordering::Relaxed);
            if p >= inst.n_patches || w.aborted {
                break;
            }
            let (_, grow) = w.add_cost(p);
            if w.can_add(p, grow) {
                w.branch_add(p);
            }
        }
        nodes.fetch_add(w.nodes, Ordering::Relaxed);
        !w.aborted
    };
    let closed = if workers <= 1 {
        run(&stop)
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers).map(|_| s.spawn(|| run(&stop))).collect();
            handles.into_iter().map(|h| h.join().expect("search worker")).collect::<Vec<_>>().into_iter().all(|b| b)
        })
    };
    SearchOutcome { closed: closed && !stop.load(Ordering::Relaxed), nodes: nodes.load(Ordering::Relaxed) }
}
