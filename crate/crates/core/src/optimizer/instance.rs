//! Bitset view of an [`IlpModel`] used by the search: patch footprints,
//! capacity limits, and a fast objective/feasibility evaluation of an
//! ordered list of groups.

use fixedbitset::FixedBitSet;

use super::model::IlpModel;

#[derive(Debug, Clone)]
pub(crate) struct Instance {
    pub n_patches: usize,
    pub n_pixels: usize,
    pub footprints: Vec<FixedBitSet>,
    pub patch_pixels: Vec<Vec<usize>>,
    pub max_group: usize,
    pub groups: usize,
    pub reload: usize,
    pub t_l: u64,
    pub t_acc: u64,
    pub h_out: usize,
    pub w_out: usize,
    c_in: u64,
    c_out: u64,
    kernel_mem: u64,
    size_mem: u64,
}

impl Instance {
    pub fn from_model(model: &IlpModel) -> Self {
        let layer = &model.layer;
        let (n_patches, n_pixels) = (model.num_patches(), model.num_pixels());
        let mut patch_pixels = vec![Vec::new(); n_patches];
        for &(i, j) in &model.pxl_in_p {
            patch_pixels[i].push(j);
        }
        let footprints = patch_pixels
            .iter()
            .map(|px| {
                let mut b = FixedBitSet::with_capacity(n_pixels);
                px.iter().for_each(|&j| b.insert(j));
                b
            })
            .collect();
        Instance {
            n_patches,
            n_pixels,
            footprints,
            patch_pixels,
            max_group: model.nb_patches_max,
            groups: model.groups,
            reload: model.nb_data_reload,
            t_l: model.t_l,
            t_acc: model.t_acc,
            h_out: layer.h_out(),
            w_out: layer.w_out(),
            c_in: layer.c_in as u64,
            c_out: layer.c_out() as u64,
            kernel_mem: (layer.c_out() * layer.kernel_elements()) as u64,
            size_mem: model.size_mem,
        }
    }

    /// Whether a group of `patches` patches touching `pixels` pixels fits on chip.
    pub fn fits(&self, pixels: usize, patches: usize) -> bool {
        self.c_in * pixels as u64 + self.kernel_mem + self.c_out * patches as u64 <= self.size_mem
    }

    pub fn footprint(&self, group: &[usize]) -> FixedBitSet {
        let mut fp = FixedBitSet::with_capacity(self.n_pixels);
        for &p in group {
            fp.union_with(&self.footprints[p]);
        }
        fp
    }

    /// Objective of a sequence of non-empty groups, or `None` when a group
    /// is too large, does not fit, or some pixel is loaded too often.
    pub fn evaluate(&self, groups: &[Vec<usize>]) -> Option<u64> {
        let fps: Vec<FixedBitSet> = groups.iter().map(|g| self.footprint(g)).collect();
        let mut scratch = vec![0u32; self.n_pixels];
        self.evaluate_with(groups, &fps, &mut scratch)
    }

    /// Same as [`Instance::evaluate`] with footprints supplied by the caller.
    pub fn evaluate_with(&self, groups: &[Vec<usize>], fps: &[FixedBitSet], loads: &mut [u32]) -> Option<u64> {
        if groups.len() > self.groups {
            return None;
        }
        let mut total = 0u64;
        loads.iter_mut().for_each(|c| *c = 0);
        let mut feasible = true;
        for (k, g) in groups.iter().enumerate() {
            let fp = &fps[k];
            if g.is_empty() || g.len() > self.max_group || !self.fits(fp.count_ones(..), g.len()) {
                return None;
            }
            let mut fresh = 0usize;
            let mut count = |j: usize| {
                loads[j] += 1;
                feasible &= loads[j] as usize <= self.reload;
                fresh += 1;
            };
            match k {
                0 => fp.ones().for_each(&mut count),
                _ => fp.difference(&fps[k - 1]).for_each(&mut count),
            }
            if !feasible {
                return None;
            }
            total += fresh as u64;
        }
        Some(self.t_l * total + self.t_acc * groups.len() as u64)
    }

    /// Group index of every patch.
    pub fn assignment(&self, groups: &[Vec<usize>]) -> Vec<usize> {
        let mut a = vec![usize::MAX; self.n_patches];
        for (k, g) in groups.iter().enumerate() {
            for &p in g {
                a[p] = k;
            }
        }
        a
    }

    /// Every patch exactly once.
    pub fn is_partition(&self, groups: &[Vec<usize>]) -> bool {
        let mut seen = vec![false; self.n_patches];
        for &p in groups.iter().flatten() {
            if p >= self.n_patches || seen[p] {
                return false;
            }
            seen[p] = true;
        }
        seen.into_iter().all(|s| s)
    }
}
