//! Explicit 0-1 linear model of the grouping problem: patch-to-group,
//! pixel-to-group, overlap and load indicators, their linking constraints,
//! and the load-count objective.

use std::collections::BTreeSet;
use std::fmt;

use crate::conv::{LayerSpec, Patch};
use crate::exec::HardwareSpec;
use crate::strategy::{GroupSchedule, S1Params};

use super::OptimizeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarFamily {
    /// patch `i` in group `k`
    PatchGroup,
    /// pixel `j` used by group `k`
    PixelGroup,
    /// pixel `j` used by groups `k` and `k - 1`
    PixelOverlap,
    /// pixel `j` loaded at group `k`
    PixelLoad,
}

impl VarFamily {
    pub fn prefix(&self) -> &'static str {
        match self {
            VarFamily::PatchGroup => "P_g",
            VarFamily::PixelGroup => "pxl_g",
            VarFamily::PixelOverlap => "pxl_ovlp",
            VarFamily::PixelLoad => "pxl_I",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Var {
    pub family: VarFamily,
    /// patch id or pixel id
    pub index: usize,
    pub group: usize,
    pub lower: i64,
    pub upper: i64,
}

impl Var {
    pub fn name(&self) -> String {
        format!("{}_{}_{}", self.family.prefix(), self.index, self.group)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinExpr {
    pub terms: Vec<(usize, i64)>,
    pub constant: i64,
}

impl LinExpr {
    pub fn term(mut self, var: usize, coef: i64) -> Self {
        self.terms.push((var, coef));
        self
    }

    pub fn plus_constant(mut self, c: i64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, values: &[i64]) -> i64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * values[v]).sum::<i64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub name: String,
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: i64,
}

impl Constraint {
    pub fn holds(&self, values: &[i64]) -> bool {
        let lhs = self.expr.eval(values);
        match self.sense {
            Sense::Le => lhs <= self.rhs,
            Sense::Ge => lhs >= self.rhs,
            Sense::Eq => lhs == self.rhs,
        }
    }
}

/// The grouping problem for one layer, platform and group count.
///
/// Variables are laid out family by family (`P_g`, `pxl_g`, `pxl_ovlp`,
/// `pxl_I`), each group-major. Pixels are spatial positions; channels are
/// never split.
#[derive(Debug, Clone)]
pub struct IlpModel {
    pub layer: LayerSpec,
    pub groups: usize,
    pub nb_patches_max: usize,
    pub nb_data_reload: usize,
    pub size_mem: u64,
    pub t_l: u64,
    pub t_acc: u64,
    /// `(patch id, pixel id)` membership pairs, row-major ids.
    pub pxl_in_p: Vec<(usize, usize)>,
}

pub fn build_model(
    layer: &LayerSpec,
    hw: &HardwareSpec,
    params: &S1Params,
    groups: usize,
    nb_data_reload: usize,
) -> Result<IlpModel, OptimizeError> {
    if groups < params.k_min || groups > params.k_max {
        return Err(OptimizeError::InvalidGroupCount { k: groups, k_min: params.k_min, k_max: params.k_max });
    }
    let mut pxl_in_p = Vec::with_capacity(layer.num_patches() * layer.h_k * layer.w_k);
    for (i, patch) in layer.patch_set().iter().enumerate() {
        let mut pixels: Vec<usize> = layer.patch_footprint(patch).iter().map(|p| p.linear(layer)).collect();
        pixels.sort_unstable();
        pxl_in_p.extend(pixels.into_iter().map(|j| (i, j)));
    }
    Ok(IlpModel {
        layer: *layer,
        groups,
        nb_patches_max: params.nb_patches_max,
        nb_data_reload,
        size_mem: hw.size_mem,
        t_l: hw.t_l,
        t_acc: hw.t_acc,
        pxl_in_p,
    })
}

impl IlpModel {
    pub fn num_patches(&self) -> usize {
        self.layer.num_patches()
    }

    pub fn num_pixels(&self) -> usize {
        self.layer.num_pixels()
    }

    pub fn var_index(&self, family: VarFamily, index: usize, group: usize) -> usize {
        let (np, nx, k) = (self.num_patches(), self.num_pixels(), self.groups);
        match family {
            VarFamily::PatchGroup => group * np + index,
            VarFamily::PixelGroup => k * np + group * nx + index,
            VarFamily::PixelOverlap => k * np + k * nx + group * nx + index,
            VarFamily::PixelLoad => k * np + 2 * k * nx + group * nx + index,
        }
    }

    pub fn num_variables(&self) -> usize {
        self.groups * (3 * self.num_pixels() + self.num_patches())
    }

    pub fn variables(&self) -> Vec<Var> {
        let mut vars = Vec::with_capacity(self.num_variables());
        let families = [
            (VarFamily::PatchGroup, self.num_patches()),
            (VarFamily::PixelGroup, self.num_pixels()),
            (VarFamily::PixelOverlap, self.num_pixels()),
            (VarFamily::PixelLoad, self.num_pixels()),
        ];
        for (family, count) in families {
            for group in 0..self.groups {
                for index in 0..count {
                    let upper = if family == VarFamily::PixelOverlap && group == 0 { 0 } else { 1 };
                    vars.push(Var { family, index, group, lower: 0, upper });
                }
            }
        }
        vars
    }

    /// Patches containing each pixel.
    pub fn patches_of_pixel(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_pixels()];
        for &(i, j) in &self.pxl_in_p {
            out[j].push(i);
        }
        out
    }

    pub fn size_group(&self, group: usize) -> LinExpr {
        let mut e = LinExpr::default();
        for j in 0..self.num_pixels() {
            e = e.term(self.var_index(VarFamily::PixelGroup, j, group), 1);
        }
        e
    }

    pub fn nb_pxl_ovlp(&self, group: usize) -> LinExpr {
        let mut e = LinExpr::default();
        for j in 0..self.num_pixels() {
            e = e.term(self.var_index(VarFamily::PixelOverlap, j, group), 1);
        }
        e
    }

    pub fn size_i_slice(&self, group: usize) -> LinExpr {
        let mut e = LinExpr::default();
        for j in 0..self.num_pixels() {
            e = e.term(self.var_index(VarFamily::PixelLoad, j, group), 1);
        }
        e
    }

    /// `t_l * sum_k size_I_slice[k]`; the `t_acc` part depends on how many
    /// groups are used, see [`IlpModel::objective_value`].
    pub fn load_objective(&self) -> LinExpr {
        let mut e = LinExpr::default();
        for k in 0..self.groups {
            for j in 0..self.num_pixels() {
                e = e.term(self.var_index(VarFamily::PixelLoad, j, k), self.t_l as i64);
            }
        }
        e
    }

    pub fn constraints(&self) -> Vec<Constraint> {
        use VarFamily::*;
        let (np, nx, kk) = (self.num_patches(), self.num_pixels(), self.groups);
        let l = &self.layer;
        let mut out = Vec::new();

        for i in 0..np {
            let mut e = LinExpr::default();
            for k in 0..kk {
                e = e.term(self.var_index(PatchGroup, i, k), 1);
            }
            out.push(Constraint { name: format!("assign_{i}"), expr: e, sense: Sense::Eq, rhs: 1 });
        }
        for k in 0..kk {
            let mut e = LinExpr::default();
            for i in 0..np {
                e = e.term(self.var_index(PatchGroup, i, k), 1);
            }
            out.push(Constraint {
                name: format!("cap_{k}"),
                expr: e,
                sense: Sense::Le,
                rhs: self.nb_patches_max as i64,
            });
        }

        let covering = self.patches_of_pixel();
        for k in 0..kk {
            for (j, cover) in covering.iter().enumerate() {
                let g = self.var_index(PixelGroup, j, k);
                let mut upper = LinExpr::default().term(g, 1);
                for &i in cover {
                    let p = self.var_index(PatchGroup, i, k);
                    out.push(Constraint {
                        name: format!("or_lo_{j}_{k}_{i}"),
                        expr: LinExpr::default().term(g, 1).term(p, -1),
                        sense: Sense::Ge,
                        rhs: 0,
                    });
                    upper = upper.term(p, -1);
                }
                out.push(Constraint { name: format!("or_hi_{j}_{k}"), expr: upper, sense: Sense::Le, rhs: 0 });
            }
        }

        for k in 0..kk {
            for j in 0..nx {
                let o = self.var_index(PixelOverlap, j, k);
                let g = self.var_index(PixelGroup, j, k);
                if k == 0 {
                    out.push(Constraint {
                        name: format!("ovlp_first_{j}"),
                        expr: LinExpr::default().term(o, 1),
                        sense: Sense::Eq,
                        rhs: 0,
                    });
                    continue;
                }
                let prev = self.var_index(PixelGroup, j, k - 1);
                out.push(Constraint {
                    name: format!("and_a_{j}_{k}"),
                    expr: LinExpr::default().term(o, 1).term(g, -1),
                    sense: Sense::Le,
                    rhs: 0,
                });
                out.push(Constraint {
                    name: format!("and_b_{j}_{k}"),
                    expr: LinExpr::default().term(o, 1).term(prev, -1),
                    sense: Sense::Le,
                    rhs: 0,
                });
                out.push(Constraint {
                    name: format!("and_c_{j}_{k}"),
                    expr: LinExpr::default().term(o, 1).term(g, -1).term(prev, -1),
                    sense: Sense::Ge,
                    rhs: -1,
                });
            }
        }

        for k in 0..kk {
            for j in 0..nx {
                let x = self.var_index(PixelLoad, j, k);
                let g = self.var_index(PixelGroup, j, k);
                let o = self.var_index(PixelOverlap, j, k);
                out.push(Constraint {
                    name: format!("load_a_{j}_{k}"),
                    expr: LinExpr::default().term(x, 1).term(g, -1),
                    sense: Sense::Le,
                    rhs: 0,
                });
                out.push(Constraint {
                    name: format!("load_b_{j}_{k}"),
                    expr: LinExpr::default().term(x, 1).term(o, 1),
                    sense: Sense::Le,
                    rhs: 1,
                });
                out.push(Constraint {
                    name: format!("load_c_{j}_{k}"),
                    expr: LinExpr::default().term(x, 1).term(g, -1).term(o, 1),
                    sense: Sense::Ge,
                    rhs: 0,
                });
            }
        }

        for j in 0..nx {
            let mut e = LinExpr::default();
            for k in 0..kk {
                e = e.term(self.var_index(PixelLoad, j, k), 1);
            }
            out.push(Constraint {
                name: format!("reload_{j}"),
                expr: e,
                sense: Sense::Le,
                rhs: self.nb_data_reload as i64,
            });
        }

        // input pixels carry c_in scalars each so every term is in elements
        let kernel_mem = (l.c_out() * l.kernel_elements()) as i64;
        for k in 0..kk {
            let mut e = LinExpr::default().plus_constant(kernel_mem);
            for j in 0..nx {
                e = e.term(self.var_index(PixelGroup, j, k), l.c_in as i64);
            }
            for i in 0..np {
                e = e.term(self.var_index(PatchGroup, i, k), l.c_out() as i64);
            }
            out.push(Constraint { name: format!("mem_{k}"), expr: e, sense: Sense::Le, rhs: self.size_mem as i64 });
        }
        out
    }

    /// Names of violated constraints and out-of-bound variables.
    pub fn check_assignment(&self, values: &[i64]) -> Vec<String> {
        let mut bad = Vec::new();
        if values.len() != self.num_variables() {
            bad.push(format!("expected {} values, got {}", self.num_variables(), values.len()));
            return bad;
        }
        for (idx, v) in self.variables().iter().enumerate() {
            if values[idx] < v.lower || values[idx] > v.upper {
                bad.push(format!("bound {}", v.name()));
            }
        }
        bad.extend(self.constraints().into_iter().filter(|c| !c.holds(values)).map(|c| c.name));
        bad
    }

    pub fn used_groups(&self, values: &[i64]) -> usize {
        (0..self.groups)
            .filter(|&k| (0..self.num_patches()).any(|i| values[self.var_index(VarFamily::PatchGroup, i, k)] == 1))
            .count()
    }

    /// `t_l * sum size_I_slice + t_acc * (non-empty groups)`.
    pub fn objective_value(&self, values: &[i64]) -> u64 {
        self.load_objective().eval(values) as u64 + self.t_acc * self.used_groups(values) as u64
    }

    /// Full variable assignment for a schedule with at most `groups`
    /// groups; missing groups are empty and placed last.
    pub fn encode(&self, schedule: &GroupSchedule) -> Result<Vec<i64>, OptimizeError> {
        use VarFamily::*;
        if schedule.len() > self.groups {
            return Err(OptimizeError::InvalidStart(format!(
                "{} groups, model allows {}",
                schedule.len(),
                self.groups
            )));
        }
        let mut values = vec![0i64; self.num_variables()];
        let (nx, layer) = (self.num_pixels(), &self.layer);
        let mut prev = vec![false; nx];
        for k in 0..self.groups {
            let mut used = vec![false; nx];
            if let Some(group) = schedule.groups().get(k) {
                for p in group {
                    if !layer.contains_patch(*p) {
                        return Err(OptimizeError::InvalidStart(format!("patch {p} outside the output grid")));
                    }
                    values[self.var_index(PatchGroup, p.linear(layer), k)] = 1;
                    for px in layer.patch_footprint(*p) {
                        used[px.linear(layer)] = true;
                    }
                }
            }
            for j in 0..nx {
                let overlap = k > 0 && used[j] && prev[j];
                values[self.var_index(PixelGroup, j, k)] = used[j] as i64;
                values[self.var_index(PixelOverlap, j, k)] = overlap as i64;
                values[self.var_index(PixelLoad, j, k)] = (used[j] && !overlap) as i64;
            }
            prev = used;
        }
        Ok(values)
    }

    /// Schedule read off the `P_g` variables; empty groups are dropped.
    pub fn decode(&self, values: &[i64]) -> GroupSchedule {
        let groups = (0..self.groups)
            .map(|k| {
                (0..self.num_patches())
                    .filter(|&i| values[self.var_index(VarFamily::PatchGroup, i, k)] == 1)
                    .map(|i| self.layer.patch_from_linear(i))
                    .collect::<BTreeSet<Patch>>()
            })
            .filter(|g| !g.is_empty())
            .collect();
        GroupSchedule::new(groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{gen_row_by_row, gen_zigzag};

    fn worked() -> (LayerSpec, HardwareSpec) {
        (
            LayerSpec::new(2, 5, 5, 2, 3, 3, 1, 1).unwrap(),
            HardwareSpec { nbop_pe: 120, size_mem: 1000, t_l: 1, t_w: 1, t_acc: 1, dram_size: 1000 },
        )
    }

    #[test]
    fn variable_count_at_k_max() {
        let (layer, hw) = worked();
        let params = S1Params::with_max(&layer, 2).unwrap();
        let m = build_model(&layer, &hw, &params, params.k_max, 2).unwrap();
        assert_eq!(m.num_variables(), 756);
        assert_eq!(m.variables().len(), 756);
    }

    #[test]
    fn pxl_in_p_first_patch() {
        let (layer, hw) = worked();
        let params = S1Params::with_max(&layer, 2).unwrap();
        let m = build_model(&layer, &hw, &params, 5, 2).unwrap();
        let first: Vec<_> = m.pxl_in_p.iter().take(9).copied().collect();
        assert_eq!(first, vec![(0, 0), (0, 1), (0, 2), (0, 5), (0, 6), (0, 7), (0, 10), (0, 11), (0, 12)]);
        assert_eq!(m.pxl_in_p.last(), Some(&(8, 24)));
        assert_eq!(m.pxl_in_p.len(), 81);
    }

    #[test]
    fn group_count_range_enforced() {
        let (layer, hw) = worked();
        let params = S1Params::with_max(&layer, 2).unwrap();
        assert!(matches!(build_model(&layer, &hw, &params, 4, 2), Err(OptimizeError::InvalidGroupCount { .. })));
        assert!(matches!(build_model(&layer, &hw, &params, 10, 2), Err(OptimizeError::InvalidGroupCount { .. })));
    }

    #[test]
    fn heuristic_starts_are_feasible_and_round_trip() {
        let (layer, hw) = worked();
        let params = S1Params::with_max(&layer, 2).unwrap();
        for k in [5, 7] {
            let m = build_model(&layer, &hw, &params, k, 2).unwrap();
            for s in [gen_row_by_row(&layer, 2).unwrap(), gen_zigzag(&layer, 2).unwrap()] {
                let values = m.encode(&s).unwrap();
                assert!(m.check_assignment(&values).is_empty(), "{:?}", m.check_assignment(&values));
                assert_eq!(m.decode(&values), s);
            }
        }
    }

    #[test]
    fn single_group_objective() {
        let (layer, hw) = worked();
        let params = S1Params::with_max(&layer, 9).unwrap();
        let m = build_model(&layer, &hw, &params, 1, 2).unwrap();
        let s = gen_row_by_row(&layer, 9).unwrap();
        let values = m.encode(&s).unwrap();
        assert!(m.check_assignment(&values).is_empty());
        assert_eq!(m.objective_value(&values), 25 + 1);
    }

    #[test]
    fn memory_row_binds() {
        let (layer, hw) = worked();
        let params = S1Params::with_max(&layer, 2).unwrap();
        // a pair of adjacent patches needs 12*2 + 36 + 2*2 = 64 elements
        let tight = HardwareSpec { size_mem: 63, ..hw };
        let m = build_model(&layer, &tight, &params, 5, 2).unwrap();
        let values = m.encode(&gen_row_by_row(&layer, 2).unwrap()).unwrap();
        assert!(m.check_assignment(&values).iter().any(|n| n == "mem_0"));
    }
}
