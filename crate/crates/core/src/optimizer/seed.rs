//! Starting points for the search: the two heuristic generators plus band
//! sweeps, cut into consecutive groups of the maximum size.

use super::instance::Instance;

/// Patch orders that walk the output grid in horizontal bands of `a` rows,
/// column by column, alternating direction between bands. Columns are read
/// top-down or as a vertical snake. The transposed walks are included.
pub(crate) fn band_orders(h_out: usize, w_out: usize) -> Vec<Vec<usize>> {
    let mut orders = Vec::new();
    for transposed in [false, true] {
        let (rows, cols) = if transposed { (w_out, h_out) } else { (h_out, w_out) };
        for a in 1..=rows {
            for snake in [false, true] {
                if a == 1 && snake {
                    continue;
                }
                let mut order = Vec::with_capacity(rows * cols);
                let mut flip = false;
                for (band, start) in (0..rows).step_by(a).enumerate() {
                    let end = (start + a).min(rows);
                    let columns: Vec<usize> =
                        if band % 2 == 0 { (0..cols).collect() } else { (0..cols).rev().collect() };
                    for c in columns {
                        let mut band_rows: Vec<usize> = (start..end).collect();
                        if snake && flip {
                            band_rows.reverse();
                        }
                        flip = !flip;
                        for r in band_rows {
                            let (i, j) = if transposed { (c, r) } else { (r, c) };
                            order.push(i * w_out + j);
                        }
                    }
                }
                orders.push(order);
            }
        }
    }
    orders
}

pub(crate) fn chunk(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    order.chunks(size).map(|c| c.to_vec()).collect()
}

/// Feasible seed groupings with their objective.
pub(crate) fn seeds(inst: &Instance) -> Vec<(u64, Vec<Vec<usize>>)> {
    let (h, w) = (inst.h_out, inst.w_out);
    let row_major: Vec<usize> = (0..h * w).collect();
    let zigzag: Vec<usize> = (0..h)
        .flat_map(|i| {
            let cols: Vec<usize> = if i % 2 == 0 { (0..w).collect() } else { (0..w).rev().collect() };
            cols.into_iter().map(move |j| i * w + j)
        })
        .collect();
    let mut out = Vec::new();
    let mut orders = vec![row_major, zigzag];
    orders.extend(band_orders(h, w));
    for order in orders {
        let groups = chunk(&order, inst.max_group);
        if let Some(obj) = inst.evaluate(&groups) {
            out.push((obj, groups));
        }
    }
    out
}
