//! CPLEX-style LP text export of an [`IlpModel`].

use std::fmt::Write;

use super::model::{IlpModel, LinExpr};

const TERMS_PER_LINE: usize = 8;

fn write_terms(out: &mut String, expr: &LinExpr, names: &[String]) {
    let mut first = true;
    for (n, &(var, coef)) in expr.terms.iter().enumerate() {
        if n > 0 && n % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if coef < 0 {
            " -"
        } else if first {
            ""
        } else {
            " +"
        };
        let mag = coef.unsigned_abs();
        if mag == 1 {
            let _ = write!(out, "{sign} {}", names[var]);
        } else {
            let _ = write!(out, "{sign} {mag} {}", names[var]);
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
}

/// Renders the model in LP format. The `t_acc * n` part of the objective is
/// constant for a fixed group count and is stated in a comment.
pub fn to_lp(model: &IlpModel) -> String {
    let vars = model.variables();
    let names: Vec<String> = vars.iter().map(|v| v.name()).collect();
    let mut out = String::new();
    let l = &model.layer;
    let _ = writeln!(
        out,
        "\\ convolution {}x{}x{}, {} kernels {}x{}, stride {}x{}",
        l.c_in, l.h_in, l.w_in, l.n_kernels, l.h_k, l.w_k, l.s_h, l.s_w
    );
    let _ = writeln!(
        out,
        "\\ groups {}, max patches per group {}, reload bound {}",
        model.groups, model.nb_patches_max, model.nb_data_reload
    );
    let _ = writeln!(out, "\\ objective constant: + {} * (non-empty groups)", model.t_acc);
    out.push_str("Minimize\n obj:");
    write_terms(&mut out, &model.load_objective(), &names);
    out.push_str("\nSubject To\n");
    for c in model.constraints() {
        let _ = write!(out, " {}:", c.name);
        write_terms(&mut out, &c.expr, &names);
        let _ = writeln!(out, " {} {}", c.sense, c.rhs - c.expr.constant);
    }
    out.push_str("Bounds\n");
    for (v, name) in vars.iter().zip(&names) {
        if v.upper == 0 {
            let _ = writeln!(out, " {name} = 0");
        }
    }
    out.push_str("Binary\n");
    for chunk in names.chunks(TERMS_PER_LINE) {
        let _ = writeln!(out, " {}", chunk.join(" "));
    }
    out.push_str("End\n");
    out
}
