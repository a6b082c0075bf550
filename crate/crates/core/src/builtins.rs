//! Built-in families: the three singular planar examples plus smooth baselines.

use crate::field::FieldFamily;

pub struct Builtin {
    pub name: &'static str,
    pub description: &'static str,
    pub dim: usize,
    pub fields: &'static [&'static [&'static str]],
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "example-graph",
        description: "Y1 = d1 + 2|x1| d2, Y2 = |x2 - x1|x1|| d2; [Y1,Y2] = 0 a.e., the orbit of 0 is the C^{1,1} graph x2 = x1|x1|",
        dim: 2,
        fields: &[&["1", "2*abs(x1)"], &["0", "abs(x2 - x1*abs(x1))"]],
    },
    Builtin {
        name: "balan",
        description: "Y1 = e^{-1/|x|^2} d1, Y2 = |x|^2 d2; orbits {0} and R^2 minus 0, structure coefficients unbounded near 0",
        dim: 2,
        fields: &[&["exp(-1/(x1^2 + x2^2))", "0"], &["0", "x1^2 + x2^2"]],
    },
    Builtin {
        name: "counterexample",
        description: "Y1 = d1, Y2 = e^{-1/x1^2} d2; single orbit R^2 but rank drops on the x2-axis",
        dim: 2,
        fields: &[&["1", "0"], &["0", "exp(-1/x1^2)"]],
    },
    Builtin {
        name: "planar",
        description: "Y1 = d1, Y2 = d2; the control distance is Euclidean",
        dim: 2,
        fields: &[&["1", "0"], &["0", "1"]],
    },
    Builtin {
        name: "rotation",
        description: "Y1 = x2 d1 - x1 d2; orbits are circles about the origin",
        dim: 2,
        fields: &[&["x2", "-x1"]],
    },
    Builtin {
        name: "heisenberg",
        description: "Y1 = d1, Y2 = x1 d2; [Y1,Y2] = d2, involutive with coefficient 1/x1 away from x1 = 0",
        dim: 2,
        fields: &[&["1", "0"], &["0", "x1"]],
    },
];

pub fn list_builtins() -> Vec<(&'static str, &'static str)> {
    BUILTINS.iter().map(|b| (b.name, b.description)).collect()
}

pub fn builtin(name: &str) -> Option<FieldFamily> {
    let spec = BUILTINS.iter().find(|b| b.name == name)?;
    let fields: Vec<Vec<&str>> = spec.fields.iter().map(|f| f.to_vec()).collect();
    Some(FieldFamily::parse(spec.name, spec.dim, &fields).expect("built-in families parse"))
}

pub fn example_graph() -> FieldFamily {
    builtin("example-graph").unwrap()
}

pub fn balan() -> FieldFamily {
    builtin("balan").unwrap()
}

pub fn counterexample() -> FieldFamily {
    builtin("counterexample").unwrap()
}

pub fn planar() -> FieldFamily {
    builtin("planar").unwrap()
}

pub fn rotation() -> FieldFamily {
    builtin("rotation").unwrap()
}

pub fn heisenberg() -> FieldFamily {
    builtin("heisenberg").unwrap()
}
