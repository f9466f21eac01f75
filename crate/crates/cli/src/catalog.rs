//! The static list of experiments shown by `heatbound list`.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Entry {
    pub name: &'static str,
    /// How to invoke it, e.g. `gradbound --kind th41`.
    pub invocation: &'static str,
    pub description: &'static str,
    /// Bound operations the experiment checks.
    pub bounds: &'static [&'static str],
    pub stochastic: bool,
}

pub const CATALOG: &[Entry] = &[
    Entry {
        name: "solve",
        invocation: "solve",
        description: "heat flow on the flat torus: positivity, maximum principle, mass, and the identity G = -lap log u",
        bounds: &[],
        stochastic: false,
    },
    Entry {
        name: "liyau",
        invocation: "liyau",
        description: "Li-Yau type bounds on |grad log u|^2 - 2 d/dt log u, on Gaussian equality cases or torus data",
        bounds: &["liyau_upper", "liyau_lower"],
        stochastic: false,
    },
    Entry {
        name: "gradbound",
        invocation: "gradbound --kind th11",
        description: "dimension-free flat log-gradient bound |grad log u|^2 <= 4M/t",
        bounds: &["th11"],
        stochastic: false,
    },
    Entry {
        name: "gradbound",
        invocation: "gradbound --kind est_o1",
        description: "sub-elliptic log-gradient bound 4KM/(1 - e^{-K tau}) for the frame derivatives of log u",
        bounds: &["est_o1"],
        stochastic: false,
    },
    Entry {
        name: "gradbound",
        invocation: "gradbound --kind est_o2",
        description: "the same bound for an admissible transform psi(u), with the norm squared",
        bounds: &["est_o2"],
        stochastic: false,
    },
    Entry {
        name: "gradbound",
        invocation: "gradbound --kind th41",
        description: "log-gradient bound 2KM/(1 - e^{-Kt/2}) under a Ricci lower bound -K",
        bounds: &["th41"],
        stochastic: false,
    },
    Entry {
        name: "harnack",
        invocation: "harnack",
        description: "Harnack ratio u(t,x)/u(t+s,y) on Gaussian solutions, C = inf or finite",
        bounds: &["harnack"],
        stochastic: false,
    },
    Entry {
        name: "bsde",
        invocation: "bsde",
        description: "entropic quadratic BSDE: maximum principle, BMO bound, Girsanov weights, Q-representation, submartingale",
        bounds: &[],
        stochastic: true,
    },
    Entry {
        name: "reciprocal",
        invocation: "reciprocal",
        description: "reciprocal identity Y0 = 1/(T/n + E^Q[1/Y_T]) against the Li-Yau constant",
        bounds: &["liyau_upper"],
        stochastic: true,
    },
    Entry {
        name: "flow",
        invocation: "flow",
        description: "stochastic flow with Jacobian J and inverse K: J K = I and the two evaluations of Z",
        bounds: &[],
        stochastic: true,
    },
    Entry {
        name: "conditions",
        invocation: "conditions",
        description: "structure constants C1, C2, K = C1 + C2 and the Frobenius residual of a field family",
        bounds: &[],
        stochastic: true,
    },
    Entry {
        name: "psi",
        invocation: "psi --kind log",
        description: "admissibility of a transform psi: concavity and psi''' psi' <= 2 psi''^2",
        bounds: &[],
        stochastic: false,
    },
];

pub fn is_known(name: &str) -> bool {
    CATALOG.iter().any(|e| e.name == name)
}

pub fn is_stochastic(name: &str) -> bool {
    CATALOG.iter().any(|e| e.name == name && e.stochastic)
}

/// One aligned line per entry.
pub fn render() -> String {
    let width = CATALOG.iter().map(|e| e.invocation.len()).max().unwrap_or(0);
    let mut out = String::new();
    for e in CATALOG {
        let bounds = if e.bounds.is_empty() { String::new() } else { format!(" [{}]", e.bounds.join(", ")) };
        out.push_str(&format!("{:width$}  {}{bounds}\n", e.invocation, e.description));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bound_op_is_listed() {
        for op in ["th11", "liyau_upper", "liyau_lower", "est_o1", "est_o2", "th41", "harnack"] {
            assert!(CATALOG.iter().any(|e| e.bounds.contains(&op)), "{op}");
        }
        assert!(CATALOG.len() >= 7);
        assert!(render().lines().any(|l| l.starts_with("gradbound --kind th41")));
    }
}
