use pyo3::ffi::c_str;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use graffl_py::graffl_py;

fn run(code: &std::ffi::CStr) {
    pyo3::append_to_inittab!(graffl_py);
    Python::attach(|py| {
        let globals = PyDict::new(py);
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn module_round_trip() {
    run(c_str!(
        r#"
import graffl_py as g

p = g.GmmParams([0.25, 0.75], [[-1.0], [2.0]], [[[1.0]], [[4.0]]])
assert p.k == 2 and p.dim == 1
assert g.GmmParams.from_json(p.to_json()) == p
rows, comps = p.sample(200, 3)
assert len(rows) == 200 and set(comps) <= {0, 1}

obs = [[x] for x in (0.1 * i for i in range(30))]
central = g.rejection_sample(obs, 600, 20, 2, seed=7)
fed = g.federated_run([obs[:10], obs[10:25], obs[25:]], 600, 20, 2, seed=7)
assert fed == central and len(fed) == 20
assert all(d <= fed.epsilon for d in fed.discrepancies)
est = fed.estimate()
assert abs(sum(est.weights) - 1.0) < 1e-12

assert g.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
assert g.f1_at_cutoff([0.2, 0.9], [0, 1], 0.5) == 1.0
assert g.select_cutoff([0.2, 0.9], [0, 1]) == 0.55

try:
    g.rejection_sample(obs, 5, 20, 2, seed=1)
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#
    ));
}
