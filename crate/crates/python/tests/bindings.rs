use std::ffi::CString;

use basen::basen as basen_module;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| pyo3::append_to_inittab!(basen_module));
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("basen", py.import("basen").unwrap()).unwrap();
        f(py, &globals)
    })
}

fn run(py: Python<'_>, globals: &Bound<'_, PyDict>, code: &str) {
    let code = CString::new(code).unwrap();
    if let Err(e) = py.run(&code, Some(globals), None) {
        e.print(py);
        panic!("python snippet failed");
    }
}

#[test]
fn python_api_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap().to_string();
    with_module(|py, g| {
        g.set_item("root", root).unwrap();
        run(
            py,
            g,
            r#"
import json, os
assert abs(basen.si_sdr([1.0, 0.0], [1.0, 1.0])) < 1e-6
assert abs(basen.discretization_loss([[0.5] * 128]) - 25.0) < 1e-9
assert abs(basen.sparsity_loss([[1.0] * 128]) - 32.0) < 1e-9
w = basen.gumbel_weights([[0.0, 3.0, 1.0]], 1e-4)
assert w[0][1] > 0.999
assert basen.gumbel_argmax([[0.0, 3.0, 1.0], [5.0, 0.0, 0.0]]) == [1, 0]
assert basen.duplicate_report([3, 7, 3]) == {"unique": [7], "duplicated": [3]}
cfg = json.loads(basen.default_config())
assert cfg["synth"]["q_channels"] == 16

synth = {"n_examples": 6, "q_channels": 4, "informative_channels": [1], "seg_len_s": 1.0}
assert basen.synth(os.path.join(root, "raw"), json.dumps(synth)) == 6
assert basen.preprocess(os.path.join(root, "raw"), os.path.join(root, "mua"), 1.0) == 6
tiny = {"embed_dim": 8, "eeg_tcn_layers": 1, "eeg_hidden": 8, "cmca_layers": 1, "heads": 2,
        "sep_bottleneck": 8, "sep_hidden": 8, "sep_blocks": 1, "sep_repeats": 1}
run_cfg = {"synth": synth, "preprocess": {"seg_len_s": 1.0}, "model": tiny,
           "train": {"schedule": {"total_epochs": 1, "batch_size": 2}, "gcs": {"epochs": 1, "k": 2}}}
out = json.loads(basen.train("gcs", os.path.join(root, "mua"), os.path.join(root, "run"), json.dumps(run_cfg)))
sub = basen.ChannelSubset.from_json(json.dumps(out[0]["subset"]))
assert sub.method == "gcs" and sub.k == 2 and len(sub.indices) == 2
m = basen.Model.load(os.path.join(root, "run", "checkpoints", "gcs.ckpt"))
assert m.q == 4 and m.subset().indices == sub.indices
srcs = m.separate([0.1] * 1000, [[0.0] * 128 for _ in range(4)], 1000.0)
assert len(srcs) == 2 and len(srcs[0]) == 1000
ev = json.loads(basen.evaluate(os.path.join(root, "run", "checkpoints", "gcs.ckpt"), os.path.join(root, "mua"), [1]))
assert len(ev["examples"]) == 6 and ev["subset"] == [1]
fresh = basen.Model(4, json.dumps(tiny), 3)
assert fresh.num_params > 0
"#,
        );
    });
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
try:
    basen.discretization_loss([[1.5]])
    raise AssertionError("expected ValueError")
except ValueError:
    pass
try:
    basen.Model.load("/nonexistent/model.ckpt")
    raise AssertionError("expected OSError")
except OSError:
    pass
"#,
        );
    });
}
