//! Built-in experiment presets.

/// Look up a preset by name.
pub fn get(name: &str) -> Option<&'static str> {
    match name {
        "ridge-er40" => Some(RIDGE_ER40),
        "ridge-path40" => Some(RIDGE_PATH40),
        "svfl-er40" => Some(SVFL_ER40),
        "logistic-gisette" => Some(LOGISTIC_GISETTE),
        "sweep-path16" => Some(SWEEP_PATH16),
        "stcd-desk" => Some(STCD_DESK),
        _ => None,
    }
}

pub fn names() -> &'static [&'static str] {
    &[
        "ridge-er40",
        "ridge-path40",
        "svfl-er40",
        "logistic-gisette",
        "sweep-path16",
        "stcd-desk",
    ]
}

/// Ridge regression, N=1000 x d=2000 synthetic data over 40 clients on an
/// Erdos-Renyi graph with p=0.4; eta=1e-5, Q=20.
const RIDGE_ER40: &str = r#"
[dataset]
kind = "synthetic"
n = 1000
d = 2000
seed = 0

[model]
kind = "ridge"
alpha = 10.0

[graph]
topology = "erdos_renyi"
clients = 40
p = 0.4
seed = 0

[algorithm]
kind = "mtcd"
eta = 1e-5
local_updates = 20
hops_per_sync = 10
num_tokens = 2
rounds = 400
sync_mode = "overlapping"
eval_every = 1

[cost]
ratio = 100.0

[run]
seeds = [0, 1, 2, 3, 4]
output = "ridge-er40.csv"
"#;

/// Same ridge problem on the poorly-connected path graph.
const RIDGE_PATH40: &str = r#"
[dataset]
kind = "synthetic"
n = 1000
d = 2000
seed = 0

[model]
kind = "ridge"
alpha = 10.0

[graph]
topology = "path"
clients = 40

[algorithm]
kind = "mtcd"
eta = 1e-5
local_updates = 20
hops_per_sync = 10
num_tokens = 2
rounds = 400
sync_mode = "overlapping"
eval_every = 1

[cost]
ratio = 100.0

[run]
seeds = [0, 1, 2, 3, 4]
output = "ridge-path40.csv"
"#;

/// Synchronous full-participation baseline on the same ridge problem, Q=20.
/// All K blocks step simultaneously against stale off-block information, so
/// the step size must satisfy eta * Q * L < 2 (L ~ 5e5 on this instance);
/// 5e-8 sits safely under that ceiling.
const SVFL_ER40: &str = r#"
[dataset]
kind = "synthetic"
n = 1000
d = 2000
seed = 0

[model]
kind = "ridge"
alpha = 10.0

[graph]
topology = "erdos_renyi"
clients = 40
p = 0.4
seed = 0

[algorithm]
kind = "svfl"
eta = 5e-8
local_updates = 20
rounds = 400
eval_every = 1

[cost]
ratio = 100.0

[run]
seeds = [0, 1, 2, 3, 4]
output = "svfl-er40.csv"
"#;

/// Sparse logistic regression on Gisette (N=6000, d=5000, not bundled; point
/// dataset.path at a local SVMLight copy); beta=1, eta=1e-4, Q=30.
const LOGISTIC_GISETTE: &str = r#"
[dataset]
kind = "svmlight"
path = "gisette_scale.svm"
expected_features = 5000

[model]
kind = "logistic_l1"
beta = 1.0

[graph]
topology = "erdos_renyi"
clients = 40
p = 0.4
seed = 0

[algorithm]
kind = "mtcd"
eta = 1e-4
local_updates = 30
hops_per_sync = 10
num_tokens = 2
rounds = 200
sync_mode = "overlapping"
eval_every = 1

[cost]
ratio = 100.0

[run]
seeds = [0, 1, 2, 3, 4]
output = "logistic-gisette.csv"
"#;

/// Communication-efficiency comparison on a 16-client path: MTCD with two
/// cluster tokens against the synchronous baseline, step sizes swept per
/// algorithm, cost to reach a 1e-3 gap derived per run.
const SWEEP_PATH16: &str = r#"
[dataset]
kind = "synthetic"
n = 120
d = 64
seed = 0

[model]
kind = "ridge"
alpha = 10.0

[graph]
topology = "path"
clients = 16
clusters = [
    [0, 1, 2, 3, 4, 5, 6, 7],
    [8, 9, 10, 11, 12, 13, 14, 15],
]

[algorithm]
kind = "mtcd"
eta = 5e-4
local_updates = 20
hops_per_sync = 8
num_tokens = 2
rounds = 300
sync_mode = "token_per_cluster"
eval_every = 5

[cost]
ratio = 100.0

[run]
seeds = [0, 1, 2, 3, 4]
output = "sweep-path16.csv"

[sweep]
gap_threshold = 1e-3
cost_ratio_grid = [100.0]

[[sweep.arms]]
algorithm = "mtcd"
eta_grid = [2e-4, 5e-4, 1e-3]
hops_grid = [8]
tokens_grid = [2]

[[sweep.arms]]
algorithm = "svfl"
eta_grid = [2e-5, 5e-5, 1e-4]
"#;

/// Desk-scale single-token demo; finishes in seconds.
const STCD_DESK: &str = r#"
[dataset]
kind = "synthetic"
n = 200
d = 80
seed = 0

[model]
kind = "ridge"
alpha = 10.0

[graph]
topology = "erdos_renyi"
clients = 8
p = 0.4
seed = 0

[algorithm]
kind = "stcd"
eta = 1e-4
local_updates = 20
hops_per_sync = 50
rounds = 200
eval_every = 1

[cost]
ratio = 100.0

[run]
seeds = [0, 1, 2, 3, 4]
output = "stcd-desk.csv"
"#;
