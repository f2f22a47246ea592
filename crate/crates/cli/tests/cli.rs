// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use layered::generators::planted_partition;
use layered::graph::write_edge_list;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/sample")
}

fn layph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = layph(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture_files() -> (PathBuf, PathBuf, PathBuf) {
    let a = assets();
    (a.join("edges.txt"), a.join("updates.txt"), a.join("communities.txt"))
}

fn planted_file(dir: &Path, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, _) = planted_partition(240, 15, 0.25, 0.002, true, &mut rng);
    let path = dir.join(format!("g{seed}.txt"));
    write_edge_list(&g, fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn verify_fixture_passes() {
    let v: Value = serde_json::from_str(&ok(&["verify-fixture"])).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn preprocess_then_layph_run_reproduces_fixture_states() {
    let dir = TempDir::new().unwrap();
    let (edges, updates, comms) = fixture_files();
    let container = dir.path().join("fx.lgc");
    ok(&[
        "preprocess",
        "--graph",
        p(&edges),
        "--algo",
        "sssp",
        "--k",
        "8",
        "--communities",
        p(&comms),
        "--out",
        p(&container),
    ]);
    assert_eq!(&fs::read(&container).unwrap()[..8], b"LAYGRAPH");
    let stats: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fx.lgc.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["upper_vertices"], 3);
    assert_eq!(stats["upper_links"], 3);
    assert_eq!(stats["subgraphs"], 2);
    assert_eq!(stats["degenerate"], false);
    assert!(stats["elapsed_ms"].as_f64().unwrap() >= 0.0);

    let states = dir.path().join("states.csv");
    let report: Value = serde_json::from_str(&ok(&[
        "run",
        "--mode",
        "layph",
        "--graph",
        p(&edges),
        "--updates",
        p(&updates),
        "--algo",
        "sssp",
        "--container",
        p(&container),
        "--verify",
        "--states",
        p(&states),
    ]))
    .unwrap();
    assert_eq!(report["verified"], true);
    assert_eq!(report["mode"], "layph");
    let mut rdr = csv::Reader::from_path(&states).unwrap();
    let got: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(got, vec![0.0, 1.0, 3.0, 1.0, 4.0, 7.0, 8.0, 9.0, 9.0]);
}

#[test]
fn three_modes_agree_on_states_but_not_on_cost() {
    let dir = TempDir::new().unwrap();
    let g = planted_file(dir.path(), 3);
    let u = dir.path().join("u.txt");
    ok(&[
        "gen-updates",
        "--graph",
        p(&g),
        "--add",
        "20",
        "--del",
        "20",
        "--seed",
        "5",
        "--out",
        p(&u),
    ]);
    let mut digests = Vec::new();
    let mut costs = Vec::new();
    for mode in ["restart", "plain-inc", "layph"] {
        let r: Value = serde_json::from_str(&ok(&[
            "run",
            "--mode",
            mode,
            "--graph",
            p(&g),
            "--updates",
            p(&u),
            "--algo",
            "sssp",
            "--k",
            "16",
            "--verify",
        ]))
        .unwrap();
        assert_eq!(r["verified"], true, "{mode}");
        assert_eq!(r["schema_version"], 1);
        digests.push(r["states_digest"].as_str().unwrap().to_string());
        costs.push(r["activations"]["total"].as_u64().unwrap());
    }
    assert!(digests.windows(2).all(|w| w[0] == w[1]), "{digests:?}");
    assert!(costs[0] > costs[1], "{costs:?}");
}

#[test]
fn every_mode_verifies_on_twenty_seeds() {
    let dir = TempDir::new().unwrap();
    for seed in 0..20u64 {
        let g = planted_file(dir.path(), seed);
        let u = dir.path().join(format!("u{seed}.txt"));
        let s = seed.to_string();
        ok(&[
            "gen-updates",
            "--graph",
            p(&g),
            "--add",
            "15",
            "--del",
            "15",
            "--vadd",
            "1",
            "--vdel",
            "1",
            "--seed",
            &s,
            "--out",
            p(&u),
        ]);
        let algo = ["sssp", "bfs", "pagerank", "php"][seed as usize % 4];
        for mode in ["restart", "plain-inc", "layph"] {
            let r: Value = serde_json::from_str(&ok(&[
                "run",
                "--mode",
                mode,
                "--graph",
                p(&g),
                "--updates",
                p(&u),
                "--algo",
                algo,
                "--k",
                "24",
                "--verify",
            ]))
            .unwrap();
            assert_eq!(r["verified"], true, "seed {seed} {algo} {mode}");
        }
    }
}

#[test]
fn corrupted_shortcuts_fail_verification() {
    let (edges, updates, comms) = fixture_files();
    let out = layph(&[
        "run",
        "--mode",
        "layph",
        "--graph",
        p(&edges),
        "--updates",
        p(&updates),
        "--algo",
        "sssp",
        "--k",
        "8",
        "--communities",
        p(&comms),
        "--verify",
        "--fault",
        "corrupt-shortcut",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["verified"], false);
}

#[test]
fn gen_updates_writes_requested_counts() {
    let dir = TempDir::new().unwrap();
    let g = planted_file(dir.path(), 1);
    let u = dir.path().join("u.txt");
    ok(&[
        "gen-updates",
        "--graph",
        p(&g),
        "--add",
        "50",
        "--del",
        "50",
        "--seed",
        "9",
        "--out",
        p(&u),
    ]);
    let text = fs::read_to_string(&u).unwrap();
    assert_eq!(text.lines().count(), 100);
    assert_eq!(text.lines().filter(|l| l.starts_with("a ")).count(), 50);
    assert_eq!(text.lines().filter(|l| l.starts_with("d ")).count(), 50);

    let again = dir.path().join("again.txt");
    ok(&[
        "gen-updates",
        "--graph",
        p(&g),
        "--add",
        "50",
        "--del",
        "50",
        "--seed",
        "9",
        "--out",
        p(&again),
    ]);
    assert_eq!(fs::read_to_string(&again).unwrap(), text);

    let empty = dir.path().join("empty.txt");
    ok(&["gen-updates", "--graph", p(&g), "--out", p(&empty)]);
    assert!(fs::read_to_string(&empty).unwrap().is_empty());

    let vert = dir.path().join("v.txt");
    ok(&[
        "gen-updates",
        "--graph",
        p(&g),
        "--vadd",
        "5",
        "--vdel",
        "5",
        "--seed",
        "2",
        "--out",
        p(&vert),
    ]);
    let text = fs::read_to_string(&vert).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("av ")).count(), 5);
    assert_eq!(text.lines().filter(|l| l.starts_with("dv ")).count(), 5);

    let out = layph(&["gen-updates", "--graph", p(&g), "--del", "1000000", "--out", p(&empty)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot delete"));
}

#[test]
fn bench_emits_one_row_per_mode_and_size() {
    let dir = TempDir::new().unwrap();
    let g = planted_file(dir.path(), 2);
    let csv_text = ok(&[
        "bench",
        "--graph",
        p(&g),
        "--algo",
        "sssp",
        "--k",
        "16",
        "--batch-sizes",
        "10",
        "--modes",
        "layph",
    ]);
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "schema_version");
    for col in ["mode", "algo", "batch_size", "activations", "upload_ms", "total_ms"] {
        assert!(headers.iter().any(|h| h == col), "{col}");
    }
    assert_eq!(rdr.records().count(), 1);

    let out_dir = dir.path().join("bench");
    let args = [
        "bench",
        "--planted",
        "400,20,0.2,0.001",
        "--algo",
        "sssp",
        "--k",
        "32",
        "--batch-sizes",
        "4,16",
        "--seed",
        "7",
        "--verify",
        "--out-dir",
        p(&out_dir),
    ];
    ok(&args);
    let first = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    assert!(out_dir.join("bench_config.json").exists());
    ok(&args);
    let second = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let counts = |s: &str| -> Vec<(String, String, String)> {
        csv::Reader::from_reader(s.as_bytes())
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[1].to_string(), r[3].to_string(), r[4].to_string())
            })
            .collect()
    };
    assert_eq!(counts(&first).len(), 6);
    assert_eq!(counts(&first), counts(&second));
}

#[test]
fn bad_inputs_are_reported() {
    let dir = TempDir::new().unwrap();
    let broken = dir.path().join("broken.txt");
    fs::write(&broken, "0 1 2\n1 x 3\n").unwrap();
    let out = layph(&[
        "preprocess",
        "--graph",
        p(&broken),
        "--algo",
        "sssp",
        "--out",
        p(&dir.path().join("c")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    let (edges, updates, comms) = fixture_files();
    let container = dir.path().join("fx.lgc");
    ok(&[
        "preprocess",
        "--graph",
        p(&edges),
        "--algo",
        "sssp",
        "--communities",
        p(&comms),
        "--out",
        p(&container),
    ]);
    let out = layph(&[
        "run",
        "--mode",
        "layph",
        "--graph",
        p(&edges),
        "--updates",
        p(&updates),
        "--algo",
        "pagerank",
        "--container",
        p(&container),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("container was built for sssp"));

    let out = layph(&["bench", "--graph", p(&edges), "--algo", "sssp", "--batch-sizes", "0"]);
    assert!(!out.status.success());
}
