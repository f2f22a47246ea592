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

mod common;

use common::{batches_compose, empty_batch_is_free, power_iteration_pagerank, queue_bfs, random_case};
use layered::algo::{AlgorithmKind, Bfs, PageRank};
use layered::engine::{external_states, run_from_scratch, EngineConfig};
use layered::generators::random_graph;
use layered::network::Network;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn accumulative_pagerank_matches_power_iteration() {
    for seed in 0..5 {
        let g = random_graph(1000, 4000, false, &mut ChaCha8Rng::seed_from_u64(seed));
        let net = Network::plain(g.clone());
        let (st, _) = run_from_scratch(&net, &PageRank::default(), &EngineConfig::default()).unwrap();
        let got = external_states(&net, &st);
        let want = power_iteration_pagerank(&g);
        let l1: f64 = got.iter().zip(&want).map(|(a, b)| (a.1 - b.1).abs()).sum();
        assert!(l1 <= 1e-5, "seed {seed}: L1 {l1}");
    }
}

#[test]
fn bfs_matches_queue_levels() {
    for seed in 0..5 {
        let g = random_graph(1000, 2000, true, &mut ChaCha8Rng::seed_from_u64(seed));
        let net = Network::plain(g.clone());
        let (st, _) = run_from_scratch(&net, &Bfs { source: 0 }, &EngineConfig::default()).unwrap();
        assert_eq!(external_states(&net, &st), queue_bfs(&g, 0), "seed {seed}");
    }
}

#[test]
fn empty_batches_change_nothing() {
    for seed in 0..8 {
        let case = random_case(seed, false);
        for kind in AlgorithmKind::ALL {
            if let Err(e) = empty_batch_is_free(&case, kind) {
                panic!("seed {seed} {kind}: {e}");
            }
        }
    }
}

#[test]
fn sequential_batches_equal_merged_batch() {
    for seed in 0..8 {
        let case = random_case(seed, true);
        for kind in AlgorithmKind::ALL {
            if let Err(e) = batches_compose(&case, kind) {
                panic!("seed {seed} {kind}: {e}");
            }
        }
    }
}
